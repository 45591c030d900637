"""Two-party secure dot products over additive secret shares.

Replaces the homomorphic-encryption route for cross-party scalar products
with additive sharing plus dealer-issued Beaver triples.  The information
flow is the contract: the coordinator relays only field elements that are
uniformly masked, and the two participants are the only ones who learn the
product.  Semi-honest parties are assumed throughout; the participants do
learn the unperturbed product before noise is added.

Real inputs live in [-1, 1] and are fixed-point encoded at scale 2^20, so
one product sits at scale 2^40 and sums of up to 2^20 records fit below
half the field prime.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .dp import DOMAIN_DEALER, DOMAIN_SECURE, NoiseStream
from .objective import record_dot

# Smallest prime above 2**61.
PRIME = 2305843009213693967
SCALE_BITS = 20
SCALE = 1 << SCALE_BITS
PRODUCT_SCALE = 1 << (2 * SCALE_BITS)
MAX_DOT_LENGTH = (PRIME // 2) // PRODUCT_SCALE


class FieldOverflowError(OverflowError):
    pass


class TripleReuseError(RuntimeError):
    pass


def encode(x: float) -> int:
    """Map a real in [-1, 1] to the field at scale 2^20 (centered representation)."""
    if not -1.0 <= x <= 1.0:
        raise ValueError(f"encode expects |x| <= 1, got {x}")
    return round(x * SCALE) % PRIME


def decode(v: int, scale: int = SCALE, magnitude_bound: float = None) -> float:
    """Centered decode of a field element back to a real.

    ``magnitude_bound`` is the largest true magnitude the caller can vouch
    for; a decoded value beyond it means the field arithmetic wrapped.
    """
    v = v % PRIME
    centered = v - PRIME if v > PRIME // 2 else v
    out = centered / scale
    if magnitude_bound is not None and abs(out) > magnitude_bound:
        raise FieldOverflowError(
            f"decoded magnitude {out} exceeds bound {magnitude_bound}; field arithmetic wrapped"
        )
    return out


def encode_vector(xs) -> list:
    return [encode(float(x)) for x in xs]


def share(values, stream: NoiseStream):
    """Additively split field elements into two uniformly random shares."""
    values = list(values)
    s1 = stream.integers_below(PRIME, len(values))
    s2 = [(v - a) % PRIME for v, a in zip(values, s1)]
    return s1, s2


def reconstruct(s1, s2) -> list:
    if len(s1) != len(s2):
        raise ValueError(f"share length mismatch: {len(s1)} vs {len(s2)}")
    return [(a + b) % PRIME for a, b in zip(s1, s2)]


@dataclass
class BeaverTriple:
    """Dealer-issued shares of (a, b, c = a*b), single use, plus output pads.

    The pads mask the exchange of result shares so the relaying coordinator
    cannot add the two messages and learn the product.
    """

    triple_id: int
    n: int
    a_shares: tuple
    b_shares: tuple
    c_shares: tuple
    pads: tuple
    consumed: bool = False


class BeaverDealer:
    """Trusted setup component; issues triples and keeps the consumption ledger."""

    def __init__(self, stream: NoiseStream):
        self._stream = stream
        self._lock = threading.Lock()
        self._next_id = 0
        self.issued_elements = 0
        self.consumed_elements = 0
        self.issued_triples = 0
        self.consumed_triples = 0

    def issue(self, n: int, stream: NoiseStream = None, triple_id: int = None) -> BeaverTriple:
        rng = stream if stream is not None else self._stream
        a = rng.integers_below(PRIME, n)
        b = rng.integers_below(PRIME, n)
        c = [(x * y) % PRIME for x, y in zip(a, b)]
        a1, a2 = share(a, rng)
        b1, b2 = share(b, rng)
        c1, c2 = share(c, rng)
        pads = tuple(rng.integers_below(PRIME, 2))
        with self._lock:
            if triple_id is None:
                triple_id = self._next_id
                self._next_id += 1
            self.issued_triples += 1
            self.issued_elements += n
        return BeaverTriple(triple_id, n, (a1, a2), (b1, b2), (c1, c2), pads)

    def note_consumed(self, triple: BeaverTriple):
        with self._lock:
            self.consumed_triples += 1
            self.consumed_elements += triple.n

    @property
    def ledger(self) -> dict:
        return {
            "issued_triples": self.issued_triples,
            "consumed_triples": self.consumed_triples,
            "issued_elements": self.issued_elements,
            "consumed_elements": self.consumed_elements,
        }


def beaver_mul(x_shares, y_shares, triple: BeaverTriple):
    """Elementwise secure multiplication of two shared vectors.

    Returns (z_shares, opened) where opened = (x - a, y - b) are the only
    values that ever leave the parties.  Marks the triple consumed; reuse
    raises, since a second use would leak through the repeated mask.
    """
    if triple.consumed:
        raise TripleReuseError(f"Beaver triple {triple.triple_id} already consumed")
    triple.consumed = True
    x1, x2 = x_shares
    y1, y2 = y_shares
    n = len(x1)
    if not (len(x2) == len(y1) == len(y2) == triple.n == n):
        raise ValueError("share/triple length mismatch")
    a1, a2 = triple.a_shares
    b1, b2 = triple.b_shares
    c1, c2 = triple.c_shares
    # Each party opens its share of d = x - a and e = y - b.
    d = [(xa - aa + xb - ab) % PRIME for xa, aa, xb, ab in zip(x1, a1, x2, a2)]
    e = [(ya - ba + yb - bb) % PRIME for ya, ba, yb, bb in zip(y1, b1, y2, b2)]
    # z = c + d*b + e*a + d*e, with the d*e term claimed by the first party.
    z1 = [
        (cc + dd * bb + ee * aa + dd * ee) % PRIME
        for cc, dd, bb, ee, aa in zip(c1, d, b1, e, a1)
    ]
    z2 = [(cc + dd * bb + ee * aa) % PRIME for cc, dd, bb, ee, aa in zip(c2, d, b2, e, a2)]
    return (z1, z2), (d, e)


def _check_dot_inputs(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or u.shape != v.shape:
        raise ValueError(f"secure_dot needs equal-length vectors, got {u.shape} and {v.shape}")
    if u.size > MAX_DOT_LENGTH:
        raise FieldOverflowError(
            f"dot product of length {u.size} can wrap the field; maximum safe length is {MAX_DOT_LENGTH}"
        )
    if np.any(np.abs(u) > 1.0) or np.any(np.abs(v) > 1.0):
        raise ValueError("secure_dot entries must lie in [-1, 1]")
    return u, v


def _noop_relay(sender, receiver, tag, payload, debug=False):
    return None


class SecretSharingBackend:
    """Secure dot products via additive shares routed through the coordinator.

    ``key`` selects a deterministic randomness substream for one dot
    product, so concurrent dots use independent streams and a run's
    transcript does not depend on scheduling order.
    """

    name = "secret-sharing"

    def __init__(self, stream: NoiseStream = None, dealer: BeaverDealer = None):
        self._base = stream if stream is not None else NoiseStream(0)
        self._stream = self._base.substream(DOMAIN_SECURE)
        self.dealer = dealer if dealer is not None else BeaverDealer(self._base.substream(DOMAIN_DEALER))
        self._lock = threading.Lock()
        self.dots = 0

    def dot(self, u, v, relay=_noop_relay, pair=(1, 2), key=None) -> float:
        u, v = _check_dot_inputs(u, v)
        n = u.size
        pk, pl = pair
        if key is None:
            rng, dealer_rng = self._stream, None
        else:
            rng = self._base.substream(DOMAIN_SECURE, key)
            dealer_rng = self._base.substream(DOMAIN_DEALER, key)
        triple = self.dealer.issue(n, dealer_rng, triple_id=key)
        relay("dealer", f"party:{pk}", "triple_share", {"triple": triple.triple_id, "n": n})
        relay("dealer", f"party:{pl}", "triple_share", {"triple": triple.triple_id, "n": n})

        # Each holder splits its encoded vector; the counterpart share crosses
        # the coordinator as uniformly random field elements.
        eu = encode_vector(u)
        ev = encode_vector(v)
        u1, u2 = share(eu, rng)
        v2, v1 = share(ev, rng)
        relay(f"party:{pk}", f"party:{pl}", "vector_share", u2)
        relay(f"party:{pl}", f"party:{pk}", "vector_share", v1)

        (z1, z2), (d_open, e_open) = beaver_mul((u1, u2), (v1, v2), triple)
        self.dealer.note_consumed(triple)
        relay(f"party:{pk}", f"party:{pl}", "masked_diff", d_open)
        relay(f"party:{pl}", f"party:{pk}", "masked_diff", e_open)

        t1 = sum(z1) % PRIME
        t2 = sum(z2) % PRIME
        rho1, rho2 = triple.pads
        relay(f"party:{pk}", f"party:{pl}", "result_share", [(t1 + rho1) % PRIME])
        relay(f"party:{pl}", f"party:{pk}", "result_share", [(t2 + rho2) % PRIME])
        total = (t1 + t2) % PRIME
        with self._lock:
            self.dots += 1
        return decode(total, PRODUCT_SCALE, magnitude_bound=float(n))


class PlaintextBackend:
    """Debug backend: computes dots directly but still routes the raw vectors
    through the coordinator, tagged so audits can tell debug traffic apart."""

    name = "plaintext-debug"

    def __init__(self):
        self._lock = threading.Lock()
        self.dots = 0

    def dot(self, u, v, relay=_noop_relay, pair=(1, 2), key=None) -> float:
        u, v = _check_dot_inputs(u, v)
        pk, pl = pair
        relay(f"party:{pk}", f"party:{pl}", "debug_vector", [float(x) for x in u], debug=True)
        result = record_dot(u, v)
        relay(f"party:{pl}", f"party:{pk}", "debug_result", [result], debug=True)
        with self._lock:
            self.dots += 1
        return result


def secure_dot(u, v, backend=None, relay=_noop_relay, pair=(1, 2), key=None) -> float:
    """Dot product of two in-range vectors under the given backend."""
    if backend is None:
        backend = SecretSharingBackend()
    return backend.dot(u, v, relay, pair, key)


def make_backend(name: str, stream: NoiseStream = None):
    if name == "secret-sharing":
        return SecretSharingBackend(stream)
    if name == "plaintext-debug":
        return PlaintextBackend()
    raise ValueError(f"unknown backend {name!r}")
