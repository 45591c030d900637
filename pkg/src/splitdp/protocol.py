"""End-to-end simulation of the coordinator/party training protocol.

One run performs the four steps: the server dissects the objective and
allocates coefficients, parties compute and perturb their single-party
coefficients, cross-party coefficients are produced by secure dot products
and perturbed by their designated noise adder, and the server solves the
assembled noisy objective once.

Noise draws are keyed by coefficient index by default, so the perturbed
objective (and hence the released model) is the same no matter how many
parties the features are split across, and identical to the centralized
pipeline run with the same seed.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dp import (
    DOMAIN_PARTY,
    NoiseStream,
    PrivacyBudget,
    coefficient_noise,
    laplace_sample,
)
from .objective import (
    LOG2,
    LOGISTIC_QUAD,
    PolyObjective,
    Task,
    TAYLOR_F1,
    VerticalPartition,
    aggregate,
    coeff_count,
    dissect,
    global_sensitivity,
    record_dot,
)
from .secure import PRIME, SCALE, make_backend
from .solver import Model, default_ridge_floor, minimize

SERVER = "server"
_PRIME_HALF = PRIME // 2


class ProtocolError(RuntimeError):
    pass


@dataclass
class TranscriptEntry:
    seq: int
    sender: str
    receiver: str
    tag: str
    payload: object
    debug: bool = False


def _digest(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


class ProtocolTranscript:
    """Ordered message log of one run; server-received entries are the audit surface."""

    def __init__(self, metadata=None):
        self.entries = []
        self.metadata = dict(metadata or {})

    def append(self, sender, receiver, tag, payload, debug=False):
        self.entries.append(
            TranscriptEntry(len(self.entries), sender, receiver, tag, payload, debug)
        )

    def extend(self, buffered):
        for sender, receiver, tag, payload, debug in buffered:
            self.append(sender, receiver, tag, payload, debug)

    def server_received(self):
        return [e for e in self.entries if e.receiver == SERVER]

    def count(self, tag: str) -> int:
        return sum(1 for e in self.entries if e.tag == tag)

    def to_lines(self):
        return [
            f"{e.seq}\t{e.sender}\t{e.receiver}\t{e.tag}\t{_digest(e.payload)}"
            for e in self.entries
        ]

    def save(self, path):
        with open(path, "w") as fh:
            fh.write("\n".join(self.to_lines()) + "\n")


@dataclass
class PartyState:
    """A party's local view: its columns, the label if it owns it, its noise stream."""

    party_id: int
    columns: dict
    label: np.ndarray = None
    stream: NoiseStream = None

    def label_vector(self, task: Task) -> np.ndarray:
        if self.label is None:
            raise ProtocolError(f"party {self.party_id} does not own the label")
        if task is Task.LINEAR:
            return self.label
        return np.ascontiguousarray(TAYLOR_F1 - self.label)


def _per_record_bound(task: Task, degree: int) -> float:
    if task is Task.LINEAR:
        return {0: 1.0, 1: 2.0, 2: 1.0}[degree]
    return {0: LOG2, 1: 0.5, 2: LOGISTIC_QUAD}[degree]


def _build_parties(dataset, partition, seed):
    parties = {}
    for k, feats in partition.party_features.items():
        cols = {a: np.ascontiguousarray(dataset.X[:, a]) for a in feats}
        label = dataset.y if k == partition.label_owner else None
        parties[k] = PartyState(k, cols, label, NoiseStream(seed).substream(DOMAIN_PARTY, k))
    return parties


def _single_value(entry, party, task, n):
    if entry.degree == 0:
        if task is Task.LINEAR:
            return record_dot(party.label, party.label)
        return n * LOG2
    if entry.degree == 1:
        col = party.columns[entry.features[0]]
        if task is Task.LINEAR:
            return -2.0 * record_dot(party.label, col)
        return record_dot(party.label_vector(task), col)
    a, b = entry.features
    quad = 1.0 if task is Task.LINEAR else LOGISTIC_QUAD
    return quad * record_dot(party.columns[a], party.columns[b])


def run_protocol(
    dataset,
    partition: VerticalPartition,
    epsilon,
    seed: int,
    backend="secret-sharing",
    *,
    budget: PrivacyBudget = None,
    noise_keying: str = "coefficient",
    rho: float = None,
    scheduler: str = "serial",
    compact_payloads: bool = False,
    _skip_noise=frozenset(),
):
    """Train a private model over vertically partitioned data.

    ``epsilon=None`` disables noise.  ``noise_keying`` is "coefficient"
    (default; draws tied to coefficient indices, giving K-invariant output)
    or "party" (each noise adder consumes its own substream).  ``scheduler``
    is "serial" or "threads"; the threaded scheduler runs cross-party dot
    products concurrently and still emits the transcript in canonical
    order.  ``compact_payloads`` replaces bulky vector payloads with their
    lengths, for long runs where the transcript is not audited.

    Returns (Model, ProtocolTranscript).
    """
    task = dataset.task
    if partition.d != dataset.d:
        raise ProtocolError("partition does not match dataset dimension")
    if partition.label_owner != 1:
        raise ProtocolError("the label owner must be party 1")
    if noise_keying not in ("coefficient", "party"):
        raise ValueError(f"unknown noise keying {noise_keying!r}")
    if scheduler not in ("serial", "threads"):
        raise ValueError(f"unknown scheduler {scheduler!r}")
    if scheduler == "threads" and noise_keying == "party":
        raise ValueError("the threaded scheduler requires coefficient-keyed noise")

    n, d = dataset.n, dataset.d
    if isinstance(backend, str):
        backend = make_backend(backend, NoiseStream(seed))
    allocation = dissect(task, partition)
    if budget is None:
        budget = PrivacyBudget.topdown(task, partition, epsilon)
    elif (budget.epsilon_global is None) != (epsilon is None):
        raise ValueError("budget and epsilon disagree about noise being on")

    transcript = ProtocolTranscript(
        metadata={
            "task": task.value,
            "n": n,
            "d": d,
            "K": partition.K,
            "epsilon": "inf" if budget.epsilon_global is None else budget.epsilon_global,
            "mode": budget.mode,
            "delta_f": budget.delta_f,
            "seed": seed,
            "backend": backend.name,
            "noise_keying": noise_keying,
            "exempt_indices": [e.index for e in allocation.entries if e.noise_exempt],
            "per_party_epsilon": {str(pb.party): pb.epsilon_k for pb in budget.per_party},
            "warnings": [],
        }
    )

    parties = _build_parties(dataset, partition, seed)
    noise_additions = 0
    bulky_tags = ("vector_share", "masked_diff", "debug_vector")

    def make_relay(sink):
        def relay(sender, receiver, tag, payload, debug=False):
            if compact_payloads and tag in bulky_tags:
                payload = {"len": len(payload)}
            if sender == "dealer":
                sink.append((sender, receiver, tag, payload, debug))
            else:
                sink.append((sender, SERVER, tag, payload, debug))
                sink.append((SERVER, receiver, tag, payload, debug))

        return relay

    def add_noise(entry, value):
        nonlocal noise_additions
        scale = budget.noise_scale(entry)
        if scale is None or entry.index in _skip_noise:
            return value
        noise_additions += 1
        if noise_keying == "coefficient":
            return value + coefficient_noise(seed, entry.index, scale)
        return value + laplace_sample(scale, parties[entry.noise_adder].stream)

    # Step 1: the server announces the dissection and required noise scale.
    single_by_party = {k: [] for k in parties}
    for entry in allocation.single_entries():
        single_by_party[entry.parties[0]].append(entry)
    cross_entries = allocation.cross_entries()
    for k in sorted(parties):
        transcript.append(
            SERVER,
            f"party:{k}",
            "allocate",
            {
                "delta_f": budget.delta_f,
                "epsilon": transcript.metadata["epsilon"],
                "singles": len(single_by_party[k]),
                "crosses": sum(1 for e in cross_entries if k in e.parties),
            },
        )

    received = {}

    def server_accept(entry, noisy):
        if entry.index in received:
            raise ProtocolError(f"coefficient {entry.index} submitted twice")
        scale = budget.noise_scale(entry)
        bound = n * _per_record_bound(task, entry.degree) + (60.0 * scale if scale else 0.0) + 1e-6
        if abs(noisy) > bound:
            msg = f"coefficient {entry.index} value {noisy:.6g} exceeds plausibility bound {bound:.6g}"
            transcript.metadata["warnings"].append(msg)
            warnings.warn(msg)
        received[entry.index] = noisy

    # Step 2: single-party coefficients, perturbed where they are computed.
    for k in sorted(parties):
        for entry in single_by_party[k]:
            value = _single_value(entry, parties[k], task, n)
            noisy = add_noise(entry, value)
            transcript.append(
                f"party:{k}", SERVER, "single_coeff", {"index": entry.index, "value": noisy}
            )
            server_accept(entry, noisy)

    # Step 3: cross-party coefficients via secure dot products.
    def cross_vectors(entry):
        if entry.degree == 1:
            owner, holder = entry.parties
            return parties[owner].label_vector(task), parties[holder].columns[entry.features[0]]
        a, b = entry.features
        ka, kb = entry.parties
        return parties[ka].columns[a], parties[kb].columns[b]

    def cross_transform(entry, dot_value):
        if entry.degree == 1:
            return -2.0 * dot_value if task is Task.LINEAR else dot_value
        return dot_value if task is Task.LINEAR else LOGISTIC_QUAD * dot_value

    def run_cross(entry, sink):
        for member in entry.parties:
            sink.append(
                (SERVER, f"party:{member}", "cross_init",
                 {"index": entry.index, "pair": list(entry.parties)}, False)
            )
        u, v = cross_vectors(entry)
        dot_value = backend.dot(u, v, make_relay(sink), entry.parties, key=entry.index)
        noisy = add_noise(entry, cross_transform(entry, dot_value))
        sink.append(
            (f"party:{entry.noise_adder}", SERVER, "cross_coeff",
             {"index": entry.index, "value": noisy}, False)
        )
        return noisy

    if scheduler == "serial":
        for entry in cross_entries:
            sink = []
            noisy = run_cross(entry, sink)
            transcript.extend(sink)
            server_accept(entry, noisy)
    else:
        sinks = [[] for _ in cross_entries]
        with ThreadPoolExecutor(max_workers=4) as pool:
            results = list(pool.map(run_cross, cross_entries, sinks))
        for entry, sink, noisy in zip(cross_entries, sinks, results):
            transcript.extend(sink)
            server_accept(entry, noisy)

    # Step 4: the server assembles the noisy objective and solves it once.
    if len(received) != coeff_count(d):
        raise ProtocolError(f"received {len(received)} coefficients, expected {coeff_count(d)}")
    vec = np.array([received[i] for i in range(coeff_count(d))])
    obj = PolyObjective.from_vector(vec, d)
    if rho is None:
        rho = default_ridge_floor(n, d, budget.max_noise_scale)
    weights = minimize(obj, rho)
    for k in sorted(parties):
        transcript.append(SERVER, f"party:{k}", "model_out", {"weights": [float(w) for w in weights]})

    transcript.metadata["noise_additions"] = noise_additions
    transcript.metadata["secure_dots"] = getattr(backend, "dots", len(cross_entries))
    transcript.metadata["rho"] = rho
    return Model(weights, task), transcript


def centralized_fm(dataset, epsilon, seed: int, *, rho: float = None) -> Model:
    """The single-site reference pipeline: aggregate, perturb, solve.

    Uses the same coefficient-keyed noise and the same ridge-floor rule as
    `run_protocol`, which is what lets the distributed run reproduce it.
    """
    task = dataset.task
    delta_f = global_sensitivity(task, dataset.d)
    vec = aggregate(dataset.X, dataset.y, task).as_vector()
    if epsilon is not None:
        scale = delta_f / epsilon
        start = 1 if task is Task.LOGISTIC else 0
        for idx in range(start, vec.size):
            vec[idx] += coefficient_noise(seed, idx, scale)
    noisy = PolyObjective.from_vector(vec, dataset.d)
    if rho is None:
        noise_scale = 0.0 if epsilon is None else delta_f / epsilon
        rho = default_ridge_floor(dataset.n, dataset.d, noise_scale)
    return Model(minimize(noisy, rho), task)


# ---------------------------------------------------------------------------
# Server-view audit


@dataclass
class Finding:
    kind: str
    seq: int
    tag: str
    detail: str
    index: int = None


@dataclass
class AuditReport:
    findings: list = field(default_factory=list)
    debug_findings: list = field(default_factory=list)
    scanned: int = 0

    @property
    def ok(self) -> bool:
        return not self.findings


def _match_sorted(sorted_values: np.ndarray, x: float, tol: float = 1e-9) -> bool:
    pos = int(np.searchsorted(sorted_values, x))
    for p in (pos - 1, pos):
        if 0 <= p < sorted_values.size:
            ref = float(sorted_values[p])
            if abs(x - ref) <= tol * max(1.0, abs(ref)):
                return True
    return False


def audit_server_view(transcript: ProtocolTranscript, dataset) -> AuditReport:
    """Flag any server-received payload that exposes private data.

    A payload value counts as a leak when it equals (beyond a 1e-9 relative
    coincidence threshold) a raw feature or label value, or an unperturbed
    aggregate coefficient.  Audit-tagged debug traffic is reported
    separately; noise-exempt coefficients (the logistic constant) are
    skipped.  Only meaningful for runs with noise enabled.
    """
    task = dataset.task
    unperturbed = aggregate(dataset.X, dataset.y, task).as_vector()
    raw = np.unique(np.concatenate([dataset.X.ravel(), dataset.y]))
    exempt = set(transcript.metadata.get("exempt_indices", []))
    report = AuditReport()

    def scan_value(entry, value, index=None):
        found = []
        if index is not None and index not in exempt:
            ref = unperturbed[index]
            if abs(value - ref) <= 1e-9 * max(1.0, abs(ref)):
                found.append(
                    Finding("unperturbed-coefficient", entry.seq, entry.tag,
                            f"coefficient {index} arrived without noise", index)
                )
        if _match_sorted(raw, value):
            found.append(
                Finding("raw-value", entry.seq, entry.tag,
                        f"payload value {value!r} matches a raw feature/label", index)
            )
        return found

    for entry in transcript.server_received():
        report.scanned += 1
        found = []
        payload = entry.payload
        if entry.tag in ("single_coeff", "cross_coeff"):
            found = scan_value(entry, payload["value"], payload["index"])
        elif entry.tag in ("vector_share", "masked_diff", "result_share") and isinstance(payload, list):
            for fe in payload:
                centered = fe - PRIME if fe > _PRIME_HALF else fe
                found.extend(scan_value(entry, centered / SCALE))
        elif entry.tag in ("debug_vector", "debug_result") and isinstance(payload, list):
            for value in payload:
                found.extend(scan_value(entry, float(value)))
        if entry.debug:
            report.debug_findings.extend(found)
        else:
            report.findings.extend(found)
    return report
