"""Laplace noise generation, coefficient perturbation, and privacy accounting.

All randomness flows through `NoiseStream`, a keyed wrapper around a
counter-based generator.  Substreams are derived from the master seed and a
tuple of integer keys, so a draw "for coefficient i" is the same value no
matter which process ends up making it.  That is what lets the distributed
protocol reproduce the centralized pipeline exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .objective import (
    Task,
    VerticalPartition,
    global_sensitivity,
    party_sensitivity,
    sub_sensitivity_g,
    sub_sensitivity_h,
)

# Substream domains; first key component of every derived stream.
DOMAIN_COEFF = 0
DOMAIN_PARTY = 1
DOMAIN_DATA = 2
DOMAIN_SECURE = 3
DOMAIN_DEALER = 4
DOMAIN_REPLICATE = 5
DOMAIN_SGD = 6
DOMAIN_SPLIT = 7
DOMAIN_AUDIT = 8


class NoiseStream:
    """Deterministic uniform source with keyed substreams.

    Identical master seed and draw order give bit-identical values.  A
    substream is addressed by integer keys appended to the parent key, e.g.
    ``NoiseStream(seed).substream(DOMAIN_COEFF, 17)``.
    """

    def __init__(self, master_seed: int, key: tuple = ()):
        if master_seed < 0:
            raise ValueError("master seed must be a non-negative integer")
        self.master_seed = int(master_seed)
        self.key = tuple(int(k) for k in key)
        self._gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(self.master_seed, spawn_key=self.key))
        )
        self.draws = 0

    def substream(self, *key) -> "NoiseStream":
        return NoiseStream(self.master_seed, self.key + tuple(int(k) for k in key))

    def uniform(self) -> float:
        """One draw in the open interval (0, 1)."""
        self.draws += 1
        u = self._gen.random()
        while u == 0.0:
            u = self._gen.random()
        return u

    def uniforms(self, n: int) -> np.ndarray:
        self.draws += n
        u = self._gen.random(n)
        zero = u == 0.0
        while np.any(zero):
            u[zero] = self._gen.random(int(zero.sum()))
            zero = u == 0.0
        return u

    def integers_below(self, bound: int, n: int) -> list:
        """n exactly-uniform integers in [0, bound) via rejection sampling."""
        self.draws += n
        span = (2**64 // bound) * bound
        out = np.empty(n, dtype=np.uint64)
        need = n
        while need:
            cand = self._gen.integers(0, 2**64, size=need, dtype=np.uint64, endpoint=False)
            ok = cand < span
            take = cand[ok]
            out[n - need : n - need + take.size] = take
            need -= take.size
        return [int(v) % bound for v in out]

    def derive_seed(self, *key) -> int:
        """A 64-bit seed tied to (master seed, key); used for replicate reseeding."""
        ss = np.random.SeedSequence(self.master_seed, spawn_key=self.key + tuple(int(k) for k in key))
        return int(ss.generate_state(1, dtype=np.uint64)[0])


def laplace_icdf(u: float, scale: float) -> float:
    """Inverse CDF of Laplace(0, scale) at u in (0, 1); u = 1/2 maps to 0."""
    if u < 0.5:
        return scale * math.log(2.0 * u)
    return -scale * math.log(2.0 * (1.0 - u))


def laplace_sample(scale: float, stream: NoiseStream) -> float:
    if not (scale > 0.0 and math.isfinite(scale)):
        raise ValueError(f"Laplace scale must be positive and finite, got {scale}")
    return laplace_icdf(stream.uniform(), scale)


def laplace_array(scale: float, stream: NoiseStream, n: int) -> np.ndarray:
    if not (scale > 0.0 and math.isfinite(scale)):
        raise ValueError(f"Laplace scale must be positive and finite, got {scale}")
    u = stream.uniforms(n)
    return np.where(u < 0.5, scale * np.log(2.0 * u), -scale * np.log(2.0 * (1.0 - u)))


def coefficient_noise(master_seed: int, index: int, scale: float) -> float:
    """The one Laplace draw reserved for a coefficient index.

    Keying by coefficient rather than by party makes the perturbed objective
    independent of how features are split, which is what the centralized
    equivalence and K-invariance checks rely on.
    """
    sub = NoiseStream(master_seed).substream(DOMAIN_COEFF, index)
    return laplace_sample(scale, sub)


def perturb(values, delta_f: float, epsilon, stream: NoiseStream, keys=None) -> np.ndarray:
    """Add independent Laplace(delta_f / epsilon) noise to each coefficient.

    ``epsilon=None`` means noise off and returns the values unchanged.
    With ``keys`` given, each draw comes from the per-coefficient substream
    of ``stream``'s master seed; otherwise draws are consumed sequentially
    from ``stream`` in the order of ``values`` (the canonical order).
    """
    values = np.array(values, dtype=np.float64)
    if epsilon is None:
        return values
    if not (epsilon > 0.0 and math.isfinite(epsilon)):
        raise ValueError(f"epsilon must be positive and finite (or None for noise off), got {epsilon}")
    scale = delta_f / epsilon
    flat = values.ravel()
    if keys is None:
        for i in range(flat.size):
            flat[i] += laplace_sample(scale, stream)
    else:
        if len(keys) != flat.size:
            raise ValueError("one key per coefficient required")
        for i, key in enumerate(keys):
            flat[i] += coefficient_noise(stream.master_seed, key, scale)
    return values


# ---------------------------------------------------------------------------
# Budget accounting


def party_epsilon(epsilon: float, delta_f: float, delta_f_k: float) -> float:
    """Privacy level a party enjoys under a global budget: epsilon * delta_f_k / delta_f."""
    if delta_f <= 0 or delta_f_k <= 0:
        raise ValueError("sensitivities must be positive")
    if delta_f_k > delta_f:
        raise ValueError(f"party sensitivity {delta_f_k} exceeds global sensitivity {delta_f}")
    return epsilon * delta_f_k / delta_f

def bottomup_epsilon(delta_f: float, single_terms, cross_terms) -> float:
    """Global budget implied by locally chosen sub-budgets.

    single_terms: iterable of (delta_g_k, eps_k); cross_terms: iterable of
    (delta_h_kl, eps_kl).  Composes sum_k (delta_f/delta_g_k) * eps_k +
    sum_kl (delta_f/delta_h_kl) * eps_kl.
    """
    total = 0.0
    for sens, eps in list(single_terms) + list(cross_terms):
        if eps < 0:
            raise ValueError("sub-budgets must be non-negative")
        if sens <= 0:
            if eps > 0:
                raise ValueError("zero sub-sensitivity with a nonzero sub-budget")
            continue
        total += (delta_f / sens) * eps
    return total


@dataclass
class PartyBudget:
    party: int
    delta_f_k: float
    epsilon_k: float


@dataclass
class PrivacyBudget:
    """Resolved noise plan for one protocol run.

    In top-down mode every coefficient gets scale delta_f / epsilon.  In
    bottom-up mode the scale of a coefficient is its block's sub-sensitivity
    over that block's sub-budget, and `epsilon_global` is the composed value.
    """

    task: Task
    mode: str
    delta_f: float
    epsilon_global: object  # float or None for noise off
    per_party: list = field(default_factory=list)
    single_budgets: dict = field(default_factory=dict)  # k -> (delta_g_k, eps_k)
    cross_budgets: dict = field(default_factory=dict)  # frozenset({k,l}) -> (delta_h_kl, eps_kl)

    @classmethod
    def topdown(cls, task: Task, partition: VerticalPartition, epsilon) -> "PrivacyBudget":
        d = partition.d
        delta_f = global_sensitivity(task, d)
        per_party = []
        for k in sorted(partition.party_features):
            dfk = party_sensitivity(task, d, partition.size(k), k == partition.label_owner)
            eps_k = None if epsilon is None else party_epsilon(epsilon, delta_f, dfk)
            per_party.append(PartyBudget(k, dfk, eps_k))
        return cls(task, "topdown", delta_f, epsilon, per_party)

    @classmethod
    def bottomup(cls, task: Task, partition: VerticalPartition, party_epsilons) -> "PrivacyBudget":
        """Split each party's target budget over its blocks and compose the global one.

        ``party_epsilons`` is a float applied to all parties or a dict
        party -> epsilon^(k).  Each party proposes a split proportional to
        its block sensitivities; a pair budget is the smaller of the two
        proposals and the single-party block absorbs the remainder, so
        eps_k + sum_l eps_kl equals the party's target exactly.
        """
        d = partition.d
        parties = sorted(partition.party_features)
        if isinstance(party_epsilons, dict):
            targets = {k: float(party_epsilons[k]) for k in parties}
        else:
            targets = {k: float(party_epsilons) for k in parties}
        if any(t <= 0 for t in targets.values()):
            raise ValueError("per-party budgets must be positive")
        delta_f = global_sensitivity(task, d)
        owner = partition.label_owner

        def g_sens(k):
            return sub_sensitivity_g(task, d, partition.size(k), k == owner)

        def h_sens(k, l):
            first, second = (k, l) if k == owner or (l != owner and k < l) else (l, k)
            return sub_sensitivity_h(
                task, d, partition.size(first), partition.size(second), first == owner
            )

        pair_ids = [frozenset((k, l)) for i, k in enumerate(parties) for l in parties[i + 1 :]]
        proposals = {}
        for k in parties:
            mass_g = g_sens(k)
            masses_h = {p: h_sens(*sorted(p)) for p in pair_ids if k in p}
            total = mass_g + sum(masses_h.values())
            proposals[k] = {p: targets[k] * m / total for p, m in masses_h.items()}
        cross_budgets = {}
        for p in pair_ids:
            k, l = sorted(p)
            cross_budgets[p] = (h_sens(k, l), min(proposals[k][p], proposals[l][p]))
        single_budgets = {}
        for k in parties:
            spent = sum(eps for p, (_, eps) in cross_budgets.items() if k in p)
            eps_k = targets[k] - spent
            if eps_k <= 0:
                raise ValueError(f"party {k} has no budget left for its single-party block")
            single_budgets[k] = (g_sens(k), eps_k)

        eps_global = bottomup_epsilon(
            delta_f, single_budgets.values(), cross_budgets.values()
        )
        per_party = []
        for k in parties:
            dfk = party_sensitivity(task, d, partition.size(k), k == owner)
            per_party.append(PartyBudget(k, dfk, targets[k]))
        return cls(
            task,
            "bottomup",
            delta_f,
            eps_global,
            per_party,
            single_budgets,
            cross_budgets,
        )

    def noise_scale(self, entry) -> object:
        """Laplace scale for one allocation entry; None means leave it alone."""
        if entry.noise_exempt or self.epsilon_global is None:
            return None
        if self.mode == "topdown":
            return self.delta_f / self.epsilon_global
        if entry.is_cross:
            sens, eps = self.cross_budgets[frozenset(entry.parties)]
        else:
            sens, eps = self.single_budgets[entry.parties[0]]
        return sens / eps

    @property
    def max_noise_scale(self) -> float:
        if self.epsilon_global is None:
            return 0.0
        if self.mode == "topdown":
            return self.delta_f / self.epsilon_global
        scales = [s / e for s, e in self.single_budgets.values()] + [
            s / e for s, e in self.cross_budgets.values()
        ]
        return max(scales)
