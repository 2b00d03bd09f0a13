"""Analysis of empirical internal representations against the HFM.

Gauge fixing, permutation search, prefix-marginal KL curves, maximum
likelihood coupling fits, greedy peak decomposition and the Kendall
rank diagnostic.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import kendalltau

from . import hfm
from .states import EmpiricalSample, entropy_bits, kl_bits, levels_of

log = logging.getLogger(__name__)

LOW_STATS_THRESHOLD = 100  # distinct states below which a peak is flagged
_G_FIT_LO, _G_FIT_HI = 1e-3, 20.0


@dataclass(frozen=True)
class GaugePerm:
    """Per-feature flips tau (tau_i = 0 flips feature i) and a permutation pi.

    New feature i reads the (possibly flipped) old feature pi[i]; pi is
    stored 0-based.
    """

    tau: tuple
    pi: tuple

    def __post_init__(self):
        n = len(self.tau)
        if sorted(self.pi) != list(range(n)):
            raise ValueError("pi is not a permutation")
        if any(t not in (0, 1) for t in self.tau):
            raise ValueError("tau entries must be 0 or 1")

    @property
    def n(self) -> int:
        return len(self.tau)

    @classmethod
    def identity(cls, n: int) -> "GaugePerm":
        return cls((1,) * n, tuple(range(n)))

    def apply_index(self, index: int) -> int:
        out = 0
        for i, src in enumerate(self.pi):
            bit = (index >> src) & 1
            if self.tau[i] == 0:
                bit ^= 1
            out |= bit << i
        return out

    def apply_indices(self, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        out = np.zeros_like(indices)
        for i, src in enumerate(self.pi):
            bit = (indices >> src) & 1
            if self.tau[i] == 0:
                bit ^= 1
            out |= bit << i
        return out

    def inverse(self) -> "GaugePerm":
        inv_pi = [0] * self.n
        inv_tau = [1] * self.n
        for i, src in enumerate(self.pi):
            inv_pi[src] = i
            inv_tau[src] = self.tau[i]
        return GaugePerm(tuple(inv_tau), tuple(inv_pi))

    def apply_sample(self, sample: EmpiricalSample) -> EmpiricalSample:
        counts = {}
        for idx, c in sample.counts.items():
            new = self.apply_index(idx)
            counts[new] = counts.get(new, 0) + c
        return EmpiricalSample(sample.n, counts)


def empirical_distribution(sample: EmpiricalSample) -> dict:
    """Maximum-likelihood state frequencies (sparse)."""
    return sample.frequencies()


def gauge_fix(sample: EmpiricalSample) -> tuple:
    """Flip features so the most frequent state becomes featureless.

    Returns (GaugePerm with identity permutation, transformed sample).
    Ties in the mode break toward the smallest state index.
    """
    if sample.total == 0:
        raise ValueError("empty sample")
    mode = min(
        sample.counts, key=lambda idx: (-sample.counts[idx], idx)
    )
    tau = tuple(1 - ((mode >> i) & 1) for i in range(sample.n))
    gauge = GaugePerm(tau, tuple(range(sample.n)))
    return gauge, gauge.apply_sample(sample)


def _mean_level(indices: np.ndarray, counts: np.ndarray) -> float:
    return float((levels_of(indices) * counts).sum() / counts.sum())


def fit_g(sample: EmpiricalSample) -> float:
    """Maximum-likelihood coupling: match E[m] to the sample mean of m_s.

    m_s is the HFM's sufficient statistic, so moment matching is the ML
    fit. Degenerate samples (mean below the g=20 expectation) return the
    upper search bound and are logged.
    """
    n = sample.n
    target = _mean_level(sample.indices_array(), sample.counts_array().astype(float))
    hi_val = hfm.mean_level(hfm.HfmParams(n, _G_FIT_HI))
    lo_val = hfm.mean_level(hfm.HfmParams(n, _G_FIT_LO))
    if target >= lo_val:
        raise ValueError(f"mean level {target} above achievable range (max {lo_val})")
    if target <= hi_val:
        log.warning("degenerate sample: mean level %.3g at or below the g=%.0f floor", target, _G_FIT_HI)
        return _G_FIT_HI
    lo, hi = _G_FIT_LO, _G_FIT_HI  # mean level decreases with g
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hfm.mean_level(hfm.HfmParams(n, mid)) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _kl_to_hfm(indices: np.ndarray, counts: np.ndarray, g: float, n: int) -> float:
    """Plug-in KL(sample || h_n(g)) in bits; the model side never vanishes."""
    freqs = counts / counts.sum()
    params = hfm.HfmParams(n, g)
    log2_model = (-g * levels_of(indices) - math.log(params.z)) / math.log(2.0)
    return float((freqs * (np.log2(freqs) - log2_model)).sum())


def kl_to_hfm(sample: EmpiricalSample, g: float) -> float:
    return _kl_to_hfm(sample.indices_array(), sample.counts_array().astype(float), g, sample.n)


def optimize_permutation(sample: EmpiricalSample, g: float) -> GaugePerm:
    """Feature order minimizing KL(sample || h_n(g)) for a gauge-fixed sample.

    Exhaustive for n <= 8. Beyond that, features are first sorted by
    descending activation frequency (HFM activation rates decrease with
    index) and pairwise swaps are hill-climbed until no swap reduces KL.
    Ties break toward the lexicographically smallest permutation.
    """
    n = sample.n
    indices = sample.indices_array()
    counts = sample.counts_array().astype(float)
    freqs = counts / counts.sum()
    bits = ((indices[:, None] >> np.arange(n)) & 1).astype(np.int8)  # D x n

    def mean_m(order) -> float:
        # permuted state: new feature i = old feature order[i]
        perm_bits = bits[:, list(order)]
        m = n - np.argmax(perm_bits[:, ::-1], axis=1)
        m[perm_bits.max(axis=1) == 0] = 0
        return float(freqs @ m)

    if n <= 8:
        # subset-sum table: contained[A] = P(support(s) is a subset of A);
        # then E[m] = n - sum over prefix sets of the permutation.
        contained = np.zeros(1 << n)
        np.add.at(contained, indices, freqs)
        for b in range(n):
            bit = 1 << b
            has = (np.arange(1 << n) & bit).astype(bool)
            contained[has] += contained[np.arange(1 << n)[has] ^ bit]

        def mean_m_fast(order) -> float:
            acc, mask = 0.0, 0
            for src in order[:-1]:
                mask |= 1 << src
                acc += contained[mask]
            return n - (acc + contained[0])

        best = min(itertools.permutations(range(n)), key=lambda o: (mean_m_fast(o), o))
        return GaugePerm((1,) * n, best)

    activation = freqs @ bits
    order = [int(i) for i in np.lexsort((np.arange(n), -activation))]
    best_val = mean_m(order)
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                cand = order[:]
                cand[i], cand[j] = cand[j], cand[i]
                val = mean_m(cand)
                if val < best_val - 1e-12:
                    order, best_val = cand, val
                    improved = True
    identity = list(range(n))
    if mean_m(identity) <= best_val + 1e-12 and identity != order:
        # the search must never do worse than leaving the order alone
        if mean_m(identity) < best_val - 1e-12 or identity < order:
            order = identity
    return GaugePerm((1,) * n, tuple(order))


def kl_prefix_curve(sample: EmpiricalSample, params: hfm.HfmParams, n_max: int) -> list:
    """KL of each empirical prefix marginal from the matching HFM marginal.

    For prefix width k < n the model side is `marginal_high` of h_n; at
    k = n it is h_n itself. Plug-in KL, zero-count states dropped.
    """
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    if n_max > params.n:
        raise ValueError("n_max exceeds the model width")
    indices = sample.indices_array()
    counts = sample.counts_array().astype(float)
    curve = []
    for k in range(2, n_max + 1):
        mask = (1 << k) - 1
        sub_idx, inv = np.unique(indices & mask, return_inverse=True)
        sub_counts = np.bincount(inv, weights=counts)
        freqs = sub_counts / sub_counts.sum()
        # prefix marginal of h_n, evaluated per observed state so widths
        # beyond the dense limit stay cheap; at k = n the mixture term is 0
        z_k = hfm.partition_function(k, params.g)
        model = (np.exp(-params.g * levels_of(sub_idx)) + (params.z - z_k) * 2.0**-k) / params.z
        curve.append((k, float((freqs * (np.log2(freqs) - np.log2(model))).sum())))
    return curve


def kendall_distance(sample: EmpiricalSample):
    """d(k, m) = 1 + tau_b between state counts and levels m_s.

    Exactly 0 when counts strictly decrease with the level, as under the
    HFM. Returns None when fewer than 2 distinct states were observed.
    """
    if sample.n_distinct < 2:
        return None
    indices = sample.indices_array()
    counts = sample.counts_array()
    tau, _ = kendalltau(counts, levels_of(indices))
    if np.isnan(tau):
        return None
    return float(1.0 + tau)


@dataclass
class PeakNode:
    """One node of the greedy Hamming-distance peak decomposition."""

    apex: int
    weight: float
    members: EmpiricalSample
    children: list = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> list:
        if self.is_leaf:
            return [self]
        return [leaf for child in self.children for leaf in child.leaves()]


def _popcount(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64)
    count = np.zeros(x.shape, dtype=np.int64)
    while np.any(x):
        count += (x & 1).astype(np.int64)
        x >>= np.uint64(1)
    return count


def _split_once(indices: np.ndarray, counts: np.ndarray, threshold: int):
    """One pass of the two-peak scan; returns member masks or None."""
    order = np.lexsort((indices, -counts))
    indices, counts = indices[order], counts[order]
    peak1 = [indices[0]]
    second_apex_pos = None
    for pos in range(1, len(indices)):
        dists = _popcount(np.asarray(peak1, dtype=np.int64) ^ indices[pos])
        if dists.min() < threshold:
            peak1.append(indices[pos])
        else:
            second_apex_pos = pos
            break
    if second_apex_pos is None:
        return None
    peak2 = [indices[second_apex_pos]]
    for pos in range(second_apex_pos + 1, len(indices)):
        d1 = _popcount(np.asarray(peak1, dtype=np.int64) ^ indices[pos]).min()
        d2 = _popcount(np.asarray(peak2, dtype=np.int64) ^ indices[pos]).min()
        if d1 <= d2:
            peak1.append(indices[pos])
        else:
            peak2.append(indices[pos])
    return (peak1, peak2, indices, counts)


def peak_decompose(sample: EmpiricalSample, threshold=None) -> PeakNode:
    """Greedy decomposition of a sample into Hamming-separated peaks.

    States are scanned in descending frequency (ties by state index); a
    state further than `threshold` (default floor(n/3), strict <) from
    every member of the first peak seeds the second, and the scan then
    assigns each remaining state to the nearer peak (tie toward peak 1).
    Recurses into both peaks until no split is found.
    """
    if sample.total == 0:
        raise ValueError("empty sample")
    if threshold is None:
        threshold = sample.n // 3
    total = sample.total

    def build(indices: np.ndarray, counts: np.ndarray) -> PeakNode:
        order = np.lexsort((indices, -counts))
        apex = int(indices[order[0]])
        members = EmpiricalSample(sample.n, {int(i): int(c) for i, c in zip(indices, counts)})
        node = PeakNode(apex, float(counts.sum()) / total, members)
        split = _split_once(indices, counts, threshold)
        if split is not None:
            p1, p2, sorted_idx, sorted_counts = split
            cmap = dict(zip(sorted_idx.tolist(), sorted_counts.tolist()))
            for group in (p1, p2):
                gi = np.asarray(group, dtype=np.int64)
                gc = np.asarray([cmap[int(i)] for i in group], dtype=np.int64)
                node.children.append(build(gi, gc))
        return node

    return build(sample.indices_array(), sample.counts_array())


@dataclass
class FitResult:
    """Per-peak (or whole-sample) comparison against the HFM."""

    g_fit: float
    gauge: GaugePerm
    kl_curve: list
    kendall_d: float | None
    weight: float = 1.0
    entropy_bits: float = 0.0
    miller_madow_bits: float = 0.0
    kl_full: float = 0.0
    low_statistics: bool = False


def analyze_sample(sample: EmpiricalSample, n_max=None) -> FitResult:
    """Gauge-fix, order features, fit g and score one sample against the HFM."""
    _, fixed = gauge_fix(sample)
    # the KL-minimizing order is g-independent (it minimizes E[m]), so the
    # permutation can be fixed before the coupling is fitted
    perm = optimize_permutation(fixed, 1.0)
    permuted = perm.apply_sample(fixed)
    g = fit_g(permuted)
    params = hfm.HfmParams(sample.n, g)
    curve = kl_prefix_curve(permuted, params, n_max or sample.n)
    return FitResult(
        g_fit=g,
        gauge=perm,
        kl_curve=curve,
        kendall_d=kendall_distance(permuted),
        entropy_bits=sample.entropy_bits(),
        miller_madow_bits=sample.miller_madow_bits(),
        kl_full=kl_to_hfm(permuted, g),
        low_statistics=sample.n_distinct < LOW_STATS_THRESHOLD,
    )


def per_peak_report(tree: PeakNode, n_max=None) -> tuple:
    """Independent HFM fit of every leaf peak plus the weighted average KL."""
    results = []
    for leaf in tree.leaves():
        res = analyze_sample(leaf.members, n_max=n_max)
        res.weight = leaf.weight
        results.append(res)
    avg_kl = sum(r.weight * r.kl_full for r in results)
    return results, avg_kl
