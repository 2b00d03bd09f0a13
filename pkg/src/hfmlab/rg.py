"""Breadth renormalization transformations on dense distributions.

Coarse graining marginalizes the finest feature, prepends a fresh uniform
feature and re-mixes with the featureless state; fine graining zooms in on
states with the coarsest feature active and appends a maximally ignorant
new feature. Mixing weights are solved so a target entropy is preserved.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from . import hfm
from .states import (
    DenseDistribution,
    binary_entropy,
    entropy_bits,
    levels_of,
    total_variation,
)

log = logging.getLogger(__name__)

_BISECT_MAX = 200


class Metric(str, Enum):
    total_variation = "total_variation"
    kl = "kl"


class Direction(str, Enum):
    coarse = "coarse"
    fine = "fine"


class NoRootError(ValueError):
    """The entropy-matching equation has no root in the admissible interval."""


@dataclass
class RgConfig:
    target_entropy: float  # bits
    alpha_tolerance: float = 1e-12
    max_iterations: int = 500
    convergence_metric: Metric = Metric.total_variation
    convergence_tolerance: float = 1e-9

    def __post_init__(self):
        self.convergence_metric = Metric(self.convergence_metric)
        if self.alpha_tolerance <= 0 or self.convergence_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.target_entropy <= 1.0:
            raise ValueError("target entropy must exceed 1 bit")


@dataclass
class RgDiagnostics:
    iterations: int = 0
    alpha_trace: list = field(default_factory=list)
    distance_trace: list = field(default_factory=list)
    converged: bool = False


def _coarse_intermediate(p: DenseDistribution) -> np.ndarray:
    """Steps 1-3: drop s_n, prepend a uniform bit, shift indices.

    Returns the length-2^n vector p~ with the new feature in bit 0.
    """
    half_size = 1 << (p.n - 1)
    marg = p.probs[:half_size] + p.probs[half_size:]
    # new index 2j + b: bit 0 is the fresh uniform feature
    return np.repeat(marg, 2) / 2.0


def coarse_step(p: DenseDistribution, alpha: float) -> DenseDistribution:
    """One coarse-graining pass with a fixed reset weight alpha."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    out = (1.0 - alpha) * _coarse_intermediate(p)
    out[0] += alpha
    return DenseDistribution(p.n, out)


def coarse_entropy_gap(p: DenseDistribution, alpha: float, target_entropy: float) -> float:
    """H[coarse_step(p, alpha)] - target, in bits, via the closed form.

    With p0 = p~(0) and q = alpha + (1 - alpha) p0, the output entropy is
    h(q) + (1 - q) H[p~ | s != 0]; concave in alpha, so the root is unique
    whenever the endpoints bracket it.
    """
    tilde = _coarse_intermediate(p)
    p0 = float(tilde[0])
    h_tilde = entropy_bits(tilde)
    if p0 >= 1.0:
        return -target_entropy
    h_cond = (h_tilde - binary_entropy(p0)) / (1.0 - p0)
    q = alpha + (1.0 - alpha) * p0
    return binary_entropy(q) + (1.0 - q) * h_cond - target_entropy


def solve_alpha(p: DenseDistribution, target_entropy: float, tolerance: float = 1e-12) -> float:
    """Reset weight alpha for which the coarse step preserves target_entropy."""
    gap = lambda a: coarse_entropy_gap(p, a, target_entropy)
    g0, g1 = gap(0.0), gap(1.0)
    if g1 >= 0.0:
        raise NoRootError(
            f"entropy gap at alpha=1 is {g1:.3g} >= 0; target entropy "
            "is in the <= 1 bit regime where no unique root exists"
        )
    if abs(g0) <= tolerance:
        return 0.0
    if g0 < 0.0:
        raise NoRootError(f"target entropy {target_entropy} exceeds reachable range (gap at 0: {g0:.3g})")
    lo, hi = 0.0, 1.0
    for _ in range(_BISECT_MAX):
        mid = 0.5 * (lo + hi)
        gm = gap(mid)
        if abs(gm) <= tolerance:
            return mid
        if gm > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fine_step(p: DenseDistribution, q: float) -> DenseDistribution:
    """One fine-graining pass: condition on s_1 = 1, shift, append s_n.

    The appended feature is active with probability q; given s_n = 1 the
    remaining features are uniform (maximum ignorance), given s_n = 0 they
    follow the zoomed-in distribution.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    w = float(p.probs[1::2].sum())
    if w <= 0.0:
        raise ValueError("p(s_1 = 1) = 0: zoom undefined")
    tilde = p.probs[1::2] / w  # over s'_{1:n-1}
    half_size = 1 << (p.n - 1)
    out = np.concatenate([(1.0 - q) * tilde, np.full(half_size, q / half_size)])
    return DenseDistribution(p.n, out)


def _fine_entropy(h_tilde: float, n: int, q: float) -> float:
    return binary_entropy(q) + (1.0 - q) * h_tilde + q * (n - 1)


def solve_q(p: DenseDistribution, target_entropy: float, tolerance: float = 1e-12) -> float:
    """Activation probability q for which the fine step hits target_entropy.

    H(q) = h(q) + (1-q) H[p~] + q (n-1) is unimodal in q; when the target is
    reachable from both sides the smaller root is returned and logged.
    """
    w = float(p.probs[1::2].sum())
    if w <= 0.0:
        raise ValueError("p(s_1 = 1) = 0: zoom undefined")
    tilde = p.probs[1::2] / w
    h_tilde = entropy_bits(tilde)
    n = p.n
    ent = lambda q: _fine_entropy(h_tilde, n, q)
    # interior maximum of H(q): q* / (1 - q*) = 2^(n - 1 - h_tilde)
    q_peak = 1.0 / (1.0 + 2.0 ** (h_tilde - (n - 1)))
    h0, h_peak, h1 = ent(0.0), ent(q_peak), ent(1.0)
    if target_entropy > h_peak + tolerance:
        raise NoRootError(f"target {target_entropy} above reachable maximum {h_peak}")
    left_ok = target_entropy >= h0 - tolerance
    right_ok = target_entropy >= h1 - tolerance
    if not (left_ok or right_ok):
        raise NoRootError(f"target {target_entropy} below both endpoint entropies ({h0}, {h1})")
    if left_ok and right_ok:
        log.info("entropy target reachable on both branches of H(q); returning the smaller root")
    if left_ok:
        lo, hi = 0.0, q_peak  # H increasing on this branch
        increasing = True
    else:
        lo, hi = q_peak, 1.0  # H decreasing
        increasing = False
    for _ in range(_BISECT_MAX):
        mid = 0.5 * (lo + hi)
        gap = ent(mid) - target_entropy
        if abs(gap) <= tolerance:
            return mid
        if (gap < 0.0) == increasing:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class TransitionMatrix:
    """Sparse stochastic matrix of the coarse step at fixed alpha (row = source)."""

    n: int
    alpha: float
    rows: sp.csr_matrix

    def apply(self, p: DenseDistribution) -> DenseDistribution:
        return DenseDistribution(self.n, np.asarray(p.probs @ self.rows).ravel())


def build_transition_matrix(n: int, alpha: float) -> TransitionMatrix:
    """Random walk with resetting on the de Bruijn graph of n-bit states.

    From s: weight (1-alpha)/2 to each shift successor (b, s_{1:n-1}) and
    alpha onto the featureless state (accumulated when a successor is 0).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    size = 1 << n
    src = np.arange(size)
    succ0 = (src % (size >> 1)) << 1
    rows = np.concatenate([src, src, src])
    cols = np.concatenate([succ0, succ0 | 1, np.zeros(size, dtype=np.int64)])
    vals = np.concatenate([
        np.full(size, (1.0 - alpha) / 2.0),
        np.full(size, (1.0 - alpha) / 2.0),
        np.full(size, alpha),
    ])
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    mat.sum_duplicates()
    return TransitionMatrix(n, alpha, mat)


def stationary_distribution(
    matrix: TransitionMatrix,
    start: DenseDistribution | None = None,
    tolerance: float = 1e-12,
    max_iterations: int = 100_000,
) -> DenseDistribution:
    """Unique stationary vector by power iteration (ergodic for alpha > 0)."""
    p = (start or DenseDistribution.uniform(matrix.n)).probs.copy()
    for _ in range(max_iterations):
        nxt = np.asarray(p @ matrix.rows).ravel()
        if total_variation(p, nxt) < tolerance:
            return DenseDistribution(matrix.n, nxt / nxt.sum())
        p = nxt
    raise RuntimeError("power iteration did not converge")


def analytic_fixed_point(n: int, g: float) -> DenseDistribution:
    """Closed-form fixed point of the coarse transformation for g > ln 2.

    p*(s) = (1 - 1/(e^g - 1)) exp(-g m_s) + exp(-g n)/(e^g - 1); this is the
    n-prefix marginal of an infinitely wide HFM.
    """
    if g <= hfm.G_CRITICAL:
        raise ValueError(
            f"g={g} is at or below the phase boundary ln 2; the coarse "
            "transformation has no normalizable fixed point there"
        )
    lv = levels_of(np.arange(1 << n))
    c = 1.0 / (math.exp(g) - 1.0)
    probs = (1.0 - c) * np.exp(-g * lv) + c * math.exp(-g * n)
    return DenseDistribution(n, probs)


def iterate_to_fixed_point(
    p0: DenseDistribution,
    config: RgConfig,
    direction: Direction = Direction.coarse,
) -> tuple[DenseDistribution, RgDiagnostics]:
    """Alternate the entropy-matching solver and the step until convergence."""
    direction = Direction(direction)
    diag = RgDiagnostics()
    p = p0
    for it in range(1, config.max_iterations + 1):
        if direction is Direction.coarse:
            mix = solve_alpha(p, config.target_entropy, config.alpha_tolerance)
            nxt = coarse_step(p, mix)
        else:
            mix = solve_q(p, config.target_entropy, config.alpha_tolerance)
            nxt = fine_step(p, mix)
        if config.convergence_metric is Metric.total_variation:
            dist = nxt.tv(p)
        else:
            dist = nxt.kl(p)
        diag.iterations = it
        diag.alpha_trace.append(mix)
        diag.distance_trace.append(dist)
        p = nxt
        if dist < config.convergence_tolerance:
            diag.converged = True
            break
    return p, diag
