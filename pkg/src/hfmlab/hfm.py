"""Exact arithmetic for the Hierarchical Feature Model (HFM).

The model assigns h_n(s) = exp(-g * m_s) / Z_n where m_s is the highest
active feature index (0 for the featureless state). Coding costs are
reported in bits; the coupling g stays in nats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .states import (
    DenseDistribution,
    EmpiricalSample,
    binary_entropy,
    entropy_bits,
    levels_of,
)

#: Critical coupling of the infinite-width model (nats).
G_CRITICAL = math.log(2.0)

# Closed forms in xi = 2 exp(-g) switch to their xi -> 1 limit inside this band.
_XI_ONE_TOL = 1e-9

# Coding costs closer than this (bits) share a degeneracy bin.
_E_BIN_TOL = 1e-9


def xi_of(g: float) -> float:
    """The combination 2 exp(-g) that controls the phase of the model."""
    return 2.0 * math.exp(-g)


def partition_function(n: int, g: float) -> float:
    """Z_n = 1 + sum_{k=1..n} 2^(k-1) exp(-g k), evaluated in closed form."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if g <= 0:
        raise ValueError("g must be positive")
    xi = xi_of(g)
    if abs(xi - 1.0) < _XI_ONE_TOL:
        return 1.0 + n / 2.0
    return 1.0 + 0.5 * xi * (xi**n - 1.0) / (xi - 1.0)


@dataclass(frozen=True)
class HfmParams:
    """Width and coupling of an HFM, with the partition function cached."""

    n: int
    g: float
    z: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "z", partition_function(self.n, self.g))

    @property
    def xi(self) -> float:
        return xi_of(self.g)


def prob(params: HfmParams, index_or_state) -> float:
    """h_n(s) for a packed index or a FeatureState."""
    return math.exp(log_prob(params, index_or_state))


def log_prob(params: HfmParams, index_or_state) -> float:
    """log h_n(s) in nats."""
    if hasattr(index_or_state, "index"):
        if index_or_state.n != params.n:
            raise ValueError(f"width mismatch: state has n={index_or_state.n}, params n={params.n}")
        index = index_or_state.index
    else:
        index = int(index_or_state)
    if not 0 <= index < (1 << params.n):
        raise ValueError(f"state index {index} out of range for n={params.n}")
    return -params.g * index.bit_length() - math.log(params.z)


def probs_vector(params: HfmParams) -> DenseDistribution:
    """The full 2^n probability vector of h_n."""
    m = levels_of(np.arange(1 << params.n))
    return DenseDistribution(params.n, np.exp(-params.g * m) / params.z)


def level_masses(params: HfmParams) -> np.ndarray:
    """P(m_s = m) for m = 0..n: 1/Z at m=0, 2^(m-1) exp(-g m)/Z above."""
    m = np.arange(params.n + 1)
    mass = np.exp((m - 1) * math.log(2.0) - params.g * m) / params.z
    mass[0] = 1.0 / params.z
    return mass


def mean_level(params: HfmParams) -> float:
    """E[m_s] under h_n; the model's sufficient statistic."""
    mass = level_masses(params)
    return float(np.arange(params.n + 1) @ mass)


def entropy(params: HfmParams) -> float:
    """Resolution H[s] in bits, computed in O(n) by grouping states by level."""
    mass = level_masses(params)
    # all states at level m share probability exp(-g m)/Z
    m = np.arange(params.n + 1)
    state_log2p = (-params.g * m - math.log(params.z)) / math.log(2.0)
    return float(-(mass @ state_log2p))


def sample(params: HfmParams, count: int, seed: int) -> EmpiricalSample:
    """Draw `count` states: first the level m, then uniform bits below it."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return EmpiricalSample(params.n, {})
    rng = np.random.default_rng(seed)
    m = rng.choice(params.n + 1, size=count, p=level_masses(params))
    # bits 1..m-1 uniform, bit m set, bits above m clear
    low = rng.integers(0, np.where(m > 1, 1 << np.maximum(m - 1, 0), 1))
    top = np.where(m > 0, 1 << np.maximum(m - 1, 0), 0)
    return EmpiricalSample.from_indices(low + top, params.n)


def marginal_low(params: HfmParams, k: int) -> DenseDistribution:
    """Marginal over the fine features s_{k+1:n} after summing out s_{1:k}.

    Mixture of h_{n-k} and a point mass on the featureless state with
    weights xi^k Z_{n-k}/Z_n and (1 - xi/2)(xi^k - 1)/((xi - 1) Z_n).
    """
    _check_k(params, k)
    xi = params.xi
    sub = HfmParams(params.n - k, params.g)
    w_hfm = xi**k * sub.z / params.z
    if abs(xi - 1.0) < _XI_ONE_TOL:
        geom = float(k)
    else:
        geom = (xi**k - 1.0) / (xi - 1.0)
    w_delta = (1.0 - xi / 2.0) * geom / params.z
    probs = w_hfm * probs_vector(sub).probs
    probs[0] += w_delta
    return DenseDistribution(sub.n, probs)


def marginal_high(params: HfmParams, k: int) -> DenseDistribution:
    """Marginal over the coarse features s_{1:k} after summing out s_{k+1:n}.

    (Z_k/Z_n) h_k + (1 - Z_k/Z_n) * uniform.
    """
    _check_k(params, k)
    sub = HfmParams(k, params.g)
    w = sub.z / params.z
    probs = w * probs_vector(sub).probs + (1.0 - w) * 2.0**-k
    return DenseDistribution(k, probs)


def _check_k(params: HfmParams, k: int):
    if not 1 <= k < params.n:
        raise ValueError(f"k={k} out of range for n={params.n}")


def relevance(dist: DenseDistribution) -> float:
    """H[E] in bits: entropy of the coding cost E_s = -log2 p(s).

    States whose coding costs differ by less than 1e-9 bits share a bin;
    zero-probability states carry no mass and are excluded.
    """
    p = dist.probs[dist.probs > 0]
    costs = -np.log2(p)
    order = np.argsort(costs)
    costs, p = costs[order], p[order]
    # group runs of (numerically) equal cost
    breaks = np.nonzero(np.diff(costs) > _E_BIN_TOL)[0] + 1
    masses = np.add.reduceat(p, np.concatenate(([0], breaks)))
    return entropy_bits(masses)


@dataclass
class DegeneracySpectrum:
    """Per-level coding costs and state counts, with the fitted slope of ln W vs E."""

    levels: list  # (E_bits, W, m)
    nu: float  # d ln W / dE with E in nats; NaN when undefined

    def total_states(self) -> int:
        return sum(w for _, w, _ in self.levels)


def degeneracy_spectrum(params: HfmParams) -> DegeneracySpectrum:
    """W(m) = 2^(m-1) for m >= 1 and 1 at m = 0; for the HFM nu = ln2 / g."""
    log_z = math.log(params.z)
    levels = []
    for m in range(params.n + 1):
        e_bits = (params.g * m + log_z) / math.log(2.0)
        w = 1 if m == 0 else 1 << (m - 1)
        levels.append((e_bits, w, m))
    if params.n < 2:
        nu = float("nan")  # a single degenerate level fixes no slope
    else:
        e_nats = np.array([params.g * m + log_z for m in range(1, params.n + 1)])
        ln_w = np.array([(m - 1) * math.log(2.0) for m in range(1, params.n + 1)])
        nu = float(np.polyfit(e_nats, ln_w, 1)[0])
    return DegeneracySpectrum(levels, nu)
