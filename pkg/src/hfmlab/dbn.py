"""Desk-scale restricted Boltzmann machines and deep belief networks.

Greedy layerwise training with persistent contrastive divergence, clamped
and equilibrium sampling, observable propagation through the layers, TAP
magnetization fixed points, and exact-enumeration oracles for toy widths.
Units are {0, 1} throughout.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .states import EmpiricalSample, DenseDistribution

log = logging.getLogger(__name__)

_WEIGHT_GUARD = 1e3
_TAP_CLIP = 1e-6  # magnetizations stay strictly inside (0, 1)


@dataclass
class RbmParams:
    """Weights and biases of one RBM: W is visible x hidden, c visible bias, b hidden bias."""

    W: np.ndarray
    c: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        m, n = self.W.shape
        if self.c.shape != (m,) or self.b.shape != (n,):
            raise ValueError("bias dimensions inconsistent with W")
        if not (np.isfinite(self.W).all() and np.isfinite(self.c).all() and np.isfinite(self.b).all()):
            raise ValueError("non-finite parameter")

    @property
    def n_visible(self) -> int:
        return self.W.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W.shape[1]


def hidden_means(rbm: RbmParams, x: np.ndarray) -> np.ndarray:
    """p(s_j = 1 | x) = sigmoid(b_j + sum_i W_ij x_i); x may be a batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != rbm.n_visible:
        raise ValueError(f"visible width mismatch: {x.shape[-1]} vs {rbm.n_visible}")
    return expit(rbm.b + x @ rbm.W)


def visible_means(rbm: RbmParams, s: np.ndarray) -> np.ndarray:
    """p(x_i = 1 | s) = sigmoid(c_i + sum_j W_ij s_j)."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != rbm.n_hidden:
        raise ValueError(f"hidden width mismatch: {s.shape[-1]} vs {rbm.n_hidden}")
    return expit(rbm.c + s @ rbm.W.T)


def _bernoulli(rng: np.random.Generator, means: np.ndarray) -> np.ndarray:
    return (rng.random(means.shape) < means).astype(np.float64)


@dataclass
class TrainConfig:
    k_steps: int = 10
    learning_rate: float = 0.01
    batch_size: int = 64
    epochs: int = 50
    n_chains: int = 64
    seed: int = 0

    def __post_init__(self):
        for name in ("k_steps", "learning_rate", "batch_size", "epochs", "n_chains"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def train_rbm(data: np.ndarray, n_hidden: int, config: TrainConfig, log_rows=None) -> RbmParams:
    """PCD-k stochastic gradient ascent on the log-likelihood.

    Negative-phase chains persist across batches and epochs. Deterministic
    given the config seed. Aborts if mean |W| exceeds 1e3.
    """
    data = np.asarray(data, dtype=np.float64)
    n_visible = data.shape[1]
    rng = np.random.default_rng(config.seed)
    rbm = RbmParams(
        W=rng.normal(0.0, 0.01, size=(n_visible, n_hidden)),
        c=np.zeros(n_visible),
        b=np.zeros(n_hidden),
    )
    chains = _bernoulli(rng, np.full((config.n_chains, n_visible), 0.5))
    lr = config.learning_rate
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        grad_norm = 0.0
        for start in range(0, len(data), config.batch_size):
            batch = data[order[start : start + config.batch_size]]
            ph = hidden_means(rbm, batch)
            for _ in range(config.k_steps):
                h = _bernoulli(rng, hidden_means(rbm, chains))
                chains = _bernoulli(rng, visible_means(rbm, h))
            nh = hidden_means(rbm, chains)
            d_w = batch.T @ ph / len(batch) - chains.T @ nh / len(chains)
            d_c = batch.mean(axis=0) - chains.mean(axis=0)
            d_b = ph.mean(axis=0) - nh.mean(axis=0)
            rbm.W += lr * d_w
            rbm.c += lr * d_c
            rbm.b += lr * d_b
            grad_norm = float(np.sqrt((d_w**2).sum() + (d_c**2).sum() + (d_b**2).sum()))
        if np.abs(rbm.W).mean() > _WEIGHT_GUARD:
            raise RuntimeError(f"training diverged: mean |W| exceeds {_WEIGHT_GUARD}")
        if log_rows is not None:
            log_rows.append((epoch, pseudo_likelihood(rbm, data, rng), grad_norm))
    return rbm


def pseudo_likelihood(rbm: RbmParams, data: np.ndarray, rng: np.random.Generator) -> float:
    """Stochastic pseudo-likelihood proxy: one randomly flipped site per row."""
    rows = data[rng.choice(len(data), size=min(len(data), 256), replace=False)]
    i = rng.integers(0, rbm.n_visible, size=len(rows))
    flipped = rows.copy()
    flipped[np.arange(len(rows)), i] = 1.0 - flipped[np.arange(len(rows)), i]
    fe = _free_energy(rbm, rows)
    fe_flip = _free_energy(rbm, flipped)
    return float(np.mean(rbm.n_visible * np.log(expit(fe_flip - fe))))


def _free_energy(rbm: RbmParams, x: np.ndarray) -> np.ndarray:
    return -(x @ rbm.c) - np.logaddexp(0.0, rbm.b + x @ rbm.W).sum(axis=-1)


@dataclass
class DbnModel:
    """Stack of RBMs; layers[k] connects layer k (visible side) to layer k+1."""

    layers: list

    def __post_init__(self):
        for lower, upper in zip(self.layers, self.layers[1:]):
            if lower.n_hidden != upper.n_visible:
                raise ValueError("adjacent layer dimensions do not chain")
        if not self.layers:
            raise ValueError("at least one RBM required")

    @property
    def sizes(self) -> tuple:
        return (self.layers[0].n_visible,) + tuple(r.n_hidden for r in self.layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def to_json(self) -> dict:
        return {
            "format": "hfmlab-dbn-v1",
            "sizes": list(self.sizes),
            "layers": [
                {"W": r.W.tolist(), "c": r.c.tolist(), "b": r.b.tolist()} for r in self.layers
            ],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "DbnModel":
        if payload.get("format") != "hfmlab-dbn-v1":
            raise ValueError("unrecognized model format")
        return cls([RbmParams(np.array(l["W"]), np.array(l["c"]), np.array(l["b"])) for l in payload["layers"]])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "DbnModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def train_dbn(data: np.ndarray, sizes, config: TrainConfig, log_rows=None) -> DbnModel:
    """Greedy layerwise training; layer l trains on stochastic forward samples."""
    data = np.asarray(data, dtype=np.float64)
    sizes = tuple(int(s) for s in sizes)
    if sizes[0] != data.shape[1]:
        raise ValueError(f"sizes[0]={sizes[0]} does not match data width {data.shape[1]}")
    rng = np.random.default_rng(config.seed)
    layers = []
    current = data
    for depth, n_hidden in enumerate(sizes[1:], start=1):
        layer_cfg = TrainConfig(
            k_steps=config.k_steps,
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            epochs=config.epochs,
            n_chains=config.n_chains,
            seed=config.seed + depth,
        )
        rows = [] if log_rows is not None else None
        rbm = train_rbm(current, n_hidden, layer_cfg, log_rows=rows)
        if log_rows is not None:
            log_rows.extend((depth,) + row for row in rows)
        layers.append(rbm)
        current = _bernoulli(rng, hidden_means(rbm, current))
    return DbnModel(layers)


def clamped_states(dbn: DbnModel, data: np.ndarray, layer: int, passes: int = 1, seed: int = 0) -> np.ndarray:
    """Stochastic forward propagation of every datapoint up to `layer`."""
    if not 1 <= layer <= dbn.depth:
        raise ValueError(f"layer {layer} out of range 1..{dbn.depth}")
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(passes):
        current = np.asarray(data, dtype=np.float64)
        for rbm in dbn.layers[:layer]:
            current = _bernoulli(rng, hidden_means(rbm, current))
        blocks.append(current)
    return np.concatenate(blocks, axis=0)


def clamped_sample(dbn: DbnModel, data: np.ndarray, layer: int, passes: int = 1, seed: int = 0) -> EmpiricalSample:
    return EmpiricalSample.from_rows(clamped_states(dbn, data, layer, passes, seed))


def _gibbs_top(dbn: DbnModel, n_samples: int, gibbs_steps: int, rng: np.random.Generator, thin: int = 1):
    """Alternating Gibbs on the top RBM; returns (lower, upper) sample matrices."""
    top = dbn.layers[-1]
    keep_every = max(thin, 1)
    n_chains = max(1, n_samples // max(gibbs_steps // keep_every, 1))
    v = _bernoulli(rng, np.full((n_chains, top.n_visible), 0.5))
    burn_in = gibbs_steps // 2
    lows, highs = [], []
    collected = 0
    step = 0
    while collected < n_samples:
        h = _bernoulli(rng, hidden_means(top, v))
        v = _bernoulli(rng, visible_means(top, h))
        step += 1
        if step > burn_in and step % keep_every == 0:
            take = min(n_chains, n_samples - collected)
            lows.append(v[:take])
            highs.append(h[:take])
            collected += take
    return np.concatenate(lows), np.concatenate(highs)


def equilibrium_states(
    dbn: DbnModel,
    layer: int,
    n_samples: int,
    gibbs_steps: int = 10_000,
    seed: int = 0,
    check_convergence: bool = True,
):
    """Equilibrium of the top RBM propagated down to `layer`.

    Returns (states, converged). The diagnostic runs two independent
    chains and checks that mean activations agree within 3 sigma;
    disagreement is flagged, not fatal.
    """
    if not 1 <= layer <= dbn.depth:
        raise ValueError(f"layer {layer} out of range 1..{dbn.depth}")
    rng = np.random.default_rng(seed)

    def one_chain(chain_rng):
        low, high = _gibbs_top(dbn, n_samples, gibbs_steps, chain_rng)
        if layer == dbn.depth:
            current = high
        else:
            current = low  # layer L-1 states
            for rbm in reversed(dbn.layers[layer : dbn.depth - 1]):
                current = _bernoulli(chain_rng, visible_means(rbm, current))
        return current

    states = one_chain(rng)
    converged = True
    if check_convergence:
        other = one_chain(np.random.default_rng(seed + 104729))
        diff = states.mean(axis=0) - other.mean(axis=0)
        sigma = np.sqrt(
            states.var(axis=0) / len(states) + other.var(axis=0) / len(other)
        )
        bad = np.abs(diff) > 3.0 * np.maximum(sigma, 1e-12)
        # a few 3-sigma excursions among n units are expected by chance
        converged = bad.mean() <= 0.05
        if not converged:
            log.warning("equilibrium chains disagree on %.1f%% of units", 100 * bad.mean())
    return states, converged


def equilibrium_sample(dbn, layer, n_samples, gibbs_steps=10_000, seed=0) -> EmpiricalSample:
    states, converged = equilibrium_states(dbn, layer, n_samples, gibbs_steps, seed)
    if not converged:
        log.warning("equilibrium sample at layer %d flagged as unconverged", layer)
    return EmpiricalSample.from_rows(states)


def generate(dbn: DbnModel, count: int, gibbs_steps: int = 10_000, seed: int = 0) -> np.ndarray:
    """Visible configurations drawn from the model's own distribution."""
    if count == 0:
        return np.zeros((0, dbn.sizes[0]))
    rng = np.random.default_rng(seed)
    low, _ = _gibbs_top(dbn, count, gibbs_steps, rng)
    current = low
    for rbm in reversed(dbn.layers[: dbn.depth - 1]):
        current = _bernoulli(rng, visible_means(rbm, current))
    return current


# ---------------------------------------------------------------------------
# observable propagation (martingale diagnostic)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObservableSpec:
    """A bounded linear observable of the visible layer: phi0(x) = weights . x."""

    weights: tuple

    @property
    def phi_minus(self) -> float:
        return float(sum(w for w in self.weights if w < 0))

    @property
    def phi_plus(self) -> float:
        return float(sum(w for w in self.weights if w > 0))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ np.asarray(self.weights)


def left_right_observable(height: int, width: int) -> ObservableSpec:
    """Normalized left-minus-right pixel mass difference."""
    w = np.zeros((height, width))
    w[:, : width // 2] = 1.0
    w[:, (width + 1) // 2 :] = -1.0
    w /= height * (width // 2)
    return ObservableSpec(tuple(w.ravel()))


def top_bottom_observable(height: int, width: int) -> ObservableSpec:
    """Normalized top-minus-bottom pixel mass difference."""
    w = np.zeros((height, width))
    w[: height // 2, :] = 1.0
    w[(height + 1) // 2 :, :] = -1.0
    w /= width * (height // 2)
    return ObservableSpec(tuple(w.ravel()))


def estimate_phi(
    dbn: DbnModel,
    spec: ObservableSpec,
    layer: int,
    states: np.ndarray,
    mc_rollouts: int,
    rng: np.random.Generator,
):
    """Monte Carlo estimate of phi_l(s) = E[phi0(x) | s] by downward ancestral sampling.

    Returns (estimates, standard errors), one per input state.
    """
    states = np.asarray(states, dtype=np.float64)
    values = np.zeros((len(states), mc_rollouts))
    for r in range(mc_rollouts):
        current = states
        for rbm in reversed(dbn.layers[:layer]):
            current = _bernoulli(rng, visible_means(rbm, current))
        values[:, r] = spec.evaluate(current)
    return values.mean(axis=1), values.std(axis=1, ddof=1) / np.sqrt(mc_rollouts)


def propagate_observable(
    dbn: DbnModel,
    spec: ObservableSpec,
    layer: int,
    data: np.ndarray,
    mc_rollouts: int = 200,
    seed: int = 0,
) -> list:
    """phi_l over the distinct clamped states of `data` at `layer`.

    Returns a list of (state tuple, phi estimate, standard error).
    """
    rng = np.random.default_rng(seed)
    states = clamped_states(dbn, data, layer, passes=1, seed=seed)
    distinct = np.unique(states, axis=0)
    phi, se = estimate_phi(dbn, spec, layer, distinct, mc_rollouts, rng)
    return [(tuple(int(b) for b in row), float(p), float(e)) for row, p, e in zip(distinct, phi, se)]


def martingale_regression(
    dbn: DbnModel,
    spec: ObservableSpec,
    layer: int,
    data: np.ndarray,
    mc_rollouts: int = 200,
    seed: int = 0,
    children_per_half: int = 1,
):
    """Slope of phi_l on phi_{l-1} over generatively sampled state pairs.

    For each layer-l state two independent groups of children at layer l-1
    are drawn from the generative conditional; by the tower property each
    group's mean phi_{l-1} has conditional mean phi_l(parent), so
    instrumenting one group with the other gives an unbiased slope of
    exactly 1 under the model (both the child-sampling spread and the Monte
    Carlo noise cancel from the instrument covariance). More children per
    group tightens the estimate without changing its target.
    Returns (slope, stderr).
    """
    if layer < 2:
        raise ValueError("needs layer >= 2")
    if children_per_half < 1:
        raise ValueError("children_per_half must be >= 1")
    rng = np.random.default_rng(seed)
    cur_states = clamped_states(dbn, data, layer, passes=1, seed=seed)
    gen = visible_means(dbn.layers[layer - 1], cur_states)

    def group_phi():
        acc = np.zeros(len(cur_states))
        for _ in range(children_per_half):
            child = _bernoulli(rng, gen)
            phi, _ = estimate_phi(dbn, spec, layer - 1, child, mc_rollouts, rng)
            acc += phi
        return acc / children_per_half

    phi_prev_a = group_phi()
    phi_prev_b = group_phi()
    phi_cur, _ = estimate_phi(dbn, spec, layer, cur_states, mc_rollouts, rng)
    cov_ya = np.cov(phi_cur, phi_prev_a)[0, 1]
    cov_ba = np.cov(phi_prev_b, phi_prev_a)[0, 1]
    if abs(cov_ba) < 1e-14:
        raise ValueError("observable carries no signal at this depth")
    slope = cov_ya / cov_ba
    # nonparametric bootstrap over state pairs
    n = len(phi_cur)
    boot_rng = np.random.default_rng(seed + 1)
    slopes = []
    for _ in range(200):
        pick = boot_rng.integers(0, n, size=n)
        c_ya = np.cov(phi_cur[pick], phi_prev_a[pick])[0, 1]
        c_ba = np.cov(phi_prev_b[pick], phi_prev_a[pick])[0, 1]
        if abs(c_ba) > 1e-14:
            slopes.append(c_ya / c_ba)
    return float(slope), float(np.std(slopes, ddof=1))


# ---------------------------------------------------------------------------
# TAP fixed points
# ---------------------------------------------------------------------------

@dataclass
class TapState:
    m_x: np.ndarray
    m_s: np.ndarray
    converged: bool
    iterations: int


def tap_residual(rbm: RbmParams, m_x: np.ndarray, m_s: np.ndarray) -> float:
    """Max violation of the magnetization equations at unit inverse temperature."""
    w2 = rbm.W**2
    var_x = m_x - m_x**2
    var_s = m_s - m_s**2
    rhs_s = expit(rbm.b + m_x @ rbm.W - (var_x @ w2) * (m_s - 0.5))
    rhs_x = expit(rbm.c + m_s @ rbm.W.T - (var_s @ w2.T) * (m_x - 0.5))
    return float(max(np.abs(rhs_s - m_s).max(), np.abs(rhs_x - m_x).max()))


def tap_solve(
    rbm: RbmParams,
    init_x: np.ndarray,
    init_s: np.ndarray,
    damping: float = 0.5,
    tol: float = 1e-6,
    max_iter: int = 1000,
) -> TapState:
    """Damped fixed-point iteration of the TAP magnetization equations."""
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    m_x = np.clip(np.asarray(init_x, dtype=np.float64), _TAP_CLIP, 1 - _TAP_CLIP)
    m_s = np.clip(np.asarray(init_s, dtype=np.float64), _TAP_CLIP, 1 - _TAP_CLIP)
    w2 = rbm.W**2
    for it in range(1, max_iter + 1):
        var_x = m_x - m_x**2
        new_s = expit(rbm.b + m_x @ rbm.W - (var_x @ w2) * (m_s - 0.5))
        m_s_next = (1 - damping) * m_s + damping * new_s
        var_s = m_s_next - m_s_next**2
        new_x = expit(rbm.c + m_s_next @ rbm.W.T - (var_s @ w2.T) * (m_x - 0.5))
        m_x_next = (1 - damping) * m_x + damping * new_x
        delta = max(np.abs(m_s_next - m_s).max(), np.abs(m_x_next - m_x).max())
        m_s = np.clip(m_s_next, _TAP_CLIP, 1 - _TAP_CLIP)
        m_x = np.clip(m_x_next, _TAP_CLIP, 1 - _TAP_CLIP)
        if delta < tol:
            return TapState(m_x, m_s, True, it)
    return TapState(m_x, m_s, False, max_iter)


def tap_count_solutions(
    rbm: RbmParams,
    inits,
    dedup_tol: float = 0.01,
    damping: float = 0.5,
    tol: float = 1e-6,
    max_iter: int = 1000,
):
    """Distinct converged TAP solutions from a set of initializations.

    `inits` is an iterable of (m_x, m_s) pairs, e.g. clamped activations.
    Solutions closer than dedup_tol in max norm (over both layers) merge.
    Returns (count, n_unconverged).
    """
    solutions = []
    unconverged = 0
    for init_x, init_s in inits:
        state = tap_solve(rbm, init_x, init_s, damping, tol, max_iter)
        if not state.converged:
            unconverged += 1
            continue
        joint = np.concatenate([state.m_x, state.m_s])
        if not any(np.abs(joint - known).max() < dedup_tol for known in solutions):
            solutions.append(joint)
    if unconverged:
        log.info("tap_count_solutions: %d initializations did not converge", unconverged)
    return len(solutions), unconverged


def clamped_tap_inits(dbn: DbnModel, data: np.ndarray, layer: int, seed: int = 0, limit=None):
    """(visible, hidden) mean activations of RBM `layer` along clamped chains."""
    rng = np.random.default_rng(seed)
    current = np.asarray(data, dtype=np.float64)
    for rbm in dbn.layers[: layer - 1]:
        current = _bernoulli(rng, hidden_means(rbm, current))
    rbm = dbn.layers[layer - 1]
    vis_means = current
    hid_means = hidden_means(rbm, current)
    pairs = list(zip(vis_means, hid_means))
    if limit is not None and len(pairs) > limit:
        pick = np.random.default_rng(seed + 1).choice(len(pairs), size=limit, replace=False)
        pairs = [pairs[i] for i in pick]
    return pairs


# ---------------------------------------------------------------------------
# exact enumeration oracles (toy widths)
# ---------------------------------------------------------------------------

def _all_states(n: int) -> np.ndarray:
    return ((np.arange(1 << n)[:, None] >> np.arange(n)) & 1).astype(np.float64)


def rbm_joint(rbm: RbmParams) -> np.ndarray:
    """Exact joint p(x, s) as a (2^m, 2^n) matrix (toy widths only)."""
    xs = _all_states(rbm.n_visible)
    ss = _all_states(rbm.n_hidden)
    energy = xs @ rbm.W @ ss.T + (xs @ rbm.c)[:, None] + (ss @ rbm.b)[None, :]
    w = np.exp(energy - energy.max())
    return w / w.sum()


def rbm_visible_marginal(rbm: RbmParams) -> DenseDistribution:
    return DenseDistribution(rbm.n_visible, rbm_joint(rbm).sum(axis=1))


def rbm_hidden_marginal(rbm: RbmParams) -> DenseDistribution:
    return DenseDistribution(rbm.n_hidden, rbm_joint(rbm).sum(axis=0))


def rbm_exact_loglik(rbm: RbmParams, data: np.ndarray) -> float:
    probs = rbm_visible_marginal(rbm).probs
    weights = (1 << np.arange(rbm.n_visible)).astype(np.int64)
    idx = np.asarray(data, dtype=np.int64) @ weights
    return float(np.log(probs[idx]).mean())


def rbm_exact_gradient(rbm: RbmParams, data: np.ndarray):
    """Exact log-likelihood gradient (dW, dc, db) by full enumeration."""
    data = np.asarray(data, dtype=np.float64)
    ph = hidden_means(rbm, data)
    joint = rbm_joint(rbm)
    xs = _all_states(rbm.n_visible)
    ss = _all_states(rbm.n_hidden)
    model_w = xs.T @ joint @ ss
    model_c = joint.sum(axis=1) @ xs
    model_b = joint.sum(axis=0) @ ss
    return (
        data.T @ ph / len(data) - model_w,
        data.mean(axis=0) - model_c,
        ph.mean(axis=0) - model_b,
    )


def dbn_layer_marginal(dbn: DbnModel, layer: int) -> DenseDistribution:
    """Exact marginal of hidden layer `layer` under the generative model.

    Top RBM supplies p(s^(L-1), s^L); lower layers follow by applying the
    downward conditionals. Only feasible at toy widths.
    """
    if not 1 <= layer <= dbn.depth:
        raise ValueError(f"layer {layer} out of range 1..{dbn.depth}")
    top = dbn.layers[-1]
    if layer == dbn.depth:
        return rbm_hidden_marginal(top)
    probs = rbm_joint(top).sum(axis=1)  # over layer L-1
    width = top.n_visible
    for rbm in reversed(dbn.layers[layer : dbn.depth - 1]):
        down = _downward_kernel(rbm)  # (2^hidden, 2^visible)
        probs = probs @ down
        width = rbm.n_visible
    return DenseDistribution(width, probs)


def dbn_visible_marginal(dbn: DbnModel) -> DenseDistribution:
    probs = dbn_layer_marginal(dbn, 1).probs
    down = _downward_kernel(dbn.layers[0])
    return DenseDistribution(dbn.layers[0].n_visible, probs @ down)


def _downward_kernel(rbm: RbmParams) -> np.ndarray:
    """p(x | s) for every (s, x) pair as a (2^n, 2^m) stochastic matrix."""
    ss = _all_states(rbm.n_hidden)
    xs = _all_states(rbm.n_visible)
    means = visible_means(rbm, ss)  # (2^n, m)
    log_p = xs @ np.log(means).T + (1 - xs) @ np.log1p(-means).T  # (2^m, 2^n)
    return np.exp(log_p).T
