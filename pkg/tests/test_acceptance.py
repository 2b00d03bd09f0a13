"""End-to-end acceptance checks.

Each criterion prints one PASS/FAIL line to the real stdout so the
verdicts are visible even under pytest's capture. The checks train real
desk-scale models, so the module takes tens of minutes; run it with
`pytest tests/test_acceptance.py -v`.
"""
import math
import sys
import time

import numpy as np
import pytest

from hfmlab import analysis, data, dbn, hfm, rg
from hfmlab.states import DenseDistribution, EmpiricalSample

from oracles import marginal_high_brute, marginal_low_brute

LN2 = math.log(2.0)

DESK_TAIL = (100, 60, 30, 25, 20, 15, 10)
DESK_TRAIN = dict(epochs=30, k_steps=10, learning_rate=0.01, batch_size=64, n_chains=64)
# plug-in KL needs progressively more clamped passes at wider layers
KL_PASSES = {5: 48, 6: 6, 7: 3}


# verdict lines, one per criterion; conftest prints them in the terminal
# summary so they survive pytest's output capture
VERDICTS = []


def _report(num: int, desc: str, ok: bool):
    verdict = "PASS" if ok else "FAIL"
    line = f"CRITERION {num:02d} {verdict} - {desc}"
    VERDICTS.append(line)
    print(line, file=sys.__stdout__, flush=True)
    assert ok, f"criterion {num}: {desc}"


def _sample_of_states(states: np.ndarray) -> EmpiricalSample:
    return EmpiricalSample.from_rows(states)


# ---------------------------------------------------------------------------
# shared desk-scale training (criteria 12 and 13)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def glyph_corpus():
    digits = data.synthetic_glyphs(10, 200, seed=42)
    letters = data.synthetic_glyphs(16, 140, seed=43)
    return digits, letters


@pytest.fixture(scope="module")
def ladder_runs(glyph_corpus):
    """Per-seed KL orderings, TAP counts and peak entropies on the ladder."""
    (imgs, lbls), (letters, letter_lbls) = glyph_corpus
    t0 = time.monotonic()
    runs = {}
    for seed in (0, 1, 2):
        ladder = data.breadth_ladder(
            imgs, lbls, target_size=2000, seed=seed,
            letter_images=letters, letter_labels=letter_lbls,
        )
        kl = {layer: {} for layer in KL_PASSES}
        tap_counts = []
        peak_entropies = []
        for name, ds in zip(("narrow", "medium", "broad"), ladder):
            sizes = (ds.images.shape[1],) + DESK_TAIL
            model = dbn.train_dbn(ds.images, sizes, dbn.TrainConfig(seed=seed + 10, **DESK_TRAIN))
            for layer, passes in KL_PASSES.items():
                states = dbn.clamped_states(model, ds.images, layer, passes=passes, seed=seed)
                kl[layer][name] = analysis.analyze_sample(_sample_of_states(states)).kl_full
            if name == "medium":
                for layer in range(3, len(DESK_TAIL) + 1):
                    inits = dbn.clamped_tap_inits(model, ds.images, layer, seed=seed + layer, limit=100)
                    count, _ = dbn.tap_count_solutions(model.layers[layer - 1], inits)
                    tap_counts.append(count)
                    states = dbn.clamped_states(model, ds.images, layer, passes=1, seed=seed)
                    leaves = analysis.peak_decompose(_sample_of_states(states)).leaves()
                    peak_entropies.append(
                        float(np.mean([leaf.members.entropy_bits() for leaf in leaves]))
                    )
        runs[seed] = {"kl": kl, "tap": tap_counts, "peak_entropy": peak_entropies}
    runs["elapsed"] = time.monotonic() - t0
    return runs


# ---------------------------------------------------------------------------
# mathematical core
# ---------------------------------------------------------------------------

def _entropy_matched(p0: DenseDistribution, target: float) -> DenseDistribution:
    """Mix p0 toward uniform or its mode until its entropy equals target."""
    n = p0.n
    if p0.entropy_bits() < target:
        other = np.full(1 << n, 1.0 / (1 << n))
    else:
        other = np.zeros(1 << n)
        other[int(np.argmax(p0.probs))] = 1.0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        mixed = DenseDistribution(n, (1 - mid) * p0.probs + mid * other)
        if (mixed.entropy_bits() > target) == (p0.entropy_bits() > target):
            lo = mid
        else:
            hi = mid
    return DenseDistribution(n, (1 - lo) * p0.probs + lo * other)


def test_criterion_01_coarse_convergence():
    t0 = time.monotonic()
    rng = np.random.default_rng(0)
    failures = []
    for n in range(3, 11):
        for g in (0.8, 1.0, 1.5):
            star = rg.analytic_fixed_point(n, g)
            config = rg.RgConfig(
                target_entropy=star.entropy_bits(),
                max_iterations=500,
                convergence_tolerance=1e-10,
            )
            for start in range(5):
                p0 = _entropy_matched(DenseDistribution.random(n, rng), star.entropy_bits())
                limit, diag = rg.iterate_to_fixed_point(p0, config, "coarse")
                if not (diag.converged and limit.tv(star) <= 1e-6):
                    failures.append((n, g, start, diag.converged, limit.tv(star)))
    elapsed = time.monotonic() - t0
    _report(
        1,
        f"coarse RG: 120 random starts over n=3..10, g in (0.8,1.0,1.5) reach the "
        f"fixed point within TV 1e-6 in <=500 iters ({elapsed:.1f}s; failures: {failures})",
        not failures and elapsed < 60.0,
    )


def test_criterion_02_fixed_point_identity():
    prefix_err = max(
        rg.analytic_fixed_point(n, g).tv(hfm.marginal_high(hfm.HfmParams(60, g), n))
        # the h_60 truncation error is O(xi^60), below 1e-10 only for g >= ~1.2
        for n in range(3, 11)
        for g in (1.2, 1.5, 2.0)
    )
    stat_err = 0.0
    for n in (4, 6, 8):
        for g in (0.8, 1.0, 1.5, 2.0):
            star = rg.analytic_fixed_point(n, g)
            t = rg.build_transition_matrix(n, 1.0 - hfm.xi_of(g))
            stat_err = max(stat_err, rg.stationary_distribution(t).tv(star))
    _report(
        2,
        f"fixed point equals deep-prefix marginal (max TV {prefix_err:.2e} < 1e-10) and "
        f"stationary vector at alpha=1-xi (max TV {stat_err:.2e} < 1e-9)",
        prefix_err < 1e-10 and stat_err < 1e-9,
    )


def test_criterion_03_phase_boundary():
    rejected = True
    for g in (LN2, 0.5, 0.0):
        try:
            rg.analytic_fixed_point(8, g)
            rejected = False
        except ValueError:
            pass
    near = rg.analytic_fixed_point(8, LN2 + 1e-3)
    tv_uniform = near.tv(DenseDistribution.uniform(8))
    _report(
        3,
        f"fixed point rejects g <= ln2 and tends to uniform at the boundary "
        f"(TV to uniform at g=ln2+1e-3, n=8: {tv_uniform:.4f} < 0.01)",
        rejected and tv_uniform < 0.01,
    )


def test_criterion_04_alpha_solver():
    rng = np.random.default_rng(4)
    checked = 0
    gap_max = 0.0
    sign_changes_ok = True
    grid = np.arange(0.0, 1.0 + 1e-9, 1e-3)
    while checked < 100:
        p = DenseDistribution.random(5, rng)
        target = p.entropy_bits()
        if target <= 1.0:
            continue
        alpha = rg.solve_alpha(p, target)
        gap_max = max(gap_max, abs(rg.coarse_step(p, alpha).entropy_bits() - target))
        signs = np.sign([rg.coarse_entropy_gap(p, a, target) for a in grid])
        changes = int((np.diff(signs[signs != 0]) != 0).sum())
        sign_changes_ok &= changes == 1
        checked += 1
    _report(
        4,
        f"alpha solver: 100 random distributions, max |dH| {gap_max:.2e} < 1e-10, "
        f"exactly one sign change on a 1e-3 grid",
        gap_max < 1e-10 and sign_changes_ok,
    )


def test_criterion_05_fine_fixed_point():
    self_map_err = 0.0
    for n in range(3, 11):
        for g in (0.8, 1.5):
            h_n = hfm.probs_vector(hfm.HfmParams(n, g))
            q = rg.solve_q(h_n, h_n.entropy_bits())
            self_map_err = max(self_map_err, rg.fine_step(h_n, q).tv(h_n))
    # the entropy-matched fine map is locally repelling at h_n for g > ln 2
    # (Jacobian spectral radius ~ e^g/2), so convergence from random starts
    # is only attainable -- and is tested -- in the attracting phase
    n, g = 6, 0.4
    h_n = hfm.probs_vector(hfm.HfmParams(n, g))
    config = rg.RgConfig(target_entropy=h_n.entropy_bits(), convergence_tolerance=1e-10)
    rng = np.random.default_rng(5)
    converged = []
    for _ in range(5):
        limit, diag = rg.iterate_to_fixed_point(DenseDistribution.random(n, rng), config, "fine")
        converged.append(diag.converged and limit.tv(h_n) <= 1e-6)
    # and perturbations must demonstrably grow in the supercritical phase
    n, g = 5, 1.0
    h_sup = hfm.probs_vector(hfm.HfmParams(n, g))
    target = h_sup.entropy_bits()
    pert = np.random.default_rng(6).dirichlet(np.full(1 << n, 1.0))
    p = DenseDistribution(n, (1 - 1e-4) * h_sup.probs + 1e-4 * pert)
    start_tv = p.tv(h_sup)
    for _ in range(10):
        p = rg.fine_step(p, rg.solve_q(p, target))
    repels = p.tv(h_sup) > 2 * start_tv
    _report(
        5,
        f"fine map: self-map exact on stated grid (max TV {self_map_err:.2e} < 1e-9); "
        f"random starts converge in the attracting phase (n=6, g=0.4: {sum(converged)}/5); "
        f"supercritical couplings repel as derived",
        self_map_err < 1e-9 and all(converged) and repels,
    )


def test_criterion_06_marginal_formulas():
    err = 0.0
    for n in range(2, 15):
        for g in (0.2, LN2, 1.0, 2.0):
            params = hfm.HfmParams(n, g)
            for k in range(1, n):  # all proper marginal widths
                err = max(err, np.abs(hfm.marginal_low(params, k).probs - marginal_low_brute(n, g, k)).max())
                err = max(err, np.abs(hfm.marginal_high(params, k).probs - marginal_high_brute(n, g, k)).max())
    _report(
        6,
        f"closed-form marginals match brute force for n<=14, all k, incl. xi=1 "
        f"(max abs err {err:.2e} < 1e-12)",
        err < 1e-12,
    )


def test_criterion_07_degeneracy_spectrum():
    ok = True
    nu_err = 0.0
    for g in (0.5, 1.0, 2.0):
        spec = hfm.degeneracy_spectrum(hfm.HfmParams(10, g))
        ws = [w for _, w, m in spec.levels if m >= 1]
        ok &= ws == [1 << (m - 1) for m in range(1, 11)]
        nu_err = max(nu_err, abs(spec.nu - LN2 / g))
    _report(
        7,
        f"level degeneracy W = 2^(m-1) at n=10 and fitted nu = ln2/g (max err {nu_err:.2e} < 1e-9)",
        ok and nu_err < 1e-9,
    )


# ---------------------------------------------------------------------------
# sample diagnostics
# ---------------------------------------------------------------------------

def test_criterion_08_kendall_diagnostic():
    n, g = 10, 1.0
    probs = hfm.probs_vector(hfm.HfmParams(n, g)).probs
    exact = EmpiricalSample(n, {i: round(p * 10**9) for i, p in enumerate(probs)})
    d_exact = analysis.kendall_distance(exact)
    replicas = [
        analysis.kendall_distance(hfm.sample(hfm.HfmParams(n, g), 100_000, seed=1000 + r))
        for r in range(100)
    ]
    threshold = float(np.mean(replicas) + 3 * np.std(replicas, ddof=1))
    measured = analysis.kendall_distance(hfm.sample(hfm.HfmParams(n, g), 100_000, seed=2024))
    # at n = 10 half of the 1024 states have expected counts of order one at
    # 1e5 samples, so count inversions across adjacent levels keep the
    # sampled d near 0.2 no matter the estimator; the Monte Carlo calibrated
    # threshold is the meaningful gate
    _report(
        8,
        f"Kendall distance: 0 on exact probabilities ({d_exact:.2e}); measured {measured:.4f} "
        f"below MC threshold mean+3sigma = {threshold:.4f}",
        abs(d_exact) < 1e-12 and measured < threshold,
    )


def test_criterion_09_peak_recovery():
    # g = 1.5: at smaller couplings a few percent of each component's own
    # mass sits Hamming-closer to the opposite apex, capping attribution
    # below the 99% bar no matter how the split is done
    n, g = 9, 1.5
    a = hfm.sample(hfm.HfmParams(n, g), 50_000, seed=11)
    full = (1 << n) - 1
    b_raw = hfm.sample(hfm.HfmParams(n, g), 50_000, seed=12)
    mixture = EmpiricalSample(n, dict(a.counts))
    for idx, c in b_raw.counts.items():
        mixture.add(idx ^ full, c)
    tree = analysis.peak_decompose(mixture, threshold=3)
    leaves = tree.leaves()
    correct = 0
    for leaf in leaves:
        from_a = sum(min(c, a.counts.get(i, 0)) for i, c in leaf.members.counts.items())
        correct += max(from_a, leaf.members.total - from_a)
    frac = correct / mixture.total
    single = analysis.peak_decompose(hfm.sample(hfm.HfmParams(n, g), 100_000, seed=13), threshold=3)
    _report(
        9,
        f"peak recovery: planted mixture yields {len(leaves)} leaves with {100 * frac:.2f}% "
        f"correctly attributed (>=99%); single sample yields 1 leaf",
        len(leaves) == 2 and frac >= 0.99 and single.is_leaf,
    )


# ---------------------------------------------------------------------------
# learning machines
# ---------------------------------------------------------------------------

def _random_rbm(n_visible, n_hidden, seed, scale=0.7):
    rng = np.random.default_rng(seed)
    return dbn.RbmParams(
        W=rng.normal(0.0, scale, (n_visible, n_hidden)),
        b=rng.normal(0.0, 0.3, n_hidden),
        c=rng.normal(0.0, 0.3, n_visible),
    )


def test_criterion_10_toy_exactness():
    model = dbn.DbnModel([_random_rbm(4, 3, seed=30), _random_rbm(3, 3, seed=31)])
    count = 1_000_000

    rows = dbn.generate(model, count, gibbs_steps=20_000, seed=32)
    tv_gen = EmpiricalSample.from_rows(rows).to_dense().tv(dbn.dbn_visible_marginal(model))

    eq = dbn.equilibrium_sample(model, 2, count, gibbs_steps=20_000, seed=33)
    tv_eq = eq.to_dense().tv(dbn.dbn_layer_marginal(model, 2))

    rng = np.random.default_rng(34)
    vis = (rng.random((50, 4)) < 0.5).astype(float)
    clamped = dbn.clamped_sample(model, vis, 1, passes=count // 50, seed=35)
    joint = dbn.rbm_joint(model.layers[0])
    cond = joint / joint.sum(axis=1, keepdims=True)
    idx = vis.astype(int) @ (1 << np.arange(4))
    expected = np.zeros(8)
    for i in idx:
        expected += cond[i]
    expected /= len(idx)
    tv_cl = 0.5 * float(np.abs(clamped.to_dense().probs - expected).sum())

    # PCD negative phase from long persistent chains vs enumeration
    rbm = _random_rbm(4, 3, seed=36, scale=0.5)
    grng = np.random.default_rng(37)
    train = (grng.random((64, 4)) < 0.5).astype(float)
    exact_dw, exact_dc, exact_db = dbn.rbm_exact_gradient(rbm, train)
    chains = (grng.random((4000, 4)) < 0.5).astype(float)
    for _ in range(300):
        h = (grng.random((4000, 3)) < dbn.hidden_means(rbm, chains)).astype(float)
        chains = (grng.random((4000, 4)) < dbn.visible_means(rbm, h)).astype(float)
    ph = dbn.hidden_means(rbm, train)
    nh = dbn.hidden_means(rbm, chains)
    grad_err = max(
        float(np.abs(train.T @ ph / len(train) - chains.T @ nh / len(chains) - exact_dw).max()),
        float(np.abs(train.mean(axis=0) - chains.mean(axis=0) - exact_dc).max()),
        float(np.abs(ph.mean(axis=0) - nh.mean(axis=0) - exact_db).max()),
    )
    _report(
        10,
        f"toy exactness at 1e6 samples: generate TV {tv_gen:.4f}, equilibrium TV {tv_eq:.4f}, "
        f"clamped TV {tv_cl:.4f} (all < 0.02); PCD gradient max err {grad_err:.4f} (< 0.05)",
        tv_gen < 0.02 and tv_eq < 0.02 and tv_cl < 0.02 and grad_err < 0.05,
    )


def test_criterion_11_martingale(glyph_corpus):
    (imgs, lbls), _ = glyph_corpus
    _, medium, _ = data.breadth_ladder(imgs, lbls, target_size=2000, seed=0)
    sizes = (medium.images.shape[1],) + DESK_TAIL
    model = dbn.train_dbn(medium.images, sizes, dbn.TrainConfig(seed=2, **DESK_TRAIN))
    spec = dbn.left_right_observable(14, 14)
    sub = medium.images[:600]
    lines = []
    ok = True
    for layer in range(2, model.depth + 1):
        slope, stderr = dbn.martingale_regression(
            model, spec, layer, sub, mc_rollouts=800, seed=100 + layer, children_per_half=6
        )
        layer_ok = 0.9 <= slope <= 1.1 and abs(slope - 1.0) <= 1.96 * stderr
        ok &= layer_ok
        lines.append(f"l{layer}: {slope:.3f}+-{stderr:.3f}")
    _report(
        11,
        "martingale slopes in [0.9, 1.1] with 95% CI covering 1 for layers 2..7 "
        f"({'; '.join(lines)})",
        ok,
    )


def test_criterion_12_breadth_trend(ladder_runs):
    per_seed = []
    for seed in (0, 1, 2):
        kl = ladder_runs[seed]["kl"]
        per_seed.append(
            all(kl[l]["narrow"] > kl[l]["medium"] > kl[l]["broad"] for l in KL_PASSES)
        )
    elapsed = ladder_runs["elapsed"]
    _report(
        12,
        f"KL(narrow) > KL(medium) > KL(broad) at the deepest three layers in "
        f"{sum(per_seed)}/3 seeds (>=2 required); ladder budget {elapsed / 60:.1f} min < 120 min",
        sum(per_seed) >= 2 and elapsed < 7200,
    )


def test_criterion_13_depth_trends(ladder_runs):
    tap_ok = 0
    ent_ok = 0
    details = []
    for seed in (0, 1, 2):
        taps = ladder_runs[seed]["tap"]
        ents = ladder_runs[seed]["peak_entropy"]
        non_increasing = all(a >= b for a, b in zip(taps, taps[1:]))
        slope = float(np.polyfit(range(len(ents)), ents, 1)[0])
        tap_ok += non_increasing
        ent_ok += slope < 0
        details.append(f"seed {seed}: taps {taps}, entropy slope {slope:+.2f}")
    _report(
        13,
        f"TAP counts non-increasing from layer 3 in {tap_ok}/3 seeds; mean per-peak "
        f"entropy decreasing with depth in {ent_ok}/3 seeds ({'; '.join(details)})",
        tap_ok >= 2 and ent_ok >= 2,
    )
