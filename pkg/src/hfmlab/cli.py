"""Command-line entry points wiring the pipeline end to end.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
3 non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, data as data_mod, dbn as dbn_mod, hfm, rg
from .states import DenseDistribution, EmpiricalSample, bits_of

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_NONCONVERGED = 3


class ConfigError(ValueError):
    pass


# Defaults double as the schema: unknown keys are rejected, missing ones
# fall back to these values. `...` marks required entries.
_CONFIG_SCHEMA = {
    "dataset": {
        "images": ...,
        "labels": ...,
        "letters_images": None,
        "letters_labels": None,
        "downsample": 2,
        "threshold": 0.5,
        "target_size": 2000,
        "narrow_class": 2,
    },
    "dbn": {
        "hidden_sizes": [100, 60, 30, 25, 20, 15, 10],
    },
    "train": {
        "k_steps": 10,
        "learning_rate": 0.01,
        "batch_size": 64,
        "epochs": 50,
        "n_chains": 64,
    },
    "analysis": {
        "layers": None,  # default: every layer
        "peak_threshold": None,  # default: floor(n/3)
        "clamped_passes": 1,
        "equilibrium_samples": 0,
        "gibbs_steps": 10_000,
        "mc_rollouts": 200,
        "tap_max_inits": 200,
    },
    "output_dir": "out",
    "seed": 0,
}


def _merge_section(schema: dict, given: dict, path: str) -> dict:
    out = {}
    for key, value in given.items():
        if key not in schema:
            raise ConfigError(f"unknown config key: {path}{key}")
    for key, default in schema.items():
        if isinstance(default, dict):
            sub = given.get(key, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"{path}{key} must be a mapping")
            out[key] = _merge_section(default, sub, f"{path}{key}.")
        elif key in given:
            out[key] = given[key]
        elif default is ...:
            raise ConfigError(f"missing required config key: {path}{key}")
        else:
            out[key] = default
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    return _merge_section(_CONFIG_SCHEMA, raw, "")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# hfm subcommands
# ---------------------------------------------------------------------------

def cmd_hfm_probe(args) -> int:
    params = hfm.HfmParams(args.n, args.g)
    print(f"n={params.n} g={params.g} Z={params.z:.12g} xi={params.xi:.12g}")
    print(f"entropy_bits={hfm.entropy(params):.12g}")
    if args.n <= 12:
        dist = hfm.probs_vector(params)
        print(f"relevance_bits={hfm.relevance(dist):.12g}")
        print(f"prob_sum={dist.probs.sum():.12g}")
        if args.n <= 6:
            for idx, p in enumerate(dist.probs):
                word = "".join(str(b) for b in bits_of(idx, args.n))
                print(f"  {word} {p:.12g}")
    return EXIT_OK


def cmd_hfm_sample(args) -> int:
    params = hfm.HfmParams(args.n, args.g)
    sample = hfm.sample(params, args.count, args.seed)
    sample.save(args.out)
    print(f"wrote {sample.total} states to {args.out}")
    return EXIT_OK


def cmd_hfm_spectrum(args) -> int:
    spec = hfm.degeneracy_spectrum(hfm.HfmParams(args.n, args.g))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "E_bits", "W"])
        for e_bits, w, m in spec.levels:
            writer.writerow([m, f"{e_bits:.12g}", w])
    print(f"nu={spec.nu!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# rg subcommands
# ---------------------------------------------------------------------------

def _rg_start(args) -> DenseDistribution:
    if args.start == "uniform":
        return DenseDistribution.uniform(args.n)
    return DenseDistribution.random(args.n, np.random.default_rng(args.seed))


def _rg_target(args) -> float:
    if args.target_entropy is not None:
        return args.target_entropy
    if args.g is None:
        raise ConfigError("either --g or --target-entropy is required")
    if args.direction == "coarse":
        return rg.analytic_fixed_point(args.n, args.g).entropy_bits()
    return hfm.entropy(hfm.HfmParams(args.n, args.g))


def cmd_rg_iterate(args) -> int:
    target = _rg_target(args)
    config = rg.RgConfig(
        target_entropy=target,
        max_iterations=args.max_iterations,
        convergence_tolerance=args.tolerance,
    )
    p0 = _rg_start(args)
    limit, diag = rg.iterate_to_fixed_point(p0, config, args.direction)
    report = {
        "n": args.n,
        "g": args.g,
        "target_entropy": target,
        "direction": args.direction,
        "alpha_final": diag.alpha_trace[-1] if diag.alpha_trace else None,
        "iterations": diag.iterations,
        "final_distance": diag.distance_trace[-1] if diag.distance_trace else None,
        "converged": diag.converged,
        "distance_trace": diag.distance_trace,
        "fixed_point": limit.to_json(),
    }
    with open(args.out, "w") as fh:
        json.dump(report, fh)
    print(f"converged={diag.converged} iterations={diag.iterations}")
    return EXIT_OK if diag.converged else EXIT_NONCONVERGED


def cmd_rg_sweep(args) -> int:
    gs = [float(x) for x in args.g_grid.split(",") if x.strip()]
    ns = [int(x) for x in args.n_grid.split(",") if x.strip()]
    all_converged = True
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "g", "iterations", "final_distance", "converged", "tv_to_analytic"])
        for n in ns:
            for g in gs:
                star = rg.analytic_fixed_point(n, g)
                config = rg.RgConfig(
                    target_entropy=star.entropy_bits(),
                    max_iterations=args.max_iterations,
                    convergence_tolerance=args.tolerance,
                )
                p0 = DenseDistribution.random(n, np.random.default_rng(args.seed))
                limit, diag = rg.iterate_to_fixed_point(p0, config, "coarse")
                all_converged &= diag.converged
                writer.writerow(
                    [n, g, diag.iterations, diag.distance_trace[-1], diag.converged, limit.tv(star)]
                )
    return EXIT_OK if all_converged else EXIT_NONCONVERGED


def cmd_rg_matrix(args) -> int:
    matrix = rg.build_transition_matrix(args.n, args.alpha)
    stationary = rg.stationary_distribution(matrix)
    coo = matrix.rows.tocoo()
    payload = {
        "n": args.n,
        "alpha": args.alpha,
        "entries": [[int(r), int(c), float(v)] for r, c, v in zip(coo.row, coo.col, coo.data)],
        "stationary": stationary.to_json(),
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh)
    print(f"wrote {len(coo.data)} entries")
    return EXIT_OK


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _peak_tree_json(node: analysis.PeakNode, n: int) -> dict:
    return {
        "apex": "".join(str(b) for b in bits_of(node.apex, n)),
        "weight": node.weight,
        "n_states": node.members.n_distinct,
        "entropy_bits": node.members.entropy_bits(),
        "children": [_peak_tree_json(c, n) for c in node.children],
    }


def _analyze_layer(sample: EmpiricalSample, acfg: dict) -> dict:
    whole = analysis.analyze_sample(sample)
    threshold = acfg["peak_threshold"]
    tree = analysis.peak_decompose(sample, threshold=threshold)
    leaves, avg_kl = analysis.per_peak_report(tree)
    return {
        "n": sample.n,
        "sample_size": sample.total,
        "distinct_states": sample.n_distinct,
        "g_fit": whole.g_fit,
        "tau": list(whole.gauge.tau),
        "pi": [p + 1 for p in whole.gauge.pi],
        "kl_curve": whole.kl_curve,
        "kl_full": whole.kl_full,
        "kendall_d": whole.kendall_d,
        "entropy_bits": whole.entropy_bits,
        "miller_madow_bits": whole.miller_madow_bits,
        "peak_tree": _peak_tree_json(tree, sample.n),
        "peaks": [
            {
                "weight": r.weight,
                "g_fit": r.g_fit,
                "kl_full": r.kl_full,
                "kendall_d": r.kendall_d,
                "entropy_bits": r.entropy_bits,
                "miller_madow_bits": r.miller_madow_bits,
                "low_statistics": r.low_statistics,
            }
            for r in leaves
        ],
        "avg_peak_kl": avg_kl,
    }


def run_pipeline(config: dict, out_dir: Path) -> dict:
    """Breadth ladder -> DBN training -> per-layer analysis; returns the manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = config["seed"]
    manifest = {
        "config": config,
        "config_hash": hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest(),
        "seed": seed,
        "stages": {},
        "outputs": {},
    }
    dcfg, acfg, tcfg = config["dataset"], config["analysis"], config["train"]

    def record(stage, status, detail=None):
        manifest["stages"][stage] = {"status": status, **({"detail": detail} if detail else {})}

    def emit(name, path: Path):
        manifest["outputs"][name] = {"path": str(path), "sha256": _sha256(path)}

    try:
        digit_images, digit_labels = data_mod.load_idx(dcfg["images"], dcfg["labels"])
        letters = (None, None)
        if dcfg["letters_images"]:
            letters = data_mod.load_idx(dcfg["letters_images"], dcfg["letters_labels"])
        ladder = data_mod.breadth_ladder(
            digit_images,
            digit_labels,
            target_size=dcfg["target_size"],
            seed=seed,
            letter_images=letters[0],
            letter_labels=letters[1],
            narrow_class=dcfg["narrow_class"],
            downsample=dcfg["downsample"],
            threshold=dcfg["threshold"],
        )
        record("ladder", "ok")
    except Exception as exc:  # noqa: BLE001 - isolate the stage
        record("ladder", "failed", str(exc))
        _write_manifest(manifest, out_dir)
        raise

    names = ("narrow", "medium", "broad")
    csv_rows = []
    for name, dataset in zip(names, ladder):
        prov_path = out_dir / f"{name}_provenance.json"
        with open(prov_path, "w") as fh:
            json.dump(dataset.provenance, fh, default=str)
        emit(f"{name}_provenance", prov_path)

        stage = f"train_{name}"
        try:
            sizes = (dataset.images.shape[1], *config["dbn"]["hidden_sizes"])
            train_cfg = dbn_mod.TrainConfig(seed=seed, **tcfg)
            train_log = []
            model = dbn_mod.train_dbn(dataset.images.astype(np.float64), sizes, train_cfg, log_rows=train_log)
            model_path = out_dir / f"{name}_dbn.json"
            model.save(model_path)
            emit(f"{name}_model", model_path)
            log_path = out_dir / f"{name}_training.csv"
            with open(log_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["layer", "epoch", "pseudo_likelihood", "grad_norm"])
                writer.writerows(train_log)
            emit(f"{name}_training_log", log_path)
            record(stage, "ok")
        except Exception as exc:  # noqa: BLE001
            record(stage, "failed", str(exc))
            for layer in acfg["layers"] or range(1, len(config["dbn"]["hidden_sizes"]) + 1):
                record(f"analyze_{name}_layer{layer}", "skipped")
            continue

        layers = acfg["layers"] or list(range(1, model.depth + 1))
        height, width = dataset.provenance.get("image_shape", [0, 0])
        phi_spec = dbn_mod.left_right_observable(height, width)
        psi_spec = dbn_mod.top_bottom_observable(height, width)
        visible = dataset.images.astype(np.float64)
        for layer in layers:
            stage = f"analyze_{name}_layer{layer}"
            try:
                sample = dbn_mod.clamped_sample(
                    model, visible, layer, passes=acfg["clamped_passes"], seed=seed + layer
                )
                sample_path = out_dir / f"{name}_layer{layer}_clamped.txt"
                sample.save(sample_path)
                emit(f"{name}_layer{layer}_clamped", sample_path)

                report = {"dataset": name, "layer": layer, "source": "clamped"}
                report.update(_analyze_layer(sample, acfg))

                if acfg["equilibrium_samples"] > 0:
                    eq = dbn_mod.equilibrium_sample(
                        model, layer, acfg["equilibrium_samples"], acfg["gibbs_steps"], seed=seed + 31 * layer
                    )
                    eq_path = out_dir / f"{name}_layer{layer}_equilibrium.txt"
                    eq.save(eq_path)
                    emit(f"{name}_layer{layer}_equilibrium", eq_path)
                    report["equilibrium"] = _analyze_layer(eq, acfg)

                inits = dbn_mod.clamped_tap_inits(
                    model, visible, layer, seed=seed + layer, limit=acfg["tap_max_inits"]
                )
                tap_count, tap_failed = dbn_mod.tap_count_solutions(model.layers[layer - 1], inits)
                report["tap_solutions"] = tap_count
                report["tap_unconverged"] = tap_failed

                phi = dbn_mod.propagate_observable(
                    model, phi_spec, layer, visible, acfg["mc_rollouts"], seed=seed + 7 * layer
                )
                psi = dbn_mod.propagate_observable(
                    model, psi_spec, layer, visible, acfg["mc_rollouts"], seed=seed + 7 * layer
                )
                report["observables"] = {
                    "phi": [[p, e] for _, p, e in phi],
                    "psi": [[p, e] for _, p, e in psi],
                }
                if layer >= 2:
                    try:
                        slope, stderr = dbn_mod.martingale_regression(
                            model, phi_spec, layer, visible, acfg["mc_rollouts"], seed=seed + 13 * layer
                        )
                        report["martingale"] = {"slope": slope, "stderr": stderr}
                    except ValueError as exc:
                        report["martingale"] = {"error": str(exc)}

                report_path = out_dir / f"{name}_layer{layer}_report.json"
                with open(report_path, "w") as fh:
                    json.dump(report, fh)
                emit(f"{name}_layer{layer}_report", report_path)

                for prefix_n, kl in report["kl_curve"]:
                    csv_rows.append([name, layer, report["n"], "whole", prefix_n, kl])
                for i, peak in enumerate(report["peaks"]):
                    csv_rows.append([name, layer, report["n"], f"peak{i}", report["n"], peak["kl_full"]])
                record(stage, "ok")
            except Exception as exc:  # noqa: BLE001
                record(stage, "failed", str(exc))

    csv_path = out_dir / "kl_summary.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "layer", "n", "peak", "prefix_n", "kl_bits"])
        writer.writerows(csv_rows)
    emit("kl_summary", csv_path)
    _write_manifest(manifest, out_dir)
    return manifest


def _write_manifest(manifest: dict, out_dir: Path):
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)


def cmd_pipeline(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    out_dir = Path(args.out or config["output_dir"])
    manifest = run_pipeline(config, out_dir)
    failed = [s for s, v in manifest["stages"].items() if v["status"] == "failed"]
    if failed:
        print(f"failed stages: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"pipeline complete: {out_dir}/manifest.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hfmlab")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_hfm = sub.add_parser("hfm", help="hierarchical feature model utilities")
    hfm_sub = p_hfm.add_subparsers(dest="subcommand", required=True)
    p = hfm_sub.add_parser("probe")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--g", type=float, required=True)
    p.set_defaults(func=cmd_hfm_probe)
    p = hfm_sub.add_parser("sample")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--g", type=float, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_hfm_sample)
    p = hfm_sub.add_parser("spectrum")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--g", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_hfm_spectrum)

    p_rg = sub.add_parser("rg", help="renormalization transformations")
    rg_sub = p_rg.add_subparsers(dest="subcommand", required=True)
    p = rg_sub.add_parser("iterate")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--g", type=float)
    p.add_argument("--target-entropy", type=float, dest="target_entropy")
    p.add_argument("--direction", choices=["coarse", "fine"], default="coarse")
    p.add_argument("--start", choices=["random", "uniform"], default="random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rg_iterate)
    p = rg_sub.add_parser("sweep")
    p.add_argument("--n-grid", required=True, help="comma-separated widths")
    p.add_argument("--g-grid", required=True, help="comma-separated couplings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rg_sweep)
    p = rg_sub.add_parser("matrix")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rg_matrix)

    p = sub.add_parser("pipeline", help="full empirical analysis pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1, help="reserved; stages currently run sequentially")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except rg.NoRootError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
