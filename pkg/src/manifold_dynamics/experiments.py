"""Experiment drivers behind ``manifold-dynamics run``.

Each driver takes a validated :class:`ExperimentConfig` and an output
directory, writes its artifacts there and returns a JSON-able summary.
"""
from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, artifacts, dataio, dynamics, scaling, stragglers
from .config import ExperimentConfig
from .runner import RunSpec, run_many, run_single

DEFAULT_OPTIMIZERS = [
    {"name": "gd", "variant": "gd", "learning_rate": 0.2},
    {"name": "adam-0.001", "variant": "adam", "learning_rate": 0.001},
    {"name": "momentum-0.5-0.5", "variant": "gd_momentum", "momentum": 0.5, "learning_rate": 0.5},
    {"name": "weight-decay-0.01", "variant": "gd_weight_decay", "weight_decay": 0.01,
     "learning_rate": 0.2},
]
DEFAULT_ERROR_GRID = [0.30, 0.20, 0.15, 0.12, 0.10, 0.08, 0.06, 0.05, 0.04, 0.03]
RETRAIN_SEED_OFFSET = 1000
LABEL_SEED_OFFSET = 5000


# ----------------------------------------------------------------------------
# data


def load_training_data(cfg: ExperimentConfig, P: int | None = None, chunk: int | None = None):
    d = cfg.dataset
    P = d.P if P is None else P
    chunk = d.chunk if chunk is None else chunk
    if d.cache and P == d.P and chunk == d.chunk and Path(d.cache).exists():
        return dataio.load_dataset(d.cache)
    raw = dataio.load_source(d.source, d.root, "train")
    ds = dataio.standardize(dataio.subsample(raw, P, chunk))
    if d.cache and P == d.P and chunk == d.chunk:
        dataio.save_dataset(ds, d.cache)
    return ds


def load_test_data(cfg: ExperimentConfig):
    if not cfg.dataset.test:
        return None
    return dataio.standardize(dataio.load_source(cfg.dataset.source, cfg.dataset.root, "test"))


# ----------------------------------------------------------------------------
# per-run artifacts


def inversion_row(report: dynamics.InversionReport, min_prominence: float) -> dict:
    return {
        "t_star_rplus": report.t_star_rplus, "t_star_rminus": report.t_star_rminus,
        "t_star_d": report.t_star_d, "phi": report.phi, "n_stragglers": len(report.stragglers),
        "prom_rplus": report.prominence["r_plus"], "prom_rminus": report.prominence["r_minus"],
        "prom_d": report.prominence["d"],
        "converged": int(report.all_qualified(min_prominence)),
    }


def write_run(out: Path, name: str, log: dynamics.TrajectoryLog, spec: RunSpec, seed: int,
              cfg: ExperimentConfig, extra: dict | None = None) -> dynamics.InversionReport:
    run_dir = out / "runs" / name
    report = dynamics.detect_inversion(log, spec.min_prominence)
    artifacts.write_trajectory_csv(log, run_dir / "trajectory.csv")
    artifacts.write_misclassified(log, run_dir / "misclassified.txt")
    artifacts.write_index_list(
        report.stragglers,
        run_dir / f"stragglers_{log.meta.get('data_digest', 'data')}_tstar.txt",
    )
    manifest = {
        "seed": seed, "config_digest": cfg.digest(), "experiment": cfg.experiment,
        "dataset": {"source": cfg.dataset.source, "P": log.n_train,
                    "digest": log.meta.get("data_digest")},
        "architecture": spec.to_dict(), "stop_rule": {
            "max_epochs": spec.max_epochs, "zero_error_patience": spec.zero_error_patience},
        "epochs_run": int(log.epochs[-1]), "code_version": __version__,
        "inversion": {**inversion_row(report, spec.min_prominence),
                      "eps_at": report.eps_at, "t_star_choice": "r_plus"},
        **(extra or {}),
    }
    artifacts.write_json(manifest, run_dir / "manifest.json")
    return report


def _runs(cfg, out, ds, spec, seeds, prefix, test=None, threads=1, extra=None):
    results = run_many(ds, spec, seeds, test, threads)
    rows, logs = [], []
    for seed, (_, log) in zip(seeds, results):
        rep = write_run(out, f"{prefix}seed{seed}", log, spec, seed, cfg, extra)
        rows.append({"seed": seed, **(extra or {}), **inversion_row(rep, spec.min_prominence)})
        logs.append(log)
    return rows, logs


def phi_summary(rows: list[dict]) -> dict:
    ok = [r["phi"] for r in rows if r["converged"]]
    return {
        "phi_mean": float(np.mean(ok)) if ok else math.nan,
        "phi_std": float(np.std(ok, ddof=1)) if len(ok) > 1 else math.nan,
        "n_runs": len(rows), "n_unconverged": len(rows) - len(ok),
        "t_star_mean": float(np.mean([r["t_star_rplus"] for r in rows])),
    }


def smoothed_nondecreasing_fraction(series: np.ndarray, window: int = 5) -> float:
    sm = np.convolve(series, np.ones(window) / window, mode="valid")
    return float(np.mean(np.diff(sm) >= 0))


# ----------------------------------------------------------------------------
# drivers


def exp_trajectory(cfg, out, threads=1):
    ds, test = load_training_data(cfg), load_test_data(cfg)
    spec = cfg.run_spec()
    rows, logs = _runs(cfg, out, ds, spec, cfg.seeds, "", test, threads)
    artifacts.write_rows_csv(rows, out / "inversion.csv")
    summary = phi_summary(rows)
    off = stragglers.class_center_offsets(ds, dynamics.detect_inversion(logs[0]).stragglers)
    summary["class_center_offsets"] = {
        "straggler_mean": off.straggler_mean, "rest_mean": off.rest_mean, "p_value": off.p_value}
    return summary


def exp_optimizer_sweep(cfg, out, threads=1):
    ds = load_training_data(cfg)
    rows, summary = [], {}
    for opt in cfg.params.get("optimizers", DEFAULT_OPTIMIZERS):
        opt = dict(opt)
        name = opt.pop("name", opt.get("variant", "opt"))
        spec = cfg.run_spec(optimizer=cfg.optimizer_config(opt))
        r, logs = _runs(cfg, out, ds, spec, cfg.seeds, f"{name}/", None, threads, {"optimizer": name})
        for seed, log in zip(cfg.seeds, logs):
            curve = dynamics.reparameterize(log)
            artifacts.write_rows_csv(
                [{"eps_tr": float(e), "epoch": int(t), "r_plus": float(a), "r_minus": float(b),
                  "d": float(c)} for e, t, a, b, c in
                 zip(curve.eps_tr, curve.epoch, curve.r_plus, curve.r_minus, curve.d)],
                out / "runs" / f"{name}/seed{seed}" / "curve_vs_error.csv")
        rows += r
        summary[name] = phi_summary(r)
    artifacts.write_rows_csv(rows, out / "optimizer_sweep.csv")
    return summary


def exp_subsample_sweep(cfg, out, threads=1):
    rows, summary = [], {}
    for chunk in cfg.params.get("chunks", [0, 1, 2]):
        ds = load_training_data(cfg, chunk=int(chunk))
        r, _ = _runs(cfg, out, ds, cfg.run_spec(), cfg.seeds, f"chunk{chunk}/", None, threads,
                     {"chunk": int(chunk)})
        rows += r
        summary[f"chunk{chunk}"] = phi_summary(r)
    artifacts.write_rows_csv(rows, out / "subsample_sweep.csv")
    return summary


def exp_random_labels(cfg, out, threads=1):
    ds = load_training_data(cfg)
    spec = cfg.run_spec()
    window = int(cfg.params.get("smoothing_window", 5))
    rows, d_curves = [], []
    for seed in cfg.seeds:
        shuffled = dataio.randomize_labels(ds, seed + LABEL_SEED_OFFSET)
        _, log = run_single(shuffled, spec, seed)
        rep = write_run(out, f"seed{seed}", log, spec, seed, cfg, {"label_seed": seed + LABEL_SEED_OFFSET})
        d_curves.append(log.d)
        rows.append({"seed": seed, **inversion_row(rep, spec.min_prominence),
                     "d_nondecreasing": smoothed_nondecreasing_fraction(log.d, window),
                     "r_plus_rel_band": float(np.max(np.abs(log.r_plus / log.r_plus[0] - 1))),
                     "r_minus_rel_band": float(np.max(np.abs(log.r_minus / log.r_minus[0] - 1)))})
    artifacts.write_rows_csv(rows, out / "random_labels.csv")
    n = min(len(c) for c in d_curves)
    mean_d = np.mean([c[:n] for c in d_curves], axis=0)
    return {"mean_curve_d_nondecreasing": smoothed_nondecreasing_fraction(mean_d, window),
            "runs_with_radius_inversion": int(sum(
                r["prom_rplus"] >= spec.min_prominence or r["prom_rminus"] >= spec.min_prominence
                for r in rows))}


def _prune_grid(cfg):
    grid = cfg.params.get("error_grid", ["t*", 0.2, 0.15, 0.12, 0.08, 0.06, 0.04])
    return [g if isinstance(g, str) else float(g) for g in grid]


def exp_prune_retrain(cfg, out, threads=1):
    ds, test = load_training_data(cfg), load_test_data(cfg)
    spec = cfg.run_spec()
    tests = stragglers.noisy_test_sets(test, cfg.dataset.noise_sigmas, cfg.run.seed_root) if test else {}
    base = run_many(ds, spec, cfg.seeds, None, threads)
    base_logs = [log for _, log in base]
    baseline = {}
    for seed, (model, log) in zip(cfg.seeds, base):
        write_run(out, f"base/seed{seed}", log, spec, seed, cfg)
        for s, ts in tests.items():
            baseline.setdefault(s, []).append(dynamics.evaluate_error(model, ts))
    summary = {"baseline": {"eps_test": {str(s): [float(np.mean(v)), float(np.std(v, ddof=1))
                                                  if len(v) > 1 else math.nan]
                                         for s, v in baseline.items()}}}
    retrain_seeds = [s + RETRAIN_SEED_OFFSET for s in cfg.seeds]
    rows = []
    for mode in cfg.params.get("modes", ["straggler", "random"]):
        points = stragglers.prune_retrain(ds, spec, base_logs, _prune_grid(cfg), mode, retrain_seeds,
                                          tests, rng_seed=cfg.run.seed_root)
        for pt in points:
            key = f"{mode}@{pt.eps_tr_target}"
            summary[key] = {
                "removed_mean": float(np.mean(pt.removed_count)),
                "runs_with_rplus_inversion": int(sum(r.qualified("r_plus") for r in pt.reports)),
                "eps_test": {str(s): [pt.mean_test(s), pt.std_test(s) if len(pt.eps_test[s]) > 1
                                      else math.nan] for s in pt.eps_test},
                **{k: v for k, v in zip(("r_plus", "r_minus", "d"), (
                    pt.metrics.r_plus, pt.metrics.r_minus, pt.metrics.d))},
            }
            for k, seed in enumerate(retrain_seeds):
                row = {"mode": mode, "target": str(pt.eps_tr_target), "seed": seed,
                       "removed": pt.removed_count[k],
                       "r_plus_final": pt.final_metrics[k].r_plus,
                       "r_minus_final": pt.final_metrics[k].r_minus, "d_final": pt.final_metrics[k].d,
                       "rplus_inversion": int(pt.reports[k].qualified("r_plus"))}
                for s in pt.eps_test:
                    row[f"eps_test_sigma{s}"] = pt.eps_test[s][k]
                rows.append(row)
    artifacts.write_rows_csv(rows, out / "prune_retrain.csv")
    summary["crossover_sigma"] = _crossover(summary, cfg.dataset.noise_sigmas)
    return summary


def _crossover(summary: dict, sigmas) -> float | None:
    """Smallest noise level at which removing S(t*) lowers the mean test error below the unpruned runs."""
    key = "straggler@t*"
    if key not in summary:
        return None
    for s in sorted(float(x) for x in sigmas):
        pruned = summary[key]["eps_test"].get(str(s))
        base = summary["baseline"]["eps_test"].get(str(s))
        if pruned and base and pruned[0] < base[0]:
            return s
    return None


def exp_noisy_test(cfg, out, threads=1):
    if cfg.dataset.noise_sigmas == [0.0]:
        cfg = replace(cfg, dataset=replace(cfg.dataset, noise_sigmas=[0.0, 0.5, 0.75, 1.0, 1.2, 1.5]))
    return exp_prune_retrain(cfg, out, threads)


def _z_row(label: str, point: stragglers.ZPoint) -> dict:
    st = point.stats
    return {"eps_tr": label, "mean_size": st.mean_size, "mean_m": st.mean_m, "sigma_m": st.sigma_m,
            "mean_null": st.mean_null, "sigma_null": st.sigma_null,
            "analytic_null": st.analytic_null_mean, "z": point.z}


def exp_zscore(cfg, out, threads=1):
    ds = load_training_data(cfg)
    spec = cfg.run_spec()
    n_pairs = int(cfg.params.get("n_pairs", max(2, cfg.run.seeds // 2)))
    seeds = list(range(cfg.run.seed_root, cfg.run.seed_root + 2 * n_pairs))
    _, logs = _runs(cfg, out, ds, spec, seeds, "", None, threads)
    grid = [float(g) for g in cfg.params.get("error_grid", DEFAULT_ERROR_GRID)]
    reachable = [g for g in grid if all(np.any(l.eps_tr <= g) for l in logs)]
    n_null = int(cfg.params.get("n_null", 10_000))
    curve = stragglers.zscore_curve(logs, reachable, n_null, seed=cfg.run.seed_root)
    # the inversion point placed on the error axis: eps = mean phi over the runs
    phi_bar = float(np.mean([dynamics.detect_inversion(l, spec.min_prominence).phi for l in logs]))
    at_phi = None
    if np.isfinite(phi_bar) and all(np.any(l.eps_tr <= phi_bar) for l in logs):
        at_phi = stragglers.ZPoint(phi_bar, stragglers.overlap_from_logs(logs, phi_bar, n_null,
                                                                         cfg.run.seed_root))
    rows = [_z_row(str(p.eps_tr), p) for p in curve]
    if at_phi is not None:
        rows.insert(1, _z_row(f"phi={phi_bar:.6g}", at_phi))
    artifacts.write_rows_csv(rows, out / "zscore.csv")
    return {"z_tstar": curve[0].z, "z_phi": at_phi.z if at_phi else math.nan, "phi_mean": phi_bar,
            "z_max_grid": max((p.z for p in curve[1:]), default=math.nan),
            "skipped_grid": [g for g in grid if g not in reachable]}


def exp_phi_scaling(cfg, out, threads=1):
    raw = dataio.load_source(cfg.dataset.source, cfg.dataset.root, "train")
    sizes = [int(s) for s in cfg.params.get("sizes", [4096, 8192, 16384, 32768])]
    points = scaling.phi_vs_size(raw, sizes, cfg.run_spec(), cfg.seeds)
    artifacts.write_rows_csv(
        [{"P": p.P, "phi": p.phi, "sigma": p.sigma, "n": len(p.samples), "excluded": p.excluded}
         for p in points], out / "phi_scaling.csv")
    usable = [p.as_tuple() for p in points if p.samples]
    try:
        fit = scaling.fit_phi(usable, int(cfg.params.get("restarts", 10)))
    except (ValueError, scaling.FitError) as exc:
        return {"fit_error": str(exc), "sizes_with_data": [int(p[0]) for p in usable]}
    report = scaling.fit_report(fit, usable)
    artifacts.write_json(report, out / "fit_report.json")
    return report


def exp_arch_sweep(cfg, out, threads=1):
    ds = load_training_data(cfg)
    rows, summary = [], {}
    lr = cfg.params.get("learning_rate", 0.1)
    for depth in cfg.params.get("depths", [2, 4, 8]):
        for width in cfg.params.get("widths", [10, 20, 40, 80]):
            spec = cfg.run_spec(hidden=(int(width),) * (int(depth) - 1),
                                optimizer=cfg.optimizer_config({"learning_rate": lr}))
            tag = f"L{depth}_H{width}"
            r, _ = _runs(cfg, out, ds, spec, cfg.seeds, f"{tag}/", None, threads,
                         {"depth": int(depth), "width": int(width)})
            rows += r
            summary[tag] = phi_summary(r)
    artifacts.write_rows_csv(rows, out / "arch_sweep.csv")
    return summary


def exp_activation_sweep(cfg, out, threads=1):
    ds = load_training_data(cfg)
    rows, summary = [], {}
    for act in cfg.params.get("activations", ["tanh", "relu", "leaky_relu", "silu", "identity"]):
        spec = cfg.run_spec(activation=act)
        r, _ = _runs(cfg, out, ds, spec, cfg.seeds, f"{act}/", None, threads, {"activation": act})
        rows += r
        summary[act] = phi_summary(r)
    artifacts.write_rows_csv(rows, out / "activation_sweep.csv")
    return summary


DRIVERS = {
    "trajectory": exp_trajectory,
    "optimizer-sweep": exp_optimizer_sweep,
    "subsample-sweep": exp_subsample_sweep,
    "random-labels": exp_random_labels,
    "prune-retrain": exp_prune_retrain,
    "noisy-test": exp_noisy_test,
    "zscore": exp_zscore,
    "phi-scaling": exp_phi_scaling,
    "arch-sweep": exp_arch_sweep,
    "activation-sweep": exp_activation_sweep,
}
