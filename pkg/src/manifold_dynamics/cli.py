"""Command line entry point: ``manifold-dynamics run <config>`` / ``summarize <dir>``."""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import math
import sys
from collections import defaultdict
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, artifacts, config
from .experiments import DRIVERS

log = logging.getLogger("manifold_dynamics")


def output_dir(cfg: config.ExperimentConfig, out: str | None) -> Path:
    if out:
        return Path(out)
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    return Path(cfg.run.output_dir) / f"{cfg.experiment}-{stamp}-{cfg.digest()[:8]}"


def _thread_limit(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=n)


def run(config_path, out: str | None = None, threads: int = 1, deterministic: bool = False,
        seed_root: int | None = None) -> Path:
    """Execute one experiment config; returns the output directory."""
    cfg = config.load(config_path)
    if seed_root is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed_root=seed_root))
    if deterministic:
        threads = 1
    out_dir = output_dir(cfg, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(cfg, out_dir / "config.yaml")
    log.info("running %s -> %s", cfg.experiment, out_dir)
    # numeric kernels single-threaded; parallelism, if any, is across runs
    with _thread_limit(1) if deterministic or threads > 1 else nullcontext():
        summary = DRIVERS[cfg.experiment](cfg, out_dir, threads)
    artifacts.write_json({
        "experiment": cfg.experiment, "config_digest": cfg.digest(), "code_version": __version__,
        "seeds": cfg.seeds, "deterministic": deterministic, "summary": summary,
    }, out_dir / "experiment.json")
    return out_dir


def _mean_std(values) -> str:
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    if not vals:
        return "n/a"
    if len(vals) == 1:
        return f"{vals[0]:.4g} (std n/a)"
    return f"{np.mean(vals):.4g} +- {np.std(vals, ddof=1):.3g}"


def summarize(directory) -> str:
    """Aggregate run manifests under ``directory`` into a text report grouped by config digest."""
    directory = Path(directory)
    manifests = sorted(directory.rglob("manifest.json"))
    if not manifests:
        raise FileNotFoundError(f"no run manifests under {directory}")
    groups: dict = defaultdict(list)
    for path in manifests:
        m = artifacts.read_json(path)
        groups[(m.get("experiment"), m.get("config_digest"))].append((path.parent, m))
    lines = []
    for (experiment, digest), runs in sorted(groups.items(), key=lambda kv: str(kv[0])):
        inv = [m["inversion"] for _, m in runs]
        bad = [str(p.relative_to(directory)) for (p, m), i in zip(runs, inv) if not i["converged"]]
        lines.append(f"[{experiment} / config {digest}] {len(runs)} run(s)")
        lines.append(f"  phi        : {_mean_std([i['phi'] for i in inv])}")
        lines.append(f"  t*(R+)     : {_mean_std([float(i['t_star_rplus']) for i in inv])}")
        lines.append(f"  t*(R-)     : {_mean_std([float(i['t_star_rminus']) for i in inv])}")
        lines.append(f"  t*(D)      : {_mean_std([float(i['t_star_d']) for i in inv])}")
        lines.append(f"  |S(t*)|    : {_mean_std([float(i['n_stragglers']) for i in inv])}")
        if bad:
            lines.append(f"  unconverged: {len(bad)} -> " + ", ".join(bad))
    for exp_json in sorted(directory.rglob("experiment.json")):
        summary = artifacts.read_json(exp_json).get("summary", {})
        if "z_tstar" in summary:
            lines.append(f"z at t* (per-run sets): {summary['z_tstar']:.4g}; "
                         f"z at eps=phi: {summary.get('z_phi', math.nan):.4g}; "
                         f"max z over grid: {summary['z_max_grid']:.4g}")
        if "phi_inf" in summary:
            lines.append(f"fit: phi_inf={summary['phi_inf']:.4g} p0={summary['p0']:.4g} "
                         f"gamma={summary['gamma']:.4g} ({summary['weighting']} weighting)")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="manifold-dynamics", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (default: timestamped under run.output_dir)")
    p_run.add_argument("--threads", type=int, default=1, help="worker processes for independent runs")
    p_run.add_argument("--deterministic", action="store_true",
                       help="single-threaded numeric path (bitwise reproducible)")
    p_run.add_argument("--seed-root", type=int, default=None)

    p_sum = sub.add_parser("summarize", help="aggregate the runs in an output directory")
    p_sum.add_argument("directory")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            out = run(args.config, args.out, args.threads, args.deterministic, args.seed_root)
            print(out)
        else:
            sys.stdout.write(summarize(args.directory))
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
