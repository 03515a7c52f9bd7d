"""Train one network on MNIST and print its inversion epoch and straggler fraction.

    python scripts/single_run.py --seed 3 --epochs 300 --out run3
"""
import argparse
from pathlib import Path

from manifold_dynamics import artifacts, dataio, dynamics
from manifold_dynamics.optim import OptimizerConfig
from manifold_dynamics.runner import RunSpec, run_single


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--root", default="data/mnist")
    ap.add_argument("--P", type=int, default=8192)
    ap.add_argument("--hidden", type=int, nargs="+", default=[20])
    ap.add_argument("--activation", default="tanh")
    ap.add_argument("--lr", type=float, default=0.2)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--random-labels", action="store_true")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    raw = dataio.load_mnist_family(args.root, "train")
    ds = dataio.standardize(dataio.subsample(raw, args.P, 0))
    if args.random_labels:
        ds = dataio.randomize_labels(ds, args.seed + 5000)
    spec = RunSpec(hidden=tuple(args.hidden), activation=args.activation,
                   optimizer=OptimizerConfig(learning_rate=args.lr), max_epochs=args.epochs)
    _, log = run_single(ds, spec, args.seed)
    rep = dynamics.detect_inversion(log)
    print(f"t*  R+ {rep.t_star_rplus}  R- {rep.t_star_rminus}  D {rep.t_star_d}")
    print(f"phi {rep.phi:.4f}  |S(t*)| {len(rep.stragglers)}  qualified {rep.all_qualified()}")
    if args.out:
        artifacts.write_trajectory_csv(log, args.out / "trajectory.csv")
        artifacts.write_index_list(rep.stragglers, args.out / "stragglers_tstar.txt")


if __name__ == "__main__":
    main()
