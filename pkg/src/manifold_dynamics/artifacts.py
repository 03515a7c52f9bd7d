"""On-disk formats: trajectory CSV, misclassification sidecar, manifests, index lists.

Every writer goes through :func:`atomic_write` (temp file, then rename).
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .dynamics import TrajectoryLog

TRAJECTORY_HEADER = ["epoch", "eps_tr", "eps_test", "r_plus", "r_minus", "d"]
SIDECAR_HEADER = "# manifold-dynamics misclassified/1"


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(x: float) -> str:
    return "nan" if np.isnan(x) else f"{x:.17g}"


def trajectory_csv(log: TrajectoryLog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_HEADER)
    for i in range(len(log)):
        w.writerow([int(log.epochs[i])] + [_fmt(float(getattr(log, k)[i])) for k in TRAJECTORY_HEADER[1:]])
    return buf.getvalue()


def write_trajectory_csv(log: TrajectoryLog, path) -> Path:
    return atomic_write(path, trajectory_csv(log))


def read_trajectory_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {k: np.array([float(r[k]) for r in rows]) for k in TRAJECTORY_HEADER}
    out["epoch"] = out["epoch"].astype(int)
    return out


def misclassified_sidecar(log: TrajectoryLog) -> str:
    """One line per epoch: ``epoch<TAB>i1 i2 ...`` with sorted source indices."""
    lines = [SIDECAR_HEADER, f"# n_train {log.n_train}"]
    for t in log.epochs:
        idx = log.misclassified(int(t))
        lines.append(f"{int(t)}\t" + " ".join(map(str, idx.tolist())))
    return "\n".join(lines) + "\n"


def write_misclassified(log: TrajectoryLog, path) -> Path:
    return atomic_write(path, misclassified_sidecar(log))


def read_misclassified(path) -> dict[int, np.ndarray]:
    out = {}
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != SIDECAR_HEADER:
            raise ValueError(f"not a misclassification sidecar: {first!r}")
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            epoch, _, rest = line.rstrip("\n").partition("\t")
            out[int(epoch)] = np.array(rest.split(), dtype=np.int64)
    return out


def write_index_list(indices, path) -> Path:
    idx = np.sort(np.asarray(list(indices), dtype=np.int64))
    return atomic_write(path, "".join(f"{i}\n" for i in idx.tolist()))


def read_index_list(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([int(x) for x in fh.read().split()], dtype=np.int64)


def write_json(obj, path) -> Path:
    return atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_rows_csv(rows: list[dict], path) -> Path:
    """Plain CSV with the union of row keys as header (first-seen order)."""
    fields: list[str] = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items()})
    return atomic_write(path, buf.getvalue())
