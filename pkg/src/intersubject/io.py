"""File formats: matrix CSV, partition/support JSON, edge reports.

Indices in files are 1-based.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import GroupPartition, InterBlockIndex

EDGE_HEADER = ["j", "k", "estimate", "std_err", "ci_low", "ci_high", "z", "reject"]


def write_matrix_csv(path, m) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in m:
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    out = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{path}: non-finite entries")
    return out


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_partition(path, partition: GroupPartition) -> None:
    write_json(path, partition.to_json())


def read_partition(path) -> GroupPartition:
    return GroupPartition.from_json(read_json(path))


def pairs_json(pairs) -> list[list[int]]:
    return [[p.j + 1, p.k + 1] for p in sorted(pairs)]


def pairs_from_json(rows) -> list[InterBlockIndex]:
    return [InterBlockIndex(int(j) - 1, int(k) - 1) for j, k in rows]


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in r])


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
