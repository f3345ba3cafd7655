"""CSV tables and trajectory checkpoints."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .spectral import GridField, TorusGrid

CONVERGENCE_HEADER = ("iter", "ep_diff", "ratio", "smallness", "mass_drift", "energy_drift")
COMPARISON_HEADER = ("time", "field", "max_diff", "besov_diff", "resolution")
ESTIMATE_HEADER = ("kind", "trial", "resolution", "lhs", "rhs", "ratio")
RESIDUAL_HEADER = ("check", "resolution", "dt", "value")
NORMS_HEADER = ("time", "field", "besov_norm", "max_norm")

CHECKPOINT_MAGIC = "cnslab-checkpoint 1"


def _cell(v) -> str:
    # repr round-trips floats exactly, which keeps reruns byte-identical
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_checkpoint(path: Path, grid: TorusGrid, times: np.ndarray, fields: dict[str, np.ndarray]) -> Path:
    """Header line, then per time slice a ``time t`` line and one snapshot per field."""
    names = list(fields)
    with Path(path).open("wb") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} fields={','.join(names)} slices={len(times)}\n".encode("ascii"))
        for n, t in enumerate(times):
            fh.write(f"time {float(t)!r}\n".encode("ascii"))
            for name in names:
                fh.write(GridField(grid, fields[name][n]).to_bytes())
    return Path(path)


def read_checkpoint(path: Path) -> tuple[TorusGrid, np.ndarray, dict[str, np.ndarray]]:
    with Path(path).open("rb") as fh:
        stream = io.BufferedReader(io.BytesIO(fh.read()))
    head = stream.readline().decode("ascii").split()
    if " ".join(head[:2]) != CHECKPOINT_MAGIC or len(head) != 4:
        raise ValueError(f"{path}: not a checkpoint file")
    names = head[2].removeprefix("fields=").split(",")
    count = int(head[3].removeprefix("slices="))
    times = np.empty(count)
    data: dict[str, list[np.ndarray]] = {name: [] for name in names}
    grid = None
    for n in range(count):
        line = stream.readline().decode("ascii").split()
        if len(line) != 2 or line[0] != "time":
            raise ValueError(f"{path}: malformed slice header {line}")
        times[n] = float(line[1])
        for name in names:
            snap = GridField.read_from(stream)
            grid = snap.grid
            data[name].append(snap.array())
    if grid is None:
        raise ValueError(f"{path}: checkpoint holds no slices")
    return grid, times, {name: np.array(v) for name, v in data.items()}
