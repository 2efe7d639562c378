"""Analysis of calibration matrices and reconstructions."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, NumericalError
from .scene import SceneVector, index_of

__all__ = [
    "CorrelationMap",
    "QualityReport",
    "singular_decay",
    "decay_index",
    "pearson",
    "line_indices",
    "correlation_map",
    "otsu_threshold",
    "threshold",
    "psnr",
    "score",
    "write_decay_csv",
    "write_correlation_csv",
    "write_report_json",
]


def singular_decay(f) -> np.ndarray:
    """(rank, 2) array of (index, S_i / S_0)."""
    S = np.asarray(getattr(f, "S", f), dtype=np.float64)
    return np.column_stack([np.arange(S.size), S / S[0]])


def decay_index(f, level: float = 1e-2) -> int:
    """First index where S_i / S_0 drops below ``level`` (rank if never)."""
    d = singular_decay(f)[:, 1]
    below = np.flatnonzero(d < level)
    return int(below[0]) if below.size else int(d.size)


def pearson(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.size != v.size or u.size < 2:
        raise DimensionError("pearson needs two vectors of equal length >= 2")
    du, dv = u - u.mean(), v - v.mean()
    su, sv = math.sqrt(du @ du), math.sqrt(dv @ dv)
    if su == 0 or sv == 0:
        raise NumericalError("correlation undefined for a constant input")
    return float(np.clip((du @ dv) / (su * sv), -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class CorrelationMap:
    line: str
    position: int
    indices: tuple[int, ...]
    values: np.ndarray

    def off_diagonal(self) -> np.ndarray:
        n = len(self.indices)
        return self.values[~np.eye(n, dtype=bool)]


def line_indices(grid, line: str, position: int | None = None) -> list[int]:
    """Source indices along a grid line, in order.

    ``h``: row ``position`` (default centre row ``rows // 2``); ``v``: column
    ``position`` (default ``cols // 2``); ``diag``: the diagonal starting at
    row ``position`` of column 0 (default 0, the main diagonal).
    """
    if line == "h":
        pos = grid.rows // 2 if position is None else position
        if not 0 <= pos < grid.rows:
            raise ConfigError(f"row {pos} outside grid")
        return [index_of(pos, c, grid) for c in range(grid.cols)]
    if line == "v":
        pos = grid.cols // 2 if position is None else position
        if not 0 <= pos < grid.cols:
            raise ConfigError(f"column {pos} outside grid")
        return [index_of(r, pos, grid) for r in range(grid.rows)]
    if line == "diag":
        pos = 0 if position is None else position
        if not 0 <= pos < grid.rows:
            raise ConfigError(f"diagonal start row {pos} outside grid")
        n = min(grid.rows - pos, grid.cols)
        return [index_of(pos + k, k, grid) for k in range(n)]
    raise ConfigError(f"unknown line {line!r} (use h, v or diag)")


def correlation_map(A, line: str = "h", position: int | None = None) -> CorrelationMap:
    """Pairwise Pearson coefficients of the calibration columns along a line."""
    idx = line_indices(A.grid, line, position)
    cols = np.asarray(A.data)[:, idx]
    n = len(idx)
    vals = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            vals[i, j] = vals[j, i] = pearson(cols[:, i], cols[:, j])
    return CorrelationMap(line, -1 if position is None else position, tuple(idx), vals)


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Otsu cut on values already scaled to [0, 1]."""
    hist, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    p = hist / hist.sum()
    centres = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(p)
    m0 = np.cumsum(p * centres)
    mt = m0[-1]
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mt * w0 - m0) ** 2 / (w0 * w1)
    between[~np.isfinite(between)] = -1.0
    # Empty bins between two modes give a flat maximum; cut mid-gap rather
    # than at the edge of the lower mode.
    k0 = int(np.argmax(between))
    k1 = k0
    while k1 + 1 < between.size and between[k1 + 1] >= between[k0] * (1 - 1e-12):
        k1 += 1
    return float(0.5 * (edges[k0 + 1] + edges[k1 + 1]))


def threshold(x, method="otsu", t: float = 0.5, fallback: bool = False) -> np.ndarray:
    """Binarize a reconstruction after clamping negatives to zero.

    ``method`` is ``"otsu"`` or ``"fixed"`` (cut at ``t * max``). Both work
    on max-normalized values, so the result ignores positive rescaling.
    Otsu on constant input raises, unless ``fallback`` asks for the fixed
    rule instead.
    """
    if isinstance(method, tuple):
        method, t = method
    v = np.asarray(getattr(x, "values", x), dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise NumericalError("cannot threshold non-finite values")
    v = np.maximum(v, 0.0)
    peak = v.max() if v.size else 0.0
    if method == "fixed":
        return (v > t * peak).astype(np.float64)
    if method != "otsu":
        raise ConfigError(f"unknown threshold method {method!r}")
    if peak == 0 or v.min() == peak:
        if fallback:
            return threshold(v, "fixed", t)
        raise NumericalError("degenerate histogram")
    z = v / peak
    return (z > otsu_threshold(z)).astype(np.float64)


def psnr(x, truth, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(x, float) - np.asarray(truth, float)) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(peak * peak / mse)


@dataclass(frozen=True)
class QualityReport:
    psnr_db: float
    pixel_accuracy: float
    residual_rel: float

    def to_dict(self) -> dict:
        d = asdict(self)
        # JSON has no infinity; exact matches are flagged by a string sentinel
        for k, v in d.items():
            if isinstance(v, float) and math.isinf(v):
                d[k] = "inf" if v > 0 else "-inf"
        return d


def score(x_hat, truth: SceneVector, A, b) -> QualityReport:
    x = np.asarray(getattr(x_hat, "values", x_hat), dtype=np.float64).ravel()
    if x.size != truth.grid.size:
        raise DimensionError(f"estimate has {x.size} sources, truth grid has {truth.grid.size}")
    data = np.asarray(getattr(A, "data", A))
    if data.shape[1] != x.size:
        raise DimensionError("calibration and estimate disagree on the source count")
    b = np.asarray(getattr(b, "vector", b), dtype=np.float64).ravel()
    binary = threshold(x, "otsu", fallback=True)
    acc = float(np.mean(binary == truth.values))
    nb = np.linalg.norm(b)
    r = np.linalg.norm(data @ x - b)
    resid = (0.0 if r == 0 else math.inf) if nb == 0 else float(r / nb)
    return QualityReport(psnr(x, truth.values), acc, resid)


# --------------------------------------------------------------------------
# export


def write_decay_csv(path, series: dict) -> None:
    """One column per label (e.g. distance); rows are singular-value indices."""
    labels = list(series)
    n = max(len(s) for s in series.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index"] + [str(k) for k in labels])
        for i in range(n):
            row = [i]
            for k in labels:
                s = series[k]
                row.append(repr(float(s[i, 1])) if i < len(s) else "")
            w.writerow(row)


def write_correlation_csv(path, cmap: CorrelationMap) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source"] + [str(i) for i in cmap.indices])
        for i, row in zip(cmap.indices, cmap.values):
            w.writerow([i] + [repr(float(v)) for v in row])


def write_report_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, QualityReport):
        return o.to_dict()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
