"""SVD-based Tikhonov inversion of the calibration system ``b = A x``.

The regularized estimate minimizes ``||A x - b||^2 + alpha^2 ||x||^2`` and
is evaluated through the thin SVD of ``A``::

    x = sum_i  s_i / (s_i^2 + alpha^2) * (u_i . b) * v_i
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, NumericalError

__all__ = [
    "RANK_CUTOFF",
    "DEFAULT_FRACTION",
    "ILL_POSED_THRESHOLD",
    "SVDFactors",
    "Reconstructor",
    "svd",
    "condition_number",
    "filter_factors",
    "tikhonov_solve",
    "residual_norms",
    "alpha_grid",
    "select_alpha",
    "build_reconstructor",
    "reconstruct",
    "refocus",
    "RefocusResult",
    "save_reconstructor",
    "load_reconstructor",
]

RANK_CUTOFF = 1e-12
ILL_POSED_THRESHOLD = 1e3
# Intensity PSFs share a large common (DC) mode, so S[0] sits far above the
# modes that carry position information; 1e-2 * S[0] smothers them.
DEFAULT_FRACTION = 1e-3


@dataclass(frozen=True, eq=False)
class SVDFactors:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return self.S.size

    @property
    def n_pixels(self) -> int:
        return self.U.shape[0]

    @property
    def n_sources(self) -> int:
        return self.V.shape[0]

    def matrix(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


def _as_matrix(A) -> np.ndarray:
    return np.asarray(getattr(A, "data", A), dtype=np.float64)


def svd(A) -> SVDFactors:
    """Thin SVD with numerical-rank truncation and a fixed sign convention.

    Singular values below ``RANK_CUTOFF * S[0]`` are dropped. Each column of
    V is flipped so its largest-magnitude entry is positive. Accepts a bare
    array or anything with a ``.data`` matrix (e.g. a CalibrationMatrix).
    """
    a = _as_matrix(A)
    if a.ndim != 2 or a.size == 0:
        raise DimensionError(f"svd needs a nonempty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("matrix has non-finite entries")
    U, S, Vt = np.linalg.svd(a, full_matrices=False)
    keep = S > 0 if S[0] == 0 else S >= RANK_CUTOFF * S[0]
    if not np.any(keep):
        raise NumericalError("matrix is identically zero")
    U, S, V = U[:, keep], S[keep], Vt[keep].T
    pivot = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[pivot, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return SVDFactors(U * signs, S, V * signs)


def condition_number(f: SVDFactors) -> float:
    return float(f.S[0] / f.S[-1])


def filter_factors(f: SVDFactors, alpha: float) -> np.ndarray:
    return f.S**2 / (f.S**2 + alpha**2)


def _check_b(f: SVDFactors, b) -> np.ndarray:
    b = np.asarray(getattr(b, "vector", b), dtype=np.float64).ravel()
    if b.size != f.n_pixels:
        raise DimensionError(f"measurement has {b.size} pixels, calibration has {f.n_pixels}")
    if not np.all(np.isfinite(b)):
        raise NumericalError("measurement has non-finite entries")
    return b


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not alpha >= 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    return alpha


def tikhonov_solve(f: SVDFactors, b, alpha: float) -> np.ndarray:
    """Regularized least-squares estimate (unclamped, may be negative)."""
    b = _check_b(f, b)
    alpha = _check_alpha(alpha)
    gain = f.S / (f.S**2 + alpha**2)
    return f.V @ (gain * (f.U.T @ b))


def residual_norms(f: SVDFactors, b, alphas: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """(||A x_a - b||, ||x_a||) for each alpha, in closed form."""
    b = _check_b(f, b)
    beta = f.U.T @ b
    out_of_range = max(float(b @ b - beta @ beta), 0.0)
    s2 = f.S**2
    res, sol = [], []
    for a in np.asarray(alphas, dtype=np.float64):
        a2 = a * a
        res.append(np.sqrt(np.sum((a2 / (s2 + a2) * beta) ** 2) + out_of_range))
        sol.append(np.sqrt(np.sum((f.S / (s2 + a2) * beta) ** 2)))
    return np.array(res), np.array(sol)


def alpha_grid(f: SVDFactors, n: int = 40, low: float = 1e-6) -> np.ndarray:
    """Logarithmic alpha grid on [low * S[0], S[0]]."""
    if n < 1:
        raise ConfigError("alpha grid must have at least one point")
    return np.geomspace(low * f.S[0], f.S[0], n)


def _lcurve_corner(f: SVDFactors, b, grid: np.ndarray) -> float:
    rho, eta = residual_norms(f, b, grid)
    tiny = np.finfo(float).tiny
    u, v, t = np.log(rho + tiny), np.log(eta + tiny), np.log(grid)
    du, dv = np.gradient(u, t), np.gradient(v, t)
    ddu, ddv = np.gradient(du, t), np.gradient(dv, t)
    kappa = (du * ddv - ddu * dv) / np.maximum((du * du + dv * dv) ** 1.5, tiny)
    return float(grid[int(np.argmax(kappa))])


def select_alpha(f: SVDFactors, b=None, strategy: str | tuple = "fixed-fraction", value: float | None = None) -> float:
    """Pick a regularization parameter.

    Strategies: ``fixed-fraction`` (``value * S[0]``, value defaults to
    ``DEFAULT_FRACTION``), ``fixed`` (``value`` itself), ``l-curve`` (max
    signed curvature of the log-log L-curve on a 40-point grid) and ``discrepancy`` (grid alpha whose residual norm is
    nearest ``value``, the expected noise norm). ``strategy`` may also be
    given as a ``(name, value)`` pair.
    """
    if isinstance(strategy, tuple):
        strategy, value = strategy
    if strategy == "fixed-fraction":
        return float((DEFAULT_FRACTION if value is None else value) * f.S[0])
    if strategy == "fixed":
        if value is None:
            raise ConfigError("fixed strategy needs a value")
        return _check_alpha(value)
    grid = alpha_grid(f)
    if b is None:
        raise ConfigError(f"{strategy} strategy needs a measurement")
    if strategy == "l-curve":
        return _lcurve_corner(f, b, grid)
    if strategy == "discrepancy":
        if value is None:
            raise ConfigError("discrepancy strategy needs the noise norm")
        rho, _ = residual_norms(f, b, grid)
        return float(grid[int(np.argmin(np.abs(rho - value)))])
    raise ConfigError(f"unknown alpha strategy {strategy!r}")


@dataclass(frozen=True, eq=False)
class Reconstructor:
    """Precomputed regularized inverse ``M = V diag(s/(s^2+a^2)) U^T``."""

    M: np.ndarray
    alpha: float
    calibration_hash: bytes = b"\0" * 32
    distance_mm: float = float("nan")

    @property
    def n_sources(self) -> int:
        return self.M.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.M.shape[1]


def build_reconstructor(f: SVDFactors, alpha: float, calibration_hash: bytes = b"\0" * 32, distance_mm: float = float("nan")) -> Reconstructor:
    alpha = _check_alpha(alpha)
    gain = f.S / (f.S**2 + alpha**2)
    M = np.ascontiguousarray((f.V * gain) @ f.U.T)
    return Reconstructor(M, alpha, bytes(calibration_hash), float(distance_mm))


def reconstruct(R: Reconstructor, b) -> np.ndarray:
    b = np.asarray(getattr(b, "vector", b), dtype=np.float64).ravel()
    if b.size != R.n_pixels:
        raise DimensionError(f"measurement has {b.size} pixels, reconstructor expects {R.n_pixels}")
    return R.M @ b


@dataclass(frozen=True)
class RefocusResult:
    distance_mm: float
    values: np.ndarray = field(repr=False)
    residuals: tuple[tuple[float, float], ...]


def relative_residual(A: np.ndarray, x: np.ndarray, b: np.ndarray) -> float:
    """||A x - b|| / ||b||; zero when both A x and b vanish."""
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    if nb == 0:
        return 0.0 if r == 0 else float("inf")
    return float(r / nb)


def refocus(stack, b, alpha_strategy="fixed-fraction", factors: Sequence[SVDFactors] | None = None) -> RefocusResult:
    """Pick the calibration distance whose regularized fit explains ``b`` best.

    Ties (e.g. ``b = 0``) go to the smallest distance. ``factors`` may pass
    precomputed SVDs of the stack entries.
    """
    entries = list(getattr(stack, "entries", stack))
    if not entries:
        raise ConfigError("refocus needs at least one calibration")
    b = np.asarray(getattr(b, "vector", b), dtype=np.float64).ravel()
    if factors is None:
        factors = [svd(A) for A in entries]
    best, table, solutions = None, [], []
    for A, f in zip(entries, factors):
        x = tikhonov_solve(f, b, select_alpha(f, b, alpha_strategy))
        r = relative_residual(A.data, x, b)
        table.append((float(A.distance_mm), r))
        solutions.append(x)
        if best is None or r < table[best][1]:
            best = len(table) - 1
    return RefocusResult(table[best][0], solutions[best], tuple(table))


# --------------------------------------------------------------------------
# LREC1 persistence

_LREC_MAGIC = b"LREC1"
_LREC_VERSION = 1
_LREC_HEAD = struct.Struct("<IId32s")


def save_reconstructor(R: Reconstructor, path) -> None:
    h = bytes(R.calibration_hash)
    if len(h) != 32:
        raise ConfigError("calibration hash must be 32 bytes")
    head = _LREC_MAGIC + bytes([_LREC_VERSION]) + _LREC_HEAD.pack(R.n_sources, R.n_pixels, R.alpha, h)
    payload = np.asarray(R.M, dtype="<f8").tobytes(order="F")
    Path(path).write_bytes(head + payload)


def read_lrec_header(raw: bytes) -> dict:
    if raw[:5] != _LREC_MAGIC:
        raise FormatError("bad magic")
    if len(raw) < 6 + _LREC_HEAD.size:
        raise FormatError("truncated header")
    if raw[5] != _LREC_VERSION:
        raise FormatError(f"unsupported LREC version {raw[5]}")
    n_src, n_pix, alpha, h = _LREC_HEAD.unpack_from(raw, 6)
    return {"n_sources": n_src, "n_pixels": n_pix, "alpha": alpha, "calibration_hash": h.hex()}


def load_reconstructor(path) -> Reconstructor:
    raw = Path(path).read_bytes()
    hdr = read_lrec_header(raw)
    start = 6 + _LREC_HEAD.size
    n = hdr["n_sources"] * hdr["n_pixels"]
    if len(raw) - start != 8 * n:
        raise FormatError(f"truncated payload: expected {8 * n} bytes, found {len(raw) - start}")
    M = np.frombuffer(raw, dtype="<f8", count=n, offset=start).reshape(hdr["n_sources"], hdr["n_pixels"], order="F")
    return Reconstructor(np.ascontiguousarray(M, dtype=np.float64), hdr["alpha"], bytes.fromhex(hdr["calibration_hash"]))


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()
