"""End-to-end routines shared by the CLI, scripts and acceptance tests."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as dg
from .calibration import (
    CalibrationMatrix,
    CalibrationStack,
    PixelMask,
    apply_mask,
    calibrate,
    mask_vector,
    shadow_mask,
)
from .optics import Frame, OpticsConfig, auto_exposure, capture_averaged, render_scene
from .scene import SceneVector, make_pattern, make_video
from .solver import (
    SVDFactors,
    build_reconstructor,
    condition_number,
    reconstruct,
    refocus,
    select_alpha,
    svd,
    tikhonov_solve,
)

__all__ = [
    "Measurement",
    "measure",
    "random_scene",
    "solve_scene",
    "SelfTest",
    "self_test",
    "longest_recovered_line",
    "run_video",
    "run_ablation",
    "ABLATIONS",
    "refocus_probe",
]


@dataclass(frozen=True)
class Measurement:
    """Averaged capture plus its exposure; ``b`` is in calibration units."""

    frame: Frame
    exposure: float

    @property
    def b(self) -> np.ndarray:
        return self.frame.vector / self.exposure


def measure(
    x: SceneVector,
    cfg: OpticsConfig,
    n_avg: int = 100,
    rng_seed=0,
    ideal: bool = False,
    psfs: np.ndarray | None = None,
) -> Measurement:
    """Capture a scene with auto exposure (brightest pixel at 80 % full scale)."""
    clean = render_scene(x, cfg, psfs)
    e = 1.0 if ideal else auto_exposure(float(clean.data.max()))
    frame = capture_averaged(x, cfg, n_avg, rng_seed, e, ideal=ideal, clean=clean)
    return Measurement(frame, e)


def random_scene(grid, rng: np.random.Generator, lo: int = 15, hi: int = 40) -> SceneVector:
    """Binary scene with a uniform random count of lit active sources in [lo, hi]."""
    active = np.flatnonzero(grid.active())
    k = int(rng.integers(lo, hi + 1))
    v = np.zeros(grid.size)
    v[rng.choice(active, size=k, replace=False)] = 1.0
    return SceneVector(grid, v)


def solve_scene(A: CalibrationMatrix, f: SVDFactors, b, alpha_strategy="fixed-fraction") -> np.ndarray:
    b = mask_vector(b, A)
    return tikhonov_solve(f, b, select_alpha(f, b, alpha_strategy))


@dataclass
class SelfTest:
    truth: SceneVector
    estimate: np.ndarray
    binary: np.ndarray
    report: dg.QualityReport
    alpha: float
    condition: float
    b: np.ndarray = field(repr=False)


def self_test(
    A: CalibrationMatrix,
    cfg: OpticsConfig,
    truth: SceneVector,
    n_avg: int = 100,
    rng_seed=1,
    ideal: bool = False,
    alpha_strategy="fixed-fraction",
    factors: SVDFactors | None = None,
    psfs: np.ndarray | None = None,
) -> SelfTest:
    """Render a known scene, invert it with ``A`` and score the result."""
    f = svd(A) if factors is None else factors
    b = mask_vector(measure(truth, cfg, n_avg, rng_seed, ideal, psfs).b, A)
    alpha = select_alpha(f, b, alpha_strategy)
    xh = tikhonov_solve(f, b, alpha)
    rep = dg.score(xh, truth, A, b)
    return SelfTest(truth, xh, dg.threshold(xh, "otsu", fallback=True), rep, alpha, condition_number(f), b)


def longest_recovered_line(A, f, cfg, kind: str, alpha_strategy="fixed-fraction", n_avg=100, rng_seed=3, ideal=False) -> int:
    """Longest centred line of the given direction recovered exactly after thresholding."""
    grid = cfg.grid
    limit = {"h": grid.cols, "v": grid.rows, "diag": min(grid.rows, grid.cols)}[kind]
    best = 0
    for L in range(1, limit + 1):
        truth = make_pattern(f"line-{kind}({L})", grid)
        if not truth.values.any():
            continue
        r = self_test(A, cfg, truth, n_avg, [rng_seed, L], ideal, alpha_strategy, f)
        if np.array_equal(r.binary, truth.values):
            best = L
    return best


def run_video(R, cfg, n_frames: int, n_avg: int = 1, rng_seed=5, ideal=False, warmup: int = 3, mask_from=None):
    """Invert a jumping-stickman sequence with a precomputed reconstructor.

    Returns (estimates, binaries, timing) where timing separates the
    per-frame matrix-vector inversion from thresholding.
    """
    video = make_video("jumping-stickman", cfg.grid, n_frames)
    bs = []
    for k, x in enumerate(video.frames):
        b = measure(x, cfg, n_avg, [rng_seed, k], ideal).b
        bs.append(b if mask_from is None else mask_vector(b, mask_from))
    for b in bs[: min(warmup, len(bs))]:
        reconstruct(R, b)
    est, binaries, t_inv, t_full = [], [], [], []
    for b in bs:
        t0 = time.perf_counter()
        xh = reconstruct(R, b)
        t1 = time.perf_counter()
        binaries.append(dg.threshold(xh, "otsu", fallback=True))
        t2 = time.perf_counter()
        est.append(xh)
        t_inv.append((t1 - t0) * 1e3)
        t_full.append((t2 - t0) * 1e3)
    timed = t_inv[warmup:] if len(t_inv) > warmup else t_inv
    timing = {
        "frames": n_frames,
        "warmup_frames_excluded": min(warmup, max(len(t_inv) - 1, 0)) if len(t_inv) > warmup else 0,
        "per_frame_inversion_ms": t_inv,
        "mean_inversion_ms": float(np.mean(timed)),
        "per_frame_with_threshold_ms": t_full,
        "mean_with_threshold_ms": float(np.mean(t_full[warmup:] if len(t_full) > warmup else t_full)),
    }
    return video, est, binaries, timing


ABLATIONS = ("mask-shadows", "no-scatterers", "no-texture")


def run_ablation(cfg: OpticsConfig, flags, pattern="stickman", n_avg=100, rng_seed=0, ideal=False, alpha_strategy="fixed-fraction") -> dict:
    """Stickman reconstruction under an ablation versus the unablated baseline."""
    flags = set(flags)
    unknown = flags - set(ABLATIONS)
    if unknown:
        raise ValueError(f"unknown ablation(s): {sorted(unknown)}")
    truth = make_pattern(pattern, cfg.grid)

    def run(c: OpticsConfig, mask: PixelMask | None):
        A = calibrate(c, n_avg, rng_seed, ideal)
        if mask is not None and mask.rects:
            A = apply_mask(A, mask)
        r = self_test(A, c, truth, n_avg, rng_seed + 1, ideal, alpha_strategy)
        return {"report": r.report.to_dict(), "condition_number": r.condition, "alpha": r.alpha, "n_pixels": A.n_pixels}

    base = run(cfg, None)
    ab_cfg = cfg
    if "no-scatterers" in flags:
        ab_cfg = ab_cfg.with_(scatterers=())
    if "no-texture" in flags:
        ab_cfg = ab_cfg.with_(texture_amplitude=0.0)
    mask = shadow_mask(cfg) if "mask-shadows" in flags else None
    ablated = base if not flags else run(ab_cfg, mask)
    return {
        "flags": sorted(flags),
        "pattern": pattern,
        "mask_rects": [list(r) for r in mask.rects] if mask is not None else [],
        "baseline": base,
        "ablated": ablated,
    }


def refocus_probe(stack: CalibrationStack, cfg: OpticsConfig, truth: SceneVector, distance_mm: float, n_avg=100, rng_seed=7, ideal=False, alpha_strategy="fixed-fraction", factors=None):
    """Render ``truth`` at ``distance_mm`` and refocus it against the stack."""
    b = measure(truth, cfg.with_(distance_mm=float(distance_mm)), n_avg, rng_seed, ideal).b
    return refocus(stack, mask_vector(b, stack.entries[0]), alpha_strategy, factors)
