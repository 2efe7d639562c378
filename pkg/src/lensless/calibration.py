"""Calibration matrix acquisition, persistence, pixel masking and FOV."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, NumericalError
from .optics import (
    Frame,
    OpticsConfig,
    SensorSpec,
    auto_exposure,
    render_psfs,
    shadow_center,
    shadow_radius,
    _expose_array,
)
from .scene import SourceGrid

__all__ = [
    "CalibrationMatrix",
    "CalibrationStack",
    "PixelMask",
    "FovReport",
    "calibrate",
    "calibrate_stack",
    "config_hash",
    "save_calibration",
    "load_calibration",
    "calibration_bytes",
    "read_lcal_header",
    "apply_mask",
    "mask_vector",
    "shadow_mask",
    "estimate_fov",
]

Rect = tuple[int, int, int, int]


@dataclass(frozen=True)
class PixelMask:
    """Pixel rectangles ``(x0, y0, width, height)`` to exclude."""

    rects: tuple[Rect, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rects", tuple(tuple(int(v) for v in r) for r in self.rects))

    def excluded(self, width_px: int, height_px: int) -> np.ndarray:
        """Boolean (height, width) image, True where excluded."""
        out = np.zeros((height_px, width_px), dtype=bool)
        for x0, y0, w, h in self.rects:
            if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > width_px or y0 + h > height_px:
                raise ConfigError(f"mask rect {(x0, y0, w, h)} outside {width_px}x{height_px} sensor")
            out[y0 : y0 + h, x0 : x0 + w] = True
        return out


@dataclass(frozen=True, eq=False)
class CalibrationMatrix:
    """Dense system matrix; column j is the sensor response to source j.

    Rows follow the row-major pixel order of the sensor with any masked
    pixels removed.
    """

    data: np.ndarray
    distance_mm: float
    grid: SourceGrid
    sensor_width_px: int
    sensor_height_px: int
    pixel_pitch_um: float
    n_avg: int
    mask: PixelMask = PixelMask()
    created_from: str = field(default="external", compare=False)

    def __post_init__(self):
        a = np.array(self.data, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionError("calibration data must be 2-D")
        if a.shape[1] != self.grid.size:
            raise DimensionError(f"{a.shape[1]} columns for a grid of {self.grid.size} sources")
        expected = int(self.keep().sum())
        if a.shape[0] != expected:
            raise DimensionError(f"{a.shape[0]} rows but sensor and mask leave {expected} pixels")
        if not np.all(np.isfinite(a)):
            raise NumericalError("calibration matrix has non-finite entries")
        if np.any(a < 0):
            raise ValueError("calibration matrix entries must be nonnegative")
        a.flags.writeable = False
        object.__setattr__(self, "data", a)

    @property
    def n_pixels(self) -> int:
        return self.data.shape[0]

    @property
    def n_sources(self) -> int:
        return self.data.shape[1]

    @property
    def sensor_shape(self) -> tuple[int, int]:
        return (self.sensor_height_px, self.sensor_width_px)

    def keep(self) -> np.ndarray:
        """Flat boolean vector over the full sensor, True for retained pixels."""
        return ~self.mask.excluded(self.sensor_width_px, self.sensor_height_px).ravel()

    def column_image(self, j: int, fill: float = np.nan) -> np.ndarray:
        img = np.full(self.sensor_width_px * self.sensor_height_px, fill)
        img[self.keep()] = self.data[:, j]
        return img.reshape(self.sensor_shape)

    def header(self) -> dict:
        return {
            "n_pixels": self.n_pixels,
            "n_sources": self.n_sources,
            "sensor_w": self.sensor_width_px,
            "sensor_h": self.sensor_height_px,
            "grid_rows": self.grid.rows,
            "grid_cols": self.grid.cols,
            "distance_mm": self.distance_mm,
            "pitch_mm": self.grid.pitch_mm,
            "pixel_pitch_um": self.pixel_pitch_um,
            "n_avg": self.n_avg,
            "mask_rects": [list(r) for r in self.mask.rects],
        }

    def __eq__(self, other):
        if not isinstance(other, CalibrationMatrix):
            return NotImplemented
        return self.header() == other.header() and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class CalibrationStack:
    entries: tuple[CalibrationMatrix, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ConfigError("calibration stack needs at least one entry")
        d = [e.distance_mm for e in entries]
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ConfigError("stack distances must be strictly increasing")
        ref = entries[0]
        for e in entries[1:]:
            if (e.grid, e.sensor_shape, e.pixel_pitch_um, e.mask) != (ref.grid, ref.sensor_shape, ref.pixel_pitch_um, ref.mask):
                raise DimensionError("stack entries must share grid, sensor and mask")
        object.__setattr__(self, "entries", entries)

    @property
    def distances(self) -> list[float]:
        return [e.distance_mm for e in self.entries]

    def __len__(self):
        return len(self.entries)


def config_hash(cfg: OpticsConfig, n_avg: int, rng_seed, ideal: bool) -> str:
    text = f"{cfg.to_json()}|{n_avg}|{rng_seed}|{ideal}"
    return hashlib.sha256(text.encode()).hexdigest()


def calibrate(
    cfg: OpticsConfig,
    n_avg: int = 100,
    rng_seed: int = 0,
    ideal: bool = False,
    exposure_scale: float | None = None,
    psfs: np.ndarray | None = None,
) -> CalibrationMatrix:
    """Record every source alone, averaging ``n_avg`` exposures.

    One exposure is used for the whole matrix (auto: the brightest PSF
    pixel lands at 80 % full scale) and the averaged frames are divided by
    it, so columns are in the same units as a clean render. ``ideal``
    skips the sensor model: columns are the clean PSFs exactly. Column j
    draws its noise from a generator seeded with ``(rng_seed, j)``.
    """
    if n_avg < 1:
        raise ConfigError("n_avg must be >= 1")
    clean = render_psfs(cfg) if psfs is None else np.asarray(psfs)
    if ideal:
        data = clean.copy()
    else:
        e = auto_exposure(float(clean.max())) if exposure_scale is None else float(exposure_scale)
        data = np.empty_like(clean)
        for j in range(clean.shape[1]):
            rng = np.random.default_rng([int(rng_seed), j])
            tiled = np.broadcast_to(clean[:, j], (n_avg, clean.shape[0]))
            data[:, j] = _expose_array(tiled, cfg.sensor, e, rng).mean(axis=0) / e
    return CalibrationMatrix(
        data,
        float(cfg.distance_mm),
        cfg.grid,
        cfg.sensor.width_px,
        cfg.sensor.height_px,
        float(cfg.sensor.pixel_pitch_um),
        int(n_avg),
        created_from=config_hash(cfg, n_avg, rng_seed, ideal),
    )


def calibrate_stack(cfg: OpticsConfig, distances: Sequence[float], **kwargs) -> CalibrationStack:
    return CalibrationStack(tuple(calibrate(cfg.with_(distance_mm=float(d)), **kwargs) for d in sorted(distances)))


# --------------------------------------------------------------------------
# LCAL1

_LCAL_MAGIC = b"LCAL1"
_LCAL_VERSION = 1
_LCAL_HEAD = struct.Struct("<IIIIIIdddII")


def calibration_bytes(A: CalibrationMatrix) -> bytes:
    head = _LCAL_MAGIC + bytes([_LCAL_VERSION]) + _LCAL_HEAD.pack(
        A.n_pixels,
        A.n_sources,
        A.sensor_width_px,
        A.sensor_height_px,
        A.grid.rows,
        A.grid.cols,
        A.distance_mm,
        A.grid.pitch_mm,
        A.pixel_pitch_um,
        A.n_avg,
        len(A.mask.rects),
    )
    rects = b"".join(struct.pack("<4I", *r) for r in A.mask.rects)
    return head + rects + np.asarray(A.data, dtype="<f8").tobytes(order="F")


def save_calibration(A: CalibrationMatrix, path) -> None:
    Path(path).write_bytes(calibration_bytes(A))


def read_lcal_header(raw: bytes) -> tuple[dict, int]:
    """Parse an LCAL1 header; returns (fields, payload offset)."""
    if raw[:5] != _LCAL_MAGIC:
        raise FormatError("bad magic")
    if len(raw) < 6 + _LCAL_HEAD.size:
        raise FormatError("truncated header")
    if raw[5] != _LCAL_VERSION:
        raise FormatError(f"unsupported LCAL version {raw[5]}")
    keys = ("n_pixels", "n_sources", "sensor_w", "sensor_h", "grid_rows", "grid_cols",
            "distance_mm", "pitch_mm", "pixel_pitch_um", "n_avg", "mask_rect_count")
    hdr = dict(zip(keys, _LCAL_HEAD.unpack_from(raw, 6)))
    off = 6 + _LCAL_HEAD.size
    n_rect = hdr["mask_rect_count"]
    if len(raw) < off + 16 * n_rect:
        raise FormatError("truncated mask table")
    hdr["mask_rects"] = [list(struct.unpack_from("<4I", raw, off + 16 * k)) for k in range(n_rect)]
    return hdr, off + 16 * n_rect


def load_calibration(path) -> CalibrationMatrix:
    raw = Path(path).read_bytes()
    hdr, off = read_lcal_header(raw)
    n = hdr["n_pixels"] * hdr["n_sources"]
    have = len(raw) - off
    if have < 8 * n:
        raise FormatError(f"truncated payload: header promises {n} values, file holds {have // 8}")
    if have > 8 * n:
        raise FormatError(f"payload size mismatch: {have - 8 * n} trailing bytes")
    if hdr["n_sources"] != hdr["grid_rows"] * hdr["grid_cols"]:
        raise FormatError("dimension mismatch: n_sources != grid_rows * grid_cols")
    data = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(hdr["n_pixels"], hdr["n_sources"], order="F")
    try:
        return CalibrationMatrix(
            data.astype(np.float64),
            hdr["distance_mm"],
            SourceGrid(hdr["grid_rows"], hdr["grid_cols"], hdr["pitch_mm"]),
            hdr["sensor_w"],
            hdr["sensor_h"],
            hdr["pixel_pitch_um"],
            hdr["n_avg"],
            PixelMask(tuple(tuple(r) for r in hdr["mask_rects"])),
            created_from=f"file:{Path(path).name}",
        )
    except (DimensionError, ConfigError) as exc:
        raise FormatError(f"dimension mismatch: {exc}") from None


# --------------------------------------------------------------------------
# masking


def apply_mask(A: CalibrationMatrix, m: PixelMask) -> CalibrationMatrix:
    """Delete the rows of masked pixels; the mask is recorded in the result."""
    merged = PixelMask(A.mask.rects + m.rects)
    excl = merged.excluded(A.sensor_width_px, A.sensor_height_px).ravel()
    if excl.all():
        raise ConfigError("mask covers every pixel")
    rows = ~excl[A.keep()]
    return replace(A, data=A.data[rows], mask=merged)


def mask_vector(b, A: CalibrationMatrix) -> np.ndarray:
    """Reduce a full-sensor measurement to the rows retained by ``A``."""
    v = np.asarray(getattr(b, "vector", b), dtype=np.float64).ravel()
    full = A.sensor_width_px * A.sensor_height_px
    if v.size == A.n_pixels:
        return v
    if v.size != full:
        raise DimensionError(
            f"measurement has {v.size} pixels; calibration expects {A.sensor_width_px}x{A.sensor_height_px}"
        )
    return v[A.keep()]


def shadow_mask(cfg: OpticsConfig, margin_px: int = 1) -> PixelMask:
    """Rectangles covering every position each dust shadow takes over the grid."""
    s = cfg.sensor
    pos = cfg.grid.positions_mm()[cfg.grid.active()]
    rects = []
    for p in cfg.scatterers:
        c = np.array([shadow_center(p, q, cfg.distance_mm) for q in pos])
        r = shadow_radius(p, cfg.distance_mm)
        col, row = s.mm_to_pixel(c[:, 0], c[:, 1])
        rpx = r / s.pitch_mm + 0.5 + margin_px
        x0 = max(int(np.floor(col.min() - rpx)), 0)
        x1 = min(int(np.ceil(col.max() + rpx)), s.width_px - 1)
        y0 = max(int(np.floor(row.min() - rpx)), 0)
        y1 = min(int(np.ceil(row.max() + rpx)), s.height_px - 1)
        if x1 >= x0 and y1 >= y0:
            rects.append((x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    return PixelMask(tuple(rects))


# --------------------------------------------------------------------------
# field of view


@dataclass(frozen=True)
class FovReport:
    """Per-source PSF extent: box = (x0, y0, x1, y1) inclusive, or None."""

    tau: float
    boxes: tuple
    in_fov: tuple[int, ...]
    empty: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"tau": self.tau, "boxes": [None if b is None else list(b) for b in self.boxes],
                "in_fov": list(self.in_fov), "empty": list(self.empty)}


def estimate_fov(A: CalibrationMatrix, tau: float = 0.01) -> FovReport:
    """Bounding box of each PSF's superlevel set ``>= tau * max``.

    A source is in the nominal field of view when its box does not touch
    the sensor border, i.e. the PSF extent is not truncated by the sensor.
    All-zero columns have no extent and are listed in ``empty``.
    """
    if not 0 < tau < 1:
        raise ConfigError("tau must be in (0, 1)")
    h, w = A.sensor_shape
    boxes, inside, empty = [], [], []
    for j in range(A.n_sources):
        img = A.column_image(j, fill=0.0)
        peak = img.max()
        if peak <= 0:
            boxes.append(None)
            empty.append(j)
            continue
        rows, cols = np.nonzero(img >= tau * peak)
        box = (int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max()))
        boxes.append(box)
        if box[0] > 0 and box[1] > 0 and box[2] < w - 1 and box[3] < h - 1:
            inside.append(j)
    return FovReport(float(tau), tuple(boxes), tuple(inside), tuple(empty))


def frame_to_vector(frame: Frame, A: CalibrationMatrix) -> np.ndarray:
    if (frame.height_px, frame.width_px) != A.sensor_shape:
        raise DimensionError(
            f"measurement is {frame.width_px}x{frame.height_px}, calibration sensor is "
            f"{A.sensor_width_px}x{A.sensor_height_px}"
        )
    return frame.vector[A.keep()]
