"""Synthetic bare-sensor physics.

Each point source produces a space-variant intensity pattern on the pixel
plane made of three multiplicative factors:

* a radiometric envelope ``cos(theta)**k / D**2``;
* a static pseudorandom irregularity field living on the cover glass at
  ``texture_height_mm`` above the pixels, seen through the same central
  projection as the dust, so it slides across the pixels as the source moves;
* soft-edged shadow disks cast by dust particles on the cover glass.

Intensities of a rendered frame are in arbitrary radiometric units; the
sensor model (:func:`expose`) maps them to full-scale fractions in [0, 1].

The default scatterer and texture parameters are placeholders chosen to give
a well-behaved desk-scale simulation; they are not measured values.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .scene import SceneVector, SourceGrid

__all__ = [
    "SensorSpec",
    "DustScatterer",
    "OpticsConfig",
    "Frame",
    "default_scatterers",
    "desk_config",
    "full_sensor_config",
    "shadow_center",
    "shadow_radius",
    "texture_field",
    "render_psf",
    "render_psfs",
    "render_scene",
    "auto_exposure",
    "expose",
    "capture_averaged",
]

SATURATION_TARGET = 0.8


@dataclass(frozen=True)
class SensorSpec:
    width_px: int = 96
    height_px: int = 72
    pixel_pitch_um: float = 6.0
    bit_depth: int = 8
    read_noise_sigma: float = 0.005
    shot_noise: bool = False

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise ConfigError("sensor must be at least 1x1 pixels")
        if not self.pixel_pitch_um > 0:
            raise ConfigError("pixel_pitch_um must be positive")
        if self.bit_depth not in (8, 12, 16):
            raise ConfigError(f"bit_depth must be 8, 12 or 16, got {self.bit_depth}")
        if self.read_noise_sigma < 0:
            raise ConfigError("read_noise_sigma must be >= 0")

    @property
    def n_pixels(self) -> int:
        return self.width_px * self.height_px

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_px, self.width_px)

    @property
    def pitch_mm(self) -> float:
        return self.pixel_pitch_um * 1e-3

    @property
    def levels(self) -> int:
        return 2**self.bit_depth - 1

    def pixel_positions_mm(self) -> np.ndarray:
        """(n_pixels, 2) pixel centres, row-major, sensor centred, +y at row 0."""
        r, c = np.divmod(np.arange(self.n_pixels), self.width_px)
        x = (c - (self.width_px - 1) / 2.0) * self.pitch_mm
        y = ((self.height_px - 1) / 2.0 - r) * self.pitch_mm
        return np.column_stack([x, y])

    def mm_to_pixel(self, x_mm, y_mm):
        """Continuous (col, row) coordinates of a lateral position."""
        col = np.asarray(x_mm) / self.pitch_mm + (self.width_px - 1) / 2.0
        row = (self.height_px - 1) / 2.0 - np.asarray(y_mm) / self.pitch_mm
        return col, row


@dataclass(frozen=True)
class DustScatterer:
    pos_mm: tuple[float, float]
    height_mm: float
    radius_mm: float
    opacity: float = 0.6

    def __post_init__(self):
        object.__setattr__(self, "pos_mm", tuple(float(v) for v in self.pos_mm))
        if len(self.pos_mm) != 2:
            raise ConfigError("pos_mm must be an (x, y) pair")
        if not self.height_mm > 0:
            raise ConfigError("scatterer height_mm must be positive")
        if not self.radius_mm > 0:
            raise ConfigError("scatterer radius_mm must be positive")
        if not 0 < self.opacity <= 1:
            raise ConfigError("scatterer opacity must be in (0, 1]")


def default_scatterers() -> tuple[DustScatterer, ...]:
    # Placeholder particles: three, as in the observed sensor, spread over the
    # desk-scale crop (0.576 x 0.432 mm).
    return (
        DustScatterer((-0.17, 0.09), 0.30, 0.020, 0.6),
        DustScatterer((0.16, 0.07), 0.35, 0.025, 0.5),
        DustScatterer((0.02, -0.12), 0.40, 0.018, 0.7),
    )


@dataclass(frozen=True)
class OpticsConfig:
    sensor: SensorSpec = field(default_factory=SensorSpec)
    grid: SourceGrid = field(default_factory=lambda: SourceGrid(16, 16, 6.1))
    distance_mm: float = 343.0
    scatterers: tuple[DustScatterer, ...] = field(default_factory=default_scatterers)
    texture_seed: int = 2017
    texture_amplitude: float = 0.05
    envelope_exponent: float = 4.0
    texture_height_mm: float = 0.5
    texture_cell_um: float = 12.0

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        if not 0 <= self.texture_amplitude <= 0.5:
            raise ConfigError("texture_amplitude must be in [0, 0.5]")
        if not self.texture_height_mm > 0 or not self.texture_cell_um > 0:
            raise ConfigError("texture_height_mm and texture_cell_um must be positive")
        heights = [p.height_mm for p in self.scatterers] + [self.texture_height_mm]
        if not self.distance_mm > max(heights):
            raise ConfigError(
                f"distance_mm={self.distance_mm} must exceed every cover-glass height ({max(heights)})"
            )

    def with_(self, **changes) -> "OpticsConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scatterers"] = [dict(s, pos_mm=list(s["pos_mm"])) for s in d["scatterers"]]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "OpticsConfig":
        d = dict(d)
        _reject_unknown(d, cls, "optics")
        try:
            return cls(**_build_parts(d))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "OpticsConfig":
        return cls.from_dict(json.loads(text))


def _build_parts(d: dict) -> dict:
    kwargs = {}
    if "sensor" in d:
        _reject_unknown(d["sensor"], SensorSpec, "optics.sensor")
        kwargs["sensor"] = SensorSpec(**d.pop("sensor"))
    if "grid" in d:
        _reject_unknown(d["grid"], SourceGrid, "optics.grid")
        kwargs["grid"] = SourceGrid(**d.pop("grid"))
    if "scatterers" in d:
        items = []
        for s in d.pop("scatterers"):
            _reject_unknown(s, DustScatterer, "optics.scatterers[]")
            items.append(DustScatterer(**s))
        kwargs["scatterers"] = tuple(items)
    kwargs.update(d)
    return kwargs


def _reject_unknown(d, klass, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    allowed = set(klass.__dataclass_fields__)
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def desk_config(**changes) -> OpticsConfig:
    """Default simulation scale: 96x72 px sensor crop, 16x16 grid, D = 343 mm."""
    return OpticsConfig().with_(**changes) if changes else OpticsConfig()


def full_sensor_config(**changes) -> OpticsConfig:
    """Full 640x480 sensor with a 32x32 panel, pixel pitch 6 um."""
    cfg = OpticsConfig(sensor=SensorSpec(640, 480, 6.0), grid=SourceGrid(32, 32, 6.1))
    return cfg.with_(**changes) if changes else cfg


@dataclass(frozen=True, eq=False)
class Frame:
    """Sensor image; ``data`` has shape (height_px, width_px)."""

    width_px: int
    height_px: int
    data: np.ndarray

    def __post_init__(self):
        a = np.array(self.data, dtype=np.float64).reshape(self.height_px, self.width_px)
        if np.any(a < 0):
            raise ValueError("frame intensities must be nonnegative")
        a.flags.writeable = False
        object.__setattr__(self, "data", a)

    @classmethod
    def from_vector(cls, v: np.ndarray, sensor: SensorSpec) -> "Frame":
        return cls(sensor.width_px, sensor.height_px, np.asarray(v).reshape(sensor.shape))

    @property
    def vector(self) -> np.ndarray:
        return self.data.ravel()

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)


# --------------------------------------------------------------------------
# geometry


def shadow_center(p: DustScatterer, s_mm: Sequence[float], distance_mm: float) -> tuple[float, float]:
    """Central projection of a particle onto the pixel plane from a point source.

    The source sits at lateral position ``s_mm`` and height ``distance_mm``;
    the particle at ``p.pos_mm`` and height ``p.height_mm``.
    """
    h = p.height_mm
    if not distance_mm > h:
        raise ConfigError(f"source distance {distance_mm} mm must exceed particle height {h} mm")
    k = h / (distance_mm - h)
    return (p.pos_mm[0] + (p.pos_mm[0] - s_mm[0]) * k, p.pos_mm[1] + (p.pos_mm[1] - s_mm[1]) * k)


def shadow_radius(p: DustScatterer, distance_mm: float) -> float:
    return p.radius_mm * distance_mm / (distance_mm - p.height_mm)


_C1 = np.uint64(0x9E3779B97F4A7C15)
_C2 = np.uint64(0xC2B2AE3D27D4EB4F)
_C3 = np.uint64(0x165667B19E3779F9)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _lattice_values(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Uniform [-1, 1) value per integer lattice point (splitmix64 hash)."""
    with np.errstate(over="ignore"):
        z = ix.astype(np.int64).view(np.uint64) * _C1
        z ^= iy.astype(np.int64).view(np.uint64) * _C2
        z ^= np.full(z.shape, seed & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64) * _C3
        z += _C1
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        z ^= z >> np.uint64(31)
    return (z >> np.uint64(11)).astype(np.float64) * (2.0 / 2**53) - 1.0


def _bspline_weights(t: np.ndarray) -> list[np.ndarray]:
    t2, t3 = t * t, t * t * t
    return [
        (1 - t) ** 3 / 6.0,
        (3 * t3 - 6 * t2 + 4) / 6.0,
        (-3 * t3 + 3 * t2 + 3 * t + 1) / 6.0,
        t3 / 6.0,
    ]


def texture_field(points_mm: np.ndarray, seed: int, cell_mm: float) -> np.ndarray:
    """Smooth pseudorandom field in [-1, 1] evaluated at lateral positions.

    Cubic B-spline interpolation of hashed lattice values; the field is a
    fixed function of position, independent of which points are queried.
    """
    pts = np.asarray(points_mm, dtype=np.float64)
    u = pts[..., 0] / cell_mm
    v = pts[..., 1] / cell_mm
    iu, iv = np.floor(u), np.floor(v)
    wu, wv = _bspline_weights(u - iu), _bspline_weights(v - iv)
    iu, iv = iu.astype(np.int64), iv.astype(np.int64)
    out = np.zeros(u.shape)
    for a in range(4):
        for b in range(4):
            out += wu[a] * wv[b] * _lattice_values(iu + (a - 1), iv + (b - 1), seed)
    return out


# --------------------------------------------------------------------------
# rendering


def _render_block(cfg: OpticsConfig, src: np.ndarray, pix: np.ndarray) -> np.ndarray:
    """PSFs for a block of source positions, shape (n_src, n_pix)."""
    D = cfg.distance_mm
    d = pix[None, :, :] - src[:, None, :]
    r2 = np.einsum("spk,spk->sp", d, d)
    cos = D / np.sqrt(r2 + D * D)
    out = cos**cfg.envelope_exponent / (D * D)

    if cfg.texture_amplitude > 0:
        f = cfg.texture_height_mm / D
        q = pix[None, :, :] - f * d
        out *= 1.0 + cfg.texture_amplitude * texture_field(q, cfg.texture_seed, cfg.texture_cell_um * 1e-3)

    w = cfg.sensor.pitch_mm
    for p in cfg.scatterers:
        k = p.height_mm / (D - p.height_mm)
        centre = np.asarray(p.pos_mm) + (np.asarray(p.pos_mm)[None, :] - src) * k
        dist = np.linalg.norm(pix[None, :, :] - centre[:, None, :], axis=-1)
        cover = np.clip((shadow_radius(p, D) - dist) / w + 0.5, 0.0, 1.0)
        out *= 1.0 - p.opacity * cover
    return out


def _check_index(index: int, grid: SourceGrid) -> int:
    if not 0 <= int(index) < grid.size:
        raise IndexError(f"source index {index} outside grid of {grid.size} sources")
    return int(index)


def render_psf(source_index: int, cfg: OpticsConfig) -> Frame:
    """Noiseless sensor image of one unit-intensity source."""
    j = _check_index(source_index, cfg.grid)
    if not cfg.grid.active()[j]:
        return Frame(cfg.sensor.width_px, cfg.sensor.height_px, np.zeros(cfg.sensor.shape))
    src = cfg.grid.positions_mm()[j : j + 1]
    data = _render_block(cfg, src, cfg.sensor.pixel_positions_mm())[0]
    return Frame.from_vector(data, cfg.sensor)


def render_psfs(cfg: OpticsConfig, indices: Iterable[int] | None = None, block: int | None = None) -> np.ndarray:
    """Noiseless PSFs as columns of an (n_pixels, n_sources) array."""
    grid = cfg.grid
    idx = np.arange(grid.size) if indices is None else np.array([_check_index(i, grid) for i in indices], dtype=int)
    pix = cfg.sensor.pixel_positions_mm()
    pos = grid.positions_mm()
    active = grid.active()
    if block is None:
        block = max(1, int(4_000_000 // max(1, pix.shape[0])))
    out = np.zeros((pix.shape[0], idx.size))
    for start in range(0, idx.size, block):
        sel = idx[start : start + block]
        out[:, start : start + sel.size] = _render_block(cfg, pos[sel], pix).T
    out[:, ~active[idx]] = 0.0
    return out


def render_scene(x: SceneVector, cfg: OpticsConfig, psfs: np.ndarray | None = None) -> Frame:
    """Noiseless image of a scene: the intensity-weighted sum of its PSFs.

    ``psfs`` may pass a precomputed :func:`render_psfs` matrix.
    """
    if x.grid != cfg.grid:
        raise DimensionError(
            f"scene grid {x.grid.rows}x{x.grid.cols} does not match config grid {cfg.grid.rows}x{cfg.grid.cols}"
        )
    lit = np.flatnonzero(x.values)
    if psfs is None:
        cols = render_psfs(cfg, lit)
        data = cols @ x.values[lit]
    else:
        data = psfs[:, lit] @ x.values[lit]
    return Frame.from_vector(np.maximum(data, 0.0), cfg.sensor)


# --------------------------------------------------------------------------
# sensor


def auto_exposure(clean_peak: float, target: float = SATURATION_TARGET) -> float:
    """Exposure scale putting the brightest clean pixel at ``target`` full scale."""
    if not clean_peak > 0:
        return 1.0
    return target / clean_peak


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def expose(clean: Frame, spec: SensorSpec, exposure_scale: float = 1.0, rng_seed=0) -> Frame:
    """One sensor readout: saturate, add shot and read noise, quantize.

    ``rng_seed`` is an int or a :class:`numpy.random.Generator` (which is
    advanced in place).
    """
    if not exposure_scale > 0:
        raise ConfigError("exposure_scale must be positive")
    v = _expose_array(clean.data, spec, exposure_scale, _rng(rng_seed))
    return Frame(clean.width_px, clean.height_px, v)


def _expose_array(clean: np.ndarray, spec: SensorSpec, exposure_scale: float, rng: np.random.Generator) -> np.ndarray:
    v = np.clip(clean * exposure_scale, 0.0, 1.0)
    if spec.shot_noise:
        well = 2.0**spec.bit_depth * 10.0
        v = rng.poisson(v * well) / well
    if spec.read_noise_sigma > 0:
        v = v + rng.normal(0.0, spec.read_noise_sigma, size=v.shape)
    v = np.clip(v, 0.0, 1.0)
    return np.round(v * spec.levels) / spec.levels


def capture_averaged(
    x: SceneVector,
    cfg: OpticsConfig,
    n_frames: int = 100,
    rng_seed=0,
    exposure_scale: float = 1.0,
    spec: SensorSpec | None = None,
    ideal: bool = False,
    clean: Frame | None = None,
) -> Frame:
    """Mean of ``n_frames`` independent exposures of a scene.

    With ``ideal=True`` the sensor is bypassed and the result is the clean
    frame times ``exposure_scale``. Frames draw sequentially from one
    generator seeded by ``rng_seed``.
    """
    if n_frames < 1:
        raise ConfigError("n_frames must be >= 1")
    spec = cfg.sensor if spec is None else spec
    if clean is None:
        clean = render_scene(x, cfg)
    if ideal:
        return Frame(clean.width_px, clean.height_px, clean.data * exposure_scale)
    rng = _rng(rng_seed)
    acc = np.zeros(clean.data.shape)
    for _ in range(n_frames):
        acc += _expose_array(clean.data, spec, exposure_scale, rng)
    return Frame(clean.width_px, clean.height_px, acc / n_frames)
