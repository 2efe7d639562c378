"""Object plane: the emitter grid, test patterns and animations.

Scenes are flattened row-major with row 0 at the top of the grid, and the
grid is centred on the optical axis (row 0 sits at +y).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigError, DimensionError

__all__ = [
    "SourceGrid",
    "SceneVector",
    "VideoSequence",
    "PATTERN_NAMES",
    "load_bitmap",
    "make_pattern",
    "make_video",
    "index_of",
    "coords_of",
    "source_position_mm",
]


@dataclass(frozen=True)
class SourceGrid:
    """R x C grid of point emitters with uniform pitch.

    ``blocked_rows`` emulates a mounting fixture that hides the top rows of
    the panel; blocked sources never emit.
    """

    rows: int
    cols: int
    pitch_mm: float = 6.1
    blocked_rows: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if not self.pitch_mm > 0:
            raise ConfigError(f"pitch_mm must be positive, got {self.pitch_mm}")
        if not 0 <= self.blocked_rows < self.rows:
            raise ConfigError(f"blocked_rows must be in [0, rows), got {self.blocked_rows}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def extent_mm(self) -> tuple[float, float]:
        """(width, height) between outermost emitter centres."""
        return ((self.cols - 1) * self.pitch_mm, (self.rows - 1) * self.pitch_mm)

    def active(self) -> np.ndarray:
        """Boolean vector, False for sources in blocked rows."""
        mask = np.ones(self.shape, dtype=bool)
        mask[: self.blocked_rows] = False
        return mask.ravel()

    def positions_mm(self) -> np.ndarray:
        """(size, 2) array of lateral emitter positions, flattened order."""
        r, c = np.divmod(np.arange(self.size), self.cols)
        x = (c - (self.cols - 1) / 2.0) * self.pitch_mm
        y = ((self.rows - 1) / 2.0 - r) * self.pitch_mm
        return np.column_stack([x, y])


@dataclass(frozen=True, eq=False)
class SceneVector:
    """Nonnegative intensity per source, flattened row-major."""

    grid: SourceGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).ravel()
        if v.size != self.grid.size:
            raise DimensionError(
                f"scene has {v.size} values but grid {self.grid.rows}x{self.grid.cols} "
                f"needs {self.grid.size}"
            )
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("scene values must be finite and nonnegative")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def image(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def __eq__(self, other):
        if not isinstance(other, SceneVector):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    def __add__(self, other: "SceneVector") -> "SceneVector":
        if self.grid != other.grid:
            raise DimensionError("cannot add scenes on different grids")
        return SceneVector(self.grid, self.values + other.values)

    def scaled(self, a: float) -> "SceneVector":
        return SceneVector(self.grid, a * self.values)


@dataclass(frozen=True)
class VideoSequence:
    grid: SourceGrid
    frames: tuple[SceneVector, ...]
    frame_period_ms: float = 1000.0 / 76
    cycle_length: int = field(default=1)

    def __post_init__(self):
        if not self.frames:
            raise ValueError("video needs at least one frame")
        if any(f.grid != self.grid for f in self.frames):
            raise DimensionError("all video frames must share the sequence grid")

    def __len__(self):
        return len(self.frames)


def load_bitmap(name: str) -> np.ndarray:
    """Read a 0/1 text bitmap from the package assets ('#' lines are comments)."""
    text = resources.files("lensless.assets").joinpath(f"{name}.txt").read_text()
    rows = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ValueError(f"asset {name!r} is not a rectangular bitmap")
    return np.array([[ch == "1" for ch in r] for r in rows], dtype=np.float64)


_BITMAPS = {"letter-T": "letter_t", "stickman": "stickman"}
PATTERN_NAMES = ("letter-T", "stickman", "line-h(L)", "line-v(L)", "line-diag(L)", "full-on", "single(r,c)")

_LINE = re.compile(r"^line-(h|v|diag)\((\d+)\)$")
_SINGLE = re.compile(r"^single\((\d+),\s*(\d+)\)$")


def _place(bitmap: np.ndarray, grid: SourceGrid, row_offset: int = 0) -> np.ndarray:
    h, w = bitmap.shape
    if h > grid.rows or w > grid.cols:
        raise ConfigError(f"{h}x{w} bitmap does not fit a {grid.rows}x{grid.cols} grid")
    img = np.zeros(grid.shape)
    r0 = (grid.rows - h) // 2 + row_offset
    c0 = (grid.cols - w) // 2
    img[r0 : r0 + h, c0 : c0 + w] = bitmap
    return img


def make_pattern(name: str, grid: SourceGrid) -> SceneVector:
    """Binary test pattern.

    Names: ``letter-T``, ``stickman``, ``full-on``, ``single(r,c)`` and
    ``line-h(L)``, ``line-v(L)``, ``line-diag(L)``. Lines are centred; the
    horizontal one runs along row ``rows // 2``, the vertical one along
    column ``cols // 2``, the diagonal goes top-left to bottom-right.
    Sources in blocked rows are switched off.
    """
    img = np.zeros(grid.shape)
    if name in _BITMAPS:
        img = _place(load_bitmap(_BITMAPS[name]), grid)
    elif name == "full-on":
        img[:] = 1.0
    elif m := _SINGLE.match(name):
        r, c = int(m.group(1)), int(m.group(2))
        img.flat[index_of(r, c, grid)] = 1.0
    elif m := _LINE.match(name):
        kind, length = m.group(1), int(m.group(2))
        limit = {"h": grid.cols, "v": grid.rows, "diag": min(grid.rows, grid.cols)}[kind]
        if not 1 <= length <= limit:
            raise ConfigError(f"line-{kind} length {length} does not fit grid (max {limit})")
        if kind == "h":
            c0 = (grid.cols - length) // 2
            img[grid.rows // 2, c0 : c0 + length] = 1.0
        elif kind == "v":
            r0 = (grid.rows - length) // 2
            img[r0 : r0 + length, grid.cols // 2] = 1.0
        else:
            r0 = (grid.rows - length) // 2
            c0 = (grid.cols - length) // 2
            k = np.arange(length)
            img[r0 + k, c0 + k] = 1.0
    else:
        raise ConfigError(f"unknown pattern {name!r}; known: {', '.join(PATTERN_NAMES)}")
    return SceneVector(grid, img.ravel() * grid.active())


def _jump_offsets(grid: SourceGrid, height: int) -> list[int]:
    headroom = (grid.rows - height) // 2
    jump = min(3, headroom)
    if jump == 0:
        return [0]
    up = list(range(0, -jump, -1))  # 0, -1, ..., -(jump-1)
    down = list(range(-jump, 0))  # -jump, ..., -1
    return up + down


def make_video(name: str, grid: SourceGrid, n_frames: int) -> VideoSequence:
    """Deterministic periodic animation.

    ``jumping-stickman`` moves the stickman bitmap up and back down by at
    most three rows (less when the grid has no headroom); frame 0 is the
    resting pose, identical to ``make_pattern("stickman", grid)``.
    """
    if name != "jumping-stickman":
        raise ConfigError(f"unknown animation {name!r}")
    if n_frames < 1:
        raise ConfigError("n_frames must be >= 1")
    bitmap = load_bitmap("stickman")
    offsets = _jump_offsets(grid, bitmap.shape[0])
    active = grid.active()
    frames = tuple(
        SceneVector(grid, _place(bitmap, grid, offsets[k % len(offsets)]).ravel() * active)
        for k in range(n_frames)
    )
    return VideoSequence(grid, frames, cycle_length=len(offsets))


def index_of(r: int, c: int, grid: SourceGrid) -> int:
    if not (0 <= r < grid.rows and 0 <= c < grid.cols):
        raise IndexError(f"({r}, {c}) outside {grid.rows}x{grid.cols} grid")
    return r * grid.cols + c


def coords_of(index: int, grid: SourceGrid) -> tuple[int, int]:
    if not 0 <= index < grid.size:
        raise IndexError(f"index {index} outside grid of {grid.size} sources")
    return divmod(int(index), grid.cols)


def source_position_mm(index: int, grid: SourceGrid) -> tuple[float, float]:
    """Lateral (x, y) of a source, grid centred on the axis, +y toward row 0."""
    r, c = coords_of(index, grid)
    x = (c - (grid.cols - 1) / 2.0) * grid.pitch_mm
    y = ((grid.rows - 1) / 2.0 - r) * grid.pitch_mm
    return (x, y)
