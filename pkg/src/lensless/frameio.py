"""Frame files: binary PGM (P5) and the raw float LFR1 format."""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .optics import Frame

__all__ = ["write_pgm", "read_pgm", "pgm_bytes", "write_lfr", "read_lfr", "lfr_bytes", "read_frame", "image_frame"]

_LFR_MAGIC = b"LFR1"
_PGM_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def image_frame(img: np.ndarray) -> Frame:
    img = np.asarray(img, dtype=np.float64)
    return Frame(img.shape[1], img.shape[0], img)


def pgm_bytes(frame: Frame, maxval: int = 255) -> bytes:
    """P5 encoding of a [0, 1] frame; values are clipped and rounded."""
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    q = np.round(np.clip(frame.data, 0.0, 1.0) * maxval)
    dtype = np.uint8 if maxval == 255 else ">u2"
    head = f"P5\n{frame.width_px} {frame.height_px}\n{maxval}\n".encode()
    return head + q.astype(dtype).tobytes()


def write_pgm(frame: Frame, path, maxval: int = 255) -> None:
    Path(path).write_bytes(pgm_bytes(frame, maxval))


def read_pgm(path) -> tuple[Frame, int]:
    """Return (frame scaled to [0, 1], maxval)."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"P5":
        raise FormatError("bad magic: not a binary PGM (P5)")
    m = _PGM_HEADER.match(raw)
    if m is None:
        raise FormatError("malformed PGM header")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval not in (255, 65535):
        raise FormatError(f"unsupported PGM maxval {maxval}")
    dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
    n = w * h * (1 if maxval == 255 else 2)
    body = raw[m.end():]
    if len(body) < n:
        raise FormatError(f"truncated PGM payload: need {n} bytes, have {len(body)}")
    q = np.frombuffer(body[:n], dtype=dtype).reshape(h, w)
    return Frame(w, h, q.astype(np.float64) / maxval), maxval


def lfr_bytes(frame: Frame) -> bytes:
    head = _LFR_MAGIC + struct.pack("<II", frame.width_px, frame.height_px)
    return head + np.asarray(frame.data, dtype="<f8").tobytes(order="C")


def write_lfr(frame: Frame, path) -> None:
    Path(path).write_bytes(lfr_bytes(frame))


def read_lfr(path) -> Frame:
    raw = Path(path).read_bytes()
    if raw[:4] != _LFR_MAGIC:
        raise FormatError("bad magic")
    if len(raw) < 12:
        raise FormatError("truncated header")
    w, h = struct.unpack_from("<II", raw, 4)
    n = w * h
    if len(raw) - 12 != 8 * n:
        raise FormatError(f"truncated payload: {w}x{h} frame needs {8 * n} bytes, file holds {len(raw) - 12}")
    data = np.frombuffer(raw, dtype="<f8", count=n, offset=12).reshape(h, w)
    return Frame(w, h, data.astype(np.float64))


def read_frame(path) -> Frame:
    """Load a measurement from PGM or LFR1, sniffing the magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == _LFR_MAGIC:
        return read_lfr(path)
    if magic[:2] == b"P5":
        return read_pgm(path)[0]
    raise FormatError(f"{path}: unrecognized image format")
