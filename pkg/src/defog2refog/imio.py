"""PNG and raw depth-grid I/O.

PNGs are 8- or 16-bit and map linearly onto ``[0, 1]``. The raw grid format
is a 16-byte little-endian header (``b"DPTH"``, u32 height, u32 width, u32
reserved = 0) followed by ``height * width`` float32 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import cv2
import numpy as np

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
DPTH_MAGIC = b"DPTH"
_DPTH_HEADER = struct.Struct("<4sIII")


class ImageDecodeError(ValueError):
    pass


def list_images(directory: str | Path) -> list[Path]:
    """Image files in ``directory`` in lexicographic order."""
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def _to_unit(raw: np.ndarray) -> np.ndarray:
    if raw.dtype == np.uint8:
        return raw.astype(np.float64) / 255.0
    if raw.dtype == np.uint16:
        return raw.astype(np.float64) / 65535.0
    raise ImageDecodeError(f"unsupported pixel type {raw.dtype}")


def read_image(path: str | Path) -> np.ndarray:
    """Read an image as ``H x W x 3`` RGB float64 in ``[0, 1]``."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageDecodeError(f"cannot decode image {path}")
    img = _to_unit(raw)
    if img.ndim == 2:
        return np.repeat(img[..., None], 3, axis=2)
    if img.shape[2] == 4:
        img = img[..., :3]
    return np.ascontiguousarray(img[..., ::-1])


def quantize(image: np.ndarray, bit_depth: int = 8) -> np.ndarray:
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    scale = 255 if bit_depth == 8 else 65535
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    return np.round(np.clip(image, 0.0, 1.0) * scale).astype(dtype)


def write_image(path: str | Path, image: np.ndarray, bit_depth: int = 8) -> None:
    """Write an RGB ``[0, 1]`` image (or single-channel map) as PNG."""
    q = quantize(np.asarray(image, dtype=np.float64), bit_depth)
    if q.ndim == 3:
        q = q[..., ::-1]
    if not cv2.imwrite(str(path), np.ascontiguousarray(q)):
        raise OSError(f"failed to write {path}")


def write_dpth(path: str | Path, grid: np.ndarray) -> None:
    grid = np.asarray(grid, dtype="<f4")
    if grid.ndim != 2:
        raise ValueError("DPTH grids are two-dimensional")
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(_DPTH_HEADER.pack(DPTH_MAGIC, h, w, 0))
        fh.write(np.ascontiguousarray(grid).tobytes())


def read_dpth(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _DPTH_HEADER.size:
        raise ValueError(f"{path}: truncated DPTH header")
    magic, h, w, _ = _DPTH_HEADER.unpack_from(data)
    if magic != DPTH_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _DPTH_HEADER.size + 4 * h * w
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=_DPTH_HEADER.size).reshape(h, w).astype(np.float64)


def read_depth(path: str | Path) -> np.ndarray:
    """Depth from a ``.dpth`` grid or a single-channel PNG (linear, [0, 1])."""
    path = Path(path)
    if path.suffix.lower() == ".dpth":
        return read_dpth(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageDecodeError(f"cannot decode depth map {path}")
    depth = _to_unit(raw)
    if depth.ndim == 3:
        depth = depth[..., 0]
    return depth


def write_airlight(path: str | Path, a) -> None:
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size != 3:
        raise ValueError("airlight has three components")
    Path(path).write_text(" ".join(repr(float(v)) for v in a) + "\n")


def read_airlight(path: str | Path) -> np.ndarray:
    values = [float(v) for v in Path(path).read_text().split()]
    if len(values) != 3:
        raise ValueError(f"{path}: expected 3 airlight values, found {len(values)}")
    return np.array(values)
