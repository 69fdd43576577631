"""Image and raw tensor I/O, heatmap rendering."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from ._colormap import VIRIDIS
from .perturb import NEAREST, as_image, upsample_mask

RAW_MAGIC = b"HSFT"
_RAW_HEADER = struct.Struct("<4sIII")  # magic, H, W, C


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        mode = "L" if img.mode in ("1", "L", "I", "I;16", "F") else "RGB"
        arr = np.asarray(img.convert(mode), dtype=np.float64) / 255.0
    return as_image(arr)


def write_png(path, image) -> None:
    """Write a ``[0, 1]`` float image as 8-bit PNG."""
    x = as_image(image)
    data = np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)
    if data.shape[2] == 1:
        Image.fromarray(data[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(data, mode="RGB").save(path)


def write_raw(path, tensor) -> None:
    x = as_image(tensor)
    h, w, c = x.shape
    with open(path, "wb") as fh:
        fh.write(_RAW_HEADER.pack(RAW_MAGIC, h, w, c))
        fh.write(x.astype("<f4").tobytes())


def read_raw(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < _RAW_HEADER.size:
        raise ValueError("raw tensor file shorter than its header")
    magic, h, w, c = _RAW_HEADER.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise ValueError(f"bad raw tensor magic {magic!r}")
    payload = np.frombuffer(blob, dtype="<f4", offset=_RAW_HEADER.size)
    if payload.size != h * w * c:
        raise ValueError(f"raw tensor payload has {payload.size} floats, header says {h * w * c}")
    return as_image(payload.astype(np.float64).reshape(h, w, c))


def load_input(path) -> np.ndarray:
    if Path(path).suffix.lower() == ".png":
        return read_png(path)
    return read_raw(path)


def heatmap_image(scores, grid, width: int, height: int, mode: str = NEAREST, color: bool = True) -> np.ndarray:
    """Upsampled scores, clamped at 0 and min-max normalised, as an RGB or grey image."""
    s = np.maximum(np.asarray(scores, dtype=np.float64), 0.0)
    span = s.max() - s.min()
    s = (s - s.min()) / span if span > 0 else np.zeros_like(s)
    grey = upsample_mask(s, grid, width, height, mode)
    if not color:
        return grey[:, :, None]
    idx = np.round(grey * 255).astype(int)
    return np.asarray(VIRIDIS, dtype=np.float64)[idx] / 255.0


def write_heatmap(path, scores, grid, width: int, height: int, color: bool = True) -> None:
    write_png(path, heatmap_image(scores, grid, width, height, color=color))
