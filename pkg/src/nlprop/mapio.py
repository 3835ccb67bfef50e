"""File formats: the NLFM float-map container and 16-bit PNG depth.

NLFM is a minimal little-endian binary container for H x W x C float32
stacks (depth maps, confidence, affinity stacks, offset fields):

    bytes 0..3   magic "NLFM"
    bytes 4..5   version, u16
    bytes 6..17  H, W, C, each u32
    bytes 18..   H*W*C float32 payload, row-major, channel-fastest

PNG16 carries depth as 16-bit grayscale with depth = pixel / 256 meters
and pixel 0 meaning "no measurement" — the common interchange convention
for depth-completion datasets. Quantization error is at most 1/512 m.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image

from .grid import Field2D

MAGIC = b"NLFM"
VERSION = 1
_HEADER = struct.Struct("<4sHIII")

# Refuse to allocate for absurd headers (corrupt or adversarial files).
_MAX_ELEMENTS = 1 << 28


class MapFormatError(ValueError):
    """Base class for NLFM parsing failures."""


class BadMagic(MapFormatError):
    pass


class BadDimensions(MapFormatError):
    pass


class TruncatedPayload(MapFormatError):
    pass


def write_map(path: Union[str, Path], stack: np.ndarray) -> None:
    """Write an (H, W) or (H, W, C) array as float32 NLFM."""
    arr = np.asarray(stack, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected (H, W) or (H, W, C) data, got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1 or c < 1:
        raise ValueError(f"dimensions must be >= 1, got {arr.shape}")
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, h, w, c))
        fh.write(payload)


def read_map(path: Union[str, Path]) -> np.ndarray:
    """Read an NLFM file back as a float64 (H, W, C) array."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise TruncatedPayload(f"{path}: file shorter than the NLFM header")
        magic, version, h, w, c = _HEADER.unpack(head)
        if magic != MAGIC:
            raise BadMagic(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise BadMagic(f"{path}: unsupported version {version}")
        if h < 1 or w < 1 or c < 1:
            raise BadDimensions(f"{path}: dimensions must be >= 1, got {h}x{w}x{c}")
        if h * w * c > _MAX_ELEMENTS:
            raise BadDimensions(f"{path}: declared size {h}x{w}x{c} is implausible")
        payload = fh.read(h * w * c * 4)
        if len(payload) < h * w * c * 4:
            raise TruncatedPayload(
                f"{path}: truncated payload ({len(payload)} of {h * w * c * 4} bytes)"
            )
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return data.reshape(h, w, c)


def read_field(path: Union[str, Path]) -> Field2D:
    """Read a single-channel NLFM file as a Field2D."""
    stack = read_map(path)
    if stack.shape[2] != 1:
        raise BadDimensions(f"{path}: expected 1 channel, found {stack.shape[2]}")
    return Field2D(stack[:, :, 0])


def write_depth_png16(
    path: Union[str, Path],
    depth: Field2D,
    valid: np.ndarray = None,
    scale: float = 256.0,
) -> None:
    """Save depth as 16-bit PNG, pixel = round(depth * scale), 0 = invalid.

    Valid depths must fit the encoding: 0 <= depth <= 65535/scale. Pixels
    outside `valid` (when given) are written as 0.
    """
    values = depth.values
    if valid is None:
        valid = np.ones(depth.shape, dtype=bool)
    checked = values[valid]
    if checked.size and (checked.min() < 0.0 or checked.max() > 65535.0 / scale):
        raise ValueError(
            f"depth outside encodable range [0, {65535.0 / scale:.3f}] m"
        )
    pixels = np.where(valid, np.round(values * scale), 0.0).astype(np.uint16)
    Image.fromarray(pixels).save(path, format="PNG")


def read_depth_png16(
    path: Union[str, Path], scale: float = 256.0
) -> Tuple[Field2D, np.ndarray]:
    """Load a 16-bit depth PNG; returns (depth, valid mask)."""
    img = Image.open(path)
    pixels = np.asarray(img)
    if pixels.dtype != np.uint16:
        raise ValueError(f"{path}: expected 16-bit grayscale, got {pixels.dtype}")
    valid = pixels > 0
    return Field2D(pixels.astype(np.float64) / scale), valid
