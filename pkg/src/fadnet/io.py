"""Disparity and image file codecs: PFM, KITTI 16-bit PNG, 8-bit RGB PNG."""

from __future__ import annotations

import io
import re
import zlib
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import FormatError
from .metrics import DisparityMap

_TOKEN = re.compile(rb"\S+")
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
KITTI_SCALE = 256.0


# ---------------------------------------------------------------------------
# PFM

def pfm_read(payload: bytes) -> DisparityMap:
    """Decode a grayscale ``Pf`` file; non-finite values are marked invalid."""
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.search(payload, pos)
        if m is None:
            raise FormatError("truncated PFM header", offset=len(payload))
        tokens.append(m)
        pos = m.end()
        if len(tokens) == 1 and m.group() != b"Pf":
            break
    magic = tokens[0]
    if magic.start() != 0 or magic.group() not in (b"Pf", b"PF"):
        raise FormatError(f"bad PFM magic {magic.group()[:8]!r}", offset=magic.start())
    if magic.group() == b"PF":
        raise FormatError("unsupported channels: colour PFM ('PF') is not a disparity map", offset=0)
    w_tok, h_tok, s_tok = tokens[1:4]
    try:
        width, height = int(w_tok.group()), int(h_tok.group())
    except ValueError:
        raise FormatError("bad PFM dimensions", offset=w_tok.start()) from None
    if width <= 0 or height <= 0:
        raise FormatError("PFM dimensions must be positive", offset=w_tok.start())
    try:
        scale = float(s_tok.group())
    except ValueError:
        raise FormatError("bad PFM scale", offset=s_tok.start()) from None
    if scale == 0 or not np.isfinite(scale):
        raise FormatError("PFM scale must be non-zero", offset=s_tok.start())
    start = s_tok.end() + 1  # exactly one whitespace byte ends the header
    need = 4 * width * height
    if len(payload) - start < need:
        raise FormatError(f"truncated PFM payload: need {need} bytes, have {max(0, len(payload) - start)}",
                          offset=len(payload))
    dtype = "<f4" if scale < 0 else ">f4"
    raster = np.frombuffer(payload, dtype=dtype, count=width * height, offset=start)
    values = raster.reshape(height, width)[::-1].astype(np.float32)
    return DisparityMap(values)


def pfm_write(disparity, scale: float = -1.0) -> bytes:
    """Encode as grayscale PFM, bottom row first; negative scale means little-endian."""
    values = disparity.values if isinstance(disparity, DisparityMap) else np.asarray(disparity)
    if values.ndim != 2:
        raise FormatError(f"PFM stores a single (h, w) channel, got shape {values.shape}")
    if scale == 0:
        raise FormatError("PFM scale must be non-zero")
    h, w = values.shape
    dtype = "<f4" if scale < 0 else ">f4"
    header = f"Pf\n{w} {h}\n{scale!r}\n".encode("ascii")
    return header + np.ascontiguousarray(values[::-1], dtype=dtype).tobytes()


# ---------------------------------------------------------------------------
# KITTI 16-bit PNG

def _png_header(payload: bytes) -> tuple[int, int]:
    if payload[:8] != PNG_SIGNATURE:
        raise FormatError("not a PNG file", offset=0)
    if len(payload) < 29 or payload[12:16] != b"IHDR":
        raise FormatError("missing PNG IHDR chunk", offset=8)
    bit_depth, colour_type = payload[24], payload[25]
    return bit_depth, colour_type


def kitti_png_read(payload: bytes) -> DisparityMap:
    """Disparity = stored / 256; stored 0 is an invalid pixel."""
    bit_depth, colour_type = _png_header(payload)
    if bit_depth != 16 or colour_type != 0:
        raise FormatError(f"KITTI disparity needs 16-bit grayscale PNG, got bit depth {bit_depth}, "
                          f"colour type {colour_type}", offset=24)
    try:
        with Image.open(io.BytesIO(payload)) as im:
            stored = np.array(im, dtype=np.uint16)
    except (OSError, zlib.error) as exc:
        raise FormatError(f"undecodable PNG payload: {exc}") from None
    valid = stored > 0
    return DisparityMap(stored.astype(np.float64) / KITTI_SCALE, valid)


def kitti_encode(disparity) -> np.ndarray:
    if isinstance(disparity, DisparityMap):
        values, valid = disparity.values, disparity.valid
    else:
        values = np.asarray(disparity, dtype=np.float64)
        valid = np.isfinite(values)
    stored = np.floor(np.where(valid, values, 0.0).astype(np.float64) * KITTI_SCALE + 0.5)
    stored = np.clip(stored, 0, 65535)
    return np.where(valid, stored, 0).astype(np.uint16)


def kitti_png_write(disparity) -> bytes:
    """Inverse of :func:`kitti_png_read` (round half up, invalid -> 0)."""
    stored = kitti_encode(disparity)
    buf = io.BytesIO()
    Image.fromarray(stored).save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# images and file helpers

def read_image(path) -> np.ndarray:
    """RGB image as a (3, h, w) float64 array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def read_disparity(path) -> DisparityMap:
    path = Path(path)
    payload = path.read_bytes()
    if path.suffix.lower() == ".pfm":
        return pfm_read(payload)
    return kitti_png_read(payload)


def write_pfm(path, disparity) -> None:
    Path(path).write_bytes(pfm_write(disparity))


def read_pfm(path) -> DisparityMap:
    return pfm_read(Path(path).read_bytes())
