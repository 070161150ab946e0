"""Binary cube and mask files, pixmap previews, and key=value manifests.

HSC1 cube:  b"HSC1", u32 H, u32 W, u32 B, then H*W*B little-endian float32
            in (row, column, band) order.
HBM1 mask:  b"HBM1", u32 H, u32 W, u8 K, then H*W bytes of powerset indices.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from ..encoding import K
from ..errors import FormatError

CUBE_MAGIC = b"HSC1"
MASK_MAGIC = b"HBM1"
_CUBE_HEADER = struct.Struct("<4sIII")
_MASK_HEADER = struct.Struct("<4sIIB")

# background, PP, PE, PP+PE, PET, PP+PET, PE+PET, all three
PALETTE = np.array(
    [
        [0, 0, 0],
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [240, 240, 240],
    ],
    dtype=np.uint8,
)


def cube_to_bytes(cube: np.ndarray) -> bytes:
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise FormatError(f"cube must be (H, W, B), got shape {cube.shape}")
    h, w, b = cube.shape
    return _CUBE_HEADER.pack(CUBE_MAGIC, h, w, b) + np.ascontiguousarray(cube, dtype="<f4").tobytes()


def cube_from_bytes(data: bytes, path=None) -> np.ndarray:
    if len(data) < _CUBE_HEADER.size:
        raise FormatError("truncated cube header", offset=len(data), path=path)
    magic, h, w, b = _CUBE_HEADER.unpack_from(data)
    if magic != CUBE_MAGIC:
        raise FormatError(f"bad cube magic {magic!r}", offset=0, path=path)
    need = _CUBE_HEADER.size + 4 * h * w * b
    if len(data) < need:
        raise FormatError(f"truncated cube payload: need {need} bytes, have {len(data)}", offset=len(data), path=path)
    if len(data) > need:
        raise FormatError("trailing bytes after cube payload", offset=need, path=path)
    arr = np.frombuffer(data, dtype="<f4", offset=_CUBE_HEADER.size, count=h * w * b)
    return arr.astype(np.float32).reshape(h, w, b)


def mask_to_bytes(mask: np.ndarray, k: int = K) -> bytes:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise FormatError(f"mask must be (H, W) powerset indices, got shape {mask.shape}")
    if mask.size and (mask.min() < 0 or mask.max() >= 2**k):
        raise FormatError(f"mask index outside [0, {2**k})")
    h, w = mask.shape
    return _MASK_HEADER.pack(MASK_MAGIC, h, w, k) + mask.astype(np.uint8).tobytes()


def mask_from_bytes(data: bytes, path=None) -> np.ndarray:
    if len(data) < _MASK_HEADER.size:
        raise FormatError("truncated mask header", offset=len(data), path=path)
    magic, h, w, k = _MASK_HEADER.unpack_from(data)
    if magic != MASK_MAGIC:
        raise FormatError(f"bad mask magic {magic!r}", offset=0, path=path)
    if not 1 <= k <= 8:
        raise FormatError(f"bit count {k} outside 1..8", offset=12, path=path)
    need = _MASK_HEADER.size + h * w
    if len(data) < need:
        raise FormatError(f"truncated mask payload: need {need} bytes, have {len(data)}", offset=len(data), path=path)
    if len(data) > need:
        raise FormatError("trailing bytes after mask payload", offset=need, path=path)
    mask = np.frombuffer(data, dtype=np.uint8, offset=_MASK_HEADER.size).reshape(h, w).copy()
    bad = np.flatnonzero(mask >= 2**k)
    if bad.size:
        raise FormatError(f"mask index {mask.flat[bad[0]]} >= 2**{k}", offset=_MASK_HEADER.size + int(bad[0]), path=path)
    return mask


def write_cube(path, cube: np.ndarray) -> None:
    Path(path).write_bytes(cube_to_bytes(cube))


def read_cube(path) -> np.ndarray:
    return cube_from_bytes(Path(path).read_bytes(), path=str(path))


def write_mask(path, mask: np.ndarray, k: int = K) -> None:
    Path(path).write_bytes(mask_to_bytes(mask, k))


def read_mask(path) -> np.ndarray:
    return mask_from_bytes(Path(path).read_bytes(), path=str(path))


# previews ------------------------------------------------------------------------------

def _write_ppm(path, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb, np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise FormatError(f"not a binary pixmap: {fields[0]!r}", offset=0, path=str(path))
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(data, np.uint8, offset=pos + 1, count=w * h * 3).reshape(h, w, 3)


def false_color(cube: np.ndarray, bands=None) -> np.ndarray:
    """Map three bands to RGB, each stretched over its own 1-99 percentile range."""
    B = cube.shape[2]
    bands = (B * 3 // 4, B // 2, B // 4) if bands is None else bands
    rgb = np.empty(cube.shape[:2] + (3,), dtype=np.uint8)
    for i, b in enumerate(bands):
        ch = cube[..., b].astype(np.float64)
        lo, hi = np.percentile(ch, [1, 99])
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        rgb[..., i] = np.clip((ch - lo) * scale, 0, 255).round().astype(np.uint8)
    return rgb


def mask_colors(mask: np.ndarray) -> np.ndarray:
    return PALETTE[np.asarray(mask, dtype=np.uint8)]


def export_view(cube: np.ndarray | None, mask: np.ndarray | None, stem, bands=None) -> list[Path]:
    """Write ``<stem>_rgb.ppm`` and/or ``<stem>_mask.ppm``; returns the written paths."""
    stem = Path(stem)
    written = []
    if cube is not None:
        p = stem.with_name(stem.name + "_rgb.ppm")
        _write_ppm(p, false_color(cube, bands))
        written.append(p)
    if mask is not None:
        p = stem.with_name(stem.name + "_mask.ppm")
        _write_ppm(p, mask_colors(mask))
        written.append(p)
    return written


# manifests -------------------------------------------------------------------------

def write_manifest(path, items: dict) -> None:
    lines = [f"{k}={v}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"manifest line {n} has no '='", path=str(path))
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def sha256_files(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()
