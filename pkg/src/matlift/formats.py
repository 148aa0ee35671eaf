"""On-disk raster and point-cloud formats.

- RGB rasters: PNG (via Pillow) or binary PPM (P6).
- Float rasters (depth, similarity, heatmaps): ".simf", a little-endian
  binary with a 16-byte header {magic "MLF1", width u32, height u32,
  channels u32} followed by float32 data in row-major order.
- Masks and material-ID rasters: binary PGM (P5). Masks are 0/255. ID maps
  store ids 0..254 with 255 reserved for background (internal id -1).
- Similarity clouds: ".msc", header {magic "MSC1", count u64} then count
  records of (f32 x, f32 y, f32 z, f32 value, u32 view_idx).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError

SIMF_MAGIC = b"MLF1"
CLOUD_MAGIC = b"MSC1"

_CLOUD_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("value", "<f4"), ("view", "<u4")]
)


def write_simf(path: str | Path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3:
        raise ValidationError(f"float raster must be HxW or HxWxC, got shape {data.shape}")
    h, w, c = data.shape
    with open(path, "wb") as f:
        f.write(SIMF_MAGIC)
        f.write(struct.pack("<III", w, h, c))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_simf(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != SIMF_MAGIC:
            raise ValidationError(f"{path}: not a MLF1 float raster")
        w, h, c = struct.unpack("<III", header[4:])
        raw = f.read(w * h * c * 4)
    if len(raw) != w * h * c * 4:
        raise ValidationError(f"{path}: truncated float raster")
    data = np.frombuffer(raw, dtype="<f4")
    arr = data.reshape(h, w, c).astype(np.float32)
    return arr[:, :, 0] if c == 1 else arr


def pgm_bytes(data: np.ndarray) -> bytes:
    data = np.asarray(data, dtype=np.uint8)
    if data.ndim != 2:
        raise ValidationError(f"PGM raster must be 2D, got shape {data.shape}")
    h, w = data.shape
    return f"P5\n{w} {h}\n255\n".encode() + data.tobytes()


def write_pgm(path: str | Path, data: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(pgm_bytes(data))


def read_pgm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P5"):
        raise ValidationError(f"{path}: not a binary PGM")
    # header: magic, width, height, maxval, single whitespace, then data
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise ValidationError(f"{path}: unsupported PGM maxval {maxval}")
    data = np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise ValidationError(f"{path}: truncated PGM")
    return data.reshape(h, w).copy()


def write_mask_pgm(path: str | Path, mask: np.ndarray) -> None:
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def read_mask_pgm(path: str | Path) -> np.ndarray:
    return read_pgm(path) >= 128


def write_id_pgm(path: str | Path, ids: np.ndarray) -> None:
    """Material-ID raster; internal -1 (background) maps to 255 in the file."""
    ids = np.asarray(ids)
    if ids.max(initial=-1) > 254:
        raise ValidationError("material ids above 254 cannot be stored in PGM")
    out = np.where(ids < 0, 255, ids).astype(np.uint8)
    write_pgm(path, out)


def read_id_pgm(path: str | Path) -> np.ndarray:
    raw = read_pgm(path).astype(np.int32)
    raw[raw == 255] = -1
    return raw


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValidationError(f"RGB raster must be HxWx3, got shape {rgb.shape}")
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(rgb.tobytes())


def write_png(path: str | Path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path, format="PNG")


def read_image(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def cloud_bytes(points: np.ndarray, values: np.ndarray, view_idx: np.ndarray) -> bytes:
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if values.shape != (n,) or view_idx.shape != (n,):
        raise ValidationError("points, values and view_idx must have matching length")
    rec = np.empty(n, dtype=_CLOUD_DTYPE)
    rec["x"], rec["y"], rec["z"] = points[:, 0], points[:, 1], points[:, 2]
    rec["value"] = values
    rec["view"] = view_idx
    return CLOUD_MAGIC + struct.pack("<Q", n) + rec.tobytes()


def write_cloud(path: str | Path, points: np.ndarray, values: np.ndarray,
                view_idx: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(cloud_bytes(points, values, view_idx))


def read_cloud(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (points (N,3) f64, values (N,) f64, view_idx (N,) i64)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CLOUD_MAGIC:
            raise ValidationError(f"{path}: not a MSC1 cloud file")
        (n,) = struct.unpack("<Q", f.read(8))
        raw = f.read(n * _CLOUD_DTYPE.itemsize)
    if len(raw) != n * _CLOUD_DTYPE.itemsize:
        raise ValidationError(f"{path}: truncated cloud file")
    rec = np.frombuffer(raw, dtype=_CLOUD_DTYPE)
    points = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    return points, rec["value"].astype(np.float64), rec["view"].astype(np.int64)
