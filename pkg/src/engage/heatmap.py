"""Pseudo-heatmap volumes from upper-body pose sequences.

A segment of ``n`` poses is sampled to ``T`` frames, cropped with a single
box for the whole segment and rendered as one Gaussian per joint and frame,
giving a ``(11, T, H, W)`` float32 volume.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AllJointsMissing, BadMagic, TruncatedFile, VersionMismatch
from .ingest import NUM_UPPER, UpperBodyPose

VOLUME_MAGIC = b"EGKV"
VOLUME_VERSION = 1


@dataclass(frozen=True)
class SamplerConfig:
    T: int = 16
    H: int = 56
    W: int = 56
    sigma: float = 0.6
    padding: float = 0.1
    # Limb (bone) channels are not rendered; the flag reserves the slot.
    limb_channels: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.H < 8 or self.W < 8:
            raise ValueError("H and W must be >= 8")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not 0 <= self.padding <= 1:
            raise ValueError("padding must lie in [0, 1]")
        if self.limb_channels:
            raise ValueError("limb channels are not supported")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (NUM_UPPER, self.T, self.H, self.W)


def uniform_sample_frames(n: int, T: int) -> list[int]:
    """Indices ``floor((i + 0.5) * n / T)`` for ``i`` in ``0..T-1``."""
    if n < 1 or T < 1:
        raise ValueError("n and T must be >= 1")
    return [((2 * i + 1) * n) // (2 * T) for i in range(T)]


def _as_array(segment) -> np.ndarray:
    if isinstance(segment, np.ndarray):
        arr = np.asarray(segment, dtype=np.float64)
    else:
        arr = np.stack([p.keypoints if isinstance(p, UpperBodyPose) else np.asarray(p, float)
                        for p in segment]) if len(segment) else np.zeros((0, NUM_UPPER, 3))
    if arr.ndim != 3 or arr.shape[1:] != (NUM_UPPER, 3):
        raise ValueError(f"segment must have shape (n, 11, 3), got {arr.shape}")
    return arr


def normalize_coords(segment: Sequence[UpperBodyPose] | np.ndarray,
                     config: SamplerConfig = SamplerConfig()) -> np.ndarray:
    """Map joint coordinates of a segment onto the ``W x H`` heatmap grid.

    Uses the union box of all visible joints over the segment, widened by
    ``padding`` of its size on every side and then along its shorter side
    (symmetrically) to the grid's aspect ratio. Returns an ``(n, 11, 2)``
    array; invisible joints get coordinates 0.
    """
    arr = _as_array(segment)
    visible = arr[:, :, 2] > 0
    if not visible.any():
        raise AllJointsMissing("no visible joint in segment")
    xy = arr[:, :, :2]
    pts = xy[visible]
    # work relative to the box corner so that pure translations cancel exactly
    origin = pts.min(axis=0)
    rel = xy - origin
    extent = pts.max(axis=0) - origin
    w, h = float(extent[0]), float(extent[1])
    gw, gh = config.W - 1, config.H - 1

    if w == 0 and h == 0:
        out = np.empty_like(rel)
        out[..., 0] = gw / 2
        out[..., 1] = gh / 2
        out[~visible] = 0
        return out

    x0, y0 = -config.padding * w, -config.padding * h
    bw, bh = w * (1 + 2 * config.padding), h * (1 + 2 * config.padding)
    if bw * gh > bh * gw:
        new_bh = bw * gh / gw
        y0 -= (new_bh - bh) / 2
        bh = new_bh
    else:
        new_bw = bh * gw / gh
        x0 -= (new_bw - bw) / 2
        bw = new_bw
    scale = gw / bw
    out = np.empty_like(rel)
    out[..., 0] = (rel[..., 0] - x0) * scale
    out[..., 1] = (rel[..., 1] - y0) * scale
    out[~visible] = 0
    return out


def joint_heatmap(x: float, y: float, c: float, config: SamplerConfig = SamplerConfig()) -> np.ndarray:
    """``c * exp(-((j - x)^2 + (i - y)^2) / (2 sigma^2))`` on the ``H x W`` grid."""
    if c == 0:
        return np.zeros((config.H, config.W))
    inv = 1.0 / (2.0 * config.sigma ** 2)
    gx = np.exp(-((np.arange(config.W) - x) ** 2) * inv)
    gy = np.exp(-((np.arange(config.H) - y) ** 2) * inv)
    return c * np.outer(gy, gx)


def build_volume(segment: Sequence[UpperBodyPose] | np.ndarray,
                 config: SamplerConfig = SamplerConfig()) -> np.ndarray:
    """Render a segment into an ``(11, T, H, W)`` float32 heatmap volume."""
    arr = _as_array(segment)
    if len(arr) == 0:
        raise AllJointsMissing("empty segment")
    coords = normalize_coords(arr, config)
    idx = uniform_sample_frames(len(arr), config.T)
    conf = arr[idx, :, 2].T                      # (K, T)
    xs = coords[idx, :, 0].T[..., None]          # (K, T, 1)
    ys = coords[idx, :, 1].T[..., None]
    inv = 1.0 / (2.0 * config.sigma ** 2)
    gx = np.exp(-((np.arange(config.W) - xs) ** 2) * inv)   # (K, T, W)
    gy = np.exp(-((np.arange(config.H) - ys) ** 2) * inv)   # (K, T, H)
    gy *= conf[..., None]
    vol = gy[..., :, None] * gx[..., None, :]
    return vol.astype(np.float32)


def save_volume(volume: np.ndarray, path: str | Path) -> None:
    vol = np.ascontiguousarray(volume, dtype="<f4")
    if vol.ndim != 4:
        raise ValueError("volume must be 4-D (K, T, H, W)")
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        fh.write(struct.pack("<H4I", VOLUME_VERSION, *vol.shape))
        fh.write(vol.tobytes())


def load_volume(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != VOLUME_MAGIC:
        raise BadMagic(f"{path}: not a volume file")
    if len(data) < 22:
        raise TruncatedFile(f"{path}: header truncated")
    version, *shape = struct.unpack_from("<H4I", data, 4)
    if version != VOLUME_VERSION:
        raise VersionMismatch(f"{path}: volume version {version}, expected {VOLUME_VERSION}")
    count = int(np.prod(shape))
    payload = data[22:]
    if len(payload) < 4 * count:
        raise TruncatedFile(f"{path}: payload truncated")
    return np.frombuffer(payload, dtype="<f4", count=count).reshape(shape).astype(np.float32)
