"""CT/PET volume I/O and preprocessing: box crop, normalization, fusion, center crop.

Arrays are indexed ``(D, H, W)`` = ``(z, y, x)``. User-facing crop targets
and bounding-box CSVs use ``(x, y, z)`` order, i.e. ``(W, H, D)``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class Volume:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3:
            raise InputError(f"volume must be 3-D (D, H, W), got shape {data.shape}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise InputError(f"spacing must be 3 positive values, got {self.spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data):
        return Volume(data, self.spacing, self.origin)


@dataclass(frozen=True)
class BoundingBox:
    """Half-open voxel box ``[lo, hi)`` in ``(D, H, W)`` order."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo, hi = tuple(int(v) for v in self.lo), tuple(int(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise InputError("bounding box needs three axes")
        if any(a >= b for a, b in zip(lo, hi)):
            raise InputError(f"degenerate bounding box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_xyz(cls, x1, y1, z1, x2, y2, z2):
        return cls((z1, y1, x1), (z2, y2, x2))

    @property
    def size(self):
        return tuple(b - a for a, b in zip(self.lo, self.hi))


# ---------------------------------------------------------------- I/O

def save_volume(volume: Volume, data_path, sidecar_path):
    Path(data_path).write_bytes(np.ascontiguousarray(volume.data, dtype="<f4").tobytes())
    Path(sidecar_path).write_text(json.dumps(
        {"shape": list(volume.shape), "spacing": list(volume.spacing),
         "origin": list(volume.origin)}, indent=2))


def load_volume(data_path, sidecar_path) -> Volume:
    try:
        meta = json.loads(Path(sidecar_path).read_text())
        shape = tuple(int(s) for s in meta["shape"])
        spacing = tuple(meta.get("spacing", (1.0, 1.0, 1.0)))
        origin = tuple(meta.get("origin", (0.0, 0.0, 0.0)))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"malformed sidecar {sidecar_path}: {exc}") from exc
    if len(shape) != 3:
        raise InputError(f"sidecar {sidecar_path}: shape must have 3 entries")
    raw = Path(data_path).read_bytes()
    expected = 4 * int(np.prod(shape))
    if len(raw) != expected:
        raise InputError(f"{data_path}: size mismatch, expected {expected} bytes for shape "
                         f"{shape}, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(float)
    return Volume(data, spacing, origin)


def read_bbox_csv(path):
    """``PatientID,x1,y1,z1,x2,y2,z2`` -> {patient_id: BoundingBox}."""
    boxes = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                vals = [int(float(row[k])) for k in ("x1", "y1", "z1", "x2", "y2", "z2")]
            except (KeyError, ValueError) as exc:
                raise InputError(f"{path}: bad bounding-box row {row}: {exc}") from exc
            boxes[row["PatientID"]] = BoundingBox.from_xyz(*vals)
    return boxes


def write_bbox_csv(path, boxes):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["PatientID", "x1", "y1", "z1", "x2", "y2", "z2"])
        for pid, box in boxes.items():
            (z1, y1, x1), (z2, y2, x2) = box.lo, box.hi
            w.writerow([pid, x1, y1, z1, x2, y2, z2])


# ---------------------------------------------------------------- transforms

def _split(remainder):
    """Low/high split of a margin; odd remainders put the extra voxel low."""
    low = (remainder + 1) // 2
    return low, remainder - low


def crop_to_box(v: Volume, box: BoundingBox, target=(144, 144, 144)) -> Volume:
    """Extract ``box`` and zero-pad (or center-trim) it to ``target`` (W, H, D)."""
    if any(h > s for h, s in zip(box.hi, v.shape)) or any(lo < 0 for lo in box.lo):
        raise InputError(f"bounding box {box.lo}-{box.hi} outside volume of shape {v.shape}")
    region = v.data[tuple(slice(a, b) for a, b in zip(box.lo, box.hi))]
    tgt = tuple(reversed(target))
    out = np.zeros(tgt)
    src, dst = [], []
    for size, want in zip(region.shape, tgt):
        if size <= want:
            low, _ = _split(want - size)
            src.append(slice(0, size))
            dst.append(slice(low, low + size))
        else:
            low, _ = _split(size - want)
            src.append(slice(low, low + want))
            dst.append(slice(0, want))
    out[tuple(dst)] = region[tuple(src)]
    return v.with_data(out)


def normalize(v: Volume, method="minmax") -> Volume:
    x = v.data
    if method == "minmax":
        lo, hi = x.min(), x.max()
        if hi == lo:
            return v.with_data(np.zeros_like(x))
        return v.with_data((x - lo) / (hi - lo))
    if method == "zscore":
        sd = x.std()
        return v.with_data(np.zeros_like(x) if sd == 0 else (x - x.mean()) / sd)
    raise InputError(f"unknown normalization {method!r}")


def fuse(ct: Volume, pet: Volume) -> Volume:
    if ct.shape != pet.shape:
        raise InputError(f"cannot fuse volumes of shapes {ct.shape} and {pet.shape}")
    return ct.with_data((ct.data + pet.data) / 2.0)


def center_crop_offsets(shape, target=(80, 80, 50), offset=(0, 0, 0)):
    """Low-corner offsets in (W, H, D) order for a centered crop of a (D, H, W) shape."""
    src = tuple(reversed(shape))
    offs = []
    for s, t, o in zip(src, target, offset):
        if t > s:
            raise InputError(f"crop target {tuple(target)} exceeds source {src} (W, H, D)")
        start = _split(s - t)[0] + o
        if start < 0 or start + t > s:
            raise InputError(f"crop offset {tuple(offset)} leaves the volume")
        offs.append(start)
    return tuple(offs)


def center_crop(v: Volume, target=(80, 80, 50), offset=(0, 0, 0)) -> Volume:
    """Crop to ``target`` (W, H, D) around the center, optionally shifted by ``offset``."""
    ox, oy, oz = center_crop_offsets(v.shape, target, offset)
    tx, ty, tz = target
    return v.with_data(v.data[oz:oz + tz, oy:oy + ty, ox:ox + tx].copy())


@dataclass
class PreprocessConfig:
    box_target: tuple = (144, 144, 144)  # (W, H, D)
    crop_target: tuple = (80, 80, 50)  # (W, H, D)
    crop_offset: tuple = (0, 0, 0)
    method: str = "minmax"


def preprocess_pair(ct: Volume, pet: Volume, box: BoundingBox | None, cfg: PreprocessConfig):
    """Box crop -> normalize -> fuse -> center crop. Returns ``(ct, pet, fused)``."""
    out = []
    for v in (ct, pet):
        if box is not None:
            v = crop_to_box(v, box, cfg.box_target)
        out.append(normalize(v, cfg.method))
    fused = fuse(*out)
    return tuple(center_crop(v, cfg.crop_target, cfg.crop_offset) for v in (*out, fused))
