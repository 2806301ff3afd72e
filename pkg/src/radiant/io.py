"""Serialisation of rasters (PFM), cameras (JSON), point clouds (PLY) and results (CSV).

PFM files are written little-endian (scale -1.0) with rows stored bottom to top,
as the format prescribes.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    FiniteRequired,
    MalformedHeader,
    NonRigidRotation,
    SchemaError,
    TruncatedData,
    UnsupportedScale,
)
from .geometry import CameraIntrinsics, CameraPose

_DIMS = re.compile(rb"^\s*(\d+)\s+(\d+)\s*$")


@dataclass
class PfmImage:
    data: np.ndarray  # (H, W) or (H, W, 3) float32, top row first
    scale: float = -1.0

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]


def write_pfm(path, image) -> None:
    data = image.data if isinstance(image, PfmImage) else np.asarray(image)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    if data.ndim not in (2, 3) or (data.ndim == 3 and data.shape[2] != 3):
        raise ValueError("PFM holds H x W or H x W x 3 rasters")
    if not np.all(np.isfinite(data)):
        raise FiniteRequired("PFM data must be finite")
    arr = np.ascontiguousarray(np.flipud(data).astype("<f4"))
    header = b"Pf\n" if data.ndim == 2 else b"PF\n"
    header += f"{data.shape[1]} {data.shape[0]}\n-1.0\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(arr.tobytes())


def read_pfm(path) -> PfmImage:
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag == b"PF":
            channels = 3
        elif tag == b"Pf":
            channels = 1
        else:
            raise MalformedHeader(f"{path}: unknown PFM tag {tag!r}")
        m = _DIMS.match(f.readline())
        if not m:
            raise MalformedHeader(f"{path}: bad dimension line")
        width, height = int(m.group(1)), int(m.group(2))
        try:
            scale = float(f.readline().strip())
        except ValueError as exc:
            raise MalformedHeader(f"{path}: bad scale line") from exc
        if scale == 0 or not math.isfinite(scale):
            raise UnsupportedScale(f"{path}: scale {scale}")
        dtype = "<f4" if scale < 0 else ">f4"
        count = width * height * channels
        buf = f.read(count * 4)
    if len(buf) < count * 4:
        raise TruncatedData(f"{path}: expected {count * 4} bytes, got {len(buf)}")
    data = np.frombuffer(buf, dtype=dtype).astype(np.float32)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return PfmImage(np.flipud(data.reshape(shape)).copy(), scale)


def write_ply_points(path, points, quality=None) -> None:
    """ASCII PLY point cloud with an optional per-vertex ``quality`` scalar."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise FiniteRequired("point coordinates must be finite")
    if quality is not None:
        quality = np.asarray(quality, dtype=float).ravel()
        if len(quality) != len(pts):
            raise ValueError("one quality value per point is required")
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if quality is not None:
        lines.append("property double quality")
    lines.append("end_header")
    for i, p in enumerate(pts):
        row = [repr(float(c)) for c in p]
        if quality is not None:
            row.append(repr(float(quality[i])))
        lines.append(" ".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ply_points(path):
    """Read back a file produced by :func:`write_ply_points`; returns ``(points, quality)``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    end = lines.index("end_header")
    n = int(next(l for l in lines if l.startswith("element vertex")).split()[-1])
    has_q = "property double quality" in lines[:end]
    body = np.array([[float(x) for x in l.split()] for l in lines[end + 1 : end + 1 + n]])
    body = body.reshape(n, 4 if has_q else 3)
    return body[:, :3], (body[:, 3] if has_q else None)


def camera_to_dict(intr: CameraIntrinsics, pose: CameraPose) -> dict:
    d = intr.to_dict()
    d["rotation"] = [float(x) for x in pose.rotation.ravel()]
    d["translation"] = [float(x) for x in pose.translation]
    return d


def write_cameras(path, cameras) -> None:
    doc = {"cameras": [camera_to_dict(i, p) for i, p in cameras]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt


def parse_camera(d: dict) -> tuple[CameraIntrinsics, CameraPose]:
    try:
        intr = CameraIntrinsics(
            float(d["fx"]),
            float(d["fy"]),
            float(d["cx"]),
            float(d["cy"]),
            int(d["width"]),
            int(d["height"]),
        )
        R = np.array(d["rotation"], dtype=float)
        t = np.array(d["translation"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad camera entry: {exc}") from exc
    except Exception as exc:  # invalid intrinsics
        raise SchemaError(str(exc)) from exc
    if R.size != 9 or t.size != 3:
        raise SchemaError("rotation needs 9 numbers and translation 3")
    R = R.reshape(3, 3)
    if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1) > 1e-6:
        raise NonRigidRotation("camera rotation is not a proper rotation")
    return intr, CameraPose(_orthonormalize(R), t)


def read_cameras(path) -> list[tuple[CameraIntrinsics, CameraPose]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    entries = doc.get("cameras") if isinstance(doc, dict) else doc
    if not isinstance(entries, list) or not entries:
        raise SchemaError(f"{path}: expected a non-empty camera list")
    return [parse_camera(e) for e in entries]


def write_results_csv(path, rows, fields) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(fields), lineterminator="\r\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in fields})


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p


MANIFEST_NAME = "benchmark.json"
CAMERAS_NAME = "cameras.json"
MANIFEST_VERSIONS = ("1",)
_RASTERS = ("normals", "reflectance", "mask", "gt_depth")


@dataclass
class BenchmarkManifest:
    version: str
    config: dict
    seed: int
    files: list
    has_normals: bool = True

    def to_dict(self) -> dict:
        return {"version": self.version, "config": self.config, "seed": self.seed, "files": self.files}


def _raster_name(kind: str, index: int) -> str:
    return f"{kind}_{index:02d}.pfm"


def write_benchmark(out_dir, views, cameras, config: dict, seed: int, noise: dict | None = None):
    """Write per-view PFM rasters, ``cameras.json`` and the ``benchmark.json`` manifest.

    Masked-out texels are stored as zeros so every raster is finite.
    """
    out = ensure_dir(out_dir)
    files = []
    for i, maps in enumerate(views):
        m = maps.mask
        rasters = {
            "normals": np.where(m[..., None], maps.normals, 0.0),
            "reflectance": np.where(m[..., None], maps.reflectance, 0.0),
            "mask": m.astype(np.float32),
        }
        if maps.gt_depth is not None:
            rasters["gt_depth"] = np.where(m, maps.gt_depth, 0.0)
        for kind, data in rasters.items():
            if kind == "reflectance" and data.shape[2] == 1:
                data = data[..., 0]
            name = _raster_name(kind, i)
            write_pfm(out / name, data)
            files.append(name)
    write_cameras(out / CAMERAS_NAME, cameras)
    files.append(CAMERAS_NAME)
    doc = BenchmarkManifest("1", config, int(seed), files).to_dict()
    if noise is not None:
        doc["noise"] = noise
    write_json(out / MANIFEST_NAME, doc)
    return out / MANIFEST_NAME


def read_benchmark(path):
    """Load a benchmark directory; returns ``(views, cameras, manifest)``."""
    from .geometry import ViewMaps

    root = Path(path)
    try:
        doc = json.loads((root / MANIFEST_NAME).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{root / MANIFEST_NAME}: {exc}") from exc
    version = str(doc.get("version"))
    if version not in MANIFEST_VERSIONS:
        raise SchemaError(f"unsupported benchmark version {version!r}")
    manifest = BenchmarkManifest(version, doc.get("config", {}), int(doc.get("seed", 0)), doc["files"])
    for name in manifest.files:
        if not (root / name).is_file():
            raise FileNotFoundError(root / name)
    cameras = read_cameras(root / CAMERAS_NAME)
    views = []
    for i in range(len(cameras)):
        present = {k: (root / _raster_name(k, i)) for k in _RASTERS if (root / _raster_name(k, i)).is_file()}
        if "mask" not in present:
            raise SchemaError(f"view {i} has no mask raster")
        mask = read_pfm(present["mask"]).data > 0.5
        h, w = mask.shape
        normals = (
            read_pfm(present["normals"]).data.astype(float)
            if "normals" in present
            else np.zeros((h, w, 3))
        )
        refl = (
            read_pfm(present["reflectance"]).data.astype(float)
            if "reflectance" in present
            else np.ones((h, w))
        )
        depth = None
        if "gt_depth" in present:
            depth = np.where(mask, read_pfm(present["gt_depth"]).data.astype(float), np.nan)
        if "normals" in present:
            # stored as float32: restore unit length
            norm = np.linalg.norm(normals, axis=-1, keepdims=True)
            normals = np.where(norm > 0, normals / np.where(norm > 0, norm, 1.0), 0.0)
        views.append(ViewMaps(normals, refl, mask, depth))
    manifest.has_normals = all((root / _raster_name("normals", i)).is_file() for i in range(len(cameras)))
    return views, cameras, manifest
