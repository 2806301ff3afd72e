"""Synthetic multi-view benchmark: a two-Gaussian height field seen by a camera ring.

World ``Z`` points away from the cameras; the surface is
``Z = base - sum_i a_i exp(-|(x, y) - c_i|^2 / (2 sigma_i^2))`` over the square
support ``|x|, |y| <= half_extent``, so bumps protrude towards the cameras.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import InsufficientViews
from .geometry import CameraIntrinsics, CameraPose, ViewMaps, look_at
from .reparam import tangent_frames

BENCHMARK_VERSION = "1"
SUPPORTED_VERSIONS = ("1",)


@dataclass(frozen=True)
class GaussianBump:
    amplitude: float
    center: tuple[float, float]
    sigma: float


@dataclass(frozen=True)
class GaussianSurface:
    bumps: tuple[GaussianBump, ...]
    base_depth: float = 0.0
    half_extent: float = 1.0

    def __post_init__(self):
        if any(b.sigma <= 0 for b in self.bumps):
            raise ValueError("bump sigmas must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianSurface":
        bumps = tuple(
            GaussianBump(float(b["amplitude"]), tuple(map(float, b["center"])), float(b["sigma"]))
            for b in d["bumps"]
        )
        return cls(bumps, float(d.get("base_depth", 0.0)), float(d.get("half_extent", 1.0)))

    @property
    def sigma_min(self) -> float:
        return min(b.sigma for b in self.bumps)

    @property
    def height_span(self) -> float:
        return sum(abs(b.amplitude) for b in self.bumps)

    @property
    def centroid(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.base_depth])

    def depth(self, x, y):
        """World ``Z`` of the surface above ``(x, y)``."""
        z = np.full(np.broadcast(x, y).shape, self.base_depth)
        for b in self.bumps:
            r2 = (x - b.center[0]) ** 2 + (y - b.center[1]) ** 2
            z = z - b.amplitude * np.exp(-r2 / (2 * b.sigma**2))
        return z

    def gradient(self, x, y):
        """Closed-form ``(dZ/dx, dZ/dy)``."""
        gx = np.zeros(np.broadcast(x, y).shape)
        gy = np.zeros_like(gx)
        for b in self.bumps:
            dx = x - b.center[0]
            dy = y - b.center[1]
            e = b.amplitude * np.exp(-(dx**2 + dy**2) / (2 * b.sigma**2)) / b.sigma**2
            gx = gx + e * dx
            gy = gy + e * dy
        return gx, gy

    def inside(self, x, y):
        return (np.abs(x) <= self.half_extent) & (np.abs(y) <= self.half_extent)


def surface_normal(surface: GaussianSurface, x, y) -> np.ndarray:
    """Outward unit normal, facing the cameras (negative world ``Z``)."""
    gx, gy = surface.gradient(x, y)
    n = np.stack([gx, gy, -np.ones_like(gx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


@dataclass(frozen=True)
class PiecewiseLinearReflectance:
    """Continuous albedo ramp along world ``x``; constant beyond the outer breakpoints."""

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.breakpoints) != len(self.values) or len(self.values) < 2:
            raise ValueError("need matching breakpoints and values")
        if any(b1 <= b0 for b0, b1 in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must increase")

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseLinearReflectance":
        return cls(tuple(map(float, d["breakpoints"])), tuple(map(float, d["values"])))

    def __call__(self, x, y=None):
        return np.interp(x, self.breakpoints, self.values)


def piecewise_linear_reflectance(x, y, fn: PiecewiseLinearReflectance | None = None):
    fn = fn or BenchmarkConfig.default().reflectance
    return fn(x, y)


def turntable_cameras(
    count: int,
    radius: float,
    elevation_deg: float,
    intr: CameraIntrinsics | None = None,
    *,
    target=(0.0, 0.0, 0.0),
    azimuth_start_deg: float = 54.0,
    span_deg: float = 72.0,
) -> list[CameraPose]:
    """Cameras on a ring around the vertical through ``target``, all looking at it.

    Elevation is measured from the surface plane, so 90 degrees is straight
    overhead. Azimuths are equally spaced over ``span_deg``.
    """
    if count < 2:
        raise InsufficientViews(f"need at least 2 cameras, got {count}")
    target = np.asarray(target, dtype=float)
    el = math.radians(elevation_deg)
    poses = []
    for k in range(count):
        phi = math.radians(azimuth_start_deg + k * span_deg / (count - 1))
        offset = radius * np.array(
            [math.cos(el) * math.cos(phi), math.cos(el) * math.sin(phi), -math.sin(el)]
        )
        tangent = np.array([-math.sin(phi), math.cos(phi), 0.0])
        poses.append(look_at(target + offset, target, tangent))
    return poses


def render_view(
    surface: GaussianSurface,
    reflectance,
    pose: CameraPose,
    intr: CameraIntrinsics,
    *,
    bisect_tol: float = 1e-10,
) -> ViewMaps:
    """Ray-cast the height field from one camera.

    Rays are marched in steps of at most a quarter of the smallest bump sigma
    between the two planes bounding the surface, then the first sign change is
    bisected to ``bisect_tol`` relative depth.
    """
    u, v = intr.pixel_grid()
    dirs = intr.rays(u, v) @ pose.rotation  # world directions with unit camera-frame depth
    origin = pose.center
    h, w = u.shape
    dz = dirs[..., 2]
    hits = dz > 1e-12
    safe_dz = np.where(hits, dz, 1.0)
    z_top = surface.base_depth - surface.height_span
    t0 = np.maximum((z_top - origin[2]) / safe_dz, 0.0)
    t1 = np.maximum((surface.base_depth - origin[2]) / safe_dz, 0.0) + 1e-9

    def g(t):
        p = origin + t[..., None] * dirs
        return p[..., 2] - surface.depth(p[..., 0], p[..., 1])

    dt = 0.25 * surface.sigma_min / np.linalg.norm(dirs, axis=-1)
    steps = int(np.ceil(np.max(np.where(hits, (t1 - t0) / dt, 0.0)))) + 1
    lo = t0.copy()
    g_lo = g(lo)
    hi = np.full((h, w), np.nan)
    found = hits & (g_lo >= 0)
    hi[found] = lo[found]
    for k in range(1, steps + 1):
        t = np.minimum(t0 + k * dt, t1)
        gt = g(t)
        new = hits & ~found & (gt >= 0)
        hi[new] = t[new]
        found |= new
        advance = ~found
        lo[advance] = t[advance]
        if found[hits].all():
            break

    a = np.where(found, lo, 0.0)
    b = np.where(found, hi, 1.0)
    while True:
        active = found & (b - a > bisect_tol * b)
        if not active.any():
            break
        mid = 0.5 * (a + b)
        gm = g(mid)
        up = active & (gm >= 0)
        b = np.where(up, mid, b)
        a = np.where(active & ~up, mid, a)
    t = np.where(found, b, np.nan)

    p = origin + np.where(found, t, 0.0)[..., None] * dirs
    mask = found & surface.inside(p[..., 0], p[..., 1])
    normals = np.where(mask[..., None], surface_normal(surface, p[..., 0], p[..., 1]), 0.0)
    refl = np.where(mask, reflectance(p[..., 0], p[..., 1]), 0.0)[..., None]
    depth = np.where(mask, t, np.nan)
    return ViewMaps(normals, refl, mask, depth)


@dataclass(frozen=True)
class NoiseSpec:
    normal_sigma_deg: float = 0.0
    reflectance_sigma_frac: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.normal_sigma_deg < 0 or self.reflectance_sigma_frac < 0:
            raise ValueError("noise levels must be nonnegative")


def _rng(spec: NoiseSpec, view_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed & (2**64 - 1), view_index, stream])


def perturb_normals(normals: np.ndarray, sigma_deg: float, rng: np.random.Generator):
    """Rotate each normal about a random perpendicular axis by a Gaussian angle."""
    n = np.asarray(normals, dtype=float).reshape(-1, 3)
    psi = rng.uniform(0.0, 2 * np.pi, len(n))
    theta = rng.normal(0.0, math.radians(sigma_deg), len(n))
    t1, t2 = tangent_frames(n)
    axis = np.cos(psi)[:, None] * t1 + np.sin(psi)[:, None] * t2
    out = n * np.cos(theta)[:, None] + np.cross(axis, n) * np.sin(theta)[:, None]
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out.reshape(np.shape(normals))


def add_normal_noise(maps: ViewMaps, spec: NoiseSpec, view_index: int = 0) -> ViewMaps:
    if spec.normal_sigma_deg == 0:
        return copy.deepcopy(maps)
    normals = maps.normals.copy()
    normals[maps.mask] = perturb_normals(
        normals[maps.mask], spec.normal_sigma_deg, _rng(spec, view_index, 0)
    )
    return ViewMaps(normals, maps.reflectance.copy(), maps.mask.copy(), maps.gt_depth)


def add_reflectance_noise(maps: ViewMaps, spec: NoiseSpec, view_index: int = 0) -> ViewMaps:
    if spec.reflectance_sigma_frac == 0:
        return copy.deepcopy(maps)
    refl = maps.reflectance.copy()
    inside = refl[maps.mask]
    std = spec.reflectance_sigma_frac * float(inside.max()) if inside.size else 0.0
    noise = _rng(spec, view_index, 1).normal(0.0, std, inside.shape)
    refl[maps.mask] = np.clip(inside + noise, 0.0, 1.0)
    return ViewMaps(maps.normals.copy(), refl, maps.mask.copy(), maps.gt_depth)


@dataclass
class BenchmarkConfig:
    surface: GaussianSurface
    reflectance: PiecewiseLinearReflectance
    intrinsics: CameraIntrinsics
    camera_count: int = 5
    camera_radius: float = 4.0
    elevation_deg: float = 60.0
    azimuth_start_deg: float = 54.0
    azimuth_span_deg: float = 72.0
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        version = str(d.get("version", BENCHMARK_VERSION))
        if version not in SUPPORTED_VERSIONS:
            raise ValueError(f"unsupported benchmark version {version!r}")
        cams = d["cameras"]
        intr = d["intrinsics"]
        return cls(
            surface=GaussianSurface.from_dict(d["surface"]),
            reflectance=PiecewiseLinearReflectance.from_dict(d["reflectance"]),
            intrinsics=CameraIntrinsics(
                float(intr["fx"]),
                float(intr["fy"]),
                float(intr["cx"]),
                float(intr["cy"]),
                int(intr["width"]),
                int(intr["height"]),
            ),
            camera_count=int(cams["count"]),
            camera_radius=float(cams["radius"]),
            elevation_deg=float(cams["elevation_deg"]),
            azimuth_start_deg=float(cams.get("azimuth_start_deg", 54.0)),
            azimuth_span_deg=float(cams.get("azimuth_span_deg", 72.0)),
            seed=int(d.get("seed", 0)),
            raw=copy.deepcopy(d),
        )

    @classmethod
    def default(cls) -> "BenchmarkConfig":
        text = resources.files("radiant").joinpath("data/default_benchmark.json").read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "version": BENCHMARK_VERSION,
            "surface": {
                "base_depth": self.surface.base_depth,
                "half_extent": self.surface.half_extent,
                "bumps": [
                    {"amplitude": b.amplitude, "center": list(b.center), "sigma": b.sigma}
                    for b in self.surface.bumps
                ],
            },
            "reflectance": {
                "breakpoints": list(self.reflectance.breakpoints),
                "values": list(self.reflectance.values),
            },
            "cameras": {
                "count": self.camera_count,
                "radius": self.camera_radius,
                "elevation_deg": self.elevation_deg,
                "azimuth_start_deg": self.azimuth_start_deg,
                "azimuth_span_deg": self.azimuth_span_deg,
            },
            "intrinsics": self.intrinsics.to_dict(),
            "seed": self.seed,
        }

    def with_resolution(self, size: int) -> "BenchmarkConfig":
        """Same scene and field of view rendered on a ``size x size`` raster."""
        k = size / self.intrinsics.width
        intr = CameraIntrinsics(
            self.intrinsics.fx * k,
            self.intrinsics.fy * k,
            (size - 1) / 2,
            (size - 1) / 2,
            size,
            size,
        )
        out = copy.copy(self)
        out.intrinsics = intr
        return out

    def z_range(self) -> tuple[float, float]:
        """Depth search bracket: camera distance +/- three times the surface height span."""
        span = 3.0 * self.surface.height_span
        return self.camera_radius - span, self.camera_radius + span

    def poses(self) -> list[CameraPose]:
        return turntable_cameras(
            self.camera_count,
            self.camera_radius,
            self.elevation_deg,
            self.intrinsics,
            target=self.surface.centroid,
            azimuth_start_deg=self.azimuth_start_deg,
            span_deg=self.azimuth_span_deg,
        )


@dataclass
class Benchmark:
    views: list[ViewMaps]
    poses: list[CameraPose]
    intrinsics: list[CameraIntrinsics]
    config: BenchmarkConfig | None = None

    def with_noise(self, spec: NoiseSpec) -> "Benchmark":
        views = [
            add_reflectance_noise(add_normal_noise(v, spec, i), spec, i)
            for i, v in enumerate(self.views)
        ]
        return Benchmark(views, self.poses, self.intrinsics, self.config)


def generate_benchmark(config: BenchmarkConfig | None = None) -> Benchmark:
    config = config or BenchmarkConfig.default()
    poses = config.poses()
    views = [render_view(config.surface, config.reflectance, p, config.intrinsics) for p in poses]
    return Benchmark(views, poses, [config.intrinsics] * len(poses), config)
