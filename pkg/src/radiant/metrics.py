"""Evaluation metrics: depth error, normal angular error, Chamfer distance, conditioning."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, EmptyOverlap

SINGULAR_RCOND = 1e-12

#: Column order of the experiment result CSV.
RESULT_FIELDS = (
    "experiment_id",
    "seed",
    "noise_sigma_deg",
    "patch_model",
    "loss",
    "mu",
    "mean_depth_err",
    "median",
    "std",
    "valid_frac",
    "error",
)


@dataclass(frozen=True)
class ErrorSummary:
    mean: float
    median: float
    std: float
    count: int
    excluded: int = 0
    units: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(values, units: str = "", excluded: int = 0) -> ErrorSummary:
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise EmptyOverlap("no samples to summarise")
    # math.fsum keeps the mean independent of reduction order
    mean = math.fsum(values) / values.size
    std = math.sqrt(math.fsum((values - mean) ** 2) / values.size)
    return ErrorSummary(mean, float(np.median(values)), std, int(values.size), excluded, units)


def mean_depth_error(est, gt_depth, mask=None) -> ErrorSummary:
    """Absolute depth error over pixels valid in both rasters.

    ``est`` is a depth raster (NaN = invalid) or a :class:`~radiant.sweeping.DepthResult`.
    Pixels inside ``mask`` but invalid in the estimate are counted in ``excluded``.
    """
    depth = np.asarray(getattr(est, "depth", est), dtype=float)
    gt = np.asarray(gt_depth, dtype=float)
    if depth.shape != gt.shape:
        raise ValueError("depth rasters differ in shape")
    region = np.isfinite(gt) if mask is None else (np.asarray(mask, bool) & np.isfinite(gt))
    est_ok = np.isfinite(depth)
    if hasattr(est, "valid"):
        est_ok &= est.valid
    both = region & est_ok
    if not both.any():
        raise EmptyOverlap("estimate and ground truth share no valid pixel")
    return summarize(np.abs(depth[both] - gt[both]), "length", int((region & ~est_ok).sum()))


def angular_errors_deg(est_normals, gt_normals) -> np.ndarray:
    dots = np.sum(np.asarray(est_normals) * np.asarray(gt_normals), axis=-1)
    return np.degrees(np.arccos(np.clip(dots, -1.0, 1.0)))


def normal_mae(est_normals, gt_normals, mask=None) -> ErrorSummary:
    """Mean angular error in degrees."""
    err = angular_errors_deg(est_normals, gt_normals)
    if mask is not None:
        err = err[np.asarray(mask, bool)]
    if err.size == 0:
        raise EmptyOverlap("no pixel to compare")
    return summarize(err, "deg")


def nearest_distances(src, dst) -> np.ndarray:
    """Exact Euclidean distance from every point of ``src`` to its nearest point in ``dst``."""
    dist, _ = cKDTree(dst).query(src, k=1)
    return dist


def chamfer_distance(points_a, points_b) -> ErrorSummary:
    """Symmetric Chamfer distance: average of the two directed mean nearest-neighbour distances.

    ``mean`` is that average; ``median`` and ``std`` describe the pooled
    distances of both directions.
    """
    a = np.asarray(points_a, dtype=float).reshape(-1, 3)
    b = np.asarray(points_b, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloud("both point clouds must be non-empty")
    d_ab = nearest_distances(a, b)
    d_ba = nearest_distances(b, a)
    pooled = np.concatenate([d_ab, d_ba])
    mean = 0.5 * (math.fsum(d_ab) / len(a) + math.fsum(d_ba) / len(b))
    s = summarize(pooled, "length")
    return ErrorSummary(mean, s.median, s.std, s.count, 0, "length")


def condition_number(L) -> float:
    """Ratio of extreme singular values; ``math.inf`` for (numerically) singular matrices."""
    m = getattr(L, "matrix", L)
    s = np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False)
    if s[0] == 0 or s[-1] <= SINGULAR_RCOND * s[0]:
        return math.inf
    return float(s[0] / s[-1])
