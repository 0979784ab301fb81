"""Spatial Insight Engine: external and internal orthographic depth slices.

Four views are rendered over the cloud's xy bounding box:

    P1  whole cloud, camera above, depth z_max - z
    P2  upper half,  camera below at z_mid, depth z - z_mid
    P3  lower half,  camera above at z_mid, depth z_mid - z
    P4  whole cloud, camera below, depth z - z_min

Each pixel keeps the point nearest its camera, i.e. the minimum depth.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .descriptors import FeatureMatrix
from .diagnostics import warn


@dataclass(frozen=True)
class SliceSpec:
    id: str
    subset: str
    camera: str
    origin: str


SLICE_SPECS = (
    SliceSpec("P1", "whole", "above", "z_max"),
    SliceSpec("P2", "upper-half", "below", "z_mid"),
    SliceSpec("P3", "lower-half", "above", "z_mid"),
    SliceSpec("P4", "whole", "below", "z_min"),
)
EXTERNAL_IDS = ("P1", "P4")


@dataclass(frozen=True, eq=False)
class ProjectionSlice:
    spec: SliceSpec
    resolution: int
    depth: np.ndarray  # (R, R); NaN where unoccupied
    occupied: np.ndarray
    xy_window: tuple
    z_range: tuple

    @property
    def z_extent(self):
        return self.z_range[1] - self.z_range[0]


@dataclass(frozen=True)
class InfoReport:
    I_top: float
    I_global: float
    z_mid: float
    z_min: float
    z_max: float


@dataclass(frozen=True, eq=False)
class DiscrepancyReport:
    indices: np.ndarray  # upper-half point indices the deltas belong to
    delta: np.ndarray
    mu: float
    sigma: float
    k: float
    flagged: np.ndarray


def split_at_mid(cloud):
    """Return ``(upper, lower, z_mid)``; points exactly at z_mid are upper."""
    z = cloud.points[:, 2]
    z_mid = (cloud.lo[2] + cloud.hi[2]) / 2.0
    upper = np.nonzero(z >= z_mid)[0]
    lower = np.nonzero(z < z_mid)[0]
    return upper, lower, float(z_mid)


def info_measures(cloud):
    z = cloud.points[:, 2]
    z_min, z_max = float(cloud.lo[2]), float(cloud.hi[2])
    z_mid = (z_min + z_max) / 2.0
    top = z_max - z
    i_top = float(np.sum(top))
    i_global = float(np.sum(top + np.maximum(0.0, z - z_mid)))
    return InfoReport(i_top, i_global, z_mid, z_min, z_max)


def depth_discrepancy(cloud, k=3.0):
    """Top-down vs. middle-up depth discrepancy test over the upper half.

    ``delta_i = (z_max - z_i) - (z_i - z_mid)``; a point is flagged when
    ``|delta_i - mean| > k * std``.
    """
    upper, _, z_mid = split_at_mid(cloud)
    z = cloud.points[upper, 2]
    delta = (cloud.hi[2] - z) - (z - z_mid)
    mu = float(delta.mean())
    sigma = float(delta.std())
    flagged = upper[np.abs(delta - mu) > k * sigma]
    return DiscrepancyReport(upper, delta, mu, sigma, float(k), flagged)


def _pixel_coords(cloud, resolution):
    lo, hi = cloud.lo, cloud.hi
    cols = []
    for axis in (0, 1):
        extent = hi[axis] - lo[axis]
        if extent > 0:
            c = np.floor((cloud.points[:, axis] - lo[axis]) / extent * resolution).astype(np.int64)
            c = np.clip(c, 0, resolution - 1)
        else:
            c = np.zeros(len(cloud), dtype=np.int64)
        cols.append(c)
    return cols[0], cols[1]


def render_slices(cloud, resolution=224, ids=None):
    """Rasterize the requested slices (default all four)."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    lo, hi = cloud.lo, cloud.hi
    if hi[0] == lo[0] or hi[1] == lo[1]:
        warn("sie", "DegenerateExtent", "zero xy extent; points collapse onto one raster row/column")
    ix, iy = _pixel_coords(cloud, resolution)
    pix = iy * resolution + ix
    upper, lower, z_mid = split_at_mid(cloud)
    z = cloud.points[:, 2]
    z_min, z_max = float(lo[2]), float(hi[2])
    subsets = {
        "P1": (slice(None), z_max - z),
        "P2": (upper, z[upper] - z_mid),
        "P3": (lower, z_mid - z[lower]),
        "P4": (slice(None), z - z_min),
    }
    window = (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))
    out = []
    for spec in SLICE_SPECS:
        if ids is not None and spec.id not in ids:
            continue
        sel, depth = subsets[spec.id]
        raster = kernels.zbuffer_min(pix[sel], np.maximum(depth, 0.0), resolution * resolution)
        raster = raster.reshape(resolution, resolution)
        occupied = np.isfinite(raster)
        raster[~occupied] = np.nan
        raster.flags.writeable = False
        occupied.flags.writeable = False
        out.append(ProjectionSlice(spec, resolution, raster, occupied, window, (z_min, z_max)))
    return out


def _slice_stats(s, bins):
    occ = s.occupied
    if not occ.any():
        return np.zeros(3 + 2 * bins)
    vals = s.depth[occ]
    hi = s.z_extent if s.z_extent > 0 else 1.0
    hist = np.histogram(vals, bins=bins, range=(0.0, hi))[0] / vals.size

    d = s.depth
    diffs = [np.abs(d[:, 1:] - d[:, :-1])[occ[:, 1:] & occ[:, :-1]],
             np.abs(d[1:, :] - d[:-1, :])[occ[1:, :] & occ[:-1, :]]]
    grads = np.concatenate(diffs)
    if grads.size:
        ghist = np.histogram(grads, bins=bins, range=(0.0, hi))[0] / grads.size
    else:
        ghist = np.zeros(bins)
    return np.concatenate([[occ.mean(), vals.mean(), vals.std()], hist, ghist])


def global_descriptor(slices, bins=16):
    """One row: per slice occupancy, depth mean/std, depth and gradient histograms."""
    row = np.concatenate([_slice_stats(s, bins) for s in slices])
    return FeatureMatrix(row[None, :], provenance="global", row_meaning="per-sample")


def global_width(n_slices, bins):
    return n_slices * (3 + 2 * bins)


def fuse_global(local, global_fm):
    """Z-score the global row across its entries and append it to every local row."""
    if global_fm.rows != 1:
        raise ValueError("global feature must have exactly one row")
    g = global_fm.values[0]
    std = g.std()
    z = np.zeros_like(g) if std <= 1e-12 * (abs(g.mean()) + 1.0) else (g - g.mean()) / std
    fused = np.hstack([local.values, np.broadcast_to(z, (local.rows, g.size))])
    return FeatureMatrix(fused, provenance="concat", row_meaning=local.row_meaning)


# ---------------------------------------------------------------------------
# visual output

def slice_to_pgm(s):
    """8-bit binary PGM bytes; depth min-max normalized over occupied pixels."""
    img = np.zeros((s.resolution, s.resolution), dtype=np.uint8)
    if s.occupied.any():
        vals = s.depth[s.occupied]
        lo, hi = vals.min(), vals.max()
        span = hi - lo
        scaled = (vals - lo) / span if span > 0 else np.zeros_like(vals)
        img[s.occupied] = np.round(scaled * 255).astype(np.uint8)
    header = f"P5\n{s.resolution} {s.resolution}\n255\n".encode("ascii")
    return header + img.tobytes()


def slice_stats_text(s):
    occ = s.occupied
    vals = s.depth[occ]
    lines = [
        f"id={s.spec.id}",
        f"subset={s.spec.subset}",
        f"camera={s.spec.camera}",
        f"resolution={s.resolution}",
        f"occupied={int(occ.sum())}",
        f"depth_min={vals.min():.9g}" if vals.size else "depth_min=nan",
        f"depth_max={vals.max():.9g}" if vals.size else "depth_max=nan",
        f"depth_mean={vals.mean():.9g}" if vals.size else "depth_mean=nan",
        f"depth_std={vals.std():.9g}" if vals.size else "depth_std=nan",
        "xy_window=" + ",".join(f"{v:.9g}" for v in s.xy_window),
    ]
    return "\n".join(lines) + "\n"


def write_slices(slices, out_dir, stem="slice"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for s in slices:
        pgm = out_dir / f"{stem}_{s.spec.id}.pgm"
        pgm.write_bytes(slice_to_pgm(s))
        txt = out_dir / f"{stem}_{s.spec.id}.txt"
        txt.write_text(slice_stats_text(s))
        written += [pgm, txt]
    return written
