"""Local descriptors: FPS patches, FPFH at patch centers, a geometric patch
embedding, and the feature-matrix exchange format."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .diagnostics import warn
from .errors import MissingNormals, ParseError, RowMismatch, ShapeMismatch
from .geometry import NeighborIndex, bbox_diagonal, farthest_point_sample

PROVENANCES = ("fpfh", "patch-embed", "concat", "filtered", "imported", "global")
EMBED_DIMS = 24
FM_MAGIC = "ISMP-FM"
FM_VERSION = "v1"


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Dense (rows, dims) feature block plus where it came from."""

    values: np.ndarray
    provenance: str = "concat"
    row_meaning: str = "per-patch"
    notes: tuple = field(default=())

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, order="C")
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2:
            raise ValueError(f"feature values must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature values must be finite")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def dims(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class PatchConfig:
    m: int = 512
    k_max: int = 32
    r: float = 0.05
    relative_radius: bool = True

    def __post_init__(self):
        if self.m < 1 or self.k_max < 3 or not self.r > 0:
            raise ValueError("PatchConfig needs m >= 1, k_max >= 3, r > 0")

    def radius_for(self, cloud):
        return self.r * bbox_diagonal(cloud) if self.relative_radius else self.r


@dataclass(frozen=True)
class FpfhConfig:
    bins_per_feature: int = 11
    k_spfh: int = 16

    def __post_init__(self):
        if self.bins_per_feature < 2 or self.k_spfh < 2:
            raise ValueError("FpfhConfig needs bins >= 2 and k_spfh >= 2")


@dataclass(frozen=True)
class Patch:
    center_index: int
    member_indices: np.ndarray
    r: float


def build_patches(cloud, cfg):
    """FPS centers, each with the (at most ``k_max``) points within radius."""
    centers = farthest_point_sample(cloud, cfg.m, 0)
    radius = cfg.radius_for(cloud)
    index = NeighborIndex(cloud)
    patches = []
    for c in centers.tolist():
        members = index.radius(cloud.points[c], radius)
        members = np.concatenate(([c], members[members != c]))[: cfg.k_max]
        patches.append(Patch(c, members, radius))
    return patches


# ---------------------------------------------------------------------------
# FPFH

def _neighbor_table(index, points, rows, k):
    """k nearest neighbors of ``points[rows]`` excluding the row itself, -1 padded."""
    n = len(index)
    k = min(k, n - 1)
    table = np.full((len(rows), max(k, 0)), -1, dtype=np.int64)
    dist = np.zeros(table.shape)
    if k == 0:
        return table, dist
    d, nbr = index.knn(points[rows], k + 1)
    for i, r in enumerate(rows.tolist()):
        keep = nbr[i] != r
        if keep.all():
            keep[-1] = False
        table[i] = nbr[i][keep]
        dist[i] = d[i][keep]
    return table, dist


def fpfh(cloud, query_indices, cfg=FpfhConfig()):
    """Fast point feature histograms at ``query_indices``.

    Rows are ``3 * bins`` wide; each sub-histogram sums to 100 (or is all zero
    when a point has no usable neighbor pair).
    """
    if cloud.normals is None:
        raise MissingNormals("fpfh needs a cloud with normals")
    bins = cfg.bins_per_feature
    query = np.asarray(query_indices, dtype=np.int64)
    index = NeighborIndex(cloud)
    qtable, qdist = _neighbor_table(index, cloud.points, query, cfg.k_spfh)

    needed = np.unique(np.concatenate([query, qtable[qtable >= 0]]))
    ntable, _ = _neighbor_table(index, cloud.points, needed, cfg.k_spfh)
    spfh, skipped = kernels.spfh(cloud.points, cloud.normals, needed, ntable, bins)
    if skipped.any():
        warn("descriptors", "ZeroDistancePair",
             f"{int(skipped.sum())} degenerate neighbor pair(s) skipped in SPFH")
    slot = {int(p): i for i, p in enumerate(needed.tolist())}

    out = np.empty((len(query), 3 * bins), dtype=np.float64)
    for i, q in enumerate(query.tolist()):
        acc = np.zeros(3 * bins)
        k = 0
        for t, w in zip(qtable[i].tolist(), qdist[i].tolist()):
            if t < 0 or w <= 0.0:
                continue
            acc += spfh[slot[t]] / w
            k += 1
        row = spfh[slot[q]] + (acc / k if k else acc)
        out[i] = _percent_blocks(row, bins)
    return FeatureMatrix(out, provenance="fpfh")


def _percent_blocks(row, bins):
    blocks = row.reshape(3, bins)
    sums = blocks.sum(axis=1, keepdims=True)
    scaled = np.where(sums > 0, blocks * (100.0 / np.where(sums > 0, sums, 1.0)), 0.0)
    return scaled.reshape(-1)


# ---------------------------------------------------------------------------
# patch embedding

_RADIAL_BINS = 9


def _embed_one(points, center, radius, k_max):
    pts = points
    n = len(pts)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)
    evals = evals[::-1]
    evecs = evecs[:, ::-1]
    # eigh leaves ~eps * l1 of noise in zero eigenvalues (e.g. 3-point patches);
    # cbrt in the omnivariance would magnify it, so treat it as exact zero
    evals = np.where(evals <= 1e-12 * max(evals[0], 0.0), 0.0, evals)
    l1, l2, l3 = evals

    if l1 > 0:
        linearity = (l1 - l2) / l1
        planarity = (l2 - l3) / l1
        sphericity = l3 / l1
        anisotropy = (l1 - l3) / l1
        e = evals / evals.sum()
        e = e[e > 0]
        eigentropy = float(-(e * np.log(e)).sum())
    else:
        linearity = planarity = sphericity = anisotropy = eigentropy = 0.0
    omnivariance = float(np.cbrt(l1 * l2 * l3))

    scale = radius if radius > 0 else 1.0
    offset = centroid - center
    # |projection| on the eigenbasis keeps the descriptor free of eigenvector signs
    offset_local = np.abs(offset @ evecs) / scale

    normal = evecs[:, 2]
    side = float(offset @ normal)
    h = centered @ normal
    m2 = float(np.mean(h * h)) / scale**2
    m3 = float(np.mean(h * h * h)) / scale**3
    m3 = m3 if side > 0 else (-m3 if side < 0 else abs(m3))

    radial = np.linalg.norm(pts - center, axis=1) / scale
    bin_idx = np.minimum((radial * _RADIAL_BINS).astype(np.int64), _RADIAL_BINS - 1)
    density = np.bincount(bin_idx, minlength=_RADIAL_BINS) / n

    return np.concatenate([
        evals,
        [linearity, planarity, sphericity, omnivariance, anisotropy, eigentropy],
        offset_local,
        [n / k_max],
        [m2, m3],
        density,
    ])


def patch_embed(cloud, patches, k_max=None):
    """Deterministic 24-dim geometric descriptor per patch.

    Layout: 3 covariance eigenvalues (descending), 6 eigenvalue shape
    features, 3 centroid offsets in the eigenbasis, member count / k_max,
    2 depth-along-normal moments, 9-bin radial density.
    """
    if not patches:
        raise ValueError("patch_embed needs at least one patch")
    if k_max is None:
        k_max = max(len(p.member_indices) for p in patches)
    rows = [
        _embed_one(cloud.points[p.member_indices], cloud.points[p.center_index], p.r, k_max)
        for p in patches
    ]
    return FeatureMatrix(np.vstack(rows), provenance="patch-embed")


# ---------------------------------------------------------------------------
# exchange format and combination

def write_feature_matrix(fm, path_or_file, precision=17):
    text = format_feature_matrix(fm, precision)
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        Path(path_or_file).write_text(text)


def format_feature_matrix(fm, precision=17):
    spec = f"%.{precision}g"
    lines = [f"{FM_MAGIC} {FM_VERSION} {fm.rows} {fm.dims}"]
    lines += [" ".join(spec % v for v in row) for row in fm.values.tolist()]
    return "\n".join(lines) + "\n"


def parse_feature_matrix(lines, where="<feature matrix>", provenance="imported"):
    """Parse an ``ISMP-FM v1`` block from an iterator of lines.

    Consumes exactly the header plus ``rows`` body lines.
    """
    header = None
    for raw in lines:
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        header = s.split()
        break
    if header is None:
        raise ParseError(f"{where}: missing {FM_MAGIC} header")
    if len(header) != 4 or header[0] != FM_MAGIC or header[1] != FM_VERSION:
        raise ParseError(f"{where}: bad header {' '.join(header)!r}")
    try:
        rows, dims = int(header[2]), int(header[3])
    except ValueError:
        raise ParseError(f"{where}: bad header dimensions") from None
    if rows < 0 or dims < 1:
        raise ParseError(f"{where}: bad header dimensions")
    values = np.empty((rows, dims))
    for i in range(rows):
        raw = next(lines, None)
        if raw is None:
            raise ParseError(f"{where}: expected {rows} rows, got {i}")
        tokens = raw.split()
        if len(tokens) != dims:
            raise ParseError(f"{where}: row {i} has {len(tokens)} values, expected {dims}")
        try:
            values[i] = [float(t) for t in tokens]
        except ValueError:
            raise ParseError(f"{where}: row {i} is not numeric") from None
        if not np.all(np.isfinite(values[i])):
            raise ParseError(f"{where}: row {i} has a non-finite value")
    return FeatureMatrix(values, provenance=provenance)


def import_embeddings(path, expected_rows):
    path = Path(path)
    lines = iter(path.read_text().splitlines())
    fm = parse_feature_matrix(lines, str(path))
    if any(ln.strip() for ln in lines):
        raise ParseError(f"{path}: trailing data after {fm.rows} rows")
    if fm.rows != expected_rows:
        raise ShapeMismatch(f"{path}: {fm.rows} rows, expected {expected_rows}")
    return fm


def zscore_columns(values):
    """Per-column z-score; near-constant columns map to 0."""
    values = np.asarray(values, dtype=np.float64)
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    flat = std <= 1e-12 * (np.abs(mean) + 1.0)
    std = np.where(flat, 1.0, std)
    out = (values - mean) / std
    out[:, flat] = 0.0
    return out


def concat_features(parts):
    """Z-score every block column-wise (within this sample), then hstack."""
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to concatenate")
    rows = parts[0].rows
    for p in parts[1:]:
        if p.rows != rows:
            raise RowMismatch(f"row counts differ: {rows} vs {p.rows}")
    return FeatureMatrix(
        np.hstack([zscore_columns(p.values) for p in parts]),
        provenance="concat",
        row_meaning=parts[0].row_meaning,
    )
