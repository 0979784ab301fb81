"""Point-cloud data model, text I/O, neighbor search, sampling and normals."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .diagnostics import warn
from .errors import BadCount, EmptyCloud, ParseError


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered, immutable set of 3D points with optional unit normals."""

    points: np.ndarray
    normals: np.ndarray | None = None
    lo: np.ndarray = field(init=False, repr=False)
    hi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, order="C")
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if pts.shape[0] == 0:
            raise EmptyCloud("point cloud has no points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.array(self.normals, dtype=np.float64, order="C")
            if nrm.shape != pts.shape:
                raise ValueError("normals must match points in shape")
            if not np.all(np.abs(np.linalg.norm(nrm, axis=1) - 1.0) <= 1e-6):
                raise ValueError("normals must be unit length")
            nrm.flags.writeable = False
            object.__setattr__(self, "normals", nrm)
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def __len__(self):
        return self.points.shape[0]

    @property
    def bounds(self):
        return self.lo, self.hi

    def with_normals(self, normals):
        return PointCloud(self.points, normals)

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.points[idx], None if self.normals is None else self.normals[idx]
        )


def bbox_diagonal(cloud):
    return float(np.linalg.norm(cloud.hi - cloud.lo))


# ---------------------------------------------------------------------------
# file I/O

def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in ("xyz", "ply"):
            raise ValueError(f"unknown cloud format {fmt!r}")
        return fmt
    return "ply" if Path(path).suffix.lower() == ".ply" else "xyz"


def _parse_floats(tokens, where):
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"{where}: not a number in {' '.join(tokens)!r}") from None
    if not all(np.isfinite(values)):
        raise ParseError(f"{where}: non-finite coordinate")
    return values


def load_cloud(path, fmt=None):
    """Read an ``xyz`` text or ASCII ``ply`` file into a :class:`PointCloud`."""
    path = Path(path)
    text = path.read_text()
    if _infer_format(path, fmt) == "ply":
        pts = _parse_ply(text, path)
    else:
        pts = _parse_xyz(text, path)
    if not pts:
        raise EmptyCloud(f"{path}: no points")
    return PointCloud(np.array(pts, dtype=np.float64))


def _parse_xyz(text, path):
    pts = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 values, got {len(tokens)}")
        pts.append(_parse_floats(tokens, f"{path}:{lineno}"))
    return pts


_PLY_FLOAT_TYPES = {"float", "double", "float32", "float64"}


def _parse_ply(text, path):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}: missing 'ply' magic")
    count = None
    props = []
    body_start = None
    for i, raw in enumerate(lines[1:], 1):
        tokens = raw.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        head = tokens[0]
        if head == "format":
            if tokens[1:2] != ["ascii"]:
                raise ParseError(f"{path}:{i + 1}: only ascii PLY is supported")
        elif head == "element":
            if count is not None or len(tokens) != 3 or tokens[1] != "vertex":
                raise ParseError(f"{path}:{i + 1}: only a single 'element vertex' is supported")
            try:
                count = int(tokens[2])
            except ValueError:
                raise ParseError(f"{path}:{i + 1}: bad vertex count") from None
        elif head == "property":
            if count is None or len(tokens) != 3 or tokens[1] not in _PLY_FLOAT_TYPES:
                raise ParseError(f"{path}:{i + 1}: unsupported property {raw.strip()!r}")
            props.append(tokens[2])
        elif head == "end_header":
            body_start = i + 1
            break
        else:
            raise ParseError(f"{path}:{i + 1}: unexpected header line {raw.strip()!r}")
    if body_start is None or count is None:
        raise ParseError(f"{path}: incomplete header")
    if props != ["x", "y", "z"]:
        raise ParseError(f"{path}: vertex properties must be exactly x y z")
    body = [(j, ln) for j, ln in enumerate(lines[body_start:], body_start + 1) if ln.strip()]
    if len(body) != count:
        raise ParseError(f"{path}: header declares {count} vertices, found {len(body)}")
    pts = []
    for lineno, ln in body:
        tokens = ln.split()
        if len(tokens) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 values")
        pts.append(_parse_floats(tokens, f"{path}:{lineno}"))
    return pts


def save_cloud(cloud, path, fmt=None, precision=9):
    path = Path(path)
    spec = f"%.{precision}g"
    rows = "\n".join(" ".join(spec % v for v in p) for p in cloud.points.tolist())
    if _infer_format(path, fmt) == "ply":
        header = (
            "ply\nformat ascii 1.0\n"
            f"element vertex {len(cloud)}\n"
            "property float x\nproperty float y\nproperty float z\nend_header\n"
        )
        path.write_text(header + rows + "\n")
    else:
        path.write_text(rows + "\n")


# ---------------------------------------------------------------------------
# neighbor search

def _sq_dists(points, q, idx):
    d = points[idx] - q
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


class NeighborIndex:
    """k-nearest and radius queries over a cloud.

    Results are exact Euclidean distances sorted ascending with ties broken
    by lower point index, independent of the kd-tree's internal ordering.
    Read-only after construction, so concurrent queries are safe.
    """

    def __init__(self, cloud):
        self.points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
        self.tree = cKDTree(self.points)

    def __len__(self):
        return self.points.shape[0]

    def knn(self, queries, k):
        """Return ``(distances, indices)`` of shape (Q, k)."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        n = len(self)
        if not 1 <= k <= n:
            raise BadCount(f"k={k} outside [1, {n}]")
        extra = min(n, k + 8)
        tree_d, cand = self.tree.query(queries, k=extra)
        cand = np.asarray(cand).reshape(len(queries), extra)
        tree_d = np.asarray(tree_d).reshape(len(queries), extra)
        d2 = _sq_dists(self.points, queries[:, None, :], cand)
        order = np.lexsort((cand, d2), axis=1)
        cand = np.take_along_axis(cand, order, axis=1)
        d2 = np.take_along_axis(d2, order, axis=1)
        # Candidates beyond the tree's horizon may tie with the k-th: redo those rows exactly.
        if extra < n:
            horizon = tree_d[:, -1] ** 2
            redo = np.nonzero(d2[:, k - 1] >= horizon * (1.0 - 1e-9))[0]
            for r in redo:
                d2_all = _sq_dists(self.points, queries[r], slice(None))
                o = np.argsort(d2_all, kind="stable")[:k]
                cand[r, :k] = o
                d2[r, :k] = d2_all[o]
        return np.sqrt(d2[:, :k]), cand[:, :k]

    def radius(self, query, r, k_max=None):
        """Indices within distance ``r`` of ``query`` (closest first, capped at ``k_max``)."""
        query = np.asarray(query, dtype=np.float64)
        cand = np.asarray(self.tree.query_ball_point(query, r * (1.0 + 1e-9) + 1e-300), dtype=np.int64)
        d2 = _sq_dists(self.points, query, cand)
        keep = np.sqrt(d2) <= r
        cand, d2 = cand[keep], d2[keep]
        order = np.lexsort((cand, d2))
        cand = cand[order]
        if k_max is not None:
            cand = cand[:k_max]
        return cand


# ---------------------------------------------------------------------------
# sampling and normals

def farthest_point_sample(cloud, m, seed_index=0):
    """Greedy maximin subset of ``m`` indices starting at ``seed_index``.

    Works on a :class:`PointCloud` or any (N, D) array (feature coresets).
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise BadCount(f"cannot sample m={m} from {n} points")
    if not 0 <= seed_index < n:
        raise BadCount(f"seed index {seed_index} outside cloud")
    return kernels.fps(pts, int(m), int(seed_index))


NORMAL_ORIENTATIONS = ("toward-centroid", "away-from-centroid", "toward-viewpoint")


def estimate_normals(cloud, k=16, orientation="toward-centroid", viewpoint=None):
    """PCA normals from each point's k nearest neighbors (self included).

    Neighborhoods whose k points coincide get the fallback normal +z and a
    warning.
    """
    n = len(cloud)
    if not 3 <= k <= n:
        raise BadCount(f"normal estimation needs 3 <= k <= N, got k={k}, N={n}")
    if orientation not in NORMAL_ORIENTATIONS:
        raise ValueError(f"unknown orientation {orientation!r}")
    pts = cloud.points
    _, nbr = NeighborIndex(cloud).knn(pts, k)
    local = pts[nbr]
    centered = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0].copy()

    degenerate = np.all(local == local[:, :1, :], axis=(1, 2))
    if degenerate.any():
        normals[degenerate] = (0.0, 0.0, 1.0)
        warn("geometry", "DegenerateNeighborhood",
             f"{int(degenerate.sum())} point(s) with coincident neighbors; normal set to +z")

    if orientation == "toward-viewpoint":
        if viewpoint is None:
            raise ValueError("toward-viewpoint orientation needs a viewpoint")
        ref = np.asarray(viewpoint, dtype=np.float64)[None, :] - pts
    else:
        ref = pts.mean(axis=0)[None, :] - pts
        if orientation == "away-from-centroid":
            ref = -ref
    flip = np.einsum("ij,ij->i", normals, ref) < 0.0
    flip &= ~degenerate
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts, normals)
