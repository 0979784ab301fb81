"""AUROC metrics, dataset layout, and a seeded synthetic-defect generator."""
import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .diagnostics import warn
from .errors import LabelLengthMismatch, LayoutError, OneClassOnly
from .geometry import PointCloud, bbox_diagonal, load_cloud, save_cloud


@dataclass(frozen=True, eq=False)
class LabeledSample:
    cloud: PointCloud
    object_label: int
    sample_id: str
    point_labels: np.ndarray | None = None

    def __post_init__(self):
        if self.point_labels is not None:
            labels = np.asarray(self.point_labels, dtype=np.int8)
            if labels.shape != (len(self.cloud),):
                raise LabelLengthMismatch(
                    f"{self.sample_id}: {labels.size} labels for {len(self.cloud)} points")
            object.__setattr__(self, "point_labels", labels)
            if labels.any() and not self.object_label:
                raise ValueError(f"{self.sample_id}: anomalous points in a normal sample")


@dataclass(frozen=True)
class RocResult:
    auroc: float
    positives: int
    negatives: int


def auroc(scores, labels):
    """Mann-Whitney AUROC; tied scores contribute half a win."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise OneClassOnly(f"need both classes, got {pos} positive / {neg} negative")
    ranks = rankdata(scores)  # average ranks: ties get half credit
    u = ranks[labels].sum() - pos * (pos + 1) / 2.0
    return RocResult(float(u / (pos * neg)), pos, neg)


@dataclass(frozen=True)
class CategoryMetrics:
    o_auroc: float
    p_auroc: float
    notes: tuple = field(default=())


def evaluate_category(results):
    """O-AUROC over object scores, P-AUROC over all test points pooled.

    A metric that cannot be computed is NaN, with the reason in ``notes``.
    """
    results = list(results)
    notes = []
    obj_scores = [r.object_score for r, _ in results]
    obj_labels = [s.object_label for _, s in results]
    try:
        o = auroc(obj_scores, obj_labels).auroc
    except OneClassOnly as exc:
        o = math.nan
        notes.append(f"o_auroc: {exc}")

    if all(s.point_labels is not None for _, s in results) and results:
        pts = np.concatenate([r.point_scores for r, _ in results])
        lab = np.concatenate([s.point_labels for _, s in results])
        try:
            p = auroc(pts, lab).auroc
        except OneClassOnly as exc:
            p = math.nan
            notes.append(f"p_auroc: {exc}")
    else:
        p = math.nan
        notes.append("p_auroc: point labels unavailable")
    return CategoryMetrics(o, p, tuple(notes))


METRIC_COLUMNS = ("method", "category", "o_auroc", "p_auroc")


def metrics_csv(rows, header=True):
    """``rows`` are (method, category, CategoryMetrics)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(METRIC_COLUMNS)
    for method, category, m in rows:
        w.writerow([method, category, _metric(m.o_auroc), _metric(m.p_auroc)])
    return buf.getvalue()


def _metric(v):
    return "nan" if math.isnan(v) else f"{v:.6f}"


# ---------------------------------------------------------------------------
# synthetic data

SHAPES = ("sphere", "box", "torus")
ANOMALIES = ("none", "bulge", "dent", "blob", "crop")

_BOX_HALF = np.array([1.0, 0.75, 0.5])
_TORUS_R, _TORUS_r = 1.0, 0.35


@dataclass(frozen=True)
class SynthConfig:
    base_shape: str = "sphere"
    n_points: int = 2048
    anomaly: str = "bulge"
    amplitude: float = 0.1
    region_fraction: float = 0.1
    rng_seed: int = 0
    noise: float = 0.0

    def __post_init__(self):
        if self.base_shape not in SHAPES:
            raise ValueError(f"unknown shape {self.base_shape!r}")
        if self.anomaly not in ANOMALIES:
            raise ValueError(f"unknown anomaly {self.anomaly!r}")
        if self.n_points < 16:
            raise ValueError("n_points must be at least 16")
        if self.amplitude < 0 or self.noise < 0:
            raise ValueError("amplitude and noise must be nonnegative")
        if not 0 < self.region_fraction <= 0.5:
            raise ValueError("region_fraction must lie in (0, 0.5]")


def sample_surface(shape, n, rng):
    """Uniform-by-area surface samples and their outward unit normals."""
    if shape == "sphere":
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v, v.copy()
    if shape == "box":
        h = _BOX_HALF
        areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]] * 2)
        face = rng.choice(6, size=n, p=areas / areas.sum())
        u = rng.uniform(-1.0, 1.0, size=(n, 3)) * h
        axis = face % 3
        sign = np.where(face < 3, 1.0, -1.0)
        u[np.arange(n), axis] = sign * h[axis]
        normals = np.zeros((n, 3))
        normals[np.arange(n), axis] = sign
        return u, normals
    if shape == "torus":
        R, r = _TORUS_R, _TORUS_r
        out = np.empty((0, 2))
        while len(out) < n:
            th = rng.uniform(0, 2 * np.pi, size=2 * n)
            keep = rng.uniform(0, 1, size=2 * n) < (R + r * np.cos(th)) / (R + r)
            phi = rng.uniform(0, 2 * np.pi, size=2 * n)
            out = np.vstack([out, np.column_stack([th[keep], phi[keep]])])
        th, phi = out[:n, 0], out[:n, 1]
        ring = np.column_stack([np.cos(phi), np.sin(phi), np.zeros(n)])
        normals = np.column_stack([np.cos(th) * np.cos(phi), np.cos(th) * np.sin(phi), np.sin(th)])
        return R * ring + r * normals, normals
    raise ValueError(f"unknown shape {shape!r}")


def surface_distance(shape, points):
    """Unsigned distance from points to the clean analytic surface."""
    p = np.asarray(points, dtype=np.float64)
    if shape == "sphere":
        return np.abs(np.linalg.norm(p, axis=1) - 1.0)
    if shape == "torus":
        q = np.column_stack([np.linalg.norm(p[:, :2], axis=1) - _TORUS_R, p[:, 2]])
        return np.abs(np.linalg.norm(q, axis=1) - _TORUS_r)
    if shape == "box":
        d = np.abs(p) - _BOX_HALF
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
        inside = np.minimum(d.max(axis=1), 0.0)
        return np.abs(outside + inside)
    raise ValueError(f"unknown shape {shape!r}")


def _falloff(dist, radius):
    """1 on the inner half of the region, raised-cosine taper to 0 at ``radius``."""
    t = np.clip((dist - radius / 2.0) / (radius / 2.0), 0.0, 1.0)
    w = 0.5 * (1.0 + np.cos(np.pi * t))
    return np.where(dist < radius, w, 0.0)


def generate_synthetic(cfg):
    """A seeded clean shape with one injected defect and per-point labels."""
    rng = np.random.default_rng(cfg.rng_seed)
    pts, normals = sample_surface(cfg.base_shape, cfg.n_points, rng)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if cfg.noise > 0:
        pts = pts + rng.normal(scale=cfg.noise * diag, size=pts.shape)
    labels = np.zeros(len(pts), dtype=np.int8)
    center_idx = int(rng.integers(len(pts)))
    center = pts[center_idx].copy()
    center_n = normals[center_idx].copy()
    radius = cfg.region_fraction * diag
    dist = np.linalg.norm(pts - center, axis=1)
    amp = cfg.amplitude * diag

    if cfg.anomaly in ("bulge", "dent") and amp > 0:
        w = _falloff(dist, radius)
        sign = 1.0 if cfg.anomaly == "bulge" else -1.0
        pts = pts + (sign * amp * w)[:, None] * normals
        labels[w > 0] = 1
    elif cfg.anomaly == "blob" and amp > 0:
        count = max(8, int(round(0.02 * cfg.n_points)))
        blob = center + amp * center_n + rng.normal(scale=0.25 * radius, size=(count, 3))
        pts = np.vstack([pts, blob])
        labels = np.concatenate([labels, np.ones(count, dtype=np.int8)])
    elif cfg.anomaly == "crop":
        keep = dist >= radius
        if keep.sum() < len(pts):
            ring = keep & (dist < 1.25 * radius)
            labels[ring] = 1
            pts, labels = pts[keep], labels[keep]

    tag = cfg.anomaly if labels.any() else "good"
    sid = f"{tag}_{cfg.base_shape}_{cfg.rng_seed}"
    return LabeledSample(PointCloud(pts), int(labels.any()), sid, labels)


# ---------------------------------------------------------------------------
# dataset layout: <root>/<category>/{train,test,gt}

CLOUD_SUFFIXES = (".xyz", ".ply")


@dataclass(frozen=True)
class Dataset:
    category: str
    train: list
    train_ids: list
    test: list


def _cloud_files(d):
    return sorted(p for p in d.iterdir() if p.suffix.lower() in CLOUD_SUFFIXES)


def load_dataset(root, category):
    """Load one category. Labels come from ``gt/<stem>.txt`` (one 0/1 per line).

    Without a gt file the object label falls back to the file name: stems
    beginning with ``good`` are normal.
    """
    base = Path(root) / category
    train_dir, test_dir, gt_dir = base / "train", base / "test", base / "gt"
    if not train_dir.is_dir() or not test_dir.is_dir():
        raise LayoutError(f"{base}: expected train/ and test/ directories")
    train_files = _cloud_files(train_dir)
    test_files = _cloud_files(test_dir)
    if not train_files:
        raise LayoutError(f"{train_dir}: no point-cloud files")
    if not test_files:
        raise LayoutError(f"{test_dir}: no point-cloud files")
    train = [load_cloud(p) for p in train_files]
    test = []
    for p in test_files:
        cloud = load_cloud(p)
        gt = gt_dir / f"{p.stem}.txt"
        if gt.is_file():
            labels = read_labels(gt)
            if len(labels) != len(cloud):
                raise LabelLengthMismatch(
                    f"{gt}: {len(labels)} labels for {len(cloud)} points in {p.name}")
            test.append(LabeledSample(cloud, int(labels.any()), p.stem, labels))
        else:
            warn("evaluation", "MissingGroundTruth", f"{p.name}: no gt file; object label only")
            test.append(LabeledSample(cloud, int(not p.stem.startswith("good")), p.stem))
    return Dataset(category, train, [p.stem for p in train_files], test)


def read_labels(path):
    values = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        s = raw.strip()
        if not s:
            continue
        if s not in ("0", "1"):
            raise LabelLengthMismatch(f"{path}:{lineno}: label must be 0 or 1, got {s!r}")
        values.append(int(s))
    return np.array(values, dtype=np.int8)


def write_labels(labels, path):
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def write_synthetic_category(out_root, category, shape="sphere", anomaly="bulge", seed=0,
                             n_train=4, n_test_normal=8, n_test_anomalous=8, n_points=2048,
                             amplitude=0.1, region_fraction=0.1, noise=0.0, anomalies=None):
    """Write a full synthetic category in the dataset layout; returns its directory."""
    base = Path(out_root) / category
    for sub in ("train", "test", "gt"):
        (base / sub).mkdir(parents=True, exist_ok=True)
    kinds = list(anomalies) if anomalies else [anomaly]
    seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=n_train + n_test_normal + n_test_anomalous)
    k = 0
    for i in range(n_train):
        s = generate_synthetic(SynthConfig(shape, n_points, "none", 0.0, region_fraction, int(seeds[k]), noise))
        save_cloud(s.cloud, base / "train" / f"train_{i:03d}.xyz", precision=17)
        k += 1
    for i in range(n_test_normal):
        s = generate_synthetic(SynthConfig(shape, n_points, "none", 0.0, region_fraction, int(seeds[k]), noise))
        stem = f"good_{i:03d}"
        save_cloud(s.cloud, base / "test" / f"{stem}.xyz", precision=17)
        write_labels(s.point_labels, base / "gt" / f"{stem}.txt")
        k += 1
    for i in range(n_test_anomalous):
        kind = kinds[i % len(kinds)]
        s = generate_synthetic(SynthConfig(shape, n_points, kind, amplitude, region_fraction, int(seeds[k]), noise))
        stem = f"{kind}_{i:03d}"
        save_cloud(s.cloud, base / "test" / f"{stem}.xyz", precision=17)
        write_labels(s.point_labels, base / "gt" / f"{stem}.txt")
        k += 1
    return base
