"""Feature and coordinate memory banks and nearest-neighbor anomaly scores."""
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .descriptors import FeatureMatrix, format_feature_matrix, parse_feature_matrix
from .diagnostics import warn
from .errors import (EmptyTraining, FormatError, LengthMismatch, ParseError,
                     VersionMismatch)
from .geometry import NeighborIndex, PointCloud, farthest_point_sample

BANK_MAGIC = "ISMP-BANK"
BANK_VERSION = "v1"
REWEIGHT_K = 3


@dataclass(frozen=True, eq=False)
class SampleFeatures:
    """A registered cloud, its per-patch features and the patch center indices."""

    cloud: PointCloud
    features: FeatureMatrix
    centers: np.ndarray
    flagged_fraction: float = 0.0

    def point_to_patch(self):
        """Index of the nearest patch center for every point."""
        centers = self.cloud.points[self.centers]
        _, idx = NeighborIndex(centers).knn(self.cloud.points, 1)
        return idx[:, 0]


@dataclass(frozen=True)
class Calibration:
    f_mean: float = 0.0
    f_std: float = 1.0
    c_mean: float = 0.0
    c_std: float = 1.0
    leave_one_out: bool = False


@dataclass(frozen=True, eq=False)
class MemoryBank:
    feature_bank: FeatureMatrix
    coordinate_bank: np.ndarray
    calibration: Calibration = Calibration()
    category: str = "unknown"
    config_digest: str = ""
    template: PointCloud | None = None
    version: str = BANK_VERSION

    def __post_init__(self):
        coords = np.array(self.coordinate_bank, dtype=np.float64, order="C")
        if self.feature_bank.rows == 0 or coords.shape[0] == 0:
            raise EmptyTraining("memory banks must be non-empty")
        coords.flags.writeable = False
        object.__setattr__(self, "coordinate_bank", coords)


@dataclass(frozen=True, eq=False)
class NNScores:
    nearest: np.ndarray      # s_*: distance to the closest bank row
    reweighted: np.ndarray   # s = factor * s_*
    factor: np.ndarray
    neighbors: np.ndarray    # indices of the (up to) 3 nearest bank rows
    distances: np.ndarray
    argmax_row: int          # test row whose nearest distance is largest


@dataclass(frozen=True, eq=False)
class AnomalyResult:
    point_scores: np.ndarray
    object_score: float
    channels: tuple | None = None   # (s^F, s^C) per point
    flagged_fraction: float = 0.0
    notes: tuple = field(default=())


def reweight_factor(distances):
    """``1 - exp(d1) / sum_j exp(d_j)`` over each row's nearest distances.

    Written as ``sum_{j>1} e^(d_j - d1) / (1 + sum_{j>1} e^(d_j - d1))``,
    which is the same quantity without overflow and gives exactly 2/3 when
    three distances are equal.
    """
    d = np.asarray(distances, dtype=np.float64)
    rel = np.exp(np.minimum(d[:, 1:] - d[:, :1], 700.0))
    num = rel.sum(axis=1)
    return num / (1.0 + num)


def _nn_reweighted(dist, idx):
    k = dist.shape[1]
    if k < REWEIGHT_K:
        warn("scoring", "BankTooSmall", f"bank has {k} row(s); reweighting disabled")
        factor = np.ones(dist.shape[0])
    else:
        factor = reweight_factor(dist)
    nearest = dist[:, 0].copy()
    return NNScores(nearest, factor * nearest, factor, idx, dist, int(np.argmax(nearest)))


def nn_score(test_feats, bank):
    """Nearest-bank-row distance, 3-NN reweighted score and the arg-max row."""
    q = test_feats.values if isinstance(test_feats, FeatureMatrix) else np.asarray(test_feats, float)
    b = bank.values if isinstance(bank, FeatureMatrix) else np.asarray(bank, float)
    k = min(REWEIGHT_K, b.shape[0])
    dist, idx = kernels.knn_brute(q, b, k)
    return _nn_reweighted(dist, idx)


def coord_score(test_cloud, bank, index=None):
    """Per-point reweighted nearest distance to the coordinate bank."""
    coords = bank.coordinate_bank if isinstance(bank, MemoryBank) else np.asarray(bank, float)
    index = index or NeighborIndex(coords)
    k = min(REWEIGHT_K, len(index))
    pts = test_cloud.points if isinstance(test_cloud, PointCloud) else np.asarray(test_cloud, float)
    dist, idx = index.knn(pts, k)
    return _nn_reweighted(dist, idx).reweighted


def combine_scores(s_f, s_c, mode="raw", calibration=None, flagged_fraction=0.0):
    """Average the feature and coordinate channels into per-point scores.

    ``calibrated`` mode z-scores each channel with the training statistics
    first. The object score is the maximum point score.
    """
    s_f = np.asarray(s_f, dtype=np.float64)
    s_c = np.asarray(s_c, dtype=np.float64)
    if s_f.shape != s_c.shape:
        raise LengthMismatch(f"channel lengths differ: {s_f.shape} vs {s_c.shape}")
    if mode == "raw":
        a, b = s_f, s_c
    elif mode == "calibrated":
        if calibration is None:
            raise ValueError("calibrated mode needs bank calibration")
        a = (s_f - calibration.f_mean) / calibration.f_std
        b = (s_c - calibration.c_mean) / calibration.c_std
    else:
        raise ValueError(f"unknown score mode {mode!r}")
    s = (a + b) / 2.0
    obj = float(s.max()) if s.size else 0.0
    if mode == "calibrated":
        # z-scored channels may go negative; the object score stays a nonnegative excess
        obj = max(obj, 0.0)
    return AnomalyResult(s, obj, (s_f, s_c), float(flagged_fraction))


# ---------------------------------------------------------------------------
# bank construction

def coreset_indices(values, fraction):
    """Greedy farthest-point coreset keeping ``ceil(fraction * n)`` rows."""
    n = values.shape[0]
    if not 0 < fraction <= 1:
        raise ValueError("coreset fraction must lie in (0, 1]")
    keep = math.ceil(fraction * n)
    if keep >= n:
        return np.arange(n)
    return farthest_point_sample(values, keep, 0)


def _coordinate_bank(points, coord_count):
    if coord_count >= len(points):
        return points
    return points[farthest_point_sample(points, coord_count, 0)]


def _score_against(sample, feature_bank, coords):
    s_f_patch = nn_score(sample.features, feature_bank).reweighted
    s_f = s_f_patch[sample.point_to_patch()]
    s_c = coord_score(sample.cloud, coords)
    return s_f, s_c


def _std(v):
    s = float(np.std(v))
    return s if s > 0 else 1.0


def build_bank(samples, coreset_fraction=1.0, coord_count=4096, category="unknown",
               config_digest="", template=None):
    """Union training patch features and FPS-sampled training coordinates.

    Calibration scores every sample against a bank built from the others, or
    against the full bank when there is only one sample (flagged by
    ``leave_one_out=False``).
    """
    samples = list(samples)
    if not samples:
        raise EmptyTraining("no training samples")
    feats = np.vstack([s.features.values for s in samples])
    keep = coreset_indices(feats, coreset_fraction)
    feature_bank = FeatureMatrix(feats[keep], provenance=samples[0].features.provenance)
    all_points = np.vstack([s.cloud.points for s in samples])
    coords = _coordinate_bank(all_points, coord_count)

    f_scores, c_scores = [], []
    if len(samples) == 1:
        warn("scoring", "CalibrationUnavailable",
             "single training sample: calibration uses the full bank")
        s_f, s_c = _score_against(samples[0], feature_bank, coords)
        f_scores.append(s_f)
        c_scores.append(s_c)
    else:
        for i, s in enumerate(samples):
            others = [o for j, o in enumerate(samples) if j != i]
            fb = np.vstack([o.features.values for o in others])
            cb = _coordinate_bank(np.vstack([o.cloud.points for o in others]), coord_count)
            s_f, s_c = _score_against(s, fb, cb)
            f_scores.append(s_f)
            c_scores.append(s_c)
    f_all, c_all = np.concatenate(f_scores), np.concatenate(c_scores)
    calib = Calibration(float(f_all.mean()), _std(f_all), float(c_all.mean()), _std(c_all),
                        leave_one_out=len(samples) > 1)
    return MemoryBank(feature_bank, coords, calib, category, config_digest, template)


# ---------------------------------------------------------------------------
# persistence

def _fmt(v):
    return "%.17g" % v


def format_bank(bank):
    c = bank.calibration
    lines = [
        f"{BANK_MAGIC} {BANK_VERSION}",
        f"category={bank.category}",
        f"config_digest={bank.config_digest}",
        f"calib_f_mean={_fmt(c.f_mean)}",
        f"calib_f_std={_fmt(c.f_std)}",
        f"calib_c_mean={_fmt(c.c_mean)}",
        f"calib_c_std={_fmt(c.c_std)}",
        f"calib_leave_one_out={int(c.leave_one_out)}",
    ]
    text = "\n".join(lines) + "\n"
    text += format_feature_matrix(bank.feature_bank)
    text += _format_xyz_block("XYZ", bank.coordinate_bank)
    if bank.template is not None:
        text += _format_xyz_block("TEMPLATE", bank.template.points)
    return text + "END\n"


def _format_xyz_block(tag, pts):
    body = "\n".join(" ".join(_fmt(v) for v in p) for p in pts.tolist())
    return f"{tag} {len(pts)}\n{body}\n"


def save_bank(bank, path):
    Path(path).write_text(format_bank(bank))


def _read_xyz_block(lines, tag, where):
    header = next(lines, None)
    if header is None:
        raise FormatError(f"{where}: missing {tag} block")
    parts = header.split()
    if len(parts) != 2 or parts[0] != tag:
        raise FormatError(f"{where}: expected '{tag} <count>', got {header.strip()!r}")
    count = int(parts[1])
    pts = np.empty((count, 3))
    for i in range(count):
        raw = next(lines, None)
        if raw is None:
            raise FormatError(f"{where}: {tag} block truncated at row {i}")
        vals = raw.split()
        if len(vals) != 3:
            raise FormatError(f"{where}: {tag} row {i} malformed")
        pts[i] = [float(v) for v in vals]
    if not np.all(np.isfinite(pts)):
        raise FormatError(f"{where}: {tag} block has non-finite values")
    return pts


_CALIB_KEYS = ("calib_f_mean", "calib_f_std", "calib_c_mean", "calib_c_std", "calib_leave_one_out")


def load_bank(path, expected_digest=None):
    path = Path(path)
    where = str(path)
    lines = iter(path.read_text().splitlines())
    magic = next(lines, "").split()
    if len(magic) != 2 or magic[0] != BANK_MAGIC:
        raise FormatError(f"{where}: not an {BANK_MAGIC} file")
    if magic[1] != BANK_VERSION:
        raise VersionMismatch(f"{where}: bank version {magic[1]}, expected {BANK_VERSION}")

    meta = {}
    pending = None
    for raw in lines:
        if raw.startswith("ISMP-FM"):
            pending = raw
            break
        if "=" not in raw:
            raise FormatError(f"{where}: malformed metadata line {raw!r}")
        key, value = raw.split("=", 1)
        meta[key] = value
    if pending is None:
        raise FormatError(f"{where}: missing feature bank block")
    missing = [k for k in _CALIB_KEYS if k not in meta]
    if missing:
        raise FormatError(f"{where}: missing keys {missing}")

    stream = itertools.chain([pending], lines)
    try:
        fb = parse_feature_matrix(stream, where, provenance="concat")
        coords = _read_xyz_block(stream, "XYZ", where)
        nxt = next(stream, None)
        template = None
        if nxt is not None and nxt.startswith("TEMPLATE"):
            stream = itertools.chain([nxt], stream)
            template = PointCloud(_read_xyz_block(stream, "TEMPLATE", where))
            nxt = next(stream, None)
    except (ParseError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}") from None
    if nxt is None or nxt.strip() != "END":
        raise FormatError(f"{where}: missing END marker (truncated file?)")

    calib = Calibration(
        float(meta["calib_f_mean"]), float(meta["calib_f_std"]),
        float(meta["calib_c_mean"]), float(meta["calib_c_std"]),
        meta["calib_leave_one_out"] == "1",
    )
    bank = MemoryBank(fb, coords, calib, meta.get("category", "unknown"),
                      meta.get("config_digest", ""), template)
    check_digest(bank, expected_digest)
    return bank


def check_digest(bank, expected_digest):
    if expected_digest is not None and bank.config_digest != expected_digest:
        warn("scoring", "DigestMismatch",
             f"bank built with config {bank.config_digest or '<none>'}, "
             f"scoring with {expected_digest}")
        return False
    return True
