"""Rigid alignment of a sample to a template by feature-correspondence RANSAC."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .descriptors import FeatureMatrix, FpfhConfig, fpfh
from .diagnostics import warn
from .errors import RegistrationFailed
from .geometry import (PointCloud, bbox_diagonal, estimate_normals,
                       farthest_point_sample)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation must be orthonormal with determinant +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def compose(self, first):
        """The transform applying ``first`` and then ``self``."""
        return RigidTransform(self.rotation @ first.rotation,
                              self.rotation @ first.translation + self.translation)

    def apply(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    def as_row(self):
        """Twelve numbers: row-major rotation then translation."""
        return np.concatenate([self.rotation.reshape(-1), self.translation])


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 4096
    inlier_threshold: float | None = None  # default: 0.01 x template diagonal
    sample_size: int = 3
    min_inlier_fraction: float = 0.25
    rng_seed: int = 0

    def __post_init__(self):
        if self.sample_size < 3:
            raise ValueError("sample_size must be at least 3")
        if self.inlier_threshold is not None and not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if not self.min_inlier_fraction > 0 or self.max_iterations < 1:
            raise ValueError("min_inlier_fraction and max_iterations must be positive")


def apply_transform(cloud, t):
    normals = None if cloud.normals is None else cloud.normals @ t.rotation.T
    if normals is not None:
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(t.apply(cloud.points), normals)


def kabsch(src, dst):
    """Least-squares rigid fit of ``src`` onto ``dst``; batched over leading axes."""
    sc = src.mean(axis=-2, keepdims=True)
    dc = dst.mean(axis=-2, keepdims=True)
    H = np.swapaxes(src - sc, -1, -2) @ (dst - dc)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(np.swapaxes(Vt, -1, -2) @ np.swapaxes(U, -1, -2)))
    d = np.where(d == 0, 1.0, d)
    D = np.zeros(H.shape)
    D[..., 0, 0] = 1.0
    D[..., 1, 1] = 1.0
    D[..., 2, 2] = d
    R = np.swapaxes(Vt, -1, -2) @ D @ np.swapaxes(U, -1, -2)
    t = dc[..., 0, :] - (R @ sc[..., 0, :, None])[..., 0]
    return R, t


def mutual_correspondences(source_feats, template_feats):
    """Pairs (i, j) where source row i and template row j are mutual nearest neighbors."""
    a = source_feats.values if isinstance(source_feats, FeatureMatrix) else source_feats
    b = template_feats.values if isinstance(template_feats, FeatureMatrix) else template_feats
    _, ab = kernels.knn_brute(a, b, 1)
    _, ba = kernels.knn_brute(b, a, 1)
    ab, ba = ab[:, 0], ba[:, 0]
    src = np.nonzero(ba[ab] == np.arange(len(a)))[0]
    return src, ab[src]


def register(source, template, source_feats, template_feats, cfg=RansacConfig()):
    """Estimate the transform mapping ``source`` into the template frame.

    ``source``/``template`` rows correspond 1:1 with the feature rows.
    Returns ``(RigidTransform, inlier_fraction)``; raises
    :class:`RegistrationFailed` below ``cfg.min_inlier_fraction``.
    """
    if len(source) != source_feats.rows or len(template) != template_feats.rows:
        raise ValueError("feature rows must correspond to cloud points")
    thr = cfg.inlier_threshold
    if thr is None:
        thr = 0.01 * bbox_diagonal(template)
        if thr <= 0:
            thr = 1e-12
    si, ti = mutual_correspondences(source_feats, template_feats)
    if len(si) < cfg.sample_size:
        raise RegistrationFailed(f"only {len(si)} feature correspondences", 0.0)
    src = source.points[si]
    dst = template.points[ti]
    if np.array_equal(src, dst):
        return RigidTransform.identity(), 1.0

    rng = np.random.default_rng(cfg.rng_seed)
    n = len(si)
    # sample without replacement per hypothesis: argsort of uniforms is exact and vectorized
    picks = np.argsort(rng.random((cfg.max_iterations, n)), axis=1)[:, : cfg.sample_size]
    R, t = kabsch(src[picks], dst[picks])
    moved = np.einsum("hij,nj->hni", R, src) + t[:, None, :]
    err = np.linalg.norm(moved - dst[None], axis=2)
    counts = (err < thr).sum(axis=1)
    best = int(np.argmax(counts))  # first maximal hypothesis wins
    inliers = err[best] < thr

    if inliers.sum() >= 3:
        R_f, t_f = kabsch(src[inliers], dst[inliers])
    else:
        R_f, t_f = R[best], t[best]
    final_err = np.linalg.norm(src @ R_f.T + t_f - dst, axis=1)
    fraction = float((final_err < thr).mean())
    if fraction < float(counts[best]) / n:
        R_f, t_f = R[best], t[best]
        fraction = float(counts[best]) / n
    if fraction < cfg.min_inlier_fraction:
        raise RegistrationFailed(
            f"best inlier fraction {fraction:.3f} below {cfg.min_inlier_fraction}", fraction)
    return RigidTransform(R_f, t_f), fraction


def keypoint_features(cloud, n_keypoints=256, normal_k=16, fpfh_cfg=FpfhConfig()):
    """FPS keypoints of ``cloud`` with their FPFH rows, for registration."""
    withn = cloud if cloud.normals is not None else estimate_normals(cloud, min(normal_k, len(cloud)))
    keys = farthest_point_sample(withn, min(n_keypoints, len(cloud)), 0)
    return withn.subset(keys), fpfh(withn, keys, fpfh_cfg)


def register_clouds(source, template, cfg=RansacConfig(), n_keypoints=256, normal_k=16,
                    fpfh_cfg=FpfhConfig(), fallback=True):
    """Register whole clouds via keypoint FPFH. Falls back to identity on failure."""
    s_keys, s_feat = keypoint_features(source, n_keypoints, normal_k, fpfh_cfg)
    t_keys, t_feat = keypoint_features(template, n_keypoints, normal_k, fpfh_cfg)
    if cfg.inlier_threshold is None:
        thr = 0.01 * bbox_diagonal(template)
        cfg = RansacConfig(cfg.max_iterations, thr if thr > 0 else 1e-12, cfg.sample_size,
                           cfg.min_inlier_fraction, cfg.rng_seed)
    try:
        return register(s_keys, t_keys, s_feat, t_feat, cfg)
    except RegistrationFailed as exc:
        if not fallback:
            raise
        warn("registration", "RegistrationFailed", f"{exc}; using identity")
        return RigidTransform.identity(), exc.inlier_fraction
