"""End-to-end orchestration: register, describe, fuse, filter, bank, score."""
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, diagnostics
from .descriptors import (FpfhConfig, PatchConfig, build_patches, concat_features,
                          fpfh, patch_embed)
from .filtering import FilterParams, laplacian_filter
from .geometry import estimate_normals
from .registration import RansacConfig, apply_transform, register_clouds
from .scoring import (SampleFeatures, build_bank, check_digest, combine_scores,
                      coord_score, nn_score)
from .sie import (EXTERNAL_IDS, depth_discrepancy, fuse_global, global_descriptor,
                  render_slices)


@dataclass(frozen=True)
class Ablation:
    use_sie: bool = True
    use_filter: bool = True
    use_enhanced: bool = True
    external_only: bool = False

    def __post_init__(self):
        if self.external_only and not self.use_sie:
            raise ValueError("external_only requires use_sie")


@dataclass(frozen=True)
class PipelineConfig:
    patch: PatchConfig = PatchConfig()
    fpfh: FpfhConfig = FpfhConfig()
    filter: FilterParams = FilterParams()
    ransac: RansacConfig = RansacConfig()
    ablation: Ablation = Ablation()
    slice_resolution: int = 224
    global_bins: int = 16
    eq6_k: float = 3.0
    normal_k: int = 16
    use_registration: bool = True
    registration_keypoints: int = 256
    coreset_fraction: float = 1.0
    coord_count: int = 4096
    score_mode: str = "raw"

    def __post_init__(self):
        if self.score_mode not in ("raw", "calibrated"):
            raise ValueError(f"unknown score mode {self.score_mode!r}")

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunManifest:
    config_digest: str
    version: str = __version__
    warnings: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    record_timings: bool = False

    def to_text(self):
        lines = [f"version={self.version}", f"config_digest={self.config_digest}"]
        lines += [f"warning={w}" for w in self.warnings]
        if self.record_timings:
            lines += [f"time.{k}={v:.6f}" for k, v in self.timings.items()]
        return "\n".join(lines) + "\n"


def extract_features(cloud, cfg):
    """Per-patch feature matrix for a cloud already in the template frame."""
    n = len(cloud)
    withn = estimate_normals(cloud, min(cfg.normal_k, n)) if n >= 3 else cloud
    patch_cfg = PatchConfig(min(cfg.patch.m, n), cfg.patch.k_max, cfg.patch.r,
                            cfg.patch.relative_radius)
    patches = build_patches(withn, patch_cfg)
    centers = np.array([p.center_index for p in patches], dtype=np.int64)

    blocks = [patch_embed(withn, patches, patch_cfg.k_max)]
    if cfg.ablation.use_enhanced:
        blocks.append(fpfh(withn, centers, cfg.fpfh))
    feats = concat_features(blocks)

    if cfg.ablation.use_sie:
        ids = EXTERNAL_IDS if cfg.ablation.external_only else None
        slices = render_slices(cloud, cfg.slice_resolution, ids)
        feats = fuse_global(feats, global_descriptor(slices, cfg.global_bins))
    if cfg.ablation.use_filter and feats.rows >= 2:
        feats = laplacian_filter(feats, cfg.filter)

    flagged = depth_discrepancy(cloud, cfg.eq6_k).flagged
    return SampleFeatures(cloud, feats, centers, len(flagged) / n)


def align(cloud, template, cfg):
    if template is None or not cfg.use_registration:
        return cloud
    t, _ = register_clouds(cloud, template, cfg.ransac, cfg.registration_keypoints,
                           cfg.normal_k, cfg.fpfh)
    return apply_transform(cloud, t)


def _map(fn, items, threads):
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _timed(fn):
    def run(item):
        with diagnostics.collect() as log:
            start = time.perf_counter()
            out = fn(item)
            return out, log, time.perf_counter() - start
    return run


def fit(train_clouds, cfg=PipelineConfig(), category="unknown", template_index=0,
        threads=1, sample_ids=None, record_timings=False):
    """Register training clouds to the template, extract features, build banks."""
    train_clouds = list(train_clouds)
    if not train_clouds:
        raise ValueError("fit needs at least one training cloud")
    ids = sample_ids or [f"train_{i}" for i in range(len(train_clouds))]
    template = train_clouds[template_index]
    digest = cfg.digest()
    manifest = RunManifest(digest, record_timings=record_timings)

    def one(i):
        cloud = train_clouds[i]
        if i != template_index:
            cloud = align(cloud, template, cfg)
        return extract_features(cloud, cfg)

    results = _map(_timed(one), list(range(len(train_clouds))), threads)
    samples = []
    for sid, (feat, log, dt) in zip(ids, results):
        samples.append(feat)
        manifest.warnings += [f"{sid}:{w}" for w in log]
        manifest.timings[sid] = dt
    with diagnostics.collect() as log:
        bank = build_bank(samples, cfg.coreset_fraction, cfg.coord_count, category, digest,
                          template if cfg.use_registration else None)
    manifest.warnings += [f"bank:{w}" for w in log]
    return bank, manifest


def score_sample(cloud, bank, cfg=PipelineConfig()):
    """Anomaly scores for one test cloud against a fitted bank."""
    check_digest(bank, cfg.digest())
    cloud = align(cloud, bank.template, cfg)
    sample = extract_features(cloud, cfg)
    s_f = nn_score(sample.features, bank.feature_bank).reweighted[sample.point_to_patch()]
    s_c = coord_score(cloud, bank)
    return combine_scores(s_f, s_c, cfg.score_mode, bank.calibration, sample.flagged_fraction)


def score_many(clouds, bank, cfg=PipelineConfig(), threads=1, sample_ids=None, manifest=None):
    clouds = list(clouds)
    ids = sample_ids or [f"test_{i}" for i in range(len(clouds))]
    results = _map(_timed(lambda c: score_sample(c, bank, cfg)), clouds, threads)
    out = []
    for sid, (res, log, dt) in zip(ids, results):
        out.append(res)
        if manifest is not None:
            manifest.warnings += [f"{sid}:{w}" for w in log]
            manifest.timings[sid] = dt
    return out
