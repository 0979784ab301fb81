import numpy as np
import pytest

import oracles
from ismp.descriptors import FeatureMatrix
from ismp.diagnostics import collect
from ismp.errors import RegistrationFailed
from ismp.evaluation import SynthConfig, generate_synthetic
from ismp.geometry import PointCloud, bbox_diagonal
from ismp.registration import (RansacConfig, RigidTransform, apply_transform, kabsch,
                               mutual_correspondences, register, register_clouds)


@pytest.fixture(scope="module")
def torus():
    return generate_synthetic(SynthConfig("torus", 800, "none", 0.0, rng_seed=4)).cloud


class TestTransform:
    def test_identity_apply(self):
        c = PointCloud(np.random.default_rng(0).normal(size=(5, 3)))
        assert np.array_equal(apply_transform(c, RigidTransform.identity()).points, c.points)

    def test_translation(self):
        t = RigidTransform(np.eye(3), [1, 0, 0])
        assert apply_transform(PointCloud([[0, 0, 0]]), t).points.tolist() == [[1, 0, 0]]

    def test_validation(self):
        with pytest.raises(ValueError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
        with pytest.raises(ValueError):
            RigidTransform(2 * np.eye(3), np.zeros(3))

    def test_compose_and_row(self):
        a = RigidTransform(oracles.rotation([0, 0, 1], 30), [1, 2, 3])
        b = RigidTransform(oracles.rotation([1, 0, 0], 45), [0, -1, 0])
        p = np.array([[0.3, -0.2, 0.7]])
        np.testing.assert_allclose(b.compose(a).apply(p), b.apply(a.apply(p)))
        assert a.as_row().shape == (12,)

    def test_normals_rotate(self):
        c = PointCloud([[0, 0, 0]], [[1, 0, 0]])
        out = apply_transform(c, RigidTransform(oracles.rotation([0, 0, 1], 90), [5, 5, 5]))
        np.testing.assert_allclose(out.normals, [[0, 1, 0]], atol=1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RansacConfig(sample_size=2)
        with pytest.raises(ValueError):
            RansacConfig(inlier_threshold=0)


def test_kabsch_batched_orthonormal():
    rng = np.random.default_rng(1)
    src = rng.normal(size=(50, 3, 3))
    dst = rng.normal(size=(50, 3, 3))
    R, _ = kabsch(src, dst)
    for r in R:
        assert np.linalg.norm(r.T @ r - np.eye(3)) < 1e-6
        assert np.linalg.det(r) == pytest.approx(1.0)


def test_kabsch_exact_recovery():
    rng = np.random.default_rng(2)
    src = rng.normal(size=(10, 3))
    R0 = oracles.rotation([1, -1, 0.5], 70)
    R, t = kabsch(src, src @ R0.T + [1, 2, 3])
    np.testing.assert_allclose(R, R0, atol=1e-12)
    np.testing.assert_allclose(t, [1, 2, 3], atol=1e-12)


def test_mutual_correspondences():
    a = np.array([[0.0], [1.0], [5.0]])
    b = np.array([[0.1], [4.0], [4.2]])
    src, dst = mutual_correspondences(a, b)
    assert list(zip(src.tolist(), dst.tolist())) == [(0, 0), (2, 2)]


class TestRegister:
    def test_self_registration(self, torus):
        t, frac = register_clouds(torus, torus)
        assert np.array_equal(t.rotation, np.eye(3)) and frac == 1.0

    def test_recovers_rotation_and_translation(self, torus):
        R = oracles.rotation([0, 0, 1], 30)
        moved = PointCloud(torus.points @ R.T + [0.1, 0, 0])
        t, frac = register_clouds(moved, torus)
        assert oracles.rotation_angle_deg(t.rotation @ R) < 5
        assert np.linalg.norm(t.apply(moved.points) - torus.points, axis=1).max() < 0.01 * bbox_diagonal(torus)
        assert frac > 0.9

    def test_translation_invariant(self, torus):
        R = oracles.rotation([1, 1, 1], 25)
        src = PointCloud(torus.points @ R.T)
        base, _ = register_clouds(src, torus)
        c = np.array([3.0, -2.0, 7.0])
        shifted, _ = register_clouds(PointCloud(src.points + c), PointCloud(torus.points + c))
        np.testing.assert_allclose(shifted.rotation, base.rotation, atol=1e-9)

    def test_deterministic(self, torus):
        R = oracles.rotation([0, 1, 0], 40)
        src = PointCloud(torus.points @ R.T + 0.2)
        a, fa = register_clouds(src, torus)
        b, fb = register_clouds(src, torus)
        assert np.array_equal(a.as_row(), b.as_row()) and fa == fb

    def test_identical_features_fail(self):
        rng = np.random.default_rng(3)
        src, tpl = PointCloud(rng.normal(size=(20, 3))), PointCloud(rng.normal(size=(20, 3)))
        feats = FeatureMatrix(np.ones((20, 4)))
        with pytest.raises(RegistrationFailed):
            register(src, tpl, feats, feats)

    def test_fallback_to_identity_warns(self):
        rng = np.random.default_rng(5)
        a = PointCloud(rng.normal(size=(200, 3)))
        b = PointCloud(rng.normal(size=(200, 3)) * 3)
        with collect() as log:
            t, frac = register_clouds(a, b, n_keypoints=64)
        assert np.array_equal(t.rotation, np.eye(3)) and frac < 0.25
        assert any("RegistrationFailed" in w for w in log)
        with pytest.raises(RegistrationFailed):
            register_clouds(a, b, n_keypoints=64, fallback=False)
