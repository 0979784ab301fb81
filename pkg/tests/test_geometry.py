import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from ismp.diagnostics import collect
from ismp.errors import BadCount, EmptyCloud, ParseError
from ismp.geometry import (NeighborIndex, PointCloud, bbox_diagonal, estimate_normals,
                           farthest_point_sample, load_cloud, save_cloud)

coords = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def cloud_arrays(min_n=1, max_n=64):
    return arrays(np.float64, st.tuples(st.integers(min_n, max_n), st.just(3)), elements=coords)


class TestPointCloud:
    def test_bounds(self):
        c = PointCloud([[0, 5, -1], [2, 1, 3]])
        assert c.lo.tolist() == [0, 1, -1]
        assert c.hi.tolist() == [2, 5, 3]
        assert len(c) == 2

    def test_immutable(self):
        c = PointCloud([[0, 0, 0]])
        with pytest.raises(ValueError):
            c.points[0, 0] = 1.0

    def test_rejects_bad_input(self):
        with pytest.raises(EmptyCloud):
            PointCloud(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            PointCloud([[0, 0]])
        with pytest.raises(ValueError):
            PointCloud([[0, 0, np.inf]])
        with pytest.raises(ValueError):
            PointCloud([[0, 0, 0]], normals=[[0, 0, 2.0]])

    def test_subset_keeps_normals(self):
        c = PointCloud([[0, 0, 0], [1, 0, 0]], [[0, 0, 1], [1, 0, 0]])
        s = c.subset([1])
        assert s.points.tolist() == [[1, 0, 0]]
        assert s.normals.tolist() == [[1, 0, 0]]


class TestDiagonal:
    def test_unit_cube(self):
        corners = [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)]
        assert math.isclose(bbox_diagonal(PointCloud(corners)), math.sqrt(3))

    def test_single_point(self):
        assert bbox_diagonal(PointCloud([[4, 5, 6]])) == 0.0

    def test_three_four_five(self):
        assert bbox_diagonal(PointCloud([[0, 0, 0], [3, 4, 0]])) == 5.0


class TestIO:
    def test_single_line(self, tmp_path):
        p = tmp_path / "a.xyz"
        p.write_text("0 0 0\n")
        c = load_cloud(p)
        assert c.points.tolist() == [[0.0, 0.0, 0.0]]

    def test_comments_and_blank_lines(self, tmp_path):
        p = tmp_path / "a.xyz"
        p.write_text("# header\n1 2 3  # trailing\n\n4 5 6\n")
        assert load_cloud(p).points.tolist() == [[1, 2, 3], [4, 5, 6]]

    def test_ply(self, tmp_path):
        p = tmp_path / "a.ply"
        p.write_text("ply\nformat ascii 1.0\ncomment x\nelement vertex 3\nproperty float x\n"
                     "property float y\nproperty double z\nend_header\n0 0 0\n1 -2 3\n-1 5 0.5\n")
        c = load_cloud(p)
        assert len(c) == 3
        assert c.lo.tolist() == [-1, -2, 0] and c.hi.tolist() == [1, 5, 3]

    @pytest.mark.parametrize("body", ["nan 0 0", "0 0", "1 2 x", "inf 1 1", "1 2 3 4"])
    def test_xyz_parse_errors(self, tmp_path, body):
        p = tmp_path / "bad.xyz"
        p.write_text(body + "\n")
        with pytest.raises(ParseError):
            load_cloud(p)

    @pytest.mark.parametrize("header", [
        "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nend_header\n",
        "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nelement face 0\nend_header\n",
        "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
    ])
    def test_ply_rejects_unsupported(self, tmp_path, header):
        p = tmp_path / "bad.ply"
        p.write_text(header + "0 0 0\n")
        with pytest.raises(ParseError):
            load_cloud(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.xyz"
        p.write_text("# nothing\n")
        with pytest.raises(EmptyCloud):
            load_cloud(p)

    @settings(max_examples=30, deadline=None)
    @given(cloud_arrays(max_n=20), st.sampled_from(["xyz", "ply"]))
    def test_round_trip_at_nine_digits(self, tmp_path_factory, pts, fmt):
        pts = np.array([[float("%.9g" % v) for v in row] for row in pts])
        path = tmp_path_factory.mktemp("rt") / f"c.{fmt}"
        save_cloud(PointCloud(pts), path)
        assert np.array_equal(load_cloud(path).points, pts)


class TestNeighborIndex:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 256), st.integers(0, 2**16), st.booleans())
    def test_knn_matches_exhaustive(self, n, seed, gridded):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(n, 3))
        if gridded:
            pts = np.round(pts * 2) / 2  # many exact ties
        k = int(rng.integers(1, min(n, 12) + 1))
        index = NeighborIndex(PointCloud(pts))
        q = rng.normal(size=(4, 3))
        if gridded:
            q = np.round(q * 2) / 2
        d, idx = index.knn(q, k)
        for i in range(4):
            od, oi = oracles.knn(pts.tolist(), q[i].tolist(), k)
            assert idx[i].tolist() == oi
            np.testing.assert_allclose(d[i], od, rtol=1e-12, atol=0)

    def test_knn_bad_k(self):
        index = NeighborIndex(PointCloud(np.zeros((3, 3))))
        with pytest.raises(BadCount):
            index.knn(np.zeros(3), 4)

    def test_radius_sorted_with_cap(self):
        pts = np.array([[0, 0, 0], [0.5, 0, 0], [0, 0.5, 0], [2, 0, 0], [0.1, 0, 0]])
        index = NeighborIndex(PointCloud(pts))
        assert index.radius(pts[0], 0.5).tolist() == [0, 4, 1, 2]
        assert index.radius(pts[0], 0.5, k_max=2).tolist() == [0, 4]


class TestFps:
    def test_collinear_example(self):
        pts = np.array([[0, 0, 0], [10, 0, 0], [1, 0, 0]], dtype=float)
        assert farthest_point_sample(PointCloud(pts), 2, 0).tolist() == [0, 1]

    def test_all_points(self):
        pts = np.random.default_rng(0).normal(size=(9, 3))
        got = farthest_point_sample(PointCloud(pts), 9)
        assert sorted(got.tolist()) == list(range(9))
        assert got.tolist() == farthest_point_sample(PointCloud(pts), 9).tolist()

    def test_single(self):
        pts = np.random.default_rng(0).normal(size=(9, 3))
        assert farthest_point_sample(PointCloud(pts), 1, seed_index=4).tolist() == [4]

    def test_bad_count(self):
        c = PointCloud(np.zeros((3, 3)))
        with pytest.raises(BadCount):
            farthest_point_sample(c, 0)
        with pytest.raises(BadCount):
            farthest_point_sample(c, 4)
        with pytest.raises(BadCount):
            farthest_point_sample(c, 1, seed_index=3)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 64), st.integers(0, 2**16))
    def test_maximin_property(self, n, seed):
        rng = np.random.default_rng(seed)
        pts = np.round(rng.normal(size=(n, 3)), 1)
        m = int(rng.integers(1, n + 1))
        got = farthest_point_sample(PointCloud(pts), m).tolist()
        assert got == oracles.fps(pts.tolist(), m, 0)


def _grid_plane(n=10):
    xs, ys = np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, n))
    return np.column_stack([xs.ravel(), ys.ravel(), np.zeros(n * n)])


class TestNormals:
    def test_plane(self):
        c = estimate_normals(PointCloud(_grid_plane()), k=8)
        assert np.allclose(np.abs(c.normals[:, 2]), 1.0)
        assert len(set(np.sign(c.normals[:, 2]).tolist())) == 1

    def test_sphere_toward_centroid_points_inward(self):
        v = np.random.default_rng(1).normal(size=(2000, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        c = estimate_normals(PointCloud(v), k=16)
        cosang = np.einsum("ij,ij->i", c.normals, -v)
        assert np.all(cosang > math.cos(math.radians(15)))

    def test_orientation_options(self):
        v = np.random.default_rng(1).normal(size=(500, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        inward = estimate_normals(PointCloud(v), 12).normals
        outward = estimate_normals(PointCloud(v), 12, "away-from-centroid").normals
        assert np.array_equal(inward, -outward)
        view = estimate_normals(PointCloud(v), 12, "toward-viewpoint", viewpoint=[0, 0, 0]).normals
        assert np.array_equal(view, inward)
        with pytest.raises(ValueError):
            estimate_normals(PointCloud(v), 12, "toward-viewpoint")

    def test_degenerate_neighborhood_warns(self):
        with collect() as log:
            c = estimate_normals(PointCloud(np.ones((5, 3))), k=4)
        assert c.normals.tolist() == [[0, 0, 1]] * 5
        assert any("DegenerateNeighborhood" in w for w in log)

    def test_bad_k(self):
        with pytest.raises(BadCount):
            estimate_normals(PointCloud(np.zeros((3, 3))), k=4)

    def test_translation_invariant_and_rotation_equivariant(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=(400, 3)) * [1.0, 0.6, 0.3]
        base = estimate_normals(PointCloud(v), 10).normals
        shifted = estimate_normals(PointCloud(v + [5.0, -3.0, 2.0]), 10).normals
        np.testing.assert_allclose(shifted, base, atol=1e-9)
        R = oracles.rotation([1, 2, 3], 40)
        rotated = estimate_normals(PointCloud(v @ R.T), 10).normals
        np.testing.assert_allclose(np.abs(np.einsum("ij,ij->i", rotated, base @ R.T)), 1.0, atol=1e-6)
