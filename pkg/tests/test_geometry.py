"""Geometry oracles: lifting, cleanup, sampling, and the PLY profile."""

import numpy as np
import pytest

from depthgate.errors import (
    DegenerateCloudError,
    EmptyInputError,
    InsufficientPointsError,
    ParseError,
    ShapeError,
)
from depthgate.geometry import (
    PointCloud,
    backproject,
    filter_outliers,
    knn_mean_distances,
    merge_views,
    normalize,
    project,
    read_ply,
    sample_fps,
    sample_uniform,
    split_by_view,
    write_ply,
)
from depthgate.scenes import CameraIntrinsics, DepthMap, Plane, Scene, render_depth


def cloud_of(*pts, views=None):
    pts = np.array(pts, dtype=np.float64)
    views = np.zeros(len(pts), dtype=np.int64) if views is None else np.array(views)
    return PointCloud(points=pts, source_view=views)


def manual_map(depth_entries, n=100, f=100.0):
    """DepthMap with the listed (v, u, z) pixels valid and all others not."""
    intr = CameraIntrinsics(fx=f, fy=f, cx=n / 2.0, cy=n / 2.0, width=n, height=n)
    depth = np.full((n, n), np.inf)
    valid = np.zeros((n, n), dtype=bool)
    for v, u, z in depth_entries:
        depth[v, u] = z
        valid[v, u] = True
    return DepthMap(intrinsics=intr, depth=depth, valid=valid, far_clip=10.0)


class TestBackprojection:
    def test_single_pixel_hand_value(self):
        dm = manual_map([(50, 60, 1.0)])
        cloud = backproject(dm, view=3)
        assert cloud.points.shape == (1, 3)
        assert cloud.points[0].tolist() == [0.1, 0.0, 1.0]
        assert cloud.source_view[0] == 3

    def test_row_major_emission_order(self):
        dm = manual_map([(0, 5, 2.0), (3, 2, 2.0), (0, 7, 2.0)])
        cloud = backproject(dm)
        # (v=0,u=5), (v=0,u=7), (v=3,u=2) in raster order
        assert cloud.points[0, 2] == 2.0
        us = (cloud.points[:, 0] * 100.0 / cloud.points[:, 2] + 50.0).round()
        vs = (cloud.points[:, 1] * 100.0 / cloud.points[:, 2] + 50.0).round()
        assert list(zip(vs.astype(int), us.astype(int))) == [(0, 5), (0, 7), (3, 2)]

    def test_project_inverts_backproject(self):
        rng = np.random.default_rng(5)
        n = 100
        depth = np.where(rng.random((n, n)) < 0.3, rng.uniform(0.5, 9.5, (n, n)), np.inf)
        valid = np.isfinite(depth)
        intr = CameraIntrinsics(fx=123.0, fy=77.0, cx=48.5, cy=52.25, width=n, height=n)
        dm = DepthMap(intrinsics=intr, depth=np.where(valid, depth, np.inf),
                      valid=valid, far_clip=10.0)
        cloud = backproject(dm)
        uvz = project(cloud.points, dm)
        vs, us = np.nonzero(valid)
        assert np.abs(uvz[:, 0] - us).max() < 1e-9
        assert np.abs(uvz[:, 1] - vs).max() < 1e-9
        assert np.array_equal(uvz[:, 2], depth[vs, us])

    def test_project_rejects_nonpositive_depth(self):
        intr = CameraIntrinsics(fx=10.0, fy=10.0, cx=2.0, cy=2.0, width=4, height=4)
        with pytest.raises(ShapeError):
            project(np.array([[0.0, 0.0, 0.0]]), intr)


class TestMergeSplit:
    def test_merge_then_split_restores_views(self):
        a = cloud_of((1.0, 0.0, 1.0), (2.0, 0.0, 1.0))
        b = cloud_of((3.0, 0.0, 2.0), views=[1])
        merged = merge_views([a, b])
        assert len(merged) == 3
        assert merged.source_view.tolist() == [0, 0, 1]
        parts = split_by_view(merged)
        assert np.array_equal(parts[0].points, a.points)
        assert np.array_equal(parts[1].points, b.points)

    def test_merge_empty_list_raises(self):
        with pytest.raises(EmptyInputError):
            merge_views([])


class TestOutlierFilter:
    def test_knn_hand_values(self):
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
        assert knn_mean_distances(pts, 1).tolist() == [1.0, 1.0, 2.0]
        assert knn_mean_distances(pts, 2).tolist() == [2.0, 1.5, 2.5]

    def test_far_point_removed(self):
        rng = np.random.default_rng(0)
        near = rng.normal(0.0, 0.1, size=(12, 3))
        far = np.array([[50.0, 0.0, 0.0]])
        cloud = PointCloud(points=np.concatenate([near, far]),
                           source_view=np.arange(13, dtype=np.int64))
        kept = filter_outliers(cloud, k=3, alpha=2.0)
        assert len(kept) == 12
        assert 12 not in kept.source_view  # the far point carried tag 12

    def test_symmetric_cloud_keeps_everything(self):
        pts = [(0.0, 0, 0), (1.0, 0, 0), (0.0, 1, 0), (1.0, 1, 0)]
        cloud = cloud_of(*pts)
        kept = filter_outliers(cloud, k=2, alpha=2.0)
        assert len(kept) == 4

    def test_requires_more_than_k_points(self):
        cloud = cloud_of((0.0, 0, 0), (1.0, 0, 0))
        with pytest.raises(InsufficientPointsError):
            filter_outliers(cloud, k=2)


class TestNormalize:
    def test_hand_example(self):
        cloud = cloud_of((2.0, 0.0, 0.0), (4.0, 0.0, 0.0))
        out = normalize(cloud)
        assert out.points.tolist() == [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]

    def test_result_is_centered_in_unit_ball(self):
        rng = np.random.default_rng(3)
        cloud = PointCloud(points=rng.normal(2.0, 5.0, size=(40, 3)),
                           source_view=np.zeros(40, dtype=np.int64))
        out = normalize(cloud)
        assert np.abs(out.points.mean(axis=0)).max() < 1e-12
        r = np.linalg.norm(out.points, axis=1)
        assert abs(r.max() - 1.0) < 1e-12

    def test_degenerate_cloud_raises(self):
        with pytest.raises(DegenerateCloudError):
            normalize(cloud_of((1.0, 1.0, 1.0), (1.0, 1.0, 1.0)))

    def test_empty_cloud_raises(self):
        empty = PointCloud(points=np.zeros((0, 3)),
                           source_view=np.zeros(0, dtype=np.int64))
        with pytest.raises(EmptyInputError):
            normalize(empty)


def fps_reference(pts: np.ndarray, m: int, seed_index: int) -> list[int]:
    """Literal restatement of the sampling rule with explicit loops."""
    chosen = [seed_index]
    for _ in range(m - 1):
        best_idx, best_dist = None, -1.0
        for i in range(len(pts)):
            d = min(float(np.sqrt(((pts[i] - pts[j]) ** 2).sum())) for j in chosen)
            if d > best_dist:  # strict: ties stay with the lowest index
                best_idx, best_dist = i, d
        chosen.append(best_idx)
    return chosen


class TestFps:
    def test_collinear_hand_case(self):
        cloud = cloud_of((0.0, 0, 0), (1.0, 0, 0), (2.0, 0, 0), (3.0, 0, 0))
        _, idx = sample_fps(cloud, 2)
        assert idx.tolist() == [0, 3]
        _, idx = sample_fps(cloud, 3)
        assert idx.tolist() == [0, 3, 1]  # 1 and 2 tie at distance 1; lowest wins

    def test_square_tie_breaking(self):
        cloud = cloud_of((0.0, 0, 0), (1.0, 0, 0), (0.0, 1, 0), (1.0, 1, 0))
        _, idx = sample_fps(cloud, 4)
        assert idx.tolist() == [0, 3, 1, 2]

    def test_matches_reference_on_random_clouds(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            m_total = int(rng.integers(5, 41))
            pts = rng.normal(size=(m_total, 3))
            cloud = PointCloud(points=pts,
                               source_view=np.zeros(m_total, dtype=np.int64))
            m = int(rng.integers(1, m_total + 1))
            _, idx = sample_fps(cloud, m)
            assert idx.tolist() == fps_reference(pts, m, 0)

    def test_seed_index_respected(self):
        cloud = cloud_of((0.0, 0, 0), (1.0, 0, 0), (2.0, 0, 0))
        _, idx = sample_fps(cloud, 2, seed_index=2)
        assert idx.tolist() == [2, 0]

    def test_bounds_checked(self):
        cloud = cloud_of((0.0, 0, 0))
        with pytest.raises(InsufficientPointsError):
            sample_fps(cloud, 2)
        with pytest.raises(ShapeError):
            sample_fps(cloud, 1, seed_index=5)


class TestUniformSampling:
    def test_deterministic_and_without_replacement(self):
        rng = np.random.default_rng(0)
        cloud = PointCloud(points=rng.normal(size=(30, 3)),
                           source_view=np.zeros(30, dtype=np.int64))
        _, a = sample_uniform(cloud, 10, seed=42)
        _, b = sample_uniform(cloud, 10, seed=42)
        assert np.array_equal(a, b)
        assert len(set(a.tolist())) == 10

    def test_rejects_oversampling(self):
        cloud = cloud_of((0.0, 0, 0))
        with pytest.raises(InsufficientPointsError):
            sample_uniform(cloud, 2, seed=0)


class TestPipelineOnRenderedScene:
    def test_plane_lifts_to_constant_z(self):
        intr = CameraIntrinsics(fx=16.0, fy=16.0, cx=8.0, cy=8.0, width=16, height=16)
        dm = render_depth(Scene((Plane(2.0, 0),)), intr)
        cloud = backproject(dm)
        assert len(cloud) == 256
        assert (cloud.points[:, 2] == 2.0).all()


class TestPly:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        cloud = PointCloud(points=rng.normal(size=(17, 3)) * 1e3,
                           source_view=rng.integers(0, 4, size=17))
        p = tmp_path / "c.ply"
        write_ply(cloud, p)
        back = read_ply(p)
        assert np.array_equal(back.points, cloud.points)
        assert np.array_equal(back.source_view, cloud.source_view)

    def test_write_is_byte_idempotent(self, tmp_path):
        cloud = cloud_of((0.1, 0.2, 0.3), (4.0, 5.0, 6.0))
        a, b = tmp_path / "a.ply", tmp_path / "b.ply"
        write_ply(cloud, a)
        write_ply(cloud, b)
        assert a.read_bytes() == b.read_bytes()

    def test_empty_cloud_round_trips(self, tmp_path):
        empty = PointCloud(points=np.zeros((0, 3)),
                           source_view=np.zeros(0, dtype=np.int64))
        p = tmp_path / "e.ply"
        write_ply(empty, p)
        assert len(read_ply(p)) == 0

    def _written(self, tmp_path):
        cloud = cloud_of((0.1, 0.2, 0.3), (4.0, 5.0, 6.0))
        p = tmp_path / "c.ply"
        write_ply(cloud, p)
        return p

    def test_bad_format_line_number(self, tmp_path):
        p = self._written(tmp_path)
        lines = p.read_text().splitlines()
        lines[1] = "format binary_little_endian 1.0"
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as e:
            read_ply(p)
        assert e.value.location == 2

    def test_wrong_property_list_rejected(self, tmp_path):
        p = self._written(tmp_path)
        p.write_text(p.read_text().replace("property double y", "property float y"))
        with pytest.raises(ParseError, match="property"):
            read_ply(p)

    def test_missing_vertices_line_number(self, tmp_path):
        p = self._written(tmp_path)
        lines = p.read_text().splitlines()
        p.write_text("\n".join(lines[:-1]) + "\n")  # drop last vertex row
        with pytest.raises(ParseError) as e:
            read_ply(p)
        assert e.value.location == len(lines)

    def test_malformed_vertex_line_number(self, tmp_path):
        p = self._written(tmp_path)
        lines = p.read_text().splitlines()
        lines[-1] = "1.0 2.0 oops 0"
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as e:
            read_ply(p)
        assert e.value.location == len(lines)

    def test_trailing_junk_rejected(self, tmp_path):
        p = self._written(tmp_path)
        with open(p, "a") as f:
            f.write("9 9 9 9\n")
        with pytest.raises(ParseError, match="trailing"):
            read_ply(p)
