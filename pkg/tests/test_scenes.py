"""Renderer oracles: analytic intersections checked against hand geometry."""

import numpy as np
import pytest

from depthgate.errors import ConfigError, ShapeError
from depthgate.scenes import (
    INVALID_DEPTH,
    Box,
    CameraIntrinsics,
    DepthMap,
    Plane,
    Scene,
    Sphere,
    add_depth_noise,
    render_depth,
    render_id_raster,
)


def cam(n=16, f=16.0):
    return CameraIntrinsics(fx=f, fy=f, cx=n / 2.0, cy=n / 2.0, width=n, height=n)


class TestIntersections:
    def test_sphere_on_principal_ray_exact(self):
        # ray (0,0,1) into sphere c=(0,0,2) r=0.5: quadratic gives t = 1.5 exactly
        dm = render_depth(Scene((Sphere((0.0, 0.0, 2.0), 0.5, 0),)), cam())
        assert dm.depth[8, 8] == 1.5
        assert dm.valid[8, 8]

    def test_frontal_plane_is_constant_depth(self):
        dm = render_depth(Scene((Plane(2.0, 0),)), cam())
        assert dm.valid.all()
        assert (dm.depth == 2.0).all()

    def test_box_front_face_on_principal_ray(self):
        box = Box((0.0, 0.0, 3.0), (0.5, 0.5, 0.5), 0)
        dm = render_depth(Scene((box,)), cam())
        assert dm.depth[8, 8] == 2.5

    def test_box_slab_intervals(self):
        box = Box((0.0, 0.0, 3.0), (1.0, 1.0, 1.0), 0)
        dm = render_depth(Scene((box,)), cam(16, 8.0))
        # principal ray: x and y slabs are unconstrained, z slab gives t = 2
        assert dm.depth[8, 8] == 2.0
        # u=14 -> dx = 0.75: x interval [-4/3, 4/3] cannot meet z interval [2, 4]
        assert not dm.valid[8, 14]

    def test_box_parallel_axis_miss(self):
        # principal ray has dx = 0; a box fully offset in x can never be hit
        box = Box((2.0, 0.0, 3.0), (1.0, 1.0, 1.0), 0)
        dm = render_depth(Scene((box,)), cam())
        assert not dm.valid[8, 8]

    def test_sphere_hit_point_lies_on_surface(self):
        s = Sphere((0.3, -0.2, 2.5), 0.4, 0)
        intr = cam(32, 32.0)
        dm = render_depth(Scene((s,)), intr)
        vs, us = np.nonzero(dm.valid)
        assert len(vs) > 0
        t = dm.depth[vs, us]
        dx = (us - intr.cx) / intr.fx
        dy = (vs - intr.cy) / intr.fy
        pts = np.stack([t * dx, t * dy, t], axis=1)
        r = np.linalg.norm(pts - np.array(s.center), axis=1)
        assert np.abs(r - s.radius).max() < 1e-9

    def test_nearest_hit_wins(self):
        scene = Scene((Plane(5.0, 0), Sphere((0.0, 0.0, 2.0), 0.5, 1)))
        dm = render_depth(scene, cam())
        assert dm.depth[8, 8] == 1.5
        assert dm.depth[0, 0] == 5.0

    def test_far_clip_invalidates(self):
        dm = render_depth(Scene((Plane(12.0, 0),)), cam(), far_clip=10.0)
        assert not dm.valid.any()
        assert np.isinf(dm.depth).all()

    def test_primitive_behind_camera_never_hits(self):
        dm = render_depth(Scene((Sphere((0.0, 0.0, -3.0), 0.5, 0),)), cam())
        assert not dm.valid.any()

    def test_bounded_plane_rectangle(self):
        plane = Plane(2.0, 0, center_xy=(0.0, 0.0), half_extents_xy=(0.25, 0.25))
        dm = render_depth(Scene((plane,)), cam())
        # at depth 2 the rectangle spans +-0.25, i.e. +-2 pixels around center
        assert dm.valid[8, 8]
        assert not dm.valid[8, 12]


class TestValidation:
    def test_intrinsics_reject_bad_focal(self):
        with pytest.raises(ConfigError):
            CameraIntrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0, width=4, height=4)

    def test_intrinsics_reject_principal_point_outside(self):
        with pytest.raises(ConfigError):
            CameraIntrinsics(fx=1.0, fy=1.0, cx=5.0, cy=0.0, width=4, height=4)

    def test_scene_rejects_duplicate_ids(self):
        with pytest.raises(ConfigError):
            Scene((Plane(2.0, 0), Plane(3.0, 0)))

    def test_depthmap_rejects_out_of_range_valid_pixel(self):
        d = np.full((4, 4), np.inf)
        v = np.zeros((4, 4), dtype=bool)
        d[0, 0] = 11.0
        v[0, 0] = True
        with pytest.raises(ShapeError):
            DepthMap(intrinsics=cam(4, 4.0), depth=d, valid=v, far_clip=10.0)

    def test_depthmap_rejects_finite_invalid_pixel(self):
        d = np.full((4, 4), 1.0)
        v = np.ones((4, 4), dtype=bool)
        v[2, 2] = False
        with pytest.raises(ShapeError):
            DepthMap(intrinsics=cam(4, 4.0), depth=d, valid=v)

    def test_sphere_rejects_nonpositive_radius(self):
        with pytest.raises(ConfigError):
            Sphere((0.0, 0.0, 1.0), 0.0, 0)


class TestNoise:
    def test_zero_noise_is_bit_identical(self):
        dm = render_depth(Scene((Plane(5.0, 0), Sphere((0.0, 0.0, 2.0), 0.5, 1))), cam())
        out = add_depth_noise(dm, sigma=0.0, dropout=0.0, seed=7)
        assert out.depth.tobytes() == dm.depth.tobytes()
        assert np.array_equal(out.valid, dm.valid)

    def test_noise_replays_documented_draw_order(self):
        dm = render_depth(Scene((Plane(2.0, 0),)), cam())
        out = add_depth_noise(dm, sigma=0.05, dropout=0.25, seed=1234)
        rng = np.random.default_rng(1234)
        gauss = rng.standard_normal((16, 16))
        drop = rng.random((16, 16))
        expect = dm.depth * (1.0 + 0.05 * gauss)
        keep = (drop >= 0.25) & (expect > 0.0) & (expect <= dm.far_clip)
        assert np.array_equal(out.valid, keep)
        assert np.array_equal(out.depth[keep], expect[keep])
        assert np.isinf(out.depth[~keep]).all()

    def test_large_noise_invalidates_instead_of_clamping(self):
        dm = render_depth(Scene((Plane(9.0, 0),)), cam())
        out = add_depth_noise(dm, sigma=3.0, dropout=0.0, seed=0)
        assert not out.valid.all()
        d = out.depth[out.valid]
        assert np.all(d > 0.0) and np.all(d <= dm.far_clip)

    def test_noise_parameter_validation(self):
        dm = render_depth(Scene((Plane(2.0, 0),)), cam())
        with pytest.raises(ConfigError):
            add_depth_noise(dm, sigma=-0.1, dropout=0.0, seed=0)
        with pytest.raises(ConfigError):
            add_depth_noise(dm, sigma=0.0, dropout=1.0, seed=0)


class TestIdRaster:
    def test_depth_blind_by_construction(self):
        near = Scene((Plane(5.0, 0), Sphere((0.1, -0.2, 1.5), 0.25, 1)))
        far = Scene((Plane(5.0, 0), Sphere((0.1, -0.2, 3.0), 0.25, 1)))
        a = render_id_raster(near, 16, 16, 10.0)
        b = render_id_raster(far, 16, 16, 10.0)
        assert a.tobytes() == b.tobytes()

    def test_planes_never_painted(self):
        img = render_id_raster(Scene((Plane(5.0, 0),)), 16, 16, 10.0)
        assert (img == 0.0).all()

    def test_sphere_intensity_and_footprint(self):
        scene = Scene((Plane(5.0, 0), Sphere((0.0, 0.0, 2.0), 0.25, 1)))
        img = render_id_raster(scene, 16, 16, 10.0)
        x = (np.arange(16)[None, :] - 8.0) / 10.0
        y = (np.arange(16)[:, None] - 8.0) / 10.0
        inside = x ** 2 + y ** 2 <= 0.25 ** 2
        assert (img[inside] == 1.0).all()
        assert (img[~inside] == 0.0).all()

    def test_painter_order_later_wins(self):
        a = Box((0.0, 0.0, 2.0), (0.3, 0.3, 0.1), 0)
        b = Box((0.2, 0.0, 4.0), (0.3, 0.3, 0.1), 1)
        img = render_id_raster(Scene((a, b)), 16, 16, 10.0)
        # overlap region around x ~ 0.1 is painted by the second primitive
        assert img[8, 9] == 1.0
        # region only covered by the first keeps its intensity 1/2
        assert img[8, 6] == 0.5

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ConfigError):
            render_id_raster(Scene((Plane(2.0, 0),)), 8, 8, 0.0)
