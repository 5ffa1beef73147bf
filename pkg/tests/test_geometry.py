"""Camera geometry: back-projection, world transform, projective index."""

import math

import numpy as np
import pytest

from allomap.geometry import (
    GridSpec,
    Intrinsics,
    Pose,
    back_project,
    cell_of,
    project_camera,
    projection_index,
)


def random_pose(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return Pose(q, rng.uniform(-3, 3, 3))


def naive_projection_index(depth, intr, pose, grid, stride):
    """Per-pixel scalar reference for projection_index."""
    h, w = depth.shape
    off = stride // 2
    rows, cols = h // stride, w // stride
    valid = np.zeros((rows, cols), dtype=bool)
    ci = np.full((rows, cols), -1, dtype=np.int64)
    cj = np.full((rows, cols), -1, dtype=np.int64)
    hy = np.zeros((rows, cols), dtype=np.float64)
    rt = pose.r.T
    t = pose.t
    for rr in range(rows):
        for cc in range(cols):
            v = rr * stride + off
            u = cc * stride + off
            d = float(depth[v, u])
            if not (math.isfinite(d) and d > 0):
                continue
            x = (float(u) - intr.cx) * d / intr.fx
            y = (float(v) - intr.cy) * d / intr.fy
            z = d
            wx = rt[0, 0] * x + rt[0, 1] * y + rt[0, 2] * z - t[0]
            wy = rt[1, 0] * x + rt[1, 1] * y + rt[1, 2] * z - t[1]
            wz = rt[2, 0] * x + rt[2, 1] * y + rt[2, 2] * z - t[2]
            i = int(math.floor((wx - grid.origin_x) / grid.resolution))
            j = int(math.floor((wz - grid.origin_z) / grid.resolution))
            if 0 <= i < grid.width and 0 <= j < grid.height and grid.h_min <= wy <= grid.h_max:
                valid[rr, cc] = True
                ci[rr, cc] = i
                cj[rr, cc] = j
                hy[rr, cc] = wy
    return valid, ci, cj, hy


class TestBackProject:
    def test_principal_ray(self):
        intr = Intrinsics(fx=1, fy=1, cx=0, cy=0, width=4, height=4)
        pts, ok = back_project(0, 0, 1.0, intr)
        assert ok
        np.testing.assert_allclose(pts, [0.0, 0.0, 1.0])

    def test_hand_evaluated_pixel(self):
        intr = Intrinsics.from_hfov(64, 64, 90.0)
        assert intr.fx == pytest.approx(32.0)
        pts, ok = back_project(48, 32, 2.0, intr)
        assert ok
        np.testing.assert_allclose(pts, [1.0, 0.0, 2.0], atol=1e-12)

    def test_invalid_depth_flagged(self):
        intr = Intrinsics.from_hfov(8, 8)
        _, ok = back_project(np.array([1, 2, 3]), np.array([1, 2, 3]),
                             np.array([0.0, -1.0, np.nan]), intr)
        assert not ok.any()

    def test_project_back_project_round_trip(self):
        rng = np.random.default_rng(0)
        intr = Intrinsics.from_hfov(64, 64)
        u = rng.uniform(0, 64, 1000)
        v = rng.uniform(0, 64, 1000)
        d = rng.uniform(0.1, 10.0, 1000)
        pts, ok = back_project(u, v, d, intr)
        assert ok.all()
        u2, v2, d2 = project_camera(pts, intr)
        np.testing.assert_allclose(u2, u, atol=1e-9)
        np.testing.assert_allclose(v2, v, atol=1e-9)
        np.testing.assert_allclose(d2, d, atol=1e-9)

    def test_bad_intrinsics_rejected(self):
        with pytest.raises(ValueError):
            Intrinsics(fx=-1, fy=1, cx=0, cy=0, width=4, height=4)
        with pytest.raises(ValueError):
            Intrinsics(fx=1, fy=1, cx=9, cy=0, width=4, height=4)


class TestPose:
    def test_identity(self):
        p = Pose.identity()
        np.testing.assert_array_equal(p.camera_to_world([1.0, 2.0, 3.0]), [1, 2, 3])

    def test_translation_convention(self):
        pose = Pose(np.eye(3), [1.0, 0.0, 0.0])
        np.testing.assert_allclose(pose.camera_to_world([1.0, 0.0, 2.0]), [0, 0, 2])

    def test_round_trip_random(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            pose = random_pose(rng)
            p = rng.uniform(-5, 5, 3)
            np.testing.assert_allclose(
                pose.world_to_camera(pose.camera_to_world(p)), p, atol=1e-9
            )

    def test_invalid_rotation_rejected(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 2.0, np.zeros(3))
        refl = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError, match="determinant"):
            Pose(refl, np.zeros(3))

    def test_from_position_yaw_valid_and_oriented(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            pos = rng.uniform(-4, 4, 3)
            yaw = rng.uniform(-math.pi, math.pi)
            pitch = rng.uniform(-0.5, 0.5)
            pose = Pose.from_position_yaw(pos, yaw, pitch)
            np.testing.assert_allclose(pose.camera_position, pos, atol=1e-12)
            np.testing.assert_allclose(pose.r.T @ pose.r, np.eye(3), atol=1e-12)
        pose = Pose.from_position_yaw([0, 1, 0], yaw=0.0)
        np.testing.assert_allclose(pose.forward(), [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(pose.camera_to_world([0, 0, 2.0]), [0, 1, 2], atol=1e-12)

    def test_pitch_down_lowers_forward(self):
        pose = Pose.from_position_yaw([0, 1, 0], yaw=0.0, pitch=0.3)
        fwd = pose.forward()
        assert fwd[1] == pytest.approx(-math.sin(0.3))


class TestWorldToCell:
    GRID = GridSpec(resolution=0.02, origin_x=-1.0, origin_z=-1.0,
                    width=200, height=200, h_min=0.0, h_max=2.0)

    def test_hand_example(self):
        assert cell_of([0.05, 0.5, 0.03], self.GRID) == (52, 51)

    def test_origin_cell(self):
        assert cell_of([-1.0, 1.0, -1.0], self.GRID) == (0, 0)

    def test_height_filter(self):
        assert cell_of([0.0, 2.5, 0.0], self.GRID) is None
        assert cell_of([0.0, -0.5, 0.0], self.GRID) is None

    def test_out_of_bounds(self):
        assert cell_of([50.0, 1.0, 0.0], self.GRID) is None

    def test_monotone_in_x(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            # keep fractional position away from floor ties
            i0 = rng.integers(0, self.GRID.width - 1)
            frac = rng.uniform(0.2, 0.8)
            x = self.GRID.origin_x + (i0 + frac) * self.GRID.resolution
            a = cell_of([x, 1.0, 0.0], self.GRID)
            b = cell_of([x + self.GRID.resolution, 1.0, 0.0], self.GRID)
            assert b[0] == a[0] + 1
            assert b[1] == a[1]

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            GridSpec(0.0, 0, 0, 10, 10, 0, 2)
        with pytest.raises(ValueError):
            GridSpec(0.02, 0, 0, 10, 10, 2, 2)


class TestProjectionIndex:
    GRID = GridSpec(resolution=0.02, origin_x=-3.0, origin_z=-3.0,
                    width=300, height=300, h_min=0.05, h_max=2.0)

    def test_all_invalid_depth(self):
        intr = Intrinsics.from_hfov(16, 16)
        idx = projection_index(np.zeros((16, 16), np.float32), intr,
                               Pose.identity(), self.GRID, 4)
        assert not idx.valid.any()
        assert (idx.cell_i == -1).all()

    def test_single_valid_pixel_matches_composition(self):
        intr = Intrinsics.from_hfov(16, 16)
        pose = Pose.from_position_yaw([0.2, 1.0, -0.4], yaw=0.7, pitch=0.2)
        depth = np.zeros((16, 16), np.float32)
        depth[6, 10] = 1.7
        idx = projection_index(depth, intr, pose, self.GRID, 4)
        assert idx.valid.sum() == 1
        assert idx.valid[1, 2]  # stride-4 center (v=6, u=10)
        p_c, ok = back_project(10, 6, float(depth[6, 10]), intr)
        assert ok
        p_w = pose.camera_to_world(p_c)
        cell = cell_of(p_w, self.GRID)
        assert (int(idx.cell_i[1, 2]), int(idx.cell_j[1, 2])) == cell
        assert idx.height[1, 2] == pytest.approx(p_w[1], abs=1e-9)

    def test_indivisible_stride_rejected(self):
        intr = Intrinsics.from_hfov(18, 18)
        with pytest.raises(ValueError, match="divisible"):
            projection_index(np.ones((18, 18), np.float32), intr,
                             Pose.identity(), self.GRID, 4)

    @pytest.mark.parametrize("stride", [1, 4])
    def test_matches_naive_loop_bitwise(self, stride):
        rng = np.random.default_rng(4)
        intr = Intrinsics.from_hfov(32, 32)
        for trial in range(5):
            pose = Pose.from_position_yaw(
                rng.uniform(-1, 1, 3) + [0, 1.2, 0],
                yaw=rng.uniform(-math.pi, math.pi),
                pitch=rng.uniform(-0.3, 0.3),
            )
            depth = rng.uniform(0.05, 6.0, (32, 32)).astype(np.float32)
            depth[rng.uniform(size=(32, 32)) < 0.2] = 0.0  # invalid patches
            idx = projection_index(depth, intr, pose, self.GRID, stride)
            valid, ci, cj, hy = naive_projection_index(depth, intr, pose, self.GRID, stride)
            np.testing.assert_array_equal(idx.valid, valid)
            np.testing.assert_array_equal(idx.cell_i, ci)
            np.testing.assert_array_equal(idx.cell_j, cj)
            assert idx.height.tobytes() == hy.tobytes()

    def test_flat_cells(self):
        intr = Intrinsics.from_hfov(8, 8)
        depth = np.full((8, 8), 2.0, np.float32)
        idx = projection_index(depth, intr, Pose.from_position_yaw([0, 1, 0], 0.0),
                               self.GRID, 4)
        flat = idx.flat_cells
        assert ((flat[idx.valid] == idx.cell_j[idx.valid] * self.GRID.width
                 + idx.cell_i[idx.valid])).all()
