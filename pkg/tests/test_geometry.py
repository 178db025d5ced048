import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecar.geometry import (DEFAULT_K, CameraIntrinsics, InsufficientCorrespondences,
                           PlaneGeom, PlaneLabel, Pose, Ray, back_project_ray,
                           cell_of, exp_so3, fit_plane_ransac, look_at, project,
                           project_many, ray_plane_distance, reconstruct_point,
                           solve_pose_gn, viewing_cells, _pose_jacobian)

FLOOR = PlaneGeom(1, PlaneLabel.FLOOR, np.array([0.0, 1.0, 0.0]), 0.0)
WALL = PlaneGeom(2, PlaneLabel.WALL, np.array([1.0, 0.0, 0.0]), 0.0)


def corridor_pose(z=1.0):
    return look_at(np.array([1.5, 1.5, z]), np.array([1.5, 0.0, z + 2.5]))


finite3 = st.tuples(*[st.floats(-20, 20) for _ in range(3)])


# -- projection / back-projection ------------------------------------------------


def test_project_point_on_optical_axis_hits_principal_point():
    pose = look_at(np.zeros(3) + [0, 1, 0], np.array([0.0, 1.0, 5.0]))
    uv = project(DEFAULT_K, pose, np.array([0.0, 1.0, 2.0]))
    assert uv is not None
    assert np.allclose(uv, (DEFAULT_K.cx, DEFAULT_K.cy), atol=1e-9)


def test_project_behind_camera_returns_none():
    pose = look_at(np.zeros(3), np.array([0.0, 0.0, 1.0]))
    assert project(DEFAULT_K, pose, np.array([0.0, 0.0, -3.0])) is None


def test_project_many_agrees_with_project():
    pose = corridor_pose()
    pts = np.array([[1.5, 0.0, 3.0], [0.3, 0.7, 2.0], [1.5, 1.5, 0.0]])
    uv, depth, front = project_many(DEFAULT_K, pose, pts)
    for i, p in enumerate(pts):
        single = project(DEFAULT_K, pose, p)
        if single is None:
            assert not front[i]
        else:
            assert front[i]
            assert np.allclose(uv[i], single, atol=1e-9)


@given(u=st.floats(0, 639), v=st.floats(0, 479))
@settings(max_examples=50, deadline=None)
def test_back_projection_round_trip(u, v):
    """Any pixel's ray, marched forward, projects back onto that pixel."""
    pose = corridor_pose()
    ray = back_project_ray(DEFAULT_K, pose, u, v)
    assert np.isclose(np.linalg.norm(ray.direction), 1.0, atol=1e-9)
    point = ray.origin + 3.7 * ray.direction
    uv = project(DEFAULT_K, pose, point)
    assert uv is not None
    assert np.allclose(uv, (u, v), atol=1e-6)


def test_ray_origin_is_camera_center():
    pose = corridor_pose()
    ray = back_project_ray(DEFAULT_K, pose, 100.0, 200.0)
    assert np.allclose(ray.origin, pose.camera_center(), atol=1e-12)


# -- ray/plane reconstruction -----------------------------------------------------


def test_ray_plane_distance_substitution_oracle():
    """Independent oracle: plug the reconstructed point into the plane equation."""
    pose = corridor_pose()
    for u, v in [(320, 400), (100, 460), (600, 300)]:
        ray = back_project_ray(DEFAULT_K, pose, u, v)
        d = ray_plane_distance(ray, FLOOR)
        if d is None:
            continue
        point = ray.origin + d * ray.direction
        assert abs(FLOOR.normal @ point + FLOOR.d) < 1e-9


def test_ray_parallel_to_plane_misses():
    ray = Ray(np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]))
    assert ray_plane_distance(ray, FLOOR) is None


def test_reconstruct_point_picks_nearest_plane():
    # ray pointing down-and-left from inside the corridor: the wall (x=0) is
    # 2.12 m away along the ray, the floor 2.12 m -- make the wall closer
    origin = np.array([1.0, 1.5, 0.0])
    direction = np.array([-1.0, -0.5, 0.0])
    direction = direction / np.linalg.norm(direction)
    ray = Ray(origin, direction)
    point, plane_id = reconstruct_point(ray, [FLOOR, WALL], th_dist=10.0)
    assert plane_id == WALL.id
    assert abs(point[0]) < 1e-12


def test_reconstruct_point_respects_threshold():
    pose = corridor_pose()
    ray = back_project_ray(DEFAULT_K, pose, 320.0, 470.0)
    hit = reconstruct_point(ray, [FLOOR], th_dist=50.0)
    assert hit is not None
    d = np.linalg.norm(hit[0] - ray.origin)
    assert reconstruct_point(ray, [FLOOR], th_dist=d * 0.99) is None


def test_reconstruct_point_ignores_backward_hits():
    ray = Ray(np.array([0.0, 1.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    assert reconstruct_point(ray, [FLOOR], th_dist=10.0) is None


# -- grid quantization ------------------------------------------------------------


def test_cell_of_exact_arithmetic():
    assert cell_of((0.05, 0.0, 0.149), 0.1) == (0, 0, 1)
    assert cell_of((-0.05, 0.2, 0.0), 0.1) == (-1, 2, 0)
    assert cell_of((5.0, 15.0, 0.0), 0.1) == (50, 150, 0)


@given(p=finite3, k=st.integers(-5, 5))
@settings(max_examples=100, deadline=None)
def test_cell_of_translation_consistency(p, k):
    """Shifting by an exact multiple of cellsize shifts the cell index."""
    cellsize = 0.5
    base = cell_of(p, cellsize)
    shifted = cell_of(np.asarray(p) + np.array([k * cellsize, 0, 0]), cellsize)
    assert shifted[0] - base[0] in (k - 1, k, k + 1)  # float rounding at edges
    assert shifted[1:] == base[1:]


def test_viewing_cells_subset_of_plane_halfspace():
    """Every sampled cell comes from a point on some plane within th_dist."""
    pose = corridor_pose()
    cells = viewing_cells(DEFAULT_K, pose, [FLOOR], window=16, th_dist=10.0,
                          cellsize=0.5)
    assert cells
    for cx, cy, cz in cells:
        assert cy == -1 or cy == 0  # floor cells sit at y ~ 0


def test_viewing_cells_contains_looked_at_cell():
    target = np.array([1.5, 0.0, 3.5])
    pose = look_at(np.array([1.5, 1.5, 1.0]), target)
    cells = viewing_cells(DEFAULT_K, pose, [FLOOR], window=8, th_dist=10.0,
                          cellsize=0.5)
    tc = cell_of(target + [0.01, 0.0, 0.01], 0.5)
    assert tc in cells


def test_viewing_cells_no_planes_empty():
    assert viewing_cells(DEFAULT_K, corridor_pose(), [], 8, 10.0, 0.1) == set()


def test_viewing_cells_denser_window_is_superset_oracle():
    """A brute-force per-pixel oracle must cover the coarse lattice cells."""
    pose = corridor_pose()
    # 24 = 3 x 8: an odd ratio makes the coarse lattice a sub-lattice of the
    # fine one, so coarse hits are exactly a subset of fine hits
    coarse = viewing_cells(DEFAULT_K, pose, [FLOOR, WALL], 24, 10.0, 0.5)
    fine = viewing_cells(DEFAULT_K, pose, [FLOOR, WALL], 8, 10.0, 0.5)
    assert coarse <= fine


# -- RANSAC plane fitting ---------------------------------------------------------


def test_fit_plane_ransac_recovers_floor():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 5, size=(200, 3))
    pts[:, 1] = 0.0
    pts += rng.normal(0, 0.005, pts.shape)
    outliers = rng.uniform(0, 5, size=(20, 3))
    plane = fit_plane_ransac(np.vstack([pts, outliers]), PlaneLabel.FLOOR,
                             rng=np.random.default_rng(1))
    assert plane is not None
    assert plane.normal[1] > 0.99  # flipped toward +Y
    assert abs(plane.d) < 0.01


def test_fit_plane_ransac_wall_normal_faces_viewer():
    rng = np.random.default_rng(2)
    pts = np.zeros((100, 3))
    pts[:, 1] = rng.uniform(0, 3, 100)
    pts[:, 2] = rng.uniform(0, 10, 100)
    view_origin = np.array([1.5, 1.5, 5.0])  # x > 0 side
    plane = fit_plane_ransac(pts, PlaneLabel.WALL,
                             rng=np.random.default_rng(3),
                             view_origin=view_origin)
    assert plane is not None
    assert plane.normal @ np.array([1.0, 0.0, 0.0]) > 0.99


def test_fit_plane_ransac_too_few_points():
    assert fit_plane_ransac(np.zeros((5, 3)), PlaneLabel.FLOOR) is None


# -- Gauss-Newton pose solver -----------------------------------------------------


def make_correspondences(pose, n=40, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform([0.0, 0.0, 1.0], [3.0, 3.0, 8.0], size=(n, 3))
    corrs = []
    for p in pts:
        world = pose.inverse().R @ (p - pose.t)  # p is in camera coordinates
        uv = project(DEFAULT_K, pose, world)
        if uv is None:
            continue
        uv = np.asarray(uv) + rng.normal(0, noise, 2)
        corrs.append((world, uv))
    return corrs


def test_solve_pose_gn_recovers_pose_from_perturbed_start():
    truth = corridor_pose()
    corrs = make_correspondences(truth)
    start = Pose(exp_so3(np.array([0.02, -0.015, 0.01])) @ truth.R,
                 truth.t + np.array([0.05, -0.04, 0.06]))
    est, inliers = solve_pose_gn(DEFAULT_K, corrs, start)
    assert inliers == len(corrs)
    assert np.linalg.norm(est.camera_center() - truth.camera_center()) < 1e-6
    assert np.abs(est.R - truth.R).max() < 1e-6


def test_solve_pose_gn_robust_to_outliers():
    truth = corridor_pose()
    corrs = make_correspondences(truth, n=60, noise=0.2, seed=1)
    # corrupt 10% of the observations badly
    for i in range(0, len(corrs), 10):
        corrs[i] = (corrs[i][0], corrs[i][1] + np.array([80.0, -60.0]))
    start = Pose(truth.R, truth.t + np.array([0.03, 0.0, -0.03]))
    est, inliers = solve_pose_gn(DEFAULT_K, corrs, start)
    assert inliers >= 0.8 * len(corrs)
    assert np.linalg.norm(est.camera_center() - truth.camera_center()) < 0.01


def test_solve_pose_gn_requires_six_points():
    truth = corridor_pose()
    corrs = make_correspondences(truth)[:5]
    with pytest.raises(InsufficientCorrespondences):
        solve_pose_gn(DEFAULT_K, corrs, truth)


def test_pose_jacobian_matches_finite_differences():
    """Analytic 2x6 Jacobian vs central differences, rel. error < 1e-4."""
    pose = corridor_pose()
    Xw = np.array([1.1, 0.3, 4.2])
    Xc = pose.R @ Xw + pose.t
    J = _pose_jacobian(DEFAULT_K, Xc)

    def reproject(delta):
        # same left-multiplicative convention as the solver's update
        R = exp_so3(delta[:3]) @ pose.R
        t = exp_so3(delta[:3]) @ pose.t + delta[3:]
        c = R @ Xw + t
        return np.array([DEFAULT_K.fx * c[0] / c[2] + DEFAULT_K.cx,
                         DEFAULT_K.fy * c[1] / c[2] + DEFAULT_K.cy])

    eps = 1e-6
    J_num = np.zeros((2, 6))
    for k in range(6):
        d = np.zeros(6)
        d[k] = eps
        J_num[:, k] = (reproject(d) - reproject(-d)) / (2 * eps)
    scale = np.abs(J_num).max()
    assert np.abs(J - J_num).max() / scale < 1e-4


def test_solve_pose_gn_cost_never_increases():
    truth = corridor_pose()
    corrs = make_correspondences(truth, n=50, noise=0.5, seed=3)
    start = Pose(exp_so3(np.array([0.05, 0.02, -0.04])) @ truth.R,
                 truth.t + np.array([0.1, -0.1, 0.1]))
    uv = np.asarray([c[1] for c in corrs])
    Xw = np.asarray([c[0] for c in corrs])

    def cost(p):
        proj, _, _ = project_many(DEFAULT_K, p, Xw)
        return float(np.sum((proj - uv) ** 2))

    prev = cost(start)
    pose = start
    for _ in range(8):
        pose, _ = solve_pose_gn(DEFAULT_K, corrs, pose, iters=1)
        now = cost(pose)
        assert now <= prev + 1e-6
        prev = now


# -- pose algebra -----------------------------------------------------------------


def test_pose_compose_inverse_is_identity():
    pose = corridor_pose()
    ident = pose.compose(pose.inverse())
    assert np.allclose(ident.R, np.eye(3), atol=1e-12)
    assert np.allclose(ident.t, 0.0, atol=1e-12)


def test_exp_so3_small_angle():
    w = np.array([1e-9, 0.0, 0.0])
    R = exp_so3(w)
    assert np.allclose(R, np.eye(3), atol=1e-8)
    assert np.isclose(np.linalg.det(exp_so3(np.array([0.3, -0.2, 0.5]))), 1.0)


def test_look_at_points_camera_at_target():
    eye = np.array([1.0, 2.0, 3.0])
    target = np.array([4.0, 0.0, 8.0])
    pose = look_at(eye, target)
    pose.validate()
    uv = project(DEFAULT_K, pose, target)
    assert uv is not None
    assert np.allclose(uv, (DEFAULT_K.cx, DEFAULT_K.cy), atol=1e-6)


def test_camera_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=-1.0, fy=500.0, cx=320, cy=240,
                         width=640, height=480)
