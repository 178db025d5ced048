"""Numeric core: pinhole camera model, ray-plane reconstruction, grid
quantization, RANSAC plane fitting and Gauss-Newton pose refinement.

Everything here is a pure function over immutable inputs; callers may use
these from any thread.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

ORTHO_TOL = 1e-6
UP = np.array([0.0, 1.0, 0.0])


class GeometryError(Exception):
    pass


class InsufficientCorrespondences(GeometryError):
    pass


class SingularNormalEquations(GeometryError):
    pass


class PlaneLabel(IntEnum):
    FLOOR = 0
    WALL = 1
    CEILING = 2


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    def inverse_matrix(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])


@dataclass
class Pose:
    """Rigid world->camera transform: X_c = R @ X_w + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=float).reshape(3)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def validate(self, tol: float = ORTHO_TOL) -> None:
        err = np.abs(self.R.T @ self.R - np.eye(3)).max()
        if err > tol:
            raise ValueError(f"rotation not orthonormal (max error {err:g})")
        if np.linalg.det(self.R) < 0:
            raise ValueError("rotation has negative determinant")
        if not np.all(np.isfinite(self.camera_center())):
            raise ValueError("camera center not finite")

    def camera_center(self) -> np.ndarray:
        """World position of the camera, -R^T t."""
        return -self.R.T @ self.t

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self*other) maps world via other first."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def orthonormalized(self) -> "Pose":
        """Nearest rotation (SVD projection); composing drifts otherwise."""
        u, _, vt = np.linalg.svd(self.R)
        r = u @ vt
        if np.linalg.det(r) < 0:
            r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
        return Pose(r, self.t.copy())

    def copy(self) -> "Pose":
        return Pose(self.R.copy(), self.t.copy())


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit length


@dataclass
class PlaneGeom:
    """Infinite plane n . X + d = 0 with a structural label."""

    id: int
    label: PlaneLabel
    normal: np.ndarray
    d: float

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=float).reshape(3)
        n = np.linalg.norm(self.normal)
        if abs(n - 1.0) > 1e-6:
            raise ValueError("plane normal must be unit length")


DEFAULT_K = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0,
                             width=640, height=480)


def look_at(eye, target, up=UP) -> Pose:
    """Camera pose with +Z toward target, image +Y pointing down in world."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, -np.asarray(up, dtype=float))
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking straight up/down: pick an arbitrary right
        right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
        nr = np.linalg.norm(right)
    right = right / nr
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return Pose(R, -R @ eye)


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map for a 3-vector."""
    theta = np.linalg.norm(w)
    K = np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])
    if theta < 1e-12:
        return np.eye(3) + K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def project(K: CameraIntrinsics, pose: Pose, X_w) -> Optional[tuple]:
    """Pixel (u, v) of a world point, or None when behind the camera."""
    Xc = pose.R @ np.asarray(X_w, dtype=float) + pose.t
    if Xc[2] <= 1e-6:
        return None
    return (K.fx * Xc[0] / Xc[2] + K.cx, K.fy * Xc[1] / Xc[2] + K.cy)


def project_many(K: CameraIntrinsics, pose: Pose, X_w: np.ndarray):
    """Vectorized projection. Returns (uv (N,2), depth (N,), in_front (N,))."""
    Xc = X_w @ pose.R.T + pose.t
    z = Xc[:, 2]
    in_front = z > 1e-6
    zs = np.where(in_front, z, 1.0)
    uv = np.empty((len(X_w), 2))
    uv[:, 0] = K.fx * Xc[:, 0] / zs + K.cx
    uv[:, 1] = K.fy * Xc[:, 1] / zs + K.cy
    return uv, z, in_front


def back_project_ray(K: CameraIntrinsics, pose: Pose, u: float, v: float) -> Ray:
    """World ray through pixel (u, v): origin -R^T t, unit direction R^T K^-1 x."""
    d = pose.R.T @ K.inverse_matrix() @ np.array([u, v, 1.0])
    return Ray(pose.camera_center(), d / np.linalg.norm(d))


def ray_plane_distance(ray: Ray, plane: PlaneGeom) -> Optional[float]:
    """Signed ray parameter at the plane, or None when parallel."""
    denom = float(ray.direction @ plane.normal)
    if abs(denom) < 1e-9:
        return None
    return -(plane.d + float(ray.origin @ plane.normal)) / denom


def reconstruct_point(ray: Ray, planes: Sequence[PlaneGeom], th_dist: float):
    """Nearest forward ray-plane intersection within th_dist.

    Returns (point, plane_id) or None when no plane qualifies.
    """
    if th_dist <= 0:
        raise ValueError("th_dist must be positive")
    best_d = None
    best_id = None
    for plane in planes:
        d = ray_plane_distance(ray, plane)
        if d is None or d <= 0 or d >= th_dist:
            continue
        if best_d is None or d < best_d:
            best_d = d
            best_id = plane.id
    if best_d is None:
        return None
    return ray.origin + best_d * ray.direction, best_id


def cell_of(X, cellsize: float) -> tuple:
    """Floor-quantized integer grid cell of a 3D point."""
    if cellsize <= 0:
        raise ValueError("cellsize must be positive")
    X = np.asarray(X, dtype=float)
    q = np.floor(X / cellsize).astype(np.int64)
    return (int(q[0]), int(q[1]), int(q[2]))


_LATTICE_CACHE: dict = {}


def _ray_lattice(K: CameraIntrinsics, window: int) -> np.ndarray:
    """Unit camera-frame directions through the sampled pixel lattice (3 x N).

    Pose-independent (rotation preserves norms), so cached per (K, window).
    """
    key = (K.fx, K.fy, K.cx, K.cy, K.width, K.height, window)
    cached = _LATTICE_CACHE.get(key)
    if cached is None:
        us = np.arange(window / 2.0, K.width, window)
        vs = np.arange(window / 2.0, K.height, window)
        uu, vv = np.meshgrid(us, vs)
        pix = np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)])  # 3 x N
        rays = K.inverse_matrix() @ pix
        cached = np.ascontiguousarray(rays / np.linalg.norm(rays, axis=0))
        _LATTICE_CACHE[key] = cached
    return cached


def viewing_cells(K: CameraIntrinsics, pose: Pose, planes: Sequence[PlaneGeom],
                  window: int, th_dist: float, cellsize: float) -> set:
    """Grid cells hit by plane reconstruction over a uniform pixel lattice.

    Pixels are sampled at window/2, 3*window/2, ... along both axes.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if not planes:
        return set()
    dirs = pose.R.T @ _ray_lattice(K, window)
    origin = pose.camera_center()

    n = dirs.shape[1]
    best_d = np.full(n, np.inf)
    for plane in planes:
        denom = plane.normal @ dirs
        num = -(plane.d + float(origin @ plane.normal))
        with np.errstate(divide="ignore", invalid="ignore"):
            d = num / denom
        d[(np.abs(denom) < 1e-9) | (d <= 0) | (d >= th_dist)] = np.inf
        np.minimum(best_d, d, out=best_d)
    best_hit = np.isfinite(best_d)
    if not best_hit.any():
        return set()
    pts = origin[:, None] + dirs[:, best_hit] * best_d[best_hit]
    keys = np.floor(pts.T / cellsize).astype(np.int64)
    # dedupe via a packed scalar key (unique on rows sorts void records, slow)
    mins = keys.min(axis=0)
    shifted = keys - mins
    dims = shifted.max(axis=0) + 1
    codes = np.unique((shifted[:, 0] * dims[1] + shifted[:, 1]) * dims[2]
                      + shifted[:, 2])
    x, rem = np.divmod(codes, dims[1] * dims[2])
    y, z = np.divmod(rem, dims[2])
    uniq = np.stack([x + mins[0], y + mins[1], z + mins[2]], axis=1)
    return set(map(tuple, uniq.tolist()))


def fit_plane_ransac(points: np.ndarray, label: PlaneLabel, iters: int = 100,
                     inlier_dist: float = 0.03, min_inliers: int = 30,
                     rng: Optional[np.random.Generator] = None,
                     view_origin=None) -> Optional[PlaneGeom]:
    """3-point RANSAC plane fit with least-squares refinement on inliers.

    Floor/ceiling normals are flipped so n . up >= 0; wall normals are flipped
    toward view_origin when given (front-facing for touch rays). Returns None
    when the best consensus set is smaller than min_inliers.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    points = np.asarray(points, dtype=float)
    if len(points) < 3 or len(points) < min_inliers:
        return None
    rng = rng or np.random.default_rng(0)

    best_inliers = None
    best_count = 0
    for _ in range(iters):
        idx = rng.choice(len(points), size=3, replace=False)
        p0, p1, p2 = points[idx]
        n = np.cross(p1 - p0, p2 - p0)
        nn = np.linalg.norm(n)
        if nn < 1e-12:  # collinear sample; draw again
            continue
        n = n / nn
        d = -n @ p0
        dist = np.abs(points @ n + d)
        count = int((dist < inlier_dist).sum())
        if count > best_count:
            best_count = count
            best_inliers = dist < inlier_dist
    if best_count < min_inliers:
        return None

    inl = points[best_inliers]
    centroid = inl.mean(axis=0)
    _, _, vt = np.linalg.svd(inl - centroid)
    normal = vt[2]
    normal = normal / np.linalg.norm(normal)
    if label in (PlaneLabel.FLOOR, PlaneLabel.CEILING):
        if normal @ UP < 0:
            normal = -normal
    elif view_origin is not None:
        if normal @ (np.asarray(view_origin, dtype=float) - centroid) < 0:
            normal = -normal
    d = float(-normal @ centroid)
    return PlaneGeom(id=0, label=label, normal=normal, d=d)


def _pose_jacobian(K: CameraIntrinsics, Xc: np.ndarray) -> np.ndarray:
    """Jacobian of the projection wrt the left-multiplicative (w, dt) tangent.

    Rows per residual component (u, v); columns [w_x w_y w_z t_x t_y t_z].
    """
    x, y, z = Xc
    iz = 1.0 / z
    iz2 = iz * iz
    # d(u,v)/dXc
    Jp = np.array([
        [K.fx * iz, 0.0, -K.fx * x * iz2],
        [0.0, K.fy * iz, -K.fy * y * iz2],
    ])
    # dXc/dw = -[Xc]_x, dXc/dt = I
    skew = np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])
    return np.hstack([Jp @ (-skew), Jp])


def _pose_jacobian_batch(K: CameraIntrinsics, Xc: np.ndarray) -> np.ndarray:
    """Batched _pose_jacobian: (N, 3) camera points -> (N, 2, 6)."""
    n = len(Xc)
    x, y, z = Xc[:, 0], Xc[:, 1], np.maximum(Xc[:, 2], 1e-9)
    iz = 1.0 / z
    iz2 = iz * iz
    J = np.zeros((n, 2, 6))
    # columns wrt dXc, then chain through dXc/dw = -[Xc]_x and dXc/dt = I
    du = np.stack([K.fx * iz, np.zeros(n), -K.fx * x * iz2], axis=1)
    dv = np.stack([np.zeros(n), K.fy * iz, -K.fy * y * iz2], axis=1)
    skew = np.zeros((n, 3, 3))
    skew[:, 0, 1] = -Xc[:, 2]
    skew[:, 0, 2] = y
    skew[:, 1, 0] = Xc[:, 2]
    skew[:, 1, 2] = -x
    skew[:, 2, 0] = -y
    skew[:, 2, 1] = x
    J[:, 0, :3] = -np.einsum("ni,nij->nj", du, skew)
    J[:, 1, :3] = -np.einsum("ni,nij->nj", dv, skew)
    J[:, 0, 3:] = du
    J[:, 1, 3:] = dv
    return J


def _robust_cost(errs: np.ndarray, k: float) -> float:
    small = errs <= k
    cost = np.where(small, 0.5 * errs ** 2, k * (errs - 0.5 * k))
    return float(cost.sum())


def solve_pose_gn(K: CameraIntrinsics, correspondences, initial: Pose,
                  iters: int = 10, huber_px: float = 2.4494897,
                  inlier_px: float = 2.0):
    """Robust Gauss-Newton pose refinement from 2D-3D correspondences.

    correspondences: sequence of (X_w 3-vector, (u, v)). Returns the refined
    pose and the count of residuals within inlier_px.
    """
    if len(correspondences) < 6:
        raise InsufficientCorrespondences(
            f"need >= 6 correspondences, got {len(correspondences)}")
    initial.validate()
    Xw = np.asarray([np.asarray(c[0], dtype=float) for c in correspondences])
    uv = np.asarray([np.asarray(c[1], dtype=float) for c in correspondences])

    pose = initial.copy()

    def residuals(p: Pose):
        Xc = Xw @ p.R.T + p.t
        z = np.maximum(Xc[:, 2], 1e-9)
        pred = np.stack([K.fx * Xc[:, 0] / z + K.cx,
                         K.fy * Xc[:, 1] / z + K.cy], axis=1)
        return pred - uv, Xc

    res, Xc = residuals(pose)
    cost = _robust_cost(np.linalg.norm(res, axis=1), huber_px)
    for _ in range(iters):
        errs = np.linalg.norm(res, axis=1)
        # Huber IRLS weights
        w = np.where(errs <= huber_px, 1.0, huber_px / np.maximum(errs, 1e-12))
        w = np.where(Xc[:, 2] > 1e-6, w, 0.0)
        J = _pose_jacobian_batch(K, Xc)  # (N, 2, 6)
        Jw = J * w[:, None, None]
        H = np.einsum("nij,nik->jk", Jw, J)
        g = np.einsum("nij,ni->j", Jw, res)
        H += 1e-6 * np.trace(H) * np.eye(6)
        try:
            delta = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            raise SingularNormalEquations("normal equations singular")
        if not np.all(np.isfinite(delta)) or np.linalg.cond(H) > 1e12:
            raise SingularNormalEquations("normal equations singular")
        # Left-multiplicative update with step halving on cost increase.
        step = 1.0
        accepted = False
        for _ in range(8):
            Rn = exp_so3(step * delta[:3])
            cand = Pose(Rn @ pose.R, Rn @ pose.t + step * delta[3:])
            cand_res, cand_Xc = residuals(cand)
            cand_cost = _robust_cost(np.linalg.norm(cand_res, axis=1), huber_px)
            if cand_cost <= cost:
                pose, res, Xc, cost = cand, cand_res, cand_Xc, cand_cost
                accepted = True
                break
            step *= 0.5
        if not accepted or np.linalg.norm(delta) < 1e-8:
            break

    inliers = int((np.linalg.norm(res, axis=1) <= inlier_px).sum())
    return pose, inliers
