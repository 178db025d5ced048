"""Synthetic scenes, trajectories and frame synthesis.

Scenes are labeled ground-truth planes populated with landmarks (fixed
random 32-byte descriptors). Frame synthesis projects visible landmarks
and degrades them according to an analog of JPEG quality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .geometry import (DEFAULT_K, CameraIntrinsics, PlaneGeom, PlaneLabel,
                       Pose, look_at, project_many)
from .graph import Keypoint

# pixel noise sigma at quality 100 and extra sigma at quality 10
NOISE_BASE_PX = 0.3
NOISE_SPAN_PX = 0.7
BITFLIP_SPAN = 0.002


@dataclass
class Landmark:
    id: int
    position: np.ndarray
    descriptor: bytes
    plane_label: PlaneLabel
    plane_id: int


@dataclass
class Scene:
    planes: List[PlaneGeom]
    landmarks: List[Landmark]
    rng_seed: int
    positions: np.ndarray = field(init=False)

    def __post_init__(self):
        self.positions = np.asarray([lm.position for lm in self.landmarks])

    def visible_landmarks(self, K: CameraIntrinsics, pose: Pose,
                          max_depth: float = 20.0,
                          max_count: int = 1000) -> List[int]:
        """Indices of in-frustum landmarks, nearest-first, capped."""
        uv, depth, front = project_many(K, pose, self.positions)
        ok = (front & (depth <= max_depth)
              & (uv[:, 0] >= 0) & (uv[:, 0] < K.width)
              & (uv[:, 1] >= 0) & (uv[:, 1] < K.height))
        idx = np.nonzero(ok)[0]
        if len(idx) > max_count:
            order = np.argsort(depth[idx], kind="stable")
            idx = idx[order[:max_count]]
        return idx.tolist()


def _sample_on_plane(rng, plane_points: np.ndarray, n: int) -> np.ndarray:
    """Uniform samples on an axis-aligned rectangle given by two corners."""
    lo, hi = plane_points
    return lo + rng.random((n, 3)) * (hi - lo)


def _descriptors(rng: np.random.Generator, n: int) -> List[bytes]:
    raw = rng.integers(0, 256, size=(n, 32), dtype=np.uint8)
    return [bytes(row) for row in raw]


def make_corridor_scene(seed: int = 0, n_landmarks: int = 4000,
                        length: float = 30.0, width: float = 3.0,
                        height: float = 3.0) -> Scene:
    """Corridor along +Z: floor y=0, walls x=0 and x=width."""
    rng = np.random.default_rng(seed)
    floor = PlaneGeom(1, PlaneLabel.FLOOR, np.array([0.0, 1.0, 0.0]), 0.0)
    wall_l = PlaneGeom(2, PlaneLabel.WALL, np.array([1.0, 0.0, 0.0]), 0.0)
    wall_r = PlaneGeom(3, PlaneLabel.WALL, np.array([-1.0, 0.0, 0.0]), width)
    rects = {
        floor.id: (floor, np.array([[0.0, 0.0, 0.0], [width, 0.0, length]])),
        wall_l.id: (wall_l, np.array([[0.0, 0.0, 0.0], [0.0, height, length]])),
        wall_r.id: (wall_r, np.array([[width, 0.0, 0.0], [width, height, length]])),
    }
    shares = {floor.id: 0.5, wall_l.id: 0.25, wall_r.id: 0.25}
    landmarks = []
    descs = _descriptors(rng, n_landmarks)
    lm_id = 0
    for pid, (plane, corners) in rects.items():
        n = int(round(shares[pid] * n_landmarks))
        n = min(n, n_landmarks - lm_id)
        for p in _sample_on_plane(rng, corners, n):
            landmarks.append(Landmark(lm_id, p, descs[lm_id],
                                      plane.label, plane.id))
            lm_id += 1
    return Scene([floor, wall_l, wall_r], landmarks, seed)


def make_room_scene(seed: int = 0, n_landmarks: int = 1500,
                    size: float = 4.0, height: float = 2.5) -> Scene:
    """Small square room (desk scale) for static / quality experiments."""
    rng = np.random.default_rng(seed)
    floor = PlaneGeom(1, PlaneLabel.FLOOR, np.array([0.0, 1.0, 0.0]), 0.0)
    wall_n = PlaneGeom(2, PlaneLabel.WALL, np.array([0.0, 0.0, -1.0]), size)
    wall_w = PlaneGeom(3, PlaneLabel.WALL, np.array([1.0, 0.0, 0.0]), 0.0)
    rects = {
        floor.id: (floor, np.array([[0.0, 0.0, 0.0], [size, 0.0, size]])),
        wall_n.id: (wall_n, np.array([[0.0, 0.0, size], [size, height, size]])),
        wall_w.id: (wall_w, np.array([[0.0, 0.0, 0.0], [0.0, height, size]])),
    }
    landmarks = []
    descs = _descriptors(rng, n_landmarks)
    per = n_landmarks // len(rects)
    lm_id = 0
    for pid, (plane, corners) in rects.items():
        n = per if pid != floor.id else n_landmarks - 2 * per
        for p in _sample_on_plane(rng, corners, n):
            landmarks.append(Landmark(lm_id, p, descs[lm_id],
                                      plane.label, plane.id))
            lm_id += 1
    return Scene([floor, wall_n, wall_w], landmarks, seed)


def corridor_trajectory(n_frames: int, length: float = 30.0,
                        width: float = 3.0, eye_height: float = 1.5,
                        fps: float = 30.0, look_down: float = 2.5,
                        start_z: float = 0.5, end_z: Optional[float] = None,
                        ) -> List[Pose]:
    """Straight walk down the corridor centerline looking at the floor ahead."""
    end_z = length - 1.0 if end_z is None else end_z
    x = width / 2.0
    zs = np.linspace(start_z, end_z, n_frames)
    poses = []
    for z in zs:
        eye = np.array([x, eye_height, z])
        target = np.array([x, 0.0, z + look_down])
        poses.append(look_at(eye, target))
    return poses


def half_circle_trajectory(n_frames: int, center=(0.0, 0.0, 0.0),
                           radius: float = 3.0, eye_height: float = 1.5,
                           degrees: float = 180.0,
                           start_deg: float = 0.0) -> List[Pose]:
    """Arc about a fixed point while looking at the floor around it."""
    center = np.asarray(center, dtype=float)
    angles = np.radians(start_deg + np.linspace(0.0, degrees, n_frames))
    poses = []
    for a in angles:
        eye = center + np.array([radius * np.cos(a), eye_height,
                                 radius * np.sin(a)])
        target = np.array([center[0], 0.0, center[2]])
        poses.append(look_at(eye, target))
    return poses


def static_trajectory(n_frames: int, eye=(2.0, 1.4, 0.6),
                      target=(2.0, 0.3, 3.0)) -> List[Pose]:
    pose = look_at(np.asarray(eye, dtype=float), np.asarray(target, dtype=float))
    return [pose.copy() for _ in range(n_frames)]


def quality_noise_sigma(quality: int, base: float = NOISE_BASE_PX,
                        span: float = NOISE_SPAN_PX) -> float:
    return base + span * (100 - quality) / 90.0


def quality_bitflip_prob(quality: int, span: float = BITFLIP_SPAN) -> float:
    return span * (100 - quality) / 90.0


def synthesize_frame(scene: Scene, pose: Pose, K: CameraIntrinsics = DEFAULT_K,
                     quality: int = 100,
                     rng: Optional[np.random.Generator] = None,
                     max_depth: float = 20.0, max_keypoints: int = 1000,
                     noise_sigma: Optional[float] = None,
                     ) -> Tuple[List[Keypoint], List[int]]:
    """Project visible landmarks into degraded keypoints.

    Returns (keypoints, landmark ids) in matching order. noise_sigma
    overrides the quality-derived pixel noise when given.
    """
    if quality not in range(10, 101, 10):
        raise ValueError("quality must be one of 10, 20, ..., 100")
    rng = rng or np.random.default_rng(0)
    idx = scene.visible_landmarks(K, pose, max_depth=max_depth,
                                  max_count=max_keypoints)
    if not idx:
        return [], []
    uv, _, _ = project_many(K, pose, scene.positions[idx])
    sigma = quality_noise_sigma(quality) if noise_sigma is None else noise_sigma
    if sigma > 0:
        uv = uv + rng.normal(0.0, sigma, size=uv.shape)
    flip_p = quality_bitflip_prob(quality)
    uv_list = uv.tolist()
    keypoints = []
    ids = []
    for row, lm_i in enumerate(idx):
        lm = scene.landmarks[lm_i]
        desc = lm.descriptor
        if flip_p > 0:
            bits = np.unpackbits(np.frombuffer(desc, dtype=np.uint8))
            flips = rng.random(256) < flip_p
            if flips.any():
                desc = bytes(np.packbits(bits ^ flips))
        keypoints.append(Keypoint(uv_list[row][0], uv_list[row][1], 0.0, 0,
                                  desc))
        ids.append(lm.id)
    return keypoints, ids
