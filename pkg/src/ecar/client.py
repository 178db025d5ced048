"""Device side: pose tracking between syncs, bounded keyframe-queue local
graph, touch-to-3D interaction generation and render-state output.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (DEFAULT_K, CameraIntrinsics, InsufficientCorrespondences,
                       PlaneGeom, PlaneLabel, Pose, SingularNormalEquations,
                       back_project_ray, project, reconstruct_point,
                       solve_pose_gn)
from .graph import Keypoint, VirtualLine
from .matching import DescriptorIndex
from .protocol import (InteractionMessage, LocalGraphDown, OP_MANIPULATION,
                       OP_REGISTRATION, encode_virtual_line)


@dataclass
class ClientConfig:
    sync_every: int = 4            # upload every Nth frame
    queue_len: int = 10            # device keyframe queue Q
    hamming_max: int = 50
    ratio_max: float = 0.8
    quality: int = 100
    min_inliers: int = 15
    huber_px: float = 2.4494897
    gn_iters: int = 10
    bind_px: float = 2.0           # descriptor rebinding radius
    vo_hit_radius: float = 0.05
    intrinsics: CameraIntrinsics = DEFAULT_K

    def __post_init__(self):
        if self.sync_every < 1:
            raise ValueError("sync_every must be >= 1")


@dataclass
class DeviceMapPoint:
    id: int
    position: np.ndarray
    descriptor: bytes
    obs_count: int = 0


@dataclass
class DeviceKeyFrame:
    pose: Pose
    point_ids: List[int]


@dataclass
class DeviceVO:
    id: int
    position: np.ndarray
    version: int
    payload: bytes


@dataclass
class DeviceLocalGraph:
    """Bounded keyframe queue with observation-refcounted map points."""

    queue_len: int = 10
    keyframes: Deque[DeviceKeyFrame] = field(default_factory=deque)
    map_points: Dict[int, DeviceMapPoint] = field(default_factory=dict)
    planes: List[PlaneGeom] = field(default_factory=list)
    visible_vos: Dict[int, DeviceVO] = field(default_factory=dict)

    def push_keyframe(self, kf: DeviceKeyFrame) -> List[int]:
        """Append a keyframe; evict the oldest past queue_len.

        Returns ids of map points deleted because their refcount hit zero.
        """
        self.keyframes.append(kf)
        for pid in kf.point_ids:
            self.map_points[pid].obs_count += 1
        deleted: List[int] = []
        while len(self.keyframes) > self.queue_len:
            old = self.keyframes.popleft()
            for pid in old.point_ids:
                mp = self.map_points[pid]
                mp.obs_count -= 1
                if mp.obs_count == 0:
                    del self.map_points[pid]
                    deleted.append(pid)
        return deleted


class DeviceClient:
    """Tracking front-end plus sync back-end over one local graph."""

    def __init__(self, device_id: int, config: Optional[ClientConfig] = None):
        self.device_id = device_id
        self.config = config or ClientConfig()
        self.local = DeviceLocalGraph(queue_len=self.config.queue_len)
        self.pose: Optional[Pose] = None
        self.prev_pose: Optional[Pose] = None
        self._index: Optional[DescriptorIndex] = None
        self._index_ids: List[int] = []

    # -- tracking (front-end) ------------------------------------------------

    def _rebuild_index(self) -> None:
        self._index = DescriptorIndex()
        self._index_ids = sorted(self.local.map_points)
        for pid in self._index_ids:
            self._index.add(self.local.map_points[pid].descriptor)

    def _predicted_pose(self) -> Optional[Pose]:
        if self.pose is None:
            return None
        if self.prev_pose is None:
            return self.pose
        delta = self.pose.compose(self.prev_pose.inverse())
        return delta.compose(self.pose).orthonormalized()

    def track_frame(self, keypoints: Sequence[Keypoint]) -> Optional[Pose]:
        """Estimate the pose against the local map; None when lost."""
        cfg = self.config
        if not self.local.map_points or not keypoints or self.pose is None:
            return None
        if self._index is None:
            self._rebuild_index()
        pairs = self._index.match([kp.descriptor for kp in keypoints],
                                  cfg.hamming_max, cfg.ratio_max)
        corrs = []
        seen = set()
        for kp_idx, row in pairs:
            pid = self._index_ids[row]
            if pid in seen or pid not in self.local.map_points:
                continue
            seen.add(pid)
            kp = keypoints[kp_idx]
            corrs.append((self.local.map_points[pid].position, (kp.u, kp.v)))
        if len(corrs) < cfg.min_inliers:
            return None
        initial = self._predicted_pose()
        try:
            pose, inliers = solve_pose_gn(cfg.intrinsics, corrs, initial,
                                          iters=cfg.gn_iters,
                                          huber_px=cfg.huber_px)
        except (InsufficientCorrespondences, SingularNormalEquations):
            return None
        if inliers < cfg.min_inliers:
            return None
        self.prev_pose = self.pose
        self.pose = pose
        return pose

    # -- sync (back-end) -------------------------------------------------------

    def apply_local_graph(self, down: LocalGraphDown,
                          frame_keypoints: Sequence[Keypoint]) -> None:
        """Fold one downloaded local graph into the keyframe queue.

        Each received map point is rebound to the client's own keypoint
        nearest to its transmitted (obs_u, obs_v) within bind_px; points with
        no nearby keypoint are skipped.
        """
        cfg = self.config
        pose = Pose(np.asarray(down.pose_rotation).reshape(3, 3),
                    np.asarray(down.pose_translation))
        kp_uv = np.asarray([[kp.u, kp.v] for kp in frame_keypoints]) \
            if frame_keypoints else np.zeros((0, 2))
        point_ids: List[int] = []
        if down.points and len(kp_uv):
            obs = np.asarray([[p.obs_u, p.obs_v] for p in down.points])
            d2_all = ((obs ** 2).sum(axis=1)[:, None]
                      + (kp_uv ** 2).sum(axis=1)[None, :]
                      - 2.0 * obs @ kp_uv.T)
            nearest = np.argmin(d2_all, axis=1)
            nearest_d2 = d2_all[np.arange(len(obs)), nearest]
            keep = nearest_d2 <= cfg.bind_px ** 2
            positions = np.asarray([p.position for p in down.points],
                                   dtype=float)
            map_points = self.local.map_points
            for i in np.flatnonzero(keep):
                p = down.points[i]
                desc = frame_keypoints[nearest[i]].descriptor
                mp = map_points.get(p.id)
                if mp is None:
                    map_points[p.id] = DeviceMapPoint(
                        id=p.id, position=positions[i], descriptor=desc)
                else:
                    mp.position = positions[i]
                    mp.descriptor = desc
                point_ids.append(p.id)
        self.local.push_keyframe(DeviceKeyFrame(pose=pose, point_ids=point_ids))
        self._index = None  # map changed; rebuild lazily

        self.local.planes = [
            PlaneGeom(pl.id, PlaneLabel(pl.label),
                      np.asarray(pl.normal) / np.linalg.norm(pl.normal),
                      float(pl.d))
            for pl in down.planes
        ]
        for vo in down.vos:
            cur = self.local.visible_vos.get(vo.id)
            if cur is None or vo.version > cur.version:
                self.local.visible_vos[vo.id] = DeviceVO(
                    vo.id, np.asarray(vo.position, dtype=float), vo.version,
                    vo.payload)
        if self.pose is None:
            self.pose = pose.copy()

    # -- interaction --------------------------------------------------------------

    def make_interaction(self, touch_uv: Tuple[float, float],
                         pose: Optional[Pose] = None,
                         payload: object = b"",
                         ) -> Optional[InteractionMessage]:
        """Touch -> Registration/Manipulation message, or None on no hit.

        Existing virtual objects are tested first (sphere hit along the touch
        ray, nearest wins); otherwise the ray is dropped onto the local planes.
        """
        cfg = self.config
        pose = pose or self.pose
        if pose is None:
            return None
        ray = back_project_ray(cfg.intrinsics, pose, *touch_uv)
        if isinstance(payload, VirtualLine):
            payload = encode_virtual_line(payload)

        best_vo = None
        best_d = np.inf
        for vo in self.local.visible_vos.values():
            radius = cfg.vo_hit_radius
            if len(vo.payload) == 43:
                try:
                    from .protocol import decode_virtual_line
                    radius = max(decode_virtual_line(vo.payload).width, radius)
                except ValueError:
                    pass
            rel = vo.position - ray.origin
            along = float(rel @ ray.direction)
            if along <= 0:
                continue
            perp = np.linalg.norm(rel - along * ray.direction)
            if perp <= radius and along < best_d:
                best_d = along
                best_vo = vo
        plane_hit = reconstruct_point(ray, self.local.planes, th_dist=np.inf) \
            if self.local.planes else None
        if best_vo is not None and (plane_hit is None or best_d <= np.linalg.norm(
                plane_hit[0] - ray.origin)):
            return InteractionMessage(best_vo.id, OP_MANIPULATION,
                                      tuple(float(x) for x in
                                            ray.origin + best_d * ray.direction),
                                      payload)
        if plane_hit is not None:
            return InteractionMessage(0, OP_REGISTRATION,
                                      tuple(float(x) for x in plane_hit[0]),
                                      payload)
        return None

    # -- rendering ---------------------------------------------------------------

    def render_state(self, pose: Optional[Pose] = None,
                     ) -> List[Tuple[int, Optional[Tuple[float, float]]]]:
        """Screen positions of all visible virtual objects, ordered by id.

        The screen position is None for objects behind the camera.
        """
        pose = pose or self.pose
        if pose is None:
            return [(vo_id, None) for vo_id in sorted(self.local.visible_vos)]
        out = []
        for vo_id in sorted(self.local.visible_vos):
            vo = self.local.visible_vos[vo_id]
            out.append((vo_id, project(self.config.intrinsics, pose,
                                       vo.position)))
        return out
