"""Edge server: session management, coordinate alignment, oracle mapping,
grid connection, virtual-object management and local-graph construction.

Frame alignment is read-mostly and may run concurrently across devices;
keyframe creation and interaction handling serialize through the global
graph's writer lock.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from .geometry import (DEFAULT_K, CameraIntrinsics, InsufficientCorrespondences,
                       PlaneGeom, Pose, SingularNormalEquations,
                       fit_plane_ransac, viewing_cells)
from .graph import GlobalGraph, KeyFrame, MapPoint, VirtualObject
from .matching import DescriptorIndex
from .protocol import (Ack, FrameUpload, InteractionMessage, LocalGraphDown,
                       LocalGraphPlane, LocalGraphPoint, LocalGraphVO,
                       OP_MANIPULATION, OP_REGISTRATION, local_graph_from_pose,
                       message_size, _f32)


class UnknownDevice(KeyError):
    pass


class UnknownVirtualObject(KeyError):
    pass


class MalformedPayload(ValueError):
    pass


class Mode(str, Enum):
    ECAR = "ecar"
    FULLMAP = "baseline_fullmap"
    KFVO = "baseline_keyframe_vo"


_MODE_ALIASES = {
    "ecar": Mode.ECAR,
    "fullmap": Mode.FULLMAP,
    "baseline_fullmap": Mode.FULLMAP,
    "kfvo": Mode.KFVO,
    "baseline_keyframe_vo": Mode.KFVO,
}


def parse_mode(name: str) -> Mode:
    try:
        return _MODE_ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown mode {name!r}") from None


@dataclass
class ServerConfig:
    mode: Mode = Mode.ECAR
    cellsize: float = 0.1
    th_dist: float = 10.0
    sample_window: int = 5
    keyframe_ratio: float = 0.9
    keyframe_max_gap: int = 4      # sync frames
    theta_covis: int = 15
    huber_px: float = 2.4494897    # sqrt(5.991)
    gn_iters: int = 10
    hamming_max: int = 50
    ratio_max: float = 0.8
    min_inliers: int = 15
    covis_max: int = 10
    sigma_map: float = 0.01        # oracle map-point position noise
    sense_depth: float = 20.0      # oracle visibility depth, mirrors devices
    max_keypoints: int = 1000
    bind_px: float = 3.0           # new-point observation binding radius
    plane_ransac_iters: int = 100
    plane_inlier_dist: float = 0.03
    plane_min_inliers: int = 30
    proc_time_us: int = 5000       # simulated per-frame server processing
    seed: int = 0
    intrinsics: CameraIntrinsics = DEFAULT_K

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = parse_mode(self.mode)
        if self.cellsize <= 0:
            raise ValueError("cellsize must be positive")

    @staticmethod
    def from_file(path: str) -> "ServerConfig":
        """Load a JSON config; the ECAR_MODE environment variable wins."""
        with open(path) as fh:
            doc = json.load(fh)
        kw = {}
        names = {f.name for f in fields(ServerConfig)}
        for key, value in doc.items():
            if key not in names:
                raise ValueError(f"unknown config field {key!r}")
            kw[key] = value
        if "intrinsics" in kw:
            kw["intrinsics"] = CameraIntrinsics(**kw["intrinsics"])
        cfg = ServerConfig(**kw)
        env_mode = os.environ.get("ECAR_MODE")
        if env_mode:
            cfg = replace(cfg, mode=parse_mode(env_mode))
        return cfg


@dataclass
class SessionStats:
    frames: int = 0
    frames_aligned: int = 0
    alignment_failures: int = 0
    keyframes: int = 0
    interactions: int = 0
    bytes_in: int = 0
    bytes_out: int = 0


@dataclass
class DeviceSession:
    device_id: int
    bootstrap_pose: Optional[Pose] = None
    last_pose: Optional[Pose] = None
    prev_pose: Optional[Pose] = None
    last_seq: int = -1
    aligned_once: bool = False
    ref_kf_id: Optional[int] = None
    syncs_since_kf: int = 0
    stats: SessionStats = field(default_factory=SessionStats)

    def predicted_pose(self) -> Optional[Pose]:
        """Constant-velocity prediction from the last two accepted poses."""
        if self.last_pose is None:
            return self.bootstrap_pose
        if self.prev_pose is None:
            return self.last_pose
        delta = self.last_pose.compose(self.prev_pose.inverse())
        return delta.compose(self.last_pose).orthonormalized()


class EdgeServer:
    """In-process eCAR edge server.

    The scene argument is the mapping oracle: keyframe creation inserts map
    points at ground-truth landmark positions plus Gaussian noise, standing
    in for the triangulation back end.
    """

    def __init__(self, config: ServerConfig, scene=None):
        self.config = config
        self.scene = scene
        self.graph = GlobalGraph(theta_covis=config.theta_covis,
                                 cellsize=config.cellsize)
        self.sessions: Dict[int, DeviceSession] = {}
        self._rng = np.random.default_rng(config.seed)
        self._mp_index = DescriptorIndex()
        self._mp_ids: List[int] = []          # index row -> map point id
        self._lm_to_mp: Dict[int, int] = {}   # landmark id -> map point id
        self._mp_scene_plane: Dict[int, int] = {}
        self._scene_plane_to_plane: Dict[int, int] = {}
        self._point_statics: Dict[int, tuple] = {}  # wire-format fields cache
        # keyframes are immutable once created, so the full-map records built
        # from their own observations can be reused across syncs
        self._kf_full_records: Dict[int, List[LocalGraphPoint]] = {}
        # one-slot memo: keyframe creation and local-graph construction both
        # reconstruct the visible cells for the same (pose, planes) per sync
        self._cells_key: Optional[tuple] = None
        self._cells_val: Optional[set] = None
        self._kf_vos: Dict[int, Set[int]] = {}  # keyframe-attachment modes
        self._vo_kf: Dict[int, int] = {}
        self._next_mp = 1
        self._next_kf = 1
        self._next_plane = 1
        self._next_vo = 1

    # -- sessions ----------------------------------------------------------

    def create_session(self, device_id: int,
                       bootstrap_pose: Optional[Pose] = None) -> DeviceSession:
        session = DeviceSession(device_id=device_id,
                                bootstrap_pose=bootstrap_pose)
        self.sessions[device_id] = session
        return session

    def session(self, device_id: int) -> DeviceSession:
        try:
            return self.sessions[device_id]
        except KeyError:
            raise UnknownDevice(f"device {device_id}") from None

    # -- frame handling ------------------------------------------------------

    def handle_frame(self, device_id: int, upload: FrameUpload,
                     seq: Optional[int] = None) -> LocalGraphDown:
        session = self.session(device_id)
        session.stats.frames += 1
        session.stats.bytes_in += message_size(upload)
        if seq is not None:
            if seq <= session.last_seq:
                return self._lost_response(session)
            session.last_seq = seq

        pose, matched = self._align(session, upload)
        if pose is None:
            session.stats.alignment_failures += 1
            return self._respond(session, self._lost_response(session))
        session.prev_pose = session.last_pose
        session.last_pose = pose
        session.aligned_once = True
        session.stats.frames_aligned += 1

        kf_id = self.create_keyframe(session, upload, matched, pose)
        down = self.build_local_graph(upload, matched, pose, kf_id)
        return self._respond(session, down)

    def _respond(self, session: DeviceSession,
                 down: LocalGraphDown) -> LocalGraphDown:
        session.stats.bytes_out += message_size(down)
        return down

    def _lost_response(self, session: DeviceSession) -> LocalGraphDown:
        pose = session.last_pose or Pose.identity()
        return local_graph_from_pose(pose.R, pose.t,
                                     full_map=self.config.mode is Mode.FULLMAP)

    def _align(self, session: DeviceSession, upload: FrameUpload):
        """Match and refine; returns (pose, {mp_id: kp_index}) or (None, {})."""
        cfg = self.config
        if not upload.keypoints:
            return None, {}
        pairs = self._mp_index.match([kp.descriptor for kp in upload.keypoints],
                                     cfg.hamming_max, cfg.ratio_max)
        matched: Dict[int, int] = {}
        used_kp: Set[int] = set()
        for kp_idx, row in pairs:
            mp_id = self._mp_ids[row]
            if mp_id in matched or kp_idx in used_kp:
                continue
            if mp_id not in self.graph.map_points:
                continue
            matched[mp_id] = kp_idx
            used_kp.add(kp_idx)

        initial = session.predicted_pose()
        if len(matched) < cfg.min_inliers:
            # Ground-truth-seeded bootstrap: the first frame of a session may
            # seed an empty (or unmatched) map from its known start pose.
            if not session.aligned_once and session.bootstrap_pose is not None:
                return session.bootstrap_pose.copy(), matched
            return None, {}
        if initial is None:
            return None, {}
        corrs = [(self.graph.map_points[mp_id].position,
                  (upload.keypoints[kp_idx].u, upload.keypoints[kp_idx].v))
                 for mp_id, kp_idx in matched.items()]
        try:
            pose, inliers = self._solve(corrs, initial)
        except (InsufficientCorrespondences, SingularNormalEquations):
            return None, {}
        if inliers < cfg.min_inliers:
            return None, {}
        return pose, matched

    def _solve(self, corrs, initial: Pose):
        from .geometry import solve_pose_gn
        return solve_pose_gn(self.config.intrinsics, corrs, initial,
                             iters=self.config.gn_iters,
                             huber_px=self.config.huber_px)

    # -- keyframes / mapping -------------------------------------------------

    def _should_create_keyframe(self, session: DeviceSession,
                                matched: Dict[int, int]) -> bool:
        if session.ref_kf_id is None:
            return True
        session.syncs_since_kf += 1
        if session.syncs_since_kf >= self.config.keyframe_max_gap:
            return True
        ref = self.graph.keyframes.get(session.ref_kf_id)
        if ref is None or not ref.observations:
            return True
        tracked = len(matched.keys() & ref.observations.keys())
        return tracked / len(ref.observations) < self.config.keyframe_ratio

    def create_keyframe(self, session: DeviceSession, upload: FrameUpload,
                        matched: Dict[int, int], pose: Pose) -> Optional[int]:
        if not self._should_create_keyframe(session, matched):
            return None
        cfg = self.config
        with self.graph.lock:
            kf = KeyFrame(id=self._next_kf, pose=pose.copy(),
                          keypoints=list(upload.keypoints))
            self._next_kf += 1
            self.graph.add_keyframe(kf)
            used_kp: Set[int] = set()
            for mp_id, kp_idx in matched.items():
                self.graph.add_observation(kf.id, mp_id, kp_idx)
                used_kp.add(kp_idx)

            if self.scene is not None:
                self._oracle_map(kf, pose, used_kp)
            self._link_planes(kf)
            kf.cell_keys = self._viewing_cells(
                pose, [self.graph.planes[p] for p in kf.plane_ids])
            session.ref_kf_id = kf.id
            session.syncs_since_kf = 0
            session.stats.keyframes += 1
            if cfg.mode in (Mode.KFVO, Mode.FULLMAP):
                self._kf_vos.setdefault(kf.id, set())
            return kf.id

    def _viewing_cells(self, pose: Pose, planes: List[PlaneGeom]) -> set:
        cfg = self.config
        key = (pose.R.tobytes(), pose.t.tobytes(),
               tuple(sorted(p.id for p in planes)))
        if key != self._cells_key:
            self._cells_key = key
            self._cells_val = viewing_cells(cfg.intrinsics, pose, planes,
                                            cfg.sample_window, cfg.th_dist,
                                            cfg.cellsize)
        return self._cells_val

    def _oracle_map(self, kf: KeyFrame, pose: Pose, used_kp: Set[int]) -> None:
        """Insert map points for visible landmarks that are not mapped yet."""
        cfg = self.config
        vis = self.scene.visible_landmarks(cfg.intrinsics, pose,
                                           max_depth=cfg.sense_depth,
                                           max_count=cfg.max_keypoints)
        new_ids = []
        center = pose.camera_center()
        for lm_i in vis:
            lm = self.scene.landmarks[lm_i]
            if lm.id in self._lm_to_mp:
                continue
            position = lm.position + self._rng.normal(0.0, cfg.sigma_map, 3)
            view = center - position
            dist = float(np.linalg.norm(view))
            mp = MapPoint(id=self._next_mp, position=position,
                          descriptor=lm.descriptor,
                          normal=view / max(dist, 1e-9),
                          dist_min=dist / 2.0, dist_max=dist * 2.0)
            self._next_mp += 1
            self.graph.add_map_point(mp)
            self._mp_index.add(lm.descriptor)
            self._mp_ids.append(mp.id)
            self._lm_to_mp[lm.id] = mp.id
            self._mp_scene_plane[mp.id] = lm.plane_id
            new_ids.append(mp.id)
        if not new_ids:
            return
        # Bind new points to the nearest unused uploaded keypoint.
        kp_uv = np.asarray([[kp.u, kp.v] for kp in kf.keypoints])
        if len(kp_uv) == 0:
            return
        from .geometry import project_many
        positions = np.asarray([self.graph.map_points[i].position
                                for i in new_ids])
        uv, _, front = project_many(cfg.intrinsics, pose, positions)
        free = np.ones(len(kp_uv), dtype=bool)
        for i in used_kp:
            free[i] = False
        for row, mp_id in enumerate(new_ids):
            if not front[row] or not free.any():
                continue
            d2 = np.sum((kp_uv - uv[row]) ** 2, axis=1)
            d2[~free] = np.inf
            j = int(np.argmin(d2))
            if d2[j] <= cfg.bind_px ** 2:
                self.graph.add_observation(kf.id, mp_id, j)
                free[j] = False

    def _link_planes(self, kf: KeyFrame) -> None:
        """Fit/link labeled structure planes from this keyframe's points."""
        cfg = self.config
        groups: Dict[int, List[np.ndarray]] = {}
        labels: Dict[int, int] = {}
        for mp_id in kf.observations:
            sp = self._mp_scene_plane.get(mp_id)
            if sp is None:
                continue
            groups.setdefault(sp, []).append(self.graph.map_points[mp_id].position)
        if self.scene is not None:
            labels = {p.id: p.label for p in self.scene.planes}
        for sp, pts in groups.items():
            if len(pts) < cfg.plane_min_inliers:
                continue
            plane_id = self._scene_plane_to_plane.get(sp)
            if plane_id is None:
                fitted = fit_plane_ransac(
                    np.asarray(pts), labels.get(sp, 1),
                    iters=cfg.plane_ransac_iters,
                    inlier_dist=cfg.plane_inlier_dist,
                    min_inliers=cfg.plane_min_inliers,
                    rng=self._rng,
                    view_origin=kf.pose.camera_center())
                if fitted is None:
                    continue
                fitted.id = self._next_plane
                self._next_plane += 1
                self.graph.add_plane(fitted)
                self._scene_plane_to_plane[sp] = fitted.id
                plane_id = fitted.id
            kf.plane_ids.add(plane_id)

    # -- local graph construction ---------------------------------------------

    def build_local_graph(self, upload: FrameUpload, matched: Dict[int, int],
                          pose: Pose, created_kf_id: Optional[int] = None,
                          ) -> LocalGraphDown:
        cfg = self.config
        with self.graph.lock:
            matched_all = dict(matched)
            if created_kf_id is not None:
                kf = self.graph.keyframes[created_kf_id]
                for mp_id, kp_idx in kf.observations.items():
                    matched_all.setdefault(mp_id, kp_idx)

            # K^L: keyframes observing the tracked points, one covis hop out.
            base: Set[int] = set()
            for mp_id in matched_all:
                base |= self.graph.observers_of(mp_id)
            local_kfs = set(base)
            for kf_id in base:
                local_kfs.update(
                    self.graph.covisible_keyframes(kf_id, cfg.covis_max))

            plane_ids: Set[int] = set()
            for kf_id in local_kfs:
                plane_ids |= self.graph.keyframes[kf_id].plane_ids
            planes = [self.graph.planes[p] for p in sorted(plane_ids)]

            if cfg.mode is Mode.FULLMAP:
                points = self._full_map_points(local_kfs, matched_all, upload)
            else:
                points = self._tracked_points(matched_all, upload)

            if cfg.mode is Mode.ECAR:
                vos = self.graph.vos_in_cells(self._viewing_cells(pose, planes))
            else:
                vo_ids: Set[int] = set()
                for kf_id in local_kfs:
                    vo_ids |= self._kf_vos.get(kf_id, set())
                vos = [self.graph.virtual_objects[i] for i in sorted(vo_ids)]

            return local_graph_from_pose(
                pose.R, pose.t,
                points=points,
                planes=[LocalGraphPlane(p.id, int(p.label),
                                        tuple(_f32(x) for x in p.normal),
                                        _f32(p.d))
                        for p in planes],
                vos=[self._vo_record(v) for v in vos],
                full_map=cfg.mode is Mode.FULLMAP)

    def _point_record(self, mp_id: int, obs_uv, angle: float, octave: int,
                      full: bool) -> LocalGraphPoint:
        cached = self._point_statics.get(mp_id)
        if cached is None:
            mp = self.graph.map_points[mp_id]
            normal = mp.normal if mp.normal is not None else np.zeros(3)
            cached = (tuple(_f32(x) for x in mp.position),
                      mp.descriptor or bytes(32),
                      tuple(_f32(x) for x in normal),
                      _f32(mp.dist_min or 0.0), _f32(mp.dist_max or 0.0))
            self._point_statics[mp_id] = cached
        rec = LocalGraphPoint(
            id=mp_id, position=cached[0],
            obs_u=_f32(obs_uv[0]), obs_v=_f32(obs_uv[1]),
            angle=_f32(angle), octave=octave)
        if full:
            rec.descriptor = cached[1]
            rec.normal = cached[2]
            rec.dist_min = cached[3]
            rec.dist_max = cached[4]
        return rec

    def _tracked_points(self, matched_all: Dict[int, int],
                        upload: FrameUpload) -> List[LocalGraphPoint]:
        points = []
        for mp_id in sorted(matched_all):
            kp = upload.keypoints[matched_all[mp_id]]
            points.append(self._point_record(mp_id, (kp.u, kp.v), kp.angle,
                                             kp.octave, full=False))
        return points

    def _full_map_points(self, local_kfs: Set[int], matched_all: Dict[int, int],
                         upload: FrameUpload) -> List[LocalGraphPoint]:
        """Baseline payload: every point observed by the local keyframes."""
        seen: Dict[int, LocalGraphPoint] = {}
        setdefault = seen.setdefault
        for kf_id in sorted(local_kfs):
            records = self._kf_full_records.get(kf_id)
            if records is None:
                kf = self.graph.keyframes[kf_id]
                records = [self._point_record(mp_id, (kp.u, kp.v), kp.angle,
                                              kp.octave, full=True)
                           for mp_id, kp in ((m, kf.keypoints[i])
                                             for m, i in kf.observations.items())]
                self._kf_full_records[kf_id] = records
            for rec in records:
                setdefault(rec.id, rec)
        for mp_id, kp_idx in matched_all.items():
            kp = upload.keypoints[kp_idx]
            seen[mp_id] = self._point_record(mp_id, (kp.u, kp.v), kp.angle,
                                             kp.octave, full=True)
        return [seen[mp_id] for mp_id in sorted(seen)]

    def _vo_record(self, vo: VirtualObject) -> LocalGraphVO:
        payload = vo.payload
        if not isinstance(payload, bytes):
            from .protocol import encode_virtual_line
            payload = encode_virtual_line(payload)
        return LocalGraphVO(vo.id, tuple(_f32(x) for x in vo.position),
                            vo.version, payload)

    # -- interactions -----------------------------------------------------------

    def handle_interaction(self, device_id: int,
                           msg: InteractionMessage) -> Tuple[Ack, int]:
        """Apply a Registration/Manipulation; returns (Ack, vo_id)."""
        session = self.session(device_id)
        session.stats.interactions += 1
        session.stats.bytes_in += message_size(msg)
        position = np.asarray(msg.position, dtype=float)
        if not np.all(np.isfinite(position)):
            raise MalformedPayload("non-finite interaction position")
        with self.graph.lock:
            if msg.op == OP_REGISTRATION:
                vo = VirtualObject(id=self._next_vo, position=position,
                                   version=1, owner_device=device_id,
                                   payload=msg.payload)
                self._next_vo += 1
            else:
                vo = self.graph.virtual_objects.get(msg.vo_id)
                if vo is None:
                    raise UnknownVirtualObject(f"virtual object {msg.vo_id}")
                vo.position = position
                vo.payload = msg.payload
                vo.version += 1
            self.graph.attach_vo(vo)
            if self.config.mode in (Mode.KFVO, Mode.FULLMAP):
                self._attach_vo_to_keyframe(vo, session)
        ack = Ack()
        session.stats.bytes_out += message_size(ack)
        return ack, vo.id

    def _attach_vo_to_keyframe(self, vo: VirtualObject,
                               session: DeviceSession) -> None:
        kf_id = session.ref_kf_id
        if kf_id is None or kf_id not in self.graph.keyframes:
            return
        old = self._vo_kf.get(vo.id)
        if old is not None:
            self._kf_vos.get(old, set()).discard(vo.id)
        self._kf_vos.setdefault(kf_id, set()).add(vo.id)
        self._vo_kf[vo.id] = kf_id

    # -- observability ------------------------------------------------------------

    def spectate(self, region: Optional[Tuple[Tuple[int, int, int],
                                              Tuple[int, int, int]]] = None) -> dict:
        """Read-consistent JSON-friendly snapshot for the UI."""
        from .protocol import decode_virtual_line

        def in_region(key) -> bool:
            if region is None:
                return True
            lo, hi = region
            return all(lo[i] <= key[i] <= hi[i] for i in range(3))

        with self.graph.lock:
            vos = []
            for vo in self.graph.virtual_objects.values():
                key = self.graph.vo_cell(vo.id)
                if key is None or not in_region(key):
                    continue
                entry = {
                    "id": vo.id,
                    "position": [float(x) for x in vo.position],
                    "version": vo.version,
                    "owner_device": vo.owner_device,
                    "cell": list(key),
                }
                payload = vo.payload
                if isinstance(payload, bytes) and len(payload) == 43:
                    try:
                        line = decode_virtual_line(payload)
                        entry["line"] = {
                            "start": line.start.tolist(),
                            "end": line.end.tolist(),
                            "rgb": list(line.rgb),
                            "width": line.width,
                            "normal": line.normal.tolist(),
                        }
                    except ValueError:
                        pass
                vos.append(entry)
            planes = [{
                "id": p.id,
                "label": int(p.label),
                "normal": p.normal.tolist(),
                "d": p.d,
            } for p in self.graph.planes.values()]
            devices = []
            for session in self.sessions.values():
                if session.last_pose is None:
                    continue
                center = session.last_pose.camera_center()
                forward = session.last_pose.R.T @ np.array([0.0, 0.0, 1.0])
                devices.append({
                    "device_id": session.device_id,
                    "position": center.tolist(),
                    "forward": forward.tolist(),
                })
            return {
                "planes": planes,
                "virtual_objects": sorted(vos, key=lambda v: v["id"]),
                "devices": devices,
                "cellsize": self.config.cellsize,
            }

    def metrics_snapshot(self) -> dict:
        per_device = {}
        totals = SessionStats()
        for device_id, session in sorted(self.sessions.items()):
            s = session.stats
            per_device[str(device_id)] = s.__dict__.copy()
            for key, value in s.__dict__.items():
                setattr(totals, key, getattr(totals, key) + value)
        return {
            "mode": self.config.mode.value,
            "devices": per_device,
            "totals": totals.__dict__.copy(),
            "map_points": len(self.graph.map_points),
            "keyframes": len(self.graph.keyframes),
            "planes": len(self.graph.planes),
            "virtual_objects": len(self.graph.virtual_objects),
            "cells": len(self.graph.cells),
        }
