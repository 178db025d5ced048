"""Graph-grid data structure shared by the edge server and devices.

Map points, keyframes, planes, grid cells and virtual objects, plus the
weighted co-visibility adjacency over keyframes. All mutation goes through
a single writer lock; snapshot reads copy under the same lock.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple, Union

import numpy as np

from .geometry import PlaneGeom, PlaneLabel, Pose, cell_of

DESCRIPTOR_SIZE = 32
DEFAULT_THETA_COVIS = 15

CellKey = Tuple[int, int, int]


class UnknownId(KeyError):
    pass


class DuplicateObservation(ValueError):
    pass


@dataclass
class MapPoint:
    id: int
    position: np.ndarray
    descriptor: Optional[bytes] = None
    normal: Optional[np.ndarray] = None
    dist_min: Optional[float] = None
    dist_max: Optional[float] = None
    obs_count: int = 0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        if self.descriptor is not None and len(self.descriptor) != DESCRIPTOR_SIZE:
            raise ValueError("descriptor must be exactly 32 bytes")
        if self.normal is not None:
            self.normal = np.asarray(self.normal, dtype=float).reshape(3)
            if abs(np.linalg.norm(self.normal) - 1.0) > 1e-6:
                raise ValueError("normal must be unit length")


@dataclass
class Keypoint:
    u: float
    v: float
    angle: float
    octave: int
    descriptor: bytes

    def __post_init__(self):
        if len(self.descriptor) != DESCRIPTOR_SIZE:
            raise ValueError("descriptor must be exactly 32 bytes")


@dataclass
class KeyFrame:
    id: int
    pose: Pose
    keypoints: List[Keypoint] = field(default_factory=list)
    observations: Dict[int, int] = field(default_factory=dict)  # mp_id -> kp index
    plane_ids: Set[int] = field(default_factory=set)
    cell_keys: Set[CellKey] = field(default_factory=set)


@dataclass
class VirtualLine:
    start: np.ndarray
    end: np.ndarray
    rgb: bytes
    width: float
    normal: np.ndarray

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float).reshape(3)
        self.end = np.asarray(self.end, dtype=float).reshape(3)
        self.normal = np.asarray(self.normal, dtype=float).reshape(3)
        if len(self.rgb) != 3:
            raise ValueError("rgb must be 3 bytes")
        if self.width <= 0:
            raise ValueError("width must be positive")
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-3:
            raise ValueError("normal must be unit length")


@dataclass
class VirtualObject:
    id: int
    position: np.ndarray
    version: int = 1
    owner_device: int = 0
    payload: Union[VirtualLine, bytes] = b""

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)


@dataclass
class GridCell:
    key: CellKey
    vo_ids: Set[int] = field(default_factory=set)


class GlobalGraph:
    """Server-side store with incremental co-visibility maintenance.

    Co-visibility shared-observation counts are tracked for every keyframe
    pair; an edge "exists" once the count reaches theta_covis.
    """

    def __init__(self, theta_covis: int = DEFAULT_THETA_COVIS, cellsize: float = 0.1):
        self.theta_covis = theta_covis
        self.cellsize = cellsize
        self.map_points: Dict[int, MapPoint] = {}
        self.keyframes: Dict[int, KeyFrame] = {}
        self.planes: Dict[int, PlaneGeom] = {}
        self.virtual_objects: Dict[int, VirtualObject] = {}
        self.cells: Dict[CellKey, GridCell] = {}
        # mp_id -> set of kf_ids observing it (reverse index)
        self._observers: Dict[int, Set[int]] = {}
        # kf_id -> {kf_id: shared count}; symmetric, counts >= 1
        self._shared: Dict[int, Dict[int, int]] = {}
        # vo_id -> current cell key
        self._vo_cell: Dict[int, CellKey] = {}
        self.lock = threading.RLock()

    # -- stores ----------------------------------------------------------

    def add_map_point(self, mp: MapPoint) -> None:
        with self.lock:
            if mp.id in self.map_points:
                raise ValueError(f"map point {mp.id} already exists")
            self.map_points[mp.id] = mp
            self._observers[mp.id] = set()

    def add_keyframe(self, kf: KeyFrame) -> None:
        with self.lock:
            if kf.id in self.keyframes:
                raise ValueError(f"keyframe {kf.id} already exists")
            self.keyframes[kf.id] = kf
            self._shared[kf.id] = {}
            for mp_id, kp_index in list(kf.observations.items()):
                del kf.observations[mp_id]
                self.add_observation(kf.id, mp_id, kp_index)

    def add_plane(self, plane: PlaneGeom) -> None:
        with self.lock:
            self.planes[plane.id] = plane

    # -- observations / co-visibility -------------------------------------

    def add_observation(self, kf_id: int, mp_id: int, kp_index: int) -> None:
        with self.lock:
            kf = self.keyframes.get(kf_id)
            if kf is None:
                raise UnknownId(f"keyframe {kf_id}")
            mp = self.map_points.get(mp_id)
            if mp is None:
                raise UnknownId(f"map point {mp_id}")
            if mp_id in kf.observations:
                raise DuplicateObservation(f"{mp_id} already observed by {kf_id}")
            if not (0 <= kp_index < len(kf.keypoints)):
                raise ValueError(f"keypoint index {kp_index} out of range")
            kf.observations[mp_id] = kp_index
            mp.obs_count += 1
            for other in self._observers[mp_id]:
                self._shared[kf_id][other] = self._shared[kf_id].get(other, 0) + 1
                self._shared[other][kf_id] = self._shared[other].get(kf_id, 0) + 1
            self._observers[mp_id].add(kf_id)

    def remove_keyframe(self, kf_id: int) -> List[int]:
        """Drop a keyframe; delete and return map points left unobserved."""
        with self.lock:
            kf = self.keyframes.get(kf_id)
            if kf is None:
                raise UnknownId(f"keyframe {kf_id}")
            deleted: List[int] = []
            for mp_id in kf.observations:
                self._observers[mp_id].discard(kf_id)
                mp = self.map_points[mp_id]
                mp.obs_count -= 1
                for other in self._observers[mp_id]:
                    self._shared[other][kf_id] -= 1
                    if self._shared[other][kf_id] == 0:
                        del self._shared[other][kf_id]
                if mp.obs_count == 0:
                    deleted.append(mp_id)
                    del self.map_points[mp_id]
                    del self._observers[mp_id]
            del self._shared[kf_id]
            del self.keyframes[kf_id]
            return deleted

    def covis_edges(self) -> Dict[Tuple[int, int], int]:
        """Thresholded co-visibility edges as {(a, b): weight} with a < b."""
        with self.lock:
            edges = {}
            for a, nbrs in self._shared.items():
                for b, w in nbrs.items():
                    if a < b and w >= self.theta_covis:
                        edges[(a, b)] = w
            return edges

    def covisible_keyframes(self, kf_id: int, max_n: int) -> List[int]:
        """Neighbors by descending shared count (ties by ascending id)."""
        with self.lock:
            if kf_id not in self.keyframes:
                raise UnknownId(f"keyframe {kf_id}")
            nbrs = [(w, other) for other, w in self._shared[kf_id].items()
                    if w >= self.theta_covis]
            nbrs.sort(key=lambda x: (-x[0], x[1]))
            return [other for _, other in nbrs[:max_n]]

    def observers_of(self, mp_id: int) -> Set[int]:
        with self.lock:
            return set(self._observers.get(mp_id, ()))

    # -- grid / virtual objects -------------------------------------------

    def attach_vo(self, vo: VirtualObject) -> CellKey:
        """Store a virtual object and (re-)connect it to its grid cell."""
        with self.lock:
            if not np.all(np.isfinite(vo.position)):
                raise ValueError("virtual object position must be finite")
            old_key = self._vo_cell.get(vo.id)
            key = cell_of(vo.position, self.cellsize)
            if old_key is not None and old_key != key:
                self.cells[old_key].vo_ids.discard(vo.id)
            self.virtual_objects[vo.id] = vo
            cell = self.cells.get(key)
            if cell is None:
                cell = GridCell(key=key)
                self.cells[key] = cell
            cell.vo_ids.add(vo.id)
            self._vo_cell[vo.id] = key
            return key

    def vos_in_cells(self, keys: Iterable[CellKey]) -> List[VirtualObject]:
        with self.lock:
            ids: Set[int] = set()
            for key in keys:
                cell = self.cells.get(key)
                if cell is not None:
                    ids |= cell.vo_ids
            return [self.virtual_objects[i] for i in sorted(ids)]

    def vo_cell(self, vo_id: int) -> Optional[CellKey]:
        with self.lock:
            return self._vo_cell.get(vo_id)

    # -- debugging ---------------------------------------------------------

    def check_consistency(self) -> None:
        """Full recount of refcounts, co-visibility and cell residency."""
        with self.lock:
            counts = {mp_id: 0 for mp_id in self.map_points}
            for kf in self.keyframes.values():
                for mp_id in kf.observations:
                    assert mp_id in self.map_points, "dangling observation"
                    counts[mp_id] += 1
            for mp_id, mp in self.map_points.items():
                assert mp.obs_count == counts[mp_id], "refcount drift"
                assert counts[mp_id] >= 0
                assert self._observers[mp_id] == {
                    k for k, kf in self.keyframes.items() if mp_id in kf.observations
                }
            kf_ids = list(self.keyframes)
            for i, a in enumerate(kf_ids):
                for b in kf_ids[i + 1:]:
                    shared = len(self.keyframes[a].observations.keys()
                                 & self.keyframes[b].observations.keys())
                    assert self._shared[a].get(b, 0) == shared, "covis drift"
            seen: Set[int] = set()
            for key, cell in self.cells.items():
                for vo_id in cell.vo_ids:
                    assert vo_id not in seen, "VO in multiple cells"
                    seen.add(vo_id)
                    vo = self.virtual_objects[vo_id]
                    assert cell_of(vo.position, self.cellsize) == key
            assert seen == set(self._vo_cell)

    def dump_json(self) -> str:
        """Debug dump used for test fixtures."""
        with self.lock:
            doc = {
                "map_points": [
                    {
                        "id": mp.id,
                        "position": mp.position.tolist(),
                        "obs_count": mp.obs_count,
                        "descriptor": mp.descriptor.hex() if mp.descriptor else None,
                    }
                    for mp in self.map_points.values()
                ],
                "keyframes": [
                    {
                        "id": kf.id,
                        "rotation": kf.pose.R.tolist(),
                        "translation": kf.pose.t.tolist(),
                        "observations": {str(k): v for k, v in kf.observations.items()},
                        "plane_ids": sorted(kf.plane_ids),
                        "cell_keys": sorted(kf.cell_keys),
                    }
                    for kf in self.keyframes.values()
                ],
                "planes": [
                    {
                        "id": p.id,
                        "label": PlaneLabel(p.label).name.lower(),
                        "normal": p.normal.tolist(),
                        "d": p.d,
                    }
                    for p in self.planes.values()
                ],
                "cells": [
                    {"key": list(c.key), "vo_ids": sorted(c.vo_ids)}
                    for c in self.cells.values()
                ],
                "virtual_objects": [
                    {
                        "id": vo.id,
                        "position": vo.position.tolist(),
                        "version": vo.version,
                        "owner_device": vo.owner_device,
                    }
                    for vo in self.virtual_objects.values()
                ],
            }
            return json.dumps(doc, sort_keys=True)
