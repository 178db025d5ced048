"""Deterministic multi-client simulation harness.

Runs scripted scenarios (corridor walk, half-circle arc, static desk,
collaborative drawing) against an in-process edge server through a shared
fluid-bandwidth channel, and computes the traffic/latency/ATE/success-rate
metrics. Identical (config, seed) pairs produce byte-identical CSV output.
"""

from __future__ import annotations

import heapq
import json
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .channel import ChannelModel, FluidLink
from .client import ClientConfig, DeviceClient
from .geometry import DEFAULT_K, PlaneGeom, PlaneLabel, Pose, look_at
from .graph import VirtualLine
from .protocol import (FrameUpload, InteractionMessage, OP_MANIPULATION,
                       OP_REGISTRATION, encode_virtual_line, message_size)
from .scene import (Scene, Landmark, corridor_trajectory, half_circle_trajectory,
                    make_corridor_scene, make_room_scene, static_trajectory,
                    synthesize_frame, _descriptors, _sample_on_plane)
from .server import EdgeServer, Mode, ServerConfig, parse_mode


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class LengthMismatch(ValueError):
    pass


def compute_ate(estimated: Sequence[Pose], reference: Sequence[Pose]) -> float:
    """RMS positional difference between two aligned pose lists (no fitting)."""
    if len(estimated) != len(reference):
        raise LengthMismatch(
            f"{len(estimated)} estimated vs {len(reference)} reference poses")
    if not estimated:
        return 0.0
    diffs = [est.camera_center() - ref.camera_center()
             for est, ref in zip(estimated, reference)]
    return float(np.sqrt(np.mean(np.sum(np.square(diffs), axis=1))))


def make_arena_scene(seed: int = 0, n_landmarks: int = 3000,
                     half_extent: float = 8.0) -> Scene:
    """Open floor centered on the origin, used by the half-circle scenario."""
    rng = np.random.default_rng(seed)
    floor = PlaneGeom(1, PlaneLabel.FLOOR, np.array([0.0, 1.0, 0.0]), 0.0)
    corners = np.array([[-half_extent, 0.0, -half_extent],
                        [half_extent, 0.0, half_extent]])
    descs = _descriptors(rng, n_landmarks)
    landmarks = [Landmark(i, p, descs[i], PlaneLabel.FLOOR, floor.id)
                 for i, p in enumerate(_sample_on_plane(rng, corners, n_landmarks))]
    return Scene([floor], landmarks, seed)


@dataclass
class SimConfig:
    mode: Mode = Mode.ECAR
    n_devices: int = 1
    scenario: str = "corridor"
    seed: int = 0
    quality: int = 100
    frames: int = 500
    fps: float = 30.0
    sync_every: int = 4
    channel: ChannelModel = field(default_factory=ChannelModel)
    noise_sigma: Optional[float] = None
    track_between_syncs: bool = True
    max_keypoints: int = 600
    sense_depth: float = 20.0
    n_landmarks: int = 4000
    out_dir: Optional[str] = None
    server_overrides: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = parse_mode(self.mode)
        if not (1 <= self.n_devices <= 64):
            raise ConfigError("n_devices", "must be in 1..64")
        if self.scenario not in ("corridor", "half_circle", "static", "drawing"):
            raise ConfigError("scenario", f"unknown scenario {self.scenario!r}")
        if self.frames < 1:
            raise ConfigError("frames", "must be >= 1")
        if self.quality not in range(10, 101, 10):
            raise ConfigError("quality", "must be one of 10, 20, ..., 100")


@dataclass
class DeviceReport:
    device_id: int
    syncs: int = 0
    lost: int = 0
    mean_bytes_up: float = 0.0
    mean_bytes_down: float = 0.0
    mean_latency_us: float = 0.0
    p95_latency_us: float = 0.0
    ate_vs_ground_truth: Optional[float] = None
    ate_vs_server: Optional[float] = None


@dataclass
class RunReport:
    mode: str
    scenario: str
    n_devices: int
    seed: int
    devices: List[DeviceReport]
    mean_latency_us: float
    p95_latency_us: float
    mean_bytes_up: float
    mean_bytes_down: float
    server_ate: Optional[float]
    vo_success_rate: Optional[float]  # None -> N/A (no interactions)
    total_channel_bytes: float
    total_message_bytes: int

    def to_dict(self) -> dict:
        doc = {
            "mode": self.mode,
            "scenario": self.scenario,
            "n_devices": self.n_devices,
            "seed": self.seed,
            "mean_latency_us": self.mean_latency_us,
            "p95_latency_us": self.p95_latency_us,
            "mean_bytes_up": self.mean_bytes_up,
            "mean_bytes_down": self.mean_bytes_down,
            "server_ate": self.server_ate,
            "vo_success_rate": ("N/A" if self.vo_success_rate is None
                                else self.vo_success_rate),
            "total_channel_bytes": self.total_channel_bytes,
            "total_message_bytes": self.total_message_bytes,
            "devices": [d.__dict__ for d in self.devices],
        }
        return doc


@dataclass
class _Device:
    device_id: int
    client: DeviceClient
    poses: List[Pose]
    rng: np.random.Generator
    start_t: float
    retained: Dict[int, list] = field(default_factory=dict)
    sync_in_flight: bool = False
    rows: Dict[int, dict] = field(default_factory=dict)
    tracked: Dict[int, Pose] = field(default_factory=dict)
    server_poses: Dict[int, Pose] = field(default_factory=dict)
    server_lost: Dict[int, bool] = field(default_factory=dict)
    latencies: List[float] = field(default_factory=list)
    bytes_up: List[int] = field(default_factory=list)
    bytes_down: List[int] = field(default_factory=list)
    vo_first_seen: Dict[int, float] = field(default_factory=dict)


def _build_scenario(cfg: SimConfig):
    """Scene, per-device ground-truth trajectories and interaction script."""
    rng = np.random.default_rng((cfg.seed << 8) ^ 0x5CE)
    script: List[dict] = []
    if cfg.scenario in ("corridor", "drawing"):
        scene = make_corridor_scene(cfg.seed, n_landmarks=cfg.n_landmarks)
        trajectories = []
        speed = 1.0  # m/s
        for d in range(cfg.n_devices):
            start = 0.5 + 0.25 * (d % 8) + rng.uniform(-0.05, 0.05)
            end = min(start + cfg.frames / cfg.fps * speed, 28.5)
            x = 1.0 + 0.15 * (d % 7) + rng.uniform(-0.05, 0.05)
            poses = corridor_trajectory(cfg.frames, start_z=start, end_z=end)
            poses = [look_at(p.camera_center() + np.array([x - 1.5, 0, 0]),
                             np.array([x, 0.0,
                                       p.camera_center()[2] + 2.5]))
                     for p in poses]
            trajectories.append(poses)
        if cfg.scenario == "drawing":
            u, v = DEFAULT_K.cx, DEFAULT_K.cy + 140
            for f in range(40, min(96, cfg.frames), 4):
                script.append({"frame": f, "device": 0, "kind": "touch",
                               "uv": (u, v)})
    elif cfg.scenario == "half_circle":
        scene = make_arena_scene(cfg.seed, n_landmarks=cfg.n_landmarks)
        trajectories = []
        for d in range(cfg.n_devices):
            start = -5.0 * d
            trajectories.append(half_circle_trajectory(
                cfg.frames, center=(0.0, 0.0, 0.0), radius=3.0,
                start_deg=start))
    else:  # static
        scene = make_room_scene(cfg.seed, n_landmarks=max(cfg.n_landmarks // 2, 500))
        trajectories = []
        for d in range(cfg.n_devices):
            eye = np.array([2.0, 1.4, 0.6]) + rng.uniform(-0.1, 0.1, 3) * (d > 0)
            trajectories.append(static_trajectory(cfg.frames, eye=eye))
    return scene, trajectories, script


def _make_server(cfg: SimConfig, scene: Scene) -> EdgeServer:
    kwargs = {"mode": cfg.mode, "seed": cfg.seed,
              "sense_depth": cfg.sense_depth,
              "max_keypoints": cfg.max_keypoints}
    kwargs.update(cfg.server_overrides)
    server_cfg = ServerConfig(**kwargs)
    return EdgeServer(server_cfg, scene=scene)


def run_scenario(cfg: SimConfig) -> RunReport:
    scene, trajectories, script = _build_scenario(cfg)
    server = _make_server(cfg, scene)
    client_cfg = ClientConfig(sync_every=cfg.sync_every, quality=cfg.quality)
    prop = cfg.channel.propagation_s
    proc = server.config.proc_time_us * 1e-6

    devices = []
    for d in range(cfg.n_devices):
        dev = _Device(
            device_id=d,
            client=DeviceClient(d, client_cfg),
            poses=trajectories[d],
            rng=np.random.default_rng((cfg.seed << 16) ^ (d * 7919 + 13)),
            start_t=d * 0.0097,
        )
        server.create_session(d, bootstrap_pose=trajectories[d][0].copy())
        devices.append(dev)

    uplink = FluidLink(cfg.channel.uplink_Bps)
    downlink = FluidLink(cfg.channel.downlink_Bps)
    events: List[Tuple[float, int, int, Callable[[float], None]]] = []
    seq = [0]
    tid = [0]
    total_message_bytes = [0]
    event_rows: List[str] = []
    registrations: List[Tuple[int, float, int]] = []  # vo_id, t, owner
    script_by_frame: Dict[Tuple[int, int], List[dict]] = {}
    for item in script:
        script_by_frame.setdefault((item["device"], item["frame"]), []).append(item)

    def schedule(t: float, fn: Callable[[float], None]) -> None:
        seq[0] += 1
        heapq.heappush(events, (t, 1, seq[0], fn))

    def start_transfer(link: FluidLink, nbytes: int, t: float,
                       on_delivered: Callable[[float], None],
                       kind: str, device_id: int) -> None:
        tid[0] += 1
        total_message_bytes[0] += nbytes
        event_rows.append(f"{int(round(t * 1e6))},{kind},{device_id},{nbytes}")
        link.start(tid[0], nbytes, t, on_delivered)

    def on_frame(dev: _Device, frame_idx: int):
        def fire(t: float) -> None:
            gt = dev.poses[frame_idx]
            keypoints, _ = synthesize_frame(
                scene, gt, DEFAULT_K, cfg.quality, dev.rng,
                max_depth=cfg.sense_depth, max_keypoints=cfg.max_keypoints,
                noise_sigma=cfg.noise_sigma)
            row = {"frame_id": frame_idx, "device_id": dev.device_id,
                   "t_us": int(round(t * 1e6)), "bytes_up": 0, "bytes_down": 0,
                   "latency_us": 0, "pose_err": "", "lost": 0}
            if cfg.track_between_syncs:
                pose = dev.client.track_frame(keypoints)
                if pose is not None:
                    dev.tracked[frame_idx] = pose
                    err = np.linalg.norm(pose.camera_center() - gt.camera_center())
                    row["pose_err"] = f"{err:.6f}"
            dev.rows[frame_idx] = row
            if frame_idx % cfg.sync_every == 0:
                if dev.sync_in_flight:
                    row["lost"] = 1
                else:
                    dev.sync_in_flight = True
                    upload = FrameUpload(frame_id=frame_idx,
                                         timestamp_us=int(round(t * 1e6)),
                                         quality=cfg.quality,
                                         keypoints=keypoints)
                    dev.retained[frame_idx] = keypoints
                    nbytes = message_size(upload)
                    row["bytes_up"] = nbytes
                    dev.bytes_up.append(nbytes)
                    start_transfer(
                        uplink, nbytes, t,
                        _frame_uplinked(dev, frame_idx, upload, t),
                        "frame_up", dev.device_id)
            for item in script_by_frame.get((dev.device_id, frame_idx), []):
                _fire_interaction(dev, item, t)
        return fire

    def _frame_uplinked(dev: _Device, frame_idx: int, upload: FrameUpload,
                        t_start: float):
        def on_link_done(t: float) -> None:
            schedule(t + prop, received)

        def received(t: float) -> None:
            down = server.handle_frame(dev.device_id, upload, seq=frame_idx)
            nbytes = message_size(down)
            schedule(t + proc, lambda t2: start_transfer(
                downlink, nbytes, t2,
                _graph_downlinked(dev, frame_idx, down, t_start, nbytes),
                "graph_down", dev.device_id))
        return on_link_done

    def _graph_downlinked(dev: _Device, frame_idx: int, down, t_start: float,
                          nbytes: int):
        def on_link_done(t: float) -> None:
            schedule(t + prop, delivered)

        def delivered(t: float) -> None:
            dev.sync_in_flight = False
            keypoints = dev.retained.pop(frame_idx)
            dev.client.apply_local_graph(down, keypoints)
            latency_us = (t - t_start) * 1e6
            dev.latencies.append(latency_us)
            dev.bytes_down.append(nbytes)
            row = dev.rows[frame_idx]
            row["bytes_down"] = nbytes
            row["latency_us"] = int(round(latency_us))
            lost = len(down.points) == 0
            if lost:
                row["lost"] = 1
            dev.server_lost[frame_idx] = lost
            if not lost:
                dev.server_poses[frame_idx] = Pose(
                    np.asarray(down.pose_rotation).reshape(3, 3),
                    np.asarray(down.pose_translation))
            for vo in down.vos:
                dev.vo_first_seen.setdefault(vo.id, t)
        return on_link_done

    def _fire_interaction(dev: _Device, item: dict, t: float) -> None:
        if item["kind"] == "touch":
            msg = dev.client.make_interaction(item["uv"])
            if msg is None:
                return
            line = VirtualLine(start=np.asarray(msg.position),
                               end=np.asarray(msg.position) + [0.05, 0.0, 0.05],
                               rgb=b"\xff\x30\x30", width=0.02,
                               normal=np.array([0.0, 1.0, 0.0]))
            msg = InteractionMessage(msg.vo_id, msg.op, msg.position,
                                     encode_virtual_line(line))
        else:
            msg = item["message"]
        nbytes = message_size(msg)

        def on_link_done(t2: float) -> None:
            schedule(t2 + prop, received)

        def received(t2: float) -> None:
            ack, vo_id = server.handle_interaction(dev.device_id, msg)
            if msg.op == OP_REGISTRATION:
                registrations.append((vo_id, t2, dev.device_id))
            start_transfer(downlink, message_size(ack), t2,
                           lambda t3: None, "ack_down", dev.device_id)
        start_transfer(uplink, nbytes, t, on_link_done, "interact_up",
                       dev.device_id)

    for dev in devices:
        for f in range(cfg.frames):
            schedule(dev.start_t + f / cfg.fps, on_frame(dev, f))

    # -- main loop: merge scheduled events with link completions --
    while events or uplink.busy or downlink.busy:
        t_sched = events[0][0] if events else np.inf
        t_up = uplink.next_completion()
        t_dn = downlink.next_completion()
        t = min(t_sched, t_up if t_up is not None else np.inf,
                t_dn if t_dn is not None else np.inf)
        if not np.isfinite(t):
            break
        for _, cb in uplink.pop_completed(t):
            cb(t)
        for _, cb in downlink.pop_completed(t):
            cb(t)
        while events and events[0][0] <= t + 1e-12:
            _, _, _, fn = heapq.heappop(events)
            fn(t)

    report = _build_report(cfg, devices, server, registrations,
                           uplink.total_bytes + downlink.total_bytes,
                           total_message_bytes[0])
    if cfg.out_dir:
        _write_outputs(cfg, report, devices, event_rows)
    return report


def _build_report(cfg: SimConfig, devices: List[_Device], server: EdgeServer,
                  registrations, channel_bytes: float,
                  message_bytes: int) -> RunReport:
    dev_reports = []
    all_lat: List[float] = []
    all_up: List[int] = []
    all_down: List[int] = []
    server_est: List[Pose] = []
    server_ref: List[Pose] = []
    for dev in devices:
        rep = DeviceReport(device_id=dev.device_id)
        rep.syncs = len(dev.latencies)
        rep.lost = sum(1 for r in dev.rows.values() if r["lost"])
        if dev.latencies:
            rep.mean_latency_us = float(np.mean(dev.latencies))
            rep.p95_latency_us = float(np.percentile(dev.latencies, 95))
            rep.mean_bytes_up = float(np.mean(dev.bytes_up))
            rep.mean_bytes_down = float(np.mean(dev.bytes_down))
        tracked_frames = sorted(dev.tracked)
        if tracked_frames:
            rep.ate_vs_ground_truth = compute_ate(
                [dev.tracked[f] for f in tracked_frames],
                [dev.poses[f] for f in tracked_frames])
        both = sorted(set(dev.tracked) & set(dev.server_poses))
        if both:
            rep.ate_vs_server = compute_ate(
                [dev.tracked[f] for f in both],
                [dev.server_poses[f] for f in both])
        for f in sorted(dev.server_poses):
            server_est.append(dev.server_poses[f])
            server_ref.append(dev.poses[f])
        all_lat.extend(dev.latencies)
        all_up.extend(dev.bytes_up)
        all_down.extend(dev.bytes_down)
        dev_reports.append(rep)

    success = None
    if registrations:
        window = 2.0 * cfg.sync_every / cfg.fps + 0.05
        total = 0
        hits = 0
        for vo_id, t_reg, owner in registrations:
            for dev in devices:
                if dev.device_id == owner:
                    continue
                total += 1
                seen = dev.vo_first_seen.get(vo_id)
                if seen is not None and seen - t_reg <= window:
                    hits += 1
        success = 100.0 * hits / total if total else None

    return RunReport(
        mode=cfg.mode.value,
        scenario=cfg.scenario,
        n_devices=cfg.n_devices,
        seed=cfg.seed,
        devices=dev_reports,
        mean_latency_us=float(np.mean(all_lat)) if all_lat else 0.0,
        p95_latency_us=float(np.percentile(all_lat, 95)) if all_lat else 0.0,
        mean_bytes_up=float(np.mean(all_up)) if all_up else 0.0,
        mean_bytes_down=float(np.mean(all_down)) if all_down else 0.0,
        server_ate=compute_ate(server_est, server_ref) if server_est else None,
        vo_success_rate=success,
        total_channel_bytes=channel_bytes,
        total_message_bytes=message_bytes,
    )


def frames_csv_lines(devices: List[_Device]) -> List[str]:
    lines = ["frame_id,device_id,t_us,bytes_up,bytes_down,latency_us,pose_err,lost"]
    for dev in devices:
        for f in sorted(dev.rows):
            r = dev.rows[f]
            lines.append(
                f"{r['frame_id']},{r['device_id']},{r['t_us']},{r['bytes_up']},"
                f"{r['bytes_down']},{r['latency_us']},{r['pose_err']},{r['lost']}")
    return lines


def _write_outputs(cfg: SimConfig, report: RunReport, devices: List[_Device],
                   event_rows: List[str]) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(cfg.out_dir, "frames.csv"), "w") as fh:
        fh.write("\n".join(frames_csv_lines(devices)) + "\n")
    with open(os.path.join(cfg.out_dir, "events.csv"), "w") as fh:
        fh.write("t_us,kind,device_id,bytes\n")
        fh.write("\n".join(event_rows) + "\n")


def sweep_devices(base: SimConfig, device_counts: Sequence[int]) -> List[dict]:
    """Run the same scenario at several device counts; one summary per count."""
    rows = []
    for n in device_counts:
        cfg = replace(base, n_devices=n, out_dir=None)
        report = run_scenario(cfg)
        rows.append({
            "n_devices": n,
            "mode": report.mode,
            "mean_latency_us": report.mean_latency_us,
            "p95_latency_us": report.p95_latency_us,
            "mean_bytes_up": report.mean_bytes_up,
            "mean_bytes_down": report.mean_bytes_down,
        })
    return rows
