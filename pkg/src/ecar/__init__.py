"""Edge-assisted collaborative AR synchronization.

A mobile device uploads keypoints every few frames; the edge server keeps
the global scene graph (map points, keyframes, planes, grid cells, virtual
objects), estimates the device pose, and returns a compact local subgraph
selected by grid-cell visibility, so devices share virtual content without
exchanging full maps.
"""

from .channel import ChannelModel, FluidLink
from .client import ClientConfig, DeviceClient
from .geometry import (DEFAULT_K, CameraIntrinsics, PlaneGeom, PlaneLabel,
                       Pose, cell_of, look_at)
from .graph import GlobalGraph, VirtualLine, VirtualObject
from .protocol import (Ack, FrameUpload, InteractionMessage, LocalGraphDown,
                       decode, encode, message_size)
from .scene import Scene, make_corridor_scene, make_room_scene
from .server import EdgeServer, Mode, ServerConfig
from .sim import RunReport, SimConfig, compute_ate, run_scenario, sweep_devices

__version__ = "1.0.0"

__all__ = [
    "Ack", "ChannelModel", "CameraIntrinsics", "ClientConfig", "DEFAULT_K",
    "DeviceClient", "EdgeServer", "FluidLink", "FrameUpload", "GlobalGraph",
    "InteractionMessage", "LocalGraphDown", "Mode", "PlaneGeom", "PlaneLabel",
    "Pose", "RunReport", "Scene", "ServerConfig", "SimConfig", "VirtualLine",
    "VirtualObject", "cell_of", "compute_ate", "decode", "encode", "look_at",
    "make_corridor_scene", "make_room_scene", "message_size", "run_scenario",
    "sweep_devices",
]
