import numpy as np
import pytest
from fastapi.testclient import TestClient

from ecar.geometry import look_at
from ecar.protocol import (Ack, FrameUpload, InteractionMessage, LocalGraphDown,
                           OP_MANIPULATION, OP_REGISTRATION, decode, encode)
from ecar.scene import make_corridor_scene, synthesize_frame
from ecar.server import EdgeServer, ServerConfig
from ecar.webapp import create_app


def corridor_pose(z):
    return look_at(np.array([1.5, 1.5, z]), np.array([1.5, 0.0, z + 2.5]))


@pytest.fixture()
def server():
    scene = make_corridor_scene(0, 3000)
    srv = EdgeServer(ServerConfig(mode="ecar", sense_depth=6.0), scene=scene)
    srv.create_session(1, bootstrap_pose=corridor_pose(2.0))
    return srv


@pytest.fixture()
def client(server):
    return TestClient(create_app(server))


def frame_bytes(server, device_id, pose, frame_id):
    rng = np.random.default_rng(500 + frame_id)
    kps, _ = synthesize_frame(server.scene, pose, server.config.intrinsics,
                              quality=100, rng=rng)
    return encode(FrameUpload(frame_id, frame_id * 33_333, 100, kps),
                  device_id=device_id, seq=frame_id)


def test_binary_frame_round_trip(server, client):
    for i in range(2):
        resp = client.post("/frame", content=frame_bytes(
            server, 1, corridor_pose(2.0 + 0.1 * i), i))
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "application/octet-stream"
    down, device_id, seq = decode(resp.content)
    assert isinstance(down, LocalGraphDown)
    assert device_id == 1 and seq == 1
    assert len(down.points) > 15


def test_frame_rejects_garbage_and_wrong_type(client):
    assert client.post("/frame", content=b"not a frame").status_code == 400
    wrong = encode(InteractionMessage(0, OP_REGISTRATION, (0.0, 0.0, 0.0)),
                   device_id=1)
    assert client.post("/frame", content=wrong).status_code == 400


def test_frame_auto_creates_session(server, client):
    resp = client.post("/frame", content=frame_bytes(
        server, 9, corridor_pose(2.0), 0))
    assert resp.status_code == 200
    assert 9 in server.sessions


def test_json_interaction_register_and_manipulate(server, client):
    reg = client.post("/interact", json={
        "device_id": 1, "op": "register", "position": [1.4, 0.0, 3.0],
        "line": {"start": [1.4, 0.0, 3.0], "end": [1.5, 0.0, 3.1]},
    })
    assert reg.status_code == 200
    vo_id = reg.json()["vo_id"]
    assert reg.json()["version"] == 1
    man = client.post("/interact", json={
        "device_id": 1, "op": "manipulate", "vo_id": vo_id,
        "position": [2.0, 0.0, 4.0],
    })
    assert man.status_code == 200
    assert man.json() == {"vo_id": vo_id, "version": 2}
    assert np.allclose(server.graph.virtual_objects[vo_id].position,
                       [2.0, 0.0, 4.0])


def test_json_interaction_validation(client):
    bad = [
        {"op": "register", "position": [0, 0, 0]},            # no device_id
        {"device_id": 1, "op": "register", "position": [0, 0]},
        {"device_id": 1, "op": "teleport", "position": [0, 0, 0]},
        {"device_id": 1, "op": "manipulate", "position": [0, 0, 0]},
    ]
    for doc in bad:
        assert client.post("/interact", json=doc).status_code == 400


def test_manipulating_missing_vo_conflicts(client):
    resp = client.post("/interact", json={
        "device_id": 1, "op": "manipulate", "vo_id": 321,
        "position": [0.0, 0.0, 0.0]})
    assert resp.status_code == 409


def test_binary_interaction(server, client):
    wire = encode(InteractionMessage(0, OP_REGISTRATION, (1.0, 0.0, 2.0)),
                  device_id=1, seq=3)
    resp = client.post("/interact", content=wire,
                       headers={"content-type": "application/octet-stream"})
    assert resp.status_code == 200
    msg, device_id, seq = decode(resp.content)
    assert isinstance(msg, Ack) and device_id == 1 and seq == 3
    assert len(server.graph.virtual_objects) == 1


def test_state_endpoint_with_region_filter(server, client):
    client.post("/interact", json={
        "device_id": 1, "op": "register", "position": [0.05, 0.0, 0.05]})
    client.post("/interact", json={
        "device_id": 1, "op": "register", "position": [5.0, 0.0, 5.0]})
    everything = client.get("/state").json()
    assert len(everything["virtual_objects"]) == 2
    near = client.get("/state", params={"region": "-1,-1,-1,1,1,1"}).json()
    assert len(near["virtual_objects"]) == 1
    assert client.get("/state", params={"region": "1,2,3"}).status_code == 400
    assert client.get("/state", params={"region": "a,b,c,d,e,f"}).status_code == 400


def test_metrics_endpoint(server, client):
    client.post("/frame", content=frame_bytes(server, 1, corridor_pose(2.0), 0))
    doc = client.get("/metrics").json()
    assert doc["mode"] == "ecar"
    assert doc["devices"]["1"]["frames"] == 1
    assert doc["keyframes"] >= 1
