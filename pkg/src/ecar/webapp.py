"""HTTP front of the edge server.

Endpoints:
  POST /frame     binary frame upload -> binary local graph
  POST /interact  binary interaction, or JSON for browser clients
  GET  /state     JSON scene snapshot (optional ?region=x0,y0,z0,x1,y1,z1)
  GET  /metrics   JSON counters

Static assets (the browser UI) are served from a directory when one is
configured, under /ui.
"""

from __future__ import annotations

import os
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response

from .graph import VirtualLine
from .protocol import (DecodeError, FrameUpload, InteractionMessage,
                       OP_MANIPULATION, OP_REGISTRATION, decode, encode,
                       encode_virtual_line)
from .server import (EdgeServer, MalformedPayload, Mode, UnknownDevice,
                     UnknownVirtualObject)


def _parse_region(raw: Optional[str]):
    if not raw:
        return None
    try:
        parts = [int(x) for x in raw.split(",")]
    except ValueError:
        raise HTTPException(400, "region must be six comma-separated integers")
    if len(parts) != 6:
        raise HTTPException(400, "region must be six comma-separated integers")
    return (tuple(parts[:3]), tuple(parts[3:]))


def _interaction_from_json(doc: dict) -> tuple[int, InteractionMessage]:
    try:
        device_id = int(doc["device_id"])
        op = doc.get("op", "register")
        position = tuple(float(x) for x in doc["position"])
    except (KeyError, TypeError, ValueError) as exc:
        raise HTTPException(400, f"bad interaction: {exc}")
    if len(position) != 3:
        raise HTTPException(400, "position must have three components")
    payload = b""
    if "line" in doc:
        ln = doc["line"]
        try:
            payload = encode_virtual_line(VirtualLine(
                start=np.asarray(ln["start"], dtype=float),
                end=np.asarray(ln["end"], dtype=float),
                rgb=bytes(ln.get("rgb", [255, 64, 64])),
                width=float(ln.get("width", 0.02)),
                normal=np.asarray(ln.get("normal", [0.0, 1.0, 0.0]),
                                  dtype=float)))
        except (KeyError, TypeError, ValueError) as exc:
            raise HTTPException(400, f"bad line payload: {exc}")
    if op in ("register", OP_REGISTRATION):
        msg = InteractionMessage(0, OP_REGISTRATION, position, payload)
    elif op in ("manipulate", OP_MANIPULATION):
        vo_id = int(doc.get("vo_id", 0))
        if vo_id <= 0:
            raise HTTPException(400, "manipulate requires vo_id")
        msg = InteractionMessage(vo_id, OP_MANIPULATION, position, payload)
    else:
        raise HTTPException(400, f"unknown op {op!r}")
    return device_id, msg


def create_app(server: EdgeServer, static_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="ecar edge server")
    app.state.server = server

    def ensure_session(device_id: int):
        if device_id not in server.sessions:
            server.create_session(device_id)

    @app.post("/frame")
    async def post_frame(request: Request) -> Response:
        body = await request.body()
        try:
            msg, device_id, seq = decode(body)
        except DecodeError as exc:
            raise HTTPException(400, str(exc))
        if not isinstance(msg, FrameUpload):
            raise HTTPException(400, "expected a frame upload message")
        ensure_session(device_id)
        down = server.handle_frame(device_id, msg, seq=seq)
        return Response(content=encode(down, device_id=device_id, seq=seq),
                        media_type="application/octet-stream")

    @app.post("/interact")
    async def post_interact(request: Request) -> Response:
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("application/json"):
            device_id, msg = _interaction_from_json(await request.json())
            ensure_session(device_id)
            try:
                _, vo_id = server.handle_interaction(device_id, msg)
            except (UnknownVirtualObject, MalformedPayload) as exc:
                raise HTTPException(409, str(exc))
            vo = server.graph.virtual_objects[vo_id]
            from fastapi.responses import JSONResponse
            return JSONResponse({"vo_id": vo_id, "version": vo.version})
        body = await request.body()
        try:
            msg, device_id, seq = decode(body)
        except DecodeError as exc:
            raise HTTPException(400, str(exc))
        if not isinstance(msg, InteractionMessage):
            raise HTTPException(400, "expected an interaction message")
        ensure_session(device_id)
        try:
            ack, _ = server.handle_interaction(device_id, msg)
        except (UnknownVirtualObject, MalformedPayload) as exc:
            raise HTTPException(409, str(exc))
        return Response(content=encode(ack, device_id=device_id, seq=seq),
                        media_type="application/octet-stream")

    @app.get("/state")
    def get_state(region: Optional[str] = None) -> dict:
        return server.spectate(_parse_region(region))

    @app.get("/metrics")
    def get_metrics() -> dict:
        return server.metrics_snapshot()

    if static_dir and os.path.isdir(static_dir):
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=static_dir, html=True),
                  name="ui")
    return app
