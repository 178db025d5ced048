"""Command-line entry points: `ecar-sim` and `ecar-serve`."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .server import ServerConfig
from .sim import SimConfig, run_scenario, sweep_devices


def _parse_range(spec: str) -> list:
    """Device counts: '1..20' (inclusive) or a comma list '1,5,10,20'."""
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in spec.split(",")]


def sim_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ecar-sim",
        description="Deterministic collaborative-AR synchronization runs")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario and write reports")
    run_p.add_argument("--mode", default="ecar",
                       choices=["ecar", "fullmap", "kfvo"])
    run_p.add_argument("--devices", type=int, default=1)
    run_p.add_argument("--scenario", default="corridor",
                       choices=["corridor", "half_circle", "static", "drawing"])
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--quality", type=int, default=100)
    run_p.add_argument("--frames", type=int, default=500)
    run_p.add_argument("--out", required=True,
                       help="directory for report.json/frames.csv/events.csv")
    run_p.add_argument("--no-track", action="store_true",
                       help="skip between-sync pose tracking (faster)")

    sweep_p = sub.add_parser("sweep", help="latency scaling vs device count")
    sweep_p.add_argument("--devices", default="1..20",
                         help="count range '1..20' or list '1,5,10,20'")
    sweep_p.add_argument("--mode", default="ecar",
                         choices=["ecar", "fullmap", "kfvo"])
    sweep_p.add_argument("--scenario", default="corridor",
                         choices=["corridor", "half_circle", "static",
                                  "drawing"])
    sweep_p.add_argument("--seed", type=int, default=0)
    sweep_p.add_argument("--quality", type=int, default=100)
    sweep_p.add_argument("--frames", type=int, default=240)
    sweep_p.add_argument("--track", action="store_true",
                         help="enable between-sync pose tracking")
    sweep_p.add_argument("--out", default="-",
                         help="CSV path, '-' for stdout")

    args = parser.parse_args(argv)
    if args.command == "run":
        cfg = SimConfig(mode=args.mode, n_devices=args.devices,
                        scenario=args.scenario, seed=args.seed,
                        quality=args.quality, frames=args.frames,
                        out_dir=args.out,
                        track_between_syncs=not args.no_track)
        report = run_scenario(cfg)
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        return 0

    base = SimConfig(mode=args.mode, scenario=args.scenario, seed=args.seed,
                     quality=args.quality, frames=args.frames,
                     track_between_syncs=args.track, max_keypoints=300)
    rows = sweep_devices(base, _parse_range(args.devices))
    lines = ["n_devices,mode,mean_latency_us,p95_latency_us,"
             "mean_bytes_up,mean_bytes_down"]
    for r in rows:
        lines.append(f"{r['n_devices']},{r['mode']},{r['mean_latency_us']:.3f},"
                     f"{r['p95_latency_us']:.3f},{r['mean_bytes_up']:.3f},"
                     f"{r['mean_bytes_down']:.3f}")
    text = "\n".join(lines) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


def serve_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ecar-serve", description="Run the HTTP edge server")
    parser.add_argument("--config", help="JSON file mirroring ServerConfig")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--static", default=None,
                        help="directory of browser UI assets (served at /ui)")
    parser.add_argument("--demo-scene", action="store_true",
                        help="seed corridor planes so the UI has a floor")
    args = parser.parse_args(argv)

    import uvicorn

    from .scene import make_corridor_scene
    from .server import EdgeServer
    from .webapp import create_app

    config = ServerConfig.from_file(args.config) if args.config \
        else ServerConfig()
    scene = None
    server = EdgeServer(config, scene=scene)
    if args.demo_scene:
        demo = make_corridor_scene(config.seed)
        server.scene = demo
        for plane in demo.planes:
            server.graph.add_plane(replace(plane))
    app = create_app(server, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(sim_main())
