#!/usr/bin/env python3
"""Compare per-sync download traffic between the tracked-points local graph
and the full-map baseline on the same corridor run."""

import argparse
import json

from ecar.sim import SimConfig, run_scenario


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--frames", type=int, default=500)
    parser.add_argument("--devices", type=int, default=1)
    parser.add_argument("--out", help="optional JSON output path")
    args = parser.parse_args()

    results = {}
    for mode in ("ecar", "fullmap"):
        report = run_scenario(SimConfig(
            mode=mode, n_devices=args.devices, scenario="corridor",
            seed=args.seed, frames=args.frames, track_between_syncs=False))
        results[mode] = {
            "mean_bytes_up": report.mean_bytes_up,
            "mean_bytes_down": report.mean_bytes_down,
            "mean_latency_us": report.mean_latency_us,
        }
        print(f"{mode:8s} mean down {report.mean_bytes_down:10.1f} B  "
              f"mean up {report.mean_bytes_up:10.1f} B  "
              f"mean latency {report.mean_latency_us / 1000:.2f} ms")
    ratio = (results["ecar"]["mean_bytes_down"]
             / results["fullmap"]["mean_bytes_down"])
    results["down_ratio"] = ratio
    print(f"download ratio ecar/fullmap: {ratio:.3f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
