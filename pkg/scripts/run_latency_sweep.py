#!/usr/bin/env python3
"""Sync latency vs device count for each server mode over the shared channel."""

import argparse

from ecar.cli import _parse_range
from ecar.sim import SimConfig, sweep_devices


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--devices", default="1..20",
                        help="count range '1..20' or list '1,5,10,20'")
    parser.add_argument("--modes", default="ecar,fullmap")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--frames", type=int, default=240)
    parser.add_argument("--out-prefix", default=None,
                        help="write <prefix>_<mode>.csv instead of stdout")
    args = parser.parse_args()

    counts = _parse_range(args.devices)
    header = ("n_devices,mode,mean_latency_us,p95_latency_us,"
              "mean_bytes_up,mean_bytes_down")
    for mode in args.modes.split(","):
        base = SimConfig(mode=mode, scenario="corridor", seed=args.seed,
                         frames=args.frames, track_between_syncs=False,
                         max_keypoints=300)
        rows = sweep_devices(base, counts)
        lines = [header] + [
            f"{r['n_devices']},{r['mode']},{r['mean_latency_us']:.3f},"
            f"{r['p95_latency_us']:.3f},{r['mean_bytes_up']:.3f},"
            f"{r['mean_bytes_down']:.3f}" for r in rows]
        if args.out_prefix:
            path = f"{args.out_prefix}_{mode}.csv"
            with open(path, "w") as fh:
                fh.write("\n".join(lines) + "\n")
            print(f"wrote {path}")
        else:
            print("\n".join(lines))
        growth = rows[-1]["mean_latency_us"] / rows[0]["mean_latency_us"]
        print(f"# {mode}: latency growth x{growth:.2f} "
              f"({rows[0]['n_devices']} -> {rows[-1]['n_devices']} devices)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
