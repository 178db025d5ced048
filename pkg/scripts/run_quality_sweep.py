#!/usr/bin/env python3
"""Server-side trajectory error as upload quality degrades from 100 to 10."""

import argparse

from ecar.sim import SimConfig, run_scenario


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--frames", type=int, default=200)
    parser.add_argument("--scenario", default="static",
                        choices=["static", "corridor"])
    args = parser.parse_args()

    print("quality,server_ate_m")
    baseline = None
    for quality in range(100, 9, -10):
        report = run_scenario(SimConfig(
            mode="ecar", n_devices=1, scenario=args.scenario, seed=args.seed,
            quality=quality, frames=args.frames, track_between_syncs=False))
        if baseline is None:
            baseline = report.server_ate
        print(f"{quality},{report.server_ate:.6f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
