#!/usr/bin/env python3
"""Virtual-object sharing success vs device separation, grid-based delivery
vs the keyframe-attachment baseline."""

import argparse

from ecar.experiments import measure_vo_range


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenario", default="corridor",
                        choices=["corridor", "half_circle"])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--trials", type=int, default=3)
    args = parser.parse_args()

    unit = "m" if args.scenario == "corridor" else "deg"
    results = {mode: measure_vo_range(mode, args.scenario, seed=args.seed,
                                      trials=args.trials)
               for mode in ("ecar", "kfvo")}
    print(f"station({unit}),ecar_success_pct,kfvo_success_pct")
    for lean, base in zip(results["ecar"], results["kfvo"]):
        print(f"{lean['station']:g},{lean['success_pct']:.1f},"
              f"{base['success_pct']:.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
