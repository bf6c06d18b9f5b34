"""Tilted-circle candidates around a carbon box with dense plates.

Runs circular, greedy and branch-and-bound selection on the bundled
``experiment_a_mini`` config and prints the comparison table.

    python3 scripts/run_experiment_a.py [--out runs/experiment_a_mini]
"""

import argparse

from ctcover.config import load_bundled
from ctcover.pipeline import compare_solvers


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    args = ap.parse_args()
    cfg = load_bundled("experiment_a_mini")
    rows = compare_solvers(cfg, args.out)
    print(f"{'approach':>9} {'coverage':>9} {'gap':>7} {'ssim':>7} {'psnr_db':>8} {'cnr':>7} {'time_s':>7}")
    for r in rows:
        print(f"{r['approach']:>9} {r['coverage_fraction']:9.4f} {r['gap']:7.4f} {r['ssim']:7.4f} "
              f"{r['psnr_db']:8.2f} {r['cnr']:7.3f} {r['wall_time_s']:7.3f}")


if __name__ == "__main__":
    main()
