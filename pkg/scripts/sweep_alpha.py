"""Optimal coverage as the absorption threshold tightens.

Builds the coverage stage once for a bundled config, then solves the
selection problem for a range of ``alpha`` values and prints the feasible
pool size, the optimal coverage and the greedy coverage.

    python3 scripts/sweep_alpha.py [--config experiment_b_mini] [--steps 8]
"""

import argparse
import csv
import tempfile
from pathlib import Path

import numpy as np

from ctcover.completeness import read_matrix
from ctcover.config import load_bundled
from ctcover.errors import InfeasibleProblem
from ctcover.io import read_json
from ctcover.pipeline import run_pipeline
from ctcover.select import SolverLimits, assemble_problem, bnb_select, greedy_select


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="experiment_b_mini")
    ap.add_argument("--steps", type=int, default=8)
    ap.add_argument("--out", default=None, help="cache directory (default: a temporary directory)")
    args = ap.parse_args()

    cfg = load_bundled(args.config)
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(args.out or tmp)
        run_pipeline(cfg, out, until="coverage")
        n_pool = read_json(out / "candidates.json")["pool_size"]
        matrix = read_matrix(out / "coverage.bin")
        with open(out / "absorption.csv", newline="") as fh:
            absorption = np.array([float(r["absorption"]) for r in csv.DictReader(fh)])
    pool = matrix.take(range(n_pool))
    absorption = absorption[:n_pool]

    print(f"{'alpha':>7} {'feasible':>9} {'ip':>7} {'greedy':>7} {'gap':>7}")
    for alpha in np.quantile(absorption, np.linspace(0.1, 1.0, args.steps)):
        try:
            problem = assemble_problem(pool, absorption, float(alpha), cfg.k)
        except InfeasibleProblem:
            print(f"{alpha:7.3f} {'-':>9} infeasible")
            continue
        best = bnb_select(problem, SolverLimits(**cfg.to_dict()["limits"]))
        greedy = greedy_select(problem)
        print(f"{alpha:7.3f} {len(problem.feasible):9d} {best.fraction:7.3f} {greedy.fraction:7.3f} {best.gap:7.4f}")


if __name__ == "__main__":
    main()
