"""Attention-pair and activation scaling of each encoder variant against table size.

    python3 scripts/run_scaling.py --out results/scaling.json --svg results/scaling.svg
"""

import argparse
from dataclasses import dataclass

from tablelink.encoders import Variant
from tablelink.eval_bench import PROBE_SIZES, complexity_probe, plot_scaling, write_json


@dataclass
class ScalingConfig:
    sizes: tuple[int, ...] = PROBE_SIZES
    n_cols: int = 2
    cell_tokens: int = 4
    seed: int = 0


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=list(PROBE_SIZES))
    p.add_argument("--n-cols", type=int, default=2)
    p.add_argument("--cell-tokens", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--svg")
    a = p.parse_args()
    cfg = ScalingConfig(tuple(a.sizes), a.n_cols, a.cell_tokens, a.seed)

    reports = [complexity_probe(v, cfg.sizes, n_cols=cfg.n_cols, cell_tokens=cfg.cell_tokens, seed=cfg.seed)
               for v in Variant]
    print(f"{'variant':14s} {'pairs slope':>11s} {'peak slope':>10s}  peak/cell")
    for r in reports:
        per_cell = [p.peak_per_cell for p in r.points if not p.out_of_budget]
        print(f"{r.variant:14s} {r.slope:11.3f} {r.peak_slope:10.3f}  {min(per_cell):.0f}..{max(per_cell):.0f}")
    if a.out:
        write_json(a.out, [r.to_json() for r in reports])
    if a.svg:
        plot_scaling(reports, a.svg)


if __name__ == "__main__":
    main()
