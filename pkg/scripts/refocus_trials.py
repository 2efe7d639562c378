"""Refocus success rate and residual margins over a calibration stack."""

from dataclasses import dataclass

import numpy as np

from _common import dump, parse_into
from lensless import calibrate_stack, desk_config, svd
from lensless.experiments import random_scene, refocus_probe


@dataclass
class Config:
    distances: tuple = (85.0, 165.0, 242.0, 343.0, 497.0)
    scenes_per_distance: int = 5
    noiseless: bool = False
    n_avg: int = 100
    alpha_fraction: float = 1e-3
    seed: int = 7
    out: str = ""


def main(cfg: Config):
    base = desk_config()
    stack = calibrate_stack(base, cfg.distances, n_avg=cfg.n_avg, ideal=cfg.noiseless)
    factors = [svd(e) for e in stack.entries]
    rng = np.random.default_rng(cfg.seed)
    hits, margins = 0, []
    for D in cfg.distances:
        for k in range(cfg.scenes_per_distance):
            truth = random_scene(base.grid, rng)
            r = refocus_probe(stack, base, truth, D, cfg.n_avg, [cfg.seed, int(D), k], cfg.noiseless,
                              ("fixed-fraction", cfg.alpha_fraction), factors)
            hits += r.distance_mm == D
            res = sorted(v for _, v in r.residuals)
            margins.append(res[1] / res[0] if res[0] > 0 else float("inf"))
    n = len(cfg.distances) * cfg.scenes_per_distance
    out = {"success": hits, "trials": n, "min_second_best_ratio": float(min(margins))}
    print(out)
    dump(cfg, out, cfg.out)


if __name__ == "__main__":
    main(parse_into(Config, __doc__))
