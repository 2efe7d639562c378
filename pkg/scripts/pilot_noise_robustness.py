"""Accuracy on random binary scenes versus the regularization fraction.

This pilot fixed the default alpha fraction: pixel accuracy over 20 random
scenes (15-40 lit sources) at read noise 0.005 with 100-frame averaging.
"""

from dataclasses import dataclass, replace

import numpy as np

from _common import dump, parse_into
from lensless import calibrate, desk_config, render_psfs, svd
from lensless.experiments import random_scene, self_test


@dataclass
class Config:
    fractions: tuple = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)
    n_scenes: int = 20
    n_avg: int = 100
    read_noise: float = 0.005
    seed: int = 4
    out: str = ""


def main(cfg: Config):
    optics = desk_config()
    optics = optics.with_(sensor=replace(optics.sensor, read_noise_sigma=cfg.read_noise))
    psfs = render_psfs(optics)
    A = calibrate(optics, cfg.n_avg, 0, psfs=psfs)
    f = svd(A)
    rows = {}
    for frac in cfg.fractions:
        rng = np.random.default_rng(cfg.seed)
        accs = []
        for k in range(cfg.n_scenes):
            truth = random_scene(optics.grid, rng)
            r = self_test(A, optics, truth, cfg.n_avg, [cfg.seed, k], alpha_strategy=("fixed-fraction", frac), factors=f, psfs=psfs)
            accs.append(r.report.pixel_accuracy)
        rows[f"{frac:g}"] = {"mean": float(np.mean(accs)), "min": float(np.min(accs))}
        print(f"fraction {frac:g}: mean accuracy {np.mean(accs):.4f}, min {np.min(accs):.4f}")
    for strategy in ("l-curve",):
        rng = np.random.default_rng(cfg.seed)
        accs = [self_test(A, optics, random_scene(optics.grid, rng), cfg.n_avg, [cfg.seed, k], alpha_strategy=strategy,
                          factors=f, psfs=psfs).report.pixel_accuracy for k in range(cfg.n_scenes)]
        rows[strategy] = {"mean": float(np.mean(accs)), "min": float(np.min(accs))}
        print(f"{strategy}: mean accuracy {np.mean(accs):.4f}")
    dump(cfg, rows, cfg.out)


if __name__ == "__main__":
    main(parse_into(Config, __doc__))
