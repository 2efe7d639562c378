"""Singular-value decay, conditioning and field of view across object distances."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from _common import dump, parse_into
from lensless import calibrate, desk_config, full_sensor_config, svd
from lensless import diagnostics as dg
from lensless.calibration import estimate_fov
from lensless.solver import condition_number


@dataclass
class Config:
    distances: tuple = (85.0, 165.0, 242.0, 343.0, 497.0)
    scale: str = "desk"  # or "full" (640x480 sensor, 32x32 grid; slow, several GB)
    noiseless: bool = False
    n_avg: int = 100
    fov_tau: float = 0.01
    csv: str = "out/decay.csv"
    out: str = ""


def main(cfg: Config):
    base = desk_config() if cfg.scale == "desk" else full_sensor_config()
    decay, rows = {}, []
    for D in cfg.distances:
        A = calibrate(base.with_(distance_mm=D), cfg.n_avg, 0, ideal=cfg.noiseless)
        f = svd(A)
        decay[f"{D:g}"] = dg.singular_decay(f)
        fov = estimate_fov(A, cfg.fov_tau)
        widths = [b[2] - b[0] + 1 for b in fov.boxes if b is not None]
        row = {
            "distance_mm": D,
            "condition_number": condition_number(f),
            "decay_index_1e-2": dg.decay_index(f, 1e-2),
            "in_fov": len(fov.in_fov),
            "mean_box_width_px": float(np.mean(widths)),
        }
        rows.append(row)
        print(row)
    if cfg.csv:
        Path(cfg.csv).parent.mkdir(parents=True, exist_ok=True)
        dg.write_decay_csv(cfg.csv, decay)
    dump(cfg, {"rows": rows}, cfg.out)


if __name__ == "__main__":
    main(parse_into(Config, __doc__))
