"""Per-frame inversion latency of a precomputed reconstructor."""

import time
from dataclasses import dataclass

import numpy as np

from _common import dump, parse_into
from lensless import build_reconstructor, calibrate, desk_config, full_sensor_config, select_alpha, svd
from lensless.experiments import run_video


@dataclass
class Config:
    frames: int = 76
    scale: str = "desk"
    noiseless: bool = False
    out: str = ""


def main(cfg: Config):
    optics = desk_config() if cfg.scale == "desk" else full_sensor_config()
    t0 = time.perf_counter()
    A = calibrate(optics, n_avg=100, ideal=cfg.noiseless)
    t1 = time.perf_counter()
    f = svd(A)
    R = build_reconstructor(f, select_alpha(f))
    t2 = time.perf_counter()
    video, _, binaries, timing = run_video(R, optics, cfg.frames, ideal=cfg.noiseless)
    acc = float(np.mean([np.mean(b == x.values) for b, x in zip(binaries, video.frames)]))
    out = {"calibrate_s": t1 - t0, "svd_and_reconstructor_s": t2 - t1, "mean_inversion_ms": timing["mean_inversion_ms"],
           "mean_with_threshold_ms": timing["mean_with_threshold_ms"], "mean_pixel_accuracy": acc}
    print(out)
    dump(cfg, out, cfg.out)


if __name__ == "__main__":
    main(parse_into(Config, __doc__))
