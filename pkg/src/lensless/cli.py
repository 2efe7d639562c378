"""``lensless`` command line.

Exit codes: 0 success, 1 usage/config error, 2 data/dimension error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .calibration import (
    CalibrationStack,
    apply_mask,
    calibrate,
    calibration_bytes,
    frame_to_vector,
    load_calibration,
    mask_vector,
    read_lcal_header,
    save_calibration,
    shadow_mask,
)
from .errors import ConfigError, DimensionError, FormatError, LenslessError, NumericalError
from .experiments import (
    ABLATIONS,
    longest_recovered_line,
    measure,
    run_ablation,
    run_video,
)
from .frameio import image_frame, read_frame, read_lfr, read_pgm, write_lfr, write_pgm
from .optics import OpticsConfig, SensorSpec, render_psfs
from .scene import SceneVector, SourceGrid, make_pattern
from .solver import (
    ILL_POSED_THRESHOLD,
    build_reconstructor,
    condition_number,
    load_reconstructor,
    read_lrec_header,
    reconstruct,
    refocus,
    save_reconstructor,
    select_alpha,
    sha256,
    svd,
    tikhonov_solve,
)

STANDARD_DISTANCES = (85.0, 165.0, 242.0, 343.0, 497.0)


@dataclass(frozen=True)
class SolverSettings:
    alpha_strategy: str = "fixed-fraction"
    alpha_value: float | None = None

    def strategy(self):
        return (self.alpha_strategy, self.alpha_value)


@dataclass(frozen=True)
class CaptureSettings:
    n_avg: int = 100
    noiseless: bool = False


@dataclass(frozen=True)
class IOSettings:
    output_dir: str = "out"
    formats: tuple[str, ...] = ("pgm", "lfr")


@dataclass(frozen=True)
class RunConfig:
    optics: OpticsConfig = field(default_factory=OpticsConfig)
    solver: SolverSettings = field(default_factory=SolverSettings)
    capture: CaptureSettings = field(default_factory=CaptureSettings)
    io: IOSettings = field(default_factory=IOSettings)
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _strict(d, cls, "config")
        kw = {}
        if "optics" in d:
            kw["optics"] = OpticsConfig.from_dict(d["optics"])
        for key, klass in (("solver", SolverSettings), ("capture", CaptureSettings), ("io", IOSettings)):
            if key in d:
                _strict(d[key], klass, key)
                kw[key] = klass(**d[key])
        if "io" in kw:
            kw["io"] = replace(kw["io"], formats=tuple(kw["io"].formats))
        if "seed" in d:
            if not isinstance(d["seed"], int):
                raise ConfigError("seed must be an integer")
            kw["seed"] = d["seed"]
        rc = cls(**kw)
        if rc.capture.n_avg < 1:
            raise ConfigError("capture.n_avg must be >= 1")
        return rc

    def to_dict(self) -> dict:
        return {
            "optics": self.optics.to_dict(),
            "solver": asdict(self.solver),
            "capture": asdict(self.capture),
            "io": {"output_dir": self.io.output_dir, "formats": list(self.io.formats)},
            "seed": self.seed,
        }


def _strict(d, klass, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(d) - set(klass.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _pair(text: str, what: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise ConfigError(f"{what} must look like AxB, got {text!r}") from None


def load_run_config(args) -> RunConfig:
    """Config file, then LENSLESS_SEED, then command-line flags."""
    rc = RunConfig()
    if getattr(args, "config", None):
        try:
            rc = RunConfig.from_dict(json.loads(Path(args.config).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        except TypeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
    env = os.environ.get("LENSLESS_SEED")
    if env is not None:
        try:
            rc = replace(rc, seed=int(env))
        except ValueError:
            raise ConfigError(f"LENSLESS_SEED must be an integer, got {env!r}") from None

    optics = rc.optics
    if getattr(args, "grid", None):
        r, c = _pair(args.grid, "--grid")
        optics = optics.with_(grid=replace(optics.grid, rows=r, cols=c))
    if getattr(args, "sensor", None):
        w, h = _pair(args.sensor, "--sensor")
        optics = optics.with_(sensor=replace(optics.sensor, width_px=w, height_px=h))
    if getattr(args, "pixel_pitch", None) is not None:
        optics = optics.with_(sensor=replace(optics.sensor, pixel_pitch_um=args.pixel_pitch))
    if getattr(args, "read_noise", None) is not None:
        optics = optics.with_(sensor=replace(optics.sensor, read_noise_sigma=args.read_noise))
    if getattr(args, "distance", None) is not None:
        optics = optics.with_(distance_mm=args.distance)
    capture = rc.capture
    if getattr(args, "n_avg", None) is not None:
        capture = replace(capture, n_avg=args.n_avg)
    if getattr(args, "noiseless", False):
        capture = replace(capture, noiseless=True)
    solver = rc.solver
    if getattr(args, "alpha_strategy", None):
        solver = replace(solver, alpha_strategy=args.alpha_strategy)
    if getattr(args, "alpha", None) is not None:
        solver = replace(solver, alpha_value=args.alpha)
    seed = args.seed if getattr(args, "seed", None) is not None else rc.seed
    return RunConfig(optics, solver, capture, rc.io, seed)


# --------------------------------------------------------------------------
# output helpers


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _scene_image(values: np.ndarray, grid: SourceGrid) -> np.ndarray:
    v = np.maximum(np.asarray(values, dtype=np.float64), 0.0)
    peak = v.max()
    return (v / peak if peak > 0 else v).reshape(grid.shape)


def _write_scene(outdir: Path, stem: str, values, grid, formats, binary=False):
    img = _scene_image(values, grid)
    if "pgm" in formats or binary:
        write_pgm(image_frame(img), outdir / f"{stem}.pgm", 255 if binary else 65535)
    if "lfr" in formats and not binary:
        write_lfr(image_frame(np.maximum(np.asarray(values, float), 0.0).reshape(grid.shape)), outdir / f"{stem}.lfr")


def _parse_threshold(text: str):
    if text == "otsu":
        return "otsu"
    if text.startswith("fixed"):
        _, _, t = text.partition(":")
        return ("fixed", float(t) if t else 0.5)
    raise ConfigError(f"--threshold must be otsu or fixed[:t], got {text!r}")


def _check_compatible(A, cfg: OpticsConfig):
    if A.sensor_shape != cfg.sensor.shape:
        raise DimensionError(
            f"calibration sensor is {A.sensor_width_px}x{A.sensor_height_px} but config sensor is "
            f"{cfg.sensor.width_px}x{cfg.sensor.height_px}"
        )
    if (A.grid.rows, A.grid.cols) != (cfg.grid.rows, cfg.grid.cols):
        raise DimensionError(
            f"calibration grid is {A.grid.rows}x{A.grid.cols} but config grid is {cfg.grid.rows}x{cfg.grid.cols}"
        )


def _cfg_for(A, rc: RunConfig) -> OpticsConfig:
    """Run config optics at the calibration's distance, checked for shape."""
    cfg = rc.optics.with_(distance_mm=A.distance_mm)
    _check_compatible(A, cfg)
    return cfg.with_(grid=replace(cfg.grid, pitch_mm=A.grid.pitch_mm))


# --------------------------------------------------------------------------
# commands


def cmd_calibrate(args) -> int:
    rc = load_run_config(args)
    A = calibrate(rc.optics, rc.capture.n_avg, rc.seed, rc.capture.noiseless)
    f = svd(A)
    cond = condition_number(f)
    save_calibration(A, args.out)
    print(f"wrote {args.out}: {A.n_pixels} pixels x {A.n_sources} sources, D = {A.distance_mm:g} mm")
    print(f"condition number: {cond:.6g}")
    if cond > ILL_POSED_THRESHOLD:
        print(f"note: condition number exceeds {ILL_POSED_THRESHOLD:g}; the inversion is ill-posed and needs regularization")
    else:
        print(f"note: condition number below {ILL_POSED_THRESHOLD:g}; the system is well conditioned")
    return 0


def cmd_reconstruct(args) -> int:
    rc = load_run_config(args)
    A = load_calibration(args.calibration)
    out = _outdir(args.outdir or rc.io.output_dir)
    f = svd(A)
    truth = None
    if args.pattern:
        cfg = _cfg_for(A, rc)
        truth = make_pattern(args.pattern, cfg.grid)
        m = measure(truth, cfg, rc.capture.n_avg, [rc.seed, 1], rc.capture.noiseless)
        frame, b = m.frame, mask_vector(m.b, A)
        if "pgm" in rc.io.formats:
            write_pgm(frame, out / "measurement.pgm", 65535)
        if "lfr" in rc.io.formats:
            write_lfr(frame, out / "measurement.lfr")
    elif args.measurement:
        frame = read_frame(args.measurement)
        b = frame_to_vector(frame, A) / args.exposure
    else:
        raise ConfigError("reconstruct needs --measurement or --pattern")
    alpha = select_alpha(f, b, rc.solver.strategy())
    xh = tikhonov_solve(f, b, alpha)
    binary = dg.threshold(xh, _parse_threshold(args.threshold), fallback=True)
    _write_scene(out, "scene_raw", xh, A.grid, rc.io.formats)
    _write_scene(out, "scene_binary", binary, A.grid, rc.io.formats, binary=True)
    report = {"alpha": alpha, "condition_number": condition_number(f), "distance_mm": A.distance_mm}
    if truth is not None:
        report["quality"] = dg.score(xh, truth, A, b).to_dict()
        report["pattern"] = args.pattern
        report["binary_equals_truth"] = bool(np.array_equal(binary, truth.values))
    else:
        report["residual_rel"] = dg.score(xh, SceneVector(A.grid, np.zeros(A.n_sources)), A, b).residual_rel
    dg.write_report_json(out / "report.json", report)
    print(json.dumps(report, default=str))
    return 0


def cmd_video(args) -> int:
    rc = load_run_config(args)
    out = _outdir(args.outdir or rc.io.output_dir)
    t0 = time.perf_counter()
    raw = Path(args.source).read_bytes()[:5]
    mask_from = None
    if raw == b"LREC1":
        R = load_reconstructor(args.source)
        cfg = rc.optics
        if R.n_sources != cfg.grid.size or R.n_pixels != cfg.sensor.n_pixels:
            raise DimensionError(
                f"reconstructor is {R.n_sources} sources x {R.n_pixels} pixels; config has "
                f"{cfg.grid.size} x {cfg.sensor.n_pixels}"
            )
    else:
        A = load_calibration(args.source)
        cfg = _cfg_for(A, rc)
        f = svd(A)
        alpha = select_alpha(f, None, rc.solver.strategy()) if rc.solver.alpha_strategy in ("fixed-fraction", "fixed") else None
        if alpha is None:
            raise ConfigError("video needs a data-independent alpha strategy (fixed-fraction or fixed)")
        R = build_reconstructor(f, alpha, sha256(calibration_bytes(A)), A.distance_mm)
        mask_from = A
        if args.save_reconstructor:
            save_reconstructor(R, args.save_reconstructor)
    setup_ms = (time.perf_counter() - t0) * 1e3
    video, est, binaries, timing = run_video(R, cfg, args.frames, rc.capture.n_avg, [rc.seed, 5],
                                             rc.capture.noiseless, mask_from=mask_from)
    for k, (xh, bi) in enumerate(zip(est, binaries)):
        _write_scene(out, f"frame_{k:04d}_raw", xh, cfg.grid, rc.io.formats)
        _write_scene(out, f"frame_{k:04d}_binary", bi, cfg.grid, rc.io.formats, binary=True)
    acc = [float(np.mean(bi == x.values)) for bi, x in zip(binaries, video.frames)]
    timing.update({"setup_ms": setup_ms, "alpha": R.alpha, "pixel_accuracy": acc})
    dg.write_report_json(out / "timing.json", timing)
    print(f"setup (load + SVD + reconstructor): {setup_ms:.1f} ms")
    print(f"mean per-frame inversion: {timing['mean_inversion_ms']:.3f} ms over {args.frames} frames "
          f"(incl. thresholding {timing['mean_with_threshold_ms']:.3f} ms)")
    return 0


def _parse_distances(text: str) -> list[float]:
    try:
        d = sorted({float(t) for t in text.split(",") if t.strip()})
    except ValueError:
        raise ConfigError(f"bad --distances {text!r}") from None
    if not d:
        raise ConfigError("need at least one distance")
    return d


def cmd_sweep(args) -> int:
    rc = load_run_config(args)
    out = _outdir(args.outdir or rc.io.output_dir)
    distances = _parse_distances(args.distances)
    strat = rc.solver.strategy()
    n_avg, ideal = rc.capture.n_avg, rc.capture.noiseless
    stickman = make_pattern("stickman", rc.optics.grid)
    entries, factors, rows, decay = [], [], [], {}
    for D in distances:
        cfg = rc.optics.with_(distance_mm=D)
        A = calibrate(cfg, n_avg, rc.seed, ideal)
        f = svd(A)
        entries.append(A)
        factors.append(f)
        sub = _outdir(out / f"D{D:g}")
        if args.save_calibrations:
            save_calibration(A, sub / "A.lcal")
        decay[f"{D:g}"] = dg.singular_decay(f)
        dg.write_decay_csv(sub / "decay.csv", {f"{D:g}": decay[f"{D:g}"]})
        corr = {}
        for line in ("h", "v", "diag"):
            cmap = dg.correlation_map(A, line)
            dg.write_correlation_csv(sub / f"correlation_{line}.csv", cmap)
            off = cmap.off_diagonal()
            corr[line] = {"mean_offdiag": float(off.mean()), "max_offdiag": float(off.max())}
        lines = {k: longest_recovered_line(A, f, cfg, k, strat, n_avg, [rc.seed, 3], ideal) for k in ("h", "v", "diag")}
        m = measure(stickman, cfg, n_avg, [rc.seed, 2], ideal)
        b = mask_vector(m.b, A)
        xh = tikhonov_solve(f, b, select_alpha(f, b, strat))
        _write_scene(sub, "stickman_raw", xh, cfg.grid, rc.io.formats)
        _write_scene(sub, "stickman_binary", dg.threshold(xh, "otsu", fallback=True), cfg.grid, rc.io.formats, binary=True)
        row = {
            "distance_mm": D,
            "condition_number": condition_number(f),
            "decay_index_1e-2": dg.decay_index(f, 1e-2),
            "correlation": corr,
            "longest_line": lines,
            "stickman": dg.score(xh, stickman, A, b).to_dict(),
        }
        rows.append(row)
        print(f"D={D:g} mm  cond={row['condition_number']:.4g}  decay<1e-2 at {row['decay_index_1e-2']}  "
              f"lines h/v/diag={lines['h']}/{lines['v']}/{lines['diag']}")
    dg.write_decay_csv(out / "decay.csv", decay)
    stack = CalibrationStack(tuple(entries))
    probe_d = distances[len(distances) // 2]
    m = measure(stickman, rc.optics.with_(distance_mm=probe_d), n_avg, [rc.seed, 4], ideal)
    rf = refocus(stack, mask_vector(m.b, entries[0]), strat, factors)
    refocus_row = {"probe_distance_mm": probe_d, "selected_distance_mm": rf.distance_mm,
                   "residuals": [{"distance_mm": d, "residual_rel": r} for d, r in rf.residuals]}
    print(f"refocus: probe at {probe_d:g} mm -> selected {rf.distance_mm:g} mm")
    dg.write_report_json(out / "sweep.json", {"distances": distances, "per_distance": rows, "refocus": refocus_row,
                                               "config": rc.to_dict()})
    return 0


def cmd_ablate(args) -> int:
    rc = load_run_config(args)
    flags = [name for name in ABLATIONS if getattr(args, name.replace("-", "_"))]
    rep = run_ablation(rc.optics, flags, "stickman", rc.capture.n_avg, rc.seed, rc.capture.noiseless, rc.solver.strategy())
    if args.out:
        dg.write_report_json(args.out, rep)
    print(json.dumps(rep, indent=2, default=str))
    return 0


def cmd_verify(args) -> int:
    rc = load_run_config(args)
    A = load_calibration(args.calibration)
    cfg = _cfg_for(A, rc)
    ref = render_psfs(cfg)[A.keep()]
    diff = float(np.max(np.abs(A.data - ref)))
    scale = float(np.max(np.abs(ref))) or 1.0
    rel = diff / scale
    ok = rel <= args.tol
    print(json.dumps({"max_abs_diff": diff, "max_rel_diff": rel, "tolerance": args.tol, "columns_match_psfs": ok,
                      "finite": True, "nonnegative": True}))
    if not ok:
        print(f"verify: columns deviate from the noiseless PSFs by {rel:.3g} (relative) > {args.tol:g}", file=sys.stderr)
        return 3
    return 0


def cmd_info(args) -> int:
    raw = Path(args.file).read_bytes()
    if raw[:5] == b"LCAL1":
        info = {"format": "LCAL1", **read_lcal_header(raw)[0]}
    elif raw[:5] == b"LREC1":
        info = {"format": "LREC1", **read_lrec_header(raw)}
    elif raw[:4] == b"LFR1":
        fr = read_lfr(args.file)
        info = {"format": "LFR1", "width": fr.width_px, "height": fr.height_px}
    elif raw[:2] == b"P5":
        fr, maxval = read_pgm(args.file)
        info = {"format": "PGM", "width": fr.width_px, "height": fr.height_px, "maxval": maxval}
    else:
        raise FormatError(f"{args.file}: bad magic")
    print(json.dumps(info, indent=2))
    return 0


# --------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--grid", help="source grid ROWSxCOLS")
    p.add_argument("--sensor", help="sensor WIDTHxHEIGHT in pixels")
    p.add_argument("--pixel-pitch", type=float, help="pixel pitch in um")
    p.add_argument("--distance", type=float, help="object distance D in mm")
    p.add_argument("--read-noise", type=float, help="read noise sigma (fraction of full scale)")
    p.add_argument("--n-avg", type=int, help="frames averaged per capture")
    p.add_argument("--noiseless", action="store_true", help="bypass the sensor noise model")
    p.add_argument("--seed", type=int, help="RNG seed (overrides config and LENSLESS_SEED)")
    p.add_argument("--alpha-strategy", choices=["fixed-fraction", "fixed", "l-curve", "discrepancy"])
    p.add_argument("--alpha", type=float, help="value for the alpha strategy")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lensless", description="Simulated lensless imaging with a bare sensor.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("calibrate", help="simulate per-source captures and write an LCAL1 matrix")
    _common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("reconstruct", help="invert a measurement (or a rendered pattern)")
    _common(p)
    p.add_argument("calibration")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--measurement", help="PGM or LFR1 sensor image")
    src.add_argument("--pattern", help="render this pattern and score against it")
    p.add_argument("--exposure", type=float, default=1.0, help="exposure scale of --measurement")
    p.add_argument("--threshold", default="otsu", help="otsu or fixed[:t]")
    p.add_argument("--outdir")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("video", help="reconstruct an animation with a precomputed inverse")
    _common(p)
    p.add_argument("source", help="LCAL1 calibration or LREC1 reconstructor")
    p.add_argument("--animation", default="jumping-stickman", choices=["jumping-stickman"])
    p.add_argument("--frames", type=int, default=76)
    p.add_argument("--save-reconstructor")
    p.add_argument("--outdir")
    p.set_defaults(func=cmd_video)

    p = sub.add_parser("sweep", help="calibrate and analyse at several distances")
    _common(p)
    p.add_argument("--distances", default=",".join(f"{d:g}" for d in STANDARD_DISTANCES))
    p.add_argument("--save-calibrations", action="store_true")
    p.add_argument("--outdir")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="compare a stickman reconstruction with information channels removed")
    _common(p)
    p.add_argument("--mask-shadows", action="store_true")
    p.add_argument("--no-scatterers", action="store_true")
    p.add_argument("--no-texture", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("verify", help="check calibration columns against noiseless PSFs")
    _common(p)
    p.add_argument("calibration")
    p.add_argument("--tol", type=float, default=0.0, help="allowed max relative deviation")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("info", help="print the header of an LCAL1/LREC1/LFR1/PGM file")
    p.add_argument("file")
    p.set_defaults(func=cmd_info)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "frames", 1) < 1:
        print("lensless: error: --frames must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except LenslessError as exc:
        print(f"lensless: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"lensless: error: {exc}", file=sys.stderr)
        return 2
    except np.linalg.LinAlgError as exc:
        print(f"lensless: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
