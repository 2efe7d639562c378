"""Acceptance criteria, each at its stated tolerance.

Every test records a PASS/FAIL line (shown in the terminal summary).
"""

import time

import numpy as np
import pytest

from lensless import diagnostics as dg
from lensless.calibration import (
    CalibrationMatrix,
    PixelMask,
    apply_mask,
    calibrate,
    calibrate_stack,
    calibration_bytes,
    load_calibration,
    save_calibration,
)
from lensless.cli import main
from lensless.errors import FormatError
from lensless.experiments import measure, random_scene, refocus_probe, run_ablation, run_video, self_test, solve_scene
from lensless.frameio import image_frame, lfr_bytes, pgm_bytes, read_lfr, read_pgm, write_lfr, write_pgm
from lensless.optics import DustScatterer, render_scene, shadow_center
from lensless.scene import SceneVector, make_pattern
from lensless.solver import (
    build_reconstructor,
    condition_number,
    load_reconstructor,
    read_lrec_header,
    save_reconstructor,
    select_alpha,
    sha256,
    svd,
    tikhonov_solve,
)

STACK_DISTANCES = (85.0, 165.0, 242.0, 343.0, 497.0)


def test_c1_solver_matches_normal_equations(verdict):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        A = rng.uniform(0, 1, (30, 12))
        b = rng.uniform(0, 1, 30)
        f = svd(A)
        for alpha in (0.01, 0.1, 1.0):
            x = tikhonov_solve(f, b, alpha)
            oracle = np.linalg.solve(A.T @ A + alpha**2 * np.eye(12), A.T @ b)
            worst = max(worst, np.linalg.norm(x - oracle) / np.linalg.norm(oracle))
    elapsed = time.perf_counter() - t0
    ok = verdict("C1 solver oracle", worst <= 1e-8 and elapsed < 5, f"max rel err {worst:.2e}, {elapsed:.2f} s")
    assert ok


def test_c2_regularization_monotone(verdict):
    rng = np.random.default_rng(2)
    bad = 0
    for _ in range(20):
        A = rng.uniform(0, 1, (30, 12))
        b = rng.uniform(0, 1, 30)
        f = svd(A)
        alphas = np.geomspace(1e-4 * f.S[0], f.S[0], 20)
        xs = [tikhonov_solve(f, b, a) for a in alphas]
        res = np.array([np.linalg.norm(A @ x - b) for x in xs])
        sol = np.array([np.linalg.norm(x) for x in xs])
        bad += int(np.any(res[1:] < res[:-1] - 1e-12) or np.any(sol[1:] > sol[:-1] + 1e-12))
    ok = verdict("C2 monotone path", bad == 0, f"{bad}/20 systems violate monotonicity")
    assert ok


def test_c3_noiseless_letter_t(desk, verdict):
    t0 = time.perf_counter()
    A = calibrate(desk, ideal=True)
    f = svd(A)
    truth = make_pattern("letter-T", desk.grid)
    r = self_test(A, desk, truth, ideal=True, factors=f)
    elapsed = time.perf_counter() - t0
    acc = r.report.pixel_accuracy
    ok = verdict("C3 noiseless identity", acc == 1.0 and elapsed < 120, f"pixel_accuracy {acc}, pipeline {elapsed:.1f} s")
    assert ok


def test_c4_noise_robustness(desk, desk_psfs, desk_noisy, verdict):
    A, f = desk_noisy
    rng = np.random.default_rng(4)
    accs = []
    for k in range(20):
        truth = random_scene(desk.grid, rng, 15, 40)
        accs.append(self_test(A, desk, truth, 100, [4, k], factors=f, psfs=desk_psfs).report.pixel_accuracy)
    mean = float(np.mean(accs))
    ok = verdict("C4 noise robustness", mean >= 0.98, f"mean pixel_accuracy {mean:.4f} (min {min(accs):.4f})")
    assert ok


def test_c5_video_latency(desk, desk_noisy, verdict):
    A, f = desk_noisy
    R = build_reconstructor(f, select_alpha(f), sha256(calibration_bytes(A)), A.distance_mm)
    _, _, _, timing = run_video(R, desk, 76, n_avg=1, rng_seed=5)
    ms = timing["mean_inversion_ms"]
    ok = verdict("C5 video latency", ms < 10.0, f"mean inversion {ms:.3f} ms/frame over 76 frames")
    assert ok


def test_c6_geometry_and_linearity(desk, verdict):
    rng = np.random.default_rng(6)
    worst_geo = 0.0
    for _ in range(1000):
        D = rng.uniform(20, 1000)
        h = rng.uniform(0.01, 2.0)
        p = DustScatterer(tuple(rng.uniform(-5, 5, 2)), h, 0.01)
        s = rng.uniform(-200, 200, 2)
        # independent oracle: intersect the ray source->particle with z = 0
        src, part = np.array([*s, D]), np.array([*p.pos_mm, h])
        hit = src + (part - src) * (src[2] / (src[2] - part[2]))
        worst_geo = max(worst_geo, float(np.max(np.abs(np.array(shadow_center(p, s, D)) - hit[:2]))))
    worst_lin = 0.0
    n = desk.grid.size
    for _ in range(20):
        def sparse():
            v = np.zeros(n)
            k = int(rng.integers(1, 12))
            v[rng.choice(n, k, replace=False)] = rng.uniform(0.1, 2.0, k)
            return SceneVector(desk.grid, v)
        x, y = sparse(), sparse()
        a, b = rng.uniform(0.1, 3, 2)
        lhs = render_scene(x.scaled(a) + y.scaled(b), desk).vector
        rhs = a * render_scene(x, desk).vector + b * render_scene(y, desk).vector
        worst_lin = max(worst_lin, np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs))
    ok = verdict("C6 geometry/linearity", worst_geo < 1e-9 and worst_lin <= 1e-12,
                 f"shadow err {worst_geo:.2e} mm, linearity rel err {worst_lin:.2e}")
    assert ok


@pytest.fixture(scope="module")
def stacks(desk):
    ideal = calibrate_stack(desk, STACK_DISTANCES, ideal=True)
    noisy = calibrate_stack(desk, STACK_DISTANCES, n_avg=100, rng_seed=0)
    return {
        "ideal": (ideal, [svd(e) for e in ideal.entries]),
        "noisy": (noisy, [svd(e) for e in noisy.entries]),
    }


def test_c7_refocus(desk, stacks, verdict):
    rates = {}
    for mode in ("ideal", "noisy"):
        stack, factors = stacks[mode]
        rng = np.random.default_rng(7)
        hits = 0
        for D in STACK_DISTANCES:
            for k in range(5):
                truth = random_scene(desk.grid, rng, 15, 40)
                r = refocus_probe(stack, desk, truth, D, 100, [7, int(D), k], mode == "ideal", factors=factors)
                hits += r.distance_mm == D
        rates[mode] = hits / 25
    ok = verdict("C7 refocus", rates["ideal"] == 1.0 and rates["noisy"] >= 0.95,
                 f"noiseless {rates['ideal']:.0%}, noisy {rates['noisy']:.0%} of 25")
    assert ok


def _maps(A):
    return [dg.correlation_map(A, line) for line in ("h", "v", "diag")]


def test_c8_correlation_maps(desk, desk_ideal, desk_noisy, verdict):
    A_base, f_base = desk_noisy
    ablated_cfg = desk.with_(scatterers=(), texture_amplitude=0.0)
    A_abl = calibrate(ablated_cfg, n_avg=100, rng_seed=0)
    rng = np.random.default_rng(8)
    A_rand = CalibrationMatrix(rng.uniform(size=(96 * 72, 256)), 343.0, desk.grid, 96, 72, 6.0, 1)
    props = True
    for A in (desk_ideal[0], A_base, A_abl, A_rand):
        for m in _maps(A):
            v = m.values
            props &= bool(np.array_equal(v, v.T) and np.all(np.diag(v) == 1) and np.all(np.abs(v) <= 1))
    base_off = np.concatenate([m.off_diagonal() for m in _maps(A_base)])
    abl_off = np.concatenate([m.off_diagonal() for m in _maps(A_abl)])
    max_base = float(base_off.max())
    cond_base, cond_abl = condition_number(f_base), condition_number(svd(A_abl))
    mean_base, mean_abl = float(base_off.mean()), float(abl_off.mean())
    parts = {
        "properties": props,
        "max off-diag <= 0.999": max_base <= 0.999,
        "ablated mean corr higher": mean_abl > mean_base,
        "ablated cond higher": cond_abl > cond_base,
    }
    detail = (f"max off-diag {max_base:.4f}; mean off-diag base {mean_base:.4f} vs ablated {mean_abl:.4f}; "
              f"cond base {cond_base:.4g} vs ablated {cond_abl:.4g}; failing: "
              + (", ".join(k for k, v in parts.items() if not v) or "none"))
    ok = verdict("C8 correlation maps", all(parts.values()), detail)
    assert ok, detail


def test_c9_mask_ablation(desk, verdict):
    rep = run_ablation(desk, ["mask-shadows"], "stickman", n_avg=100, rng_seed=0)
    acc = rep["ablated"]["report"]["pixel_accuracy"]
    r_mask = rep["ablated"]["report"]["residual_rel"]
    r_base = rep["baseline"]["report"]["residual_rel"]
    ok = verdict("C9 mask ablation", acc >= 0.9 and r_mask > r_base,
                 f"masked accuracy {acc:.4f}, residual {r_mask:.3e} vs baseline {r_base:.3e}, "
                 f"{len(rep['mask_rects'])} rects")
    assert ok


def test_c10_file_formats(tmp_path, desk_ideal, verdict):
    A = apply_mask(desk_ideal[0], PixelMask(((3, 4, 5, 6),)))
    checks = {}
    save_calibration(A, tmp_path / "a.lcal")
    raw = (tmp_path / "a.lcal").read_bytes()
    checks["LCAL1"] = calibration_bytes(load_calibration(tmp_path / "a.lcal")) == raw

    f = svd(A)
    R = build_reconstructor(f, select_alpha(f), sha256(raw))
    save_reconstructor(R, tmp_path / "r.lrec")
    rraw = (tmp_path / "r.lrec").read_bytes()
    save_reconstructor(load_reconstructor(tmp_path / "r.lrec"), tmp_path / "r2.lrec")
    checks["LREC1"] = (tmp_path / "r2.lrec").read_bytes() == rraw

    img = np.random.default_rng(10).uniform(0, 1, (72, 96))
    write_lfr(image_frame(img), tmp_path / "f.lfr")
    checks["LFR1"] = lfr_bytes(read_lfr(tmp_path / "f.lfr")) == (tmp_path / "f.lfr").read_bytes()
    for mv in (255, 65535):
        write_pgm(image_frame(img), tmp_path / "f.pgm", mv)
        back, got = read_pgm(tmp_path / "f.pgm")
        checks[f"PGM{mv}"] = got == mv and pgm_bytes(back, mv) == (tmp_path / "f.pgm").read_bytes()

    def raises(fn, data, match):
        p = tmp_path / "bad"
        p.write_bytes(data)
        try:
            fn(p)
        except FormatError as exc:
            return match in str(exc)
        return False

    checks["LCAL1 bad magic"] = raises(load_calibration, b"XXXXX" + raw[5:], "magic")
    checks["LCAL1 truncated"] = raises(load_calibration, raw[: len(raw) - 8 * A.n_pixels], "truncated")
    checks["LREC1 bad magic"] = raises(load_reconstructor, b"LFR1\0" + rraw[5:], "magic")
    checks["LREC1 truncated"] = raises(load_reconstructor, rraw[:-8], "truncated")
    checks["LFR1 bad magic"] = raises(read_lfr, b"LFR2" + lfr_bytes(image_frame(img))[4:], "magic")
    checks["LFR1 truncated"] = raises(read_lfr, lfr_bytes(image_frame(img))[:-1], "truncated")
    checks["PGM bad magic"] = raises(read_pgm, b"P2\n1 1\n255\n0", "magic")
    checks["PGM truncated"] = raises(read_pgm, b"P5\n4 4\n255\n\0\0", "truncated")
    assert read_lrec_header(rraw)["n_sources"] == 256
    failed = [k for k, v in checks.items() if not v]
    ok = verdict("C10 file formats", not failed, f"{len(checks) - len(failed)}/{len(checks)} checks" +
                 (f"; failed {failed}" if failed else ""))
    assert ok


def test_c11_calibration_deterministic(tmp_path, verdict):
    a, b = tmp_path / "a.lcal", tmp_path / "b.lcal"
    assert main(["calibrate", "--seed", "11", "--out", str(a)]) == 0
    assert main(["calibrate", "--seed", "11", "--out", str(b)]) == 0
    same = a.read_bytes() == b.read_bytes()
    ok = verdict("C11 determinism", same, f"{a.stat().st_size} bytes, identical={same}")
    assert ok
