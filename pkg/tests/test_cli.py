import json
import subprocess
import sys

import numpy as np
import pytest

from lensless.calibration import load_calibration
from lensless.cli import RunConfig, main
from lensless.frameio import read_lfr, read_pgm, write_lfr, image_frame

SMALL = ["--grid", "12x12", "--sensor", "48x36", "--pixel-pitch", "12"]


@pytest.fixture(scope="module")
def small_cal(tmp_path_factory):
    p = tmp_path_factory.mktemp("cal") / "small.lcal"
    assert main(["calibrate", *SMALL, "--noiseless", "--out", str(p)]) == 0
    return p


def test_calibrate_writes_header(small_cal, capsys):
    A = load_calibration(small_cal)
    assert A.data.shape == (48 * 36, 144) and A.distance_mm == 343.0
    assert main(["info", str(small_cal)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["grid_rows"] == 12 and info["sensor_w"] == 48


def test_default_calibration_file_size(tmp_path):
    p = tmp_path / "d.lcal"
    assert main(["calibrate", "--noiseless", "--out", str(p)]) == 0
    size = p.stat().st_size
    assert size - 6912 * 256 * 8 == 6 + 56  # magic, version and fixed header, no mask rects


def test_calibrate_reports_ill_posed(tmp_path, capsys):
    assert main(["calibrate", *SMALL, "--n-avg", "2", "--out", str(tmp_path / "a.lcal")]) == 0
    out = capsys.readouterr().out
    assert "condition number" in out and "ill-posed" in out


def test_verify_noiseless(small_cal):
    assert main(["verify", *SMALL, str(small_cal)]) == 0


def test_verify_flags_noisy_calibration(tmp_path):
    p = tmp_path / "n.lcal"
    main(["calibrate", *SMALL, "--n-avg", "2", "--out", str(p)])
    assert main(["verify", *SMALL, str(p)]) == 3


def test_reconstruct_self_test(small_cal, tmp_path):
    assert main(["reconstruct", *SMALL, "--noiseless", str(small_cal), "--pattern", "letter-T", "--outdir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["binary_equals_truth"] is True
    assert (tmp_path / "scene_raw.pgm").exists() and (tmp_path / "scene_binary.pgm").exists()
    assert read_pgm(tmp_path / "measurement.pgm")[0].data.shape == (36, 48)


def test_reconstruct_zero_measurement(small_cal, tmp_path):
    write_lfr(image_frame(np.zeros((36, 48))), tmp_path / "zero.lfr")
    assert main(["reconstruct", *SMALL, str(small_cal), "--measurement", str(tmp_path / "zero.lfr"), "--outdir", str(tmp_path)]) == 0
    assert np.all(read_lfr(tmp_path / "scene_raw.lfr").data == 0)


def test_reconstruct_sensor_mismatch(small_cal, tmp_path, capsys):
    write_lfr(image_frame(np.zeros((72, 96))), tmp_path / "big.lfr")
    code = main(["reconstruct", *SMALL, str(small_cal), "--measurement", str(tmp_path / "big.lfr"), "--outdir", str(tmp_path)])
    assert code == 2
    err = capsys.readouterr().err
    assert "96x72" in err and "48x36" in err


def test_reconstruct_bad_file(tmp_path):
    (tmp_path / "x.lcal").write_bytes(b"nonsense")
    assert main(["reconstruct", str(tmp_path / "x.lcal"), "--pattern", "letter-T"]) == 2


def test_video_single_frame_matches_reconstruct(small_cal, tmp_path):
    vid, rec = tmp_path / "v", tmp_path / "r"
    assert main(["video", *SMALL, "--noiseless", str(small_cal), "--frames", "1", "--outdir", str(vid)]) == 0
    assert main(["reconstruct", *SMALL, "--noiseless", str(small_cal), "--pattern", "stickman", "--outdir", str(rec)]) == 0
    a = read_lfr(vid / "frame_0000_raw.lfr").data
    b = read_lfr(rec / "scene_raw.lfr").data
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12 * np.abs(b).max())
    timing = json.loads((vid / "timing.json").read_text())
    assert "setup_ms" in timing and "mean_inversion_ms" in timing


def test_video_from_saved_reconstructor(small_cal, tmp_path):
    lrec = tmp_path / "r.lrec"
    assert main(["video", *SMALL, "--noiseless", str(small_cal), "--frames", "6", "--save-reconstructor", str(lrec),
                 "--outdir", str(tmp_path / "a")]) == 0
    assert main(["video", *SMALL, "--noiseless", str(lrec), "--frames", "6", "--outdir", str(tmp_path / "b")]) == 0
    for k in range(6):
        name = f"frame_{k:04d}_binary.pgm"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_video_rejects_zero_frames(small_cal):
    assert main(["video", *SMALL, str(small_cal), "--frames", "0"]) == 1


def test_sweep_single_distance(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", *SMALL, "--noiseless", "--distances", "165", "--outdir", str(out)]) == 0
    rep = json.loads((out / "sweep.json").read_text())
    assert [r["distance_mm"] for r in rep["per_distance"]] == [165.0]
    assert rep["refocus"]["selected_distance_mm"] == 165.0
    sub = next(p for p in out.iterdir() if p.is_dir())
    for name in ("decay.csv", "correlation_h.csv", "correlation_v.csv", "correlation_diag.csv", "stickman_raw.pgm"):
        assert (sub / name).exists()


def test_ablate_without_flags_equals_baseline(tmp_path):
    out = tmp_path / "ab.json"
    assert main(["ablate", *SMALL, "--noiseless", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["ablated"] == rep["baseline"]


def test_unknown_config_key(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"optics": {"distnce_mm": 3}}))
    assert main(["calibrate", "--config", str(p), "--out", str(tmp_path / "a.lcal")]) == 1
    p.write_text(json.dumps({"wat": 1}))
    assert main(["calibrate", "--config", str(p), "--out", str(tmp_path / "a.lcal")]) == 1


def test_bad_usage_exit_code():
    assert main(["calibrate", "--grid", "twelve", "--out", "x"]) == 1
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 1


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 5, "capture": {"n_avg": 2}}))

    def cal(name, *extra):
        p = tmp_path / name
        assert main(["calibrate", *SMALL, "--config", str(cfg), *extra, "--out", str(p)]) == 0
        return p.read_bytes()

    from_file = cal("a.lcal")
    monkeypatch.setenv("LENSLESS_SEED", "9")
    from_env = cal("b.lcal")
    from_flag = cal("c.lcal", "--seed", "5")
    assert from_env != from_file and from_flag == from_file
    monkeypatch.delenv("LENSLESS_SEED")
    assert cal("d.lcal", "--seed", "9") == from_env


def test_run_config_round_trip():
    rc = RunConfig()
    assert RunConfig.from_dict(json.loads(json.dumps(rc.to_dict()))) == rc


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "lensless", "calibrate", "--grid", "2x2", "--sensor", "8x8", "--noiseless",
                        "--out", str(tmp_path / "t.lcal")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "t.lcal").read_bytes()[:5] == b"LCAL1"
