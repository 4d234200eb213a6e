import json
import re

import numpy as np
import pytest
from PIL import Image

from draction.cli import CONFIG_ENV, bench, main
from draction.synthetic import make_motion


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_render_defaults(samples, tmp_path, capsys):
    code, out, _ = run(capsys, "render", samples["ntu"], "--out", tmp_path)
    assert code == 0
    pngs = sorted(tmp_path.glob("*.png"))
    assert len(pngs) == 12
    assert Image.open(pngs[0]).size == (448, 448)
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["num_primitives"] == 265 and m["orientations"] == "present"
    assert {"camera", "timings_s", "topology"} <= set(m)
    assert {"deform", "modulate", "rasterize"} <= set(m["timings_s"])


def test_single_small_frame(samples, tmp_path, capsys):
    code, *_ = run(capsys, "render", samples["smpl"], "--frames", 1, "--resolution", 64, "--out", tmp_path)
    assert code == 0
    pngs = list(tmp_path.glob("*.png"))
    assert len(pngs) == 1 and Image.open(pngs[0]).size == (64, 64)


def test_coco_translation_only(samples, tmp_path, capsys):
    assert run(capsys, "render", samples["coco"], "--frames", 2, "--resolution", 32, "--out", tmp_path)[0] == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["orientations"] == "absent" and m["num_primitives"] == 177


def test_manifest_rerender_bit_exact(samples, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    run(capsys, "render", samples["ucla"], "--frames", 3, "--resolution", 48, "--sampling", "stochastic",
        "--seed", 9, "--out", a, "--float")
    code, *_ = run(capsys, "render", "--from-manifest", a / "manifest.json", "--out", b, "--float")
    assert code == 0
    for i in range(3):
        fa, fb = np.load(a / f"frame_{i:04d}.npz"), np.load(b / f"frame_{i:04d}.npz")
        assert np.array_equal(fa["rgb"], fb["rgb"])
        assert (a / f"frame_{i:04d}.png").read_bytes() == (b / f"frame_{i:04d}.png").read_bytes()


def test_config_file_and_env(samples, tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nframes = 2\nresolution = 24\n")
    out1 = tmp_path / "o1"
    assert run(capsys, "--config", cfg, "render", samples["coco"], "--out", out1)[0] == 0
    assert len(list(out1.glob("*.png"))) == 2
    assert Image.open(out1 / "frame_0000.png").size == (24, 24)
    # flags override the file; the env var is picked up when --config is absent
    monkeypatch.setenv(CONFIG_ENV, str(cfg))
    out2 = tmp_path / "o2"
    assert run(capsys, "render", samples["coco"], "--out", out2, "--frames", 1)[0] == 0
    assert len(list(out2.glob("*.png"))) == 1
    assert Image.open(out2 / "frame_0000.png").size == (24, 24)


def test_bad_config_line(samples, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("frames 2\n")
    code, _, err = run(capsys, "--config", cfg, "render", samples["coco"])
    assert code == 2 and json.loads(err)["exit_code"] == 2


def test_missing_config_is_io_error(samples, tmp_path, capsys):
    code, _, err = run(capsys, "--config", tmp_path / "nope.cfg", "render", samples["coco"])
    assert code == 4 and json.loads(err.strip())["exit_code"] == 4


def test_missing_input_is_io_error(tmp_path, capsys):
    code, _, err = run(capsys, "render", tmp_path / "absent.json", "--out", tmp_path)
    assert code == 4
    assert json.loads(err.strip())["exit_code"] == 4


def test_format_mismatch_is_validation_error(samples, tmp_path, capsys):
    code, _, err = run(capsys, "render", samples["coco"], "--format", "smpl_22", "--out", tmp_path)
    assert code == 2
    rec = json.loads(err.strip())
    assert rec["error"] and rec["message"]


def test_inspect_smpl(samples, capsys):
    code, out, _ = run(capsys, "inspect", samples["smpl"])
    assert code == 0
    assert "J=22" in out and "K=232" in out and "f=(" in out


def test_inspect_corrupt_file(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text('{"format": "draction/1", "frames": [')
    code, _, err = run(capsys, "inspect", p)
    assert code != 0 and json.loads(err.strip())["exit_code"] == code


def test_gradcheck_single_family(capsys):
    code, out, _ = run(capsys, "gradcheck", "--family", "theta_mix")
    assert code == 0
    rows = [line for line in out.splitlines() if re.search(r"\b(PASS|FAIL)\b", line)]
    assert len(rows) == 1 and "theta_mix" in rows[0] and "PASS" in rows[0]


def test_gradcheck_fault_detected(capsys):
    code, out, err = run(capsys, "gradcheck", "--family", "theta_mix", "--fault", "sign_flip")
    assert code == 3
    assert "FAIL" in out and "theta_mix" in json.loads(err.strip())["message"]


def test_gradcheck_unknown_family(capsys):
    assert run(capsys, "gradcheck", "--family", "nope")[0] == 2


def test_bench_rows():
    rows = bench(make_motion("kinect_v2_25", num_frames=12), frames=2, resolutions=(32, 64), repeats=2)
    assert [r["resolution"] for r in rows] == [32, 64]
    assert all(r["K"] == 265 and r["total_ms"]["p95"] >= 0 for r in rows)


def test_bench_command(tmp_path, capsys):
    code, out, _ = run(capsys, "bench", "--frames", 2, "--resolution", 32, "--repeats", 1,
                       "--json", tmp_path / "b.json")
    assert code == 0 and "265" in out
    assert json.loads((tmp_path / "b.json").read_text())[0]["frames"] == 2


@pytest.mark.slow
def test_train_toy_command(tmp_path, capsys):
    code, out, _ = run(capsys, "train-toy", "--epochs", 2, "--resolution", 24, "--frames", 2,
                       "--per-class", 3, "--out", tmp_path)
    assert code == 0 and "final accuracy" in out
    assert len((tmp_path / "report.jsonl").read_text().splitlines()) == 2
    assert (tmp_path / "renderer.npz").exists()
