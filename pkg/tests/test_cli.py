import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from scipy.ndimage import maximum_filter

from spikedeblur import imageio
from spikedeblur.cli import main
from spikedeblur.metrics import evaluate_sequence, psnr
from spikedeblur.spike_stream import WindowSpec, accumulate_window, encode, from_dense, load, save

from oracles import render_square, scalar_integrate_and_fire


def write_video(directory, frames):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        imageio.write_png(directory / f"frame_{i:04d}.png", f)
    return directory


def square_video(n, h=48, w=64, speed=0.25, fg=(0.5, 0.4, 0.3), bg=(0.1, 0.12, 0.15)):
    return [render_square(h, w, 8 + speed * i, 16, 16, fg, bg) for i in range(n)]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    lines = out.splitlines()
    cfg = json.loads(lines[0].split(" ", 1)[1]) if lines and lines[0].startswith("config ") else None
    result = None
    if lines and lines[-1].startswith("result "):
        result = json.loads(lines[-1].split(" ", 1)[1])
    return code, cfg, result, err


def test_tfp_all_zero_is_black(tmp_path, capsys):
    save(from_dense(np.zeros((20, 6, 9), bool)), tmp_path / "z.spk")
    code, cfg, result, _ = run(capsys, "tfp", "--input", tmp_path / "z.spk", "--output", tmp_path / "t.png")
    assert code == 0 and cfg["command"] == "tfp"
    img = imageio.read_png(tmp_path / "t.png")
    assert img.shape == (6, 9) and not img.any()


def test_tfp_window_and_dump(tmp_path, capsys):
    dense = np.zeros((40, 2, 2), bool)
    dense[10:20:2] = True
    save(from_dense(dense), tmp_path / "s.spk")
    code, _, result, _ = run(capsys, "tfp", "--input", tmp_path / "s.spk", "--output", tmp_path / "o",
                             "--window-start", 10, "--window-len", 10, "--unclamped")
    assert code == 0
    assert np.all(imageio.read_float_dump(result["float_dump"], 2, 2) == 0.5)


def test_blur_two_frames(tmp_path, capsys):
    a = np.zeros((8, 8, 3))
    b = np.full((8, 8, 3), 100 / 255)
    src = write_video(tmp_path / "v", [a, b])
    code, _, _, _ = run(capsys, "blur", "--input", src, "--output", tmp_path / "b.png", "--png-bits", 16)
    assert code == 0
    got = imageio.read_png(tmp_path / "b.png")
    assert np.max(np.abs(got - 50 / 255)) <= 0.5 / 65535


def test_simulate_is_deterministic(tmp_path, capsys):
    src = write_video(tmp_path / "v", square_video(20))
    args = ["--input", src, "--downsample", 4, "--seed", 7, "--noise-spurious", 0.01,
            "--noise-drop", 0.1, "--initial-accumulator", "uniform_random"]
    assert run(capsys, "simulate", *args, "--output", tmp_path / "a.spk")[0] == 0
    assert run(capsys, "simulate", *args, "--output", tmp_path / "b.spk")[0] == 0
    a = (tmp_path / "a.spk").read_bytes()
    assert a == (tmp_path / "b.spk").read_bytes()
    s = load(tmp_path / "a.spk")
    assert (s.num_frames, s.height, s.width) == (20, 12, 16)


def test_synthesize_static_scene(tmp_path, capsys):
    frame = np.random.default_rng(0).integers(10, 250, (16, 20, 3)) / 255
    src = write_video(tmp_path / "v", [frame] * 97)
    code, _, result, _ = run(capsys, "synthesize", "--input", src, "--output", tmp_path / "d")
    assert code == 0 and result["records"] == 1
    man = json.loads((tmp_path / "d" / "manifest.json").read_text())
    rec = man["records"][0]
    assert rec["window"] == [0, 97] and len(rec["ground_truth"]) == 7
    assert man["upsample_factor"] == 4 and man["short_len"] == 13
    assert np.array_equal(imageio.read_png(tmp_path / "d" / rec["blurry"]), imageio.read_png(src / "frame_0000.png"))
    for gt in rec["ground_truth"]:
        assert np.array_equal(imageio.read_png(tmp_path / "d" / gt), frame)


def test_synthesize_partitions(tmp_path, capsys):
    src = write_video(tmp_path / "v", square_video(194, h=16, w=16, speed=0.05))
    code, _, result, _ = run(capsys, "synthesize", "--input", src, "--output", tmp_path / "d")
    assert code == 0 and result["records"] == 2
    recs = json.loads((tmp_path / "d" / "manifest.json").read_text())["records"]
    assert [r["window"] for r in recs] == [[0, 97], [97, 97]]
    assert load(tmp_path / "d" / "spikes.spk").num_frames == 194


def test_threshold_monotonic(tmp_path, capsys):
    src = write_video(tmp_path / "v", square_video(97))
    totals = []
    for vth in (1, 2):
        out = tmp_path / f"d{vth}"
        assert run(capsys, "synthesize", "--input", src, "--output", out, "--threshold", vth,
                   "--reset-mode", "subtract")[0] == 0
        s = load(out / "spikes.spk")
        totals.append(int(accumulate_window(s, WindowSpec(0, s.num_frames)).counts.sum()))
    assert totals[1] <= totals[0] and totals[0] > 0


def test_deblur_static_within_oracle_bound(tmp_path, capsys):
    # a few flat patches, so each pixel's spike train comes from a scalar oracle
    levels = np.array([0.2, 0.35, 0.5, 0.8])
    img = np.repeat(np.repeat(levels.reshape(2, 2), 8, axis=0), 8, axis=1)
    src = write_video(tmp_path / "v", [img] * 97)
    run(capsys, "synthesize", "--input", src, "--output", tmp_path / "d")
    code, _, result, _ = run(capsys, "deblur", "--input", tmp_path / "d", "--output", tmp_path / "r")
    assert code == 0 and result["outputs"] == 7
    blurry = imageio.read_png(tmp_path / "d" / "blurry" / "000000.png")
    dev = {}
    for v in np.round(levels * 255) / 255:
        train = np.array(scalar_integrate_and_fire([v] * 97, 1.0, subtract=False))
        n = train.sum()
        dev[v] = max(abs(train[s:s + 13].sum() * 97 / (n * 13) - 1) for s in range(0, 97 - 13 + 1))
    # spike pixel gains deviate from 1 by at most dev; bilinear upsampling mixes neighbors
    spike_img = blurry[::4, ::4]
    gain_dev = maximum_filter(np.vectorize(dev.get)(spike_img), size=3, mode="nearest")
    tol = blurry * np.repeat(np.repeat(gain_dev, 4, axis=0), 4, axis=1) + 0.5 / 255 + 1e-12
    for m in range(7):
        out = imageio.read_png(tmp_path / "r" / f"000000_{m}.png")
        assert np.all(np.abs(out - blurry) <= tol)


def test_deblur_file_count_and_tiling_reblur(tmp_path, capsys):
    src = write_video(tmp_path / "v", square_video(192))
    run(capsys, "synthesize", "--input", src, "--output", tmp_path / "d", "--frames-per-blur", 96,
        "--num-outputs", 8, "--kprime", 12)
    code, _, result, _ = run(capsys, "deblur", "--input", tmp_path / "d", "--output", tmp_path / "r")
    assert code == 0 and result == {"records": 2, "outputs": 16, "output": str(tmp_path / "r")}
    assert len(list((tmp_path / "r").glob("*.png"))) == 16
    for rid in ("000000", "000001"):
        blurry = np.round(imageio.read_png(tmp_path / "d" / "blurry" / f"{rid}.png") * 255)
        outs = [np.round(imageio.read_png(tmp_path / "r" / f"{rid}_{m}.png") * 255) for m in range(8)]
        assert np.max(np.abs(np.mean(outs, axis=0) - blurry)) <= 1.0


def test_deblur_explicit_pair_and_raw(tmp_path, capsys):
    rng = np.random.default_rng(1)
    dense = rng.random((40, 5, 7)) < 0.4
    stream = from_dense(dense)
    raw = encode(stream)[36:]
    (tmp_path / "s.raw").write_bytes(raw)
    imageio.write_png(tmp_path / "b.png", rng.random((10, 14, 3)))
    code, _, result, _ = run(capsys, "deblur", "--blurry", tmp_path / "b.png", "--spikes", tmp_path / "s.raw",
                             "--raw-spike-width", 7, "--raw-spike-height", 5, "--output", tmp_path / "r",
                             "--num-outputs", 4, "--kprime", 10)
    assert code == 0 and result["outputs"] == 4
    save(stream, tmp_path / "s.spk")
    code, _, _, _ = run(capsys, "deblur", "--blurry", tmp_path / "b.png", "--spikes", tmp_path / "s.spk",
                        "--output", tmp_path / "r2", "--num-outputs", 4, "--kprime", 10)
    assert code == 0
    for m in range(4):
        assert (tmp_path / "r" / f"b_{m}.png").read_bytes() == (tmp_path / "r2" / f"b_{m}.png").read_bytes()


def test_eval_identity_and_blurry_baseline(tmp_path, capsys):
    src = write_video(tmp_path / "v", square_video(97))
    run(capsys, "synthesize", "--input", src, "--output", tmp_path / "d")
    man = json.loads((tmp_path / "d" / "manifest.json").read_text())
    rec = man["records"][0]
    (tmp_path / "gt").mkdir()
    (tmp_path / "blur").mkdir()
    for m, p in enumerate(rec["ground_truth"]):
        shutil.copy(tmp_path / "d" / p, tmp_path / "gt" / f"000000_{m}.png")
        shutil.copy(tmp_path / "d" / rec["blurry"], tmp_path / "blur" / f"000000_{m}.png")
    code, _, res, _ = run(capsys, "eval", "--input", tmp_path / "d", "--recon", tmp_path / "gt",
                          "--output", tmp_path / "e1")
    assert code == 0 and res["mean_psnr"] == 99.0 and res["mean_ssim"] == 1.0
    code, _, res, _ = run(capsys, "eval", "--input", tmp_path / "d", "--recon", tmp_path / "blur",
                          "--output", tmp_path / "e2")
    blurry = imageio.read_png(tmp_path / "d" / rec["blurry"])
    gts = [imageio.read_png(tmp_path / "d" / p) for p in rec["ground_truth"]]
    assert res["mean_reblur_residual_mse"] == 0.0
    assert res["mean_psnr"] == pytest.approx(np.mean([psnr(blurry, g) for g in gts]), abs=1e-12)


def test_pipeline_beats_blurry_and_rows_reproduce(tmp_path, capsys):
    src = write_video(tmp_path / "v", square_video(97, speed=0.3, fg=(0.9, 0.8, 0.7)))
    code, _, res, _ = run(capsys, "pipeline", "--input", src, "--output", tmp_path / "p",
                          "--reset-mode", "subtract")
    assert code == 0
    man = json.loads((tmp_path / "p" / "dataset" / "manifest.json").read_text())
    rec = man["records"][0]
    blurry = imageio.read_png(tmp_path / "p" / "dataset" / rec["blurry"])
    gts = np.stack([imageio.read_png(tmp_path / "p" / "dataset" / p) for p in rec["ground_truth"]])
    baseline = np.mean([psnr(blurry, g) for g in gts])
    assert res["mean_psnr"] > baseline
    recon = np.stack([imageio.read_png(tmp_path / "p" / "recon" / f"000000_{m}.png") for m in range(7)])
    direct = evaluate_sequence(recon, gts, blurry, "000000")
    report = json.loads((tmp_path / "p" / "eval" / "report.json").read_text())
    assert report["records"][0] == direct.to_dict()
    assert (tmp_path / "p" / "eval" / "report.csv").read_text().count("\n") == 9


def test_pipeline_parallel_matches_serial(tmp_path, capsys):
    src = write_video(tmp_path / "v", square_video(194, speed=0.1))
    for name, workers in (("a", 1), ("b", 3)):
        assert run(capsys, "pipeline", "--input", src, "--output", tmp_path / name, "--workers", workers,
                   "--noise-spurious", 0.01, "--noise-drop", 0.05, "--seed", 3)[0] == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                   if p.suffix in (".png", ".spk"))
    assert len(files) == 2 + 14 + 14 + 1
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_config_file_and_flag_precedence(tmp_path, capsys):
    conf = tmp_path / "run.cfg"
    conf.write_text("# comment\nthreshold = 2.5\nframes-per-blur = 10\nnum_outputs = 3\nunclamped = yes\n")
    save(from_dense(np.zeros((10, 2, 2), bool)), tmp_path / "z.spk")
    code, cfg, _, _ = run(capsys, "tfp", "--config", conf, "--input", tmp_path / "z.spk",
                          "--output", tmp_path / "o.png", "--threshold", 4)
    assert code == 0
    assert cfg["threshold"] == 4.0 and cfg["frames_per_blur"] == 10
    assert cfg["num_outputs"] == 3 and cfg["unclamped"] is True


def test_config_driven_pipeline(tmp_path, capsys):
    src = write_video(tmp_path / "v", square_video(97))
    conf = tmp_path / "run.cfg"
    conf.write_text(f"input = {src}\noutput = {tmp_path / 'out'}\nreset-mode = subtract\nkprime = 9\n")
    code, cfg, res, _ = run(capsys, "pipeline", "--config", conf)
    assert code == 0 and cfg["kprime"] == 9 and res["frames"] == 7
    assert json.loads((tmp_path / "out" / "dataset" / "manifest.json").read_text())["short_len"] == 9


@pytest.mark.parametrize("argv,kind", [
    (["tfp", "--input", "/nonexistent/x.spk", "--output", "o.png"], "FileNotFoundError"),
    (["deblur", "--output", "o"], "CliError"),
    (["synthesize", "--input", ".", "--output", "o", "--frames-per-blur", "0"], "ValueError"),
])
def test_errors_are_one_json_line(tmp_path, capsys, monkeypatch, argv, kind):
    monkeypatch.chdir(tmp_path)
    code, _, result, err = run(capsys, *argv)
    assert code != 0 and result is None
    lines = err.strip().splitlines()
    assert len(lines) == 1
    payload = json.loads(lines[0])
    assert payload["error"] == kind and payload["message"]


def test_bad_config_key(tmp_path, capsys):
    conf = tmp_path / "c.cfg"
    conf.write_text("bogus = 1\n")
    code, _, _, err = run(capsys, "tfp", "--config", conf)
    assert code == 1 and "bogus" in json.loads(err)["message"]


def test_resolution_mismatch(tmp_path, capsys):
    save(from_dense(np.ones((10, 4, 4), bool)), tmp_path / "s.spk")
    imageio.write_png(tmp_path / "b.png", np.zeros((10, 12)))
    code, _, _, err = run(capsys, "deblur", "--blurry", tmp_path / "b.png", "--spikes", tmp_path / "s.spk",
                          "--output", tmp_path / "r")
    assert code == 1 and json.loads(err)["error"] == "ValueError"


def test_raw_bit_order_flags(tmp_path, capsys):
    dense = np.zeros((4, 1, 8), bool)
    dense[:, 0, 0] = True
    lsb = encode(from_dense(dense))[36:]
    msb = bytes(int(f"{b:08b}"[::-1], 2) for b in lsb)
    (tmp_path / "m.raw").write_bytes(msb)
    code, _, result, _ = run(capsys, "tfp", "--input", tmp_path / "m.raw", "--raw-spike-width", 8,
                             "--raw-spike-height", 1, "--bit-order", "msb", "--output", tmp_path / "t.png")
    assert code == 0
    img = imageio.read_png(tmp_path / "t.png")
    assert img[0, 0] == 1.0 and not img[0, 1:].any()


def test_missing_ground_truth(tmp_path, capsys):
    src = write_video(tmp_path / "v", square_video(97, h=16, w=16, speed=0.0))
    run(capsys, "synthesize", "--input", src, "--output", tmp_path / "d")
    code, _, _, err = run(capsys, "eval", "--input", tmp_path / "d", "--recon", tmp_path / "nothing",
                          "--output", tmp_path / "e")
    assert code == 1 and json.loads(err)["error"] in ("FileNotFoundError", "OSError")
