import subprocess
import sys

import numpy as np
import pytest

from dualbin import io as dio
from dualbin.cli import main
from dualbin.metrics import evaluate

SMALL = ["--width", "120", "--height", "60"]


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--scene", "bar", "--c-true", "0.2", "--span-us", "30000",
                 "--mask-fps", "1000", "--out-dir", str(out)] + SMALL) == 0
    return out


def test_simulate_contract(sim_dir):
    m = dio.RunManifest.read(sim_dir / "manifest.txt")
    assert m.command == "simulate" and m.sample_times[0] == 10000 and m.sample_times[-1] == 30000
    assert all((sim_dir / f).exists() for f in m.frames)
    frame = dio.read_frame(sim_dir / "frame.pgm")
    events = dio.read_events(sim_dir / "events.txt")
    assert frame.geometry == events.geometry == (120, 60)
    assert int(m.extra["events.count"]) == len(events) > 0


def test_simulate_is_deterministic(tmp_path):
    args = ["simulate", "--scene", "checkerboard", "--degrade", "lowlight", "--noise-rate", "3",
            "--dropout", "0.2", "--seed", "5"] + SMALL
    main(args + ["--out-dir", str(tmp_path / "a")])
    main(args + ["--out-dir", str(tmp_path / "b")])
    for name in ("frame.pgm", "events.txt", "manifest.txt", "masks/mask_0000010000.pbm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("flag", [["--dropout", "1.0"], ["--c-true", "0"], ["--scene", "disc"]])
def test_invalid_arguments_exit_2(tmp_path, flag):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--out-dir", str(tmp_path)] + flag)
    assert exc.value.code == 2


def test_missing_input_exits_1(tmp_path, capsys):
    rc = main(["binarize", "--frame", str(tmp_path / "nope.pgm"), "--events", str(tmp_path / "nope.txt"),
               "--exposure-start", "0", "--exposure-us", "20000", "--out-dir", str(tmp_path / "o")])
    assert rc == 1 and "error" in capsys.readouterr().err


def test_binarize_matches_latent_mask(sim_dir, tmp_path):
    out = tmp_path / "bin"
    assert main(["binarize", "--input-dir", str(sim_dir), "--out-dir", str(out)]) == 0
    pred = dio.read_mask(out / "binary.pbm")
    gt = dio.read_mask(sim_dir / "masks" / "mask_0000010000.pbm")
    assert evaluate(pred, gt)["mcc"] >= 0.95
    params = dio.read_params(out / "params.txt")
    assert params.keyframes == 1 and params.theta_e > 0


def test_video_counters_independent_of_fps(sim_dir, tmp_path):
    counters = []
    for fps in ("5000", "100"):
        out = tmp_path / fps
        assert main(["video", "--input-dir", str(sim_dir), "--fps", fps, "--end-us", "30000",
                     "--out-dir", str(out)]) == 0
        m = dio.RunManifest.read(out / "manifest.txt")
        counters.append({k: v for k, v in m.extra.items() if k.startswith("counters.")})
        assert len(m.frames) == len(m.sample_times)
    assert counters[0] == counters[1]


def test_video_from_seed_frame(sim_dir, tmp_path):
    main(["binarize", "--input-dir", str(sim_dir), "--out-dir", str(tmp_path / "b")])
    (tmp_path / "times.txt").write_text("10000,12000,14000")
    rc = main(["video", "--seed-frame", str(tmp_path / "b" / "binary.pbm"), "--seed-time", "10000",
               "--params", str(tmp_path / "b" / "params.txt"), "--events", str(sim_dir / "events.txt"),
               "--sample-times", str(tmp_path / "times.txt"), "--out-dir", str(tmp_path / "v")])
    assert rc == 0
    assert dio.RunManifest.read(tmp_path / "v" / "manifest.txt").sample_times == [10000, 12000, 14000]


def test_evaluate_identical_dirs(sim_dir, tmp_path, capsys):
    rc = main(["evaluate", "--pred", str(sim_dir), "--gt", str(sim_dir), "--report", str(tmp_path / "r.csv")])
    assert rc == 0
    rows = [l for l in (tmp_path / "r.csv").read_text().splitlines() if not l.startswith("#")]
    assert rows[0] == "timestamp,mcc,psnr,nrm"
    body = [r.split(",") for r in rows[1:-1]]
    assert all(psnr == "inf" and nrm == "0.0" for _, _, psnr, nrm in body)
    # frames after the bar has left are empty on both sides: MCC is 0 by convention
    assert {m for _, m, _, _ in body} <= {"1.0", "0.0"} and body[0][1] == "1.0"
    assert rows[-1].endswith(",inf,0.0")


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "dualbin.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
