import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fbmjump import cli

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def write_config(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    rows = list(csv.reader(lines[1:]))
    return lines[0], rows[0], rows[1:]


def test_fbm_smoke(tmp_path):
    assert cli.main(["run", str(CONFIGS / "smoke_fbm.ini"), "--out", str(tmp_path)]) == 0
    csvs = sorted(tmp_path.glob("fbm-*.csv"))
    assert len(csvs) == 10
    manifest = json.loads((tmp_path / "fbm-7.manifest.json").read_text())
    assert set(manifest["files"]) == {p.name for p in csvs}
    assert {"config_sha256", "versions", "wall_time_s"} <= set(manifest)
    meta, header, rows = read_csv(tmp_path / "fbm-7.csv")
    assert header == ["time", "value"]
    assert len(rows) == 1024
    assert "method=circulant" in meta and "seed=7" in meta
    assert float(rows[0][1]) == 0.0


def test_invalid_hurst_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, "[global]\nsubcommand = fbm\nseed = 1\nm = 2\nn = 16\n\n[fbm]\nH = 1.2\n")
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "H=1.2" in err and "0 < H < 1" in err


@pytest.mark.parametrize(
    "text",
    [
        "[global]\nsubcommand = fbm\nseed = 1\nm = 2\nn = 16\n\n[fbm]\nH = 0.5\nhurst = 0.5\n",
        "[global]\nsubcommand = fbm\nseed = 1\nm = 2\nn = 16\ncolour = red\n\n[fbm]\nH = 0.5\n",
        "[global]\nsubcommand = fbm\nseed = 1\nm = 2\nn = 16\n\n[fbm]\nH = 0.5\n\n[ruin]\nx0 = 1\n",
        "[global]\nsubcommand = teleport\nseed = 1\nm = 2\nn = 16\n",
        "[global]\nsubcommand = fbm\nm = 2\nn = 16\n\n[fbm]\nH = 0.5\n",
        "[global]\nsubcommand = fbm\nseed = 1\nm = 2\nn = 16\n\n[fbm]\nH = 0.5\nmethod = spectral\n",
    ],
)
def test_schema_violations_exit_two(tmp_path, text):
    cfg = write_config(tmp_path, text)
    out = tmp_path / "o"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 2
    assert not out.exists() or not any(out.iterdir())


def test_env_overrides_config_out(tmp_path, monkeypatch):
    cfg = write_config(
        tmp_path, f"[global]\nsubcommand = fbm\nseed = 3\nm = 1\nn = 8\nout = {tmp_path / 'cfg'}\n\n[fbm]\nH = 0.5\n"
    )
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["run", str(cfg)]) == 0
    assert (tmp_path / "env" / "fbm-3.csv").exists()
    assert not (tmp_path / "cfg").exists()
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "fbm-3.csv").exists()


def test_partial_output_removed_on_failure(tmp_path, monkeypatch):
    def failing(cfg, params, writer, workers):
        writer.write("fbm-1.csv", ["a"], [(1.0,)])
        raise FloatingPointError("overflow in step 3")

    monkeypatch.setitem(cli.PIPELINES, "fbm", failing)
    cfg = write_config(tmp_path, "[global]\nsubcommand = fbm\nseed = 1\nm = 1\nn = 8\n\n[fbm]\nH = 0.5\n")
    out = tmp_path / "o"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 3
    assert list(out.glob("*")) == []


def test_infinite_values_refused(tmp_path):
    cfg = cli.load_config(write_config(tmp_path, "[global]\nsubcommand = fbm\nseed = 1\nm = 1\nn = 8\n\n[fbm]\nH = 0.5\n"))
    w = cli._Writer(tmp_path, cfg)
    with pytest.raises(FloatingPointError):
        w.write("x.csv", ["a"], [(math.inf,)])
    w.write("y.csv", ["a"], [(math.nan,)])


def test_reproducible_bytes(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["run", str(CONFIGS / "smoke_fbm.ini"), "--out", str(tmp_path / d)]) == 0
    for p in (tmp_path / "a").glob("*.csv"):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_weak_sim_matches_euler_companion(tmp_path):
    common = "H = 0.5\ndrift = sin\nlam = 1\njumps = gaussian(0, 1)\nx0 = 0\n"
    weak = write_config(tmp_path, f"[global]\nsubcommand = weak-sim\nseed = 0\nm = 3000\nn = 257\n\n[weak-sim]\n{common}", "w.ini")
    strong = write_config(
        tmp_path,
        f"[global]\nsubcommand = strong-sim\nseed = 500000\nm = 3000\nn = 257\n\n[strong-sim]\nmode = euler-mc\n{common}",
        "s.ini",
    )
    assert cli.main(["run", str(weak), "--out", str(tmp_path)]) == 0
    assert cli.main(["run", str(strong), "--out", str(tmp_path)]) == 0
    _, hw, rw = read_csv(tmp_path / "weak-sim-0.csv")
    _, hs, rs = read_csv(tmp_path / "strong-sim-500000.csv")
    x_w = np.array([float(r[hw.index("x_T")]) for r in rw])
    w = np.array([float(r[hw.index("weight")]) for r in rw])
    x_s = np.array([float(r[hs.index("x_T")]) for r in rs])
    a, b = w * np.maximum(x_w, 0), np.maximum(x_s, 0)
    se = math.hypot(a.std(ddof=1) / math.sqrt(a.size), b.std(ddof=1) / math.sqrt(b.size))
    assert abs(a.mean() - b.mean()) < 3 * se


@pytest.mark.parametrize(
    "text,family",
    [("constant(1)", "constant"), ("gaussian(0, 1)", "gaussian"), ("exponential(2)", "exponential"), ("two-point(-1,2,0.3)", "two-point")],
)
def test_parse_jump_law(text, family):
    assert cli.parse_jump_law(text).family == family


@pytest.mark.parametrize("text", ["pareto(1)", "gaussian(0)", "constant", "exponential(-1)"])
def test_parse_jump_law_rejects(text):
    with pytest.raises(ValueError):
        cli.parse_jump_law(text)


def test_parse_test_function():
    g, box = cli.parse_test_function("indicator(-1, 1)")
    assert box == (-1.0, 1.0)
    np.testing.assert_array_equal(g(np.zeros(3), np.array([-2.0, 0.0, 0.5])), [0.0, 1.0, 1.0])
    bump, _ = cli.parse_test_function("bump(0, 0.5)")
    assert float(bump(np.array(0.0), np.array(0.0))) > 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "fbmjump", "run", str(CONFIGS / "smoke_fbm.ini"), "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert len(proc.stdout.splitlines()) == 11
