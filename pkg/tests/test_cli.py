import subprocess
import sys

import numpy as np

from activemap import field as nf
from activemap.cli import EXIT, main
from activemap.field import Architecture, FieldParams


def test_explore_and_replay(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["explore", "--world", "empty_room", "--steps", "20", "--seed", "1",
                 "--out", str(out)]) == 0
    assert "comp_pct=" in capsys.readouterr().out
    assert (out / "metrics.csv").exists()
    assert main(["replay", "--run", str(out)]) == 0
    assert (out / "replay" / "final.ppm").exists()


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("world = two_room\nsteps = 999\npolicy = random\n")
    out = tmp_path / "o"
    assert main(["explore", "--config", str(cfg), "--steps", "7", "--out", str(out)]) == 0
    text = (out / "config.txt").read_text()
    assert "steps = 7" in text and "world = two_room" in text


def test_error_categories(tmp_path, capsys):
    assert main(["explore", "--world", str(tmp_path / "none.txt")]) == EXIT["config"]
    bad = tmp_path / "bad.txt"
    bad.write_text("boundary: 0 0 1 0 1 1\n")
    assert main(["explore", "--world", str(bad), "--out", str(tmp_path / "x")]) == EXIT["world"]
    assert main(["replay", "--run", str(tmp_path)]) == EXIT["io"]
    err = capsys.readouterr().err.splitlines()
    assert [e.split("]")[0] for e in err] == ["error[config", "error[world", "error[io"]


def test_landscape(tmp_path, capsys):
    arch = Architecture(width=8, n_hidden=2)
    paths = []
    for s in range(3):
        p = tmp_path / f"{s}.ckpt"
        nf.save(FieldParams(arch, np.random.default_rng(s).normal(size=arch.n_params())), p)
        paths.append(str(p))
    assert main(["landscape", "--checkpoints", *paths, "--probe", "0.1", "0.2", "--n", "5",
                 "--out", str(tmp_path / "ls")]) == 0
    assert (tmp_path / "ls" / "slice.pgm").read_bytes().startswith(b"P5\n5 5\n")
    assert np.loadtxt(tmp_path / "ls" / "slice.csv", delimiter=",").shape == (5, 5)


def test_ablate_small(tmp_path):
    assert main(["ablate", "--worlds", "empty_room", "--values", "random,frontier", "--seeds", "1",
                 "--steps", "10", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "table.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[1].startswith("random,empty_room")


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "activemap.cli", "explore", "--policy", "walk"],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "invalid choice" in r.stderr
