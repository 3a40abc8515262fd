import subprocess
import sys

import pytest

from gpo.benchmarks import tiger_mining_text
from gpo.cli import main
from gpo.io import load_model


@pytest.fixture
def tiger_file(tmp_path):
    p = tmp_path / "tiger.pomdp"
    p.write_text(tiger_mining_text())
    return p


def test_preprocess(tiger_file, tmp_path, capsys):
    cache = tmp_path / "fval.cache"
    assert main(["preprocess", "--model", str(tiger_file), "--cache", str(cache)]) == 0
    out = capsys.readouterr().out
    assert "supports: 6" in out
    assert "guaranteed value at the initial belief: 25" in out
    assert cache.exists()
    assert main(["preprocess", "--model", str(tiger_file), "--cache", str(cache)]) == 0
    assert "from cache" in capsys.readouterr().out


def test_discount_override_invalidates_cache(tiger_file, tmp_path, capsys):
    cache = tmp_path / "fval.cache"
    main(["preprocess", "--model", str(tiger_file), "--cache", str(cache)])
    capsys.readouterr()
    assert main(["preprocess", "--model", str(tiger_file), "--cache", str(cache), "--discount", "0.9"]) == 0
    out = capsys.readouterr().out
    assert "from cache" not in out
    assert "discount 0.9" in out


def test_solve_writes_csv(tiger_file, tmp_path):
    out = tmp_path / "run.csv"
    rc = main(["solve", "--model", str(tiger_file), "--threshold", "12", "--episodes", "5",
               "--simulations", "128", "--out", str(out), "--no-timing"])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("threshold,episode,steps")
    assert len(lines) == 7
    assert lines[-1].startswith("#summary,12,5,")


def test_sweep_stdout_and_infeasible(tiger_file, capsys):
    rc = main(["sweep", "--model", str(tiger_file), "--thresholds", "20:30:5", "--episodes", "3",
               "--simulations", "64", "--no-timing"])
    assert rc == 2
    cap = capsys.readouterr()
    assert "#warning,30,infeasible" in cap.out
    assert "#warning,25" not in cap.out
    assert "infeasible thresholds" in cap.err


def test_solve_infeasible(tiger_file, capsys):
    assert main(["solve", "--model", str(tiger_file), "--threshold", "26", "--episodes", "1"]) == 2


def test_bad_model(tmp_path, capsys):
    p = tmp_path / "bad.pomdp"
    p.write_text("hello\n")
    assert main(["preprocess", "--model", str(p)]) == 1
    assert "line 1" in capsys.readouterr().err
    assert main(["preprocess", "--model", str(tmp_path / "missing.pomdp")]) == 1


def test_oracle_command(tiger_file, capsys):
    assert main(["oracle", "--model", str(tiger_file), "--threshold", "5", "--depth", "5"]) == 0
    out = capsys.readouterr().out
    assert "best expected value: 37" in out
    assert "ms" in out and "sense" in out
    assert main(["oracle", "--model", str(tiger_file), "--threshold", "40"]) == 2


@pytest.mark.parametrize("family,extra", [
    ("tiger", []),
    ("hallway", ["--width", "4", "--height", "3", "--trap", "2,1"]),
    ("rocksample", ["--grid", "3", "--rocks", "2"]),
])
def test_generate(tmp_path, family, extra):
    p = tmp_path / f"{family}.pomdp"
    assert main(["generate", family, "--out", str(p), *extra]) == 0
    m = load_model(p)
    assert m.n_states > 0


def test_console_entry(tiger_file):
    r = subprocess.run([sys.executable, "-m", "gpo.cli", "preprocess", "--model", str(tiger_file)],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert "supports: 6" in r.stdout
