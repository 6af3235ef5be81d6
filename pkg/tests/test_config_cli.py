import math
import os
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsslab import cli, experiments
from bsslab.config import DEFAULT_TOLERANCES, EXPERIMENTS, ConfigError, parse_config
from bsslab.csvio import csv_text, fmt, write_atomic
from bsslab.kernels import Gamma, Power
from bsslab.noise_sim import Constant, ExpOU, Ramp

MEM = """\
experiment = memory_tail
kernel.family = power
kernel.alpha = 0.2
kernel.beta = 0.8
n_paths = 2
"""

COV = """\
experiment = covariance
seed = 5
n_paths = 40
kernel.alpha = 0.25
grid.dt = 0.03125
grid.T = 1
run.lags = 0 0.25
run.chunk = 10
"""


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

def test_parse_defaults_and_comments():
    cfg = parse_config("# header\nexperiment = langevin   # trailing\n\nseed = 0x10\n")
    assert cfg.experiment == "langevin" and cfg.seed == 16
    assert cfg.kernel is None and isinstance(cfg.sigma, Constant)
    assert cfg.tolerances == DEFAULT_TOLERANCES
    assert cfg.echo() == ["experiment = langevin", "seed = 16"]


def test_parse_kernel_and_sigma():
    cfg = parse_config(MEM + "sigma.model = exp_ou\nsigma.theta = 2\n")
    assert isinstance(cfg.kernel.family, Power) and cfg.kernel.alpha == 0.2
    assert isinstance(cfg.sigma, ExpOU) and not cfg.sigma.independent
    cfg = parse_config("experiment = roughness\nkernel.alpha = -0.3\nsigma.model = ramp\n")
    assert isinstance(cfg.kernel.family, Gamma) and isinstance(cfg.sigma, Ramp)
    assert cfg.sigma.slope == 0.5


def test_all_errors_collected_with_lines():
    text = "experiment = covariance\nkernel.alpha = 0.0\nkernel.family = power\n" \
           "bogus = 1\nseed = x\nno equals here\nseed = 3\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    msgs = exc.value.errors
    joined = "\n".join(msgs)
    assert "line 2:" in joined and "alpha must lie" in joined
    assert "line 3:" in joined and "kernel.beta" in joined
    assert "line 4: unknown key 'bogus'" in joined
    assert "line 5: seed expects integer" in joined
    assert "line 6: expected 'key = value'" in joined
    assert len(msgs) >= 5


@pytest.mark.parametrize("text,needle", [
    ("seed = 1\n", "missing key 'experiment'"),
    ("experiment = nope\n", "unknown experiment"),
    ("experiment = langevin\nseed = 1\nseed = 2\n", "duplicate key 'seed' (first on line 2)"),
    ("experiment = langevin\ngrid.dt = 0.3\ngrid.T = 1\n", "multiple of grid.dt"),
    ("experiment = langevin\nn_paths = 1\n", "at least 2"),
    ("experiment = langevin\ntol.agree = 0\n", "must be positive"),
    ("experiment = langevin\nrun.betas = 0.4\n", "exceed 1/2"),
    ("experiment = langevin\nrun.alphas = 0.6\n", "alpha must lie"),
    ("experiment = langevin\nsigma.model = weird\n", "unknown sigma model"),
    ("experiment = langevin\ngrid.far_ratio = 1\n", "must exceed 1"),
    ("experiment = covariance\n", "needs kernel.alpha"),
    ("experiment = langevin\nsigma.independent = maybe\n", "expects boolean"),
])
def test_parse_errors(text, needle):
    with pytest.raises(ConfigError, match=needle.replace("(", r"\(").replace(")", r"\)")):
        parse_config(text)


@settings(max_examples=200, deadline=None)
@given(st.text(st.characters(blacklist_categories=("Cs",)), max_size=200))
def test_parser_only_raises_config_error(text):
    try:
        parse_config(text)
    except ConfigError:
        pass


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 62))
def test_seed_round_trip(seed):
    assert parse_config(f"experiment = langevin\nseed = {seed}\n").seed == seed


# --------------------------------------------------------------------------
# csv helpers
# --------------------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False))
def test_fmt_round_trips_floats(x):
    assert float(fmt(x)) == x


def test_fmt_special_values():
    assert fmt(True) == "true" and fmt(False) == "false"
    assert fmt(3) == "3" and fmt(math.inf) == "inf" and fmt(math.nan) == "nan"
    assert csv_text(("a", "b"), [(1.5, "x,y")]) == 'a,b\n1.5,"x,y"\n'


def test_write_atomic_leaves_no_partial_file(tmp_path, monkeypatch):
    p = tmp_path / "sub" / "f.csv"
    write_atomic(p, "old\n")
    assert p.read_text() == "old\n"

    def boom(*a, **k):
        raise OSError("disk full")
    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        write_atomic(p, "new\n")
    assert p.read_text() == "old\n"
    assert sorted(x.name for x in p.parent.iterdir()) == ["f.csv"]


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------

def write(tmp_path, text, name="x.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_list_experiments(capsys):
    assert cli.main(["list-experiments"]) == 0
    out = capsys.readouterr().out.split("\n")
    assert [line.split()[0] for line in out if line] == list(EXPERIMENTS)


def test_validate(tmp_path, capsys):
    assert cli.main(["validate", "--config", write(tmp_path, MEM)]) == 0
    assert "ok (memory_tail)" in capsys.readouterr().out
    bad = write(tmp_path, "experiment = covariance\nbogus = 1\n", "bad.cfg")
    assert cli.main(["validate", "--config", bad]) == 2
    assert "line 2: unknown key 'bogus'" in capsys.readouterr().err
    assert cli.main(["validate", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", "--config", write(tmp_path, MEM), "--out-dir", str(out),
                     "--seed", "9"])
    assert code == 0
    report = (out / "report.csv").read_text().splitlines()
    assert report[0] == "check_id,estimate,target,tolerance,pass"
    assert all(line.endswith(",true") for line in report[1:])
    assert "seed = 9" in (out / "run.txt").read_text().splitlines()
    assert (out / "memory_tail.csv").exists()
    stdout = capsys.readouterr().out
    assert "wall_clock_s" in stdout and "wall" not in (out / "report.csv").read_text()


def test_failing_check_exit_one(tmp_path):
    cfg = write(tmp_path, MEM + "tol.slope = 1e-9\n")
    assert cli.main(["run", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == 1
    assert ",false" in (tmp_path / "o" / "report.csv").read_text()


def test_exception_exit_two_with_error_row(tmp_path, monkeypatch):
    def broken(cfg, threads):
        raise RuntimeError("boom")
    monkeypatch.setitem(experiments.SUITES, "memory_tail", broken)
    out = tmp_path / "o"
    assert cli.main(["run", "--config", write(tmp_path, MEM), "--out-dir", str(out)]) == 2
    text = (out / "report.csv").read_text()
    assert "error: RuntimeError: boom" in text and text.rstrip().endswith("false")


def test_bad_arguments(tmp_path, monkeypatch):
    cfg = write(tmp_path, MEM)
    assert cli.main(["run", "--config", cfg, "--threads", "0"]) == 2
    assert cli.main(["run", "--config", cfg, "--seed", "-1"]) == 2
    monkeypatch.setenv("BSSLAB_THREADS", "two")
    assert cli.main(["run", "--config", cfg]) == 2
    monkeypatch.setenv("BSSLAB_THREADS", "0")
    assert cli.main(["run", "--config", cfg]) == 2


def test_unwritable_out_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["run", "--config", write(tmp_path, MEM), "--out-dir",
                     str(blocker / "sub")]) == 2


def test_thread_count_precedence(tmp_path, monkeypatch, capsys):
    cfg = write(tmp_path, MEM + "threads = 2\n")
    out = str(tmp_path / "o")
    monkeypatch.delenv("BSSLAB_THREADS", raising=False)
    cli.main(["run", "--config", cfg, "--out-dir", out])
    assert "threads = 2" in capsys.readouterr().out
    monkeypatch.setenv("BSSLAB_THREADS", "3")
    cli.main(["run", "--config", cfg, "--out-dir", out])
    assert "threads = 3" in capsys.readouterr().out
    cli.main(["run", "--config", cfg, "--out-dir", out, "--threads", "4"])
    assert "threads = 4" in capsys.readouterr().out


def test_outputs_identical_across_thread_counts(tmp_path):
    cfg = write(tmp_path, COV)
    dirs = []
    for k in (1, 4):
        d = tmp_path / f"t{k}"
        cli.main(["run", "--config", cfg, "--out-dir", str(d), "--threads", str(k)])
        dirs.append(d)
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == sorted(p.name for p in dirs[1].iterdir())
    for n in names:
        assert (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes(), n


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "bsslab.cli", "validate", "--config",
                        write(tmp_path, MEM)], capture_output=True, text=True)
    assert r.returncode == 0 and "ok" in r.stdout
