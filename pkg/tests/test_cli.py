import subprocess
import sys

import pytest

from backpar.cli import ConfigError, load_config, main

SMALL = """
[case]
preset = gl3
T = 1.0
steps = 500
[domain]
modes = 16
n = 64
[method]
name = {method}
qr_M = 1.5
qr_m = 0.95
qr_steps = 50
[noise]
deltas = 1e-2, 1e-3, 1e-4
trials = 3
seed = 5
t_list = 0.5
"""


@pytest.fixture
def cfg(tmp_path):
    def write(text=SMALL, method="truncation", name="run.ini"):
        p = tmp_path / name
        p.write_text(text.format(method=method))
        return str(p)
    return write


def test_missing_T_names_key(cfg, capsys):
    path = cfg("[case]\npreset = heat\n")
    assert main(["forward", "--config", path]) == 2
    assert "'T'" in capsys.readouterr().err


def test_unknown_key_rejected(cfg, capsys):
    path = cfg(SMALL + "[output]\ncolour = red\n")
    assert main(["mise", "--config", path]) == 2
    assert "colour" in capsys.readouterr().err


def test_unknown_section_rejected(cfg):
    with pytest.raises(ConfigError, match="extras"):
        load_config(cfg("[extras]\nx = 1\n"))


def test_bad_value_names_key(cfg):
    with pytest.raises(ConfigError, match="trials"):
        load_config(cfg("[noise]\ntrials = many\n"))


def test_zero_trials_rejected(cfg, capsys):
    assert main(["mise", "--config", cfg(), "--trials", "0"]) == 2
    assert "trials" in capsys.readouterr().err


def test_unknown_method_lists_valid(cfg, capsys):
    assert main(["mise", "--config", cfg(method="magic")]) == 2
    err = capsys.readouterr().err
    assert "magic" in err and "qr-structural" in err


def test_mise_output_is_deterministic(cfg, tmp_path):
    path = cfg(method="truncation, qr-clipped")
    assert main(["mise", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert main(["mise", "--config", path, "--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    a = (tmp_path / "a" / "mise.csv").read_bytes()
    assert a == (tmp_path / "b" / "mise.csv").read_bytes()
    assert len(a.decode().splitlines()) == 1 + 2 * 3
    summary = (tmp_path / "a" / "mise.txt").read_text()
    assert "qr_steps=50" in summary and "truncation, qr-clipped" in summary


def test_seed_flag_changes_output(cfg, tmp_path):
    path = cfg()
    main(["mise", "--config", path, "--out", str(tmp_path / "a")])
    main(["mise", "--config", path, "--out", str(tmp_path / "b"), "--seed", "6"])
    assert (tmp_path / "a" / "mise.csv").read_bytes() != (tmp_path / "b" / "mise.csv").read_bytes()


def test_forward_and_invert(cfg, tmp_path, capsys):
    path = cfg()
    assert main(["forward", "--config", path, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "g.csv").read_text().count("\nmode,lambda,g\n") == 1
    assert main(["invert", "--config", path, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "error_sq(t=0.5)" in out and "alpha" in out


def test_invert_needs_single_method(cfg):
    assert main(["invert", "--config", cfg(method="truncation, qr-clipped")]) == 2


def test_illposed_table(cfg, tmp_path, capsys):
    path = cfg("[case]\npreset = heat\nT = 1\n[illposed]\ntrials = 20\ndeltas = 0.1, 0.01\n")
    assert main(["illposed", "--config", path, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "(2/5)/d" in out and (tmp_path / "illposed.csv").exists()


def test_validate_exit_status():
    proc = subprocess.run([sys.executable, "-m", "backpar", "validate"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert proc.stdout.count("PASS") == 6
