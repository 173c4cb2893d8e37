import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from estfun import cli
from estfun.experiments import ConfigError, experiment_from_config, load_config

CONFIGS = Path(cli.__file__).parent / "configs"

SMALL = """\
[model]
family = "ar"
coeffs = [0.5]

[estimator]
id = "{est}"

[sampling]
n = [100, 200, 400]

[mc]
name = "small"
replications = {reps}
master_seed = 5

[limits]
formula = "ar1"

[output]
summary = "out/summary.json"
replications_csv = "out/reps.csv"
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_estimate_closed_form(tmp_path, capsys):
    data = write(tmp_path, "a.csv", "x\n1\n0.5\n0.25\n")
    assert cli.main(["estimate", str(data), "--estimator", "ar1_ls"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["outcome"] == "solved" and out["theta"] == [0.5]
    assert set(out["report"]) == {"theta_hat", "W_hat", "V_hat", "studentized", "ci_lower", "ci_upper", "level"}


def test_estimate_with_time_column_and_rho(tmp_path, capsys):
    data = write(tmp_path, "b.csv", "t,x\n0,1\n0.5,0.6\n1.0,0.4\n1.5,0.2\n")
    assert cli.main(["estimate", str(data), "--estimator", "ou_euler_ls", "--rho", "0.5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["outcome"] == "solved"


def test_estimate_empty_file(tmp_path, capsys):
    data = write(tmp_path, "e.csv", "")
    assert cli.main(["estimate", str(data), "--estimator", "ar1_ls"]) == 1
    assert "empty" in capsys.readouterr().err


def test_estimate_malformed(tmp_path):
    data = write(tmp_path, "m.csv", "x\n1\nfoo\n")
    assert cli.main(["estimate", str(data), "--estimator", "ar1_ls"]) == 1
    assert cli.main(["estimate", str(tmp_path / "missing.csv"), "--estimator", "ar1_ls"]) == 1


def test_estimate_delta_outcome(tmp_path, capsys):
    data = write(tmp_path, "z.csv", "x\n0\n0\n0\n")
    assert cli.main(["estimate", str(data), "--estimator", "moment_scale"]) == 3
    assert json.loads(capsys.readouterr().out) == {"outcome": "delta", "reason": "NoRootFound"}


def test_estimate_unknown_estimator(tmp_path, capsys):
    data = write(tmp_path, "a.csv", "x\n1\n0.5\n")
    with pytest.raises(SystemExit) as exc:
        cli.main(["estimate", str(data), "--estimator", "nope"])
    assert exc.value.code == 1
    assert "nope" in capsys.readouterr().err


def test_run_smoke_and_rerun_identical(tmp_path, monkeypatch, capsys):
    cfg = write(tmp_path, "small.toml", SMALL.format(est="ar1_ls", reps=20))
    monkeypatch.chdir(tmp_path)
    assert cli.main(["run", str(cfg)]) == 0
    digest = capsys.readouterr().out
    assert "theta_bar = [0.5]" in digest and "theta0" not in digest
    first = (tmp_path / "out/reps.csv").read_bytes()
    assert json.loads((tmp_path / "out/summary.json").read_text())["name"] == "small"
    assert cli.main(["run", str(cfg), "--threads", "3"]) == 0
    assert (tmp_path / "out/reps.csv").read_bytes() == first
    assert cli.main(["run", str(cfg), "--seed", "6"]) == 0
    assert (tmp_path / "out/reps.csv").read_bytes() != first


def test_run_unreliable_exit_code(tmp_path, monkeypatch):
    text = SMALL.format(est="moment_scale", reps=3).replace('coeffs = [0.5]', 'coeffs = [0.5]\nnoise_sd = 1e-300')
    cfg = write(tmp_path, "zero.toml", text)
    monkeypatch.chdir(tmp_path)
    assert cli.main(["run", str(cfg)]) == 2


def test_run_unknown_estimator_names_key(tmp_path, capsys):
    cfg = write(tmp_path, "bad.toml", SMALL.format(est="bogus", reps=20))
    assert cli.main(["run", str(cfg)]) == 1
    err = capsys.readouterr().err
    assert "estimator.id" in err and "bogus" in err and "line 6" in err


@pytest.mark.parametrize(
    "edit,needle",
    [
        (lambda t: t.replace('[limits]', '[limits]\ncolour = "red"'), "limits.colour"),
        (lambda t: t + "\n[extra]\na = 1\n", "[extra]"),
        (lambda t: t.replace('family = "ar"', 'family = "garch"'), "model.family"),
        (lambda t: t.replace('formula = "ar1"', 'formula = "magic"'), "limits.formula"),
        (lambda t: t.replace("replications = 20", "replications = "), "line"),
    ],
)
def test_config_schema_errors(tmp_path, edit, needle):
    cfg = write(tmp_path, "c.toml", edit(SMALL.format(est="ar1_ls", reps=20)))
    with pytest.raises(ConfigError, match=needle.replace("[", r"\[").replace("]", r"\]")):
        doc, text = load_config(cfg)
        experiment_from_config(doc, text)


def test_bundled_configs_validate():
    names = sorted(p.name for p in CONFIGS.glob("*.toml"))
    assert {"ar1.toml", "ou_misspec.toml"} <= set(names)
    for p in CONFIGS.glob("*.toml"):
        doc, text = load_config(p)
        experiment_from_config(doc, text)


def test_bundled_ou_misspec_digest(tmp_path, monkeypatch, capsys):
    doc, text = load_config(CONFIGS / "ou_misspec.toml")
    text = text.replace("replications = 500", "replications = 20").replace("n = [8000]", "n = [500]")
    cfg = write(tmp_path, "ou.toml", text)
    monkeypatch.chdir(tmp_path)
    assert cli.main(["run", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "theta_bar = [0.786939]" in out
    assert "theta0    = [1]" in out


def test_threads_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("ESTFUN_THREADS", "2")
    assert cli._threads(None) == 2
    assert cli._threads(5) == 5


def test_console_script_and_pure_python_backend(tmp_path):
    data = write(tmp_path, "a.csv", "x\n1\n0.5\n0.25\n")
    env = {**os.environ, "ESTFUN_PURE_PYTHON": "1"}
    code = "import estfun.kernels as k, sys; print(k.BACKEND); sys.exit(__import__('estfun.cli').cli.main(sys.argv[1:]))"
    proc = subprocess.run([sys.executable, "-c", code, "estimate", str(data), "--estimator", "ar1_ls"],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "python"
