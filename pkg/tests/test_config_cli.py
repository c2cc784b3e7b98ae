"""Config parsing/serialization and the command-line front end."""

import configparser

import pytest

from dicontrol.cli import OUTDIR_ENV, main
from dicontrol.config import (
    ConfigError,
    config_meta_lines,
    load_config,
    parse_config,
    serialize_config,
)
from dicontrol.runner import BUNDLED_CONFIGS, bundled_config_text, load_run_source

MINIMAL = """\
[plant]
type = pendulum
x1_0 = 2.0
x2_0 = 2.0

[controller]
type = dic-sf
k1 = 2.0
k2 = 5.0
k3 = 0.5

[perturbation]
type = sinusoid
amplitude = 0.4

[sim]
h = 0.001
t_end = 2.0

[output]
trajectory = traj.csv
summary = summary.cfg
"""

TINY_DI = """\
[plant]
type = double-integrator
x1_0 = 1.0
x2_0 = 0.5

[controller]
type = dic-sf
k1 = 2.0
k2 = 5.0
k3 = 0.5

[perturbation]
type = {pert}

[sim]
h = 0.01
t_end = 2.0

[output]
trajectory = traj.csv
summary = summary.cfg
"""


def _variant(base, remove=(), add=()):
    lines = [l for l in base.splitlines() if not any(l.startswith(r) for r in remove)]
    out = []
    for line in lines:
        out.append(line)
        for anchor, extra in add:
            if line.startswith(anchor):
                out.append(extra)
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# parsing and defaults


def test_defaults_resolution():
    cfg = parse_config(MINIMAL)
    assert (cfg.mass, cfg.length, cfg.gravity) == (1.1, 1.0, 9.815)
    assert (cfg.k4, cfg.z0) == (0.0, 0.0)
    assert cfg.l1 is None and cfg.xhat1_0 is None
    assert (cfg.omega, cfg.phase) == (1.0, 0.0)
    assert cfg.lipschitz == pytest.approx(0.4)  # |amplitude * omega|
    assert cfg.method == "euler"
    assert cfg.record_stride == 1
    assert cfg.chattering is False
    assert cfg.settle_tol == 1e-2


def test_zero_and_constant_perturbation_defaults():
    cfg = parse_config(TINY_DI.format(pert="zero"))
    assert cfg.lipschitz == 0.0 and cfg.level is None and cfg.amplitude is None
    text = _variant(TINY_DI.format(pert="constant"), add=(("type = constant", "level = 0.3"),))
    cfg = parse_config(text)
    assert cfg.level == 0.3 and cfg.lipschitz == 0.0


def test_round_trip_identity_for_bundled_configs():
    assert BUNDLED_CONFIGS == ("sf_pendulum", "of_pendulum", "twisting_pendulum")
    for name in BUNDLED_CONFIGS:
        cfg = parse_config(bundled_config_text(name))
        assert parse_config(serialize_config(cfg)) == cfg


def test_round_trip_identity_across_types():
    texts = [
        MINIMAL,
        TINY_DI.format(pert="zero"),
        _variant(TINY_DI.format(pert="constant"),
                 add=(("type = constant", "level = -0.25"),)),
        _variant(TINY_DI.format(pert="zero"),
                 remove=("type = dic-sf", "k3"),
                 add=(("[controller]", "type = twisting"),)),
    ]
    for text in texts:
        cfg = parse_config(text)
        assert parse_config(serialize_config(cfg)) == cfg


def test_meta_lines_are_flat_and_resolved():
    cfg = parse_config(MINIMAL)
    lines = config_meta_lines(cfg)
    assert all(" = " in line and line.startswith("config.") for line in lines)
    assert "config.plant.mass = 1.1" in lines
    assert "config.perturbation.lipschitz = 0.4" in lines


def test_missing_and_unknown_sections():
    with pytest.raises(ConfigError, match=r"missing required section \[output\]"):
        parse_config(MINIMAL.split("[output]")[0])
    with pytest.raises(ConfigError, match=r"unknown section \[extra\]"):
        parse_config(MINIMAL + "\n[extra]\nkey = 1\n")


def test_unknown_keys_are_hard_errors():
    text = _variant(MINIMAL, add=(("x2_0", "damping = 0.1"),))
    with pytest.raises(ConfigError, match=r"\[plant\] damping"):
        parse_config(text)
    text = _variant(MINIMAL, add=(("t_end", "tolerance = 1e-6"),))
    with pytest.raises(ConfigError, match=r"\[sim\] tolerance"):
        parse_config(text)


@pytest.mark.parametrize("remove,add,match", [
    ((), (("[controller]", "l1 = 8.0"),), r"\[controller\] l1"),
    (("type = dic-sf",), (("[controller]", "type = twisting"),), r"\[controller\] k3"),
    ((), (("type = sinusoid", "level = 0.3"),), r"\[perturbation\] level"),
    (("amplitude",), (("type = sinusoid", "omega = 2.0"),),
     r"\[perturbation\] amplitude"),
])
def test_type_dependent_keys(remove, add, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(_variant(MINIMAL, remove=remove, add=add))


def test_plant_type_gates_physical_parameters():
    text = _variant(TINY_DI.format(pert="zero"), add=(("x2_0", "mass = 2.0"),))
    with pytest.raises(ConfigError, match=r"\[plant\] mass"):
        parse_config(text)


def test_value_validation_messages():
    with pytest.raises(ConfigError, match=r"\[sim\] invalid"):
        parse_config(_variant(MINIMAL, remove=("h =",), add=(("[sim]", "h = 0"),)))
    with pytest.raises(ConfigError, match=r"\[controller\] k1"):
        parse_config(_variant(MINIMAL, remove=("k1",), add=(("[controller]", "k1 = fast"),)))
    with pytest.raises(ConfigError, match="settle_tol"):
        parse_config(MINIMAL + "settle_tol = 0\n")
    with pytest.raises(ConfigError, match="lipschitz"):
        parse_config(_variant(MINIMAL, add=(("amplitude", "lipschitz = -1"),)))
    with pytest.raises(ConfigError, match=r"\[sim\] record_stride"):
        parse_config(MINIMAL.replace("t_end = 2.0", "t_end = 2.0\nrecord_stride = 2.5"))
    with pytest.raises(ConfigError, match=r"\[output\] chattering"):
        parse_config(MINIMAL + "chattering = maybe\n")


def test_duplicate_keys_do_not_parse():
    with pytest.raises(ConfigError, match="does not parse"):
        parse_config(MINIMAL + "trajectory = other.csv\n")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "nope.cfg")


def test_run_source_resolution(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text(MINIMAL)
    assert load_run_source(str(path)) == parse_config(MINIMAL)
    assert load_run_source("sf_pendulum") == parse_config(bundled_config_text("sf_pendulum"))
    with pytest.raises(ConfigError, match="not found"):
        load_run_source(str(tmp_path / "missing.cfg"))
    with pytest.raises(ConfigError, match="no bundled config"):
        load_run_source("nonexistent_name")


# ---------------------------------------------------------------------------
# command line


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_cli_run_writes_artifacts_and_reports(tmp_path, capsys):
    cfg_path = _write(tmp_path, TINY_DI.format(pert="zero"))
    assert main(["run", cfg_path, "--outdir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "settled:" in out and "trajectory:" in out
    assert (tmp_path / "traj.csv").is_file()
    assert (tmp_path / "summary.cfg").is_file()


def test_cli_outdir_env_var(tmp_path, monkeypatch, capsys):
    target = tmp_path / "from_env"
    monkeypatch.setenv(OUTDIR_ENV, str(target))
    cfg_path = _write(tmp_path, TINY_DI.format(pert="zero"))
    assert main(["run", cfg_path]) == 0
    capsys.readouterr()
    assert (target / "traj.csv").is_file()
    explicit = tmp_path / "explicit"
    assert main(["run", cfg_path, "--outdir", str(explicit)]) == 0
    capsys.readouterr()
    assert (explicit / "traj.csv").is_file()


def test_cli_reruns_are_byte_identical(tmp_path, capsys):
    cfg_path = _write(tmp_path, TINY_DI.format(pert="zero"))
    for sub in ("first", "second"):
        assert main(["run", cfg_path, "--outdir", str(tmp_path / sub)]) == 0
        capsys.readouterr()
    for name in ("traj.csv", "summary.cfg"):
        a = (tmp_path / "first" / name).read_bytes()
        b = (tmp_path / "second" / name).read_bytes()
        assert a == b


def test_summary_embeds_round_trippable_config(tmp_path, capsys):
    cfg_path = _write(tmp_path, MINIMAL)
    assert main(["run", cfg_path, "--outdir", str(tmp_path)]) == 0
    capsys.readouterr()
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read(tmp_path / "summary.cfg")
    assert parser["summary"]["format"] == "run-summary-1"
    rebuilt = []
    for section in parser.sections():
        if section.startswith("config."):
            rebuilt.append(f"[{section[len('config.'):]}]")
            rebuilt.extend(f"{k} = {v}" for k, v in parser[section].items())
    assert parse_config("\n".join(rebuilt) + "\n") == parse_config(MINIMAL)


def test_cli_exit_2_on_config_problems(tmp_path, capsys):
    bad = _write(tmp_path, MINIMAL.split("[output]")[0], name="bad.cfg")
    assert main(["run", bad]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2
    capsys.readouterr()
    assert main(["run", "not_a_bundled_name"]) == 2
    capsys.readouterr()
    assert main(["study", "precision", "--config", bad]) == 2
    capsys.readouterr()
    assert main(["study", "precision", "--config", "sf_pendulum",
                 "--steps", "1e-2,fast"]) == 2
    capsys.readouterr()
    # parsable floats, but too narrow a span for a slope fit
    assert main(["study", "precision", "--config", "sf_pendulum",
                 "--steps", "1e-2,3e-3,1e-3"]) == 2
    assert "1.5 decades" in capsys.readouterr().err
    assert main(["study", "certify", "--k1", "-1.0"]) == 2
    assert "bad gains" in capsys.readouterr().err


def test_cli_exit_3_on_divergence(tmp_path, capsys):
    text = _variant(
        TINY_DI.format(pert="constant"),
        remove=("h =",),
        add=(("type = constant", "level = 1e308"), ("[sim]", "h = 0.5")),
    )
    assert main(["run", _write(tmp_path, text), "--outdir", str(tmp_path)]) == 3
    err = capsys.readouterr().err
    assert "numeric failure" in err and "non-finite" in err


def test_cli_exit_3_when_precision_study_cannot_settle(tmp_path, capsys):
    # 2 s horizon: the loop never reaches the settling band, which is a
    # numeric failure of the study, not a criterion miss
    cfg_path = _write(tmp_path, TINY_DI.format(pert="zero"))
    code = main(["study", "precision", "--config", cfg_path,
                 "--steps", "1e-2,2e-3,1e-3,2e-4", "--outdir", str(tmp_path)])
    assert code == 3
    assert "never settled" in capsys.readouterr().err


def test_cli_certify_gate_exits_4_with_reason(tmp_path, capsys):
    code = main(["study", "certify", "--L", "0.6", "--k3", "0.5",
                 "--outdir", str(tmp_path)])
    assert code == 4
    out = capsys.readouterr().out
    assert "k3 = 0.5 < L = 0.6" in out
    artifact = (tmp_path / "study_certify.cfg").read_text()
    assert "passed = false" in artifact


def test_cli_certify_search_succeeds(tmp_path, capsys):
    assert main(["study", "certify", "--L", "0.4", "--outdir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "passed" in out
    artifact = (tmp_path / "study_certify.cfg").read_text()
    assert "passed = true" in artifact
    assert "kappa" in artifact


def test_cli_scaling_study_on_short_horizon(tmp_path, capsys):
    # a short pre-landing horizon stays within the exact-conjugation regime
    cfg_path = _write(tmp_path, TINY_DI.format(pert="zero"))
    code = main(["study", "scaling", "--config", cfg_path, "--lambda", "3",
                 "--t-end", "2.0", "--outdir", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0, out
    assert (tmp_path / "study_scaling.cfg").is_file()


def test_cli_rejects_twisting_scaling_study(tmp_path, capsys):
    text = _variant(TINY_DI.format(pert="zero"),
                    remove=("type = dic-sf", "k3"),
                    add=(("[controller]", "type = twisting"),))
    code = main(["study", "scaling", "--config", _write(tmp_path, text),
                 "--outdir", str(tmp_path)])
    assert code == 2
    assert "config error" in capsys.readouterr().err
