"""Run configuration: plain sectioned key = value text.

The format is deliberately dumb: bracketed sections, one `key = value` per
line, full-line '#' comments, no nesting, no interpolation.  Anything a
run needs is spelled out, unknown keys are hard errors (a typo must not
silently fall back to a default and quietly change an experiment), and
parse -> serialize -> parse is the identity on valid configs, with
defaults resolved on first parse so serialized configs carry every value
they ran with.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass

__all__ = [
    "ConfigError",
    "RunConfig",
    "config_meta_lines",
    "load_config",
    "parse_config",
    "serialize_config",
]

PLANT_TYPES = ("pendulum", "double-integrator")
CONTROLLER_TYPES = ("dic-sf", "dic-of", "twisting")
PERTURBATION_TYPES = ("zero", "constant", "sinusoid")

PENDULUM_DEFAULTS = {"mass": 1.1, "length": 1.0, "gravity": 9.815}


class ConfigError(ValueError):
    """Invalid or malformed run configuration."""


@dataclass(frozen=True)
class RunConfig:
    """One fully-resolved closed-loop run.

    Optional fields are None exactly when they do not apply to the chosen
    plant/controller/perturbation type; everything that applies holds a
    concrete value, defaults already filled in.
    """

    plant_type: str
    x1_0: float
    x2_0: float
    mass: float | None
    length: float | None
    gravity: float | None

    controller_type: str
    k1: float
    k2: float
    k3: float | None
    k4: float | None
    l1: float | None
    l2: float | None
    z0: float | None
    xhat1_0: float | None
    xhat2_0: float | None

    perturbation_type: str
    level: float | None
    amplitude: float | None
    omega: float | None
    phase: float | None
    lipschitz: float

    h: float
    t_end: float
    method: str
    record_stride: int

    trajectory: str
    summary: str
    chattering: bool
    settle_tol: float


def _fail(section, key, msg):
    raise ConfigError(f"[{section}] {key}: {msg}")


class _Section:
    """One parsed section with typed, consumed-key accounting."""

    def __init__(self, name, raw):
        self.name = name
        self.raw = dict(raw)
        self.seen = set()

    def _take(self, key):
        self.seen.add(key)
        return self.raw.get(key)

    def string(self, key, choices=None, default=None, required=False):
        val = self._take(key)
        if val is None:
            if required:
                _fail(self.name, key, "required key is missing")
            return default
        if choices is not None and val not in choices:
            _fail(self.name, key, f"must be one of {', '.join(choices)}; got {val!r}")
        return val

    def number(self, key, default=None, required=False):
        val = self._take(key)
        if val is None:
            if required:
                _fail(self.name, key, "required key is missing")
            return default
        try:
            out = float(val)
        except ValueError:
            _fail(self.name, key, f"not a number: {val!r}")
        if not math.isfinite(out):
            _fail(self.name, key, f"must be finite, got {val!r}")
        return out

    def integer(self, key, default=None, required=False):
        val = self._take(key)
        if val is None:
            if required:
                _fail(self.name, key, "required key is missing")
            return default
        try:
            return int(val)
        except ValueError:
            _fail(self.name, key, f"not an integer: {val!r}")

    def boolean(self, key, default=None):
        val = self._take(key)
        if val is None:
            return default
        if val == "true":
            return True
        if val == "false":
            return False
        _fail(self.name, key, f"must be true or false, got {val!r}")

    def forbid_unknown(self):
        extra = sorted(set(self.raw) - self.seen)
        if extra:
            _fail(self.name, extra[0], "unknown key (unknown keys are hard errors)")

    def forbid(self, *keys, because):
        for key in keys:
            if key in self.raw:
                _fail(self.name, key, f"not allowed {because}")


def parse_config(text: str) -> RunConfig:
    """Parse and validate config text into a resolved RunConfig."""
    cp = configparser.ConfigParser(
        delimiters=("=",),
        comment_prefixes=("#",),
        inline_comment_prefixes=None,
        interpolation=None,
        strict=True,
    )
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config does not parse: {exc}") from exc

    wanted = ("plant", "controller", "perturbation", "sim", "output")
    for name in wanted:
        if not cp.has_section(name):
            raise ConfigError(f"missing required section [{name}]")
    for name in cp.sections():
        if name not in wanted:
            raise ConfigError(f"unknown section [{name}] (unknown sections are hard errors)")

    plant = _Section("plant", cp["plant"])
    plant_type = plant.string("type", choices=PLANT_TYPES, required=True)
    x1_0 = plant.number("x1_0", required=True)
    x2_0 = plant.number("x2_0", required=True)
    if plant_type == "pendulum":
        mass = plant.number("mass", default=PENDULUM_DEFAULTS["mass"])
        length = plant.number("length", default=PENDULUM_DEFAULTS["length"])
        gravity = plant.number("gravity", default=PENDULUM_DEFAULTS["gravity"])
        if not mass > 0 or not length > 0:
            _fail("plant", "mass/length", "pendulum mass and length must be positive")
    else:
        plant.forbid("mass", "length", "gravity", because="for plant type double-integrator")
        mass = length = gravity = None
    plant.forbid_unknown()

    ctrl = _Section("controller", cp["controller"])
    controller_type = ctrl.string("type", choices=CONTROLLER_TYPES, required=True)
    k1 = ctrl.number("k1", required=True)
    k2 = ctrl.number("k2", required=True)
    if controller_type == "twisting":
        ctrl.forbid("k3", "k4", "l1", "l2", "z0", "xhat1_0", "xhat2_0",
                    because="for controller type twisting")
        k3 = k4 = l1 = l2 = z0 = xhat1_0 = xhat2_0 = None
    else:
        k3 = ctrl.number("k3", required=True)
        k4 = ctrl.number("k4", default=0.0)
        z0 = ctrl.number("z0", default=0.0)
        if controller_type == "dic-of":
            l1 = ctrl.number("l1", required=True)
            l2 = ctrl.number("l2", required=True)
            xhat1_0 = ctrl.number("xhat1_0", default=0.0)
            xhat2_0 = ctrl.number("xhat2_0", default=0.0)
        else:
            ctrl.forbid("l1", "l2", "xhat1_0", "xhat2_0",
                        because="for controller type dic-sf (observer gains need dic-of)")
            l1 = l2 = xhat1_0 = xhat2_0 = None
    ctrl.forbid_unknown()

    pert = _Section("perturbation", cp["perturbation"])
    perturbation_type = pert.string("type", choices=PERTURBATION_TYPES, required=True)
    if perturbation_type == "zero":
        pert.forbid("level", "amplitude", "omega", "phase",
                    because="for perturbation type zero")
        level = amplitude = omega = phase = None
        lipschitz = pert.number("lipschitz", default=0.0)
    elif perturbation_type == "constant":
        pert.forbid("amplitude", "omega", "phase", because="for perturbation type constant")
        level = pert.number("level", required=True)
        amplitude = omega = phase = None
        lipschitz = pert.number("lipschitz", default=0.0)
    else:
        pert.forbid("level", because="for perturbation type sinusoid")
        amplitude = pert.number("amplitude", required=True)
        omega = pert.number("omega", default=1.0)
        phase = pert.number("phase", default=0.0)
        level = None
        lipschitz = pert.number("lipschitz", default=abs(amplitude * omega))
    if lipschitz < 0:
        _fail("perturbation", "lipschitz", "must be >= 0")
    pert.forbid_unknown()

    sim = _Section("sim", cp["sim"])
    h = sim.number("h", required=True)
    t_end = sim.number("t_end", required=True)
    method = sim.string("method", choices=("euler", "rk4"), default="euler")
    record_stride = sim.integer("record_stride", default=1)
    sim.forbid_unknown()

    out = _Section("output", cp["output"])
    trajectory = out.string("trajectory", required=True)
    summary = out.string("summary", required=True)
    chattering = out.boolean("chattering", default=False)
    settle_tol = out.number("settle_tol", default=1e-2)
    if not settle_tol > 0:
        _fail("output", "settle_tol", "must be positive")
    out.forbid_unknown()

    cfg = RunConfig(
        plant_type=plant_type, x1_0=x1_0, x2_0=x2_0,
        mass=mass, length=length, gravity=gravity,
        controller_type=controller_type, k1=k1, k2=k2, k3=k3, k4=k4,
        l1=l1, l2=l2, z0=z0, xhat1_0=xhat1_0, xhat2_0=xhat2_0,
        perturbation_type=perturbation_type, level=level,
        amplitude=amplitude, omega=omega, phase=phase, lipschitz=lipschitz,
        h=h, t_end=t_end, method=method, record_stride=record_stride,
        trajectory=trajectory, summary=summary,
        chattering=chattering, settle_tol=settle_tol,
    )
    _validate_sim(cfg)
    return cfg


def _validate_sim(cfg: RunConfig):
    from .simulation import SimConfig

    try:
        SimConfig(h=cfg.h, t_end=cfg.t_end, method=cfg.method,
                  record_stride=cfg.record_stride)
    except ValueError as exc:
        raise ConfigError(f"[sim] invalid: {exc}") from exc
    for name in ("trajectory", "summary"):
        if not getattr(cfg, name):
            _fail("output", name, "must be a non-empty file name")


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _fmt(val):
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    return str(val)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text for a RunConfig; parse(serialize(cfg)) == cfg."""
    lines = ["[plant]", f"type = {cfg.plant_type}"]
    if cfg.plant_type == "pendulum":
        lines += [f"mass = {_fmt(cfg.mass)}", f"length = {_fmt(cfg.length)}",
                  f"gravity = {_fmt(cfg.gravity)}"]
    lines += [f"x1_0 = {_fmt(cfg.x1_0)}", f"x2_0 = {_fmt(cfg.x2_0)}", ""]

    lines += ["[controller]", f"type = {cfg.controller_type}",
              f"k1 = {_fmt(cfg.k1)}", f"k2 = {_fmt(cfg.k2)}"]
    if cfg.controller_type != "twisting":
        lines += [f"k3 = {_fmt(cfg.k3)}", f"k4 = {_fmt(cfg.k4)}", f"z0 = {_fmt(cfg.z0)}"]
        if cfg.controller_type == "dic-of":
            lines += [f"l1 = {_fmt(cfg.l1)}", f"l2 = {_fmt(cfg.l2)}",
                      f"xhat1_0 = {_fmt(cfg.xhat1_0)}", f"xhat2_0 = {_fmt(cfg.xhat2_0)}"]
    lines.append("")

    lines += ["[perturbation]", f"type = {cfg.perturbation_type}"]
    if cfg.perturbation_type == "constant":
        lines.append(f"level = {_fmt(cfg.level)}")
    elif cfg.perturbation_type == "sinusoid":
        lines += [f"amplitude = {_fmt(cfg.amplitude)}", f"omega = {_fmt(cfg.omega)}",
                  f"phase = {_fmt(cfg.phase)}"]
    lines += [f"lipschitz = {_fmt(cfg.lipschitz)}", ""]

    lines += ["[sim]", f"h = {_fmt(cfg.h)}", f"t_end = {_fmt(cfg.t_end)}",
              f"method = {cfg.method}", f"record_stride = {cfg.record_stride}", ""]

    lines += ["[output]", f"trajectory = {cfg.trajectory}", f"summary = {cfg.summary}",
              f"chattering = {_fmt(cfg.chattering)}", f"settle_tol = {_fmt(cfg.settle_tol)}"]
    return "\n".join(lines) + "\n"


def config_meta_lines(cfg: RunConfig):
    """The resolved config as flat `config.<section>.<key> = value` lines,
    for embedding into artifacts."""
    out = []
    section = None
    for line in serialize_config(cfg).splitlines():
        if not line:
            continue
        if line.startswith("["):
            section = line.strip("[]")
            continue
        out.append(f"config.{section}.{line}")
    return out
