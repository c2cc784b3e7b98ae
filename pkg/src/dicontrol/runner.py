"""Turn run configs into simulations and artifacts.

This module owns everything between a parsed RunConfig and files on disk:
object construction, the benchmark figure datasets, and the three studies
(precision, scaling, certify).  All artifacts are plain text, embed the
fully-resolved configuration they came from plus a format tag, and are
written atomically (write to a temp file, then rename), so a crashed run
never leaves a half-written file that looks valid.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, RunConfig, config_meta_lines, parse_config, serialize_config
from .controllers import (
    GainSet,
    OutputFeedbackDIC,
    StateFeedbackDIC,
    TwistingController,
    scale_gains,
)
from .lyapunov import certify_sf, search_parameters
from .plants import DoubleIntegrator, Pendulum, PendulumParams, Perturbation
from .simulation import (
    ChatteringReport,
    SettlingReport,
    SimConfig,
    Trajectory,
    chattering_metric,
    precision_scaling_study,
    settling_metrics,
    simulate,
    validate_step_set,
)

__all__ = [
    "BUNDLED_CONFIGS",
    "PRECISION_SLOPE_BANDS",
    "RunResult",
    "SCALING_MISMATCH_BOUND",
    "StudyOutcome",
    "bundled_config_text",
    "load_run_source",
    "reproduce_figures",
    "run",
    "study_certify",
    "study_precision",
    "study_scaling",
]

BUNDLED_CONFIGS = ("sf_pendulum", "of_pendulum", "twisting_pendulum")

# Pass bands for the step-size study: steady-state sup|x1| must shrink like
# h^3 and sup|x2| like h^2 (slopes fitted on log-log axes).
PRECISION_SLOPE_BANDS = {"x1": (2.5, 3.5), "x2": (1.5, 2.5)}

# Gain-scaled trajectory pairs must agree pointwise to this relative level.
SCALING_MISMATCH_BOUND = 1e-9

SUMMARY_FORMAT = "run-summary-1"
FIGURE_FORMAT = "figure-data-1"
STUDY_FORMAT = "study-1"


def _atomic_write(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_trajectory(traj: Trajectory, path, extra_meta):
    tmp = f"{path}.tmp.{os.getpid()}"
    traj.to_csv(tmp, extra_meta=extra_meta)
    os.replace(tmp, path)


def bundled_config_text(name: str) -> str:
    """Text of a config shipped with the package (see BUNDLED_CONFIGS)."""
    from importlib import resources

    ref = resources.files("dicontrol").joinpath("configs", f"{name}.cfg")
    if not ref.is_file():
        raise ConfigError(
            f"no bundled config named {name!r}; bundled: {', '.join(BUNDLED_CONFIGS)}")
    return ref.read_text(encoding="utf-8")


def load_run_source(source: str) -> RunConfig:
    """Resolve a CLI config argument: a file path, or a bundled name."""
    if os.path.exists(source):
        with open(source, encoding="utf-8") as fh:
            return parse_config(fh.read())
    if os.sep not in source and not source.endswith(".cfg"):
        return parse_config(bundled_config_text(source))
    raise ConfigError(f"config file not found: {source}")


def build_plant(cfg: RunConfig):
    if cfg.plant_type == "pendulum":
        try:
            return Pendulum(PendulumParams(m=cfg.mass, l=cfg.length, g=cfg.gravity))
        except ValueError as exc:
            raise ConfigError(f"[plant] invalid: {exc}") from exc
    return DoubleIntegrator()


def build_controller(cfg: RunConfig):
    """Controller object plus its initial internal state tuple."""
    try:
        if cfg.controller_type == "twisting":
            return TwistingController(cfg.k1, cfg.k2), ()
        gains = GainSet(cfg.k1, cfg.k2, cfg.k3, cfg.k4, l1=cfg.l1, l2=cfg.l2)
        if cfg.controller_type == "dic-sf":
            return StateFeedbackDIC(gains), (cfg.z0,)
        return OutputFeedbackDIC(gains), (cfg.z0, cfg.xhat1_0, cfg.xhat2_0)
    except ValueError as exc:
        raise ConfigError(f"[controller] invalid: {exc}") from exc


def build_perturbation(cfg: RunConfig) -> Perturbation:
    try:
        if cfg.perturbation_type == "zero":
            return Perturbation.zero()
        if cfg.perturbation_type == "constant":
            return Perturbation.constant(cfg.level, lipschitz=cfg.lipschitz)
        return Perturbation.sinusoid(cfg.amplitude, omega=cfg.omega, phase=cfg.phase,
                                     lipschitz=cfg.lipschitz)
    except ValueError as exc:
        raise ConfigError(f"[perturbation] invalid: {exc}") from exc


def build_sim_config(cfg: RunConfig) -> SimConfig:
    return SimConfig(h=cfg.h, t_end=cfg.t_end, method=cfg.method,
                     record_stride=cfg.record_stride)


@dataclass(frozen=True)
class RunResult:
    """Artifacts and metrics from one executed config."""

    config: RunConfig
    trajectory: Trajectory
    settling: SettlingReport
    chattering: ChatteringReport | None
    trajectory_path: str
    summary_path: str

    def summary_lines(self):
        s = self.settling
        lines = [
            f"settled: {'yes' if s.reached else 'no'} (tol = {s.tol:g})",
        ]
        if s.reached:
            lines.append(f"settle time: {s.settle_time:.4f} s")
        lines += [
            f"steady-state sup|x1| = {s.sup_x1:.6g}, sup|x2| = {s.sup_x2:.6g}",
            f"trajectory: {self.trajectory_path}",
            f"summary: {self.summary_path}",
        ]
        if self.chattering is not None:
            c = self.chattering
            lines.insert(-2, "control jumps: max |du| = "
                         f"{c.max_step_jump:.6g}, sign-flip fraction = "
                         f"{c.sign_flip_fraction:.4f}")
        return lines


def _config_sections_text(cfg: RunConfig, prefix="config"):
    out = []
    for line in serialize_config(cfg).splitlines():
        if line.startswith("["):
            out.append(f"[{prefix}.{line.strip('[]')}]")
        else:
            out.append(line)
    return "\n".join(out).rstrip("\n")


def _fmt_opt(val):
    if val is None:
        return "none"
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    return str(val)


def _summary_text(cfg: RunConfig, settling: SettlingReport,
                  chattering: ChatteringReport | None, trajectory_path):
    lines = [
        "[summary]",
        f"format = {SUMMARY_FORMAT}",
        f"trajectory = {os.path.basename(trajectory_path)}",
        f"settled = {_fmt_opt(settling.reached)}",
        f"settle_time = {_fmt_opt(settling.settle_time)}",
        f"sup_x1 = {_fmt_opt(settling.sup_x1)}",
        f"sup_x2 = {_fmt_opt(settling.sup_x2)}",
        f"nu1 = {_fmt_opt(settling.nu1)}",
        f"nu2 = {_fmt_opt(settling.nu2)}",
        f"tol = {_fmt_opt(settling.tol)}",
        f"window_start = {_fmt_opt(settling.window_start)}",
    ]
    if chattering is not None:
        lines += [
            "",
            "[chattering]",
            f"max_step_jump = {_fmt_opt(chattering.max_step_jump)}",
            f"sign_flip_fraction = {_fmt_opt(chattering.sign_flip_fraction)}",
            f"window_start = {_fmt_opt(chattering.window_start)}",
        ]
    lines += ["", _config_sections_text(cfg), ""]
    return "\n".join(lines)


def run(cfg: RunConfig, outdir: str = ".") -> RunResult:
    """Execute one config and write its trajectory + summary artifacts."""
    plant = build_plant(cfg)
    controller, ctrl0 = build_controller(cfg)
    pert = build_perturbation(cfg)
    sim_cfg = build_sim_config(cfg)

    traj = simulate(plant, controller, pert, (cfg.x1_0, cfg.x2_0), ctrl0, sim_cfg)
    settling = settling_metrics(traj, tol=cfg.settle_tol)
    chat = chattering_metric(traj) if cfg.chattering else None

    os.makedirs(outdir, exist_ok=True)
    traj_path = os.path.join(outdir, cfg.trajectory)
    summary_path = os.path.join(outdir, cfg.summary)
    _atomic_trajectory(traj, traj_path, extra_meta=config_meta_lines(cfg))
    _atomic_write(summary_path, _summary_text(cfg, settling, chat, traj_path))
    return RunResult(cfg, traj, settling, chat, traj_path, summary_path)


# ---------------------------------------------------------------------------
# benchmark figure datasets


def _figure_csv(path, header_lines, columns):
    names = [name for name, _ in columns]
    arrays = [np.asarray(arr, dtype=float) for _, arr in columns]
    n = len(arrays[0])
    lines = [f"# {line}" for line in header_lines]
    lines.append(",".join(names))
    for i in range(n):
        lines.append(",".join(repr(float(a[i])) for a in arrays))
    _atomic_write(path, "\n".join(lines) + "\n")


def reproduce_figures(outdir: str = ".") -> dict:
    """Re-run the three bundled benchmark configs and emit the four figure
    datasets: angle, velocity, disturbance reconstruction, control signal.

    Everything is deterministic, so repeated calls produce byte-identical
    files.  Returns {figure name: path}.
    """
    results = {}
    for name in BUNDLED_CONFIGS:
        cfg = parse_config(bundled_config_text(name))
        results[name] = run(cfg, outdir=outdir)

    sf = results["sf_pendulum"].trajectory
    of = results["of_pendulum"].trajectory
    tw = results["twisting_pendulum"].trajectory
    if not (len(sf.t) == len(of.t) == len(tw.t)):
        raise RuntimeError("bundled configs drifted apart: unequal time grids")

    meta_common = [f"format = {FIGURE_FORMAT}"]
    for name in BUNDLED_CONFIGS:
        meta_common += [f"config.{name}.{line.split('config.', 1)[1]}"
                        for line in config_meta_lines(results[name].config)]

    figures = {
        "fig1_angle": (
            ["angle trajectories for the three controllers plus the observer estimate"],
            [("t", sf.t), ("x1_sf", sf.x1), ("x1_of", of.x1),
             ("x1_twisting", tw.x1), ("xhat1_of", of.xhat1)],
        ),
        "fig2_velocity": (
            ["velocity trajectories plus the observer estimate"],
            [("t", sf.t), ("x2_sf", sf.x2), ("x2_of", of.x2),
             ("x2_twisting", tw.x2), ("xhat2_of", of.xhat2)],
        ),
        "fig3_disturbance": (
            ["integrator states against the negated disturbance they reconstruct"],
            [("t", sf.t), ("z_sf", sf.z), ("z_of", of.z), ("neg_rho", -sf.rho)],
        ),
        "fig4_control": (
            ["control signals: the integral controllers stay continuous, twisting switches"],
            [("t", sf.t), ("u_sf", sf.u), ("u_of", of.u), ("u_twisting", tw.u)],
        ),
    }
    paths = {}
    os.makedirs(outdir, exist_ok=True)
    for name, (note, columns) in figures.items():
        path = os.path.join(outdir, f"{name}.csv")
        header = [f"figure = {name}"] + note + meta_common
        _figure_csv(path, header, columns)
        paths[name] = path
    return paths


# ---------------------------------------------------------------------------
# studies


@dataclass(frozen=True)
class StudyOutcome:
    """A study's verdict plus the artifact describing it."""

    kind: str
    passed: bool
    details: dict
    artifact_path: str

    def summary_lines(self):
        lines = [f"study {self.kind}: {'passed' if self.passed else 'FAILED'}"]
        for key, val in self.details.items():
            lines.append(f"  {key} = {_fmt_opt(val)}")
        lines.append(f"artifact: {self.artifact_path}")
        return lines


def _study_text(kind, passed, details, tail=""):
    lines = [
        "[study]",
        f"format = {STUDY_FORMAT}",
        f"kind = {kind}",
        f"passed = {_fmt_opt(passed)}",
    ]
    lines += [f"{key} = {_fmt_opt(val)}" for key, val in details.items()]
    body = "\n".join(lines) + "\n"
    if tail:
        body += "\n" + tail
    return body


def study_precision(cfg: RunConfig, outdir: str = ".",
                    steps=(1e-2, 3e-3, 1e-3, 3e-4, 1e-4),
                    settle_tol: float | None = None) -> StudyOutcome:
    """Fit how the steady-state residue shrinks as the step size drops.

    Re-runs the config's loop at each step size (full horizon, every step
    recorded) and fits log sup|x1| and log sup|x2| against log h.  Passes
    when the slopes land in PRECISION_SLOPE_BANDS: cubic for the angle
    residue, quadratic for the velocity residue.
    """
    plant = build_plant(cfg)
    controller, ctrl0 = build_controller(cfg)
    pert = build_perturbation(cfg)
    try:
        steps = validate_step_set(steps)
        sim_cfgs = {h: SimConfig(h=h, t_end=cfg.t_end, method=cfg.method,
                                 record_stride=1) for h in steps}
    except ValueError as exc:
        raise ConfigError(f"bad precision-study steps: {exc}") from exc

    def run_at(h):
        return simulate(plant, controller, pert, (cfg.x1_0, cfg.x2_0), ctrl0, sim_cfgs[h])

    kwargs = {} if settle_tol is None else {"settle_tol": settle_tol}
    study = precision_scaling_study(run_at, steps, **kwargs)
    (lo1, hi1), (lo2, hi2) = PRECISION_SLOPE_BANDS["x1"], PRECISION_SLOPE_BANDS["x2"]
    passed = (not study.degenerate
              and lo1 <= study.slope_x1 <= hi1 and lo2 <= study.slope_x2 <= hi2)

    details = {
        "slope_x1": study.slope_x1,
        "slope_x2": study.slope_x2,
        "slope_x1_band": f"[{lo1}, {hi1}]",
        "slope_x2_band": f"[{lo2}, {hi2}]",
        "degenerate": study.degenerate,
        "steps": ", ".join(repr(h) for h in study.steps),
        "sup_x1": ", ".join(repr(v) for v in study.sup_x1),
        "sup_x2": ", ".join(repr(v) for v in study.sup_x2),
    }
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "study_precision.cfg")
    _atomic_write(path, _study_text("precision", passed, details,
                                    tail=_config_sections_text(cfg) + "\n"))
    return StudyOutcome("precision", passed, details, path)


def _scaled_perturbation(cfg: RunConfig, lam: float) -> Perturbation:
    if cfg.perturbation_type == "zero":
        return Perturbation.zero()
    if cfg.perturbation_type == "constant":
        return Perturbation.constant(lam * cfg.level, lipschitz=lam * cfg.lipschitz)
    return Perturbation.sinusoid(lam * cfg.amplitude, omega=cfg.omega,
                                 phase=cfg.phase, lipschitz=lam * cfg.lipschitz)


def study_scaling(cfg: RunConfig, lam: float, outdir: str = ".",
                  h: float = 1e-3, t_end: float = 30.0) -> StudyOutcome:
    """Check the exact gain-scaling law on the config's controller.

    Runs the tracking-error loop (double integrator; a pendulum's gravity
    term has no scaling law, so the plant section is deliberately ignored)
    twice: once as configured, once with gains scaled by lam and the
    initial state, integrator state, observer state, and perturbation all
    scaled to match.  In exact arithmetic the second trajectory is the
    first multiplied by lam, step for step.  The artifact records the
    worst pointwise relative mismatch per column after unscaling; the
    study passes when every column stays within SCALING_MISMATCH_BOUND.
    """
    if cfg.controller_type == "twisting":
        raise ConfigError("the scaling study needs an integral controller "
                          "(dic-sf or dic-of); twisting gains have no scaling law")
    if not (lam > 0 and np.isfinite(lam)):
        raise ConfigError(f"--lambda must be a positive finite number, got {lam}")

    controller, ctrl0 = build_controller(cfg)
    gains = controller.gains
    scaled = scale_gains(gains, lam, with_observer=gains.has_observer)
    scaled_ctrl = (OutputFeedbackDIC(scaled) if gains.has_observer
                   else StateFeedbackDIC(scaled))

    plant = DoubleIntegrator()
    sim_cfg = SimConfig(h=h, t_end=t_end, record_stride=1)
    x0 = (cfg.x1_0, cfg.x2_0)
    base = simulate(plant, controller, build_perturbation(cfg), x0, ctrl0, sim_cfg)
    scaled_traj = simulate(plant, scaled_ctrl, _scaled_perturbation(cfg, lam),
                           (lam * x0[0], lam * x0[1]),
                           tuple(lam * v for v in ctrl0), sim_cfg)

    details = {"lambda": float(lam), "h": float(h), "t_end": float(t_end),
               "bound": SCALING_MISMATCH_BOUND}
    worst = 0.0
    for name in ("x1", "x2", "z", "xhat1", "xhat2", "u"):
        a = base.column(name)
        if a is None:
            continue
        b = scaled_traj.column(name) / lam
        mism = float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))
        details[f"mismatch_{name}"] = mism
        worst = max(worst, mism)
    details["mismatch_worst"] = worst
    passed = worst <= SCALING_MISMATCH_BOUND

    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "study_scaling.cfg")
    _atomic_write(path, _study_text("scaling", passed, details,
                                    tail=_config_sections_text(cfg) + "\n"))
    return StudyOutcome("scaling", passed, details, path)


def study_certify(L: float, gains: GainSet, outdir: str = ".",
                  gamma1: float | None = None, n: int | None = None,
                  seed: int = 0) -> StudyOutcome:
    """Certify the given gains against disturbance slope L, or search.

    With gamma1 given, checks that exact certificate; without it, runs the
    parameter search, which may rescale the gains to reach the target L.
    The artifact is the certificate record itself plus the study verdict.
    """
    if gamma1 is not None:
        kwargs = {} if n is None else {"n": n}
        report = certify_sf(gains, L, gamma1, seed=seed, **kwargs)
        params = None
    else:
        kwargs = {} if n is None else {"n": n}
        params, report = search_parameters(gains, L, seed=seed, **kwargs)

    details = {"L": float(L), "requested_gains":
               f"({gains.k1!r}, {gains.k2!r}, {gains.k3!r}, {gains.k4!r})"}
    if gamma1 is not None:
        details["gamma1"] = float(gamma1)
    if params is not None:
        g = params.gains
        details["certified_gains"] = f"({g.k1!r}, {g.k2!r}, {g.k3!r}, {g.k4!r})"
        details["certified_gamma1"] = params.gamma1
        details["lambda_scale"] = params.lambda_scale
    details["kappa"] = report.kappa
    details["reason"] = report.reason

    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "study_certify.cfg")
    _atomic_write(path, _study_text("certify", report.passed, details,
                                    tail=report.record()))
    return StudyOutcome("certify", report.passed, details, path)
