"""Fixed-step closed-loop simulation and steady-state metrics.

Discontinuous loops are integrated with plain explicit Euler and
sample-and-hold control: the control is computed once per step from the
current state and held through the step.  No event detection, no adaptive
stepping; runs are bit-reproducible, and the discretization residue left
at the origin is itself an object of study (it scales like h^3 in position
and h^2 in velocity, which precision_scaling_study measures).  rk4 is
available for smooth open-loop sanity checks only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .homogeneous import Weights, hom_norm

__all__ = [
    "ChatteringReport",
    "PrecisionStudy",
    "SettlingReport",
    "SimConfig",
    "SimulationDiverged",
    "StudyError",
    "Trajectory",
    "chattering_metric",
    "precision_scaling_study",
    "settling_metrics",
    "simulate",
]

CSV_COLUMNS = ("t", "x1", "x2", "xhat1", "xhat2", "z", "u", "rho")


class SimulationDiverged(RuntimeError):
    """State left the range of finite floats."""

    def __init__(self, step, t):
        super().__init__(f"state became non-finite at step {step} (t={t:g})")
        self.step = step
        self.t = t


class StudyError(RuntimeError):
    """A study could not produce a valid result (e.g. a run never settled)."""


@dataclass(frozen=True)
class SimConfig:
    """Step size, horizon, integrator and recording stride."""

    h: float
    t_end: float
    method: str = "euler"
    record_stride: int = 1

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"step size must be positive, got h={self.h}")
        if not (self.t_end >= 0 and math.isfinite(self.t_end)):
            raise ValueError(f"horizon must be >= 0, got t_end={self.t_end}")
        if self.method not in ("euler", "rk4"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if self.record_stride < 1 or self.record_stride != int(self.record_stride):
            raise ValueError(f"record_stride must be a positive integer, got {self.record_stride}")
        n = round(self.t_end / self.h)
        if abs(n * self.h - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise ValueError(f"horizon t_end={self.t_end} is not an integer number of steps h={self.h}")
        if n % self.record_stride != 0:
            raise ValueError("record_stride must divide the number of steps")

    @property
    def n_steps(self):
        return round(self.t_end / self.h)


@dataclass
class Trajectory:
    """Recorded closed-loop run on a uniform time grid.

    Column conventions match the CSV layout: u and rho at index i are the
    control and disturbance applied over the step starting at t[i].
    Controllers without an integrator or an observer leave the matching
    columns as None, which export as empty CSV fields.
    """

    t: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    u: np.ndarray
    rho: np.ndarray
    z: np.ndarray | None = None
    xhat1: np.ndarray | None = None
    xhat2: np.ndarray | None = None
    h: float = 0.0
    record_stride: int = 1
    method: str = "euler"

    def column(self, name):
        return getattr(self, name)

    def to_csv(self, path, extra_meta=()):
        """Write the run; meta lines go first as '#' comments, then the
        fixed header t,x1,x2,xhat1,xhat2,z,u,rho.  Numbers are written in
        shortest round-trip form so re-reading is bit-exact."""
        cols = []
        n = len(self.t)
        for name in CSV_COLUMNS:
            c = self.column(name)
            cols.append([""] * n if c is None else [repr(float(v)) for v in c])
        with open(path, "w", newline="") as fh:
            fh.write(f"# trajectory-format = 1\n")
            fh.write(f"# h = {self.h!r}\n")
            fh.write(f"# record_stride = {self.record_stride}\n")
            fh.write(f"# method = {self.method}\n")
            for line in extra_meta:
                fh.write(f"# {line}\n")
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for i in range(n):
                fh.write(",".join(col[i] for col in cols) + "\n")

    @staticmethod
    def from_csv(path):
        meta = {}
        data = {name: [] for name in CSV_COLUMNS}
        with open(path, newline="") as fh:
            header_seen = False
            for row in csv.reader(fh):
                if not row:
                    continue
                if row[0].lstrip().startswith("#"):
                    text = ",".join(row).lstrip()[1:].strip()
                    if "=" in text:
                        key, _, val = text.partition("=")
                        meta[key.strip()] = val.strip()
                    continue
                if not header_seen:
                    if tuple(v.strip() for v in row) != CSV_COLUMNS:
                        raise ValueError(f"unexpected trajectory header {row!r} in {path}")
                    header_seen = True
                    continue
                for name, cell in zip(CSV_COLUMNS, row):
                    data[name].append(float(cell) if cell != "" else math.nan)
        if not header_seen:
            raise ValueError(f"no trajectory header found in {path}")

        def col(name, optional=False):
            arr = np.array(data[name], dtype=float)
            if optional and np.all(np.isnan(arr)):
                return None
            return arr

        return Trajectory(
            t=col("t"),
            x1=col("x1"),
            x2=col("x2"),
            u=col("u"),
            rho=col("rho"),
            z=col("z", optional=True),
            xhat1=col("xhat1", optional=True),
            xhat2=col("xhat2", optional=True),
            h=float(meta.get("h", 0.0)),
            record_stride=int(meta.get("record_stride", 1)),
            method=meta.get("method", "euler"),
        )


def _initial_controller_state(controller, ctrl0):
    n = controller.state_len
    if ctrl0 is None:
        return [0.0] * n
    if hasattr(ctrl0, "z"):
        if n == 0:
            return []
        vals = [ctrl0.z]
        if controller.has_observer:
            vals += [ctrl0.xhat1 if ctrl0.xhat1 is not None else 0.0,
                     ctrl0.xhat2 if ctrl0.xhat2 is not None else 0.0]
        return [float(v) for v in vals]
    vals = [float(v) for v in ctrl0]
    if len(vals) != n:
        raise ValueError(f"controller expects {n} internal states, got {len(vals)}")
    return vals


def simulate(plant, controller, perturbation, x0, ctrl0, cfg: SimConfig) -> Trajectory:
    """Run the closed loop with fixed-step integration.

    plant must expose rhs(x1, x2, u, t, rho); the controller exposes
    output(x1, x2, s) and state_rates(x1, x2, s) over its internal state
    tuple s (integrator first, then observer estimates).  The control is
    sample-and-hold; controller internal states advance with the same
    integrator as the plant.  Raises SimulationDiverged as soon as the
    plant state goes non-finite.
    """
    h = cfg.h
    n = cfg.n_steps
    stride = cfg.record_stride
    x1, x2 = float(x0[0]), float(x0[1])
    s = _initial_controller_state(controller, ctrl0)
    n_rec = n // stride + 1

    t_rec = np.empty(n_rec)
    x1_rec = np.empty(n_rec)
    x2_rec = np.empty(n_rec)
    u_rec = np.empty(n_rec)
    rho_rec = np.empty(n_rec)
    z_rec = np.empty(n_rec) if controller.state_len >= 1 else None
    xh1_rec = np.empty(n_rec) if controller.has_observer else None
    xh2_rec = np.empty(n_rec) if controller.has_observer else None

    out = controller.output
    rates = controller.state_rates
    rhs = plant.rhs
    pval = perturbation.value
    isfinite = math.isfinite

    j = 0
    if cfg.method == "euler":
        for i in range(n + 1):
            t = i * h
            u = out(x1, x2, s)
            rho = pval(t)
            if i % stride == 0:
                t_rec[j] = t
                x1_rec[j] = x1
                x2_rec[j] = x2
                u_rec[j] = u
                rho_rec[j] = rho
                if z_rec is not None:
                    z_rec[j] = s[0]
                if xh1_rec is not None:
                    xh1_rec[j] = s[1]
                    xh2_rec[j] = s[2]
                j += 1
            if i == n:
                break
            d1, d2 = rhs(x1, x2, u, t, rho)
            ds = rates(x1, x2, s)
            x1 += h * d1
            x2 += h * d2
            for k in range(len(s)):
                s[k] += h * ds[k]
            if not (isfinite(x1) and isfinite(x2)):
                raise SimulationDiverged(i + 1, (i + 1) * h)
    else:
        for i in range(n + 1):
            t = i * h
            u = out(x1, x2, s)
            rho = pval(t)
            if i % stride == 0:
                t_rec[j] = t
                x1_rec[j] = x1
                x2_rec[j] = x2
                u_rec[j] = u
                rho_rec[j] = rho
                if z_rec is not None:
                    z_rec[j] = s[0]
                if xh1_rec is not None:
                    xh1_rec[j] = s[1]
                    xh2_rec[j] = s[2]
                j += 1
            if i == n:
                break

            def f(tt, y):
                d1, d2 = rhs(y[0], y[1], u, tt, pval(tt))
                return [d1, d2, *rates(y[0], y[1], y[2:])]

            y0 = [x1, x2, *s]
            k1 = f(t, y0)
            k2 = f(t + 0.5 * h, [a + 0.5 * h * b for a, b in zip(y0, k1)])
            k3 = f(t + 0.5 * h, [a + 0.5 * h * b for a, b in zip(y0, k2)])
            k4 = f(t + h, [a + h * b for a, b in zip(y0, k3)])
            y1 = [
                a + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                for a, b1, b2, b3, b4 in zip(y0, k1, k2, k3, k4)
            ]
            x1, x2 = y1[0], y1[1]
            s = y1[2:]
            if not (isfinite(x1) and isfinite(x2)):
                raise SimulationDiverged(i + 1, (i + 1) * h)

    return Trajectory(
        t=t_rec, x1=x1_rec, x2=x2_rec, u=u_rec, rho=rho_rec,
        z=z_rec, xhat1=xh1_rec, xhat2=xh2_rec,
        h=h, record_stride=stride, method=cfg.method,
    )


@dataclass(frozen=True)
class SettlingReport:
    """Settling time against a weighted-norm threshold plus steady-state
    sup norms over the settled window.  nu1 = sup|x1| / h^3 and
    nu2 = sup|x2| / h^2 are the discretization precision constants; they
    are None when the run never settles."""

    settle_time: float | None
    sup_x1: float
    sup_x2: float
    nu1: float | None
    nu2: float | None
    tol: float
    window_start: float

    @property
    def reached(self):
        return self.settle_time is not None


def settling_metrics(traj: Trajectory, tol=1e-2, weights: Weights | None = None,
                     window: float | None = None) -> SettlingReport:
    """First time the weighted norm of (x1, x2) stays below tol to the end.

    The steady-state window defaults to the last fifth of the horizon, but
    never starts before the settling time.  If the threshold never holds
    through the end the report comes back with settle_time=None and the
    sup norms taken over the default window for diagnosis.
    """
    if not tol > 0:
        raise ValueError(f"settling tolerance must be positive, got {tol}")
    w = weights if weights is not None else Weights((3.0, 2.0))
    norms = hom_norm(np.stack([traj.x1, traj.x2], axis=-1), w)
    t = traj.t
    span = float(t[-1] - t[0])
    win = float(window) if window is not None else 0.2 * span
    viol = norms > tol
    if viol[-1]:
        settle = None
    else:
        bad = np.nonzero(viol)[0]
        settle = float(t[0]) if len(bad) == 0 else float(t[bad[-1] + 1])
    start = float(t[-1]) - win
    if settle is not None:
        start = max(start, settle)
    mask = t >= start - 1e-12
    sup_x1 = float(np.max(np.abs(traj.x1[mask])))
    sup_x2 = float(np.max(np.abs(traj.x2[mask])))
    if settle is not None and traj.h > 0:
        nu1, nu2 = sup_x1 / traj.h ** 3, sup_x2 / traj.h ** 2
    else:
        nu1 = nu2 = None
    return SettlingReport(settle, sup_x1, sup_x2, nu1, nu2, float(tol), start)


@dataclass(frozen=True)
class PrecisionStudy:
    """Log-log fit of steady-state sup norms against the step size."""

    steps: tuple
    sup_x1: tuple
    sup_x2: tuple
    slope_x1: float
    slope_x2: float
    degenerate: bool


def validate_step_set(steps):
    """Validate a precision-study step list: at least three positive finite
    sizes spanning 1.5 decades.  Returns the steps as a float tuple."""
    steps = tuple(float(h) for h in steps)
    if len(steps) < 3:
        raise ValueError("need at least three step sizes for a slope fit")
    for h in steps:
        if not (h > 0 and math.isfinite(h)):
            raise ValueError(f"step sizes must be positive and finite, got {h}")
    if math.log10(max(steps) / min(steps)) < 1.5:
        raise ValueError("step sizes must span at least 1.5 decades")
    return steps


def precision_scaling_study(run_at, steps, settle_tol=1e-1,
                            weights: Weights | None = None) -> PrecisionStudy:
    """Measure how the steady-state residue shrinks with the step size.

    run_at(h) must return a settled Trajectory.  Requires at least three
    steps spanning 1.5 decades; a run that never settles invalidates the
    whole fit (StudyError).  If some sup norm is exactly zero the fit is
    degenerate and the slopes are reported as nan instead of inventing a
    number.

    The default settle tolerance is loose on purpose: the discretization
    residue this study measures is itself of order h in homogeneous norm
    (the quadratic-in-h velocity residue enters with weight 2), so at the
    coarsest steps it sits above the tolerance a converged run would
    satisfy; what must hold is only that the transient has died out, and
    the sup norms are then taken over the settled window.
    """
    steps = validate_step_set(steps)
    sup1, sup2 = [], []
    for h in steps:
        rep = settling_metrics(run_at(h), tol=settle_tol, weights=weights)
        if not rep.reached:
            raise StudyError(f"run at h={h:g} never settled below {settle_tol:g}; fit invalid")
        sup1.append(rep.sup_x1)
        sup2.append(rep.sup_x2)
    if min(sup1) == 0.0 or min(sup2) == 0.0:
        return PrecisionStudy(steps, tuple(sup1), tuple(sup2),
                              math.nan, math.nan, True)
    lh = np.log(steps)
    s1 = float(np.polyfit(lh, np.log(sup1), 1)[0])
    s2 = float(np.polyfit(lh, np.log(sup2), 1)[0])
    return PrecisionStudy(steps, tuple(sup1), tuple(sup2), s1, s2, False)


@dataclass(frozen=True)
class ChatteringReport:
    """Largest consecutive control jump and sign-flip rate over the window."""

    max_step_jump: float
    sign_flip_fraction: float
    window_start: float


def chattering_metric(traj: Trajectory, window: float | None = None) -> ChatteringReport:
    """Quantify control chattering over the settled window (default: last
    fifth of the horizon).  max_step_jump is max|u[i+1]-u[i]|; the flip
    fraction counts strict sign changes between consecutive samples."""
    t = traj.t
    span = float(t[-1] - t[0])
    win = float(window) if window is not None else 0.2 * span
    start = float(t[-1]) - win
    u = traj.u[t >= start - 1e-12]
    if len(u) < 2:
        raise ValueError("chattering window contains fewer than two samples")
    jumps = np.abs(np.diff(u))
    flips = int(np.count_nonzero(u[:-1] * u[1:] < 0.0))
    return ChatteringReport(float(np.max(jumps)), flips / (len(u) - 1), start)
