"""Benchmark plants, disturbance signals and the tracking transform.

Both benchmark plants are second order with a scalar force/torque input.
The NormalForm wrapper reduces either of them to the perturbed double
integrator the control laws are designed for: it cancels the known drift,
divides out the input gain and optionally feeds the reference acceleration
forward, all evaluated exactly, so the error coordinates see clean chain
dynamics with the declared disturbance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "DoubleIntegrator",
    "NormalForm",
    "Pendulum",
    "PendulumParams",
    "Perturbation",
    "ReferenceSignal",
    "double_integrator_rhs",
    "pendulum_rhs",
    "perturbation_eval",
    "to_normal_form",
]


@dataclass(frozen=True)
class PendulumParams:
    """Point-mass pendulum: mass m [kg], rod length l [m], gravity g [m/s^2]."""

    m: float = 1.1
    l: float = 1.0
    g: float = 9.815

    def __post_init__(self):
        for name in ("m", "l", "g"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"pendulum parameter {name} must be positive, got {v}")


def double_integrator_rhs(x, u, rho=0.0):
    """Chain of two integrators with matched disturbance: (x2, u + rho)."""
    return (x[1], u + rho)


def pendulum_rhs(x, u, params: PendulumParams, rho=0.0):
    """Frictionless pendulum, torque input u: (x2, -(g/l) sin x1 + u/(m l^2) + rho)."""
    return (
        x[1],
        -(params.g / params.l) * math.sin(x[0])
        + u / (params.m * params.l ** 2)
        + rho,
    )


class DoubleIntegrator:
    """Simulator-facing double integrator plant."""

    def rhs(self, x1, x2, u, t, rho):
        return (x2, u + rho)


class Pendulum:
    """Simulator-facing pendulum plant (raw torque input)."""

    def __init__(self, params: PendulumParams | None = None):
        self.params = params if params is not None else PendulumParams()

    @property
    def input_gain(self):
        return 1.0 / (self.params.m * self.params.l ** 2)

    def drift(self, x1, x2, t):
        return -(self.params.g / self.params.l) * math.sin(x1)

    def rhs(self, x1, x2, u, t, rho):
        return (x2, self.drift(x1, x2, t) + self.input_gain * u + rho)

    def normal_form(self, reference=None, feed_rddot=True):
        """Wrap this pendulum in the exact-cancellation tracking transform."""
        return to_normal_form(
            lambda x1, x2, u, t, rho: self.rhs(x1, x2, u, t, rho),
            self.drift,
            reference=reference,
            feed_rddot=feed_rddot,
            input_gain=self.input_gain,
        )


@dataclass(frozen=True)
class ReferenceSignal:
    """Twice-differentiable reference with its first two derivatives."""

    r: Callable
    r_dot: Callable
    r_ddot: Callable

    @staticmethod
    def zero():
        return ReferenceSignal(lambda t: 0.0, lambda t: 0.0, lambda t: 0.0)

    @staticmethod
    def sinusoid(amplitude, omega=1.0, phase=0.0):
        a, w, ph = float(amplitude), float(omega), float(phase)
        return ReferenceSignal(
            lambda t: a * math.sin(w * t + ph),
            lambda t: a * w * math.cos(w * t + ph),
            lambda t: -a * w * w * math.sin(w * t + ph),
        )


@dataclass(frozen=True)
class Perturbation:
    """Exogenous disturbance with a declared Lipschitz budget.

    The time derivative is carried analytically because the certificates
    need the exact slope, not a finite-difference estimate.  Tabulated
    signals are simulation-only: their derivative is reported as None and
    the declared budget is trusted.
    """

    kind: str
    lipschitz_L: float = 0.0
    level: float = 0.0
    amplitude: float = 0.0
    omega: float = 1.0
    phase: float = 0.0
    table_t: tuple = field(default=())
    table_v: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "sinusoid", "tabulated"):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if not (self.lipschitz_L >= 0 and math.isfinite(self.lipschitz_L)):
            raise ValueError(f"Lipschitz budget must be >= 0, got {self.lipschitz_L}")
        if self.kind == "sinusoid":
            slope = abs(self.amplitude * self.omega)
            if self.lipschitz_L < slope * (1.0 - 1e-12):
                raise ValueError(
                    f"sinusoid slope {slope} exceeds declared Lipschitz budget {self.lipschitz_L}"
                )
        if self.kind == "tabulated":
            if len(self.table_t) < 2 or len(self.table_t) != len(self.table_v):
                raise ValueError("tabulated perturbation needs matching t/value tables, length >= 2")
            if any(b <= a for a, b in zip(self.table_t, self.table_t[1:])):
                raise ValueError("tabulated time grid must be strictly increasing")

    @staticmethod
    def zero():
        return Perturbation(kind="zero")

    @staticmethod
    def constant(level, lipschitz=0.0):
        return Perturbation(kind="constant", level=float(level), lipschitz_L=float(lipschitz))

    @staticmethod
    def sinusoid(amplitude, omega=1.0, phase=0.0, lipschitz=None):
        a, w = float(amplitude), float(omega)
        L = abs(a * w) if lipschitz is None else float(lipschitz)
        return Perturbation(
            kind="sinusoid", amplitude=a, omega=w, phase=float(phase), lipschitz_L=L
        )

    @staticmethod
    def tabulated(t, values, lipschitz):
        return Perturbation(
            kind="tabulated",
            table_t=tuple(float(v) for v in t),
            table_v=tuple(float(v) for v in values),
            lipschitz_L=float(lipschitz),
        )

    def value(self, t):
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return self.level
        if self.kind == "sinusoid":
            return self.amplitude * math.sin(self.omega * t + self.phase)
        return float(np.interp(t, self.table_t, self.table_v))

    def derivative(self, t):
        """Analytic slope, or None when only samples are known."""
        if self.kind in ("zero", "constant"):
            return 0.0
        if self.kind == "sinusoid":
            return self.amplitude * self.omega * math.cos(self.omega * t + self.phase)
        return None


def perturbation_eval(p: Perturbation, t):
    """(value, derivative) at time t >= 0; derivative is None for tabulated data."""
    if t < 0:
        raise ValueError(f"perturbations are defined for t >= 0, got t={t}")
    return (p.value(t), p.derivative(t))


class NormalForm:
    """Error-coordinate double integrator wrapped around a plant.

    The dynamics exposed through rhs() are the normal form by construction:
    (z2, u + rho), minus the reference acceleration when it is not fed
    forward.  plant_input() converts a normal-form command into the raw
    plant input (drift cancellation, optional feedforward, division by the
    input gain); the original plant callable is kept on the instance so
    tests can drive the raw plant with plant_input() and confirm the two
    views produce the same trajectories.
    """

    def __init__(self, plant_rhs, known_f, reference=None, feed_rddot=True, input_gain=1.0):
        if input_gain == 0 or not math.isfinite(input_gain):
            raise ValueError(f"input gain must be nonzero and finite, got {input_gain}")
        self.plant_rhs = plant_rhs
        self.known_f = known_f
        self.reference = reference if reference is not None else ReferenceSignal.zero()
        self.feed_rddot = bool(feed_rddot)
        self.input_gain = float(input_gain)

    def rhs(self, x1, x2, u, t, rho):
        if self.feed_rddot:
            return (x2, u + rho)
        return (x2, u + rho - self.reference.r_ddot(t))

    def plant_input(self, xi1, xi2, t, u):
        """Raw plant input realizing the normal-form command u at plant state xi."""
        ff = self.reference.r_ddot(t) if self.feed_rddot else 0.0
        return (u - self.known_f(xi1, xi2, t) + ff) / self.input_gain

    def to_plant(self, z1, z2, t):
        return (z1 + self.reference.r(t), z2 + self.reference.r_dot(t))

    def from_plant(self, xi1, xi2, t):
        return (xi1 - self.reference.r(t), xi2 - self.reference.r_dot(t))


def to_normal_form(plant_rhs, known_f, reference=None, feed_rddot=True, input_gain=1.0):
    """Build the tracking / exact-cancellation transform around a plant.

    plant_rhs(x1, x2, u, t, rho) must equal
    (x2, known_f(x1, x2, t) + input_gain*u + rho); the returned object then
    behaves as a double integrator in the tracking-error coordinates
    z = (x1 - r, x2 - r_dot).  With feed_rddot=False the reference
    acceleration stays in the loop as an extra matched disturbance.
    """
    return NormalForm(plant_rhs, known_f, reference, feed_rddot, input_gain)
