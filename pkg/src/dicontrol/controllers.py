"""Control laws for the perturbed double integrator.

Three laws live here:

* state feedback with a discontinuous integral term: a continuous
  fractional-power feedback plus an integrator whose rate switches sign,
  so the integrator can track a Lipschitz disturbance exactly while the
  control signal itself stays continuous;
* the output-feedback variant, where the unmeasured velocity is replaced
  by a finite-time observer estimate;
* the twisting controller, a classical switching law kept as the
  chattering baseline.

Gain scaling: if x(t) solves the closed loop with gains (k1, k2, k3, k4)
under a disturbance of Lipschitz constant L, then lam*x(t) solves it with
the scaled gains from scale_gains and Lipschitz budget lam*L.  The scaling
is exact at the level of Euler trajectories, which the tests exploit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .homogeneous import signed_pow

__all__ = [
    "ConstantController",
    "ControllerState",
    "GainSet",
    "OutputFeedbackDIC",
    "StateFeedbackDIC",
    "TwistingController",
    "dic_control",
    "dic_integrator_rate",
    "observer_rate",
    "of_error_field",
    "of_observer_loop_field",
    "of_switching_distance",
    "scale_gains",
    "sf_error_field",
    "sf_switching_distance",
    "twisting_control",
]

_P13 = 1.0 / 3.0
_P23 = 2.0 / 3.0
_P12 = 0.5
_P32 = 1.5


@dataclass(frozen=True)
class GainSet:
    """Feedback gains; l1/l2 are only needed for output feedback.

    k1, k2 shape the continuous feedback, k3 is the integrator authority
    (it must exceed the disturbance slope for exact compensation), k4 tilts
    the switching argument and may take either sign.
    """

    k1: float
    k2: float
    k3: float
    k4: float = 0.0
    l1: float | None = None
    l2: float | None = None

    def __post_init__(self):
        for name in ("k1", "k2", "k3"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a positive finite number, got {v}")
        if not math.isfinite(self.k4):
            raise ValueError(f"k4 must be finite, got {self.k4}")
        if (self.l1 is None) != (self.l2 is None):
            raise ValueError("observer gains l1 and l2 must be given together")
        if self.l1 is not None:
            if not (self.l1 > 0 and math.isfinite(self.l1)):
                raise ValueError(f"l1 must be a positive finite number, got {self.l1}")
            if not (self.l2 > 0 and math.isfinite(self.l2)):
                raise ValueError(f"l2 must be a positive finite number, got {self.l2}")

    @property
    def has_observer(self):
        return self.l1 is not None


def dic_control(x1, x2_used, z, gains: GainSet):
    """u = -k1*signed_pow(x1, 1/3) - k2*signed_pow(x2, 1/2) + z.

    Continuous in all arguments; the discontinuity of the full law lives in
    the integrator rate, not here.  x2_used is whatever the law gets to see
    as velocity: the true x2 for state feedback, the observer estimate for
    output feedback.
    """
    return (
        -gains.k1 * signed_pow(x1, _P13)
        - gains.k2 * signed_pow(x2_used, _P12)
        + z
    )


def dic_integrator_rate(x1, x2_used, gains: GainSet):
    """dz/dt = -k3 * sgn(x1 + k4 * signed_pow(x2, 3/2)); the lone switch."""
    return -gains.k3 * signed_pow(x1 + gains.k4 * signed_pow(x2_used, _P32), 0.0)


def observer_rate(xhat, x1, gains: GainSet):
    """Finite-time velocity observer driven by the position error.

    The feedback terms copied into the second channel deliberately exclude
    the integrator state: that keeps the correction channel free of the
    disturbance estimate, so the estimation error obeys autonomous
    dynamics.
    """
    if not gains.has_observer:
        raise ValueError("observer_rate needs l1, l2 in the gain set")
    e1 = xhat[0] - x1
    d1 = -gains.l1 * signed_pow(e1, _P23) + xhat[1]
    d2 = (
        -gains.l2 * signed_pow(e1, _P13)
        - gains.k1 * signed_pow(x1, _P13)
        - gains.k2 * signed_pow(xhat[1], _P12)
    )
    return (d1, d2)


def twisting_control(x1, x2, k1, k2):
    """u = -k1*sgn(x1) - k2*sgn(x2); discontinuous on both axes."""
    return -k1 * signed_pow(x1, 0.0) - k2 * signed_pow(x2, 0.0)


def scale_gains(gains: GainSet, lam: float, with_observer: bool = False) -> GainSet:
    """Move along the gain family that maps trajectories to lam-scaled ones.

    Handles disturbances with Lipschitz budget lam*L when the original set
    handled L.  with_observer=True also scales l1, l2 so the observer error
    scales consistently.

    The k4 exponent comes from the switching argument: under y = lam*x,
    x1 + k4*|x2|^(3/2)*sgn(x2) = (y1 + lam^(-1/2)*k4*|y2|^(3/2)*sgn(y2))/lam,
    so the sign function is preserved exactly only with k4' = lam^(-1/2)*k4;
    the scaled trajectories then match step for step even under Euler.
    """
    if not (lam > 0 and math.isfinite(lam)):
        raise ValueError(f"scaling parameter must be positive and finite, got {lam}")
    l1, l2 = gains.l1, gains.l2
    if with_observer:
        if not gains.has_observer:
            raise ValueError("with_observer=True but the gain set has no observer gains")
        l1 = l1 * lam ** (1.0 / 3.0)
        l2 = l2 * lam ** (2.0 / 3.0)
    return GainSet(
        k1=gains.k1 * lam ** (2.0 / 3.0),
        k2=gains.k2 * lam ** 0.5,
        k3=gains.k3 * lam,
        k4=gains.k4 * lam ** -0.5,
        l1=l1,
        l2=l2,
    )


@dataclass(frozen=True)
class ControllerState:
    """Initial internal controller state: integrator plus observer estimates."""

    z: float = 0.0
    xhat1: float | None = None
    xhat2: float | None = None


class StateFeedbackDIC:
    """Full-state law: continuous feedback plus the switching integrator.

    Internal state: (z,).
    """

    state_len = 1
    has_observer = False

    def __init__(self, gains: GainSet):
        self.gains = gains

    def output(self, x1, x2, s):
        return dic_control(x1, x2, s[0], self.gains)

    def state_rates(self, x1, x2, s):
        return (dic_integrator_rate(x1, x2, self.gains),)


class OutputFeedbackDIC:
    """Position-only law: velocity comes from the finite-time observer.

    Internal state: (z, xhat1, xhat2).  Neither the control nor any
    internal rate reads the true velocity.
    """

    state_len = 3
    has_observer = True

    def __init__(self, gains: GainSet):
        if not gains.has_observer:
            raise ValueError("output feedback needs observer gains l1, l2")
        self.gains = gains

    def output(self, x1, x2, s):
        return dic_control(x1, s[2], s[0], self.gains)

    def state_rates(self, x1, x2, s):
        dz = dic_integrator_rate(x1, s[2], self.gains)
        d1, d2 = observer_rate((s[1], s[2]), x1, self.gains)
        return (dz, d1, d2)


class TwistingController:
    """Switching baseline; bounded, discontinuous control."""

    state_len = 0
    has_observer = False

    def __init__(self, k1, k2):
        if not (k1 > 0 and k2 > 0):
            raise ValueError("twisting gains must be positive")
        self.k1 = float(k1)
        self.k2 = float(k2)

    def output(self, x1, x2, s):
        return twisting_control(x1, x2, self.k1, self.k2)

    def state_rates(self, x1, x2, s):
        return ()


class ConstantController:
    """Fixed input; handy for open-loop checks."""

    state_len = 0
    has_observer = False

    def __init__(self, u=0.0):
        self.u = float(u)

    def output(self, x1, x2, s):
        return self.u

    def state_rates(self, x1, x2, s):
        return ()


def sf_error_field(gains: GainSet, rho_dot: float = 0.0):
    """Autonomous closed-loop field for (x1, x2, x3) under state feedback.

    x3 is the integrator mismatch (integrator state plus disturbance); the
    disturbance slope rho_dot enters only its rate.  With rho_dot = 0 the
    field is homogeneous of degree -1 under weights (3, 2, 1).  Accepts a
    single point or an (m, 3) batch.
    """
    k1, k2, k3, k4 = gains.k1, gains.k2, gains.k3, gains.k4

    def field(x):
        x = np.asarray(x, dtype=float)
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        d1 = x2
        d2 = -k1 * signed_pow(x1, _P13) - k2 * signed_pow(x2, _P12) + x3
        d3 = -k3 * np.sign(x1 + k4 * signed_pow(x2, _P32)) + rho_dot
        return np.stack([np.broadcast_to(d1, np.shape(d3)), d2, d3], axis=-1)

    return field


def of_error_field(gains: GainSet, rho_dot: float = 0.0):
    """Closed-loop field for (x1, x2, e1, e2, x3) under output feedback.

    e = estimate - true state.  With rho_dot = 0 the field is homogeneous
    of degree -1 under weights (3, 2, 3, 2, 1).
    """
    if not gains.has_observer:
        raise ValueError("output-feedback field needs observer gains l1, l2")
    k1, k2, k3, k4 = gains.k1, gains.k2, gains.k3, gains.k4
    l1, l2 = gains.l1, gains.l2

    def field(x):
        x = np.asarray(x, dtype=float)
        x1, x2, e1, e2, x3 = (x[..., i] for i in range(5))
        xh2 = x2 + e2
        d1 = x2
        d2 = -k1 * signed_pow(x1, _P13) - k2 * signed_pow(xh2, _P12) + x3
        d3 = -l1 * signed_pow(e1, _P23) + e2
        d4 = -l2 * signed_pow(e1, _P13) - x3
        d5 = -k3 * np.sign(x1 + k4 * signed_pow(xh2, _P32)) + rho_dot
        return np.stack([np.broadcast_to(d1, np.shape(d5)), d2, d3, d4, d5], axis=-1)

    return field


def of_observer_loop_field(gains: GainSet):
    """Unperturbed output-feedback loop without the integrator: (x1, x2, e1, e2).

    This is the system the output-feedback certificate is stated for; it is
    continuous (no switching term), homogeneous of degree -1 under weights
    (3, 2, 3, 2).
    """
    if not gains.has_observer:
        raise ValueError("output-feedback field needs observer gains l1, l2")
    k1, k2 = gains.k1, gains.k2
    l1, l2 = gains.l1, gains.l2

    def field(x):
        x = np.asarray(x, dtype=float)
        x1, x2, e1, e2 = (x[..., i] for i in range(4))
        d1 = x2
        d2 = -k1 * signed_pow(x1, _P13) - k2 * signed_pow(x2 + e2, _P12)
        d3 = -l1 * signed_pow(e1, _P23) + e2
        d4 = -l2 * signed_pow(e1, _P13)
        return np.stack([np.broadcast_to(d1, np.shape(d2)), d2, d3, d4], axis=-1)

    return field


def sf_switching_distance(gains: GainSet):
    """Homogeneous distance proxy to the state-feedback switching set.

    The switching argument x1 + k4*signed_pow(x2, 3/2) is homogeneous of
    degree 3, so the cube root of its magnitude scales like a distance near
    the unit sphere.
    """
    k4 = gains.k4

    def dist(pts):
        pts = np.asarray(pts, dtype=float)
        s = pts[..., 0] + k4 * signed_pow(pts[..., 1], _P32)
        return np.abs(s) ** (1.0 / 3.0)

    return dist


def of_switching_distance(gains: GainSet):
    """Same proxy for the output-feedback loop, where the argument sees the
    velocity estimate x2 + e2."""
    k4 = gains.k4

    def dist(pts):
        pts = np.asarray(pts, dtype=float)
        s = pts[..., 0] + k4 * signed_pow(pts[..., 1] + pts[..., 3], _P32)
        return np.abs(s) ** (1.0 / 3.0)

    return dist
