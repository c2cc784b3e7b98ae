"""Sampled Lyapunov certificates for the closed loops.

The state-feedback loop in (x1, x2, x3) coordinates (x3 = integrator state
plus disturbance) admits a smooth, homogeneous strict Lyapunov function
once the position is shifted to absorb the integrator mismatch.  Both it
and its output-feedback counterpart are certified numerically here: sample
the homogeneous unit sphere, evaluate V and its derivative along the flow
(worst case over the admissible disturbance slopes), and check min V > 0
and max Vdot < 0.  Homogeneity then extends the sphere check to the whole
space, and the contraction rate

    kappa = min over the sphere of (-Vdot / V**(4/5))

yields the finite settling bound T <= (5/kappa) * V(x0)**(1/5).

Everything is evaluated from analytic gradients dotted with the field, not
from transcribed derivative formulas; the grouped three-term split of the
derivative is kept only as a cross-check, and gradients are verified by
finite differences in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .controllers import (
    GainSet,
    of_observer_loop_field,
    scale_gains,
    sf_error_field,
    sf_switching_distance,
)
from .homogeneous import Weights, signed_pow, sphere_points

__all__ = [
    "CertificateReport",
    "OFCertParams",
    "SFCertParams",
    "cbrt_shift_defect",
    "certify_of",
    "certify_sf",
    "grad_v_sf",
    "mu_threshold",
    "search_parameters",
    "settling_bound",
    "sf_affine_components",
    "sphere_sample",
    "v_of",
    "v_sf",
    "vdot_of",
    "vdot_sf",
    "vdot_sf_parts",
]

SF_WEIGHTS = Weights((3.0, 2.0, 1.0))
OF_WEIGHTS = Weights((3.0, 2.0, 3.0, 2.0))

_P13 = 1.0 / 3.0
_P23 = 2.0 / 3.0
_P53 = 5.0 / 3.0
_P32 = 1.5
_P52 = 2.5


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dim:
        raise ValueError(f"expected points with {dim} coordinates, got shape {x.shape}")
    return x, x.ndim == 1


def _maybe_scalar(val, scalar):
    return float(val) if scalar else val


@dataclass(frozen=True)
class SFCertParams:
    """Certificate parameters for the state-feedback loop.

    gamma1 weighs the shifted-position term and must exceed
    (3/2)(k1/k2)^5, the Young threshold below which the cross term can
    defeat positive definiteness.  gamma12 is pinned to (5/2)(k1/k2)^3;
    with that choice the continuous feedback part of the derivative
    vanishes on no ray except the attracting one, so it is a derived
    quantity, not a free knob.  L is the admissible disturbance slope.

    lambda_scale describes certificates imported along the gain-scaling
    family: the loop with `gains` at slope budget L is the image, under the
    linear map x -> lambda*x (time unchanged), of the loop with
    scale_gains(gains, 1/lambda) at budget L/lambda.  The certificate
    function is the closed-form family member in that base chart composed
    with x -> x/lambda.  This matters because the closed-form family is
    not preserved by the map: a gain set reachable by scaling a certifiable
    one need not admit any direct family certificate, while the pulled-back
    function is rigorous and keeps the same contraction rate kappa (both
    sides run on the same clock).  lambda_scale = 1 is the plain direct
    certificate.
    """

    gains: GainSet
    L: float
    gamma1: float
    lambda_scale: float = 1.0

    def __post_init__(self):
        if not (self.L >= 0 and math.isfinite(self.L)):
            raise ValueError(f"disturbance slope budget must be >= 0, got {self.L}")
        if not (self.lambda_scale > 0 and math.isfinite(self.lambda_scale)):
            raise ValueError(f"lambda_scale must be positive and finite, got {self.lambda_scale}")
        g = self.base_gains
        lo = 1.5 * (g.k1 / g.k2) ** 5
        if not (self.gamma1 > lo):
            raise ValueError(f"gamma1 must exceed (3/2)(k1/k2)^5 = {lo:.6g}, got {self.gamma1}")

    @property
    def base_gains(self) -> GainSet:
        if self.lambda_scale == 1.0:
            return self.gains
        return scale_gains(self.gains, 1.0 / self.lambda_scale)

    @property
    def base_L(self) -> float:
        return self.L / self.lambda_scale

    @property
    def gamma12(self):
        g = self.base_gains
        return 2.5 * (g.k1 / g.k2) ** 3


def _shifted_position(x1, x3, k1):
    # the position coordinate that absorbs the integrator mismatch
    return x1 - signed_pow(x3, 3.0) / k1 ** 3


def v_sf(x, p: SFCertParams):
    """V = gamma1*|xi1|^(5/3) + gamma12*xi1*x2 + |x2|^(5/2) + |x3|^5 / 5,
    with xi1 = x1 - x3^3/k1^3, evaluated in the certificate's base chart
    (x is divided by lambda_scale first).  Homogeneous of degree 5 under
    (3, 2, 1); continuously differentiable everywhere."""
    x, scalar = _as_points(x, 3)
    if p.lambda_scale != 1.0:
        x = x / p.lambda_scale
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    xi1 = _shifted_position(x1, x3, p.base_gains.k1)
    val = (
        p.gamma1 * np.abs(xi1) ** _P53
        + p.gamma12 * xi1 * x2
        + np.abs(x2) ** _P52
        + 0.2 * np.abs(x3) ** 5
    )
    return _maybe_scalar(val, scalar)


def grad_v_sf(x, p: SFCertParams):
    """Analytic gradient of v_sf; checked against finite differences in the
    tests.  d/dz |z|^a = a*signed_pow(z, a-1) does all the work; the chain
    rule through the base-chart map contributes a 1/lambda_scale factor."""
    x, scalar = _as_points(x, 3)
    lam = p.lambda_scale
    if lam != 1.0:
        x = x / lam
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    k1 = p.base_gains.k1
    xi1 = _shifted_position(x1, x3, k1)
    d_xi = _P53 * p.gamma1 * signed_pow(xi1, _P23) + p.gamma12 * x2
    g1 = d_xi
    g2 = p.gamma12 * xi1 + _P52 * signed_pow(x2, _P32)
    g3 = -(3.0 / k1 ** 3) * x3 ** 2 * d_xi + signed_pow(x3, 4.0)
    out = np.stack([np.broadcast_to(g1, np.shape(g3)), g2, g3], axis=-1)
    if lam != 1.0:
        out = out / lam
    return out if not scalar else np.asarray(out, dtype=float)


def _switch_argument(x, gains):
    x = np.asarray(x, dtype=float)
    return x[..., 0] + gains.k4 * signed_pow(x[..., 1], _P32)


def vdot_sf(x, p: SFCertParams, rho_dot=0.0):
    """Derivative of v_sf along the closed loop at disturbance slope rho_dot.

    Affine in rho_dot (only the x3 rate sees it), so worst cases sit at
    rho_dot = +/-L.  Points on the switching set are rejected: the flow
    direction is set-valued there and a single number would be a lie.
    """
    if abs(rho_dot) > p.L + 1e-15:
        raise ValueError(f"|rho_dot|={abs(rho_dot)} exceeds the declared budget L={p.L}")
    x, scalar = _as_points(x, 3)
    if np.any(_switch_argument(x, p.gains) == 0.0):
        raise ValueError("Vdot is set-valued on the switching set; evaluate off it")
    grad = grad_v_sf(x, p)
    f = sf_error_field(p.gains, rho_dot)(x)
    val = np.sum(grad * f, axis=-1)
    return _maybe_scalar(val, scalar)


def cbrt_shift_defect(a, b_cubed_scaled, k1):
    """Subadditivity defect of the cube root around the integrator shift:
    signed_pow(a + c, 1/3) - signed_pow(c, 1/3) - signed_pow(a, 1/3)
    with c = b_cubed_scaled^3 / k1^3.  Vanishes whenever either argument
    does; it is what couples the shifted position to the integrator."""
    c = signed_pow(b_cubed_scaled, 3.0) / k1 ** 3
    return signed_pow(a + c, _P13) - signed_pow(c, _P13) - signed_pow(a, _P13)


def vdot_sf_parts(x, p: SFCertParams, rho_dot=0.0):
    """Three-way grouping of vdot_sf: (continuous feedback part, cube-root
    shift defect part, integrator/disturbance part).

    Useful as a diagnostic because the parts have signs one can reason
    about separately; their sum must agree with vdot_sf to float rounding,
    which the tests enforce.  The grouping lives in the base chart, so the
    point and the disturbance slope are mapped there first; the sum then
    equals the pulled-back derivative because both loops share one clock.
    """
    x, scalar = _as_points(x, 3)
    if p.lambda_scale != 1.0:
        x = x / p.lambda_scale
        rho_dot = rho_dot / p.lambda_scale
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    g = p.base_gains
    k1, k2, k3 = g.k1, g.k2, g.k3
    xi1 = _shifted_position(x1, x3, k1)
    d_xi = _P53 * p.gamma1 * signed_pow(xi1, _P23) + p.gamma12 * x2
    g2 = p.gamma12 * xi1 + _P52 * signed_pow(x2, _P32)

    w1 = d_xi * x2 - _P52 * k2 * (0.4 * p.gamma12 * xi1 + signed_pow(x2, _P32)) * (
        (k1 / k2) * signed_pow(xi1, _P13) + signed_pow(x2, 0.5)
    )
    w2 = -k1 * g2 * cbrt_shift_defect(xi1, x3, k1)
    sw = np.sign(_switch_argument(x, g))
    w3 = (k3 * sw - rho_dot) * x3 ** 2 * ((3.0 / k1 ** 3) * d_xi - signed_pow(x3, 2.0))
    if scalar:
        return float(w1), float(w2), float(w3)
    return w1, w2, w3


@dataclass(frozen=True)
class OFCertParams:
    """Certificate parameters for the output-feedback loop (no integrator):
    V = V1(x) + mu*V2(e) with V1 the state part (weight gamma1), V2 the
    observer-error part (weight gamma2 on the velocity error term) and mu
    the balance between them."""

    gains: GainSet
    gamma1: float
    gamma2: float
    mu: float

    def __post_init__(self):
        if not self.gains.has_observer:
            raise ValueError("output-feedback certificate needs observer gains l1, l2")
        for name in ("gamma1", "gamma2", "mu"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive, got {v}")

    @property
    def gamma12(self):
        return 2.5 * (self.gains.k1 / self.gains.k2) ** 3


def _of_eval(x, e, gains, gamma1, gamma2):
    """Per-point pieces (V1, V2, V1dot, V2dot) of the output-feedback
    certificate; V = V1 + mu*V2 and Vdot = V1dot + mu*V2dot are affine in
    mu, so parameter sweeps reuse one evaluation."""
    k1, k2 = gains.k1, gains.k2
    l1, l2 = gains.l1, gains.l2
    gamma12 = 2.5 * (k1 / k2) ** 3
    x1, x2 = x[..., 0], x[..., 1]
    e1, e2 = e[..., 0], e[..., 1]

    v1 = gamma1 * np.abs(x1) ** _P53 + gamma12 * x1 * x2 + np.abs(x2) ** _P52
    eps1 = e1 - signed_pow(e2, _P32) / l1 ** _P32
    v2 = np.abs(eps1) ** _P53 + gamma2 * np.abs(e2) ** _P52

    gx1 = _P53 * gamma1 * signed_pow(x1, _P23) + gamma12 * x2
    gx2 = gamma12 * x1 + _P52 * signed_pow(x2, _P32)
    ge1 = _P53 * signed_pow(eps1, _P23)
    ge2 = -_P52 / l1 ** _P32 * signed_pow(eps1, _P23) * np.abs(e2) ** 0.5 \
        + _P52 * gamma2 * signed_pow(e2, _P32)

    f1 = x2
    f2 = -k1 * signed_pow(x1, _P13) - k2 * signed_pow(x2 + e2, 0.5)
    f3 = -l1 * signed_pow(e1, _P23) + e2
    f4 = -l2 * signed_pow(e1, _P13)

    v1dot = gx1 * f1 + gx2 * f2
    v2dot = ge1 * f3 + ge2 * f4
    return v1, v2, v1dot, v2dot


def v_of(x, e, p: OFCertParams):
    """Output-feedback certificate value at state x = (x1, x2) and observer
    error e = (e1, e2)."""
    x, sx = _as_points(x, 2)
    e, se = _as_points(e, 2)
    v1, v2, _, _ = _of_eval(x, e, p.gains, p.gamma1, p.gamma2)
    return _maybe_scalar(v1 + p.mu * v2, sx and se)


def vdot_of(x, e, p: OFCertParams):
    """Derivative of v_of along the unperturbed output-feedback loop
    (analytic gradients dotted with the field; the loop is continuous, so
    no points need excluding)."""
    x, sx = _as_points(x, 2)
    e, se = _as_points(e, 2)
    _, _, v1dot, v2dot = _of_eval(x, e, p.gains, p.gamma1, p.gamma2)
    return _maybe_scalar(v1dot + p.mu * v2dot, sx and se)


def sphere_sample(w: Weights, n: int, exclusions=(), seed=0):
    """n independent draws on the homogeneous unit sphere plus their
    mirror images (2n points total), excluding declared discontinuity
    sets.  Deterministic for a fixed seed."""
    return sphere_points(w, n, rng=seed, exclusions=exclusions, antithetic=True)


@dataclass
class CertificateReport:
    """Outcome of a sampled certificate check.

    kappa is the sphere minimum of -Vdot / V^(4/5) (worst admissible
    disturbance slope included); settling_bound_at maps an initial state to
    the resulting finite settling bound.  constants carries empirically
    measured sphere extrema for the output-feedback case.  samples is the
    number of sphere points actually evaluated (0 for gate failures).
    """

    kind: str
    passed: bool
    reason: str
    min_v_on_sphere: float
    max_vdot_on_sphere: float
    kappa: float
    samples: int
    n: int
    seed: int
    params: dict
    constants: dict = dc_field(default_factory=dict)
    settling_bound_at: object = None

    def summary(self):
        lines = [
            f"certificate: {self.kind}",
            f"passed: {'yes' if self.passed else 'no'} ({self.reason})",
            f"sphere samples: {self.samples} (n = {self.n}, seed = {self.seed})",
            f"min V on sphere: {self.min_v_on_sphere:.6g}",
            f"max Vdot on sphere: {self.max_vdot_on_sphere:.6g}",
            f"kappa: {self.kappa:.6g}",
        ]
        for k, v in self.params.items():
            lines.append(f"param {k}: {v:.10g}" if isinstance(v, float) else f"param {k}: {v}")
        for k, v in self.constants.items():
            lines.append(f"measured {k}: {v:.6g}")
        return "\n".join(lines)

    def record(self):
        """Machine-readable form in the same sectioned key = value family
        as the run configs."""
        out = ["[certificate]"]
        out.append(f"kind = {self.kind}")
        out.append(f"passed = {'true' if self.passed else 'false'}")
        out.append(f"reason = {self.reason}")
        out.append(f"min_v_on_sphere = {self.min_v_on_sphere!r}")
        out.append(f"max_vdot_on_sphere = {self.max_vdot_on_sphere!r}")
        out.append(f"kappa = {self.kappa!r}")
        out.append(f"samples = {self.samples}")
        out.append(f"n = {self.n}")
        out.append(f"seed = {self.seed}")
        out.append("")
        out.append("[certificate.params]")
        for k, v in self.params.items():
            out.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
        if self.constants:
            out.append("")
            out.append("[certificate.constants]")
            for k, v in self.constants.items():
                out.append(f"{k} = {v!r}")
        return "\n".join(out) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.record())


def _gate_report(kind, reason, n, seed, params):
    return CertificateReport(
        kind=kind, passed=False, reason=reason,
        min_v_on_sphere=math.nan, max_vdot_on_sphere=math.nan, kappa=math.nan,
        samples=0, n=n, seed=seed, params=params,
    )


def certify_sf(gains: GainSet, L: float, gamma1: float, n: int = 100_000, seed: int = 0,
               lambda_scale: float = 1.0) -> CertificateReport:
    """Sampled strictness check for the state-feedback certificate.

    Fails immediately (zero sphere evaluations) when k3 <= L: the
    integrator cannot out-slew the disturbance, no parameter choice can
    rescue that.  Otherwise checks min V > 0 and max Vdot < 0 over sampled
    sphere points with the disturbance slope at its admissible worst,
    points within 1e-6 homogeneous distance of the switching set excluded.

    With lambda_scale != 1 the certificate is the scaling-family import
    described on SFCertParams; the sphere is then sampled in the base
    chart, where the closed-form function lives.  Extrema are reported for
    that chart's unit sphere (sphere values in the two charts differ only
    by fixed powers of lambda_scale; signs, verdicts, and kappa do not).
    """
    params = {
        "k1": gains.k1, "k2": gains.k2, "k3": gains.k3, "k4": gains.k4,
        "L": float(L), "gamma1": float(gamma1), "lambda_scale": float(lambda_scale),
    }
    if gains.k3 <= L:
        return _gate_report(
            "state-feedback", f"k3 = {gains.k3:g} <= L = {L:g}: integrator cannot track the disturbance",
            n, seed, params)
    p = SFCertParams(gains=gains, L=float(L), gamma1=float(gamma1), lambda_scale=float(lambda_scale))
    gb, lb = p.base_gains, p.base_L
    p0 = SFCertParams(gains=gb, L=lb, gamma1=float(gamma1))
    pts = sphere_sample(SF_WEIGHTS, n, exclusions=(sf_switching_distance(gb),), seed=seed)
    v = v_sf(pts, p0)
    grad = grad_v_sf(pts, p0)
    f0 = sf_error_field(gb, 0.0)(pts)
    vdot_nominal = np.sum(grad * f0, axis=-1)
    vdot_worst = vdot_nominal + lb * np.abs(grad[..., 2])

    min_v = float(np.min(v))
    max_vdot = float(np.max(vdot_worst))
    passed = min_v > 0.0 and max_vdot < 0.0
    kappa = float(np.min(-vdot_worst / v ** 0.8)) if passed else math.nan
    reason = "min V > 0 and max Vdot < 0 on the sampled sphere" if passed else \
        ("V not positive on the sampled sphere" if min_v <= 0.0 else "Vdot not negative on the sampled sphere")

    report = CertificateReport(
        kind="state-feedback", passed=passed, reason=reason,
        min_v_on_sphere=min_v, max_vdot_on_sphere=max_vdot, kappa=kappa,
        samples=len(pts), n=n, seed=seed, params=params,
    )
    if passed:
        report.settling_bound_at = lambda x0: settling_bound(v_sf(x0, p), kappa)
    return report


def settling_bound(v0: float, kappa: float) -> float:
    """Finite settling bound T = (5/kappa) * v0^(1/5) implied by the
    contraction Vdot <= -kappa * V^(4/5)."""
    if not kappa > 0:
        raise ValueError(f"contraction rate must be positive, got kappa={kappa}")
    if v0 < 0:
        raise ValueError(f"Lyapunov value must be >= 0, got {v0}")
    return (5.0 / kappa) * v0 ** 0.2


def certify_of(gains: GainSet, p: OFCertParams, n: int = 100_000, seed: int = 0) -> CertificateReport:
    """Sampled strictness check for the output-feedback certificate on the
    4-dimensional (x1, x2, e1, e2) sphere.

    Also measures, as sphere extrema, the constants of the dissipation
    inequality the composite design rests on: alpha1 (state decay with a
    clean velocity channel), alpha3 (observer-error decay), alpha2 and
    c_holder (size of the cross coupling through the velocity mismatch).
    """
    params = {
        "k1": gains.k1, "k2": gains.k2, "l1": gains.l1, "l2": gains.l2,
        "gamma1": p.gamma1, "gamma2": p.gamma2, "mu": p.mu,
    }
    pts = sphere_sample(OF_WEIGHTS, n, seed=seed)
    x = pts[..., :2]
    e = pts[..., 2:]
    v1, v2, v1dot, v2dot = _of_eval(x, e, gains, p.gamma1, p.gamma2)
    v = v1 + p.mu * v2
    vdot = v1dot + p.mu * v2dot
    min_v = float(np.min(v))
    max_vdot = float(np.max(vdot))
    passed = min_v > 0.0 and max_vdot < 0.0
    kappa = float(np.min(-vdot / v ** 0.8)) if passed else math.nan
    reason = "min V > 0 and max Vdot < 0 on the sampled sphere" if passed else \
        ("V not positive on the sampled sphere" if min_v <= 0.0 else "Vdot not negative on the sampled sphere")

    n_aux = min(n, 20_000)
    xw = Weights((3.0, 2.0))
    xs = sphere_points(xw, n_aux, rng=seed + 1, antithetic=True)
    zeros = np.zeros_like(xs)
    _, _, v1dot_slice, _ = _of_eval(xs, zeros, gains, p.gamma1, p.gamma2)
    alpha1 = float(np.min(-v1dot_slice))
    alpha2 = float(np.max(np.abs(
        2.5 * ((gains.k1 / gains.k2) ** 3 * xs[..., 0] + signed_pow(xs[..., 1], _P32)))))
    es = sphere_points(xw, n_aux, rng=seed + 2, antithetic=True)
    _, _, _, v2dot_slice = _of_eval(zeros, es, gains, p.gamma1, p.gamma2)
    alpha3 = float(np.min(-v2dot_slice))
    pair = sphere_points(Weights((2.0, 2.0)), n_aux, rng=seed + 3, antithetic=True)
    x2s, e2s = pair[..., 0], pair[..., 1]
    omega = gains.k2 * (signed_pow(x2s, 0.5) - signed_pow(x2s + e2s, 0.5))
    ok = np.abs(e2s) > 0
    c_holder = float(np.max(np.abs(omega[ok]) / (gains.k2 * np.abs(e2s[ok]) ** 0.5)))

    report = CertificateReport(
        kind="output-feedback", passed=passed, reason=reason,
        min_v_on_sphere=min_v, max_vdot_on_sphere=max_vdot, kappa=kappa,
        samples=len(pts), n=n, seed=seed, params=params,
        constants={"alpha1": alpha1, "alpha2": alpha2, "alpha3": alpha3, "c_holder": c_holder},
    )
    if passed:
        report.settling_bound_at = lambda x0, e0: settling_bound(v_of(x0, e0, p), kappa)
    return report


def mu_threshold(gains: GainSet, gamma1: float, gamma2: float, n: int = 20_000, seed: int = 0,
                 mu_lo: float = 1e-3, mu_hi: float = 1e6, bisect_rounds: int = 40):
    """Smallest balance weight mu for which the output-feedback certificate
    passes, or (None, diagnostic report) when none does in [mu_lo, mu_hi].

    V and Vdot are affine in mu, so one sphere evaluation serves the whole
    sweep; passing is monotone in mu above the threshold whenever the
    error-part derivative is nonpositive everywhere sampled.
    """
    pts = sphere_sample(OF_WEIGHTS, n, seed=seed)
    x, e = pts[..., :2], pts[..., 2:]
    v1, v2, v1dot, v2dot = _of_eval(x, e, gains, gamma1, gamma2)

    def passes(mu):
        v = v1 + mu * v2
        vd = v1dot + mu * v2dot
        return float(np.min(v)) > 0.0 and float(np.max(vd)) < 0.0

    if not passes(mu_hi):
        p = OFCertParams(gains=gains, gamma1=gamma1, gamma2=gamma2, mu=mu_hi)
        return None, certify_of(gains, p, n=n, seed=seed)
    if passes(mu_lo):
        mu_star = mu_lo
    else:
        lo, hi = mu_lo, mu_hi
        for _ in range(bisect_rounds):
            mid = math.sqrt(lo * hi)
            if passes(mid):
                hi = mid
            else:
                lo = mid
        mu_star = hi
    p = OFCertParams(gains=gains, gamma1=gamma1, gamma2=gamma2, mu=mu_star)
    return mu_star, certify_of(gains, p, n=n, seed=seed)


def sf_affine_components(x, gains: GainSet, gamma1: float):
    """Pointwise decomposition vdot = A + k3*C + rho_dot-worst-case L*D.

    A is the gradient dotted with the continuous part of the field (k3
    zeroed), C = -sgn(switching argument) * dV/dx3 collects the relay
    contribution per unit k3, and D = |dV/dx3| the worst admissible
    disturbance slope per unit L.  The value of gains.k3 is irrelevant
    here; it re-enters only through the affine combination.  Returns
    (A, C, D, V).

    This is what makes the parameter search cheap: for a fixed sphere
    sample and gamma1, negativity of the derivative for every (k3, L) pair
    is a family of linear inequalities, so the feasible k3 interval and
    the largest certifiable L come from mins and maxes of ratios instead
    of fresh sphere sweeps.
    """
    x, _ = _as_points(x, 3)
    p = SFCertParams(gains=gains, L=0.0, gamma1=float(gamma1))
    grad = grad_v_sf(x, p)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    g = gains
    a = grad[..., 0] * x2 + grad[..., 1] * (
        -g.k1 * signed_pow(x1, _P13) - g.k2 * signed_pow(x2, 0.5) + x3)
    c = -np.sign(_switch_argument(x, g)) * grad[..., 2]
    d = np.abs(grad[..., 2])
    return a, c, d, v_sf(x, p)


def _best_single_chart_design(gains: GainSet, n: int, seed: int, gamma1_grid_size: int,
                              k3_grid_size: int, budget_left, target_certified_l: float,
                              margin: float):
    """Best (gamma1, k3, L*) for fixed (k1, k2, k4) on one sphere sample.

    Sweeps a geometric gamma1 ladder anchored at the positive-definiteness
    floor; for each gamma1 the admissible k3 interval and the largest
    certifiable slope budget follow from the affine decomposition.  Stops
    early when a design already certifies target_certified_l with the
    requested margin (the caller re-checks it at full sample count).
    Consumes one unit of budget per gamma1 evaluated.
    """
    pts = sphere_sample(SF_WEIGHTS, n, exclusions=(sf_switching_distance(gains),), seed=seed)
    floor = 1.5 * (gains.k1 / gains.k2) ** 5
    best = None
    for gamma1 in floor * np.geomspace(1.05, 2000.0, gamma1_grid_size):
        if budget_left[0] <= 0:
            break
        budget_left[0] -= 1
        a, c, d, v = sf_affine_components(pts, gains, gamma1)
        if float(np.min(v)) <= 0.0:
            continue
        pos, neg = c > 0, c < 0
        k3_hi = float(np.min(-a[pos] / c[pos])) if pos.any() else math.inf
        k3_lo = max(float(np.max(-a[neg] / c[neg])) if neg.any() else 0.0, 0.0)
        if not (math.isfinite(k3_hi) and k3_hi > k3_lo):
            continue
        for k3 in np.geomspace(max(k3_lo, k3_hi * 1e-4), k3_hi, k3_grid_size)[1:-1]:
            relay = a + k3 * c
            if float(np.max(relay)) >= 0.0:
                continue
            l_star = float(np.min(-relay / d))
            if l_star <= 0.0:
                continue
            cand = (l_star, float(gamma1), float(k3))
            if best is None or cand[0] > best[0]:
                best = cand
        if best is not None and margin * best[0] >= target_certified_l:
            break
    return best


def search_parameters(gains: GainSet, L: float, budget: int = 256, n: int = 20_000,
                      seed: int = 0, k2_multipliers=(1.0, 0.5, 0.4, 0.3, 0.25, 2.0),
                      final_n: int = 100_000, margin: float = 0.5):
    """Search for a certified state-feedback parameter set at slope budget L.

    Returns (SFCertParams, CertificateReport) on success and (None, best
    diagnostic report) on failure; an infeasible request (k3 < L) fails
    immediately with zero sphere evaluations.

    The sweep walks a geometric gamma1 ladder and, through the affine
    decomposition of the derivative, the whole k3 axis, for each of a few
    k2 multipliers around the requested gain ratio.  Designs are compared
    by the largest slope budget they certify with a safety margin.  When
    the best design's margin-backed budget L' still falls short of L, the
    result is moved along the gain-scaling family: scale_gains with
    lambda = L/L' yields a gain set whose loop is the lambda-image of the
    certified one and therefore inherits its certificate (see
    SFCertParams.lambda_scale) for slope budgets up to lambda*L' = L.  The
    chosen design is always re-verified at final_n samples before being
    returned, and kappa is preserved exactly by the move.

    budget caps the number of sphere-sweep evaluations (one per gamma1
    value examined, plus one per full verification).
    """
    base_params = {"k1": gains.k1, "k2": gains.k2, "k3": gains.k3, "k4": gains.k4, "L": float(L)}
    if budget < 1:
        raise ValueError(f"search budget must be >= 1, got {budget}")
    if gains.k3 < L:
        return None, _gate_report(
            "state-feedback", f"k3 = {gains.k3:g} < L = {L:g}: integrator cannot track the disturbance",
            0, seed, base_params)

    budget_left = [int(budget)]
    candidates = []
    for m2 in k2_multipliers:
        if budget_left[0] <= 0:
            break
        g = GainSet(k1=gains.k1, k2=gains.k2 * m2, k3=gains.k3, k4=gains.k4,
                    l1=gains.l1, l2=gains.l2)
        best = _best_single_chart_design(
            g, n=n, seed=seed, gamma1_grid_size=24, k3_grid_size=25,
            budget_left=budget_left, target_certified_l=float(L), margin=margin)
        if best is not None:
            l_star, gamma1, k3 = best
            candidates.append((l_star, gamma1, k3, g))
            if margin * l_star >= L:
                break

    failure = None
    for l_star, gamma1, k3, g in sorted(candidates, key=lambda c: -c[0]):
        if budget_left[0] <= 0:
            break
        certified_l = margin * l_star
        base = GainSet(k1=g.k1, k2=g.k2, k3=k3, k4=g.k4, l1=g.l1, l2=g.l2)
        if certified_l >= L:
            lam = 1.0
            final_gains = base
        else:
            lam = L / certified_l
            final_gains = scale_gains(base, lam, with_observer=base.has_observer)
        budget_left[0] -= 1
        report = certify_sf(final_gains, L, gamma1, n=final_n, seed=seed, lambda_scale=lam)
        if report.passed:
            params = SFCertParams(gains=final_gains, L=float(L), gamma1=gamma1, lambda_scale=lam)
            return params, report
        if failure is None:
            failure = report

    if failure is not None:
        return None, failure
    if candidates:
        l_star, gamma1, k3, g = max(candidates, key=lambda c: c[0])
        return None, _gate_report(
            "state-feedback",
            f"search budget exhausted; best margin-backed slope budget {margin * l_star:g} < {L:g}",
            0, seed, base_params | {"gamma1": gamma1, "k3_best": k3})
    if budget_left[0] <= 0:
        return None, _gate_report(
            "state-feedback", "search budget exhausted before any feasible design was found",
            0, seed, base_params)
    diag_gamma1 = 3.0 * (gains.k1 / gains.k2) ** 5
    diag = certify_sf(gains, L, diag_gamma1, n=n, seed=seed)
    return None, diag
