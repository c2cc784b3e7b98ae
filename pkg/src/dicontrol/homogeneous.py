"""Signed-power algebra, anisotropic dilations and homogeneous norms.

Finite-time stabilizers built from fractional signed powers are invariant
under the weighted scaling x_i -> eps**r_i * x_i instead of the ordinary
scalar multiple.  This module collects the pieces everything else leans on:
the signed power itself, dilations and the homogeneous norm for a given
weight vector, quasi-uniform sampling of the homogeneous unit sphere, and a
numerical homogeneity checker for vector fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "EXCLUSION_RADIUS",
    "HomogeneityReport",
    "Weights",
    "check_field_homogeneity",
    "dilation",
    "hom_norm",
    "signed_pow",
    "sphere_points",
]

# points closer than this (homogeneous distance) to a declared discontinuity
# set are never used as sphere samples
EXCLUSION_RADIUS = 1e-6

_NORM_FLOOR = 1e-12


def signed_pow(z, p):
    """Signed power |z|**p * sgn(z), with sgn(0) = 0.

    p = 0 gives the sign function (zero at zero).  Odd roots of negative
    numbers come out real: signed_pow(-8, 1/3) == -2.  Works on floats and
    numpy arrays.  Negative exponents are rejected; no control law here
    needs them and a negative p is invariably a gain-placement bug.
    """
    if p < 0:
        raise ValueError(f"signed_pow requires p >= 0, got p={p}")
    if isinstance(z, np.ndarray):
        return np.abs(z) ** p * np.sign(z)
    z = float(z)
    try:
        if z > 0.0:
            return z ** p
        if z < 0.0:
            return -((-z) ** p)
    except OverflowError:
        # scalar pow raises where the array path saturates; keep the two
        # paths in agreement so divergence checks see inf either way
        return math.copysign(math.inf, z)
    return 0.0


@dataclass(frozen=True)
class Weights:
    """Dilation weights r (one positive entry per coordinate) and the norm
    exponent p used by hom_norm."""

    r: tuple
    p: float = 6.0

    def __post_init__(self):
        object.__setattr__(self, "r", tuple(float(ri) for ri in self.r))
        object.__setattr__(self, "p", float(self.p))
        if len(self.r) == 0:
            raise ValueError("weights need at least one coordinate")
        if any(not (ri > 0 and math.isfinite(ri)) for ri in self.r):
            raise ValueError(f"dilation weights must be positive, got {self.r}")
        if not (self.p >= 1 and math.isfinite(self.p)):
            raise ValueError(f"norm exponent must satisfy p >= 1, got {self.p}")

    @property
    def dim(self):
        return len(self.r)


def dilation(x, w: Weights, eps: float):
    """Apply the anisotropic scaling x_i -> eps**r_i * x_i."""
    if not eps > 0:
        raise ValueError(f"dilation scale must be positive, got eps={eps}")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != w.dim:
        raise ValueError(
            f"dimension mismatch: point has {x.shape[-1]} coordinates, weights have {w.dim}"
        )
    factors = np.array([eps ** ri for ri in w.r])
    return x * factors


def hom_norm(x, w: Weights):
    """Homogeneous norm (sum_i |x_i|**(p/r_i))**(1/p).

    Positive definite and exactly 1-homogeneous under `dilation`:
    hom_norm(dilation(x, w, eps)) = eps * hom_norm(x).  Accepts a single
    point or an (m, dim) batch.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != w.dim:
        raise ValueError(
            f"dimension mismatch: point has {x.shape[-1]} coordinates, weights have {w.dim}"
        )
    exps = np.array([w.p / ri for ri in w.r])
    total = np.sum(np.abs(x) ** exps, axis=-1)
    out = total ** (1.0 / w.p)
    return float(out) if np.ndim(out) == 0 else out


def _radial_project(raw, w: Weights):
    """Push points onto {hom_norm = 1} along their dilation rays.

    The radial equation hom_norm(dilation(y, w, s)) = 1 has the closed-form
    root s = 1/hom_norm(y); a couple of fixed-point polish passes soak up
    the float rounding of the fractional powers.
    """
    pts = np.array(raw, dtype=float)
    rexp = np.array(w.r)
    for _ in range(4):
        norms = hom_norm(pts, w)
        if np.max(np.abs(norms - 1.0)) <= 1e-14:
            break
        pts = pts * (1.0 / norms)[..., None] ** rexp
    return pts


def sphere_points(w: Weights, n: int, rng=None, exclusions=(), antithetic=False):
    """Sample n quasi-uniform points on the homogeneous unit sphere.

    Directions mix standard-normal draws with log-uniform coordinate
    magnitudes (the latter cover the near-axis region where a wrong degree
    hides), then each draw is projected onto the sphere along its dilation
    ray.  With antithetic=True the mirror image -x is appended for every
    point, so 2n points come back; the fields of interest are odd, and the
    symmetric cloud halves the sampling variance.

    exclusions: callables mapping an (m, dim) array to per-point
    homogeneous distances from a discontinuity set; points closer than
    EXCLUSION_RADIUS are redrawn.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 sphere points, got {n}")
    rng = np.random.default_rng(rng)
    dim = w.dim
    chunks = []
    got = 0
    rounds = 0
    while got < n:
        rounds += 1
        if rounds > 64:
            raise RuntimeError("sphere sampling kept hitting exclusion zones; sets too large?")
        m = max(n - got, 16)
        half = m // 2
        gauss = rng.standard_normal((m - half, dim))
        mags = 10.0 ** rng.uniform(-3.0, 0.0, size=(half, dim))
        signs = rng.integers(0, 2, size=(half, dim)) * 2.0 - 1.0
        raw = np.vstack([gauss, mags * signs])
        norms = hom_norm(raw, w)
        raw = raw[norms > _NORM_FLOOR]
        pts = _radial_project(raw, w)
        for excl in exclusions:
            d = np.asarray(excl(pts), dtype=float)
            pts = pts[d >= EXCLUSION_RADIUS]
        take = pts[: n - got]
        chunks.append(take)
        got += len(take)
    pts = np.vstack(chunks)
    if antithetic:
        pts = np.vstack([pts, -pts])
    return pts


@dataclass(frozen=True)
class HomogeneityReport:
    tested_degree: float
    max_relative_error: float
    samples_tested: int
    passed: bool
    tolerance: float


def check_field_homogeneity(
    field: Callable,
    w: Weights,
    degree: float,
    n_samples: int = 100,
    eps_set: Sequence[float] = (0.5, 2.0, 10.0),
    tolerance: float = 1e-9,
    exclusions=(),
    seed=0,
) -> HomogeneityReport:
    """Numerically test f(dilation(x, eps)) = eps**degree * dilation(f(x), eps).

    Samples the homogeneous unit sphere (declared discontinuity sets
    excluded) and reports the worst relative mismatch.  The mismatch is
    measured in the Euclidean norm: the homogeneous norm is the wrong
    yardstick for a difference vector, since its fractional exponents blow
    a machine-epsilon residual up to ~1e-5 and a perfectly homogeneous
    field would look broken.  The denominator is floored at 1e-12 so a
    vanishing reference cannot divide away an honest mismatch.
    """
    if not eps_set:
        raise ValueError("eps_set must not be empty")
    pts = sphere_points(w, n_samples, rng=seed, exclusions=exclusions)
    worst = 0.0
    for x in pts:
        fx = np.asarray(field(x), dtype=float)
        for eps in eps_set:
            lhs = np.asarray(field(dilation(x, w, eps)), dtype=float)
            ref = (eps ** degree) * dilation(fx, w, eps)
            err = float(np.linalg.norm(lhs - ref))
            den = max(float(np.linalg.norm(ref)), _NORM_FLOOR)
            worst = max(worst, err / den)
    return HomogeneityReport(
        tested_degree=float(degree),
        max_relative_error=worst,
        samples_tested=len(pts),
        passed=worst <= tolerance,
        tolerance=float(tolerance),
    )
