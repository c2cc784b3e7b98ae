"""Certificate functions, sampled strictness checks, and the parameter search."""

import configparser
import math

import numpy as np
import pytest

from dicontrol import GainSet, scale_gains
from dicontrol.controllers import of_observer_loop_field, sf_switching_distance
from dicontrol.homogeneous import EXCLUSION_RADIUS, Weights, dilation, hom_norm
from dicontrol.lyapunov import (
    OF_WEIGHTS,
    SF_WEIGHTS,
    OFCertParams,
    SFCertParams,
    cbrt_shift_defect,
    certify_of,
    certify_sf,
    grad_v_sf,
    mu_threshold,
    search_parameters,
    settling_bound,
    sf_affine_components,
    sphere_sample,
    v_of,
    v_sf,
    vdot_of,
    vdot_sf,
    vdot_sf_parts,
)

BENCH_SF = GainSet(2.0, 5.0, 0.5, 0.0)
BENCH_OF = GainSet(4.160167646103808, 8.660254037844386, 1.5, 0.0, l1=8.0, l2=17.6)
GAMMA1_FLOOR = 1.5 * (BENCH_SF.k1 / BENCH_SF.k2) ** 5


def _sf_points(n, seed=0, k1=2.0, span=2.0, clearance=5e-2):
    """Random 3-d points staying clear of the kinks of the certificate
    (shifted position, velocity, integrator axes) and of the switching set."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        x = rng.uniform(-span, span, 3)
        xi1 = x[0] - np.sign(x[2]) * abs(x[2]) ** 3 / k1 ** 3
        if min(abs(xi1), abs(x[1]), abs(x[2]), abs(x[0])) > clearance:
            out.append(x)
    return np.asarray(out)


# ---------------------------------------------------------------------------
# parameter containers


def test_sf_params_validation():
    with pytest.raises(ValueError):
        SFCertParams(gains=BENCH_SF, L=0.4, gamma1=GAMMA1_FLOOR)
    with pytest.raises(ValueError):
        SFCertParams(gains=BENCH_SF, L=-0.1, gamma1=1.0)
    with pytest.raises(ValueError):
        SFCertParams(gains=BENCH_SF, L=0.4, gamma1=1.0, lambda_scale=0.0)
    p = SFCertParams(gains=BENCH_SF, L=0.4, gamma1=1.01 * GAMMA1_FLOOR)
    assert p.gamma12 == pytest.approx(2.5 * (2.0 / 5.0) ** 3)


def test_sf_params_base_chart_pullback():
    lam = 3.0
    p = SFCertParams(gains=scale_gains(BENCH_SF, lam), L=lam * 0.4, gamma1=1.0,
                     lambda_scale=lam)
    base = p.base_gains
    assert base.k1 == pytest.approx(BENCH_SF.k1, rel=1e-12)
    assert base.k2 == pytest.approx(BENCH_SF.k2, rel=1e-12)
    assert base.k3 == pytest.approx(BENCH_SF.k3, rel=1e-12)
    assert p.base_L == pytest.approx(0.4, rel=1e-12)
    # the gamma1 floor is checked in the base chart, where the closed form lives
    with pytest.raises(ValueError):
        SFCertParams(gains=scale_gains(BENCH_SF, lam), L=0.4,
                     gamma1=GAMMA1_FLOOR, lambda_scale=lam)


def test_of_params_validation():
    with pytest.raises(ValueError):
        OFCertParams(gains=BENCH_SF, gamma1=1.0, gamma2=0.01, mu=1.0)
    for bad in ({"gamma1": -1.0}, {"gamma2": 0.0}, {"mu": math.inf}):
        kwargs = {"gamma1": 2.3495, "gamma2": 0.01, "mu": 100.0} | bad
        with pytest.raises(ValueError):
            OFCertParams(gains=BENCH_OF, **kwargs)


# ---------------------------------------------------------------------------
# certificate function, gradient, derivative


def test_v_sf_homogeneous_degree_five_and_positive():
    p = SFCertParams(gains=BENCH_SF, L=0.4, gamma1=1.0)
    pts = _sf_points(50)
    base = v_sf(pts, p)
    for eps in (0.5, 2.0, 10.0):
        scaled = v_sf(dilation(pts, SF_WEIGHTS, eps), p)
        assert np.all(np.abs(scaled - eps ** 5 * base) <= 1e-10 * np.abs(scaled))
    sphere = sphere_sample(SF_WEIGHTS, 2000, seed=3)
    assert float(np.min(v_sf(sphere, p))) > 0.0


def test_grad_v_sf_matches_finite_differences():
    for lam, n in ((1.0, 100), (3.0, 20)):
        p = SFCertParams(gains=BENCH_SF, L=0.4, gamma1=1.0, lambda_scale=lam)
        pts = _sf_points(n, seed=5) * lam
        grad = grad_v_sf(pts, p)
        for x, g in zip(pts, grad):
            for i in range(3):
                h = 1e-6 * max(1.0, abs(x[i]))
                xp, xm = x.copy(), x.copy()
                xp[i] += h
                xm[i] -= h
                fd = (v_sf(xp, p) - v_sf(xm, p)) / (2.0 * h)
                assert fd == pytest.approx(g[i], rel=1e-5, abs=1e-8)


def test_vdot_sf_matches_directional_derivative():
    from dicontrol.controllers import sf_error_field

    p = SFCertParams(gains=BENCH_SF, L=0.4, gamma1=1.0)
    pts = _sf_points(30, seed=9)
    field = sf_error_field(BENCH_SF, 0.0)
    for x in pts:
        f = field(x)
        h = 1e-7
        fd = (v_sf(x + h * f, p) - v_sf(x - h * f, p)) / (2.0 * h)
        assert fd == pytest.approx(vdot_sf(x, p), rel=1e-4, abs=1e-7)


def test_vdot_sf_rejects_switching_set_and_budget_violation():
    p = SFCertParams(gains=BENCH_SF, L=0.4, gamma1=1.0)
    with pytest.raises(ValueError, match="switching set"):
        vdot_sf((0.0, 0.5, 1.0), p)
    with pytest.raises(ValueError, match="budget"):
        vdot_sf((1.0, 0.5, 1.0), p, rho_dot=0.5)


def test_vdot_parts_sum_to_vdot():
    for lam in (1.0, 3.0):
        p = SFCertParams(gains=scale_gains(BENCH_SF, lam) if lam != 1.0 else BENCH_SF,
                         L=0.4 * lam, gamma1=1.0, lambda_scale=lam)
        pts = _sf_points(200, seed=13) * lam
        for rho_dot in (0.0, 0.16 * lam, -0.4 * lam):
            vd = vdot_sf(pts, p, rho_dot=rho_dot)
            w1, w2, w3 = vdot_sf_parts(pts, p, rho_dot=rho_dot)
            err = np.abs(w1 + w2 + w3 - vd)
            assert np.all(err <= 1e-10 * np.maximum(1.0, np.abs(vd)))


def test_vdot_sf_nominal_homogeneous_degree_four():
    p = SFCertParams(gains=BENCH_SF, L=0.4, gamma1=1.0)
    pts = _sf_points(50, seed=17)
    base = vdot_sf(pts, p)
    for eps in (0.5, 2.0, 10.0):
        scaled = vdot_sf(dilation(pts, SF_WEIGHTS, eps), p)
        assert np.all(np.abs(scaled - eps ** 4 * base) <= 1e-9 * np.abs(scaled))


def test_integrator_ray_closed_form():
    # On the ray x = (x3^3/k1^3, 0, x3) the gradient collapses to its third
    # component and the derivative reduces to -(k3 - rho_dot*sgn(x3))*|x3|^4,
    # which is <= -(k3 - L)|x3|^4 for every admissible slope.
    p = SFCertParams(gains=BENCH_SF, L=0.4, gamma1=1.0)
    k1, k3 = BENCH_SF.k1, BENCH_SF.k3
    for x3 in (0.7, -1.3, 2.0, -0.05):
        x = np.array([math.copysign(abs(x3) ** 3, x3) / k1 ** 3, 0.0, x3])
        g = grad_v_sf(x, p)
        assert g[0] == 0.0 and g[1] == 0.0
        assert g[2] == pytest.approx(math.copysign(abs(x3) ** 4, x3), rel=1e-12)
        for rho_dot in (0.0, 0.36, -0.36):
            expect = (-k3 + rho_dot * math.copysign(1.0, x3)) * abs(x3) ** 4
            assert vdot_sf(x, p, rho_dot=rho_dot) == pytest.approx(expect, rel=1e-12)
            assert expect <= -(k3 - p.L) * abs(x3) ** 4 + 1e-15


def test_cbrt_shift_defect_vanishes_on_axes():
    assert cbrt_shift_defect(0.0, 1.7, 2.0) == 0.0
    assert cbrt_shift_defect(-3.2, 0.0, 2.0) == 0.0
    # a = 1, b = k1 makes the shift c = 1: cbrt(2) - 1 - 1
    assert cbrt_shift_defect(1.0, 2.0, 2.0) == pytest.approx(2.0 ** (1.0 / 3.0) - 2.0)


def test_affine_components_reconstruct_worst_case_derivative():
    gamma1 = 1.0
    p = SFCertParams(gains=BENCH_SF, L=0.4, gamma1=gamma1)
    pts = _sf_points(100, seed=21)
    a, c, d, v = sf_affine_components(pts, BENCH_SF, gamma1)
    worst = np.maximum(vdot_sf(pts, p, rho_dot=0.4), vdot_sf(pts, p, rho_dot=-0.4))
    recon = a + BENCH_SF.k3 * c + 0.4 * d
    assert np.all(np.abs(recon - worst) <= 1e-10 * np.maximum(1.0, np.abs(worst)))
    assert v == pytest.approx(v_sf(pts, p), rel=1e-12)


# ---------------------------------------------------------------------------
# sampling


def test_sphere_sample_is_antithetic_and_clears_exclusions():
    dist = sf_switching_distance(BENCH_SF)
    pts = sphere_sample(SF_WEIGHTS, 500, exclusions=(dist,), seed=2)
    assert pts.shape == (1000, 3)
    assert np.max(np.abs(hom_norm(pts, SF_WEIGHTS) - 1.0)) <= 1e-12
    assert np.array_equal(pts[500:], -pts[:500])
    assert np.all(dist(pts) > EXCLUSION_RADIUS)
    again = sphere_sample(SF_WEIGHTS, 500, exclusions=(dist,), seed=2)
    assert np.array_equal(pts, again)


def test_weight_vectors():
    assert SF_WEIGHTS.r == (3.0, 2.0, 1.0)
    assert OF_WEIGHTS.r == (3.0, 2.0, 3.0, 2.0)


# ---------------------------------------------------------------------------
# state-feedback certification and search


def test_certify_gate_rejects_untrackable_slope_without_sampling():
    for L in (0.6, 0.5):  # strictly above and exactly at k3
        report = certify_sf(BENCH_SF, L=L, gamma1=1.0)
        assert not report.passed
        assert report.samples == 0
        assert "integrator cannot track" in report.reason
        assert f"<= L = {L:g}" in report.reason
        assert math.isnan(report.kappa)


def test_search_gate_is_strict_inequality():
    params, report = search_parameters(BENCH_SF, L=0.6)
    assert params is None
    assert report.samples == 0
    assert "k3 = 0.5 < L = 0.6" in report.reason
    with pytest.raises(ValueError):
        search_parameters(BENCH_SF, L=0.4, budget=0)


def test_benchmark_gains_are_not_directly_certifiable():
    report = certify_sf(BENCH_SF, L=0.4, gamma1=2 * GAMMA1_FLOOR, n=20_000)
    assert report.min_v_on_sphere > 0.0
    assert not report.passed
    assert "Vdot not negative" in report.reason


@pytest.fixture(scope="module")
def searched():
    params, report = search_parameters(BENCH_SF, L=0.4)
    assert params is not None
    return params, report


def test_search_returns_certified_design(searched):
    params, report = searched
    assert report.passed
    assert report.reason == "min V > 0 and max Vdot < 0 on the sampled sphere"
    assert report.samples == 200_000
    g = params.gains
    assert g.k3 > 0.4
    assert 0.05 < report.kappa < 0.12
    assert 5.0 < params.lambda_scale < 15.0
    assert report.min_v_on_sphere > 0.1
    # frozen values for the default budget/seed, so reruns stay comparable
    assert g.k1 == pytest.approx(8.491090851447307, rel=1e-9)
    assert g.k2 == pytest.approx(5.91534548590103, rel=1e-9)
    assert g.k3 == pytest.approx(0.8409488542474981, rel=1e-9)
    assert params.gamma1 == pytest.approx(4.217798872436521, rel=1e-9)
    assert params.lambda_scale == pytest.approx(8.747828054392423, rel=1e-9)
    assert report.kappa == pytest.approx(0.07631343087986217, rel=1e-9)


def test_searched_certificate_survives_fresh_seed(searched):
    params, _ = searched
    recheck = certify_sf(params.gains, L=0.4, gamma1=params.gamma1,
                         n=20_000, seed=7, lambda_scale=params.lambda_scale)
    assert recheck.passed


def test_searched_certificate_contracts_at_interior_points(searched):
    params, report = searched
    rng = np.random.default_rng(23)
    count = 0
    while count < 100:
        x = rng.uniform(-3.0, 3.0, 3)
        if abs(x[0]) < 1e-3:  # stay off the switching set (k4 = 0)
            continue
        count += 1
        v = v_sf(x, params)
        worst = max(vdot_sf(x, params, rho_dot=0.4), vdot_sf(x, params, rho_dot=-0.4))
        assert v > 0.0
        assert -worst >= 0.9 * report.kappa * v ** 0.8


def test_settling_bound_formula_and_hookup(searched):
    assert settling_bound(32.0, 0.5) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        settling_bound(1.0, 0.0)
    with pytest.raises(ValueError):
        settling_bound(-1.0, 0.5)
    params, report = searched
    x0 = (1.0, -0.5, 0.2)
    assert report.settling_bound_at(x0) == pytest.approx(
        settling_bound(v_sf(x0, params), report.kappa))


def test_certificate_report_record_round_trip(tmp_path, searched):
    _, report = searched
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(report.record())
    cert = parser["certificate"]
    assert cert["kind"] == "state-feedback"
    assert cert["passed"] == "true"
    assert float(cert["kappa"]) == report.kappa
    assert float(cert["min_v_on_sphere"]) == report.min_v_on_sphere
    assert int(cert["samples"]) == report.samples
    p = parser["certificate.params"]
    assert float(p["k1"]) == report.params["k1"]
    assert float(p["lambda_scale"]) == report.params["lambda_scale"]
    path = tmp_path / "certificate.cfg"
    report.save(path)
    assert path.read_text() == report.record()


# ---------------------------------------------------------------------------
# output-feedback certification


@pytest.fixture(scope="module")
def of_threshold():
    mu_star, report = mu_threshold(BENCH_OF, 2.3495, 0.01, n=20_000, seed=0)
    assert mu_star is not None
    return mu_star, report


def test_mu_threshold_band_and_report(of_threshold):
    mu_star, report = of_threshold
    assert 10.0 < mu_star < 500.0
    assert mu_star == pytest.approx(66.54857630920064, rel=1e-6)
    assert report.passed  # the returned report is evaluated at mu_star itself


def test_of_certificate_at_twice_threshold(of_threshold):
    mu_star, _ = of_threshold
    p = OFCertParams(gains=BENCH_OF, gamma1=2.3495, gamma2=0.01, mu=2 * mu_star)
    report = certify_of(BENCH_OF, p, n=100_000, seed=0)
    assert report.passed
    assert report.kappa > 0.03
    assert report.kappa == pytest.approx(0.3014215818967887, rel=1e-6)
    c = report.constants
    assert c["alpha1"] > 0 and c["alpha2"] > 0 and c["alpha3"] > 0
    # the velocity-channel coupling constant is sqrt(2) in theory
    assert 1.3 < c["c_holder"] <= math.sqrt(2.0) + 1e-9
    e0 = (0.3, -0.2)
    x0 = (1.0, 0.5)
    assert report.settling_bound_at(x0, e0) == pytest.approx(
        settling_bound(v_of(x0, e0, p), report.kappa))


def test_of_certificate_fails_below_threshold(of_threshold):
    mu_star, _ = of_threshold
    p = OFCertParams(gains=BENCH_OF, gamma1=2.3495, gamma2=0.01, mu=0.5 * mu_star)
    report = certify_of(BENCH_OF, p, n=20_000, seed=0)
    assert not report.passed


def test_v_of_and_vdot_of_homogeneity(of_threshold):
    mu_star, _ = of_threshold
    p = OFCertParams(gains=BENCH_OF, gamma1=2.3495, gamma2=0.01, mu=2 * mu_star)
    rng = np.random.default_rng(29)
    pts = rng.uniform(-2.0, 2.0, (50, 4))
    x, e = pts[:, :2], pts[:, 2:]
    v = v_of(x, e, p)
    vd = vdot_of(x, e, p)
    assert np.all(v > 0.0)
    for eps in (0.5, 2.0, 10.0):
        big = dilation(pts, OF_WEIGHTS, eps)
        xs, es = big[:, :2], big[:, 2:]
        assert np.all(np.abs(v_of(xs, es, p) - eps ** 5 * v) <= 1e-10 * eps ** 5 * v)
        assert np.all(np.abs(vdot_of(xs, es, p) - eps ** 4 * vd)
                      <= 1e-9 * eps ** 4 * np.abs(vd))


def test_vdot_of_matches_directional_derivative(of_threshold):
    mu_star, _ = of_threshold
    p = OFCertParams(gains=BENCH_OF, gamma1=2.3495, gamma2=0.01, mu=2 * mu_star)
    field = of_observer_loop_field(BENCH_OF)
    rng = np.random.default_rng(31)
    shift = BENCH_OF.l1 ** 1.5
    count = 0
    while count < 30:
        pt = rng.uniform(-2.0, 2.0, 4)
        eps1 = pt[2] - math.copysign(abs(pt[3]) ** 1.5, pt[3]) / shift
        if min(abs(pt[0]), abs(pt[1]), abs(pt[3]), abs(eps1)) < 5e-2:
            continue
        count += 1
        f = field(pt)
        h = 1e-7
        up, dn = pt + h * f, pt - h * f
        fd = (v_of(up[:2], up[2:], p) - v_of(dn[:2], dn[2:], p)) / (2.0 * h)
        assert fd == pytest.approx(vdot_of(pt[:2], pt[2:], p), rel=1e-4, abs=1e-7)
