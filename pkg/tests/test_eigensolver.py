import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obleig.bounds import AveragesReport, mean_of
from obleig.eigensolver import (Certificate, average_bound_audit, eigenfunction_below_lambda,
                                extrapolate, implied_bound, lambda_global_sweep, principal_eigenpair,
                                rayleigh_quotient, truncation_sweep, verify_certificate)
from obleig.errors import ConfigError, MismatchedScenario, UndifferentiableField, ZeroVector
from obleig.geometry import truncate
from obleig.operators import assemble, make_boundary, make_operator

from oracles import (ce3_subsolution_residual, dense_dirichlet_1d, dirichlet_strip_rectangle,
                     robin_cross_section)

R1 = {"shape": "whole_space", "dimension": 1}
STRIP = {"shape": "strip", "lo": -1.0, "hi": 1.0}
ANNULI = {"shape": "annuli_union", "n_max": 3, "connector_half_width": 0.5}
DIRICHLET = {"kind": "dirichlet"}
C2 = "-1/2 + 3*(min(max(x,0),1))^2 - 2*(min(max(x,0),1))^3"
C3 = "-1 + 2*(3*(min(max(x+1,0),1))^2 - 2*(min(max(x+1,0),1))^3)"


def _solve(domain, op, bc, y, r, h):
    d = len(y)
    g = truncate(domain, y, r, h)
    S = assemble(g, make_operator(op, d), make_boundary(bc, d))
    return g, S, principal_eigenpair(S)


# principal eigenpair -------------------------------------------------------------------------------

def test_cosine_mode_on_half_period():
    _, S, e = _solve(R1, {}, {}, [0.0], math.pi / 2, 0.01)
    assert abs(e.lam - 1.0) < 1e-3
    assert np.abs(e.eigenfunction - np.cos(S.coords[:, 0])).max() < 1e-3
    assert e.eigenfunction.max() == pytest.approx(1.0)
    assert e.positivity_margin > 0
    assert e.residual < 1e-8 * e.scale


def test_neumann_constant_mode():
    _, _, e = _solve({"shape": "interval"}, {"c": 0.7}, {}, [0.0], 3.0, 0.1)
    assert e.lam == pytest.approx(-0.7, abs=1e-12)
    assert np.allclose(e.eigenfunction, 1.0, atol=1e-12)


def test_rectangle_separable_value():
    _, _, e = _solve(STRIP, {"c": 1.0}, DIRICHLET, [0.0, 0.0], 10.0, 0.05)
    # pi^2/4 + pi^2/400 - 1 = 1.4920751...
    assert e.lam == pytest.approx(dirichlet_strip_rectangle(10.0), rel=2e-3)
    assert e.positivity_margin > 0


@pytest.mark.parametrize("n", [100, 200])
def test_step_potential_against_dense_matrix(n):
    # same three-point matrix built densely by the oracle: agreement to solver tolerance
    c = {"type": "step", "left": -0.5, "right": 0.5}
    _, _, e = _solve(R1, {"c": c}, {}, [0.0], 5.0, 10.0 / n)
    want = dense_dirichlet_1d(lambda x: np.where(x < 0, -0.5, 0.5), -5.0, 5.0, n)
    assert e.lam == pytest.approx(want, abs=1e-7)


def test_step_potential_frozen_limit():
    _, _, e = _solve(R1, {"c": {"type": "step", "left": -0.5, "right": 0.5}}, {}, [0.0], 5.0, 0.01)
    # dense oracle at n = 1000 (frozen)
    assert e.lam == pytest.approx(-0.230894148, abs=1e-7)


def test_cut_wall_robin_eigenvalue_converges():
    w, gamma = 1.07, 1.0
    from oracles import bisect
    a = bisect(lambda t: t * math.tan(t * w) - gamma, 1e-9, math.pi / (2 * w) - 1e-9)
    _, _, e = _solve({"shape": "interval", "lo": -w, "hi": w}, {}, {"kind": "robin", "gamma": gamma},
                     [0.0], 3.0, 0.0025)
    assert e.lam == pytest.approx(a * a, abs=1e-5)


# Rayleigh quotient ----------------------------------------------------------------------------------

SA_OP = {"form": "selfadjoint_divergence",
         "A": {"type": "diagonal", "entries": ["1 + 0.3*cos(x)", "1"]}, "c": "0.5*sin(x)"}


@pytest.mark.parametrize("gamma", [0.0, 1.0])
def test_rayleigh_quotient_of_eigenfunction_and_minimality(gamma):
    bc = {"kind": "robin", "gamma": gamma, "beta": "conormal"}
    g, S, e = _solve(ANNULI, SA_OP, bc, [0.0, 0.0], 5.0, 0.1)
    assert S.symmetric
    L = make_operator(SA_OP, 2)
    rq = rayleigh_quotient(g, L, gamma, S.extend(e.eigenfunction))
    assert abs(rq - e.lam) <= 1e-6 * S.scale
    rng = np.random.default_rng(7)
    for _ in range(50):
        v = rng.random(g.size) * (1 + np.cos(g.points[:, 0]))
        assert rayleigh_quotient(g, L, gamma, v) >= e.lam - 1e-6 * S.scale


def test_rayleigh_quotient_constant_on_closed_domain():
    g = truncate({"shape": "ball", "radius": 2.0}, [0.0, 0.0], 3.0, 0.1)
    L = make_operator({"form": "selfadjoint_divergence", "c": 0.3}, 2)
    assert rayleigh_quotient(g, L, 0.0, np.ones(g.size)) == pytest.approx(-0.3, abs=1e-12)
    with pytest.raises(ZeroVector):
        rayleigh_quotient(g, L, 0.0, np.zeros(g.size))
    with pytest.raises(ConfigError):
        rayleigh_quotient(g, make_operator({}, 2), 0.0, np.ones(g.size))


# sweeps ------------------------------------------------------------------------------------------------

def test_strip_dirichlet_sweep():
    s = truncation_sweep(STRIP, [0.0, 0.0], make_operator({"c": 1.0}, 2), make_boundary(DIRICHLET, 2),
                         [5.0, 10.0, 20.0], 0.05)
    for r, lam in zip(s.radii, s.lambdas):
        assert lam == pytest.approx(dirichlet_strip_rectangle(r), rel=0.02)
    assert s.lambdaB_estimate == pytest.approx(math.pi ** 2 / 4 - 1, rel=0.02)
    assert s.monotonicity_violation <= 1e-8 * max(s.scales)
    assert s.lambdaB_estimate <= min(s.lambdas) + 1e-3
    assert len(s.rows()) == 3 and set(s.rows()[0]) == {"center_x", "center_y", "r", "h", "lambda",
                                                        "residual", "iterations"}


def test_whole_line_sweep_closed_form():
    c0 = 0.4
    s = truncation_sweep(R1, [0.0], make_operator({"c": c0}, 1), make_boundary({}, 1),
                         [2.0, 4.0, 8.0], 0.01)
    for r, lam in zip(s.radii, s.lambdas):
        assert lam == pytest.approx(math.pi ** 2 / (4 * r * r) - c0, abs=2e-3)
    assert s.lambdaB_estimate == pytest.approx(-c0, abs=2e-3)


@pytest.mark.parametrize("gamma", [1.0, 2.0])
def test_robin_strip_threshold(gamma):
    want, _ = robin_cross_section(gamma)
    s = lambda_global_sweep(STRIP, [[0.0, 0.0], [3.0, 0.5]], make_operator({"c": 1.0}, 2),
                            make_boundary({"kind": "robin", "gamma": gamma}, 2), [5.0, 10.0, 20.0], 0.1)
    assert s.lambdaB_estimate == pytest.approx(want, rel=0.02)
    # tan(1) = 1.557...: negative below the threshold, positive above
    assert (s.LambdaB_estimate < 0) == (gamma < math.tan(1.0))


def test_translation_invariance_of_global_sweep():
    s = lambda_global_sweep(STRIP, [[0.0, 0.0], [2.5, 0.0], [-7.0, 0.0]], make_operator({"c": 1.0}, 2),
                            make_boundary({}, 2), [3.0, 6.0], 0.1)
    table = np.array(s.per_center)
    assert np.ptp(table, axis=0).max() < 1e-6


def test_extrapolation_rules():
    r = [5.0, 10.0, 20.0]
    v = [1.0 + 2.0 / x ** 2 for x in r]
    est, how = extrapolate(r, v)
    assert how == "fit" and est == pytest.approx(1.0)
    assert extrapolate([5.0, 10.0], [2.0, 1.5]) == (1.5, "last")
    assert extrapolate(r, [1.0, 1.1, 1.2])[1] == "last"


@settings(max_examples=25, deadline=None)
@given(st.floats(1.0, 4.0), st.floats(0.01, 2.0), st.floats(-3.0, 3.0))
def test_monotone_in_radius(r1, dr, y):
    L = make_operator({"c": "cos(x) + 0.5*sin(3*x)", "b": [0.7]}, 1)
    s = truncation_sweep(R1, [y], L, make_boundary({}, 1), [r1, r1 + dr], 0.05)
    assert s.lambdas[1] <= s.lambdas[0] + 1e-8 * s.scales[0]


@settings(max_examples=10, deadline=None)
@given(st.floats(1.0, 3.0), st.floats(0.1, 2.0), st.floats(-3.0, 3.0), st.floats(-0.8, 0.8))
def test_monotone_in_radius_robin_strip(r1, dr, y1, y2):
    L = make_operator({"c": "cos(x)"}, 2)
    s = truncation_sweep(STRIP, [y1, y2], L, make_boundary({"kind": "robin", "gamma": 0.5}, 2),
                         [r1, r1 + dr], 0.1)
    assert s.lambdas[1] <= s.lambdas[0] + 1e-8 * s.scales[0]


def test_center_dominance():
    L = make_operator({"c": "cos(x)"}, 2)
    B = make_boundary({}, 2)
    s = lambda_global_sweep(STRIP, [[0.0, 0.0], [1.5, 0.5], [3.0, -0.5]], L, B, [4.0, 8.0, 12.0], 0.1)
    slack = 1e-2
    for row in s.per_center:
        assert min(row) >= s.lambdaB_estimate - slack
    # the sup over centers dominates each center radius by radius
    assert np.all(np.array(s.sup_lambdas) >= np.max(s.per_center, axis=0) - 1e-12)


def test_failed_radius_is_flagged_not_fatal():
    s = truncation_sweep(STRIP, [0.0, 0.0], make_operator({"c": 1.0}, 2), make_boundary({}, 2),
                         [0.3, 2.0], 0.1)
    assert s.errors[0] == "ConfigError" and math.isnan(s.lambdas[0])
    assert math.isfinite(s.lambdas[1])


# certificates ----------------------------------------------------------------------------------------

def _cert(phi, lam, sense, classes, **kw):
    return Certificate(phi, lam, sense, classes, kw.pop("box", [[-20.0, 20.0]]), kw.pop("h", 0.01), **kw)


def test_ce2_exponential_supersolution():
    L = make_operator({"b": [-2.0], "c": C2}, 1)
    rep = verify_certificate(L, make_boundary({}, 1),
                             _cert("exp(x) + 1/4", 0.25, "supersolution", {"positive", "inf_positive"},
                                   margin=1e-3))
    assert rep.passed
    assert rep.implied_bound == {"quantity": "lambda_p", "side": "lower", "value": 0.25}
    assert rep.worst_interior_slack <= 1e-8
    assert rep.min_phi >= 0.25


def test_ce3_pair():
    L = make_operator({"b": [10.0], "c": C3}, 1)
    B = make_boundary({}, 1)
    sup = verify_certificate(L, B, _cert("1/(1+exp(x))", 1.0, "supersolution", {"positive", "bounded"},
                                         bound=1.0))
    assert sup.passed and sup.implied_bound["quantity"] == "lambda_b"
    sub = verify_certificate(L, B, _cert("1/(1+exp(-x))", -1.0, "subsolution", {"positive", "bounded"},
                                         bound=1.0))
    assert sub.passed and sub.implied_bound == {"quantity": "mu_b", "side": "upper", "value": -1.0}


def test_ce3_sign_oracle_agrees_with_certificate():
    # independent finite-difference evaluation: (L - 1) psi >= 0, i.e. the subsolution inequality
    x = np.linspace(-20, 20, 4001)
    res = ce3_subsolution_residual(x)
    assert res.min() >= -1e-6
    assert res.max() > 1.0


def test_constant_certificates_with_drift():
    B = make_boundary({}, 1)
    for k in (3.0, 4.0):
        L = make_operator({"b": [k], "c": 1.0}, 1)
        pb = verify_certificate(L, B, _cert("1", -1.0, "supersolution",
                                            {"positive", "inf_positive", "bounded"}, margin=1e-3, bound=1.0))
        mu = verify_certificate(L, B, _cert("1", -1.0, "subsolution", {"positive", "bounded"}, bound=1.0))
        assert pb.passed and pb.implied_bound["quantity"] == "lambda_pb"
        assert mu.passed and mu.implied_bound["quantity"] == "mu_b"


def test_harmonic_constant_certificate_in_the_plane():
    L = make_operator({}, 2)
    rep = verify_certificate(L, make_boundary({}, 2),
                             _cert("1", 0.0, "supersolution", {"positive", "inf_positive", "bounded"},
                                   box=[[-3.0, 3.0], [-3.0, 3.0]], h=0.1, bound=1.0))
    assert rep.passed and rep.implied_bound["value"] == 0.0


def test_wrong_certificates_fail():
    L = make_operator({"b": [-2.0], "c": C2}, 1)
    B = make_boundary({}, 1)
    # too large a lambda
    assert not verify_certificate(L, B, _cert("exp(x) + 1/4", 1.0, "supersolution", {"positive"})).passed
    # unbounded phi claimed bounded
    assert not verify_certificate(L, B, _cert("exp(x) + 1/4", 0.25, "supersolution",
                                              {"positive", "bounded"}, bound=10.0)).passed
    # sign-changing phi
    assert not verify_certificate(make_operator({}, 1), B, _cert("x", 0.0, "supersolution", {"positive"})).passed


def test_robin_boundary_inequality_is_checked():
    lam, alpha = robin_cross_section(2.0)
    L = make_operator({"c": 1.0}, 2)
    B = make_boundary({"kind": "robin", "gamma": 2.0}, 2)
    box = [[-5.0, 5.0], [-1.0, 1.0]]
    ok = verify_certificate(L, B, Certificate(f"cos({alpha - 0.01}*y)", lam - 0.05, "supersolution",
                                              {"positive"}, box, 0.05, domain=STRIP))
    assert ok.passed
    bad = verify_certificate(L, B, Certificate(f"cos({alpha + 0.05}*y)", lam - 0.05, "supersolution",
                                               {"positive"}, box, 0.05, domain=STRIP))
    assert not bad.passed and bad.worst_boundary_slack > 0


def test_certificate_config_errors():
    with pytest.raises(ConfigError):
        _cert("1", 0.0, "sideways", {"positive"})
    with pytest.raises(ConfigError):
        _cert("1", 0.0, "supersolution", {"tiny"})
    with pytest.raises(ConfigError):
        verify_certificate(make_operator({}, 1), make_boundary({}, 1),
                           _cert("1 + s", 0.0, "supersolution", {"positive"}))


def test_kinked_certificate_falls_back_to_differences():
    # abs has no symbolic second derivative, so the inequalities are evaluated by differences
    rep = verify_certificate(make_operator({}, 1), make_boundary({}, 1),
                             _cert("abs(x)^3 + 2", -1.0, "supersolution", {"positive"}, box=[[0.5, 3.0]]))
    assert rep.derivatives == "finite_difference"
    with pytest.raises(UndifferentiableField):
        from obleig.expr import Expression
        Expression("abs(x)").diff("x", 2)


def test_implied_bound_table():
    assert implied_bound("supersolution", {"positive"}, 2.0)["quantity"] == "lambda"
    assert implied_bound("supersolution", {"positive", "inf_positive"}, 2.0)["quantity"] == "lambda_p"
    assert implied_bound("supersolution", {"positive", "bounded"}, 2.0)["quantity"] == "lambda_b"
    assert implied_bound("supersolution", {"positive", "inf_positive", "bounded"}, 2.0)["quantity"] == "lambda_pb"
    assert implied_bound("subsolution", {"positive", "bounded"}, -1.0)["side"] == "upper"
    assert implied_bound("subsolution", {"positive"}, -1.0) is None


@pytest.mark.parametrize("y", [-5.0, 0.0, 5.0])
def test_certificate_soundness_on_subdomains(y):
    # a passing supersolution with lambda bounds every truncated eigenvalue inside the box
    _, _, e = _solve(R1, {"b": [-2.0], "c": C2}, {}, [y], 5.0, 0.02)
    assert e.lam >= 0.25 - 1e-8
    _, _, e3 = _solve(R1, {"b": [10.0], "c": C3}, {}, [y], 5.0, 0.02)
    assert e3.lam >= 1.0 - 1e-8


def test_robin_certificate_soundness():
    lam, alpha = robin_cross_section(2.0)
    _, _, e = _solve(STRIP, {"c": 1.0}, {"kind": "robin", "gamma": 2.0}, [0.0, 0.0], 5.0, 0.05)
    assert e.lam >= lam - 0.05


# eigenfunctions below lambda_B ----------------------------------------------------------------------

def test_positive_eigenfunction_below_lambda_b():
    seq = eigenfunction_below_lambda(R1, [0.0], make_operator({}, 1), make_boundary({}, 1), -1.0,
                                     [6.0, 8.0, 10.0, 12.0], 0.02, window=2.0)
    assert seq.converged and all(seq.positive)
    x = seq.window_points[:, 0]
    # symmetric shell data select the even solution of u'' = u
    assert np.abs(seq.vectors[-1] - np.cosh(x)).max() < 1e-3
    assert seq.residual < 1e-8


def test_no_positive_eigenfunction_above_lambda_b():
    seq = eigenfunction_below_lambda(R1, [0.0], make_operator({}, 1), make_boundary({}, 1), 0.5,
                                     [6.0, 8.0, 10.0, 12.0], 0.02, window=2.0)
    assert not any(seq.positive)


def test_neumann_constants():
    seq = eigenfunction_below_lambda({"shape": "interval", "lo": -50.0, "hi": 50.0}, [0.0],
                                     make_operator({}, 1), make_boundary({}, 1), 0.0, [5.0, 10.0, 20.0],
                                     0.05, window=2.0)
    assert seq.converged and all(seq.positive)
    assert np.allclose(seq.vectors[-1], 1.0, atol=1e-10)


# average bound audit -------------------------------------------------------------------------------

def test_average_bound_audit_constant_potential():
    c0 = 0.4
    s = truncation_sweep(R1, [0.0], make_operator({"c": c0}, 1), make_boundary({}, 1), [4.0, 8.0, 16.0], 0.02)
    avg = mean_of(R1, [0.0], c0, [4.0, 8.0, 16.0], 0.02)
    ok, slack, detail = average_bound_audit(s, avg, tol=1e-3)
    assert ok and abs(slack) < 1e-3 and detail["mean_ok"]


def test_average_bound_audit_alternating_strip():
    c = "2*step(sin(pi*x)) - 1"
    L = make_operator({"form": "selfadjoint_divergence", "c": c}, 2)
    s = truncation_sweep(STRIP, [0.0, 0.0], L, make_boundary({}, 2), [4.0, 8.0, 12.0], 0.1)
    avg = mean_of(STRIP, [0.0, 0.0], c, [4.0, 8.0, 12.0], 0.1)
    assert abs(avg.mean_estimate) < 0.05
    ok, slack, _ = average_bound_audit(s, avg, tol=0.1)
    assert ok and s.lambdaB_estimate <= 0.0


def test_average_bound_audit_mismatch():
    s = truncation_sweep(R1, [0.0], make_operator({"c": 1.0}, 1), make_boundary({}, 1), [2.0, 4.0], 0.05)
    with pytest.raises(MismatchedScenario):
        average_bound_audit(s, AveragesReport([3.0], mean_estimate=1.0))
