import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obleig.eigensolver import principal_eigenpair
from obleig.errors import BlowUp, ConfigError, NoFront
from obleig.geometry import truncate
from obleig.operators import assemble, make_boundary, make_operator
from obleig.parabolic import (SimConfig, bump, classify_trajectory, classify_zero_state, comparison_check,
                              default_probes, evolve, hair_trigger_experiment, make_reaction,
                              measure_front_speed, read_oblp, simulation_config, write_csv, write_oblp)

from oracles import robin_cross_section

R1 = {"shape": "whole_space", "dimension": 1}
STRIP = {"shape": "strip", "lo": -1.0, "hi": 1.0}
INTERVAL = {"shape": "interval", "lo": -2.0, "hi": 2.0}
KPP = {"f": "s*(1-s)", "kpp": True, "saturation": 1.0}


def test_uniform_decay():
    cfg = simulation_config(INTERVAL, [0.0], 3.0, 0.1, 0.01, 5.0, {}, {"kind": "neumann"}, 1.0)
    tr = evolve(cfg, make_reaction("-s"))
    assert np.abs(tr.final - math.exp(-5.0)).max() < 1e-3
    assert np.ptp(tr.final) < 1e-12


def test_neumann_mass_conservation():
    cfg = simulation_config(INTERVAL, [0.0], 3.0, 0.1, 0.01, 5.0, {}, {"kind": "neumann"},
                            bump([0.5], 1.0, 1.0))
    tr = evolve(cfg, make_reaction("0"))
    assert np.abs(np.diff(tr.mass_trace)).max() < 1e-10
    assert tr.mass_trace[-1] == pytest.approx(tr.mass_trace[0], abs=1e-9 * 5.0)


def test_neumann_mass_conservation_curved_2d():
    # bounded domain inside the ball of radius 2: no cap nodes, cut cells on the circle
    cfg = simulation_config({"shape": "ball", "radius": 1.5}, [0.0, 0.0], 2.0, 0.1, 0.01, 1.0,
                            {}, {"kind": "neumann"}, bump([0.3, 0.2], 0.8, 1.0))
    tr = evolve(cfg, make_reaction("0"))
    assert abs(tr.mass_trace[-1] - tr.mass_trace[0]) < 1e-9


def test_stationary_constant():
    cfg = simulation_config(STRIP, [0.0, 0.0], 5.0, 0.1, 0.02, 5.0, {}, {"kind": "neumann"}, 1.0)
    tr = evolve(cfg, make_reaction(KPP))
    assert np.abs(tr.final - 1.0).max() < 1e-6


@settings(max_examples=15, deadline=None)
@given(st.floats(-5.0, 5.0), st.floats(0.5, 3.0), st.floats(0.0, 2.0), st.floats(0.0, 1.0))
def test_positivity_preserved(c, rad, amp, drift):
    cfg = simulation_config(R1, [0.0], 10.0, 0.1, 0.02, 3.0, {"b": [drift * 30.0]}, {},
                            bump([c], rad, amp))
    tr = evolve(cfg, make_reaction(KPP))
    assert tr.min_trace.min() >= -1e-12


@settings(max_examples=10, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(0.5, 2.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_ordered_data_stay_ordered(c, rad, a, extra):
    lo = bump([c], rad, a)
    hi = lambda p: lo(p) + extra * bump([0.0], 3.0, 1.0)(p)
    snaps = []
    for u0 in (lo, hi):
        cfg = simulation_config(R1, [0.0], 8.0, 0.1, 0.02, 2.0, {"b": [1.0]}, {}, u0, snapshot_every=0.1)
        snaps.append(evolve(cfg, make_reaction(KPP)).values)
    assert np.all(snaps[0] <= snaps[1] + 1e-10)


def test_comparison_with_robin_supersolution():
    # v = eps phi exp(-lambda t / 2) above a solution of u_t = Lap u + u started at (eps/2) phi bump
    lam_exact, alpha = robin_cross_section(2.0)
    lam = 0.1449
    assert lam < lam_exact
    eps = 0.1
    phi = lambda p: np.cos(alpha * p[:, 1])
    bm = bump([0.0, 0.0], 3.0, 1.0)
    cfg = simulation_config(STRIP, [0.0, 0.0], 5.0, 0.1, 0.02, 5.0, {}, {"kind": "robin", "gamma": 2.0},
                            lambda p: 0.5 * eps * phi(p) * bm(p))
    rep = comparison_check(cfg, make_reaction("s"), lambda t, p: eps * phi(p) * math.exp(-lam * t / 2))
    assert rep.ok and rep.initially_ordered and rep.checked_steps == 251


def test_comparison_below_truncated_eigenfunction():
    g = truncate(R1, [0.0], 5.0, 0.1)
    e = principal_eigenpair(assemble(g, make_operator({"c": 1.0}, 1), make_boundary({}, 1)))
    assert e.lam < 0
    cfg = SimConfig(g, make_operator({}, 1), make_boundary({}, 1), 0.02, 10.0, bump([0.0], 4.5, 0.5))
    rep = comparison_check(cfg, make_reaction(KPP), 0.1 * e.eigenfunction, "sub", t_start=1.0)
    assert rep.ok
    # the bump does not dominate eps phi_r near the cap at t = 0
    assert not comparison_check(cfg, make_reaction(KPP), 0.1 * e.eigenfunction, "sub").ok


def test_constant_above_saturation_is_a_supersolution():
    cfg = simulation_config(R1, [0.0], 10.0, 0.1, 0.02, 5.0, {}, {}, bump([0.0], 2.0, 1.5))
    rep = comparison_check(cfg, make_reaction(KPP), lambda t, p: np.full(p.shape[0], 1.5))
    assert rep.ok
    with pytest.raises(ConfigError):
        comparison_check(cfg, make_reaction(KPP), 1.5, orientation="sideways")


# reaction spec ------------------------------------------------------------------------------------

def test_reaction_checks():
    p = np.linspace(-3, 3, 7)[:, None]
    make_reaction(KPP).check(p)
    with pytest.raises(ConfigError):
        make_reaction("1 + s").check(p)
    with pytest.raises(ConfigError):
        make_reaction({"f": "s + s^2", "kpp": True}).check(p)
    with pytest.raises(ConfigError):
        make_reaction({"f": "s", "saturation": 1.0}).check(p)
    with pytest.raises(ConfigError):
        make_reaction("s*z")
    assert np.allclose(make_reaction("cos(x)*s - s^2").fs0(p), np.cos(p[:, 0]))


def test_time_step_budget():
    cfg = simulation_config(R1, [0.0], 5.0, 0.1, 0.2, 1.0, {}, {}, 0.5)
    with pytest.raises(ConfigError):
        evolve(cfg, make_reaction("5*s"))
    with pytest.raises(ConfigError):
        simulation_config(R1, [0.0], 5.0, 0.1, 0.0, 1.0, {}, {}, 0.5)


def test_blow_up_is_reported():
    cfg = simulation_config(R1, [0.0], 10.0, 0.1, 0.01, 2.0, {}, {}, 2.0)
    with pytest.raises(BlowUp) as info:
        evolve(cfg, make_reaction("s^2"), check_budget=False)
    assert 0.3 < info.value.time < 0.7
    assert classify_zero_state(cfg, make_reaction("s^2")).classification == "grows_unbounded"


# classification -------------------------------------------------------------------------------------

def _line(T=20.0):
    return simulation_config(R1, [0.0], 30.0, 0.1, 0.05, T, {}, {}, bump([0.0], 1.0, 0.01))


def test_classification_outcomes():
    cfg = _line()
    assert classify_zero_state(cfg, make_reaction("-s")).classification == "converges_uniformly_to_zero"
    v = classify_zero_state(cfg, make_reaction("s"))
    assert v.classification == "grows_unbounded" and v.growth_ratio > 10
    v = classify_zero_state(cfg, make_reaction(KPP))
    # the front has not reached the outer probes yet
    assert v.classification == "locally_repelled"
    assert v.window_envelopes[0] > 0.5
    out = v.to_json()
    assert out["classification"] == "locally_repelled" and "rule" in out


def test_drifted_front_leaves_the_window():
    cfg = simulation_config(R1, [0.0], 80.0, 0.1, 0.02, 40.0, {"b": [3.0]}, {}, bump([0.0], 1.0, 1.0))
    v = classify_zero_state(cfg, make_reaction(KPP), probes=[[[-10.0, 10.0]], [[-60.0, -50.0]]])
    assert v.classification == "converges_locally_to_zero"


def test_thresholds_can_be_reset():
    cfg = _line(T=4.0)
    tr = evolve(cfg, make_reaction("-s"))
    probes = default_probes(cfg.grid)
    assert classify_trajectory(tr, probes).classification == "converges_uniformly_to_zero"
    assert classify_trajectory(tr, probes, {"zero": 1e-9}).classification == "inconclusive"


def test_default_probes():
    g = truncate(R1, [2.0], 40.0, 0.5)
    assert default_probes(g) == [[[-8.0, 12.0]], [[12.0, 32.0]], [[-28.0, -8.0]]]


# fronts --------------------------------------------------------------------------------------------

def test_kpp_front_speed_short_horizon():
    cfg = simulation_config(R1, [0.0], 100.0, 0.1, 0.02, 30.0, {}, {}, bump([0.0], 1.0, 1.0),
                            snapshot_every=0.5)
    speed = measure_front_speed(evolve(cfg, make_reaction(KPP)), window=(10.0, 30.0))
    # the logarithmic delay keeps the finite-time speed slightly below 2
    assert 1.85 < speed < 2.02


def test_drift_three_front_retreats():
    cfg = simulation_config(R1, [0.0], 60.0, 0.1, 0.02, 20.0, {"b": [3.0]}, {}, bump([0.0], 1.0, 1.0),
                            snapshot_every=0.5)
    speed = measure_front_speed(evolve(cfg, make_reaction(KPP)), window=(5.0, 20.0))
    assert speed == pytest.approx(-1.0, abs=0.2)


def test_no_front_under_decay():
    cfg = simulation_config(R1, [0.0], 20.0, 0.1, 0.02, 5.0, {}, {}, bump([0.0], 1.0, 1.0), snapshot_every=0.5)
    tr = evolve(cfg, make_reaction("-s"))
    with pytest.raises(NoFront):
        measure_front_speed(tr)
    with pytest.raises(ConfigError):
        measure_front_speed(tr, level=1.5)


# hair trigger -----------------------------------------------------------------------------------------

def test_hair_trigger_on_the_line():
    rep = hair_trigger_experiment(R1, 1.0, KPP, bump([0.0], 0.5, 0.01), 30.0, [[[-3.0, 3.0]], [[8.0, 10.0]]],
                                  (20.0, 30.0), 0.1, 0.05)
    assert rep.inf_liminf_estimate > 0.5
    assert not rep.truncation_sensitive
    neg = hair_trigger_experiment(R1, 1.0, "-s", bump([0.0], 0.5, 0.01), 30.0, [[[-3.0, 3.0]]],
                                  (20.0,), 0.1, 0.05)
    assert neg.final_sup < 1e-6


# snapshot formats --------------------------------------------------------------------------------------

def test_oblp_round_trip(tmp_path):
    cfg = simulation_config(STRIP, [0.0, 0.0], 2.0, 0.1, 0.05, 1.0, {}, {"kind": "neumann"},
                            bump([0.0, 0.0], 1.0, 1.0), snapshot_every=0.25)
    tr = evolve(cfg, make_reaction(KPP))
    path = tmp_path / "run.oblp"
    write_oblp(tr, path)
    pts, times, vals = read_oblp(path)
    assert np.array_equal(pts, tr.points)
    assert np.array_equal(times, tr.times)
    assert np.array_equal(vals, tr.values)
    buf = io.BytesIO()
    write_oblp(tr, buf)
    assert buf.getvalue() == path.read_bytes()
    assert buf.getvalue()[:4] == b"OBLP"
    (tmp_path / "bad").write_bytes(b"NOPE")
    with pytest.raises(ConfigError):
        read_oblp(tmp_path / "bad")
    write_csv(tr, tmp_path / "run.csv")
    lines = (tmp_path / "run.csv").read_text().splitlines()
    assert lines[0] == "t,node_x,node_y,u"
    assert len(lines) == 1 + tr.values.size
