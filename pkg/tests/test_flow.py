import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cyclelab import flow
from cyclelab.cycles import Section
from cyclelab.flow import (BlowUp, IntegratorConfig, NoCrossing, StepLimitExceeded,
                           TangentialCrossing, first_returns, integrand_samples, integrate,
                           next_crossing, path_integral, return_orbit)
from cyclelab.polyfield import Poly2, VectorField

import oracles

x, y = Poly2.x(), Poly2.y()
HARMONIC = VectorField(-y, x)
RADIAL = VectorField(x, y)
X_AXIS = Section((0.0, 0.0), (1.0, 0.0), 5.0)

# frozen from oracles.vdp_cycle(): transient solve_ivp run, crossings of y = 0
VDP_AMPLITUDE = 2.00861986087476
VDP_PERIOD = 6.663286859322964
VDP_EXPONENT = -7.058932808797077


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(rel_tol=0)
    with pytest.raises(ValueError):
        IntegratorConfig(max_steps=0)
    cfg = IntegratorConfig().halved()
    assert cfg.rel_tol == 5e-11 and cfg.abs_tol == 5e-13


def test_harmonic_full_turn():
    tr = integrate(HARMONIC, (1.0, 0.0), t_end=2 * math.pi)
    assert tr.times[0] == 0 and np.all(np.diff(tr.times) > 0)
    assert tr.times[-1] == pytest.approx(2 * math.pi, abs=1e-12)
    assert np.hypot(*(tr.end - [1.0, 0.0])) < 1e-8


def test_linear_growth():
    tr = integrate(RADIAL, (1.0, 0.0), t_end=1.0)
    assert abs(tr.end[0] - math.e) < 1e-8 and abs(tr.end[1]) < 1e-12


def test_ring_circle_is_invariant(ring):
    r = math.sqrt(math.pi)
    tr = integrate(ring, (r, 0.0), t_end=2 * math.pi)
    assert np.max(np.abs(np.hypot(tr.points[:, 0], tr.points[:, 1]) - r)) < 1e-6


def test_next_crossing_harmonic():
    c = next_crossing(HARMONIC, (1.0, 0.0), X_AXIS, +1)
    assert abs(c.s - 1.0) < 1e-8 and abs(c.time - 2 * math.pi) < 1e-8
    # slightly advanced start
    a = 1e-3
    c = next_crossing(HARMONIC, (math.cos(a), math.sin(a)), X_AXIS, +1)
    assert abs(c.point[0] - 1.0) < 1e-8 and abs(c.point[1]) < 1e-10
    assert abs(c.time - (2 * math.pi - a)) < 1e-8


def test_next_crossing_ring_matches_radial_oracle(ring):
    for r0 in (math.sqrt(math.pi), 1.5, 2.0):
        c = next_crossing(ring, (r0, 0.0), X_AXIS, +1)
        assert abs(c.time - 2 * math.pi) < 1e-8
        assert abs(c.s - oracles.ring_radial_return(r0)) < 1e-8


def test_next_crossing_vdp_on_cycle(vdp):
    # on y = 0 with x > 0 the flow points down (y' = -x)
    c = next_crossing(vdp, (VDP_AMPLITUDE, 0.0), X_AXIS, -1, functionals=("divergence",))
    assert abs(c.s - VDP_AMPLITUDE) < 1e-6
    assert abs(c.time - VDP_PERIOD) < 1e-6
    assert c.functionals["divergence"] < 0
    assert abs(c.functionals["divergence"] - VDP_EXPONENT) < 1e-6


def test_crossing_sense_is_respected():
    # the harmonic orbit crosses the x-axis line downward at (-1, 0), outside the ray
    sec = Section((-2.0, 0.0), (1.0, 0.0), 4.0)
    up = next_crossing(HARMONIC, (0.0, -1.0), sec, +1)
    down = next_crossing(HARMONIC, (0.0, -1.0), sec, -1)
    assert up.point[0] == pytest.approx(1.0) and down.point[0] == pytest.approx(-1.0)
    assert up.time == pytest.approx(math.pi / 2) and down.time == pytest.approx(1.5 * math.pi)


def test_first_returns_batch_matches_single(vdp):
    s = np.array([0.5, 1.0, 3.0])
    pts = np.vstack([s, np.zeros(3)])
    rb = first_returns(vdp, pts, X_AXIS, [-1, -1, -1])
    assert rb.ok.all()
    for k in range(3):
        c = next_crossing(vdp, (s[k], 0.0), X_AXIS, -1)
        assert rb.s[k] == pytest.approx(c.s, abs=1e-12)


def test_errors():
    with pytest.raises(TangentialCrossing):
        next_crossing(VectorField(Poly2.const(1.0), Poly2.const(1e-5)), (-1.0, -1e-5),
                      Section((0.0, 0.0), (1.0, 0.0), 1.0), +1)
    with pytest.raises(NoCrossing):
        next_crossing(VectorField(Poly2.const(1.0), Poly2()), (0.0, 1.0), X_AXIS, +1,
                      IntegratorConfig(max_time=10.0))
    with pytest.raises(BlowUp):
        integrate(VectorField(x ** 2, Poly2()), (1.0, 0.0), t_end=2.0)
    with pytest.raises(StepLimitExceeded):
        integrate(HARMONIC, (1.0, 0.0), IntegratorConfig(max_steps=5), t_end=100.0)


def test_batch_status_codes():
    X = VectorField(x ** 2 - y, x)
    pts = np.array([[0.5, 3.0], [0.0, 0.0]])
    rb = first_returns(X, pts, X_AXIS, [+1, +1], IntegratorConfig(max_time=50.0))
    assert set(rb.status.tolist()) <= set(flow.STATUS_TEXT)
    assert np.isnan(rb.s[rb.status != 0]).all()


def test_path_integral_harmonic():
    for k in (1, 3):
        tr = integrate(HARMONIC, (1.0, 0.0), t_end=2 * math.pi * k, functionals=("divergence",))
        assert abs(path_integral(HARMONIC, tr, "divergence")) < k * 1e-9


def test_path_integral_recomputes_when_not_carried(vdp):
    traj, cross = return_orbit(vdp, (VDP_AMPLITUDE, 0.0), X_AXIS, -1)
    assert "divergence" not in traj.functionals
    h = path_integral(vdp, traj, "divergence")
    assert abs(h - VDP_EXPONENT) < 1e-6


def test_vdp_exponent_matches_return_slope(vdp):
    h = 1e-5
    a = next_crossing(vdp, (VDP_AMPLITUDE - h, 0.0), X_AXIS, -1).s
    b = next_crossing(vdp, (VDP_AMPLITUDE + h, 0.0), X_AXIS, -1).s
    slope = (b - a) / (2 * h)
    assert math.log(slope) == pytest.approx(VDP_EXPONENT, rel=1e-4)


def test_perko_integrand_positive_radial():
    tr = integrate(RADIAL, (0.3, -0.2), t_end=2.0, functionals=("perko",))
    assert np.all(integrand_samples(RADIAL, tr, "perko") > 0)
    assert path_integral(RADIAL, tr, "perko") > 0


@pytest.mark.parametrize("which", ["vdp", "ring"])
def test_perko_integrand_positive_on_cycles(which, vdp, ring):
    X, start, d = (vdp, (VDP_AMPLITUDE, 0.0), -1) if which == "vdp" else \
        (ring, (math.sqrt(2 * math.pi), 0.0), +1)
    traj, _ = return_orbit(X, start, X_AXIS, d, functionals=("perko",))
    assert np.all(integrand_samples(X, traj, "perko") > 0)


def test_unknown_integrand():
    tr = integrate(HARMONIC, (1.0, 0.0), t_end=1.0)
    with pytest.raises(ValueError):
        path_integral(HARMONIC, tr, "energy")
    with pytest.raises(ValueError):
        integrand_samples(HARMONIC, tr, "perko")


def test_tolerance_halving_moves_crossings_little(vdp, ring):
    cfg = IntegratorConfig()
    for X, start, d in ((vdp, (0.5, 0.0), -1), (ring, (2.0, 0.0), +1)):
        a = next_crossing(X, start, X_AXIS, d, cfg)
        b = next_crossing(X, start, X_AXIS, d, cfg.halved())
        assert abs(a.s - b.s) < 10 * cfg.rel_tol * max(1.0, abs(a.s))


def test_reversed_field():
    R = flow.Reversed(HARMONIC)
    assert flow.reverse(R) is HARMONIC
    c = next_crossing(R, (1.0, 0.0), X_AXIS, -1)
    assert abs(c.time - 2 * math.pi) < 1e-8


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 3.0), st.integers(1, 3))
def test_harmonic_divergence_vanishes(r, k):
    tr = integrate(HARMONIC, (r, 0.0), t_end=2 * math.pi * k, functionals=("divergence",))
    assert abs(path_integral(HARMONIC, tr, "divergence")) <= k * 1e-9


@settings(max_examples=15, deadline=None)
@given(st.floats(0.3, 2.5), st.floats(-1.0, 1.0))
def test_perko_samples_positive_anywhere(a, b):
    X = VectorField(y + a * x - x ** 3, -x + b * y)
    tr = integrate(X, (0.7, 0.1), t_end=3.0, functionals=("perko",))
    assert np.all(integrand_samples(X, tr, "perko") > 0)
