"""The frozen reference numbers used elsewhere still come out of the oracles."""

import math

import pytest

import oracles
import test_cycles
import test_flow


def test_vdp_constants():
    amp, period, exponent = oracles.vdp_cycle()
    assert amp == pytest.approx(test_flow.VDP_AMPLITUDE, abs=1e-10)
    assert period == pytest.approx(test_flow.VDP_PERIOD, abs=1e-9)
    assert exponent == pytest.approx(test_flow.VDP_EXPONENT, abs=1e-8)


def test_vdp_displacement_signs():
    inner, outer = oracles.vdp_displacement_signs()
    assert inner == pytest.approx(test_cycles.VDP_D_INNER, abs=1e-9)
    assert outer == pytest.approx(test_cycles.VDP_D_OUTER, abs=1e-9)


def test_ring_closed_forms():
    for k in (1, 3, 5):
        r = oracles.ring_radius(k)
        # the attracting circles are invariant under the radial equation
        assert oracles.ring_radial_return(r) == pytest.approx(r, abs=1e-10)
    assert oracles.ring_radius(1) == pytest.approx(1.7724539, abs=1e-7)
    assert oracles.ring_radius(2) == pytest.approx(2.5066283, abs=1e-7)
    assert oracles.ring_radius(3) == pytest.approx(3.0699801, abs=1e-7)
    assert [math.copysign(1, oracles.ring_exponent(k)) for k in (1, 2, 3)] == [-1, 1, -1]


def test_polar_roots():
    assert oracles.polar_rotated_radii(2, 0.01) == pytest.approx(test_cycles.POLAR2_SPLIT, abs=1e-12)
    assert oracles.polar_rotated_radii(2, -0.01) == []
    assert len(oracles.polar_rotated_radii(3, 0.01)) == 1
    assert len(oracles.polar_rotated_radii(3, -0.01)) == 1


def test_bump_det_expansion():
    import numpy as np
    for a, b, e, d in [(1.0, 2.0, 0.1, -0.3), (-0.5, 3.0, 1e-2, 1e-2)]:
        J = np.array([[a * b, (b + e) * b], [-(a + d) * a, -a * b]])
        assert np.linalg.det(J) == pytest.approx(oracles.bump_det(a, b, e, d), rel=1e-12)
