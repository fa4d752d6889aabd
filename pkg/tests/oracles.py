"""Reference computations that do not touch cyclelab.

Everything here uses scipy's solve_ivp or closed forms, so the values they
produce can be used to check the package. The numbers frozen in the tests
were produced by these functions; ``test_oracles.py`` recomputes them.
"""

import math

import numpy as np
from scipy.integrate import solve_ivp

TIGHT = dict(method="DOP853", rtol=1e-12, atol=1e-14)


def vdp_rhs(mu):
    def f(t, z):
        x, y = z[0], z[1]
        return [y, -x + mu * (1 - x * x) * y]
    return f


def vdp_cycle(mu=1.0, transient=200.0):
    """Amplitude, period and characteristic exponent of the van der Pol cycle.

    The orbit from (0.5, 0) is integrated past its transient, then two
    successive downward crossings of y = 0 (where x is maximal, since x' = y)
    give the amplitude and period. The exponent is the divergence integral
    over that period.
    """
    f = vdp_rhs(mu)
    sol = solve_ivp(f, (0, transient), [0.5, 0.0], **TIGHT)
    z0 = sol.y[:, -1]

    def down(t, z):
        return z[1]
    down.direction = -1

    def aug(t, w):
        x, y = w[0], w[1]
        return [y, -x + mu * (1 - x * x) * y, mu * (1 - x * x)]

    s1 = solve_ivp(aug, (0, 50), [z0[0], z0[1], 0.0], events=down, **TIGHT)
    ta = s1.t_events[0]
    za = s1.y_events[0]
    amplitude = float(za[1][0])
    period = float(ta[1] - ta[0])
    exponent = float(za[1][2] - za[0][2])
    return amplitude, period, exponent


def vdp_displacement_signs(mu=1.0, inner=0.5, outer=3.5):
    """Sign of x-gain after one turn from (inner, 0) and (outer, 0) on y = 0.

    A start inside the cycle moves out and one outside moves in.
    """
    f = vdp_rhs(mu)

    def down(t, z):
        return z[1]
    down.direction = -1
    out = []
    for x0 in (inner, outer):
        s = solve_ivp(f, (0, 50), [x0, 0.0], events=down, **TIGHT)
        # the start itself is on y = 0 with y' < 0; the first event after t = 0 is the return
        tev = [t for t in s.t_events[0] if t > 1e-9]
        k = list(s.t_events[0]).index(tev[0])
        out.append(float(s.y_events[0][k][0] - x0))
    return out


def ring_radial_return(r0, k_turns=1):
    """Radius after one turn of the sin-ring field: r' = r sin(r^2), theta' = 1."""
    s = solve_ivp(lambda t, r: [r[0] * math.sin(r[0] ** 2)], (0, 2 * math.pi * k_turns), [r0],
                  **TIGHT)
    return float(s.y[0, -1])


def ring_radius(k):
    return math.sqrt(k * math.pi)


def ring_exponent(k):
    # div = 2 sin r^2 + 2 r^2 cos r^2 = 2 k pi (-1)^k on r^2 = k pi, period 2 pi
    return 2 * math.pi * 2 * k * math.pi * (-1) ** k


def polar_rotated_radii(power, alpha, rmax=2.0, n=200001):
    """Cycle radii of rotate((-y + x f, x + y f), alpha) with f = (r^2 - 1)^power.

    In polar form r' = r (f cos(alpha) - sin(alpha)), theta' = cos(alpha) + f sin(alpha);
    the cycles are the sign changes of the radial rate, located on a fine grid
    and then polished by bisection.
    """
    def g(r):
        return (r * r - 1) ** power * math.cos(alpha) - math.sin(alpha)

    r = np.linspace(1e-3, rmax, n)
    v = (r * r - 1) ** power * math.cos(alpha) - math.sin(alpha)
    roots = []
    for i in np.flatnonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0):
        lo, hi = r[i], r[i + 1]
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if np.sign(g(mid)) == np.sign(g(lo)):
                lo = mid
            else:
                hi = mid
        roots.append(0.5 * (lo + hi))
    # exact zeros on the grid (the unrotated multiple roots)
    roots += [float(x) for x in r[v == 0]]
    return sorted(roots)


def bump_det(a, b, eps, delta):
    """Determinant of [[ab, (b+eps) b], [-(a+delta) a, -ab]], expanded by hand.

    -a^2 b^2 + ab (a + delta)(b + eps) = ab (a eps + b delta + delta eps).
    """
    return a * b * (a * eps + b * delta + delta * eps)


def polar_focus_rate(sign):
    """Radial rate r' = sign * r^3 of (-y + sign x r^2, x + sign y r^2): stable iff sign < 0."""
    return sign
