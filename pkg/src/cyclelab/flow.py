"""Adaptive integration of planar fields, section crossings and path functionals.

The stepper is Dormand-Prince 8(5,3) with its 7th-order dense output (tableau
taken from :class:`scipy.integrate.DOP853`), written so that a whole batch of
trajectories advances together, each with its own step size. The return map
of a cycle detector needs hundreds of independent orbits per section, and
stepping them as numpy columns is what keeps that affordable.

Two functionals can be carried along an orbit as extra state components:

``divergence``
    ``H(t) = int_0^t div(z(s)) ds``; over one period this is the characteristic
    exponent of the cycle.
``perko``
    ``I(t) = int_0^t exp(-H(s)) (P^2 + Q^2)(z(s)) ds``, the integral that governs
    how a rotated family moves its cycles (normalising constant set to 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import DOP853 as _DOP

FUNCTIONALS = ("divergence", "perko")

_A = np.asarray(_DOP.A, dtype=float)
_B = np.asarray(_DOP.B, dtype=float)
_E3 = np.asarray(_DOP.E3, dtype=float)
_E5 = np.asarray(_DOP.E5, dtype=float)
_D = np.asarray(_DOP.D, dtype=float)
_A_EXTRA = np.asarray(_DOP.A_EXTRA, dtype=float)
_N_STAGES = int(_DOP.n_stages)
_ERR_EXP = -1.0 / (int(_DOP.error_estimator_order) + 1)
_SAFETY, _MIN_FACTOR, _MAX_FACTOR = 0.9, 0.2, 10.0


class FlowError(RuntimeError):
    pass


class StepLimitExceeded(FlowError):
    pass


class BlowUp(FlowError):
    pass


class NoCrossing(FlowError):
    pass


class TangentialCrossing(FlowError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = math.inf
    max_time: float = 1e3
    max_steps: int = 100_000
    blowup: float = 1e6
    # crossings with |X.n|/|X| below this are rejected as tangential
    min_angle: float = 1e-3
    # in a batch, give up on columns running this many times the longest return seen
    return_time_factor: float = 50.0

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0 and self.max_step > 0):
            raise ValueError("tolerances and max_step must be positive")
        if not (self.max_steps > 0 and self.max_time > 0 and self.blowup > 0
                and self.return_time_factor > 0):
            raise ValueError("max_steps, max_time and blowup must be positive")

    def halved(self) -> IntegratorConfig:
        return replace(self, rel_tol=self.rel_tol / 2, abs_tol=self.abs_tol / 2)


@dataclass
class Trajectory:
    """Accepted step points of one orbit; ``functionals`` holds running integrals."""

    times: np.ndarray
    points: np.ndarray  # shape (n, 2)
    functionals: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]


@dataclass(frozen=True)
class Crossing:
    point: tuple[float, float]
    time: float
    s: float
    functionals: dict[str, float]


@dataclass
class ReturnBatch:
    """Results of :func:`first_returns`; failed columns hold NaN.

    ``status`` codes: 0 returned, 1 blow-up, 2 step limit, 3 no crossing
    (``max_time`` reached, speed collapsed onto an equilibrium, or running
    ``return_time_factor`` times the longest return of the batch), 4
    tangential crossing.
    """

    points: np.ndarray  # (2, N)
    times: np.ndarray
    s: np.ndarray
    status: np.ndarray
    functionals: dict[str, np.ndarray]

    @property
    def ok(self) -> np.ndarray:
        return self.status == 0


STATUS_TEXT = {0: "ok", 1: "blow-up", 2: "step limit", 3: "no crossing",
               4: "tangential crossing"}


class Reversed:
    """The same field with time reversed."""

    def __init__(self, field):
        self.field = field

    def __call__(self, x, y):
        u, v = self.field(x, y)
        return -u, -v

    def div(self, x, y):
        return -self.field.div(x, y)


def reverse(field):
    return field.field if isinstance(field, Reversed) else Reversed(field)


def _make_rhs(X, functionals):
    want_perko = "perko" in functionals
    want_div = want_perko or "divergence" in functionals
    m = 2 + want_div + want_perko

    def rhs(Z):
        out = np.empty_like(Z)
        u, v = X(Z[0], Z[1])
        out[0] = u
        out[1] = v
        if want_div:
            out[2] = X.div(Z[0], Z[1])
        if want_perko:
            out[3] = np.exp(-Z[2]) * (u * u + v * v)
        return out

    names = (["divergence"] if want_div else []) + (["perko"] if want_perko else [])
    return rhs, m, names


def _rms(a):
    return np.sqrt(np.mean(a * a, axis=0))


def _initial_step(rhs, Z, F, cfg):
    scale = cfg.abs_tol + np.abs(Z) * cfg.rel_tol
    d0 = _rms(Z / scale)
    d1 = _rms(F / scale)
    small = (d0 < 1e-5) | (d1 < 1e-5)
    h0 = np.where(small, 1e-6, 0.01 * d0 / np.where(small, 1.0, d1))
    h0 = np.minimum(h0, cfg.max_step)
    Z1 = Z + h0 * F
    d2 = _rms((rhs(Z1) - F) / scale) / h0
    dm = np.maximum(d1, d2)
    h1 = np.where(dm <= 1e-15, np.maximum(1e-6, h0 * 1e-3),
                  (0.01 / np.where(dm <= 1e-15, 1.0, dm)) ** (1.0 / 8))
    return np.minimum(np.minimum(100 * h0, h1), cfg.max_step)


def _dense_coeffs(rhs, z, f_old, f_new, z_new, K, h):
    """Interpolant coefficients for a block of accepted steps."""
    Kx = np.empty((16,) + z.shape)
    Kx[: _N_STAGES + 1] = K
    for s in range(_N_STAGES + 1, 16):
        a = _A_EXTRA[s - _N_STAGES - 1, :s]
        Kx[s] = rhs(z + h * np.tensordot(a, Kx[:s], axes=1))
    dz = z_new - z
    F = np.empty((7,) + z.shape)
    F[0] = dz
    F[1] = h * f_old - dz
    F[2] = 2 * dz - h * (f_new + f_old)
    F[3:] = h * np.tensordot(_D, Kx, axes=1)
    return F


def _interp(F, z, theta):
    y = np.zeros_like(z)
    for i, f in enumerate(F[::-1]):
        y += f
        y *= theta if i % 2 == 0 else (1 - theta)
    return y + z


class _Event:
    """Crossing of the line through ``base`` along ``direction``."""

    def __init__(self, section, directions):
        self.base = np.asarray(section.base, dtype=float)
        d = np.asarray(section.direction, dtype=float)
        self.d = d
        self.n = np.array([-d[1], d[0]])
        self.half_length = section.half_length
        self.sign = np.asarray(directions, dtype=float)

    def g(self, Z):
        return (Z[0] - self.base[0]) * self.n[0] + (Z[1] - self.base[1]) * self.n[1]

    def s(self, Z):
        return (Z[0] - self.base[0]) * self.d[0] + (Z[1] - self.base[1]) * self.d[1]


def _march(X, Z0, cfg, *, functionals=(), t_end=None, event=None, record=False):
    """Advance every column of ``Z0`` (rows x, y) until its stopping condition.

    Returns ``(t, Z, status, s, trace)``; ``trace`` is a list of (t, Z) per
    accepted step when ``record`` is set (single trajectory only).
    """
    rhs, m, names = _make_rhs(X, functionals)
    Z0 = np.asarray(Z0, dtype=float)
    N = Z0.shape[1]
    Z = np.zeros((m, N))
    Z[:2] = Z0
    t = np.zeros(N)
    F = rhs(Z)
    h = _initial_step(rhs, Z, F, cfg)
    status = np.full(N, -1)
    nsteps = np.zeros(N, dtype=int)
    rejected = np.zeros(N, dtype=bool)
    s_out = np.full(N, np.nan)
    out_t = np.full(N, np.nan)
    out_Z = np.full((m, N), np.nan)
    horizon = cfg.max_time if t_end is None else t_end
    g_old = None
    if event is not None:
        # starts on the section sit at g = 0 up to rounding; do not count them
        g_old = event.g(Z)
        size = np.abs(Z0[0] - event.base[0]) + np.abs(Z0[1] - event.base[1]) + 1.0
        g_old = np.where(np.abs(g_old) <= 1e-12 * size, 0.0, g_old)
    r0 = np.hypot(Z0[0], Z0[1])
    speed0 = np.hypot(F[0], F[1])
    longest = 0.0
    trace = [(0.0, Z[:, 0].copy())] if record else None

    while True:
        idx = np.flatnonzero(status < 0)
        if idx.size == 0:
            break
        z, f, tt = Z[:, idx], F[:, idx], t[idx]
        hh = np.minimum(h[idx], horizon - tt)
        K = np.empty((_N_STAGES + 1, m, idx.size))
        K[0] = f
        for s in range(1, _N_STAGES):
            K[s] = rhs(z + hh * np.tensordot(_A[s, :s], K[:s], axes=1))
        with np.errstate(all="ignore"):
            z_new = z + hh * np.tensordot(_B, K[:_N_STAGES], axes=1)
            K[_N_STAGES] = rhs(z_new)
            scale = cfg.abs_tol + np.maximum(np.abs(z), np.abs(z_new)) * cfg.rel_tol
            e5 = np.sum((np.tensordot(_E5, K, axes=1) / scale) ** 2, axis=0)
            e3 = np.sum((np.tensordot(_E3, K, axes=1) / scale) ** 2, axis=0)
            denom = e5 + 0.01 * e3
            err = np.where(denom > 0, hh * e5 / np.sqrt(np.where(denom > 0, denom, 1.0) * m), 0.0)
            good = np.isfinite(err) & np.all(np.isfinite(z_new), axis=0)
            err = np.where(good, err, np.inf)
            acc = err < 1
            fac = np.where(err == 0, _MAX_FACTOR,
                           np.minimum(_MAX_FACTOR, _SAFETY * err ** _ERR_EXP))
            fac = np.where(acc & rejected[idx], np.minimum(fac, 1.0), fac)
            fac = np.where(acc, fac, np.maximum(_MIN_FACTOR, _SAFETY * np.where(good, err, 1.0) ** _ERR_EXP))
            fac = np.where(good, fac, _MIN_FACTOR)
        h_new = np.minimum(hh * fac, cfg.max_step)
        # a step that had to land on the horizon should not shrink the next one
        h_new = np.where(acc & (hh < h[idx]), np.maximum(h_new, h[idx]), h_new)
        h[idx] = h_new
        rejected[idx] = ~acc
        # step underflow: a singularity in finite time if the state has grown
        tiny = h_new < 1e-13 * np.maximum(1.0, np.abs(tt))
        if tiny.any():
            grown = np.hypot(z[0], z[1]) > 100 * np.maximum(1.0, r0[idx])
            status[idx[tiny & grown]] = 1
            status[idx[tiny & ~grown]] = 2
            acc &= ~tiny

        a = np.flatnonzero(acc)
        if a.size == 0:
            continue
        ia = idx[a]
        t_new = tt[a] + hh[a]
        zn = z_new[:, a]
        nsteps[ia] += 1

        if event is not None:
            gn = event.g(zn)
            sg = event.sign[ia]
            go = g_old[ia]
            cross = (sg * go < 0) & (sg * gn >= 0)
            g_old[ia] = gn
            c = np.flatnonzero(cross)
            if c.size:
                ic = ia[c]
                hc = hh[a][c]
                Fd = _dense_coeffs(rhs, z[:, a][:, c], f[:, a][:, c], K[_N_STAGES][:, a][:, c],
                                   zn[:, c], K[:, :, a][:, :, c], hc)
                z0 = z[:, a][:, c]
                lo = np.zeros(c.size)
                hi = np.ones(c.size)
                sgc = sg[c]
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    gm = sgc * event.g(_interp(Fd, z0, mid))
                    below = gm < 0
                    lo = np.where(below, mid, lo)
                    hi = np.where(below, hi, mid)
                zc = _interp(Fd, z0, hi)
                sc = event.s(zc)
                inside = np.abs(sc) <= event.half_length
                u, v = X(zc[0], zc[1])
                speed = np.hypot(u, v)
                flux = np.abs(u * event.n[0] + v * event.n[1])
                transversal = flux > cfg.min_angle * speed
                done = inside
                status[ic[done & transversal]] = 0
                status[ic[done & ~transversal]] = 4
                out_t[ic[done]] = tt[a][c][done] + hi[done] * hc[done]
                out_Z[:, ic[done]] = zc[:, done]
                s_out[ic[done]] = sc[done]
                if done.any():
                    longest = max(longest, float(np.max(out_t[ic[done]])))
                if record and done.any():
                    trace.append((float(out_t[0]), out_Z[:, 0].copy()))

        t[ia] = t_new
        Z[:, ia] = zn
        F[:, ia] = K[_N_STAGES][:, a]
        if record and status[0] < 0:
            trace.append((float(t_new[0]), zn[:, 0].copy()))
        pending = status[ia] < 0
        big = np.hypot(zn[0], zn[1]) > cfg.blowup
        status[ia[pending & big]] = 1
        pending &= ~big
        status[ia[pending & (nsteps[ia] >= cfg.max_steps)]] = 2
        pending &= nsteps[ia] < cfg.max_steps
        at_end = t_new >= horizon * (1 - 1e-15)
        if event is None:
            fin = ia[pending & at_end]
            status[fin] = 0
            out_t[fin] = t[fin]
            out_Z[:, fin] = Z[:, fin]
        else:
            status[ia[pending & at_end]] = 3
            # speed down a millionfold: settling onto an equilibrium, not returning
            fz = K[_N_STAGES][:2, a]
            still = np.hypot(fz[0], fz[1]) < 1e-6 * speed0[ia]
            status[ia[pending & ~at_end & still]] = 3
            if longest > 0:
                # most likely trapped by an attractor that misses the section
                late = t_new > cfg.return_time_factor * longest
                status[ia[pending & ~at_end & late]] = 3

    return out_t, out_Z, status, s_out, names, trace


def integrate(X, x0, cfg: IntegratorConfig | None = None, t_end: float | None = None,
              functionals=()) -> Trajectory:
    """Integrate one orbit from ``x0`` over ``[0, t_end]`` (default ``cfg.max_time``)."""
    cfg = cfg or IntegratorConfig()
    Z0 = np.array([[float(x0[0])], [float(x0[1])]])
    t, Z, status, _, names, trace = _march(X, Z0, cfg, functionals=functionals,
                                           t_end=t_end if t_end is not None else cfg.max_time,
                                           record=True)
    if status[0] == 1:
        raise BlowUp(f"orbit escaped to infinity near t={trace[-1][0]:.6g}")
    if status[0] == 2:
        raise StepLimitExceeded(f"step limit or step underflow near t={trace[-1][0]:.6g}")
    times = np.array([p[0] for p in trace])
    states = np.array([p[1] for p in trace])
    return Trajectory(times=times, points=states[:, :2].copy(),
                      functionals={n: states[:, 2 + k].copy() for k, n in enumerate(names)})


def first_returns(X, starts, section, directions, cfg: IntegratorConfig | None = None,
                  functionals=()) -> ReturnBatch:
    """First crossing of ``section`` (in the given sense) for each start column.

    ``starts`` has shape (2, N); ``directions`` holds +1/-1 per column, where +1
    means crossing towards the side the section normal ``(-d_y, d_x)`` points to.
    """
    cfg = cfg or IntegratorConfig()
    starts = np.asarray(starts, dtype=float).reshape(2, -1)
    N = starts.shape[1]
    directions = np.broadcast_to(np.asarray(directions, dtype=float), (N,))
    ev = _Event(section, directions)
    t, Z, status, s, names, _ = _march(X, starts, cfg, functionals=functionals, event=ev)
    bad = status != 0
    t[bad] = np.nan
    s[bad] = np.nan
    Z[:, bad] = np.nan
    return ReturnBatch(points=Z[:2], times=t, s=s, status=status,
                       functionals={n: Z[2 + k] for k, n in enumerate(names)})


def next_crossing(X, start, section, direction: int, cfg: IntegratorConfig | None = None,
                  functionals=()) -> Crossing:
    """First crossing of ``section`` with the requested sense, refined on the interpolant."""
    rb = first_returns(X, np.array([[start[0]], [start[1]]], dtype=float), section,
                       [direction], cfg, functionals)
    st = int(rb.status[0])
    if st == 1:
        raise BlowUp("orbit escaped before reaching the section")
    if st == 2:
        raise StepLimitExceeded("step limit reached before reaching the section")
    if st == 3:
        raise NoCrossing("no crossing before max_time")
    if st == 4:
        raise TangentialCrossing("flow is nearly tangent to the section at the crossing")
    return Crossing(point=(float(rb.points[0, 0]), float(rb.points[1, 0])),
                    time=float(rb.times[0]), s=float(rb.s[0]),
                    functionals={k: float(v[0]) for k, v in rb.functionals.items()})


def integrand_samples(X, traj: Trajectory, integrand: str) -> np.ndarray:
    """Integrand values at the trajectory's sample points."""
    x, y = traj.points[:, 0], traj.points[:, 1]
    if integrand == "divergence":
        return np.asarray(X.div(x, y), dtype=float) * np.ones_like(x)
    if integrand == "perko":
        if "divergence" not in traj.functionals:
            raise ValueError("perko samples need the divergence functional on the trajectory")
        u, v = X(x, y)
        return np.exp(-traj.functionals["divergence"]) * (u * u + v * v)
    raise ValueError(f"unknown integrand {integrand!r}; expected one of {FUNCTIONALS}")


def path_integral(X, traj: Trajectory, integrand: str,
                  cfg: IntegratorConfig | None = None) -> float:
    """``int_0^T`` of the named integrand along ``traj``.

    Uses the running integral carried by the trajectory when present, otherwise
    re-integrates the orbit from its first point with the functional attached.
    """
    if integrand not in FUNCTIONALS:
        raise ValueError(f"unknown integrand {integrand!r}; expected one of {FUNCTIONALS}")
    if integrand in traj.functionals:
        return float(traj.functionals[integrand][-1])
    again = integrate(X, traj.points[0], cfg, t_end=float(traj.times[-1]),
                      functionals=(integrand,))
    return float(again.functionals[integrand][-1])


def return_orbit(X, start, section, direction: int, cfg: IntegratorConfig | None = None,
                 functionals=()) -> tuple[Trajectory, Crossing]:
    """Like :func:`next_crossing` but also returns the sampled orbit up to the return."""
    cfg = cfg or IntegratorConfig()
    ev = _Event(section, [direction])
    Z0 = np.array([[float(start[0])], [float(start[1])]])
    t, Z, status, s, names, trace = _march(X, Z0, cfg, functionals=functionals,
                                           event=ev, record=True)
    st = int(status[0])
    if st != 0:
        exc = {1: BlowUp, 2: StepLimitExceeded, 3: NoCrossing, 4: TangentialCrossing}[st]
        raise exc(STATUS_TEXT[st])
    times = np.array([p[0] for p in trace])
    states = np.array([p[1] for p in trace])
    traj = Trajectory(times=times, points=states[:, :2].copy(),
                      functionals={n: states[:, 2 + k].copy() for k, n in enumerate(names)})
    cross = Crossing(point=(float(Z[0, 0]), float(Z[1, 0])), time=float(t[0]), s=float(s[0]),
                     functionals={n: float(Z[2 + k, 0]) for k, n in enumerate(names)})
    return traj, cross
