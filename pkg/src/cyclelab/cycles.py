"""Return maps on transversal sections and limit-cycle detection.

A section is a segment ``base + s * direction``. The displacement of a point
on it is ``s' - s`` where ``s'`` is the coordinate of the first return in the
same crossing sense; zeros are periodic orbits. Detection casts one ray per
anchor (equilibria of index +1 plus user anchors), samples the displacement on
a grid, and refines every sign change and every tangential zero.

Repelling cycles are refined and measured with the time-reversed flow, where
they attract; otherwise the forward return from a point a few ulps off the
cycle would be useless after one turn.
"""

from __future__ import annotations

import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import flow
from .flow import IntegratorConfig, Reversed
from .polyfield import VectorField, rotate


class NoReturn(RuntimeError):
    """The orbit did not come back to the section."""


class IllConditioned(RuntimeError):
    """Multiplicity fit was inconsistent."""


class LostTrack(RuntimeError):
    """A continued cycle root left the section."""

    def __init__(self, message, alpha=None, last_alpha=None):
        super().__init__(message)
        self.alpha = alpha
        self.last_alpha = last_alpha


@dataclass(frozen=True)
class Section:
    base: tuple[float, float]
    direction: tuple[float, float]
    half_length: float

    def __post_init__(self):
        if abs(math.hypot(*self.direction) - 1.0) > 1e-12:
            raise ValueError("section direction must be a unit vector")
        if not self.half_length > 0:
            raise ValueError("half_length must be positive")

    @classmethod
    def ray(cls, anchor, angle: float, length: float) -> Section:
        return cls((float(anchor[0]), float(anchor[1])),
                   (math.cos(angle), math.sin(angle)), float(length))

    @property
    def normal(self) -> np.ndarray:
        return np.array([-self.direction[1], self.direction[0]])

    def point(self, s):
        s = np.asarray(s, dtype=float)
        return np.array([self.base[0] + s * self.direction[0],
                         self.base[1] + s * self.direction[1]])

    def coord(self, z) -> float:
        return ((z[0] - self.base[0]) * self.direction[0]
                + (z[1] - self.base[1]) * self.direction[1])

    def to_dict(self) -> dict:
        return {"base": list(self.base), "direction": list(self.direction),
                "half_length": self.half_length}

    @classmethod
    def from_dict(cls, d) -> Section:
        return cls(tuple(d["base"]), tuple(d["direction"]), d["half_length"])


@dataclass(frozen=True)
class Region:
    """``disk:cx,cy,r`` or ``annulus:cx,cy,r0,r1``."""

    center: tuple[float, float]
    r_outer: float
    r_inner: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "r_outer", float(self.r_outer))
        object.__setattr__(self, "r_inner", float(self.r_inner))

    @classmethod
    def disk(cls, cx, cy, r) -> Region:
        return cls((float(cx), float(cy)), float(r))

    @classmethod
    def parse(cls, spec: str) -> Region:
        m = re.fullmatch(r"\s*(disk|annulus)\s*:\s*(.*)", spec)
        if not m:
            raise ValueError(f"bad region {spec!r}; expected disk:cx,cy,r or annulus:cx,cy,r0,r1")
        try:
            vals = [float(v) for v in m.group(2).split(",")]
        except ValueError:
            raise ValueError(f"bad number in region {spec!r}") from None
        if m.group(1) == "disk":
            if len(vals) != 3 or not vals[2] > 0:
                raise ValueError(f"bad disk region {spec!r}")
            return cls((vals[0], vals[1]), vals[2])
        if len(vals) != 4 or not 0 <= vals[2] < vals[3]:
            raise ValueError(f"bad annulus region {spec!r}")
        return cls((vals[0], vals[1]), vals[3], vals[2])

    def __str__(self):
        cx, cy = self.center
        if self.r_inner > 0:
            return f"annulus:{cx!r},{cy!r},{self.r_inner!r},{self.r_outer!r}"
        return f"disk:{cx!r},{cy!r},{self.r_outer!r}"

    def contains(self, z) -> bool:
        r = math.hypot(z[0] - self.center[0], z[1] - self.center[1])
        return self.r_inner <= r <= self.r_outer

    def ray_length(self, anchor, d) -> float:
        """Distance from ``anchor`` along unit ``d`` to the outer circle."""
        w = np.asarray(anchor, dtype=float) - np.asarray(self.center)
        b = float(w @ d)
        disc = b * b - float(w @ w) + self.r_outer ** 2
        return -b + math.sqrt(disc) if disc > 0 else 0.0


@dataclass(frozen=True)
class Anchor:
    """Base point of a ray section; angle and length are chosen when omitted."""

    point: tuple[float, float]
    angle: float | None = None
    length: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "point", (float(self.point[0]), float(self.point[1])))
        for name in ("angle", "length"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, float(v))


@dataclass(frozen=True)
class DetectConfig:
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    grid_points: int = 400
    exponent_threshold: float = 1e-6
    # |D(s*)| below this confirms a cycle
    residual_tol: float = 1e-9
    annulus_tol: float = 1e-9
    annulus_run: int = 10
    newton_rel_step: float = 1e-6
    equilibrium_grid: int = 33
    auto_anchors: bool = True
    keep_scans: bool = False
    threads: int = 1
    # orbits farther than this multiple of the section's reach count as escaped
    escape_factor: float = 100.0

    def with_integrator(self, **kw) -> DetectConfig:
        return replace(self, integrator=replace(self.integrator, **kw))


@dataclass
class CycleRecord:
    section: Section
    s_star: float
    period: float
    exponent: float
    multiplicity_estimate: int
    hyperbolic: bool
    orientation: int
    section_index: int = 0
    point: tuple[float, float] = (0.0, 0.0)
    residual: float = 0.0
    orbit: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def stable(self) -> bool:
        return self.exponent < 0

    def extent(self, center=(0.0, 0.0)) -> float:
        """Largest distance from ``center`` to the sampled orbit."""
        pts = self.orbit if self.orbit is not None else np.array([self.point])
        return float(np.max(np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1])))

    def to_dict(self) -> dict:
        return {"section_index": self.section_index, "section": self.section.to_dict(),
                "s_star": self.s_star, "point": list(self.point), "period": self.period,
                "exponent": self.exponent,
                "multiplicity_estimate": self.multiplicity_estimate,
                "hyperbolic": self.hyperbolic, "orientation": self.orientation,
                "residual": self.residual}


@dataclass
class DetectionReport:
    field: str
    region: str
    sections: list[Section]
    cycles: list[CycleRecord]
    diagnostics: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    scans: list[tuple[np.ndarray, np.ndarray]] | None = field(default=None, repr=False)

    @property
    def pi(self) -> int:
        return len(self.cycles)

    @property
    def pi_h(self) -> int:
        return sum(c.hyperbolic for c in self.cycles)

    def to_dict(self) -> dict:
        return {"field": self.field, "region": self.region,
                "sections": [s.to_dict() for s in self.sections],
                "cycles": [c.to_dict() for c in self.cycles],
                "counts": {"pi": self.pi, "pi_h": self.pi_h},
                "diagnostics": list(self.diagnostics), "notes": list(self.notes)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def scan_csv(self) -> str:
        """Plot data ``section,s,D`` for every scanned grid point."""
        if self.scans is None:
            raise ValueError("detection ran without keep_scans")
        lines = ["section,s,D"]
        for k, (s, d) in enumerate(self.scans):
            lines.extend(f"{k},{a!r},{'' if not np.isfinite(b) else repr(float(b))}"
                         for a, b in zip(s.tolist(), d.tolist()))
        return "\n".join(lines) + "\n"


# rotated families ---------------------------------------------------------

class _RotatedField:
    def __init__(self, X, alpha):
        self.X, self.c, self.s = X, math.cos(alpha), math.sin(alpha)

    def __call__(self, x, y):
        u, v = self.X(x, y)
        return u * self.c - v * self.s, v * self.c + u * self.s

    def div(self, x, y):
        # div of (c P - s Q, c Q + s P) = c div X + s (P_y - Q_x)
        h = 1e-6
        u1, v1 = self.X(x, y + h)
        u0, v0 = self.X(x, y - h)
        u3, v3 = self.X(x + h, y)
        u2, v2 = self.X(x - h, y)
        curl = (u1 - u0) / (2 * h) - (v3 - v2) / (2 * h)
        return self.c * self.X.div(x, y) + self.s * curl


def rotated(X, alpha: float):
    """``X_alpha`` for polynomial fields (exact) or any planar field."""
    if alpha == 0:
        return X
    if isinstance(X, VectorField):
        return rotate(X, alpha)
    return _RotatedField(X, alpha)


# displacement maps ---------------------------------------------------------

def _integrator(cfg: DetectConfig, section: Section) -> IntegratorConfig:
    reach = math.hypot(*section.base) + section.half_length
    bound = cfg.escape_factor * max(reach, 1.0)
    if bound >= cfg.integrator.blowup:
        return cfg.integrator
    return replace(cfg.integrator, blowup=bound)


def _directions(X, section, pts, cfg):
    u, v = X(pts[0], pts[1])
    n = section.normal
    flux = u * n[0] + v * n[1]
    speed = np.hypot(u, v)
    ok = np.abs(flux) > cfg.integrator.min_angle * speed
    return np.where(flux >= 0, 1.0, -1.0), ok


def displacements(X, section: Section, s, cfg: DetectConfig | None = None) -> np.ndarray:
    """Batched displacement ``s' - s``; NaN where there is no transversal return."""
    cfg = cfg or DetectConfig()
    s = np.atleast_1d(np.asarray(s, dtype=float))
    pts = section.point(s)
    dirs, ok = _directions(X, section, pts, cfg)
    rb = flow.first_returns(X, pts, section, dirs, _integrator(cfg, section))
    d = rb.s - s
    d[~ok] = np.nan
    return d


def displacement(X, section: Section, s: float, cfg: DetectConfig | None = None) -> float:
    """``D(s) = s' - s`` for one point of ``section``."""
    cfg = cfg or DetectConfig()
    if abs(s) > section.half_length:
        raise ValueError("s outside the section")
    pts = section.point([s])
    dirs, ok = _directions(X, section, pts, cfg)
    if not ok[0]:
        raise NoReturn("flow is tangent to the section at the start point")
    rb = flow.first_returns(X, pts, section, dirs, _integrator(cfg, section))
    if rb.status[0] != 0:
        raise NoReturn(flow.STATUS_TEXT[int(rb.status[0])])
    return float(rb.s[0] - s)


def displacement_alpha(X, alpha: float, section: Section, s: float,
                       cfg: DetectConfig | None = None) -> float:
    """``D(alpha, s)`` for the rotated family."""
    return displacement(rotated(X, alpha), section, s, cfg)


def return_map_slope(X, section: Section, s: float, cfg: DetectConfig | None = None,
                     h: float | None = None) -> float:
    """``1 + D'(s)`` by central differences."""
    cfg = cfg or DetectConfig()
    h = h if h is not None else 1e-5 * max(1.0, abs(s))
    d = displacements(X, section, [s - h, s + h], cfg)
    return 1.0 + float(d[1] - d[0]) / (2 * h)


@dataclass(frozen=True)
class PerkoCheck:
    """Variation of the return with the rotation angle at one point."""

    s: float
    integral: float      # int exp(-int div) (P^2+Q^2) dt, constant set to 1
    derivative: float    # full variational value of dD/dalpha at alpha = 0
    period: float

    @property
    def constant(self) -> float:
        return self.derivative / self.integral


def perko_alpha_derivative(X, section: Section, s: float,
                           cfg: DetectConfig | None = None) -> PerkoCheck:
    """The rotation-sensitivity integral along the orbit from ``point(s)``.

    ``derivative`` closes the formula with the geometric factor
    ``exp(H(T)) / (X(p') ^ d)`` of the section, so it should agree with a finite
    difference of :func:`displacement_alpha`.
    """
    cfg = cfg or DetectConfig()
    p = section.point(s)
    dirs, ok = _directions(X, section, p.reshape(2, 1), cfg)
    c = flow.next_crossing(X, p, section, int(dirs[0]), _integrator(cfg, section),
                           functionals=("perko",))
    u, v = X(c.point[0], c.point[1])
    d = section.direction
    wedge = u * d[1] - v * d[0]
    deriv = math.exp(c.functionals["divergence"]) * c.functionals["perko"] / wedge
    return PerkoCheck(s=s, integral=c.functionals["perko"], derivative=deriv, period=c.time)


def fd_alpha_derivative(X, section: Section, s: float, cfg: DetectConfig | None = None,
                        h: float = 1e-4) -> float:
    """Central difference of ``D(alpha, s)`` in ``alpha`` at ``alpha = 0``."""
    return (displacement_alpha(X, h, section, s, cfg)
            - displacement_alpha(X, -h, section, s, cfg)) / (2 * h)


# equilibria -----------------------------------------------------------------

def _jac_arrays(X, x, y):
    if isinstance(X, VectorField):
        (a, b), (c, d) = X.jac(x, y)
        one = np.ones_like(x)
        return a * one, b * one, c * one, d * one
    h = 1e-6 * np.maximum(1.0, np.hypot(x, y))
    up, vp = X(x + h, y)
    um, vm = X(x - h, y)
    a, c = (up - um) / (2 * h), (vp - vm) / (2 * h)
    up, vp = X(x, y + h)
    um, vm = X(x, y - h)
    b, d = (up - um) / (2 * h), (vp - vm) / (2 * h)
    return a, b, c, d


def jacobian_at(X, z) -> np.ndarray:
    a, b, c, d = _jac_arrays(X, np.array([float(z[0])]), np.array([float(z[1])]))
    return np.array([[a[0], b[0]], [c[0], d[0]]])


def polish_equilibrium(X, guess, iters: int = 60):
    """Newton from ``guess``; returns the point or None."""
    x = np.array([float(guess[0])])
    y = np.array([float(guess[1])])
    for _ in range(iters):
        u, v = X(x, y)
        a, b, c, d = _jac_arrays(X, x, y)
        det = a * d - b * c
        if not np.all(np.isfinite(det)) or det[0] == 0:
            return None
        dx = (d * u - b * v) / det
        dy = (a * v - c * u) / det
        x, y = x - dx, y - dy
        if abs(dx[0]) + abs(dy[0]) < 1e-14 * max(1.0, abs(x[0]) + abs(y[0])):
            break
    u, v = X(x, y)
    if not (np.isfinite(u[0]) and np.isfinite(v[0])):
        return None
    if math.hypot(u[0], v[0]) > 1e-9 * max(1.0, math.hypot(x[0], y[0])):
        return None
    return float(x[0]), float(y[0])


def find_equilibria(X, region: Region, n: int = 33) -> list[tuple[tuple[float, float], np.ndarray]]:
    """Nondegenerate equilibria inside ``region`` (Newton from a seed grid)."""
    cx, cy = region.center
    r = region.r_outer * 1.05
    g = np.linspace(-r, r, n)
    x, y = np.meshgrid(cx + g, cy + g)
    x, y = x.ravel(), y.ravel()
    with np.errstate(all="ignore"):
        for _ in range(50):
            u, v = X(x, y)
            a, b, c, d = _jac_arrays(X, x, y)
            det = a * d - b * c
            det = np.where(det == 0, np.nan, det)
            x = x - (d * u - b * v) / det
            y = y - (a * v - c * u) / det
            far = ~np.isfinite(x) | ~np.isfinite(y) | (np.hypot(x - cx, y - cy) > 10 * r)
            x[far] = np.nan
            y[far] = np.nan
    with np.errstate(all="ignore"):
        u, v = X(x, y)
        ok = np.isfinite(x) & np.isfinite(y) & (np.hypot(u, v) < 1e-6 * np.maximum(1.0, np.hypot(x, y)))
    # collapse seeds that converged to the same point before polishing
    keys = sorted({(round(float(a), 6), round(float(b), 6)) for a, b in zip(x[ok], y[ok])})
    found: list[tuple[float, float]] = []
    for x0, y0 in keys:
        z = polish_equilibrium(X, (x0, y0))
        if z is None or not region.contains(z):
            continue
        if all(math.hypot(z[0] - w[0], z[1] - w[1]) > 1e-7 * max(1.0, r) for w in found):
            found.append(z)
    found.sort()
    return [(z, jacobian_at(X, z)) for z in found]


# detection ------------------------------------------------------------------

def choose_ray_angle(anchor, others, region, k: int = 16) -> float:
    """Among ``k`` equally spaced angles, the ray from ``anchor`` farthest from ``others``.

    Ties go to the smaller angle, so a lone anchor gets angle 0.
    """
    a = np.asarray(anchor, dtype=float)
    best, best_score = 0.0, -1.0
    for j in range(k):
        ang = 2 * math.pi * j / k
        d = np.array([math.cos(ang), math.sin(ang)])
        L = region.ray_length(a, d)
        score = math.inf
        for b in others:
            w = np.asarray(b, dtype=float) - a
            t = min(max(float(w @ d), 0.0), L)
            score = min(score, float(np.hypot(*(w - t * d))))
        if score > best_score + 1e-12:
            best, best_score = ang, score
    return best


def _multisect_root(f, lo, hi, flo, fhi, tol, pieces=8):
    """Shrink a sign-change bracket with batched interior evaluations.

    Returns ``(exact, lo, hi)`` or None when the end values do not bracket.
    """
    if not (np.isfinite(flo) and np.isfinite(fhi)) or np.sign(flo) * np.sign(fhi) > 0:
        return None
    if flo == 0:
        return float(lo), lo, hi
    if fhi == 0:
        return float(hi), lo, hi
    while hi - lo > tol:
        s = np.linspace(lo, hi, pieces + 2)[1:-1]
        d = f(s)
        if not np.all(np.isfinite(d)):
            return None
        pts = np.concatenate([[lo], s, [hi]])
        vals = np.concatenate([[flo], d, [fhi]])
        k = int(np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0])
        if vals[k + 1] == 0:
            return float(pts[k + 1]), lo, hi
        lo, hi, flo, fhi = pts[k], pts[k + 1], vals[k], vals[k + 1]
    return None, lo, hi


class _Scanner:
    """Root finding on one section for one time direction."""

    def __init__(self, X, section, cfg):
        self.X, self.section, self.cfg = X, section, cfg

    def D(self, s):
        return displacements(self.X, self.section, s, self.cfg)

    def root(self, lo, hi):
        """Multisection narrowing, then Newton, then multisection again if needed."""
        scale = max(1.0, abs(lo), abs(hi))
        dlo, dhi = self.D([lo, hi])
        res = _multisect_root(self.D, lo, hi, dlo, dhi, 1e-6 * scale)
        if res is None:
            return None
        exact, lo, hi = res
        if exact is not None:
            return exact
        dlo, dhi = self.D([lo, hi])
        s = 0.5 * (lo + hi)
        for _ in range(8):
            h = self.cfg.newton_rel_step * max(1.0, abs(s))
            d0, d1 = self.D([s, s + h])
            if not (np.isfinite(d0) and np.isfinite(d1)):
                break
            if abs(d0) < 1e-14 * scale:
                return s
            slope = (d1 - d0) / h
            if slope == 0:
                break
            step = -d0 / slope
            s_new = s + step
            if not lo <= s_new <= hi:
                break
            s = s_new
            if abs(step) < 1e-14 * scale:
                return s
        # Newton stalled (flat zero or inaccurate slope): finish by bisection
        res = _multisect_root(self.D, lo, hi, dlo, dhi, 1e-13 * scale)
        if res is None:
            return None
        exact, lo, hi = res
        if exact is not None:
            return exact
        return 0.5 * (lo + hi)

    def touch(self, lo, hi, rounds: int = 12, pieces: int = 8):
        """Minimise |D| on [lo, hi]; returns ('min', s) or ('brackets', list)."""
        for _ in range(rounds):
            s = np.linspace(lo, hi, pieces + 1)
            d = self.D(s)
            if not np.all(np.isfinite(d)):
                return None
            flips = np.flatnonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0)
            if flips.size:
                return "brackets", [(s[i], s[i + 1], d[i], d[i + 1]) for i in flips]
            k = int(np.argmin(np.abs(d)))
            lo, hi = s[max(k - 1, 0)], s[min(k + 1, pieces)]
        return "min", self.vertex(0.5 * (lo + hi), hi - lo)

    def vertex(self, s, width):
        """Extremum of D near ``s`` by repeated three-point parabola fits.

        A zero of even order is far better located as the extremum of D than
        as the minimiser of |D|, which is flat down to the integration noise.
        """
        scale = max(1.0, abs(s))
        h = min(width, 1e-3 * scale)
        while h > 2e-6 * scale:
            for _ in range(2):
                dm, d0, dp = self.D([s - h, s, s + h])
                curv = dp - 2 * d0 + dm
                if not np.isfinite(curv) or curv == 0:
                    return s
                s += float(np.clip(-h * (dp - dm) / (2 * curv), -h, h))
            h /= 10
        return s


def _stable_scanner(X, section, cfg, d_left, d_right):
    """Forward flow if the bracket attracts (D: + then -), reversed flow otherwise."""
    if d_left > 0 > d_right:
        return _Scanner(X, section, cfg), False
    return _Scanner(Reversed(X), section, cfg), True


def _bracket_root(X, section, cfg, lo, hi, dlo, dhi):
    """Root in a sign-change bracket as ``(s, backward)`` or None."""
    sc, backward = _stable_scanner(X, section, cfg, dlo, dhi)
    s = sc.root(lo, hi)
    if s is None and backward:
        # end values at the noise floor can lose their sign under reversal
        backward = False
        s = _Scanner(X, section, cfg).root(lo, hi)
    return None if s is None else (float(s), backward)


def _seg_distance(p, pts):
    a, b = pts[:-1], pts[1:]
    ab = b - a
    ap = np.asarray(p) - a
    t = np.clip(np.sum(ap * ab, axis=1) / np.maximum(np.sum(ab * ab, axis=1), 1e-300), 0, 1)
    return float(np.min(np.hypot(*(ap - t[:, None] * ab).T)))


def _same_orbit(r1: CycleRecord, r2: CycleRecord) -> bool:
    if r1.section_index == r2.section_index:
        return abs(r1.s_star - r2.s_star) < 1e-7 * max(1.0, abs(r1.s_star))
    if abs(r1.period - r2.period) > 1e-5 * max(r1.period, r2.period):
        return False
    if r1.orbit is None:
        return False
    span = float(np.max(np.ptp(r1.orbit, axis=0)))
    return _seg_distance(r2.point, r1.orbit) < 0.02 * max(span, 1e-12)


def make_record(X, section: Section, s_star: float, cfg: DetectConfig, *,
                backward: bool = False, section_index: int = 0,
                diagnostics: list | None = None) -> CycleRecord:
    """Measure the cycle through ``point(s_star)``: period, exponent, multiplicity."""
    Xf = Reversed(X) if backward else X
    p = section.point(s_star)
    dirs, _ = _directions(Xf, section, p.reshape(2, 1), cfg)
    traj, cross = flow.return_orbit(Xf, p, section, int(dirs[0]), _integrator(cfg, section),
                                    functionals=("divergence",))
    h = cross.functionals["divergence"]
    exponent = -h if backward else h
    residual = cross.s - s_star
    hyperbolic = abs(exponent) > cfg.exponent_threshold
    u, v = X(p[0], p[1])
    n = section.normal
    orientation = 1 if u * n[0] + v * n[1] >= 0 else -1
    mult = 1
    if not hyperbolic:
        try:
            mult = multiplicity_estimate(X, section, s_star, cfg, exponent=exponent)
        except IllConditioned as exc:
            mult = 0
            if diagnostics is not None:
                diagnostics.append(f"section {section_index}: multiplicity at s={s_star!r} "
                                   f"ill-conditioned ({exc})")
    return CycleRecord(section=section, s_star=float(s_star), period=cross.time,
                       exponent=float(exponent), multiplicity_estimate=mult,
                       hyperbolic=bool(hyperbolic), orientation=orientation,
                       section_index=section_index, point=(float(p[0]), float(p[1])),
                       residual=float(residual), orbit=traj.points)


def multiplicity_estimate(X, section: Section, s_star: float, cfg: DetectConfig | None = None,
                          exponent: float | None = None, h0: float | None = None) -> int:
    """Order of the zero of ``D`` at ``s_star``.

    Returns 1 straight away for a hyperbolic exponent. Otherwise ``D`` is
    sampled on a symmetric geometric stencil ``s_star +- h``, the slope of
    ``log |D|`` against ``log h`` is fitted by least squares, and the rounded
    slope is cross-checked against the sign pattern (odd orders change sign).
    """
    cfg = cfg or DetectConfig()
    if exponent is not None and abs(exponent) > cfg.exponent_threshold:
        return 1
    scale = max(1.0, abs(s_star))
    h0 = h0 if h0 is not None else 2e-3 * scale
    hs = h0 * 2.0 ** np.arange(5)
    hs = hs[np.abs(s_star) + hs < section.half_length]
    d = displacements(X, section, np.concatenate([s_star + hs, s_star - hs]), cfg)
    # keep the levels, smallest first, until one side loses its return
    both = np.isfinite(d[: hs.size]) & np.isfinite(d[hs.size:])
    n = hs.size if both.all() else int(np.argmin(both))
    if n < 3:
        raise IllConditioned("displacement undefined on the stencil")
    d = np.concatenate([d[:n], d[hs.size: hs.size + n]])
    hs = hs[:n]
    dp, dm = d[: hs.size], d[hs.size:]
    amp = 0.5 * (np.abs(dp) + np.abs(dm))
    if np.any(amp <= 0):
        raise IllConditioned("zero displacement on the stencil")
    A = np.vstack([np.ones_like(hs), np.log(hs)]).T
    coef, *_ = np.linalg.lstsq(A, np.log(amp), rcond=None)
    slope = float(coef[1])
    resid = float(np.sqrt(np.mean((A @ coef - np.log(amp)) ** 2)))
    k = int(round(slope))
    if k < 1 or abs(slope - k) > 0.3 or resid > 0.2:
        raise IllConditioned(f"log-log slope {slope:.3f}, residual {resid:.3f}")
    odd = np.all(np.sign(dp) * np.sign(dm) < 0)
    even = np.all(np.sign(dp) * np.sign(dm) > 0)
    if (k % 2 == 1 and not odd) or (k % 2 == 0 and not even):
        raise IllConditioned(f"slope {slope:.3f} disagrees with the sign pattern")
    return k


def _merge_clusters(X, section, cfg, roots):
    """Collapse roots split apart by integration noise into one multiple root.

    Neighbouring roots closer than ``1e-3 * max(1, |s|)`` with ``|D|`` below the
    residual tolerance all the way between them are one cycle of higher
    multiplicity. An even cluster is replaced by the extremum of D, an odd one
    by its middle root.
    """
    out = []
    k = 0
    while k < len(roots):
        j = k + 1
        while j < len(roots):
            a, b = roots[j - 1][0], roots[j][0]
            if b - a > 1e-3 * max(1.0, abs(a)):
                break
            mid = displacements(X, section, np.linspace(a, b, 5)[1:-1], cfg)
            if not np.all(np.abs(mid) < cfg.residual_tol):
                break
            j += 1
        cluster = roots[k:j]
        if len(cluster) % 2:
            out.append(cluster[len(cluster) // 2])
        else:
            lo, hi = cluster[0][0], cluster[-1][0]
            s = _Scanner(X, section, cfg).vertex(0.5 * (lo + hi), max(hi - lo, 1e-6))
            out.append((s, False))
        k = j
    return out


def _reversed_gap_roots(X, section, grid, d, cfg, skip=None):
    """Roots in grid intervals where forward returns stop, found in reversed time.

    A repelling cycle whose outside escapes has finite ``D`` on one side
    only; the reversed flow returns on both. Yields ``(s, lo, hi)`` with
    ``s = None`` for a bracket that could not be refined.
    """
    finite = np.isfinite(d)
    gaps = [i for i in range(grid.size - 1) if finite[i] != finite[i + 1]
            and not (skip is not None and skip[i])]
    if not gaps:
        return
    rX = Reversed(X)
    idx = np.unique(np.array(gaps + [i + 1 for i in gaps]))
    dr = np.full(grid.size, np.nan)
    dr[idx] = displacements(rX, section, grid[idx], cfg)
    rsc = _Scanner(rX, section, cfg)
    for i in gaps:
        if np.isfinite(dr[i]) and np.isfinite(dr[i + 1]) and dr[i] * dr[i + 1] < 0:
            s = rsc.root(grid[i], grid[i + 1])
            yield (None if s is None else float(s)), float(grid[i]), float(grid[i + 1])


def _scan_section(X, section, grid, index, cfg):
    """Detect cycles on one section. Returns (records, diagnostics, notes, scan)."""
    diags: list[str] = []
    notes: list[str] = []
    d = displacements(X, section, grid, cfg)
    finite = np.isfinite(d)
    if (~finite).any():
        notes.append(f"section {index}: {int((~finite).sum())} of {grid.size} grid points "
                     f"without a transversal return")

    small = finite & (np.abs(d) < cfg.annulus_tol)
    in_annulus = np.zeros(grid.size, dtype=bool)
    k = 0
    while k < grid.size:
        if small[k]:
            j = k
            while j < grid.size and small[j]:
                j += 1
            if j - k >= cfg.annulus_run:
                in_annulus[k:j] = True
                diags.append(f"section {index}: period annulus suspected for s in "
                             f"[{float(grid[k])!r}, {float(grid[j - 1])!r}] (|D| < {cfg.annulus_tol:g} on "
                             f"{j - k} grid points)")
            k = j
        else:
            k += 1

    roots: list[tuple[float, bool]] = []

    def add_root(lo, hi, dlo, dhi):
        res = _bracket_root(X, section, cfg, lo, hi, dlo, dhi)
        if res is None:
            diags.append(f"section {index}: unresolved bracket [{float(lo)!r}, {float(hi)!r}]")
        else:
            roots.append(res)

    for i in range(grid.size - 1):
        if in_annulus[i] or in_annulus[i + 1] or not (finite[i] and finite[i + 1]):
            continue
        if d[i] == 0:
            roots.append((float(grid[i]), False))
        elif d[i] * d[i + 1] < 0:
            add_root(grid[i], grid[i + 1], d[i], d[i + 1])

    if not finite.any():
        notes.append(f"section {index}: no forward returns; cycles around a sink that "
                     f"never reach the section are not searched in reversed time")
    skip = in_annulus[:-1] | in_annulus[1:]
    for s, lo, hi in _reversed_gap_roots(X, section, grid, d, cfg, skip):
        if s is None:
            diags.append(f"section {index}: unresolved bracket [{lo!r}, {hi!r}]")
        else:
            roots.append((s, True))

    # zeros that touch without a sign change (even multiplicity)
    for i in range(1, grid.size - 1):
        if in_annulus[i - 1: i + 2].any() or not finite[i - 1: i + 2].all():
            continue
        a, b, c = d[i - 1], d[i], d[i + 1]
        if not (np.sign(a) == np.sign(b) == np.sign(c) and abs(b) <= abs(a) and abs(b) <= abs(c)):
            continue
        # parabola through the three samples: keep only near-zero minima
        curv = (a - 2 * b + c) / 2
        vertex = b - (c - a) ** 2 / (16 * curv) if curv != 0 else b
        if np.sign(vertex) == np.sign(b) and abs(vertex) > 0.25 * abs(b):
            continue
        sc = _Scanner(X, section, cfg)
        out = sc.touch(grid[i - 1], grid[i + 1])
        if out is None:
            continue
        kind, val = out
        if kind == "brackets":
            for lo, hi, dlo, dhi in val:
                add_root(lo, hi, dlo, dhi)
        else:
            roots.append((val, False))

    records: list[CycleRecord] = []
    for s, backward in _merge_clusters(X, section, cfg, sorted(roots)):
        try:
            rec = make_record(X, section, s, cfg, backward=backward, section_index=index,
                              diagnostics=diags)
        except (flow.FlowError, NoReturn) as exc:
            diags.append(f"section {index}: root s={s!r} could not be measured ({exc})")
            continue
        if abs(rec.residual) >= cfg.residual_tol:
            continue
        if any(_same_orbit(r, rec) for r in records):
            continue
        records.append(rec)
    return records, diags, notes, (grid, d)


def detect_cycles(X, region: Region | str, cfg: DetectConfig | None = None,
                  anchors=None, description: str | None = None) -> DetectionReport:
    """Find limit cycles crossing rays cast from anchors inside ``region``.

    Parameters
    ----------
    X : planar field
    region : Region or its text form
        Disk or annulus; rays end at its outer circle, grid points outside it
        are dropped.
    cfg : DetectConfig
    anchors : sequence of Anchor or points, optional
        Extra ray bases. Equilibria of index +1 found in the region are added
        unless ``cfg.auto_anchors`` is off.
    description : str, optional
        Free text stored in the report.

    Returns
    -------
    DetectionReport
        Cycles ordered by (section index, s). Cycles closer together than
        the grid spacing can be missed; near-zero displacement plateaus are
        reported as suspected period annuli instead of cycles.
    """
    cfg = cfg or DetectConfig()
    if isinstance(region, str):
        region = Region.parse(region)
    items: list[Anchor] = []
    if cfg.auto_anchors:
        for z, J in find_equilibria(X, region, cfg.equilibrium_grid):
            if np.linalg.det(J) > 0:
                items.append(Anchor(z))
    for a in anchors or ():
        a = a if isinstance(a, Anchor) else Anchor((float(a[0]), float(a[1])))
        if all(math.hypot(a.point[0] - b.point[0], a.point[1] - b.point[1]) > 1e-6
               for b in items):
            items.append(a)

    sections: list[Section] = []
    grids: list[np.ndarray] = []
    for a in items:
        others = [b.point for b in items if b is not a]
        ang = a.angle if a.angle is not None else choose_ray_angle(a.point, others, region)
        d = np.array([math.cos(ang), math.sin(ang)])
        L = a.length if a.length is not None else region.ray_length(a.point, d)
        if not L > 0:
            continue
        sec = Section.ray(a.point, ang, L)
        grid = L * np.arange(1, cfg.grid_points + 1) / cfg.grid_points
        if a.length is None and region.r_inner > 0:
            pts = sec.point(grid)
            r = np.hypot(pts[0] - region.center[0], pts[1] - region.center[1])
            grid = grid[r >= region.r_inner]
        if grid.size < 3:
            continue
        sections.append(sec)
        grids.append(grid)

    jobs = list(range(len(sections)))
    if cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(lambda k: _scan_section(X, sections[k], grids[k], k, cfg),
                                    jobs))
    else:
        results = [_scan_section(X, sections[k], grids[k], k, cfg) for k in jobs]

    cycles: list[CycleRecord] = []
    diagnostics: list[str] = []
    notes: list[str] = []
    scans = []
    for recs, diags, nts, scan in results:
        diagnostics.extend(diags)
        notes.extend(nts)
        scans.append(scan)
        for r in recs:
            if not any(_same_orbit(c, r) or _same_orbit(r, c) for c in cycles):
                cycles.append(r)
    if not sections:
        notes.append("no anchors inside the region; nothing scanned")
    return DetectionReport(field=description or repr(X), region=str(region),
                           sections=sections, cycles=cycles, diagnostics=diagnostics,
                           notes=notes, scans=scans if cfg.keep_scans else None)


# continuation in the rotation angle ------------------------------------------

@dataclass(frozen=True)
class DuffPoint:
    alpha: float
    s_star: float | None
    roots: tuple[float, ...] = ()


def _local_roots(X, section, center, width, cfg, n=41):
    lo = max(center - width, -section.half_length)
    hi = min(center + width, section.half_length)
    grid = np.linspace(lo, hi, n)
    d = displacements(X, section, grid, cfg)
    found: list[float] = []
    fin = np.isfinite(d)
    for i in range(n - 1):
        if fin[i] and fin[i + 1] and d[i] * d[i + 1] < 0:
            res = _bracket_root(X, section, cfg, grid[i], grid[i + 1], d[i], d[i + 1])
            if res is not None:
                found.append(res[0])
    for i in range(1, n - 1):
        if not fin[i - 1: i + 2].all():
            continue
        a, b, c = d[i - 1], d[i], d[i + 1]
        if np.sign(a) == np.sign(b) == np.sign(c) and abs(b) <= abs(a) and abs(b) <= abs(c):
            out = _Scanner(X, section, cfg).touch(grid[i - 1], grid[i + 1])
            if out is None:
                continue
            kind, val = out
            if kind == "min":
                if abs(displacements(X, section, [val], cfg)[0]) < cfg.residual_tol:
                    found.append(val)
            else:
                for lo_, hi_, dl, dh in val:
                    res = _bracket_root(X, section, cfg, lo_, hi_, dl, dh)
                    if res is not None:
                        found.append(res[0])
    found += [s for s, _, _ in _reversed_gap_roots(X, section, grid, d, cfg) if s is not None]
    found.sort()
    out: list[float] = []
    for s in found:
        if not out or abs(s - out[-1]) > 1e-7 * max(1.0, abs(s)):
            out.append(s)
    return out


def duff_probe(X, record: CycleRecord, alpha_grid, cfg: DetectConfig | None = None,
               window: float = 0.25) -> list[DuffPoint]:
    """Follow ``record`` through the rotated family ``X_alpha``.

    Grid values are visited outwards from the one nearest 0, each solve warm
    started from its neighbour. A simple cycle is tracked by Newton with a
    local rescan as fallback; for a multiple cycle every root within
    ``window`` of the last position is reported (two after a split, none
    after it vanishes). Raises :class:`LostTrack` when a simple cycle cannot
    be found again after one widened rescan.
    """
    cfg = cfg or DetectConfig()
    alphas = [float(a) for a in alpha_grid]
    if not alphas:
        return []
    section = record.section
    simple = record.multiplicity_estimate == 1
    backward = record.exponent > 0
    order = sorted(range(len(alphas)), key=lambda k: alphas[k])
    k0 = min(order, key=lambda k: (abs(alphas[k]), alphas[k]))
    pos = order.index(k0)
    sweeps = [order[pos:], order[:pos + 1][::-1]]
    results: dict[int, DuffPoint] = {}
    scale = max(1.0, abs(record.s_star))

    for sweep in sweeps:
        prev = record.s_star
        last_alpha = None
        for k in sweep:
            if k in results:
                prev = results[k].s_star if results[k].s_star is not None else prev
                last_alpha = alphas[k]
                continue
            a = alphas[k]
            Xa = rotated(X, a)
            Xs = Reversed(Xa) if backward else Xa
            d0 = displacements(Xs, section, [prev], cfg)[0]
            if np.isfinite(d0) and abs(d0) < cfg.residual_tol:
                roots = [prev]
                if not simple:
                    roots = sorted(set(roots) | set(
                        r for r in _local_roots(Xa, section, prev, window * scale, cfg)
                        if abs(r - prev) > 1e-6 * scale))
                results[k] = DuffPoint(a, prev, tuple(roots))
                last_alpha = a
                continue
            if simple:
                s = _newton(Xs, section, prev, cfg)
                if s is None:
                    cands = _local_roots(Xa, section, prev, window * scale, cfg)
                    if not cands:
                        cands = _local_roots(Xa, section, prev, 4 * window * scale, cfg, n=161)
                    if not cands:
                        raise LostTrack(f"cycle lost at alpha={a!r}", alpha=a,
                                        last_alpha=last_alpha)
                    s = min(cands, key=lambda r: abs(r - prev))
                results[k] = DuffPoint(a, s, (s,))
                prev = s
            else:
                roots = _local_roots(Xa, section, prev, window * scale, cfg)
                s = min(roots, key=lambda r: abs(r - prev)) if roots else None
                results[k] = DuffPoint(a, s, tuple(roots))
                if s is not None:
                    prev = s
            last_alpha = a
    return [results[k] for k in range(len(alphas))]


def _newton(X, section, s, cfg, iters: int = 12):
    for _ in range(iters):
        h = cfg.newton_rel_step * max(1.0, abs(s))
        d0, d1 = displacements(X, section, [s, s + h], cfg)
        if not (np.isfinite(d0) and np.isfinite(d1)):
            return None
        if abs(d0) < 1e-3 * cfg.residual_tol:
            return s
        slope = (d1 - d0) / h
        if slope == 0:
            return None
        step = -d0 / slope
        if abs(step) > 0.1 * max(1.0, abs(s)):
            return None
        s += step
    d0 = displacements(X, section, [s], cfg)[0]
    return s if np.isfinite(d0) and abs(d0) < cfg.residual_tol else None
