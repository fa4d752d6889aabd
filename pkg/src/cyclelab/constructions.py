"""Constructions that add limit cycles to polynomial fields, with numerical evidence.

Every construction returns a :class:`ConstructionReport` holding the input and
output fields, a log of stages (parameters chosen and what was checked), and
detection reports before and after.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import cycles
from .cycles import Anchor, CycleRecord, DetectConfig, DetectionReport, Region
from .polyfield import (Poly2, VectorField, conjugate_linear, format_field, jacobian,
                        leading_signs, mul_linear, nudge_leading, rotate, square_substitute,
                        translate)


class ConstructionError(RuntimeError):
    pass


class NoImprovingRotation(ConstructionError):
    def __init__(self, message, best_alpha=None, report=None):
        super().__init__(message)
        self.best_alpha = best_alpha
        self.report = report


class SearchExhausted(ConstructionError):
    pass


class StageFailure(ConstructionError):
    def __init__(self, stage: str, diagnostics: str = "", report=None):
        super().__init__(f"{stage}: {diagnostics}" if diagnostics else stage)
        self.stage = stage
        self.diagnostics = diagnostics
        self.report = report


class CycleNotInQuadrant(ConstructionError):
    pass


class NotMonodromicLinearType(ConstructionError):
    pass


@dataclass(frozen=True)
class ConstructionConfig:
    detect: DetectConfig = field(default_factory=DetectConfig)
    # detection region for the input field
    region: str = "disk:0,0,4"
    ball_margin: float = 1.5
    x_start: float = 1.0
    l1_threshold: float = 1e-8
    l1_step: float = 1e-6
    eps_start: float = 1e-2
    eps_min: float = 1e-12
    hopf_halvings: int = 30
    omega_start: float = 0.1
    omega_halvings: int = 12
    alpha_start: float = 0.1
    alpha_min: float = 1e-8
    alpha_probe: float = 0.01
    offset_margin: float = 1.0
    # shuffles the coefficient order of the focal-value sweep when set
    seed: int | None = None


@dataclass
class Stage:
    name: str
    params: dict
    ok: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "params": self.params, "ok": self.ok, "detail": self.detail}


@dataclass
class BumpParameters:
    p: tuple[float, float]
    a: float
    b: float
    eps: float
    delta: float
    L1: float
    eta: float
    ball_radius: float

    def to_dict(self) -> dict:
        return {"p": list(self.p), "a": self.a, "b": self.b, "eps": self.eps,
                "delta": self.delta, "L1": self.L1, "eta": self.eta,
                "ball_radius": self.ball_radius}


@dataclass
class ConstructionReport:
    kind: str
    input_field: VectorField
    output_field: VectorField | None
    stages: list[Stage]
    before: DetectionReport | None
    after: DetectionReport | None
    success: bool = False
    target_pi_h: int = 0
    parameters: BumpParameters | None = None
    extras: dict = field(default_factory=dict)

    def stage(self, name: str) -> Stage:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "success": self.success,
            "target_pi_h": self.target_pi_h,
            "input_degree": self.input_field.degree,
            "output_degree": self.output_field.degree if self.output_field is not None else None,
            "input_field": format_field(self.input_field),
            "output_field": format_field(self.output_field) if self.output_field else None,
            "parameters": self.parameters.to_dict() if self.parameters else None,
            "stages": [s.to_dict() for s in self.stages],
            "before": self.before.to_dict() if self.before else None,
            "after": self.after.to_dict() if self.after else None,
            "extras": self.extras,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


# the analytic test field ------------------------------------------------------

class SinRingField:
    """``(-y + x sin r^2, x + y sin r^2)``: limit cycles exactly on ``r^2 = k pi``.

    In polar form ``r' = r sin r^2`` and ``theta' = 1``, so ring ``k`` has
    characteristic exponent ``4 pi^2 k (-1)^k``.
    """

    def __init__(self, k_max: int = 1):
        self.k_max = k_max

    def __call__(self, x, y):
        s = np.sin(x * x + y * y)
        return -y + x * s, x + y * s

    def div(self, x, y):
        r2 = x * x + y * y
        return 2 * np.sin(r2) + 2 * r2 * np.cos(r2)

    def suggested_radius(self) -> float:
        # halfway to the next ring, so exactly k_max rings lie inside
        return math.sqrt((self.k_max + 0.5) * math.pi)

    def __repr__(self):
        return f"SinRingField(k_max={self.k_max})"


def sin_ring(k_max: int) -> SinRingField:
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    return SinRingField(k_max)


# first focal value ---------------------------------------------------------------

def normalizing_frame(X: VectorField, tol: float = 1e-9):
    """``(omega, T)`` with ``T^-1 DX(0) T = [[0, -omega], [omega, 0]]``."""
    J = jacobian(X)
    scale = max(1.0, float(np.max(np.abs(J))))
    if math.hypot(X.p.coeff(0, 0), X.q.coeff(0, 0)) > tol * scale:
        raise NotMonodromicLinearType("origin is not a singular point")
    if abs(J[0, 0] + J[1, 1]) > tol * scale:
        raise NotMonodromicLinearType(f"trace {J[0, 0] + J[1, 1]!r} is not zero")
    p = 0.5 * (J[0, 0] - J[1, 1])
    q, r = J[0, 1], J[1, 0]
    det = -p * p - q * r
    if not det > tol * scale * scale:
        raise NotMonodromicLinearType(f"determinant {det!r} is not positive")
    w = math.sqrt(det)
    return w, np.array([[1.0, p / w], [0.0, r / w]])


def lyapunov_L1(X: VectorField) -> float:
    """First focal value at the origin; negative means a stable weak focus.

    After the linear change of coordinates to ``x' = -w y + f, y' = w x + g`` this
    is ``16 L1 = f_xxx + f_xyy + g_xxy + g_yyy + (f_xy (f_xx + f_yy)
    - g_xy (g_xx + g_yy) - f_xx g_xx + f_yy g_yy) / w``, which equals ``-1`` for
    the polar system ``r' = -r^3, theta' = 1``.
    """
    w, T = normalizing_frame(X)
    N = conjugate_linear(X, T)
    f, g = N.p, N.q
    fxx, fxy, fyy = 2 * f.coeff(2, 0), f.coeff(1, 1), 2 * f.coeff(0, 2)
    gxx, gxy, gyy = 2 * g.coeff(2, 0), g.coeff(1, 1), 2 * g.coeff(0, 2)
    third = 6 * f.coeff(3, 0) + 2 * f.coeff(1, 2) + 2 * g.coeff(2, 1) + 6 * g.coeff(0, 3)
    second = fxy * (fxx + fyy) - gxy * (gxx + gyy) - fxx * gxx + fyy * gyy
    return (third + second / w) / 16.0


def _focus_radius(X: VectorField, w: float, T) -> float:
    """Radius (normalized coordinates) where the nonlinear terms stay below the rotation."""
    N = conjugate_linear(X, T)
    rho = math.inf
    for k in range(2, N.degree + 1):
        size = sum(abs(c) for c in N.p.homogeneous(k).coeffs.values())
        size += sum(abs(c) for c in N.q.homogeneous(k).coeffs.values())
        if size > 0:
            rho = min(rho, (w / size) ** (1.0 / (k - 1)))
    return rho if math.isfinite(rho) else 1.0


# helpers -------------------------------------------------------------------------

def _detect(X, region, cfg: ConstructionConfig, anchors=None, auto=True, description=None):
    dcfg = cfg.detect if auto else replace(cfg.detect, auto_anchors=False)
    return cycles.detect_cycles(X, region, dcfg, anchors=anchors, description=description)


def _anchor_points(report: DetectionReport):
    return [sec.base for sec in report.sections]


def _extent(report: DetectionReport, center=(0.0, 0.0)) -> float:
    return max((c.extent(center) for c in report.cycles), default=0.0)


def _bbox(report: DetectionReport):
    pts = np.vstack([c.orbit for c in report.cycles])
    return pts.min(axis=0), pts.max(axis=0)


def _far_anchors(points, avoid, region: Region):
    """Anchors whose rays stay inside ``region`` and point away from ``avoid``."""
    out = []
    for a in points:
        ang = cycles.choose_ray_angle(a, avoid, region)
        L = region.ray_length(a, np.array([math.cos(ang), math.sin(ang)]))
        out.append(Anchor((float(a[0]), float(a[1])), ang, L))
    return out


def _hyperbolic_on(report: DetectionReport, sections: set[int]) -> list[CycleRecord]:
    return [c for c in report.cycles if c.hyperbolic and c.section_index in sections]


def _precondition(report: DetectionReport, X, kind, stages):
    bad = [c for c in report.cycles if not c.hyperbolic]
    if bad:
        stages.append(Stage("precondition:hyperbolize-first",
                            {"non_hyperbolic": len(bad)}, False,
                            "non-hyperbolic cycles present; rotate the field first"))
        rep = ConstructionReport(kind, X, None, stages, report, None)
        raise StageFailure("precondition:hyperbolize-first",
                           f"{len(bad)} non-hyperbolic cycle(s) detected", rep)


def _fail(stage, detail, rep):
    rep.stages.append(Stage(stage, {}, False, detail))
    raise StageFailure(stage, detail, rep)


def _perturbation_order(X: VectorField, cfg: ConstructionConfig):
    n = X.degree
    keys = [(comp, i, d - i) for comp in ("P", "Q") for d in range(2, n + 1) for i in range(d, -1, -1)]
    keys.sort()
    if cfg.seed is not None:
        rng = np.random.default_rng(cfg.seed)
        keys = [keys[k] for k in rng.permutation(len(keys))]
    return keys


def _nonzero_focal_value(X: VectorField, cfg: ConstructionConfig, stages):
    """The first focal value, nudging one nonlinear coefficient when it is too small."""
    L1 = lyapunov_L1(X)
    if abs(L1) >= cfg.l1_threshold:
        stages.append(Stage("focal-value", {"L1": L1, "perturbed": None}, True))
        return X, L1
    for comp, i, j in _perturbation_order(X, cfg):
        for sgn in (1.0, -1.0):
            bump = Poly2.monomial(i, j, sgn * cfg.l1_step)
            Y = VectorField(X.p + bump, X.q) if comp == "P" else VectorField(X.p, X.q + bump)
            L = lyapunov_L1(Y)
            if abs(L) >= cfg.l1_threshold:
                stages.append(Stage("focal-value",
                                    {"L1": L, "L1_unperturbed": L1,
                                     "perturbed": [comp, i, j, sgn * cfg.l1_step]}, True))
                return Y, L
    return None, L1


def _hopf(Xc: VectorField, far: list[Anchor], far_pi_h: int, cfg: ConstructionConfig,
          rep: ConstructionReport, region_text: str, r_cap: float = math.inf):
    """Pick the focal value, then unfold the trace until a small cycle appears.

    The trace is set to ``eta`` by adding ``eta * x`` to the first component,
    with ``sign(eta) = -sign(L1)``. For ``r' = (eta/2) r + L1 r^3`` the new
    cycle has radius ``sqrt(-eta / (2 L1))`` in the normalized frame; ``eta``
    starts where that radius is a tenth of the range the nonlinear terms
    allow and is halved until the small cycle is detected and every far cycle
    persists.
    """
    Xf, L1 = _nonzero_focal_value(Xc, cfg, rep.stages)
    if Xf is None:
        _fail("focal-value", f"|L1| stayed below {cfg.l1_threshold:g}", rep)
    w, T = normalizing_frame(Xf)
    U, S, _ = np.linalg.svd(T)
    major = math.atan2(U[1, 0], U[0, 0])
    r_t = min(0.1 * _focus_radius(Xf, w, T), r_cap)
    eta = -math.copysign(2 * abs(L1) * r_t * r_t, L1)
    tried = []
    for _ in range(cfg.hopf_halvings):
        r = math.sqrt(abs(eta / (2 * L1)))
        origin = Anchor((0.0, 0.0), major, 3.0 * r * S[0])
        W = VectorField(Xf.p + Poly2.monomial(1, 0, eta), Xf.q)
        det = cycles.detect_cycles(W, region_text, replace(cfg.detect, auto_anchors=False),
                                   anchors=[origin] + far, description="bumped field")
        hopf = _hyperbolic_on(det, {0})
        kept = _hyperbolic_on(det, set(range(1, len(det.sections))))
        tried.append({"eta": eta, "hopf": len(hopf), "far_hyperbolic": len(kept)})
        if hopf and len(kept) >= far_pi_h:
            rep.stages.append(Stage("hopf-unfold",
                                    {"eta": eta, "L1": L1, "sign_product":
                                     int(np.sign(eta) * np.sign(L1)),
                                     "omega": w, "predicted_radius": r,
                                     "small_cycle_exponent": hopf[0].exponent,
                                     "attempts": tried}, True))
            return W, det, L1, eta
        eta /= 2
    _fail("hopf-unfold", f"no small cycle with persisting far cycles after "
                         f"{cfg.hopf_halvings} halvings of eta", rep)


# the degree bump ----------------------------------------------------------------

def find_clear_regular_point(X: VectorField, ball_radius: float,
                             cfg: ConstructionConfig | None = None):
    """A point ``p = (x, 0)`` whose flow line ``p + s Y(p)`` misses the ball.

    ``Y`` is ``X`` with the leading coefficient at ``(1, 0)`` made nonzero by the
    smallest sufficient nudge. ``x`` doubles from ``max(2 R, x_start)`` until
    ``Y(p) != 0`` and the line through ``p`` along ``Y(p)`` stays more than
    ``R`` from the origin.
    """
    cfg = cfg or ConstructionConfig()
    if not ball_radius > 0:
        raise ValueError("ball_radius must be positive")
    ladder = [0.0] + [10.0 ** k for k in range(-9, -2)]
    for eps in ladder:
        if eps == 0:
            pl, ql = leading_signs(X)
            if pl * ql == 0:
                continue
            Y = X
        else:
            Y = nudge_leading(X, eps)
        x = max(2 * ball_radius, cfg.x_start)
        while x <= 1e9 * ball_radius:
            u, v = (float(c) for c in Y(x, 0.0))
            speed = math.hypot(u, v)
            if speed > 0 and abs(x * v) / speed > ball_radius:
                return Y, (x, 0.0)
            x *= 2
    raise SearchExhausted(f"no clear regular point up to x = {1e9 * ball_radius:g}")


def _frame_rotation(v) -> np.ndarray:
    """Rotation ``R`` with ``R^T v`` pointing along ``(1, -1)``."""
    ang = math.atan2(v[1], v[0]) + math.pi / 4
    c, s = math.cos(ang), math.sin(ang)
    return np.array([[c, -s], [s, c]])


def degree_bump(Z: VectorField, cfg: ConstructionConfig | None = None,
                before: DetectionReport | None = None) -> ConstructionReport:
    """One more hyperbolic limit cycle at the cost of one degree.

    Stages: enclosing ball, clear regular point, move it to the origin,
    multiply by the linear form vanishing along its flow line (a nilpotent
    singularity), split it into a weak focus with ``eps = delta``, fix a
    nonzero focal value, and unfold a small cycle.

    One step is added to the textbook chain: after translation the frame is
    rotated about ``p`` so that ``Y(0)`` points along ``(1, -1)``. Then
    ``a = b`` and the focus built from ``eps, delta`` is not squeezed when
    one of ``P(p), Q(p)`` is tiny. A rigid motion about ``p`` keeps the line
    clear of the ball.
    """
    cfg = cfg or ConstructionConfig()
    stages: list[Stage] = []
    if before is None:
        before = _detect(Z, cfg.region, cfg, description="input field")
    _precondition(before, Z, "bump", stages)
    rep = ConstructionReport("bump", Z, None, stages, before, None,
                             target_pi_h=before.pi_h + 1)

    R = cfg.ball_margin * max(_extent(before), 1.0 if not before.cycles else 0.0)
    stages.append(Stage("ball", {"radius": R, "max_cycle_extent": _extent(before)}, True))

    try:
        Y, p = find_clear_regular_point(Z, R, cfg)
    except SearchExhausted as exc:
        _fail("regular-point", str(exc), rep)
    nudged = Y is not Z
    v = [float(c) for c in Y(*p)]
    stages.append(Stage("regular-point", {"p": list(p), "Y(p)": v, "nudged": nudged,
                                          "line_distance": abs(p[0] * v[1]) / math.hypot(*v)},
                        True))

    Rot = _frame_rotation(v)
    W = conjugate_linear(translate(Y, p), Rot)
    stages.append(Stage("translate", {"p": list(p), "frame_angle":
                                      math.atan2(Rot[1, 0], Rot[0, 0])}, True))

    a, b = -W.q.coeff(0, 0), W.p.coeff(0, 0)
    X = mul_linear(W, a, b)
    stages.append(Stage("nilpotent", {"a": a, "b": b, "degree": X.degree},
                        X.degree == Z.degree + 1))
    J = jacobian(X)
    det, tr = float(np.linalg.det(J)), float(np.trace(J))
    ok = abs(det) < 1e-9 and abs(tr) < 1e-9
    stages.append(Stage("degenerate-check", {"det": det, "trace": tr}, ok))
    if not ok:
        _fail("degenerate-check", f"det={det!r} trace={tr!r}", rep)

    # B and its anchors in the new coordinates w = Rot^T (z - p)
    to_new = lambda z: Rot.T @ (np.asarray(z, dtype=float) - np.asarray(p))
    ball = Region(tuple(float(c) for c in to_new((0.0, 0.0))), R)
    far_points = [to_new(z) for z in _anchor_points(before)]
    region_text = str(Region(ball.center, math.hypot(*ball.center) + R))

    ell1 = Poly2({(1, 0): a, (0, 1): b})
    m = cfg.eps_start
    Xe = None
    far = []
    while m >= cfg.eps_min:
        e1 = Poly2({(1, 0): a, (0, 1): b + m})
        e2 = Poly2({(1, 0): a + m, (0, 1): b})
        cand = VectorField(e1 * W.p, e2 * W.q)
        Jc = jacobian(cand)
        detc = float(np.linalg.det(Jc))
        predicted = a * b * (a * m + b * m + m * m)
        if detc > 0:
            pts = [cycles.polish_equilibrium(cand, z) for z in far_points]
            far = _far_anchors([z for z in pts if z is not None], [(0.0, 0.0)], ball)
            chk = cycles.detect_cycles(cand, region_text, replace(cfg.detect, auto_anchors=False),
                                       anchors=far)
            if len([c for c in chk.cycles if c.hyperbolic]) >= before.pi_h:
                Xe = cand
                stages.append(Stage("weak-focus", {"eps": m, "delta": m, "det": detc,
                                                   "det_formula": predicted,
                                                   "trace": float(np.trace(Jc)),
                                                   "far_cycles": chk.pi_h}, True))
                break
        m /= 2
    if Xe is None:
        _fail("weak-focus", f"no eps = delta above {cfg.eps_min:g} kept the far cycles", rep)

    out, after, L1, eta = _hopf(Xe, far, before.pi_h, cfg, rep, region_text)
    rep.output_field = out
    rep.after = after
    rep.parameters = BumpParameters(p=p, a=a, b=b, eps=m, delta=m, L1=L1, eta=eta, ball_radius=R)
    rep.success = out.degree == Z.degree + 1 and after.pi_h >= before.pi_h + 1
    stages.append(Stage("final", {"degree": out.degree, "pi_h_before": before.pi_h,
                                  "pi_h_after": after.pi_h}, rep.success))
    rep.extras["frame"] = {"p": list(p), "rotation": Rot.tolist(), "eps_nudge": nudged}
    return rep


# radial bump ---------------------------------------------------------------------

def _offset_from_origin(X: VectorField, before: DetectionReport, margin: float):
    """Translation vector moving every cycle bounding box off the origin."""
    if not before.cycles:
        return (0.0, 0.0)
    lo, hi = _bbox(before)
    if lo[0] - margin > 0 or hi[0] + margin < 0 or lo[1] - margin > 0 or hi[1] + margin < 0:
        return (0.0, 0.0)
    # shift so every cycle lies left of x = -margin
    return (float(hi[0] + margin), 0.0)


def radial_bump(X: VectorField, cfg: ConstructionConfig | None = None,
                before: DetectionReport | None = None) -> ConstructionReport:
    """``r^2 X`` plus a rotation and a trace unfolding at the new singular origin.

    ``r^2 X`` has the same orbits as ``X`` away from the origin and a zero
    linear part there. Adding ``omega (-y, x)`` makes the origin a weak focus
    whose focal value is ``div X(0) / 2`` (the quadratic part ``X(0) r^2``
    contributes nothing); the trace unfolding then creates the extra cycle.
    Cycles touching a margin around the origin are first moved off it.
    """
    cfg = cfg or ConstructionConfig()
    stages: list[Stage] = []
    if before is None:
        before = _detect(X, cfg.region, cfg, description="input field")
    _precondition(before, X, "radial", stages)
    rep = ConstructionReport("radial", X, None, stages, before, None,
                             target_pi_h=before.pi_h + 1)

    shift = _offset_from_origin(X, before, cfg.offset_margin)
    Xs = translate(X, shift)
    moved = lambda z: (float(z[0] - shift[0]), float(z[1] - shift[1]))
    stages.append(Stage("offset", {"translation": list(shift)}, True))

    r2 = Poly2({(2, 0): 1.0, (0, 2): 1.0})
    Y = VectorField(r2 * Xs.p, r2 * Xs.q)
    anchors = [moved(z) for z in _anchor_points(before)]
    reach = max((math.hypot(*moved(c.point)) + 2 * c.extent(c.section.base)
                 for c in before.cycles), default=1.0)
    sec_anchors = [Anchor(moved(s.base), math.atan2(s.direction[1], s.direction[0]), s.half_length)
                   for s in before.sections]
    region_text = str(Region((0.0, 0.0), reach))
    same = cycles.detect_cycles(Y, region_text, replace(cfg.detect, auto_anchors=False),
                                anchors=sec_anchors)
    shifts = [min((abs(c.s_star - d.s_star) for d in same.cycles
                   if d.section_index == c.section_index), default=math.inf)
              for c in before.cycles]
    worst = max(shifts, default=0.0)
    stages.append(Stage("radial-factor", {"degree": Y.degree, "max_s_star_shift": worst},
                        worst < 1e-8))
    if not worst < 1e-8:
        _fail("radial-factor", f"cycles moved by {worst!r} after multiplying by r^2", rep)

    x0 = [float(c) for c in Xs(0.0, 0.0)]
    speed0 = math.hypot(*x0)
    omega = cfg.omega_start
    for _ in range(cfg.omega_halvings):
        rot = VectorField(Y.p + Poly2.monomial(0, 1, -omega), Y.q + Poly2.monomial(1, 0, omega))
        far_pts = [cycles.polish_equilibrium(rot, z) for z in anchors]
        far = _far_anchors([z for z in far_pts if z is not None], [(0.0, 0.0)],
                           Region((0.0, 0.0), reach))
        chk = cycles.detect_cycles(rot, region_text, replace(cfg.detect, auto_anchors=False),
                                   anchors=far)
        if chk.pi_h >= before.pi_h:
            break
        omega /= 2
    else:
        _fail("rotation", "far cycles lost for every omega tried", rep)
    stages.append(Stage("rotation", {"omega": omega, "far_cycles": chk.pi_h}, True))

    # the nearest other singularity sits about omega / |X(0)| away
    cap = 0.1 * omega / speed0 if speed0 > 0 else math.inf
    out, after, L1, eta = _hopf(rot, far, before.pi_h, cfg, rep, region_text, r_cap=cap)
    rep.output_field = out
    rep.after = after
    rep.success = out.degree == X.degree + 2 and after.pi_h >= before.pi_h + 1
    stages.append(Stage("final", {"degree": out.degree, "pi_h_before": before.pi_h,
                                  "pi_h_after": after.pi_h}, rep.success))
    rep.extras["translation"] = list(shift)
    rep.extras["focal_value_prediction"] = 0.5 * float(Xs.div(0.0, 0.0))
    return rep


# quadrant copies ----------------------------------------------------------------

def quadrant_transform(X: VectorField, cfg: ConstructionConfig | None = None,
                       before: DetectionReport | None = None) -> ConstructionReport:
    """Four copies of every cycle via ``(x, y) = (u^2, v^2)``.

    ``Y(u, v) = (v P(u^2, v^2), u Q(u^2, v^2))`` is ``2uv`` times the pulled
    back field, so each open quadrant holds a copy of the first-quadrant phase
    portrait (time reversed where ``uv < 0``). Cycles are first translated into
    the open first quadrant with a margin.
    """
    cfg = cfg or ConstructionConfig()
    stages: list[Stage] = []
    if before is None:
        before = _detect(X, cfg.region, cfg, description="input field")
    rep = ConstructionReport("quadrant", X, None, stages, before, None,
                             target_pi_h=4 * before.pi_h)
    shift = (0.0, 0.0)
    base = before
    if before.cycles:
        lo, _ = _bbox(before)
        if lo[0] <= 0 or lo[1] <= 0:
            shift = (float(lo[0] - cfg.offset_margin), float(lo[1] - cfg.offset_margin))
    Xs = translate(X, shift)
    if shift != (0.0, 0.0):
        moved = [Anchor((s.base[0] - shift[0], s.base[1] - shift[1]),
                        math.atan2(s.direction[1], s.direction[0]), s.half_length)
                 for s in before.sections]
        cover = max(math.hypot(*a.point) + a.length for a in moved)
        base = cycles.detect_cycles(Xs, str(Region((0.0, 0.0), cover)),
                                    replace(cfg.detect, auto_anchors=False), anchors=moved)
    if base.cycles:
        lo, hi = _bbox(base)
        if lo[0] <= 0 or lo[1] <= 0:
            rep.stages.append(Stage("first-quadrant", {"translation": list(shift)}, False))
            raise CycleNotInQuadrant(f"cycle bounding box starts at {lo.tolist()}")
    stages.append(Stage("first-quadrant", {"translation": list(shift),
                                           "cycles": base.pi, "hyperbolic": base.pi_h}, True))

    Y = VectorField(Poly2.y() * square_substitute(Xs.p), Poly2.x() * square_substitute(Xs.q))
    stages.append(Stage("square-map", {"degree": Y.degree, "expected": 2 * X.degree + 1},
                        Y.degree == 2 * X.degree + 1))

    reach = math.sqrt(max((float(np.max(c.orbit.sum(axis=1))) for c in base.cycles),
                          default=1.0))
    anchors, origin_of = [], []
    for k, sec in enumerate(base.sections):
        x0, y0 = sec.base
        if x0 <= 0 or y0 <= 0:
            continue
        for su, sv in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
            a = (su * math.sqrt(x0), sv * math.sqrt(y0))
            L = 1.2 * reach - math.hypot(*a)
            if L > 0:
                anchors.append(Anchor(a, math.atan2(a[1], a[0]), L))
                origin_of.append(k)
    after = cycles.detect_cycles(Y, str(Region((0.0, 0.0), 1.2 * reach)),
                                 replace(cfg.detect, auto_anchors=False), anchors=anchors,
                                 description="quadrant copies")
    per_quadrant = {q: 0 for q in ("++", "-+", "--", "+-")}
    matching = []
    for c in after.cycles:
        q = ("+" if c.point[0] > 0 else "-") + ("+" if c.point[1] > 0 else "-")
        if c.hyperbolic:
            per_quadrant[q] += 1
        matching.append({"quadrant": q, "source_section": origin_of[c.section_index],
                         "s_star": c.s_star, "hyperbolic": c.hyperbolic})
    stages.append(Stage("copies", {"per_quadrant": per_quadrant, "matching": matching},
                        all(n >= base.pi_h for n in per_quadrant.values())))
    rep.output_field = Y
    rep.after = after
    rep.success = (Y.degree == 2 * X.degree + 1 and after.pi_h >= 4 * before.pi_h
                   and all(n >= base.pi_h for n in per_quadrant.values()))
    rep.extras["translation"] = list(shift)
    rep.extras["per_quadrant"] = per_quadrant
    return rep


# hyperbolization ----------------------------------------------------------------

def _split_count(X, rec: CycleRecord, alpha, cfg: ConstructionConfig) -> int:
    pts = cycles.duff_probe(X, rec, [alpha], cfg.detect)
    return len(pts[0].roots)


def hyperbolize(X: VectorField, report: DetectionReport, cfg: ConstructionConfig | None = None):
    """Rotate ``X`` by a small angle so that every detected cycle turns hyperbolic.

    Non-hyperbolic cycles of odd (or unknown) multiplicity survive as one
    hyperbolic cycle; an even one splits into two for one sign of the angle
    and vanishes for the other. The sign with more splits is used and the
    target is ``h + m + 2 max(m+, m-)``. ``|alpha|`` is halved from
    ``alpha_start`` until detection on the rotated field meets the target with
    all previously hyperbolic cycles found again.

    Returns ``(alpha, rotated field, ConstructionReport)``.
    """
    cfg = cfg or ConstructionConfig()
    stages: list[Stage] = []
    h = [c for c in report.cycles if c.hyperbolic]
    odd = [c for c in report.cycles if not c.hyperbolic and c.multiplicity_estimate % 2 == 1
           or not c.hyperbolic and c.multiplicity_estimate == 0]
    even = [c for c in report.cycles if not c.hyperbolic and c.multiplicity_estimate > 0
            and c.multiplicity_estimate % 2 == 0]
    rep = ConstructionReport("hyperbolize", X, X, stages, report, report)
    if not odd and not even:
        rep.success = True
        rep.target_pi_h = len(h)
        stages.append(Stage("classify", {"h": len(h), "m": 0, "m_plus": 0, "m_minus": 0}, True,
                            "all cycles already hyperbolic"))
        return 0.0, X, rep

    m_plus = sum(_split_count(X, c, cfg.alpha_probe, cfg) >= 2 for c in even)
    m_minus = sum(_split_count(X, c, -cfg.alpha_probe, cfg) >= 2 for c in even)
    sign = 1.0 if m_plus >= m_minus else -1.0
    target = len(h) + len(odd) + 2 * max(m_plus, m_minus)
    rep.target_pi_h = target
    stages.append(Stage("classify", {"h": len(h), "m": len(odd), "m_plus": m_plus,
                                     "m_minus": m_minus, "sign": int(sign)}, True))

    anchors = [Anchor(s.base, math.atan2(s.direction[1], s.direction[0]), s.half_length)
               for s in report.sections]
    dcfg = replace(cfg.detect, auto_anchors=False)
    tried = []
    best = (None, -1)
    mag = cfg.alpha_start
    while mag >= cfg.alpha_min:
        alpha = sign * mag
        Xa = rotate(X, alpha)
        det = cycles.detect_cycles(Xa, report.region, dcfg, anchors=anchors,
                                   description=f"rotated by {alpha!r}")
        matched = all(any(d.hyperbolic and d.section_index == c.section_index
                          and abs(d.s_star - c.s_star) < 0.25 * max(1.0, abs(c.s_star))
                          for d in det.cycles) for c in h)
        all_h = det.pi == det.pi_h
        tried.append({"alpha": alpha, "pi": det.pi, "pi_h": det.pi_h, "matched": matched})
        if det.pi_h > best[1]:
            best = (alpha, det.pi_h)
        if det.pi_h >= target and matched and all_h:
            other = cycles.detect_cycles(rotate(X, -alpha), report.region, dcfg, anchors=anchors)
            stages.append(Stage("rotation", {"alpha": alpha, "attempts": tried}, True))
            stages.append(Stage("opposite-sign", {"alpha": -alpha, "pi": other.pi,
                                                  "pi_h": other.pi_h}, True))
            rep.output_field = Xa
            rep.after = det
            rep.success = True
            rep.extras["opposite"] = other.to_dict()
            return alpha, Xa, rep
        mag /= 2
    stages.append(Stage("rotation", {"attempts": tried}, False))
    raise NoImprovingRotation(f"no rotation reached pi_h >= {target}", best_alpha=best[0],
                              report=rep)
