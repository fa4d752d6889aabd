"""Sparse bivariate polynomials and planar polynomial vector fields.

A :class:`Poly2` is a map ``(i, j) -> c`` standing for ``sum c * x**i * y**j``.
Coefficients are doubles; no coefficient is ever stored as an exact zero, so
the degree of a polynomial is always the largest ``i + j`` among its keys
(``-1`` for the zero polynomial).

Everything here is immutable: arithmetic and the field transformations return
new objects.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Protocol, Tuple

import numpy as np

Exponent = Tuple[int, int]


class ZeroLinearForm(ValueError):
    """Raised by :func:`mul_linear` when ``a = b = 0``."""


class FieldFormatError(ValueError):
    """Malformed field file. ``line`` is 1-based (0 when not line-specific)."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _horner(terms: Mapping[int, object], var: str) -> str | None:
    """Horner source for ``sum terms[k] * var**k``; entries are source strings."""
    if not terms:
        return None
    top = max(terms)
    expr = f"({terms[top]})"
    for k in range(top - 1, -1, -1):
        expr = f"{expr}*{var}"
        if k in terms:
            expr = f"({expr} + {terms[k]})"
    return expr


def _compile(coeffs: Mapping[Exponent, float]):
    rows: dict[int, dict[int, str]] = {}
    for (i, j), c in coeffs.items():
        rows.setdefault(i, {})[j] = f"({c!r})"
    inner = {i: _horner(row, "y") for i, row in rows.items()}
    expr = _horner(inner, "x")
    if expr is None:
        expr = "0.0*x"
    elif all(i == 0 and j == 0 for i, j in coeffs):
        # constants must still broadcast against array arguments
        expr = f"{expr} + 0.0*x"
    return eval(compile(f"lambda x, y: {expr}", "<poly2>", "eval"))


class Poly2:
    """Sparse real polynomial in ``x`` and ``y``.

    >>> p = Poly2({(2, 0): 1.0, (0, 2): 1.0})
    >>> p(3.0, 4.0)
    25.0
    """

    def __init__(self, coeffs: Mapping[Exponent, float] | None = None):
        c: dict[Exponent, float] = {}
        for key, val in (coeffs or {}).items():
            i, j = int(key[0]), int(key[1])
            if i < 0 or j < 0:
                raise ValueError(f"negative exponent {key}")
            val = float(val)
            if val != 0.0:
                c[(i, j)] = val
        self._c = c

    # constructors
    @classmethod
    def const(cls, c: float) -> Poly2:
        return cls({(0, 0): c})

    @classmethod
    def monomial(cls, i: int, j: int, c: float = 1.0) -> Poly2:
        return cls({(i, j): c})

    @classmethod
    def x(cls) -> Poly2:
        return cls({(1, 0): 1.0})

    @classmethod
    def y(cls) -> Poly2:
        return cls({(0, 1): 1.0})

    @property
    def coeffs(self) -> dict[Exponent, float]:
        return dict(self._c)

    def coeff(self, i: int, j: int) -> float:
        return self._c.get((i, j), 0.0)

    def terms(self):
        """Terms sorted by exponent, for deterministic output."""
        return sorted(self._c.items())

    @property
    def degree(self) -> int:
        return max((i + j for i, j in self._c), default=-1)

    def is_zero(self) -> bool:
        return not self._c

    @cached_property
    def _fn(self):
        return _compile(self._c)

    def __call__(self, x, y):
        return self._fn(x, y)

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Poly2.const(other)
        if not isinstance(other, Poly2):
            return NotImplemented
        return self._c == other._c

    def __hash__(self):
        return hash(frozenset(self._c.items()))

    def __repr__(self):
        if not self._c:
            return "Poly2(0)"
        parts = []
        for (i, j), c in self.terms():
            mono = "*".join(
                s for s in (f"x^{i}" if i > 1 else "x" if i else "",
                            f"y^{j}" if j > 1 else "y" if j else "") if s)
            parts.append(f"{c!r}*{mono}" if mono else repr(c))
        return "Poly2(" + " + ".join(parts) + ")"

    def __neg__(self):
        return Poly2({k: -v for k, v in self._c.items()})

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Poly2.const(other)
        if not isinstance(other, Poly2):
            return NotImplemented
        out = dict(self._c)
        for k, v in other._c.items():
            out[k] = out.get(k, 0.0) + v
        return Poly2(out)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Poly2.const(other)
        if not isinstance(other, Poly2):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Poly2({k: v * other for k, v in self._c.items()})
        if not isinstance(other, Poly2):
            return NotImplemented
        out: dict[Exponent, float] = {}
        for (i1, j1), c1 in self._c.items():
            for (i2, j2), c2 in other._c.items():
                key = (i1 + i2, j1 + j2)
                out[key] = out.get(key, 0.0) + c1 * c2
        return Poly2(out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative power")
        out = Poly2.const(1.0)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def diff(self, var: str) -> Poly2:
        if var == "x":
            return Poly2({(i - 1, j): i * c for (i, j), c in self._c.items() if i})
        if var == "y":
            return Poly2({(i, j - 1): j * c for (i, j), c in self._c.items() if j})
        raise ValueError(f"unknown variable {var!r}")

    def homogeneous(self, k: int) -> Poly2:
        """The degree-``k`` homogeneous part."""
        return Poly2({key: c for key, c in self._c.items() if sum(key) == k})

    def compose(self, fx: Poly2, fy: Poly2) -> Poly2:
        """Substitute ``x -> fx`` and ``y -> fy``."""
        xp = [Poly2.const(1.0)]
        yp = [Poly2.const(1.0)]
        out = Poly2()
        for (i, j), c in self.terms():
            while len(xp) <= i:
                xp.append(xp[-1] * fx)
            while len(yp) <= j:
                yp.append(yp[-1] * fy)
            out = out + (xp[i] * yp[j]) * c
        return out


def evaluate(f: Poly2, x, y):
    """Value of ``f`` at ``(x, y)``; nested Horner, exact on small integers."""
    return f(x, y)


def add(f: Poly2, g: Poly2) -> Poly2:
    return f + g


def mul(f: Poly2, g: Poly2) -> Poly2:
    return f * g


def scale(f: Poly2, c: float) -> Poly2:
    return f * float(c)


class PlanarField(Protocol):
    """Anything that can be integrated: ``field(x, y) -> (u, v)`` plus divergence.

    Both calls must accept numpy arrays of equal shape as well as floats.
    """

    def __call__(self, x, y): ...

    def div(self, x, y): ...


@dataclass(frozen=True)
class VectorField:
    """The polynomial system ``x' = p(x, y), y' = q(x, y)``."""

    p: Poly2
    q: Poly2

    @property
    def degree(self) -> int:
        return max(self.p.degree, self.q.degree)

    def __call__(self, x, y):
        return self.p(x, y), self.q(x, y)

    @cached_property
    def _div(self) -> Poly2:
        return self.p.diff("x") + self.q.diff("y")

    @cached_property
    def _jac(self):
        return ((self.p.diff("x"), self.p.diff("y")),
                (self.q.diff("x"), self.q.diff("y")))

    def div(self, x, y):
        return self._div(x, y)

    def jac(self, x, y):
        """Jacobian entries at ``(x, y)`` as a nested 2x2 tuple (array-friendly)."""
        (a, b), (c, d) = self._jac
        return (a(x, y), b(x, y)), (c(x, y), d(x, y))

    def __add__(self, other: VectorField) -> VectorField:
        return VectorField(self.p + other.p, self.q + other.q)

    def __sub__(self, other: VectorField) -> VectorField:
        return VectorField(self.p - other.p, self.q - other.q)

    def scaled(self, c: float) -> VectorField:
        return VectorField(self.p * c, self.q * c)


def rotate(X: VectorField, alpha: float) -> VectorField:
    """The rotated field ``(P cos a - Q sin a, Q cos a + P sin a)``."""
    if alpha == 0:
        return X
    c, s = math.cos(alpha), math.sin(alpha)
    return VectorField(X.p * c - X.q * s, X.q * c + X.p * s)


def _shift(f: Poly2, p1: float, p2: float) -> Poly2:
    out: dict[Exponent, float] = {}
    for (i, j), c in f.terms():
        for k in range(i + 1):
            ck = c * math.comb(i, k) * p1 ** (i - k)
            if ck == 0.0:
                continue
            for m in range(j + 1):
                v = ck * math.comb(j, m) * p2 ** (j - m)
                out[(k, m)] = out.get((k, m), 0.0) + v
    return Poly2(out)


def translate(X: VectorField, p) -> VectorField:
    """``Y(x, y) = X(x + p[0], y + p[1])``, expanded with integer binomials."""
    p1, p2 = float(p[0]), float(p[1])
    if p1 == 0.0 and p2 == 0.0:
        return X
    return VectorField(_shift(X.p, p1, p2), _shift(X.q, p1, p2))


def mul_linear(X: VectorField, a: float, b: float) -> VectorField:
    """``((a x + b y) P, (a x + b y) Q)``."""
    if a == 0 and b == 0:
        raise ZeroLinearForm("the linear factor a*x + b*y is identically zero")
    ell = Poly2({(1, 0): a, (0, 1): b})
    return VectorField(ell * X.p, ell * X.q)


def jacobian(X: VectorField, p=(0.0, 0.0)) -> np.ndarray:
    (a, b), (c, d) = X.jac(float(p[0]), float(p[1]))
    return np.array([[a, b], [c, d]], dtype=float)


def divergence(X: VectorField) -> Poly2:
    return X.p.diff("x") + X.q.diff("y")


def leading_signs(X: VectorField) -> tuple[float, float]:
    """``(P_n(1, 0), Q_n(1, 0))`` with ``n = degree(X)``."""
    n = X.degree
    return X.p.coeff(n, 0), X.q.coeff(n, 0)


def nudge_leading(X: VectorField, eps: float) -> VectorField:
    """Make ``P_n(1, 0) Q_n(1, 0) != 0`` by adding ``eps * x**n`` where needed."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    pl, ql = leading_signs(X)
    if pl != 0 and ql != 0:
        return X
    n = X.degree
    bump = Poly2.monomial(n, 0, eps)
    return VectorField(X.p + bump if pl == 0 else X.p,
                       X.q + bump if ql == 0 else X.q)


def conjugate_linear(X: VectorField, T) -> VectorField:
    """The field in coordinates ``z = T w``: ``w' = T^-1 X(T w)``."""
    T = np.asarray(T, dtype=float)
    Ti = np.linalg.inv(T)
    fx = Poly2({(1, 0): T[0, 0], (0, 1): T[0, 1]})
    fy = Poly2({(1, 0): T[1, 0], (0, 1): T[1, 1]})
    p = X.p.compose(fx, fy)
    q = X.q.compose(fx, fy)
    return VectorField(p * Ti[0, 0] + q * Ti[0, 1], p * Ti[1, 0] + q * Ti[1, 1])


def square_substitute(f: Poly2) -> Poly2:
    """``f(u**2, v**2)``."""
    return Poly2({(2 * i, 2 * j): c for (i, j), c in f.terms()})


# field files -------------------------------------------------------------

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_TERM = re.compile(rf"^([PQ])\s+(\d+)\s+(\d+)\s+({_NUM})$")
_HEADER = re.compile(r"^degree\s+(-?\d+)$")


def parse_field(text: str) -> VectorField:
    """Parse the line-oriented field format (``degree n`` then ``P i j c`` lines)."""
    declared = None
    header_line = 0
    comps: dict[str, dict[Exponent, float]] = {"P": {}, "Q": {}}
    seen_terms = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            if declared is not None:
                raise FieldFormatError("duplicate degree header", lineno)
            if seen_terms:
                raise FieldFormatError("degree header must precede P/Q lines", lineno)
            declared = int(m.group(1))
            header_line = lineno
            continue
        m = _TERM.match(line)
        if not m:
            raise FieldFormatError(f"cannot parse {raw.strip()!r}", lineno)
        comp, i, j, c = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
        if not math.isfinite(c):
            raise FieldFormatError("non-finite coefficient", lineno)
        if (i, j) in comps[comp]:
            raise FieldFormatError(f"duplicate term {comp} {i} {j}", lineno)
        comps[comp][(i, j)] = c
        seen_terms = True
    if not seen_terms:
        raise FieldFormatError("no P/Q lines")
    if declared is None:
        raise FieldFormatError("missing 'degree <n>' header")
    X = VectorField(Poly2(comps["P"]), Poly2(comps["Q"]))
    if X.degree != declared:
        raise FieldFormatError(
            f"header declares degree {declared} but terms give degree {X.degree}",
            header_line)
    return X


def format_field(X: VectorField, comment: str | None = None) -> str:
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.append(f"degree {X.degree}")
    for name, poly in (("P", X.p), ("Q", X.q)):
        lines.extend(f"{name} {i} {j} {c!r}" for (i, j), c in poly.terms())
    return "\n".join(lines) + "\n"


def read_field(path) -> VectorField:
    with open(path, encoding="utf-8") as fh:
        return parse_field(fh.read())


def write_field(path, X: VectorField, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_field(X, comment))
