"""Exact term algebra for the coefficient functions of symmetry generators.

A :class:`ScalarField` is a finite sum of terms

    c * t**p * q**m * exp(a*t) * {1 | cos(w*t) | sin(w*t)}

kept in a canonical normal form (sorted, like terms merged, zeros dropped),
so two fields describing the same function compare equal. The set is closed
under addition, multiplication (trig products are expanded with the
product-to-sum identities) and both partial derivatives.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

MERGE_TOL = 1e-12

# oscillation kinds, ordered as they appear in the canonical key
NONE, COS, SIN = 0, 1, 2
_OSC_NAMES = {NONE: "none", COS: "cos", SIN: "sin"}
_OSC_CODES = {v: k for k, v in _OSC_NAMES.items()}

Number = Union[int, float]


def _close(x: float, y: float, tol: float = MERGE_TOL) -> bool:
    return abs(x - y) <= tol * max(1.0, abs(x), abs(y))


@dataclass(frozen=True)
class Term:
    coeff: float
    tpow: int = 0
    qpow: int = 0
    exprate: float = 0.0
    osc: int = NONE
    omega: float = 0.0

    def __post_init__(self):
        if self.tpow < 0 or self.qpow < 0:
            raise ValueError("powers of t and q must be nonnegative")
        if self.osc == NONE:
            if self.omega != 0.0:
                object.__setattr__(self, "omega", 0.0)
        elif not self.omega > 0:
            raise ValueError("oscillating terms need omega > 0")

    @property
    def key(self):
        return (self.exprate, self.omega, self.osc, self.tpow, self.qpow)

    def with_coeff(self, c: float) -> "Term":
        return Term(c, self.tpow, self.qpow, self.exprate, self.osc, self.omega)

    def evaluate(self, t, q):
        v = self.coeff * np.power(t, self.tpow) * np.power(q, self.qpow)
        if self.exprate != 0.0:
            v = v * np.exp(self.exprate * t)
        if self.osc == COS:
            v = v * np.cos(self.omega * t)
        elif self.osc == SIN:
            v = v * np.sin(self.omega * t)
        return v

    def to_dict(self) -> dict:
        return {
            "coeff": self.coeff,
            "tpow": self.tpow,
            "qpow": self.qpow,
            "exprate": self.exprate,
            "osc": _OSC_NAMES[self.osc],
            "omega": self.omega,
        }


def _canonical_osc(coeff: float, osc: int, omega: float):
    """Fold negative and zero frequencies. Returns (coeff, osc, omega) or None."""
    if osc == NONE:
        return coeff, NONE, 0.0
    if abs(omega) <= MERGE_TOL:
        return (coeff, NONE, 0.0) if osc == COS else None
    if omega < 0:
        return (coeff, osc, -omega) if osc == COS else (-coeff, osc, -omega)
    return coeff, osc, omega


def _normalize(terms: Iterable[Term]) -> tuple:
    raw = []
    for term in terms:
        folded = _canonical_osc(term.coeff, term.osc, term.omega)
        if folded is None:
            continue
        c, osc, w = folded
        raw.append(Term(c, term.tpow, term.qpow, term.exprate, osc, w))
    raw.sort(key=lambda s: s.key)

    # (term, largest summand magnitude) so cancellation is judged relatively
    merged: list[list] = []
    for term in raw:
        if merged:
            last, scale = merged[-1]
            same = (
                last.osc == term.osc
                and last.tpow == term.tpow
                and last.qpow == term.qpow
                and _close(last.exprate, term.exprate)
                and _close(last.omega, term.omega)
            )
            if same:
                merged[-1] = [last.with_coeff(last.coeff + term.coeff), max(scale, abs(term.coeff))]
                continue
        merged.append([term, abs(term.coeff)])

    return tuple(term for term, scale in merged if abs(term.coeff) > MERGE_TOL * max(1.0, scale))


def _mul_terms(x: Term, y: Term) -> list[Term]:
    c = x.coeff * y.coeff
    tp, qp, rate = x.tpow + y.tpow, x.qpow + y.qpow, x.exprate + y.exprate

    def mk(coeff, osc=NONE, omega=0.0):
        # frequencies may come out zero or negative; _normalize folds them
        folded = _canonical_osc(coeff, osc, omega)
        return [] if folded is None else [Term(folded[0], tp, qp, rate, folded[1], folded[2])]

    if x.osc == NONE:
        return mk(c, y.osc, y.omega)
    if y.osc == NONE:
        return mk(c, x.osc, x.omega)
    a, b = x.omega, y.omega
    if x.osc == COS and y.osc == COS:
        return mk(c / 2, COS, a - b) + mk(c / 2, COS, a + b)
    if x.osc == SIN and y.osc == SIN:
        return mk(c / 2, COS, a - b) + mk(-c / 2, COS, a + b)
    if x.osc == SIN:  # sin(a) cos(b)
        return mk(c / 2, SIN, a + b) + mk(c / 2, SIN, a - b)
    return mk(c / 2, SIN, a + b) + mk(-c / 2, SIN, a - b)


class ScalarField:
    """Immutable finite sum of :class:`Term` in canonical order."""

    __slots__ = ("terms",)

    def __init__(self, terms: Iterable[Term] = ()):
        object.__setattr__(self, "terms", _normalize(terms))

    def __setattr__(self, name, value):
        raise AttributeError("ScalarField is immutable")

    # constructors -----------------------------------------------------
    @classmethod
    def const(cls, c: Number) -> "ScalarField":
        return cls([Term(float(c))])

    @classmethod
    def monomial(cls, coeff: Number = 1.0, tpow: int = 0, qpow: int = 0,
                 exprate: Number = 0.0, osc: str = "none", omega: Number = 0.0) -> "ScalarField":
        folded = _canonical_osc(float(coeff), _OSC_CODES[osc], float(omega))
        if folded is None:
            return cls()
        c, code, w = folded
        return cls([Term(c, tpow, qpow, float(exprate), code, w)])

    @classmethod
    def zero(cls) -> "ScalarField":
        return cls()

    # algebra ----------------------------------------------------------
    def __add__(self, other):
        other = _coerce(other)
        return ScalarField(self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return ScalarField(s.with_coeff(-s.coeff) for s in self.terms)

    def __sub__(self, other):
        return self + (-_coerce(other))

    def __rsub__(self, other):
        return _coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return ScalarField(s.with_coeff(s.coeff * other) for s in self.terms)
        other = _coerce(other)
        out = []
        for x in self.terms:
            for y in other.terms:
                out.extend(_mul_terms(x, y))
        return ScalarField(out)

    __rmul__ = __mul__

    def __truediv__(self, other: Number):
        if not isinstance(other, (int, float)):
            raise TypeError("fields can only be divided by numbers")
        return self * (1.0 / other)

    def d_dt(self) -> "ScalarField":
        out = []
        for s in self.terms:
            if s.tpow:
                out.append(Term(s.coeff * s.tpow, s.tpow - 1, s.qpow, s.exprate, s.osc, s.omega))
            if s.exprate != 0.0:
                out.append(s.with_coeff(s.coeff * s.exprate))
            if s.osc == COS:
                out.append(Term(-s.coeff * s.omega, s.tpow, s.qpow, s.exprate, SIN, s.omega))
            elif s.osc == SIN:
                out.append(Term(s.coeff * s.omega, s.tpow, s.qpow, s.exprate, COS, s.omega))
        return ScalarField(out)

    def d_dq(self) -> "ScalarField":
        return ScalarField(
            Term(s.coeff * s.qpow, s.tpow, s.qpow - 1, s.exprate, s.osc, s.omega)
            for s in self.terms if s.qpow
        )

    # inspection -------------------------------------------------------
    def __call__(self, t, q=0.0):
        return self.eval(t, q)

    def eval(self, t, q=0.0):
        total = np.zeros(np.broadcast(np.asarray(t), np.asarray(q)).shape)[()]
        for s in self.terms:
            total = total + s.evaluate(t, q)
        return total

    def is_zero(self) -> bool:
        return not self.terms

    def depends_on_q(self) -> bool:
        return any(s.qpow for s in self.terms)

    def depends_on_t(self) -> bool:
        return any(s.tpow or s.exprate or s.osc for s in self.terms)

    def is_constant(self) -> bool:
        return not (self.depends_on_q() or self.depends_on_t())

    def constant_value(self) -> float:
        if not self.is_constant():
            raise ValueError("field is not constant")
        return self.terms[0].coeff if self.terms else 0.0

    def q_part(self, qpow: int) -> "ScalarField":
        """The coefficient of q**qpow, as a field in t alone."""
        return ScalarField(
            Term(s.coeff, s.tpow, 0, s.exprate, s.osc, s.omega) for s in self.terms if s.qpow == qpow
        )

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = ScalarField.const(other)
        if not isinstance(other, ScalarField):
            return NotImplemented
        return (self - other).is_zero()

    def __hash__(self):
        raise TypeError("ScalarField is compared up to tolerance and is not hashable")

    def __len__(self):
        return len(self.terms)

    def __repr__(self):
        return f"ScalarField({self.pretty()})"

    def pretty(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for s in self.terms:
            factors = [f"{s.coeff:.12g}"]
            if s.tpow:
                factors.append("t" if s.tpow == 1 else f"t^{s.tpow}")
            if s.qpow:
                factors.append("q" if s.qpow == 1 else f"q^{s.qpow}")
            if s.exprate:
                factors.append(f"exp({s.exprate:.12g}t)")
            if s.osc != NONE:
                factors.append(f"{_OSC_NAMES[s.osc]}({s.omega:.12g}t)")
            parts.append("*".join(factors))
        return " + ".join(parts)

    def to_json(self) -> list[dict]:
        """Term list schema: [{coeff, tpow, qpow, exprate, osc, omega}, ...]."""
        return [s.to_dict() for s in self.terms]

    @classmethod
    def from_json(cls, data: list[dict]) -> "ScalarField":
        return cls(
            Term(float(d["coeff"]), int(d["tpow"]), int(d["qpow"]), float(d["exprate"]),
                 _OSC_CODES[d["osc"]], float(d["omega"]))
            for d in data
        )

    def to_sympy(self, t, q):
        import sympy as sp

        expr = sp.Integer(0)
        for s in self.terms:
            term = sp.Float(s.coeff) * t**s.tpow * q**s.qpow
            if s.exprate:
                term *= sp.exp(sp.Float(s.exprate) * t)
            if s.osc == COS:
                term *= sp.cos(sp.Float(s.omega) * t)
            elif s.osc == SIN:
                term *= sp.sin(sp.Float(s.omega) * t)
            expr += term
        return expr


def _coerce(x) -> ScalarField:
    if isinstance(x, ScalarField):
        return x
    if isinstance(x, (int, float)):
        return ScalarField.const(x)
    raise TypeError(f"cannot combine ScalarField with {type(x).__name__}")


# shorthand builders used throughout the package
T = ScalarField.monomial(1.0, tpow=1)
Q = ScalarField.monomial(1.0, qpow=1)
ONE = ScalarField.const(1.0)
ZERO = ScalarField.zero()


def exp_t(rate: float) -> ScalarField:
    return ScalarField.monomial(1.0, exprate=rate)


def cos_t(omega: float) -> ScalarField:
    return ScalarField.monomial(1.0, osc="cos", omega=omega)


def sin_t(omega: float) -> ScalarField:
    return ScalarField.monomial(1.0, osc="sin", omega=omega)


def add(f: ScalarField, g: ScalarField) -> ScalarField:
    return f + g


def mul(f: ScalarField, g: ScalarField) -> ScalarField:
    return f * g


def d_dt(f: ScalarField) -> ScalarField:
    return f.d_dt()


def d_dq(f: ScalarField) -> ScalarField:
    return f.d_dq()


def evaluate(f: ScalarField, t: float, q: float) -> float:
    return float(f.eval(t, q))


__all__ = [
    "Term", "ScalarField", "T", "Q", "ONE", "ZERO", "exp_t", "cos_t", "sin_t",
    "add", "mul", "d_dt", "d_dq", "evaluate", "MERGE_TOL",
]
