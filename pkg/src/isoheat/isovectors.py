"""Symmetry generators of the backward heat equation with V = C/q^2 + D q^2.

Generators are first-order operators ``a d/dt + b d/dq + c`` (:class:`TildeField`)
whose coefficients are :class:`~isoheat.fields.ScalarField` values. All the
algebra here (brackets, structure constants, basis changes, subalgebra checks)
is exact up to the field merge tolerance.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import MERGE_TOL, ONE, Q, T, ZERO, ScalarField, cos_t, exp_t, sin_t


class NotClosed(ArithmeticError):
    """A bracket of basis elements left the span of the basis."""


class StructureMismatch(AssertionError):
    """An expected Lie-algebra relation does not hold."""


@dataclass(frozen=True, eq=False)
class TildeField:
    a: ScalarField = ZERO  # d/dt
    b: ScalarField = ZERO  # d/dq
    c: ScalarField = ZERO  # multiplier

    def __post_init__(self):
        if self.a.depends_on_q():
            raise ValueError("the d/dt coefficient must not depend on q")

    def __add__(self, other: "TildeField") -> "TildeField":
        return TildeField(self.a + other.a, self.b + other.b, self.c + other.c)

    def __sub__(self, other: "TildeField") -> "TildeField":
        return TildeField(self.a - other.a, self.b - other.b, self.c - other.c)

    def __neg__(self):
        return TildeField(-self.a, -self.b, -self.c)

    def __mul__(self, k: float) -> "TildeField":
        return TildeField(self.a * k, self.b * k, self.c * k)

    __rmul__ = __mul__

    def __truediv__(self, k: float) -> "TildeField":
        return self * (1.0 / k)

    def __eq__(self, other):
        if not isinstance(other, TildeField):
            return NotImplemented
        return self.a == other.a and self.b == other.b and self.c == other.c

    __hash__ = None

    def is_zero(self) -> bool:
        return self.a.is_zero() and self.b.is_zero() and self.c.is_zero()

    def derive(self, f: ScalarField) -> ScalarField:
        """Apply the derivation part ``a d/dt + b d/dq`` to a field."""
        return self.a * f.d_dt() + self.b * f.d_dq()

    def eval(self, t, q):
        return self.a.eval(t, q), self.b.eval(t, q), self.c.eval(t, q)

    def to_json(self) -> dict:
        return {"dt": self.a.to_json(), "dq": self.b.to_json(), "mult": self.c.to_json()}

    def pretty(self) -> str:
        return f"({self.a.pretty()}) d/dt + ({self.b.pretty()}) d/dq + ({self.c.pretty()})"

    def __repr__(self):
        return f"TildeField[{self.pretty()}]"


def bracket(x: TildeField, y: TildeField) -> TildeField:
    """Commutator [x, y] of two first-order operators."""
    if x.a.depends_on_q() or y.a.depends_on_q():
        raise ValueError("bracket requires d/dt coefficients independent of q")
    return TildeField(
        x.derive(y.a) - y.derive(x.a),
        x.derive(y.b) - y.derive(x.b),
        x.derive(y.c) - y.derive(x.c),
    )


@dataclass(frozen=True)
class Potential:
    C: float
    D: float
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    def __call__(self, t, q):
        q = np.asarray(q, dtype=float)
        with np.errstate(divide="ignore"):
            return self.C / q**2 + self.D * q**2

    @property
    def epsilon(self) -> float | None:
        if self.D > 0:
            return math.sqrt(8 * self.D)
        if self.D < 0:
            return math.sqrt(-8 * self.D)
        return None

    @property
    def case_label(self) -> str:
        c = "C!=0" if self.C != 0 else "C=0"
        d = "D>0" if self.D > 0 else ("D<0" if self.D < 0 else "D=0")
        return f"{c},{d}"


@dataclass(frozen=True, eq=False)
class AlgebraCase:
    potential: Potential
    basis: tuple
    names: tuple
    epsilon: float | None = None
    kind: str = "P"  # P (raw), M (D=0), R/V (continuous in D), S (isomorphic to M)

    @property
    def label(self) -> str:
        return self.potential.case_label

    @property
    def dim(self) -> int:
        return len(self.basis)

    @property
    def gamma(self) -> float:
        return self.potential.gamma

    def __getitem__(self, key) -> TildeField:
        if isinstance(key, str):
            return self.basis[self.names.index(key)]
        return self.basis[key]

    def to_json(self) -> dict:
        return {
            "case": self.label,
            "C": self.potential.C,
            "D": self.potential.D,
            "gamma": self.potential.gamma,
            "epsilon": self.epsilon,
            "generators": {n: x.to_json() for n, x in zip(self.names, self.basis)},
        }


# --- bases -----------------------------------------------------------------

def _m_basis(g: float) -> list[TildeField]:
    return [
        TildeField(-(T * T), -(T * Q), (Q * Q - g * T) / (2 * g)),
        TildeField(-T, -Q / 2, ZERO),
        TildeField(-ONE, ZERO, ZERO),
        TildeField(ZERO, ZERO, ONE * (-1 / g)),
        TildeField(ZERO, -T, Q / g),
        TildeField(ZERO, -ONE, ZERO),
    ]


def _p_basis_hyperbolic(g: float, eps: float) -> list[TildeField]:
    ep, em = exp_t(eps), exp_t(-eps)
    hp, hm = exp_t(eps / 2), exp_t(-eps / 2)
    return [
        TildeField(-ep / eps, -(Q * ep) / 2, -(ep * (g - eps * Q * Q)) / (4 * g)),
        TildeField(em / eps, -(Q * em) / 2, -(em * (g + eps * Q * Q)) / (4 * g)),
        TildeField(-ONE, ZERO, ZERO),
        TildeField(ZERO, ZERO, ONE * (-1 / g)),
        TildeField(ZERO, -hp, Q * hp * (eps / (2 * g))),
        TildeField(ZERO, -hm, -(Q * hm) * (eps / (2 * g))),
    ]


def _p_basis_trig(g: float, eps: float) -> list[TildeField]:
    c1, s1 = cos_t(eps), sin_t(eps)
    ch, sh = cos_t(eps / 2), sin_t(eps / 2)
    return [
        TildeField(-s1 / eps, -(Q * c1) / 2, -((Q * Q * s1) * (eps / 4) + c1 * (g / 4)) / g),
        TildeField(c1 / eps, -(Q * s1) / 2, -((Q * Q * c1) * (-eps / 4) + s1 * (g / 4)) / g),
        TildeField(-ONE, ZERO, ZERO),
        TildeField(ZERO, ZERO, ONE * (-1 / g)),
        TildeField(ZERO, -ch, -(Q * sh) * (eps / (2 * g))),
        TildeField(ZERO, -sh, Q * ch * (eps / (2 * g))),
    ]


def basis(p: Potential) -> AlgebraCase:
    """Raw generator basis for the sign pattern of (C, D).

    D = 0 gives the M-basis, D != 0 the P-basis; four generators when C != 0,
    six when C = 0. Sign dispatch on D is exact.
    """
    g = p.gamma
    eps = p.epsilon
    if p.D == 0:
        full, kind, prefix = _m_basis(g), "M", "M"
    elif p.D > 0:
        full, kind, prefix = _p_basis_hyperbolic(g, eps), "P", "P"
    else:
        full, kind, prefix = _p_basis_trig(g, eps), "P", "P"
    n = 4 if p.C != 0 else 6
    names = tuple(f"{prefix}{i}" for i in range(1, n + 1))
    return AlgebraCase(p, tuple(full[:n]), names, eps, kind)


# --- change of basis --------------------------------------------------------

def theta_squared(gamma: float) -> float:
    """Value of the free constant in the R2 / V2 combinations.

    The limit D -> 0 reproduces M2 only when the P4 correction cancels the
    constant -1/2 left in the multiplier of (P1 + P2)/2, which forces
    theta**2 = gamma.
    """
    return gamma


def _combine(coeffs: np.ndarray, vectors) -> TildeField:
    out = TildeField()
    for k, v in zip(coeffs, vectors):
        if k != 0:
            out = out + v * float(k)
    return out


def continuous_matrix(p: Potential) -> np.ndarray:
    """Rows express R_i (D>0) or V_i (D<0) in the P-basis."""
    if p.D == 0:
        raise ValueError("the continuous basis is only defined for D != 0")
    eps, g = p.epsilon, p.gamma
    th2 = theta_squared(g)
    m = np.zeros((6, 6))
    if p.D > 0:
        m[0, :3] = [1 / eps, -1 / eps, -2 / eps**2]  # -((P2 - P1)/eps + 2/eps^2 P3)
        m[1, [0, 1, 3]] = [0.5, 0.5, -th2 / 4]        # (P1 + P2 - th^2/2 P4) / 2
        m[2, 2] = 1.0
        m[3, 3] = 1.0
        m[4, [4, 5]] = [1 / eps, -1 / eps]            # (P5 - P6) / eps
        m[5, 5] = 1.0                                  # P6
    else:
        m[0, [1, 2]] = [2 / eps, 2 / eps**2]          # 2 (P2/eps + P3/eps^2)
        m[1, [0, 3]] = [1.0, -th2 / 4]                 # P1 - th^2/4 P4
        m[2, 2] = 1.0
        m[3, 3] = 1.0
        m[4, 5] = 2 / eps                              # (2/eps) P6
        m[5, 4] = 1.0                                  # P5
    return m


def isomorphism_matrix(p: Potential) -> np.ndarray:
    """Rows express S_i in the continuous (R or V) basis; S_i maps to M_i."""
    if p.D == 0:
        return np.eye(6)
    eps, g = p.epsilon, p.gamma
    s = np.eye(6)
    if p.D > 0:
        s[1, :2] = [-eps / 2, 1.0]
        s[2, :4] = [eps**2 / 2, -eps, 1.0, -g * eps / 4]
    else:
        s[2, :3] = [-(eps / 2) ** 2, 0.0, 1.0]
    return s


def transformed_basis(case: AlgebraCase, which: str = "continuous") -> AlgebraCase:
    """R/V basis (``which='continuous'``) or the S basis (``which='iso'``)."""
    p = case.potential
    if p.D == 0:
        raise ValueError("transformed bases need D != 0")
    raw = basis(p)
    n = raw.dim
    cm = continuous_matrix(p)[:n, :n]
    letter = "R" if p.D > 0 else "V"
    if which == "continuous":
        mat, kind, prefix = cm, letter, letter
    elif which == "iso":
        mat, kind, prefix = isomorphism_matrix(p)[:n, :n] @ cm, "S", "S"
    else:
        raise ValueError(f"unknown basis {which!r}")
    vecs = tuple(_combine(row, raw.basis) for row in mat)
    names = tuple(f"{prefix}{i}" for i in range(1, n + 1))
    return AlgebraCase(p, vecs, names, raw.epsilon, kind)


def continuous_basis(p: Potential) -> AlgebraCase:
    """The basis that tends to the M-basis as D -> 0 (the M-basis itself at D = 0)."""
    raw = basis(p)
    return raw if p.D == 0 else transformed_basis(raw, "continuous")


# --- structure constants ----------------------------------------------------

def _flatten(x: TildeField) -> dict:
    out = {}
    for slot, f in enumerate((x.a, x.b, x.c)):
        for s in f.terms:
            out[(slot,) + s.key] = s.coeff
    return out


def _keys_match(k1, k2) -> bool:
    return (k1[0], k1[3], k1[4], k1[5]) == (k2[0], k2[3], k2[4], k2[5]) and all(
        abs(u - v) <= MERGE_TOL * max(1.0, abs(u), abs(v)) for u, v in ((k1[1], k2[1]), (k1[2], k2[2]))
    )


def decompose(x: TildeField, vectors) -> np.ndarray:
    """Coefficients of ``x`` in ``vectors`` by exact term matching.

    Raises :class:`NotClosed` when ``x`` is not in the span.
    """
    flats = [_flatten(v) for v in vectors]
    target = _flatten(x)
    keys: list = []
    for d in flats + [target]:
        for k in d:
            if not any(_keys_match(k, j) for j in keys):
                keys.append(k)

    def column(d):
        col = np.zeros(len(keys))
        for k, v in d.items():
            idx = next(i for i, j in enumerate(keys) if _keys_match(k, j))
            col[idx] += v
        return col

    A = np.column_stack([column(d) for d in flats]) if flats else np.zeros((len(keys), 0))
    rhs = column(target)
    if not keys:
        return np.zeros(len(vectors))
    coeffs, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    coeffs = np.where(np.abs(coeffs) < 1e-13 * max(1.0, np.abs(coeffs).max(initial=0)), 0.0, coeffs)
    recon = _combine(coeffs, vectors)
    if not recon == x:
        raise NotClosed(f"{x.pretty()} is not in the span of the basis")
    return coeffs


def structure_constants(case: AlgebraCase) -> dict:
    """{(i, j): coefficient vector of [e_i, e_j]} for i < j (0-based indices)."""
    table = {}
    for i, j in itertools.combinations(range(case.dim), 2):
        table[(i, j)] = decompose(bracket(case.basis[i], case.basis[j]), case.basis)
    return table


def format_combination(coeffs, names, digits: int = 10) -> str:
    parts = []
    for k, n in zip(coeffs, names):
        if k == 0:
            continue
        if abs(k - 1) < 10 ** -digits:
            parts.append(f"+{n}")
        elif abs(k + 1) < 10 ** -digits:
            parts.append(f"-{n}")
        else:
            parts.append(f"{k:+.{digits}g}*{n}")
    s = " ".join(parts)
    return s.lstrip("+") if s else "0"


def bracket_table(case: AlgebraCase) -> list[dict]:
    rows = []
    for (i, j), coeffs in structure_constants(case).items():
        rows.append({
            "left": case.names[i],
            "right": case.names[j],
            "coefficients": [float(c) for c in coeffs],
            "result": format_combination(coeffs, case.names),
        })
    return rows


def jacobi_defects(case: AlgebraCase) -> list[tuple]:
    """Triples whose Jacobi sum is not identically zero."""
    bad = []
    for i, j, k in itertools.combinations(range(case.dim), 3):
        x, y, z = (case.basis[n] for n in (i, j, k))
        total = bracket(bracket(x, y), z) + bracket(bracket(y, z), x) + bracket(bracket(z, x), y)
        if not total.is_zero():
            bad.append((i, j, k))
    return bad


# --- limits -----------------------------------------------------------------

def limit_check(D_sequence, C: float, grid, gamma: float = 1.0) -> list[dict]:
    """Max deviation of the continuous basis from the M-basis for each D.

    ``grid`` is an iterable of (t, q) points. Returns one record per D with
    ``deviation[i][slot]`` for generator i and slot in (dt, dq, mult).
    """
    D_sequence = list(D_sequence)
    signs = {np.sign(d) for d in D_sequence}
    if len(signs) != 1 or 0 in signs:
        raise ValueError("D values must be nonzero and share one sign")
    pts = np.asarray(list(grid), dtype=float)
    t, q = pts[:, 0], pts[:, 1]
    ref = basis(Potential(C, 0.0, gamma))
    out = []
    for D in D_sequence:
        cont = continuous_basis(Potential(C, D, gamma))
        dev = []
        for xr, xm in zip(cont.basis, ref.basis):
            dev.append([
                float(np.max(np.abs(np.broadcast_to(fr.eval(t, q), t.shape) - np.broadcast_to(fm.eval(t, q), t.shape))))
                for fr, fm in ((xr.a, xm.a), (xr.b, xm.b), (xr.c, xm.c))
            ])
        out.append({
            "D": D,
            "epsilon": cont.epsilon,
            "deviation": dev,
            "max": max(max(d) for d in dev),
        })
    return out


# --- structure theorem --------------------------------------------------------

@dataclass
class StructureReport:
    case: str
    dim: int
    basis_kind: str
    checks: list = field(default_factory=list)
    ok: bool = True
    kind: str = ""

    def add(self, name: str, passed: bool, detail: str = ""):
        self.checks.append({"check": name, "passed": bool(passed), "detail": detail})
        self.ok = self.ok and bool(passed)

    def to_json(self) -> dict:
        return {"case": self.case, "dim": self.dim, "basis": self.basis_kind,
                "structure": self.kind, "ok": self.ok, "checks": self.checks}


def iso_basis(p: Potential) -> AlgebraCase:
    """The basis mapped onto the M-basis by the isomorphism (M itself at D = 0)."""
    raw = basis(p)
    return raw if p.D == 0 else transformed_basis(raw, "iso")


def structure_identification(case: AlgebraCase, strict: bool = True) -> StructureReport:
    """Verify the sl2 / Heisenberg structure, raising on the first failure if strict."""
    p = case.potential
    sb = iso_basis(p)
    g = p.gamma
    rep = StructureReport(case.label, sb.dim, sb.kind)

    def check(name, lhs, rhs):
        ok = lhs == rhs
        rep.add(name, ok, "" if ok else f"lhs={lhs.pretty()} rhs={rhs.pretty()}")
        if strict and not ok:
            raise StructureMismatch(f"{case.label}: {name} fails: {lhs.pretty()} != {rhs.pretty()}")

    b = sb.basis
    e = b[2] * -0.5
    f = b[0] * 2.0
    h = b[1] * 2.0 + b[3] * (g / 2)
    check("[h,e]=2e", bracket(h, e), e * 2.0)
    check("[h,f]=-2f", bracket(h, f), f * -2.0)
    check("[e,f]=h", bracket(e, f), h)

    # intertwining: brackets in the S basis have the M-basis structure constants
    ref = basis(Potential(p.C, 0.0, g))
    ours = structure_constants(sb)
    theirs = structure_constants(ref)
    worst = max(float(np.max(np.abs(ours[k] - theirs[k]))) for k in ours)
    ok = worst <= 1e-10
    rep.add("isomorphism onto M-basis", ok, f"max structure-constant difference {worst:.3g}")
    if strict and not ok:
        raise StructureMismatch(f"{case.label}: isomorphism does not intertwine brackets ({worst:.3g})")

    center = b[3]
    for i, x in enumerate(b):
        check(f"[{sb.names[3]},{sb.names[i]}]=0", bracket(center, x), TildeField())

    if sb.dim == 6:
        check("[e5,e6]=-e4", bracket(b[4], b[5]), -b[3])
        heis = [b[3], b[4], b[5]]
        for name, x in (("e", e), ("f", f), ("h", h)):
            for k, y in enumerate(heis):
                z = bracket(x, y)
                try:
                    decompose(z, heis)
                    ok = True
                except NotClosed:
                    ok = False
                rep.add(f"[{name},H3_{k}] in H3", ok)
                if strict and not ok:
                    raise StructureMismatch(f"sl2 does not preserve H3: [{name}, H3_{k}]")
        rep.kind = "sl2 |x H3 (semidirect), center <e4>"
    else:
        for name, x in (("e", e), ("f", f), ("h", h)):
            check(f"[{name},e4]=0", bracket(x, b[3]), TildeField())
        rep.kind = "sl2 (+) <e4> (direct)"
    return rep


# --- subalgebras ------------------------------------------------------------

_J_K_TABLE = {
    # (C != 0, D sign) -> (J indices, K indices), 1-based into the raw basis
    (True, "nonzero"): ((3, 4), (1, 2, 3, 4)),
    (False, "nonzero"): ((3, 4), (1, 2, 3, 4)),
    (True, "zero"): ((2, 3, 4), (1, 2, 3, 4)),
    (False, "zero"): ((2, 3, 4, 6), (1, 2, 3, 4)),
}


def _is_closed(vectors) -> bool:
    for x, y in itertools.combinations(vectors, 2):
        try:
            decompose(bracket(x, y), vectors)
        except NotClosed:
            return False
    return True


def subalgebra_tables(case: AlgebraCase) -> dict:
    raw = basis(case.potential)
    key = (case.potential.C != 0, "zero" if case.potential.D == 0 else "nonzero")
    j_idx, k_idx = _J_K_TABLE[key]
    J = [raw.basis[i - 1] for i in j_idx]
    K = [raw.basis[i - 1] for i in k_idx]
    inter = sorted(set(j_idx) & set(k_idx))
    return {
        "case": case.label,
        "J": [raw.names[i - 1] for i in j_idx],
        "K": [raw.names[i - 1] for i in k_idx],
        "J_and_K": [raw.names[i - 1] for i in inter],
        "J_closed": _is_closed(J),
        "K_closed": _is_closed(K),
        # defining property of J: the S-component (-gamma * multiplier) is constant
        "J_constant_multiplier": all(x.c.is_constant() for x in J),
    }


# --- determining equations -------------------------------------------------

def determining_check(T_N: ScalarField, l: ScalarField, sigma: ScalarField, p: Potential) -> dict:
    for name, f in (("T_N", T_N), ("l", l), ("sigma", sigma)):
        if f.depends_on_q():
            raise ValueError(f"{name} must depend on t only")
    d1 = T_N.d_dt()
    d2 = d1.d_dt()
    d3 = d2.d_dt()
    return {
        "2Cl": l * (2 * p.C),
        "l''-2Dl": l.d_dt().d_dt() - l * (2 * p.D),
        "sigma'-gamma/4 T''": sigma.d_dt() - d2 * (p.gamma / 4),
        "T'''-8DT'": d3 - d1 * (8 * p.D),
    }


def components(x: TildeField, gamma: float) -> dict:
    """Recover (N^t, N^q, N^S) and (T_N, l, sigma) from a generator."""
    nt, nq, ns = -x.a, -x.b, x.c * (-gamma)
    return {
        "N_t": nt,
        "N_q": nq,
        "N_S": ns,
        "T_N": nt,
        "l": nq.q_part(0),
        "sigma": ns.q_part(0),
    }


def generator_consistency(x: TildeField, p: Potential) -> dict:
    """Residuals of the isovector form: N^q = T'q/2 + l and N^S = -(T''q^2/4 + l'q - sigma)."""
    comp = components(x, p.gamma)
    T_N, l, sigma = comp["T_N"], comp["l"], comp["sigma"]
    nq_expected = T_N.d_dt() * Q * 0.5 + l
    phi = T_N.d_dt().d_dt() * Q * Q * 0.25 + l.d_dt() * Q - sigma
    res = determining_check(T_N, l, sigma, p)
    res["N^q form"] = comp["N_q"] - nq_expected
    res["N^S form"] = comp["N_S"] + phi
    return res
