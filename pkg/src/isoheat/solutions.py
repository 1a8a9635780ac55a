"""Closed-form positive solutions of  gamma eta_t = -gamma^2/2 eta_qq + V eta.

Library solutions are sympy expressions in (t, q), so every partial derivative
is exact and survives composition with group actions and generator
applications. Solutions supplied as plain callables fall back to
Richardson-extrapolated central differences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import sympy as sp

from .isovectors import Potential, TildeField, bracket

t_sym, q_sym = sp.symbols("t q", real=True)


class DomainError(ValueError):
    """A requested point lies outside a solution's domain."""


class DomainShrunk(DomainError):
    """A group action is singular inside the requested time window."""


@dataclass(frozen=True)
class Domain:
    """Open domain in (t, q) described by a vectorised predicate."""

    contains_fn: Callable = field(compare=False)
    description: str = "R x R"

    def contains(self, t, q):
        t = np.asarray(t, dtype=float)
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(self.contains_fn(t, q), np.broadcast(t, q).shape)

    @classmethod
    def everywhere(cls) -> "Domain":
        return cls(lambda t, q: np.ones(np.broadcast(t, q).shape, dtype=bool), "R x R")

    @classmethod
    def box(cls, t_min=-math.inf, t_max=math.inf, q_min=-math.inf, q_max=math.inf) -> "Domain":
        desc = f"({t_min}, {t_max}) x ({q_min}, {q_max})"
        return cls(lambda t, q: (t > t_min) & (t < t_max) & (q > q_min) & (q < q_max), desc)


def _sym(x: float):
    x = float(x)
    if x.is_integer():
        return sp.Integer(int(x))
    return sp.Float(x)


def _lambdify(expr):
    f = sp.lambdify((t_sym, q_sym), expr, modules="numpy")

    def call(t, q):
        t = np.asarray(t, dtype=float)
        q = np.asarray(q, dtype=float)
        shape = np.broadcast(t, q).shape
        with np.errstate(all="ignore"):
            out = f(t, q)
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()[()] if shape else float(out)

    return call


class Solution:
    """A solution eta(t, q) with its partial derivatives.

    Exactly one of ``expr`` (sympy, exact partials) or ``func`` (callable,
    finite-difference partials) is set. ``log_expr`` optionally carries
    ln(eta) in closed form, used for numerically stable log-derivatives.
    """

    def __init__(self, expr=None, func=None, domain: Domain | None = None,
                 potential: Potential | None = None, provenance=("user-supplied",),
                 log_expr=None, fd_scale: float = 1.0):
        if (expr is None) == (func is None):
            raise ValueError("give exactly one of expr or func")
        self.expr = expr
        self.func = func
        self.log_expr = log_expr
        self.domain = domain or Domain.everywhere()
        self.potential = potential
        self.provenance = tuple(provenance)
        self.fd_scale = fd_scale
        self._cache: dict = {}

    @classmethod
    def from_callable(cls, func, domain=None, potential=None, fd_scale: float = 1.0) -> "Solution":
        return cls(func=func, domain=domain, potential=potential,
                   provenance=("user-supplied",), fd_scale=fd_scale)

    @property
    def is_exact(self) -> bool:
        return self.expr is not None

    @property
    def gamma(self) -> float:
        if self.potential is None:
            raise ValueError("solution has no attached potential; pass gamma explicitly")
        return self.potential.gamma

    def describe(self) -> dict:
        return {
            "provenance": list(self.provenance),
            "exact": self.is_exact,
            "expr": str(self.expr) if self.is_exact else None,
            "domain": self.domain.description,
            "potential": None if self.potential is None else {
                "C": self.potential.C, "D": self.potential.D, "gamma": self.potential.gamma},
        }

    # evaluation -------------------------------------------------------
    def partial(self, nt: int = 0, nq: int = 0) -> Callable:
        key = (nt, nq)
        if key not in self._cache:
            if self.is_exact:
                e = self.expr
                if nt:
                    e = sp.diff(e, t_sym, nt)
                if nq:
                    e = sp.diff(e, q_sym, nq)
                self._cache[key] = _lambdify(e)
            else:
                self._cache[key] = _richardson(self.func, nt, nq, 1e-5 * self.fd_scale)
        return self._cache[key]

    def __call__(self, t, q):
        return self.partial()(t, q)

    def eta_t(self, t, q):
        return self.partial(1, 0)(t, q)

    def eta_q(self, t, q):
        return self.partial(0, 1)(t, q)

    def eta_qq(self, t, q):
        return self.partial(0, 2)(t, q)

    def _log_derivative(self, var):
        key = ("log", var)
        if key not in self._cache:
            if self.is_exact:
                if self.log_expr is not None:
                    e = sp.diff(self.log_expr, var)
                else:
                    e = sp.diff(self.expr, var) / self.expr
                self._cache[key] = _lambdify(e)
            else:
                num = self.partial(*((1, 0) if var is t_sym else (0, 1)))
                self._cache[key] = lambda t, q: num(t, q) / self.func(t, q)
        return self._cache[key]

    def log_t(self, t, q):
        """d/dt ln eta."""
        return self._log_derivative(t_sym)(t, q)

    def log_q(self, t, q):
        """d/dq ln eta."""
        return self._log_derivative(q_sym)(t, q)

    def log_eta(self, t, q):
        if self.is_exact and self.log_expr is not None:
            key = ("log", None)
            if key not in self._cache:
                self._cache[key] = _lambdify(self.log_expr)
            return self._cache[key](t, q)
        return np.log(self(t, q))

    def check_domain(self, t, q):
        inside = self.domain.contains(t, q)
        if not np.all(inside):
            idx = np.argwhere(~np.atleast_1d(inside))[0]
            tt = np.broadcast_to(np.asarray(t, float), np.shape(inside))
            qq = np.broadcast_to(np.asarray(q, float), np.shape(inside))
            raise DomainError(
                f"point (t={np.atleast_1d(tt)[tuple(idx)]}, q={np.atleast_1d(qq)[tuple(idx)]}) "
                f"outside domain {self.domain.description}")

    def derived(self, expr, provenance_step: str, domain=None, log_expr=None) -> "Solution":
        return Solution(expr=expr, domain=domain or self.domain, potential=self.potential,
                        provenance=self.provenance + (provenance_step,), log_expr=log_expr)


def _richardson(f, nt: int, nq: int, h: float) -> Callable:
    """Central differences combined as (4 D(h/2) - D(h)) / 3."""
    if (nt, nq) == (0, 0):
        return f

    def central(t, q, step):
        if (nt, nq) == (1, 0):
            return (f(t + step, q) - f(t - step, q)) / (2 * step)
        if (nt, nq) == (0, 1):
            return (f(t, q + step) - f(t, q - step)) / (2 * step)
        if (nt, nq) == (0, 2):
            return (f(t, q + step) - 2 * f(t, q) + f(t, q - step)) / step**2
        if (nt, nq) == (2, 0):
            return (f(t + step, q) - 2 * f(t, q) + f(t - step, q)) / step**2
        raise NotImplementedError(f"finite differences for order {(nt, nq)}")

    def deriv(t, q):
        t = np.asarray(t, dtype=float)
        q = np.asarray(q, dtype=float)
        step = h if (nt + nq) == 1 else math.sqrt(h) * 1e-1
        return (4 * central(t, q, step / 2) - central(t, q, step)) / 3

    return deriv


# --- library -----------------------------------------------------------------

def constant_eta(gamma: float = 1.0) -> Solution:
    """eta = 1, a solution for V = 0."""
    return Solution(expr=sp.Integer(1), potential=Potential(0.0, 0.0, gamma),
                    provenance=("library:constant",), log_expr=sp.Integer(0))


def heat_kernel_eta(gamma: float = 1.0, t_end: float = 2.0, q0: float = 0.0) -> Solution:
    """Backward Gaussian kernel, defined for t < t_end (V = 0)."""
    g, T0, x0 = _sym(gamma), _sym(t_end), _sym(q0)
    log_expr = -sp.log(T0 - t_sym) / 2 - (q_sym - x0) ** 2 / (2 * g * (T0 - t_sym))
    return Solution(expr=sp.exp(log_expr), potential=Potential(0.0, 0.0, gamma),
                    domain=Domain.box(t_max=t_end), provenance=(f"library:heat_kernel(T={t_end},q0={q0})",),
                    log_expr=log_expr)


def plane_wave_eta(k: float, gamma: float = 1.0) -> Solution:
    """eta = exp(k q - gamma k^2 t / 2), V = 0."""
    kk, g = _sym(k), _sym(gamma)
    log_expr = kk * q_sym - g * kk**2 * t_sym / 2
    return Solution(expr=sp.exp(log_expr), potential=Potential(0.0, 0.0, gamma),
                    provenance=(f"library:plane_wave(k={k})",), log_expr=log_expr)


def affine_potential(alpha: float, lam: float, delta: float) -> Potential:
    return Potential(alpha**4 / 128 * (delta - 1) * (delta - 3), lam**2 / 8, alpha**2 / 4)


def affine_eta(alpha: float, lam: float, delta: float) -> Solution:
    """eta = exp(lam delta t / 4 - lam q^2 / alpha^2) q^((delta-1)/2) on q > 0.

    Paired potential: gamma = alpha^2/4, C = alpha^4 (delta-1)(delta-3)/128,
    D = lam^2/8. For delta = 1 the q-power vanishes and the domain is all of R.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    a, l, d = _sym(alpha), _sym(lam), _sym(delta)
    k = (delta - 1) / 2
    log_expr = l * d * t_sym / 4 - l * q_sym**2 / a**2
    expr = sp.exp(log_expr)
    if k != 0:
        kk = _sym(k)
        log_expr = log_expr + kk * sp.log(q_sym)
        expr = expr * q_sym**kk
        domain = Domain.box(q_min=0.0)
    else:
        domain = Domain.everywhere()
    return Solution(expr=expr, potential=affine_potential(alpha, lam, delta), domain=domain,
                    provenance=(f"library:affine(alpha={alpha},lambda={lam},delta={delta})",),
                    log_expr=log_expr)


# --- residuals -----------------------------------------------------------------

@dataclass
class Residual:
    max_abs: float
    scale: float

    @property
    def relative(self) -> float:
        return self.max_abs / self.scale if self.scale > 0 else self.max_abs


def _grid_arrays(grid):
    pts = np.asarray(list(grid) if not isinstance(grid, np.ndarray) else grid, dtype=float)
    return pts[:, 0], pts[:, 1]


def residual(eta: Solution, p: Potential | None = None, grid=None, dual: bool = False) -> Residual:
    """Max |gamma eta_t + gamma^2/2 eta_qq - V eta| over the grid.

    With ``dual=True`` the sign of the time derivative is flipped (the adjoint
    equation satisfied by eta_* = rho / eta). The relative value divides by
    the largest of |gamma eta_t|, |V eta|, gamma^2/2 |eta_qq| on the grid.
    """
    p = p or eta.potential
    t, q = _grid_arrays(grid)
    eta.check_domain(t, q)
    g = p.gamma
    et = g * eta.eta_t(t, q)
    eqq = 0.5 * g * g * eta.eta_qq(t, q)
    ve = p(t, q) * eta(t, q)
    r = (-et if dual else et) + eqq - ve
    scale = max(np.max(np.abs(et)), np.max(np.abs(eqq)), np.max(np.abs(ve)))
    return Residual(float(np.max(np.abs(r))), float(scale))


# --- generators acting on solutions ---------------------------------------------

def apply_tilde(X: TildeField, eta: Solution) -> Solution:
    """X(eta) = a eta_t + b eta_q + c eta, again a solution (not necessarily positive)."""
    if eta.is_exact:
        a, b, c = (f.to_sympy(t_sym, q_sym) for f in (X.a, X.b, X.c))
        expr = a * sp.diff(eta.expr, t_sym) + b * sp.diff(eta.expr, q_sym) + c * eta.expr
        return eta.derived(expr, "tilde:" + X.pretty())

    def func(t, q):
        return X.a.eval(t, q) * eta.eta_t(t, q) + X.b.eval(t, q) * eta.eta_q(t, q) + X.c.eval(t, q) * eta(t, q)

    return Solution(func=func, domain=eta.domain, potential=eta.potential,
                    provenance=eta.provenance + ("tilde:" + X.pretty(),), fd_scale=eta.fd_scale)


def _check_free(eta: Solution):
    p = eta.potential
    if p is not None and (p.C != 0 or p.D != 0):
        raise ValueError("group actions are only tabulated for C = 0, D = 0")


def group_action(i: int, mu: float, eta: Solution, window=None) -> Solution:
    """exp(mu M_i) applied to eta, for the free (C = D = 0) generators M_1..M_6."""
    _check_free(eta)
    if i not in range(1, 7):
        raise ValueError("generator index must be in 1..6")
    g = eta.potential.gamma if eta.potential else 1.0
    m, G = _sym(mu), _sym(g)
    t, q = t_sym, q_sym
    old = eta.domain

    if i == 1:
        if window is not None:
            lo, hi = window
            if 1 + mu * lo <= 0 or 1 + mu * hi <= 0:
                raise DomainShrunk(f"1 + mu t vanishes inside the window {window} for mu={mu}")
        s = 1 + m * t
        sub = {t: t / s, q: q / s}
        log_pref = -sp.log(s) / 2 + m * q**2 / (2 * G * s)

        def contains(tt, qq):
            ss = 1 + mu * tt
            ok = ss > 0
            with np.errstate(all="ignore"):
                return ok & old.contains(np.where(ok, tt / ss, 0.0), np.where(ok, qq / ss, 0.0))
    elif i == 2:
        sub = {t: sp.exp(-m) * t, q: sp.exp(-m / 2) * q}
        log_pref = sp.Integer(0)
        ft, fq = math.exp(-mu), math.exp(-mu / 2)

        def contains(tt, qq):
            return old.contains(ft * tt, fq * qq)
    elif i == 3:
        sub = {t: t - m}
        log_pref = sp.Integer(0)

        def contains(tt, qq):
            return old.contains(tt - mu, qq)
    elif i == 4:
        sub = {}
        log_pref = -m / G

        def contains(tt, qq):
            return old.contains(tt, qq)
    elif i == 5:
        sub = {q: q - m * t}
        log_pref = m * q / G - m**2 * t / (2 * G)

        def contains(tt, qq):
            return old.contains(tt, qq - mu * tt)
    else:
        sub = {q: q - m}
        log_pref = sp.Integer(0)

        def contains(tt, qq):
            return old.contains(tt, qq - mu)

    dom = Domain(contains, f"exp({mu} M{i}) . [{old.description}]")
    step = f"group:M{i}(mu={mu})"
    if eta.is_exact:
        inner = eta.expr.xreplace(sub) if sub else eta.expr
        expr = sp.exp(log_pref) * inner if log_pref != 0 else inner
        log_expr = None
        if eta.log_expr is not None:
            log_expr = log_pref + (eta.log_expr.xreplace(sub) if sub else eta.log_expr)
        return eta.derived(expr, step, domain=dom, log_expr=log_expr)

    pref = _lambdify(sp.exp(log_pref))
    tmap = _lambdify(sub.get(t, t))
    qmap = _lambdify(sub.get(q, q))

    def func(tt, qq):
        return pref(tt, qq) * eta.func(tmap(tt, qq), qmap(tt, qq))

    return Solution(func=func, domain=dom, potential=eta.potential,
                    provenance=eta.provenance + (step,), fd_scale=eta.fd_scale)


# --- section map and the 2-form -------------------------------------------------

@dataclass
class SectionValues:
    """Evaluators of the section quantities along eta.

    theta_B = gamma eta_q / eta and theta_E = gamma eta_t / eta are the drift-side
    conventions; B_tilde = -theta_B and E_tilde = -theta_E are the conventions
    used by the 2-form closed forms.
    """

    gamma: float
    eta: Solution

    def S(self, t, q):
        return -self.gamma * self.eta.log_eta(t, q)

    def theta_B(self, t, q):
        return self.gamma * self.eta.log_q(t, q)

    def theta_E(self, t, q):
        return self.gamma * self.eta.log_t(t, q)

    def B_tilde(self, t, q):
        return -self.theta_B(t, q)

    def E_tilde(self, t, q):
        return -self.theta_E(t, q)

    def hjb_residual(self, t, q, V: Potential):
        """-S_t + S_q^2/2 - V - gamma/2 S_qq, via eta's exact partials."""
        eta, g = self.eta, self.gamma
        val = eta(t, q)
        lt = eta.eta_t(t, q) / val
        lq = eta.eta_q(t, q) / val
        lqq = eta.eta_qq(t, q) / val - lq**2
        S_t, S_q, S_qq = -g * lt, -g * lq, -g * lqq
        return -S_t + 0.5 * S_q**2 - V(t, q) - 0.5 * g * S_qq


def section(eta: Solution, gamma: float | None = None) -> SectionValues:
    return SectionValues(eta.gamma if gamma is None else gamma, eta)


def contact_hamiltonian(X: TildeField, eta: Solution, gamma: float | None = None) -> Callable:
    """theta(F_N) = N^S + theta_E N^t + theta_B N^q, with N read off X's components."""
    sec = section(eta, gamma)
    g = sec.gamma

    def F(t, q):
        n_t, n_q, n_s = -X.a.eval(t, q), -X.b.eval(t, q), -g * X.c.eval(t, q)
        return n_s + sec.theta_E(t, q) * n_t + sec.theta_B(t, q) * n_q

    return F


class OmegaEvaluator:
    """Omega_eta(X, Y)(t, q) = gamma [X, Y](eta) / eta."""

    def __init__(self, X: TildeField, Y: TildeField, eta: Solution, gamma: float):
        self.commutator = bracket(X, Y)
        self.eta = eta
        self.gamma = gamma
        Z = self.commutator
        self.is_constant = Z.a.is_zero() and Z.b.is_zero() and Z.c.is_constant()
        self.constant = gamma * Z.c.constant_value() if self.is_constant else None
        self._fn = None
        if eta.is_exact and not self.is_constant:
            a, b, c = (f.to_sympy(t_sym, q_sym) for f in (Z.a, Z.b, Z.c))
            if eta.log_expr is not None:
                lt, lq = sp.diff(eta.log_expr, t_sym), sp.diff(eta.log_expr, q_sym)
            else:
                lt, lq = sp.diff(eta.expr, t_sym) / eta.expr, sp.diff(eta.expr, q_sym) / eta.expr
            self.expr = sp.Float(gamma) * (a * lt + b * lq + c)
            self._fn = _lambdify(self.expr)
        else:
            self.expr = None if not self.is_constant else sp.Float(self.constant)

    def __call__(self, t, q):
        if self.is_constant:
            return np.full(np.broadcast(np.asarray(t), np.asarray(q)).shape, self.constant)[()]
        if self._fn is not None:
            return self._fn(t, q)
        Z, eta = self.commutator, self.eta
        return self.gamma * (Z.a.eval(t, q) * eta.log_t(t, q) + Z.b.eval(t, q) * eta.log_q(t, q)
                             + Z.c.eval(t, q))


def omega_eta(X: TildeField, Y: TildeField, eta: Solution, gamma: float | None = None) -> OmegaEvaluator:
    return OmegaEvaluator(X, Y, eta, eta.gamma if gamma is None else gamma)


def grid_dump(f: Callable, ts, qs) -> list[tuple]:
    """Rows (t, q, value) over the tensor grid, for CSV export."""
    T, Qg = np.meshgrid(np.asarray(ts, float), np.asarray(qs, float), indexing="ij")
    vals = np.asarray(f(T, Qg), dtype=float)
    return list(zip(T.ravel().tolist(), Qg.ravel().tolist(), np.broadcast_to(vals, T.shape).ravel().tolist()))
