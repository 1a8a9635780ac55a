"""Closed-form Omega_eta(e_i, e_j) for the basis pairs of the C = 0 algebras.

Each entry is a function of (t, q, B, E, gamma, eps) where B = -gamma eta_q/eta
and E = -gamma eta_t/eta. Pairs not listed are identically zero. These are
hand-written, independent of the bracket machinery, and serve as an oracle for
omega_eta.
"""
from __future__ import annotations

import numpy as np

exp, cos, sin = np.exp, np.cos, np.sin


def _free():
    return {
        (1, 2): lambda t, q, B, E, g, e: t * t * E + t * q * B + (q * q - g * t) / 2,
        (1, 3): lambda t, q, B, E, g, e: 2 * t * E + q * B - g / 2,
        (1, 6): lambda t, q, B, E, g, e: t * B + q,
        (2, 3): lambda t, q, B, E, g, e: E,
        (2, 5): lambda t, q, B, E, g, e: -(t * B + q) / 2,
        (2, 6): lambda t, q, B, E, g, e: B / 2,
        (3, 5): lambda t, q, B, E, g, e: -B,
        (5, 6): lambda t, q, B, E, g, e: 1.0 + 0 * t,
    }


def _hyperbolic():
    def ep(t, e):
        return exp(e * t), exp(-e * t)

    def hp(t, e):
        return exp(e * t / 2), exp(-e * t / 2)

    def o12(t, q, B, E, g, e):
        a, b = ep(t, e)
        return (a + b - 2) / e**2 * E + q * (a - b) / (2 * e) * B + q * q / 4 * (a + b) - g * (a - b) / (4 * e)

    def o13(t, q, B, E, g, e):
        a, b = ep(t, e)
        return (a - b) / e * E + q * (a + b) / 2 * B + q * q * e / 4 * (a - b) - g * (a + b) / 4

    def o16(t, q, B, E, g, e):
        a, b = hp(t, e)
        return (a - b) / e * B + q / 2 * (a + b)

    def o23(t, q, B, E, g, e):
        a, b = ep(t, e)
        return (a + b) / 2 * E + q * e / 4 * (a - b) * B + q * q * e * e / 8 * (a + b) - g * e / 8 * (a - b)

    def o25(t, q, B, E, g, e):
        a, b = hp(t, e)
        return -(a - b) / (2 * e) * B - q / 4 * (a + b)

    def o26(t, q, B, E, g, e):
        a, _ = hp(t, e)
        return a / 2 * B + q * e / 4 * a

    def o35(t, q, B, E, g, e):
        a, b = hp(t, e)
        return -(a + b) / 2 * B - q * e / 4 * (a - b)

    def o36(t, q, B, E, g, e):
        _, b = hp(t, e)
        return e / 2 * b * B - q * e * e / 4 * b

    return {(1, 2): o12, (1, 3): o13, (1, 6): o16, (2, 3): o23, (2, 5): o25,
            (2, 6): o26, (3, 5): o35, (3, 6): o36,
            (5, 6): lambda t, q, B, E, g, e: 1.0 + 0 * t}


def _trigonometric():
    def o12(t, q, B, E, g, e):
        c, s = cos(e * t), sin(e * t)
        return -2 * (c - 1) / e**2 * E + q * s / e * B + q * q / 2 * c - g * s / (2 * e)

    def o13(t, q, B, E, g, e):
        c, s = cos(e * t), sin(e * t)
        return 2 * s / e * E + q * c * B - q * q * e / 2 * s - g * c / 2

    def o16(t, q, B, E, g, e):
        return 2 / e * sin(e * t / 2) * B + q * cos(e * t / 2)

    def o23(t, q, B, E, g, e):
        c, s = cos(e * t), sin(e * t)
        return c * E - q * e / 2 * s * B - q * q * e * e / 4 * c + g * e / 4 * s

    def o25(t, q, B, E, g, e):
        return -sin(e * t / 2) / e * B - q / 2 * cos(e * t / 2)

    def o26(t, q, B, E, g, e):
        return cos(e * t / 2) / 2 * B - q * e / 4 * sin(e * t / 2)

    def o35(t, q, B, E, g, e):
        return -cos(e * t / 2) * B + q * e / 2 * sin(e * t / 2)

    def o36(t, q, B, E, g, e):
        return e / 2 * sin(e * t / 2) * B + q * e * e / 4 * cos(e * t / 2)

    return {(1, 2): o12, (1, 3): o13, (1, 6): o16, (2, 3): o23, (2, 5): o25,
            (2, 6): o26, (3, 5): o35, (3, 6): o36,
            (5, 6): lambda t, q, B, E, g, e: 1.0 + 0 * t}


TABLES = {"free": _free(), "hyperbolic": _hyperbolic(), "trigonometric": _trigonometric()}


def closed_form(kind: str, i: int, j: int):
    """Closed-form entry for the pair (i, j); None means identically zero."""
    if i > j:
        f = closed_form(kind, j, i)
        return None if f is None else (lambda *a: -f(*a))
    return TABLES[kind].get((i, j))
