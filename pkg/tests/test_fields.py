import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isoheat.fields import ONE, Q, T, ZERO, ScalarField, Term, add, cos_t, d_dq, d_dt, evaluate, exp_t, mul, sin_t

coeffs = st.floats(-3, 3, allow_nan=False).filter(lambda c: abs(c) > 1e-3)
terms = st.builds(
    lambda c, tp, qp, kind, rate: ScalarField.monomial(c, tp, qp, exprate=rate if kind == "exp" else 0.0,
                                                       osc=kind if kind in ("cos", "sin") else "none",
                                                       omega=abs(rate) + 0.5 if kind in ("cos", "sin") else 0.0),
    coeffs, st.integers(0, 2), st.integers(0, 2), st.sampled_from(["none", "exp", "cos", "sin"]),
    st.sampled_from([-1.0, 0.5, 1.0, 2.0]))
fields = st.lists(terms, min_size=0, max_size=4).map(lambda ts: sum(ts, ZERO))

rng = np.random.default_rng(11)
PTS = rng.uniform(-1.5, 1.5, size=(100, 2))


def _rel(a, b):
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))


def test_cancellation_gives_empty_field():
    f = Q + (-Q)
    assert f.is_zero() and len(f) == 0


def test_like_terms_merge():
    f = T * exp_t(1.0)
    g = f + f
    assert len(g) == 1
    assert g == T * exp_t(1.0) * 2


def test_cos_plus_sin_is_two_terms_in_fixed_order():
    f = cos_t(2.0) + sin_t(2.0)
    g = sin_t(2.0) + cos_t(2.0)
    assert len(f) == 2
    assert f.terms == g.terms


def test_exponents_cancel_in_products():
    assert (Q * exp_t(1.0)) * (Q * exp_t(-1.0)) == Q * Q


def test_cos_squared_product_to_sum():
    assert cos_t(2.0) * cos_t(2.0) == ONE * 0.5 + cos_t(4.0) * 0.5


def test_t_times_q():
    f = T * Q
    assert len(f) == 1 and f.terms[0].tpow == 1 and f.terms[0].qpow == 1


def test_product_rule():
    assert d_dt(T * sin_t(1.0)) == sin_t(1.0) + T * cos_t(1.0)


def test_q_derivative():
    eps = 0.7
    assert d_dq(Q * Q * exp_t(eps)) == Q * exp_t(eps) * 2


def test_constant_has_zero_derivative():
    assert d_dt(ONE * 3.5).is_zero()


def test_eval_examples():
    for g in (0.3, 1.0, 7.0):
        assert evaluate(Q * Q - T * g, 0.0, 2.0) == 4.0
    assert evaluate(ZERO, 1.3, -0.2) == 0.0
    eps = 1.3
    assert math.isclose(evaluate(exp_t(eps), math.log(2) / eps, 0.0), 2.0, rel_tol=1e-14)


def test_zero_frequency_oscillation_folds():
    assert cos_t(0.0) == ONE
    assert sin_t(0.0).is_zero()
    assert sin_t(-2.0) == -sin_t(2.0)


def test_negative_q_power_rejected():
    with pytest.raises(ValueError):
        ScalarField.monomial(1.0, qpow=-1)


def test_json_round_trip():
    f = Q * Q * exp_t(0.5) - T * cos_t(1.5) + 0.25
    assert ScalarField.from_json(f.to_json()) == f


def test_sympy_export_agrees_with_eval():
    import sympy as sp

    t, q = sp.symbols("t q")
    f = Q * Q * exp_t(0.5) - T * sin_t(1.5) + 0.25
    g = sp.lambdify((t, q), f.to_sympy(t, q))
    assert math.isclose(g(0.3, -1.1), f.eval(0.3, -1.1), rel_tol=1e-13)


@settings(max_examples=60, deadline=None)
@given(fields, fields)
def test_ring_axioms_on_samples(f, g):
    t, q = PTS[:, 0], PTS[:, 1]
    assert _rel(add(f, g).eval(t, q), f.eval(t, q) + g.eval(t, q)) < 1e-12
    assert _rel(mul(f, g).eval(t, q), f.eval(t, q) * g.eval(t, q)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(fields)
def test_derivatives_match_central_differences(f):
    t, q = PTS[:, 0], PTS[:, 1]
    h = 1e-5
    fd_t = (f.eval(t + h, q) - f.eval(t - h, q)) / (2 * h)
    fd_q = (f.eval(t, q + h) - f.eval(t, q - h)) / (2 * h)
    assert _rel(d_dt(f).eval(t, q), fd_t) < 1e-7
    assert _rel(d_dq(f).eval(t, q), fd_q) < 1e-7


@settings(max_examples=60, deadline=None)
@given(st.lists(terms, min_size=1, max_size=5), st.randoms(use_true_random=False))
def test_normal_form_independent_of_order_and_splitting(ts, rnd):
    a = sum(ts, ZERO)
    shuffled = list(ts)
    rnd.shuffle(shuffled)
    # split every term into two halves before summing
    b = ZERO
    for x in shuffled:
        b = b + x * 0.5 + x * 0.5
    assert a == b
    assert [x.key for x in a.terms] == [x.key for x in b.terms]


def test_term_rejects_nonpositive_frequency():
    with pytest.raises(ValueError):
        Term(1.0, 0, 0, 0.0, 1, -1.0)
