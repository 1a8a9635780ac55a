import math

import numpy as np
import pytest
from scipy import integrate, stats

from isoheat.sde import (AffineModel, HorizonExceeded, NonPositivePath, PathEnsemble, SimConfig, Z0OutOfDomain,
                         besq_time_change, clock_grid, density, ou_exact, s_martingale, simulate_affine,
                         simulate_besq, simulate_bernstein, sqrt_transform)
from isoheat.solutions import affine_eta, constant_eta, residual


def within(x, target, k=3.0):
    se = np.std(x, ddof=1) / math.sqrt(len(x))
    return abs(np.mean(x) - target) < k * se


def var_within(x, target, k=3.0):
    # SE of the sample variance from the fourth central moment
    n = len(x)
    m4 = np.mean((x - x.mean()) ** 4)
    se = math.sqrt(max(m4 - target**2, 1e-300) / n)
    return abs(np.var(x, ddof=1) - target) < k * se


def test_brownian_variance():
    ens = simulate_bernstein(constant_eta(1.0), 1.0, 0.0, SimConfig(steps=50, n_paths=20000, seed=1, record_every=25))
    for t in (0.5, 1.0):
        assert var_within(ens.at(t), t)


def test_ou_drift_mean():
    eta = affine_eta(2, 2, 1)
    ens = simulate_bernstein(eta, 1.0, 1.5, SimConfig(steps=400, n_paths=20000, seed=2, record_every=400))
    assert within(ens.at(1.0), 1.5 * math.exp(-1.0), k=3.5)


def test_delta_three_bernstein_zero_crossings_vanish_with_step():
    # the diffusion never reaches 0; Euler overshoots through the 1/z drift at a rate shrinking with dt
    fr = [simulate_bernstein(affine_eta(2, 2, 3), 1.0, 1.0,
                             SimConfig(steps=s, n_paths=10000, seed=3, record_every=s)).hit_fraction()
          for s in (100, 1000)]
    assert fr[1] < 0.005
    assert fr[1] < fr[0] / 2


def test_start_outside_domain():
    with pytest.raises(Z0OutOfDomain):
        simulate_bernstein(affine_eta(2, 2, 3), 1.0, -0.5, SimConfig())


def test_positivity_dichotomy_trend():
    m3 = AffineModel.from_delta(2, 2, 3)
    fr = [simulate_affine(m3, m3.r_from_x(0.2), SimConfig(steps=s, n_paths=4000, seed=4, record_every=s)).hit_fraction()
          for s in (100, 1000)]
    assert fr[1] < fr[0] / 2
    m1 = AffineModel.from_delta(2, 2, 1)
    assert simulate_affine(m1, m1.r_from_x(0.2), SimConfig(steps=1000, n_paths=4000, seed=4, record_every=1000)).hit_fraction() > 0.5


def test_affine_lambda_zero_matches_besq_clock():
    m = AffineModel.from_delta(2, 0.0, 3)
    x = simulate_affine(m, m.r_from_x(0.5), SimConfig(steps=500, n_paths=20000, seed=5, record_every=500)).at(1.0, False)
    # BESQ^3 from 0.5 at time alpha^2/4 = 1: mean y0 + 3u, variance 4 y0 u + 2 delta u^2
    assert within(x, 0.5 + 3.0, k=3.5)
    assert var_within(x, 4 * 0.5 + 2 * 3.0, k=3.5)


def test_besq_mean_from_zero():
    y = simulate_besq(3, 0.0, SimConfig(steps=10, n_paths=20000, seed=6, scheme="besq-sum-of-squares")).at(1.0)
    assert within(y, 3.0)


def test_besq_dimension_zero_is_absorbed():
    ens = simulate_besq(0, 0.0, SimConfig(steps=20, n_paths=100, seed=6))
    assert np.all(ens.values == 0)


def test_besq_oracle_agrees_with_euler():
    a = simulate_besq(3, 1.0, SimConfig(steps=400, n_paths=20000, seed=7, record_every=400)).at(1.0)
    b = simulate_besq(3, 1.0, SimConfig(steps=400, n_paths=20000, seed=8, record_every=400,
                                        scheme="besq-sum-of-squares")).at(1.0)
    se = math.sqrt(np.var(a) / len(a) + np.var(b) / len(b))
    assert abs(a.mean() - b.mean()) < 3 * se
    assert abs(a.var() - b.var()) < 0.05 * b.var()


def test_sum_of_squares_needs_integer_dimension():
    with pytest.raises(ValueError):
        simulate_besq(2.5, 0.0, SimConfig(scheme="besq-sum-of-squares"))


def test_clock_values():
    m = AffineModel.from_delta(2, 2, 3)
    assert math.isclose(float(m.clock(1.0)), (math.e**2 - 1) / 2, rel_tol=1e-14)
    assert math.isclose(float(m.clock(1.0)), 3.1945280494653, rel_tol=1e-12)
    assert math.isclose(float(AffineModel.from_delta(2, 1e-9, 3).clock(0.7)), 0.7, rel_tol=1e-8)
    assert math.isclose(float(m.inverse_clock(m.clock(0.37))), 0.37, rel_tol=1e-14)


def test_time_change_matches_affine_moments():
    m = AffineModel.from_delta(2, 1.0, 3)
    cfg = SimConfig(steps=200, n_paths=20000, seed=9, scheme="besq-sum-of-squares")
    times = np.linspace(0, 1, 201)
    besq = simulate_besq(3, 0.5, cfg, times=clock_grid(m, times))
    x_tc = besq_time_change(m, besq, times=[0.5, 1.0]).values[:, -1]
    x_eu = simulate_affine(m, m.r_from_x(0.5), SimConfig(steps=400, n_paths=20000, seed=10, record_every=400)).at(1.0, False)
    se = math.sqrt(np.var(x_tc) / len(x_tc) + np.var(x_eu) / len(x_eu))
    assert abs(x_tc.mean() - x_eu.mean()) < 3 * se
    assert abs(x_tc.var() - x_eu.var()) < 0.05 * x_eu.var()


def test_time_change_beyond_horizon():
    m = AffineModel.from_delta(2, 2.0, 3)
    besq = simulate_besq(3, 0.0, SimConfig(steps=10, n_paths=10, seed=1))
    with pytest.raises(HorizonExceeded):
        besq_time_change(m, besq, times=[1.0])


def test_ou_exact_laws():
    m = AffineModel.from_delta(2, 1.0, 1)
    cfg = SimConfig(t1=math.log(4), steps=5, n_paths=20000, seed=11)
    ens = ou_exact(m, 2.0, cfg)
    assert np.all(ens.values[:, 0] == 2.0)
    x = ens.values[:, -1]
    assert within(x, 1.0)
    assert var_within(x, 4 * (1 - 0.25) / 4)
    far = ou_exact(m, 2.0, SimConfig(t1=40, steps=4, n_paths=20000, seed=12)).values[:, -1]
    assert var_within(far, 1.0)


def test_euler_bias_is_first_order():
    eta = affine_eta(2, 2, 1)
    errs = []
    for steps in (4, 8, 16):
        x = simulate_bernstein(eta, 1.0, 2.0, SimConfig(steps=steps, n_paths=200000, seed=13, record_every=steps)).at(1.0)
        errs.append(abs(x.mean() - 2.0 * math.exp(-1.0)))
    assert 1.6 < errs[0] / errs[1] < 2.6
    assert 1.6 < errs[1] / errs[2] < 2.8


def test_bernstein_matches_sqrt_of_affine():
    m = AffineModel.from_delta(2, 2, 3)
    z0 = 1.0
    zb = simulate_bernstein(m.eta(), m.gamma, z0, SimConfig(steps=1000, n_paths=20000, seed=14, record_every=1000)).at(1.0)
    za = sqrt_transform(simulate_affine(m, m.r_from_x(z0**2), SimConfig(steps=1000, n_paths=20000, seed=15,
                                                                         record_every=1000))).at(1.0)
    se = math.sqrt(np.var(zb) / len(zb) + np.var(za) / len(za))
    assert abs(zb.mean() - za.mean()) < 3 * se


@pytest.mark.parametrize("alpha,lam,t", [(2.0, 2.0, 1.0), (0.7, 0.3, 2.5), (3.1, 1.7, 0.2)])
def test_delta_three_density_normalised(alpha, lam, t):
    rho = density(3, AffineModel.from_delta(alpha, lam, 3), 0.0, t)
    mass = integrate.quad(rho.pdf, 0, np.inf, epsabs=1e-13, epsrel=1e-13)[0]
    assert abs(mass - 1) < 1e-10


def test_delta_three_density_formula():
    alpha, lam, t = 2.0, 2.0, 1.0
    rho = density(3, AffineModel.from_delta(alpha, lam, 3), 0.0, t)
    w = 1 - math.exp(-lam * t)
    q = np.linspace(0.1, 3, 7)
    formula = 16 * lam**1.5 / (math.sqrt(2 * math.pi) * alpha**3 * w**1.5) * q**2 * np.exp(-2 * lam * q**2 / (alpha**2 * w))
    assert np.allclose(rho.pdf(q), formula, rtol=1e-13)


def test_delta_one_density_is_ou_marginal():
    m = AffineModel.from_delta(2, 1.0, 1)
    rho = density(1, m, 0.8, 0.6)
    mean = math.exp(-0.3) * 0.8
    var = 4 * (1 - math.exp(-0.6)) / 4
    q = np.linspace(-2, 3, 9)
    assert np.allclose(rho.pdf(q), stats.norm(mean, math.sqrt(var)).pdf(q), rtol=1e-13)


@pytest.mark.parametrize("d,z0", [(1, 0.8), (3, 0.0)])
def test_dual_solutions(d, z0):
    m = AffineModel.from_delta(1.6, 0.9, d)
    star = density(d, m, z0, 1.0).eta_star
    g = np.column_stack([np.random.default_rng(0).uniform(0.05, 3, 40), np.random.default_rng(1).uniform(0.1, 3, 40)])
    assert residual(star, grid=g, dual=True).relative < 1e-8


def test_density_errors():
    with pytest.raises(ValueError):
        density(2, AffineModel.from_delta(2, 2, 2), 0.0, 1.0)
    with pytest.raises(ValueError):
        density(3, AffineModel.from_delta(2, 0.0, 3), 0.0, 1.0)
    with pytest.raises(ValueError):
        density(3, AffineModel.from_delta(2, 2, 3), 1.0, 1.0)


def test_s_transform():
    ens = simulate_bernstein(affine_eta(2, 2, 3), 1.0, 2.0, SimConfig(steps=100, n_paths=200, seed=3, record_every=50))
    s = s_martingale(ens, 2.0)
    assert np.all(s.values[:, 0] == 0.5)
    s0 = s_martingale(ens, 0.0)
    assert np.allclose(s0.values, 1 / ens.values)
    bad = PathEnsemble(np.array([0.0, 1.0]), np.array([[1.0, -0.1]]), np.array([np.nan]), 0)
    with pytest.raises(NonPositivePath):
        s_martingale(bad, 1.0)


def test_seed_determinism_and_thread_independence():
    m = AffineModel.from_delta(2, 2, 1)
    base = SimConfig(steps=50, n_paths=5000, seed=2024, block_size=512, record_every=5)
    a = simulate_affine(m, 0.05, base)
    b = simulate_affine(m, 0.05, base)
    c = simulate_affine(m, 0.05, SimConfig(**{**base.__dict__, "threads": 4}))
    d = simulate_affine(m, 0.05, SimConfig(**{**base.__dict__, "seed": 2025}))
    assert np.array_equal(a.values, b.values) and np.array_equal(a.values, c.values)
    assert np.array_equal(a.hit_time, c.hit_time, equal_nan=True)
    assert not np.array_equal(a.values, d.values)


def test_binary_and_csv_export(tmp_path):
    ens = ou_exact(AffineModel.from_delta(2, 1.0, 1), 0.5, SimConfig(steps=4, n_paths=3, seed=99))
    ens.to_binary(tmp_path / "e.bin")
    back = PathEnsemble.from_binary(tmp_path / "e.bin")
    assert back.seed == 99 and np.array_equal(back.values, ens.values) and np.array_equal(back.times, ens.times)
    raw = (tmp_path / "e.bin").read_bytes()
    assert raw[:8] == b"ISOHEATE"
    ens.to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "path_id,t,value" and len(lines) == 1 + 3 * 5


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(t0=1, t1=1)
    with pytest.raises(ValueError):
        SimConfig(steps=0)
    with pytest.raises(ValueError):
        SimConfig(scheme="milstein")
    with pytest.raises(ValueError):
        AffineModel(alpha=0.0)
    with pytest.raises(ValueError):
        AffineModel(alpha=1.0, phi=-1.0)


def test_model_derived_quantities():
    m = AffineModel(alpha=2.0, beta=0.4, phi=1.1, lam=0.5)
    assert math.isclose(m.phi_tilde, 1.1 + 0.5 * 0.4 / 2)
    assert math.isclose(m.delta, 4 * m.phi_tilde / 2)
    assert m.gamma == 1.0
    assert math.isclose(float(m.r_from_x(m.x_from_r(0.3))), 0.3)
