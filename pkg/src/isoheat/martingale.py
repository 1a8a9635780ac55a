"""Monte Carlo checks that functionals along simulated paths are martingales,
and goodness of fit of ensembles against closed-form laws."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import stats

from .isovectors import AlgebraCase
from .omega_tables import closed_form
from .sde import PathEnsemble, SimConfig, simulate_bernstein
from .solutions import Solution, omega_eta, section

TEST_FUNCTIONS = {
    "1": lambda z: np.ones_like(z),
    "z": lambda z: z,
    "z^2": lambda z: z * z,
    "exp(-z^2)": lambda z: np.exp(-z * z),
}


class NonFiniteFunctional(ArithmeticError):
    pass


def _fmean(x) -> float:
    return math.fsum(x) / len(x)


def _zscore(x) -> tuple[float, float, float]:
    """mean, standard error, z-score of the mean (order-insensitive summation)."""
    n = len(x)
    m = _fmean(x)
    var = math.fsum((x - m) ** 2) / (n - 1)
    se = math.sqrt(var / n)
    if se == 0:
        return m, 0.0, 0.0 if m == 0 else math.copysign(math.inf, m)
    return m, se, m / se


@dataclass
class MartingaleReport:
    name: str
    times: list
    mean: list = field(default_factory=list)
    se: list = field(default_factory=list)
    increment_z: list = field(default_factory=list)
    orthogonality_z: dict = field(default_factory=dict)
    surviving: list = field(default_factory=list)
    threshold: float = 4.0
    trivial: bool = False
    note: str = ""
    precheck_error: float | None = None

    @property
    def max_abs_z(self) -> float:
        zs = [abs(z) for z in self.increment_z]
        for v in self.orthogonality_z.values():
            zs += [abs(z) for z in v]
        return max(zs) if zs else 0.0

    @property
    def passed(self) -> bool:
        return self.trivial or self.max_abs_z < self.threshold

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(passed=self.passed, max_abs_z=self.max_abs_z)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), default=float)


def martingale_test(M, ensemble: PathEnsemble, checkpoints=None, threshold: float = 4.0,
                    name: str = "M") -> MartingaleReport:
    """Increment and orthogonality z-scores of M(t, z(t)) between consecutive checkpoints.

    Paths are used at a checkpoint only while not stopped.
    """
    times = ensemble.times if checkpoints is None else np.asarray(checkpoints, dtype=float)
    if times[0] < ensemble.times[0] - 1e-12 or times[-1] > ensemble.times[-1] + 1e-12:
        raise ValueError("checkpoints outside ensemble horizon")
    idx = [ensemble.index_of(t) for t in times]
    rep = MartingaleReport(name, [float(t) for t in times], threshold=threshold,
                           orthogonality_z={g: [] for g in TEST_FUNCTIONS})
    vals = []
    for k in idx:
        z = ensemble.values[:, k]
        with np.errstate(all="ignore"):
            m = np.asarray(M(np.full_like(z, ensemble.times[k]), z), dtype=float)
        alive = ensemble.alive(k)
        bad = alive & ~np.isfinite(m)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise NonFiniteFunctional(f"{name} is not finite on path {i} at t={ensemble.times[k]}")
        vals.append(m)
        live = m[alive]
        rep.surviving.append(float(alive.mean()))
        mu, se, _ = _zscore(live) if live.size > 1 else (float("nan"), float("nan"), 0.0)
        rep.mean.append(mu)
        rep.se.append(se)
    for a in range(1, len(idx)):
        alive = ensemble.alive(idx[a])
        inc = (vals[a] - vals[a - 1])[alive]
        rep.increment_z.append(_zscore(inc)[2])
        z_prev = ensemble.values[alive, idx[a - 1]]
        for g, fn in TEST_FUNCTIONS.items():
            if g == "1":
                rep.orthogonality_z[g].append(rep.increment_z[-1])
            else:
                rep.orthogonality_z[g].append(_zscore(inc * fn(z_prev))[2])
    return rep


_TABLE_KIND = {"M": "free", "R": "hyperbolic", "V": "trigonometric"}


def _precheck(case: AlgebraCase, i: int, j: int, omega, eta: Solution, gamma: float, grid) -> float | None:
    kind = _TABLE_KIND.get(case.kind)
    if kind is None or case.potential.C != 0:
        return None
    f = closed_form(kind, i + 1, j + 1)
    t, q = grid
    sec = section(eta, gamma)
    ref = np.zeros_like(t) if f is None else f(t, q, sec.B_tilde(t, q), sec.E_tilde(t, q), gamma, case.epsilon)
    got = omega(t, q)
    return float(np.max(np.abs(got - ref)) / max(1.0, np.max(np.abs(ref))))


def omega_martingale_suite(case: AlgebraCase, eta: Solution, cfg: SimConfig, z0: float,
                           gamma: float | None = None, checkpoints=None, threshold: float = 4.0,
                           ensemble: PathEnsemble | None = None) -> list[MartingaleReport]:
    """Martingale test of Omega_eta(e_i, e_j) for every basis pair i < j along the Bernstein diffusion."""
    gamma = case.gamma if gamma is None else gamma
    ens = ensemble if ensemble is not None else simulate_bernstein(eta, gamma, z0, cfg)
    # grid for the exact pre-check, taken from visited states
    k = len(ens.times) // 2
    pick = ens.alive(k)
    zs = ens.values[pick, k][:20]
    grid = (np.full_like(zs, ens.times[k]), zs)
    reports = []
    n_pairs = case.dim * (case.dim - 1) // 2
    for i in range(case.dim):
        for j in range(i + 1, case.dim):
            om = omega_eta(case.basis[i], case.basis[j], eta, gamma)
            name = f"Omega({case.names[i]},{case.names[j]})"
            pre = _precheck(case, i, j, om, eta, gamma, grid)
            if om.is_constant:
                rep = MartingaleReport(name, [float(t) for t in ens.times], threshold=threshold, trivial=True,
                                       note=f"constant {om.constant:g}", precheck_error=pre)
            else:
                rep = martingale_test(om, ens, checkpoints, threshold, name)
                rep.precheck_error = pre
                rep.note = f"Bonferroni: {n_pairs} pairs x {len(rep.increment_z)} increments x {len(TEST_FUNCTIONS)} tests"
            reports.append(rep)
    return reports


@dataclass
class FitReport:
    t: float
    n: int
    ks: float
    ks_band: float
    ks_pvalue: float
    moments_empirical: list
    moments_analytic: list
    moment_rel_error: list
    moment_z: list

    @property
    def ks_ok(self) -> bool:
        return self.ks <= self.ks_band

    @property
    def moments_ok(self) -> bool:
        return all(abs(z) < 3 for z in self.moment_z)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(ks_ok=self.ks_ok, moments_ok=self.moments_ok)
        return d


def ks_statistic(sample, cdf) -> float:
    """sup |F_n - F| with left limits taken into account, so step CDFs are handled too."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    right = np.asarray(cdf(x), dtype=float)
    left = np.asarray(cdf(np.nextafter(x, -np.inf)), dtype=float)
    # empirical CDF at x_i (right limit) and just below x_i, respecting ties
    fn_right = np.searchsorted(x, x, side="right") / n
    fn_left = np.searchsorted(x, x, side="left") / n
    return float(max(np.max(np.abs(fn_right - right)), np.max(np.abs(fn_left - left))))


def _cdf_from_pdf(pdf, lo: float, hi: float, n: int = 20001):
    x = np.linspace(lo, hi, n)
    y = pdf(x)
    c = np.concatenate([[0.0], np.cumsum((y[1:] + y[:-1]) / 2 * np.diff(x))])
    return lambda s: np.interp(s, x, c, left=0.0, right=c[-1])


def density_fit(ensemble: PathEnsemble | np.ndarray, t: float | None, rho, kmax: int = 4,
                level: float = 0.95) -> FitReport:
    """KS distance and moment errors of the surviving sample at t against rho.

    ``rho`` is a pdf callable, optionally with ``cdf`` and ``moments`` methods;
    missing ones are obtained by numerical integration. The KS band is the
    exact ``level`` quantile of the one-sample statistic at this n.
    """
    sample = np.asarray(ensemble if t is None else ensemble.at(t), dtype=float)
    n = sample.size
    if n < 100:
        raise ValueError(f"only {n} surviving paths; need at least 100")
    cdf = getattr(rho, "cdf", None)
    if cdf is None:
        span = sample.max() - sample.min()
        cdf = _cdf_from_pdf(rho, sample.min() - 10 * span, sample.max() + 10 * span)
    ks = ks_statistic(sample, cdf)
    if hasattr(rho, "moments"):
        ana = rho.moments(kmax)
    else:
        from scipy.integrate import quad
        ana = [quad(lambda q, k=k: q**k * rho(q), -np.inf, np.inf)[0] for k in range(1, kmax + 1)]
    emp, rel, zs = [], [], []
    for k in range(1, kmax + 1):
        xk = sample**k
        m = _fmean(xk)
        se = float(np.std(xk, ddof=1) / math.sqrt(n))
        emp.append(m)
        rel.append(abs(m - ana[k - 1]) / max(abs(ana[k - 1]), 1e-300))
        zs.append((m - ana[k - 1]) / se if se > 0 else 0.0)
    return FitReport(float(t) if t is not None else float("nan"), n, ks, float(stats.kstwo.ppf(level, n)),
                     float(stats.kstwo.sf(ks, n)), emp, [float(a) for a in ana], rel, zs)
