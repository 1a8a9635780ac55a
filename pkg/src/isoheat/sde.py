"""Seeded Monte Carlo for Bernstein diffusions, the affine short-rate model,
squared Bessel and Ornstein-Uhlenbeck processes.

Randomness: paths are grouped in fixed-size blocks; block ``b`` draws from a
Philox generator seeded by ``SeedSequence(seed, spawn_key=(b,))``. Results do
not depend on the number of worker threads.
"""
from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
import sympy as sp
from scipy import stats

from .solutions import Domain, Solution, affine_eta, affine_potential, q_sym, t_sym, _sym

SCHEMES = ("euler-maruyama", "exact-ou", "besq-sum-of-squares")
MAGIC = b"ISOHEATE"
VERSION = 1


class Z0OutOfDomain(ValueError):
    pass


class NonPositivePath(ValueError):
    pass


class HorizonExceeded(ValueError):
    pass


@dataclass(frozen=True)
class AffineModel:
    """dr = sqrt(alpha r + beta) dw + (phi - lam r) dt."""

    alpha: float
    beta: float = 0.0
    phi: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.phi_tilde < -1e-14:
            raise ValueError("phi_tilde = phi + lam beta / alpha must be nonnegative")

    @classmethod
    def from_delta(cls, alpha: float, lam: float, delta: float, beta: float = 0.0) -> "AffineModel":
        """Model with effective Bessel dimension delta (phi chosen accordingly)."""
        phi_tilde = delta * alpha / 4
        return cls(alpha, beta, phi_tilde - lam * beta / alpha, lam)

    @property
    def phi_tilde(self) -> float:
        return self.phi + self.lam * self.beta / self.alpha

    @property
    def delta(self) -> float:
        return 4 * self.phi_tilde / self.alpha

    @property
    def gamma(self) -> float:
        return self.alpha**2 / 4

    def potential(self):
        return affine_potential(self.alpha, self.lam, self.delta)

    def eta(self) -> Solution:
        return affine_eta(self.alpha, self.lam, self.delta)

    def x_from_r(self, r):
        return self.alpha * np.asarray(r) + self.beta

    def r_from_x(self, x):
        return (np.asarray(x) - self.beta) / self.alpha

    def clock(self, t):
        """BESQ clock: alpha^2 (e^{lam t} - 1) / (4 lam), or alpha^2 t / 4 when lam = 0."""
        t = np.asarray(t, dtype=float)
        if self.lam == 0:
            return self.alpha**2 * t / 4
        return self.alpha**2 * np.expm1(self.lam * t) / (4 * self.lam)

    def inverse_clock(self, u):
        u = np.asarray(u, dtype=float)
        if self.lam == 0:
            return 4 * u / self.alpha**2
        return np.log1p(4 * self.lam * u / self.alpha**2) / self.lam


@dataclass(frozen=True)
class SimConfig:
    t0: float = 0.0
    t1: float = 1.0
    steps: int = 100
    n_paths: int = 1000
    seed: int = 0
    scheme: str = "euler-maruyama"
    record_every: int = 1  # keep every k-th grid time (the final time is always kept)
    block_size: int = 4096
    threads: int = 1

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError("t1 must exceed t0")
        if self.steps < 1 or self.n_paths < 1 or self.record_every < 1 or self.block_size < 1:
            raise ValueError("steps, n_paths, record_every and block_size must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.steps

    def grid(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    def recorded_steps(self) -> np.ndarray:
        idx = np.arange(0, self.steps + 1, self.record_every)
        if idx[-1] != self.steps:
            idx = np.append(idx, self.steps)
        return idx


@dataclass
class PathEnsemble:
    """Recorded path values, with the stopping time of each path (nan if none).

    Stopped paths are frozen at their last valid value.
    """

    times: np.ndarray
    values: np.ndarray
    hit_time: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for a in (self.times, self.values, self.hit_time):
            a.setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a recorded time")
        return k

    def alive(self, k: int) -> np.ndarray:
        """Paths not stopped at or before times[k]."""
        return ~(self.hit_time <= self.times[k] + 1e-12)

    def at(self, t: float, survivors_only: bool = True) -> np.ndarray:
        k = self.index_of(t)
        col = self.values[:, k]
        return col[self.alive(k)] if survivors_only else col

    def hit_fraction(self) -> float:
        return float(np.mean(np.isfinite(self.hit_time)))

    def mapped(self, fn, label: str, hit_time=None) -> "PathEnsemble":
        vals = np.asarray(fn(self.times[None, :], self.values), dtype=float)
        meta = dict(self.meta, transform=self.meta.get("transform", []) + [label])
        return PathEnsemble(self.times.copy(), vals, (self.hit_time if hit_time is None else hit_time).copy(),
                            self.seed, meta)

    # export ------------------------------------------------------------
    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("path_id,t,value\n")
            for i in range(self.n_paths):
                for tk, v in zip(self.times, self.values[i]):
                    fh.write(f"{i},{tk!r},{v!r}\n")

    def to_binary(self, path):
        """Little-endian: magic(8) version(u32) n_paths(u64) n_times(u64) seed(u64),
        then times, hit_time, values (row-major), all float64."""
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQQQ", VERSION, self.n_paths, len(self.times), int(self.seed)))
            fh.write(self.times.astype("<f8").tobytes())
            fh.write(self.hit_time.astype("<f8").tobytes())
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "PathEnsemble":
        with open(path, "rb") as fh:
            if fh.read(8) != MAGIC:
                raise ValueError("not an ensemble dump")
            version, n, m, seed = struct.unpack("<IQQQ", fh.read(28))
            if version != VERSION:
                raise ValueError(f"unsupported dump version {version}")
            times = np.frombuffer(fh.read(8 * m), "<f8").astype(float)
            hit = np.frombuffer(fh.read(8 * n), "<f8").astype(float)
            vals = np.frombuffer(fh.read(8 * n * m), "<f8").astype(float).reshape(n, m)
        return cls(times, vals, hit, seed)

    def summary(self) -> dict:
        last = self.values[:, -1][self.alive(len(self.times) - 1)]
        return {"n_paths": self.n_paths, "n_times": len(self.times), "seed": int(self.seed),
                "hit_fraction": self.hit_fraction(),
                "final_mean": float(np.mean(last)) if last.size else None,
                "final_var": float(np.var(last, ddof=1)) if last.size > 1 else None}


# --- block driver --------------------------------------------------------------

def _block_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(b,))))


def _run_blocks(cfg: SimConfig, kernel, meta: dict, times=None) -> PathEnsemble:
    """kernel(rng, n) -> (recorded values n x K, hit times n)."""
    sizes = [min(cfg.block_size, cfg.n_paths - s) for s in range(0, cfg.n_paths, cfg.block_size)]

    def work(b):
        return kernel(_block_rng(cfg.seed, b), sizes[b])

    if cfg.threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            parts = list(ex.map(work, range(len(sizes))))
    else:
        parts = [work(b) for b in range(len(sizes))]
    values = np.concatenate([p[0] for p in parts], axis=0)
    hits = np.concatenate([p[1] for p in parts])
    if times is None:
        times = cfg.grid()[cfg.recorded_steps()]
    meta = dict(meta, config=asdict(cfg))
    return PathEnsemble(np.asarray(times, dtype=float), values, hits, cfg.seed, meta)


def _euler(cfg: SimConfig, x0, drift, diffusion, stop, grid=None):
    """Generic Euler kernel; ``stop(t, x)`` flags states that end a path."""
    grid = cfg.grid() if grid is None else np.asarray(grid, dtype=float)
    rec = cfg.recorded_steps() if grid is None or len(grid) == cfg.steps + 1 else np.arange(len(grid))
    keep = np.zeros(len(grid), dtype=bool)
    keep[rec] = True
    dts = np.diff(grid)

    def kernel(rng, n):
        x = np.full(n, float(x0))
        hit = np.full(n, np.nan)
        live = np.ones(n, dtype=bool)
        out = np.empty((n, int(keep.sum())))
        col = 0
        out[:, col] = x
        col += 1
        for k, dt in enumerate(dts):
            dw = rng.standard_normal(n) * math.sqrt(dt)
            t = grid[k]
            with np.errstate(all="ignore"):
                nxt = x + drift(t, x) * dt + diffusion(t, x) * dw
            bad = live & (~np.isfinite(nxt) | stop(grid[k + 1], nxt))
            hit[bad] = grid[k + 1]
            live &= ~bad
            x = np.where(live, nxt, x)
            if keep[k + 1]:
                out[:, col] = x
                col += 1
        return out, hit

    return kernel


# --- simulators -------------------------------------------------------------------

def simulate_bernstein(eta: Solution, gamma: float, z0: float, cfg: SimConfig) -> PathEnsemble:
    """dz = sqrt(gamma) dw + gamma d/dq ln eta(t, z) dt; paths leaving eta's domain are stopped."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not bool(eta.domain.contains(cfg.t0, z0)):
        raise Z0OutOfDomain(f"z0={z0} is outside {eta.domain.description} at t0={cfg.t0}")
    sg = math.sqrt(gamma)
    log_q = eta.log_q

    kernel = _euler(cfg, z0,
                    drift=lambda t, x: gamma * log_q(t, x),
                    diffusion=lambda t, x: sg,
                    stop=lambda t, x: ~eta.domain.contains(t, x))
    return _run_blocks(cfg, kernel, {"model": "bernstein", "eta": eta.describe(), "gamma": gamma, "z0": z0})


def simulate_affine(m: AffineModel, r0: float, cfg: SimConfig) -> PathEnsemble:
    """Full-truncation Euler for X = alpha r + beta:
    dX = alpha sqrt(X+) dw + (alpha phi_tilde - lam X) dt. Values are X; use m.r_from_x for r.

    A path's hit time is the first grid time with X <= 0; paths keep evolving
    afterwards (hitting zero is not a boundary for X).
    """
    x0 = float(m.x_from_r(r0))
    a, k, lam = m.alpha, m.alpha * m.phi_tilde, m.lam
    grid = cfg.grid()
    rec = cfg.recorded_steps()
    keep = np.zeros(len(grid), dtype=bool)
    keep[rec] = True
    dt = cfg.dt
    sdt = math.sqrt(dt)

    def kernel(rng, n):
        x = np.full(n, x0)
        hit = np.full(n, np.nan)  # T = inf{t > 0 : X_t = 0}
        out = np.empty((n, len(rec)))
        out[:, 0] = x
        col = 1
        for j in range(cfg.steps):
            dw = rng.standard_normal(n) * sdt
            x = x + (k - lam * x) * dt + a * np.sqrt(np.maximum(x, 0.0)) * dw
            newly = (x <= 0) & np.isnan(hit)
            hit[newly] = grid[j + 1]
            if keep[j + 1]:
                out[:, col] = x
                col += 1
        return out, hit

    return _run_blocks(cfg, kernel, {"model": "affine", "params": asdict(m), "r0": r0, "x0": x0})


def simulate_besq(delta: float, y0: float, cfg: SimConfig, times=None) -> PathEnsemble:
    """BESQ^delta: dY = 2 sqrt|Y| dw + delta dt.

    Scheme ``besq-sum-of-squares`` (integer delta) sums squared Brownian
    coordinates started at (sqrt(y0), 0, ..., 0). ``times`` optionally replaces
    the uniform grid of cfg (all times are then recorded).
    """
    if y0 < 0 or delta < 0:
        raise ValueError("delta and y0 must be nonnegative")
    grid = cfg.grid() if times is None else np.asarray(times, dtype=float)
    if times is not None and (np.any(np.diff(grid) <= 0) or grid[0] != cfg.t0):
        raise ValueError("times must be increasing and start at t0")
    rec = cfg.recorded_steps() if times is None else np.arange(len(grid))
    keep = np.zeros(len(grid), dtype=bool)
    keep[rec] = True
    dts = np.diff(grid)
    meta = {"model": "besq", "delta": delta, "y0": y0, "scheme": cfg.scheme}

    if cfg.scheme == "besq-sum-of-squares":
        d = int(round(delta))
        if abs(d - delta) > 1e-12:
            raise ValueError("sum-of-squares scheme needs integer delta")
        if d == 0 and y0 > 0:
            raise ValueError("sum-of-squares with delta=0 cannot start away from 0")

        def kernel(rng, n):
            w = np.zeros((n, max(d, 1)))
            if d:
                w[:, 0] = math.sqrt(y0)
            hit = np.full(n, np.nan)
            out = np.empty((n, int(keep.sum())))
            out[:, 0] = np.sum(w[:, :d] ** 2, axis=1)
            col = 1
            for j, dt in enumerate(dts):
                if d:
                    w[:, :d] += rng.standard_normal((n, d)) * math.sqrt(dt)
                y = np.sum(w[:, :d] ** 2, axis=1)
                # one coordinate started at sqrt(y0) > 0 hits 0 when it changes sign
                if d == 1:
                    newly = np.isnan(hit) & (w[:, 0] <= 0)
                else:
                    newly = np.isnan(hit) & (y <= 0)
                hit[newly] = grid[j + 1]
                if keep[j + 1]:
                    out[:, col] = y
                    col += 1
            return out, hit

    elif cfg.scheme == "euler-maruyama":
        def kernel(rng, n):
            y = np.full(n, float(y0))
            hit = np.full(n, np.nan)
            out = np.empty((n, int(keep.sum())))
            out[:, 0] = y
            col = 1
            for j, dt in enumerate(dts):
                dw = rng.standard_normal(n) * math.sqrt(dt)
                y = y + delta * dt + 2 * np.sqrt(np.maximum(y, 0.0)) * dw
                newly = (y <= 0) & np.isnan(hit)
                hit[newly] = grid[j + 1]
                if keep[j + 1]:
                    out[:, col] = y
                    col += 1
            return out, hit
    else:
        raise ValueError(f"scheme {cfg.scheme!r} does not apply to BESQ")
    return _run_blocks(cfg, kernel, meta, times=grid[rec])


def clock_grid(m: AffineModel, times) -> np.ndarray:
    """BESQ times at which to simulate so that besq_time_change lands on ``times``."""
    return m.clock(np.asarray(times, dtype=float))


def besq_time_change(m: AffineModel, besq_paths: PathEnsemble, times=None) -> PathEnsemble:
    """X_t = e^{-lam t} Y(clock(t)). Without ``times``, every recorded BESQ time is used."""
    u = besq_paths.times
    if times is None:
        tx = m.inverse_clock(u)
        cols = np.arange(len(u))
    else:
        tx = np.asarray(times, dtype=float)
        target = m.clock(tx)
        if target.max() > u[-1] * (1 + 1e-12) + 1e-15:
            raise HorizonExceeded(f"clock {target.max():.6g} beyond simulated BESQ horizon {u[-1]:.6g}")
        cols = np.array([int(np.argmin(np.abs(u - c))) for c in target])
        if np.any(np.abs(u[cols] - target) > 1e-9 * np.maximum(1.0, target)):
            raise ValueError("requested times do not fall on the BESQ grid; simulate on clock_grid(times)")
    damp = np.exp(-m.lam * tx)
    vals = besq_paths.values[:, cols] * damp[None, :]
    hit = m.inverse_clock(besq_paths.hit_time)
    meta = dict(besq_paths.meta, time_change={"alpha": m.alpha, "lam": m.lam})
    return PathEnsemble(np.asarray(tx, dtype=float), vals, hit, besq_paths.seed, meta)


def sqrt_transform(ens: PathEnsemble) -> PathEnsemble:
    """z = sqrt(X), frozen from the first zero hit onwards."""
    vals = np.sqrt(np.maximum(ens.values, 0.0))
    for i in np.flatnonzero(np.isfinite(ens.hit_time)):
        k = np.searchsorted(ens.times, ens.hit_time[i] - 1e-12)
        if k < len(ens.times):
            vals[i, k:] = 0.0 if k == 0 else vals[i, k - 1]
    return PathEnsemble(ens.times.copy(), vals, ens.hit_time.copy(), ens.seed,
                        dict(ens.meta, transform=ens.meta.get("transform", []) + ["sqrt"]))


def ou_exact(m: AffineModel, z0: float, cfg: SimConfig) -> PathEnsemble:
    """Exact transitions of dy = alpha/2 dw - lam/2 y dt (the delta = 1 case)."""
    if not m.lam > 0:
        raise ValueError("ou_exact needs lam > 0")
    if abs(m.delta - 1) > 1e-9:
        raise ValueError("ou_exact is the delta = 1 case")
    grid = cfg.grid()
    rec = cfg.recorded_steps()
    keep = np.zeros(len(grid), dtype=bool)
    keep[rec] = True
    decay = math.exp(-m.lam * cfg.dt / 2)
    sd = math.sqrt(m.alpha**2 * -math.expm1(-m.lam * cfg.dt) / (4 * m.lam))

    def kernel(rng, n):
        y = np.full(n, float(z0))
        out = np.empty((n, len(rec)))
        out[:, 0] = y
        col = 1
        for j in range(cfg.steps):
            y = decay * y + sd * rng.standard_normal(n)
            if keep[j + 1]:
                out[:, col] = y
                col += 1
        return out, np.full(n, np.nan)

    return _run_blocks(cfg, kernel, {"model": "ou-exact", "params": asdict(m), "z0": z0})


# --- closed-form laws -------------------------------------------------------------

@dataclass
class DensityResult:
    """rho_t with its distribution object and the dual solution eta_* = rho / eta."""

    delta: int
    t: float
    dist: object
    eta_star: Solution

    def pdf(self, q):
        return self.dist.pdf(q)

    def cdf(self, q):
        return self.dist.cdf(q)

    def __call__(self, q):
        return self.pdf(q)

    def moments(self, kmax: int = 4) -> list[float]:
        return [float(self.dist.moment(k)) for k in range(1, kmax + 1)]


def density(delta: int, m: AffineModel, z0: float, t: float) -> DensityResult:
    """Law of z(t) = sqrt(X_t) for delta = 1 (Gaussian) and delta = 3 (X0 = 0)."""
    if delta not in (1, 3):
        raise ValueError("density is available for delta in {1, 3}")
    if not t > 0:
        raise ValueError("t must be positive")
    if m.lam == 0:
        raise ValueError("density needs lam != 0")
    if abs(m.delta - delta) > 1e-9:
        raise ValueError(f"model has delta={m.delta}, not {delta}")
    a, l = _sym(m.alpha), _sym(m.lam)
    T = t_sym
    one_minus = 1 - sp.exp(-l * T)
    if delta == 1:
        mean = math.exp(-m.lam * t / 2) * z0
        var = m.alpha**2 * -math.expm1(-m.lam * t) / (4 * m.lam)
        dist = stats.norm(loc=mean, scale=math.sqrt(var))
        log_rho = (sp.log(2 * sp.sqrt(l) / (a * sp.sqrt(2 * sp.pi * one_minus)))
                   - 2 * l * (q_sym - sp.exp(-l * T / 2) * _sym(z0)) ** 2 / (a**2 * one_minus))
        dom = Domain.box(t_min=0.0)
    else:
        if z0 != 0:
            raise ValueError("the delta = 3 density assumes X0 = 0")
        scale = math.sqrt(m.alpha**2 * -math.expm1(-m.lam * t) / (4 * m.lam))
        dist = stats.maxwell(scale=scale)
        log_rho = (sp.log(16 * l ** sp.Rational(3, 2) / (sp.sqrt(2 * sp.pi) * a**3 * one_minus ** sp.Rational(3, 2)))
                   + 2 * sp.log(q_sym) - 2 * l * q_sym**2 / (a**2 * one_minus))
        dom = Domain.box(t_min=0.0, q_min=0.0)
    eta = m.eta()
    log_star = log_rho - eta.log_expr
    star = Solution(expr=sp.exp(log_star), domain=dom, potential=m.potential(),
                    provenance=(f"density:delta={delta}", "divided by " + eta.provenance[0]),
                    log_expr=log_star)
    return DensityResult(delta, t, dist, star)


def s_martingale(paths: PathEnsemble, lam: float) -> PathEnsemble:
    """s(t) = e^{-lam t / 2} / z(t), computed on each path up to its stopping time."""
    k_alive = np.array([paths.alive(k) for k in range(len(paths.times))]).T
    bad = k_alive & ~(paths.values > 0)
    if np.any(bad):
        i, k = np.argwhere(bad)[0]
        raise NonPositivePath(f"path {i} is nonpositive at t={paths.times[k]}")
    with np.errstate(divide="ignore"):
        return paths.mapped(lambda t, z: np.exp(-lam * t / 2) / z, f"s(lam={lam})")


def manifest(ens: PathEnsemble) -> str:
    return json.dumps({"seed": int(ens.seed), "meta": ens.meta, "summary": ens.summary()},
                      indent=2, default=str)
