"""Command-line entry point: isoheat <command> [options].

Exit codes: 0 pass, 1 verification failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import isovectors as iv
from . import sde
from .martingale import density_fit, omega_martingale_suite
from .solutions import (DomainError, affine_eta, apply_tilde, constant_eta, grid_dump, group_action,
                        heat_kernel_eta, plane_wave_eta, residual)

# config schema: section -> key -> type
SCHEMA = {
    "potential": {"C": float, "D": float, "gamma": float},
    "affine": {"alpha": float, "beta": float, "phi": float, "lambda": float, "delta": float},
    "simulation": {"t0": float, "t1": float, "steps": int, "paths": int, "seed": int, "scheme": str,
                   "threads": int, "record_every": int, "z0": float, "r0": float, "y0": float},
    "output": {"out": str},
    "tolerance": {"threshold": float, "residual": float},
}
DEFAULTS = {
    "C": 0.0, "D": 0.0, "gamma": 1.0, "alpha": 2.0, "beta": 0.0, "phi": None, "lambda": 2.0, "delta": 3.0,
    "t0": 0.0, "t1": 1.0, "steps": 1000, "paths": 10000, "seed": 0, "scheme": "euler-maruyama",
    "threads": 1, "record_every": 100, "z0": None, "r0": None, "y0": 0.0, "out": None,
    "threshold": 4.0, "residual": 1e-8,
}


class UsageError(Exception):
    pass


def load_config(path) -> dict:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not cp.read(path):
        raise UsageError(f"cannot read config {path}")
    out = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise UsageError(f"unknown config section [{sec}]")
        for key, raw in cp[sec].items():
            if key not in SCHEMA[sec]:
                raise UsageError(f"unknown key {key!r} in [{sec}]")
            try:
                out[key] = SCHEMA[sec][key](raw)
            except ValueError:
                raise UsageError(f"bad value for {sec}.{key}: {raw!r}") from None
    return out


def _params(args) -> dict:
    p = dict(DEFAULTS)
    if getattr(args, "config", None):
        p.update(load_config(args.config))
    for key in DEFAULTS:
        v = getattr(args, key.replace("-", "_"), None)
        if v is not None:
            p[key] = v
    return p


def _potential(p) -> iv.Potential:
    try:
        return iv.Potential(p["C"], p["D"], p["gamma"])
    except ValueError as e:
        raise UsageError(str(e)) from None


def _model(p) -> sde.AffineModel:
    try:
        if p["phi"] is not None:
            return sde.AffineModel(p["alpha"], p["beta"], p["phi"], p["lambda"])
        return sde.AffineModel.from_delta(p["alpha"], p["lambda"], p["delta"], p["beta"])
    except ValueError as e:
        raise UsageError(str(e)) from None


def _simconfig(p, scheme=None) -> sde.SimConfig:
    try:
        return sde.SimConfig(p["t0"], p["t1"], p["steps"], p["paths"], p["seed"], scheme or p["scheme"],
                             record_every=p["record_every"], threads=p["threads"])
    except ValueError as e:
        raise UsageError(str(e)) from None


def parse_eta(spec: str, gamma: float = 1.0):
    """constant | heat:T,q0 | wave:k | affine:alpha,lambda,delta"""
    name, _, rest = spec.partition(":")
    nums = [float(x) for x in rest.split(",")] if rest else []
    try:
        if name == "constant" and not nums:
            return constant_eta(gamma)
        if name == "heat" and len(nums) == 2:
            return heat_kernel_eta(gamma, *nums)
        if name == "wave" and len(nums) == 1:
            return plane_wave_eta(nums[0], gamma)
        if name == "affine" and len(nums) == 3:
            return affine_eta(*nums)
    except ValueError as e:
        raise UsageError(str(e)) from None
    raise UsageError(f"bad eta spec {spec!r}")


def _case(p, which):
    pot = _potential(p)
    if which == "raw":
        return iv.basis(pot)
    if which == "iso":
        return iv.iso_basis(pot)
    return iv.continuous_basis(pot)


def _emit(obj, p):
    text = json.dumps(obj, indent=2, default=_jsonable)
    print(text)
    if p.get("out"):
        Path(p["out"]).write_text(text + "\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _git_describe() -> str:
    try:
        r = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                           cwd=Path(__file__).resolve().parent, timeout=5)
        return r.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


# --- commands -------------------------------------------------------------------

def cmd_basis(args, p) -> int:
    case = _case(p, args.which)
    rep = iv.structure_identification(case, strict=False)
    _emit({"case": case.label, "dim": case.dim,
           "generators": {n: x.pretty() for n, x in zip(case.names, case.basis)},
           "brackets": iv.bracket_table(case), "structure": rep.to_json()}, p)
    return 0 if rep.ok else 1


def cmd_brackets(args, p) -> int:
    case = _case(p, args.which)
    _emit({"case": case.label, "brackets": iv.bracket_table(case), "jacobi_defects": iv.jacobi_defects(case)}, p)
    return 0


def cmd_structure(args, p) -> int:
    rep = iv.structure_identification(_case(p, "continuous"), strict=False)
    _emit(rep.to_json(), p)
    return 0 if rep.ok else 1


def _grid(args):
    ts = np.linspace(args.tmin, args.tmax, args.n)
    qs = np.linspace(args.qmin, args.qmax, args.n)
    return ts, qs


def cmd_transform(args, p) -> int:
    eta = parse_eta(args.eta, p["gamma"])
    try:
        if args.tilde is not None:
            case = iv.continuous_basis(eta.potential)
            if not 1 <= args.tilde <= case.dim:
                raise UsageError("tilde index out of range")
            out = apply_tilde(case.basis[args.tilde - 1], eta)
        else:
            out = group_action(args.generator, args.mu, eta, window=(args.tmin, args.tmax))
    except DomainError as e:
        raise UsageError(str(e)) from None
    except ValueError as e:
        raise UsageError(str(e)) from None
    ts, qs = _grid(args)
    T, Qg = np.meshgrid(ts, qs, indexing="ij")
    inside = out.domain.contains(T, Qg)
    pts = np.column_stack([T[inside], Qg[inside]])
    res = residual(out, grid=pts) if len(pts) else None
    ok = res is not None and res.relative < p["residual"]
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("t,q,value\n")
            for t, q, v in grid_dump(out, ts, qs):
                fh.write(f"{t!r},{q!r},{v!r}\n")
    _emit({"solution": out.describe(), "residual_relative": None if res is None else res.relative,
           "grid_points": int(len(pts)), "ok": ok}, p)
    return 0 if ok else 1


def _simulate(args, p):
    model = args.model
    if model == "affine":
        m = _model(p)
        r0 = p["r0"] if p["r0"] is not None else m.r_from_x(0.05 * m.alpha**2)
        return sde.simulate_affine(m, r0, _simconfig(p))
    if model == "besq":
        return sde.simulate_besq(p["delta"], p["y0"], _simconfig(p))
    if model == "ou":
        m = _model(p)
        return sde.ou_exact(m, 1.0 if p["z0"] is None else p["z0"], _simconfig(p, "exact-ou"))
    if model == "bernstein":
        eta = parse_eta(args.eta or "constant", p["gamma"])
        gamma = eta.potential.gamma
        z0 = p["z0"] if p["z0"] is not None else (1.0 if eta.domain.contains(p["t0"], 1.0) else 0.0)
        try:
            return sde.simulate_bernstein(eta, gamma, z0, _simconfig(p))
        except sde.Z0OutOfDomain as e:
            raise UsageError(str(e)) from None
    raise UsageError(f"unknown model {model}")


def cmd_simulate(args, p) -> int:
    ens = _simulate(args, p)
    prefix = p["out"] or f"ensemble-{args.model}-{p['seed']}"
    ens.to_csv(prefix + ".csv")
    ens.to_binary(prefix + ".bin")
    man = {"command": sys.argv[1:], "params": p, "seed": int(ens.seed), "build": _git_describe(),
           "meta": ens.meta, "summary": ens.summary(), "files": [prefix + ".csv", prefix + ".bin"]}
    Path(prefix + ".json").write_text(json.dumps(man, indent=2, default=_jsonable) + "\n")
    print(json.dumps(ens.summary(), indent=2))
    return 0


def _verify_omega(args, p):
    if args.eta:
        eta = parse_eta(args.eta, p["gamma"])
        pot = eta.potential
    else:
        pot = _potential(p)
        if pot.C != 0 or pot.D != 0:
            raise UsageError("give --eta for a potential other than C=0, D=0")
        eta = constant_eta(pot.gamma)
    case = iv.continuous_basis(pot)
    z0 = p["z0"] if p["z0"] is not None else 0.0
    reps = omega_martingale_suite(case, eta, _simconfig(p), z0, threshold=p["threshold"])
    ok = all(r.passed for r in reps) and all((r.precheck_error or 0) < 1e-10 for r in reps)
    return {"suite": "omega", "case": case.label, "z0": z0, "reports": [r.to_dict() for r in reps], "ok": ok}


def _verify_density(args, p):
    d = int(p["delta"])
    m = sde.AffineModel.from_delta(p["alpha"], p["lambda"], d)
    t = p["t1"]
    if d == 1:
        z0 = 1.0 if p["z0"] is None else p["z0"]
        ens = sde.ou_exact(m, z0, _simconfig(p, "exact-ou"))
        sample = ens.at(t)
    elif d == 3:
        z0 = 0.0
        cfg = _simconfig(p, "besq-sum-of-squares")
        besq = sde.simulate_besq(3, 0.0, cfg, times=sde.clock_grid(m, cfg.grid()))
        sample = sde.sqrt_transform(sde.besq_time_change(m, besq)).at(t)
    else:
        raise UsageError("density suite supports delta 1 or 3")
    rho = sde.density(d, m, z0, t)
    fit = density_fit(sample, None, rho)
    return {"suite": "density", "delta": d, "t": t, "fit": fit.to_dict(), "ok": fit.ks_ok and fit.moments_ok}


def _verify_brackets(args, p):
    out = []
    ok = True
    for D in (0.0, 0.5, -0.5):
        for C in (0.0, 1.0):
            case = iv.continuous_basis(iv.Potential(C, D, p["gamma"]))
            try:
                iv.bracket_table(case)
                defects = iv.jacobi_defects(case)
            except iv.NotClosed as e:
                defects = [str(e)]
            ok &= not defects
            out.append({"case": case.label, "jacobi_defects": defects})
    return {"suite": "brackets", "cases": out, "ok": ok}


def _verify_residual(args, p):
    rng = np.random.default_rng(p["seed"])
    rows, ok = [], True
    for a, lam, d in [(2, 2, 3), (2, 2, 1), (1.5, 0.7, 2), (3, 1.2, 4.5), (2, 0, 1)]:
        eta = affine_eta(a, lam, d)
        g = np.column_stack([rng.uniform(0, 1, 50), rng.uniform(0.3, 3, 50)])
        r = residual(eta, grid=g).relative
        ok &= r < p["residual"]
        rows.append({"alpha": a, "lambda": lam, "delta": d, "relative": r})
    return {"suite": "residual", "rows": rows, "ok": ok}


def cmd_verify(args, p) -> int:
    suites = {"omega": _verify_omega, "density": _verify_density, "brackets": _verify_brackets,
              "residual": _verify_residual}
    res = suites[args.suite](args, p)
    _emit(res, p)
    if args.suite == "omega":
        print(f"{'pair':<22}{'max|z|':>10}{'status':>10}", file=sys.stderr)
        for r in res["reports"]:
            status = "trivial" if r["trivial"] else ("pass" if r["passed"] else "FAIL")
            print(f"{r['name']:<22}{r['max_abs_z']:>10.3f}{status:>10}", file=sys.stderr)
    return 0 if res["ok"] else 1


def cmd_density(args, p) -> int:
    from scipy.integrate import quad

    d = int(p["delta"])
    try:
        m = sde.AffineModel.from_delta(p["alpha"], p["lambda"], d)
        z0 = (0.0 if d == 3 else 1.0) if p["z0"] is None else p["z0"]
        rho = sde.density(d, m, z0, p["t1"])
    except ValueError as e:
        raise UsageError(str(e)) from None
    lo = 0.0 if d == 3 else -np.inf
    mass = quad(rho.pdf, lo, np.inf, epsabs=1e-13, epsrel=1e-13)[0]
    qs = np.linspace(0 if d == 3 else -4, 4, args.n)
    _emit({"delta": d, "t": p["t1"], "mass": mass, "moments": rho.moments(),
           "pdf": [[float(q), float(v)] for q, v in zip(qs, rho.pdf(qs))]}, p)
    return 0 if abs(mass - 1) < 1e-10 else 1


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="isoheat", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI file; command-line flags override it")
        sp.add_argument("--out")
        sp.add_argument("--C", type=float)
        sp.add_argument("--D", type=float)
        sp.add_argument("--gamma", type=float)
        return sp

    def sim(sp):
        for k in ("t0", "t1", "z0", "r0", "y0", "threshold", "residual"):
            sp.add_argument("--" + k, type=float)
        for k in ("steps", "paths", "seed", "threads"):
            sp.add_argument("--" + k, type=int)
        sp.add_argument("--record-every", dest="record_every", type=int)
        sp.add_argument("--scheme", choices=sde.SCHEMES)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--phi", type=float)
        sp.add_argument("--lambda", dest="lambda", type=float)
        sp.add_argument("--delta", type=float)
        return sp

    for name, fn in (("basis", cmd_basis), ("brackets", cmd_brackets), ("structure", cmd_structure)):
        sp = common(sub.add_parser(name))
        sp.add_argument("--which", choices=("raw", "continuous", "iso"), default="continuous")
        sp.set_defaults(func=fn)

    sp = sim(common(sub.add_parser("transform")))
    sp.add_argument("--eta", required=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--generator", type=int, choices=range(1, 7))
    g.add_argument("--tilde", type=int)
    sp.add_argument("--mu", type=float, default=0.0)
    sp.add_argument("--tmin", type=float, default=0.0)
    sp.add_argument("--tmax", type=float, default=1.0)
    sp.add_argument("--qmin", type=float, default=0.1)
    sp.add_argument("--qmax", type=float, default=2.0)
    sp.add_argument("--n", type=int, default=11)
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_transform)

    sp = sim(common(sub.add_parser("simulate")))
    sp.add_argument("--model", choices=("affine", "besq", "bernstein", "ou"), required=True)
    sp.add_argument("--eta")
    sp.set_defaults(func=cmd_simulate)

    sp = sim(common(sub.add_parser("verify")))
    sp.add_argument("--suite", choices=("omega", "density", "brackets", "residual"), required=True)
    sp.add_argument("--eta")
    sp.set_defaults(func=cmd_verify)

    sp = sim(common(sub.add_parser("density")))
    sp.add_argument("--n", type=int, default=21)
    sp.set_defaults(func=cmd_density)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    try:
        p = _params(args)
        if not p["gamma"] > 0:
            raise UsageError("gamma must be positive")
        return args.func(args, p)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
