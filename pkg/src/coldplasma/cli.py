"""Command-line entry point.

Every command reads one configuration file and writes ``report.json`` (sorted
keys, no timing) plus ``timing.json`` into ``--out``. The report's ``config``
entry holds the configuration with every default and auto-constructed value
filled in, so re-running it with the same ``--seed`` reproduces the report.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import (as_float, build_domain, build_type_change, dump_json, float_list, jsonable, load_config,
                     roles as config_roles, section)
from .errors import (ColdPlasmaError, ConfigError, DomainError, InvalidTypeChange, ParseError, RoleMismatch,
                     UnknownFamily)
from .expr import ZERO, Const, TypeChangeSpec, as_expr, diff, evaluate, parse_expr, to_str
from .friedrichs import (BC_KINDS, Symmetrizer, admissibility, assemble_adjoint_system, assemble_system,
                         boundary_matrix, build_discrete, elliptic_dirichlet_bc, manufactured_convergence,
                         q_matrix, solve_ls, symmetrize, adjoint_energy_study, w_space_bc)
from .geometry import (CHECKS, FlowField, assign_roles, check_bc_inequalities, classify_boundary,
                       domain_samples, star_shaped)
from .multiplier import (FAMILIES, builtin_family, check_positivity, coeffs, fixed_bump, lower_bound_ratio,
                         random_bump, verify_identity)

CONFIG_ERRORS = (ConfigError, ParseError, UnknownFamily, DomainError, InvalidTypeChange, RoleMismatch)


class Run:
    """State for one command: the raw config, the echo being built, checks and results."""

    def __init__(self, cfg: dict, seed: int, out: Path):
        self.cfg = cfg
        self.seed = seed
        self.out = out
        self.echo = copy.deepcopy(cfg)
        self.results: dict = {}
        self.checks: dict = {}
        self.flags: list = []
        self.files: list = []

    def check(self, name, value, tolerance, passed):
        self.checks[name] = {"value": value, "tolerance": tolerance, "pass": bool(passed)}

    def knobs(self, key: str, defaults: dict) -> dict:
        out = dict(defaults)
        out.update(section(self.cfg, key))
        unknown = sorted(set(out) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown keys in '{key}': {unknown}")
        self.echo[key] = out
        return out

    def domain(self, default: str = "box"):
        dom = build_domain(self.cfg, default)
        d = section(self.cfg, "domain")
        if "arcs" not in d:
            self.echo["domain"] = {"name": dom.name, "params": dict(dom.params)}
        return dom

    def type_change(self) -> TypeChangeSpec:
        K = build_type_change(self.cfg)
        tc = {"variant": section(self.cfg, "type_change").get("variant", "cold_plasma")}
        tc.update({k: v for k, v in K.params})
        if tc["variant"] == "general_x":
            tc["K"] = to_str(K.K)
        self.echo["type_change"] = tc
        return K

    def operator(self, k1=0.0, k2=0.0):
        op = section(self.cfg, "operator")
        k1 = parse_expr(str(op.get("kappa1", k1)))
        k2 = parse_expr(str(op.get("kappa2", k2)))
        self.echo["operator"] = {"kappa1": to_str(k1), "kappa2": to_str(k2)}
        return k1, k2

    def write(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name


def _zero_on(e, xs, ys) -> bool:
    v = evaluate(as_expr(e), {"x": xs, "y": ys}, interface="neg") * np.ones_like(xs)
    return bool(np.all(v == 0.0))


def _expr_pair(v, what: str):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{what} must be a pair of expressions")
    return parse_expr(str(v[0])), parse_expr(str(v[1]))


def _multiplier(run: Run, domain):
    m = section(run.cfg, "multiplier")
    family = m.get("family")
    if family is None:
        raise ConfigError("'multiplier.family' is required")
    if family not in FAMILIES:
        raise UnknownFamily(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")
    params = dict(m.get("params") or {})
    if family == "explicit":
        params["K_spec"] = run.type_change()
        op = section(run.cfg, "operator")
        params.setdefault("kappa1", op.get("kappa1", 0.0))
        params.setdefault("kappa2", op.get("kappa2", 0.0))
    H = builtin_family(family, params, domain)
    given = {k for k, v in params.items() if v is not None}
    auto = sorted((set(m.get("auto") or []) | {k for k in H.params if k not in given}) - {"scale"})
    run.echo["multiplier"] = {"family": family, "params": dict(sorted(H.params.items())), "auto": auto}
    return H


def _describe_multiplier(H) -> dict:
    d = H.describe()
    d["derived"] = {k: v for k, v in d["derived"].items() if not k.endswith("_auto")}
    return d


# ---------------------------------------------------------------- verify-multiplier

def cmd_verify_multiplier(run: Run):
    domain = run.domain()
    H = _multiplier(run, domain)
    pos = run.knobs("positivity", {"delta": 1e-9, "density": 512.0})
    x0, x1, y0, y1 = domain.bbox()
    kind = section(run.cfg, "identity").get("v", "fixed" if domain.name == "box" else "random")
    # a random bump may be as narrow as 8 coarse cells, so it gets one extra halving
    base = max(x1 - x0, y1 - y0) / (64 if kind == "fixed" else 128)
    ident = run.knobs("identity", {"h": [base, base / 2, base / 4], "v": kind,
                                   "max_rel_gap": 1e-3, "min_order": 1.8})
    ratio = run.knobs("ratio", {"trials": 100, "h": None, "margin_fraction": 0.75})
    run.results["multiplier"] = _describe_multiplier(H)
    cf = coeffs(H)
    run.results["coefficients"] = cf.describe()

    xs, ys = domain_samples(domain, 32.0)
    if all(_zero_on(e, xs, ys) for e in (H.a, H.b, H.c)):
        run.flags.append("zero_multiplier")
        run.results["positivity"] = {"delta_eff": 0.0, "certified": None}
        run.results["identity"] = {"rel_gap": [0.0], "pairwise_order": []}
        run.results["ratio"] = {"min_ratio": 0.0}
        run.check("positivity_margin", 0.0, None, True)
        run.check("identity_rel_gap", 0.0, None, True)
        run.check("min_ratio", 0.0, None, True)
        return "vacuous-pass"

    cert = check_positivity(cf, domain, as_float(pos["delta"], "positivity.delta"),
                            as_float(pos["density"], "positivity.density"))
    run.results["positivity"] = cert.to_dict()
    if len(cert.violations):
        cert.write_violations(run.write("violations.csv"))
    run.check("positivity_certified", cert.delta_eff, pos["delta"], cert.certified)

    hs = float_list(ident["h"], "identity.h")
    rng = np.random.default_rng(run.seed)
    vector = H.pairing in ("inside", "outside")
    if ident["v"] == "fixed":
        if abs(x0) > 1e-12 or abs(y0) > 1e-12:
            raise ConfigError("identity.v = fixed needs a domain whose bounding box starts at the origin")
        one = fixed_bump(x1, y1)
        v = (one, one * Const(0.5)) if vector else one
        vdesc = {"kind": "fixed", "bbox": [x0, x1, y0, y1]}
    elif ident["v"] == "random":
        bumps = [random_bump(domain, rng, max(hs)) for _ in range(2 if vector else 1)]
        v = tuple(b.expr for b in bumps) if vector else bumps[0].expr
        vdesc = {"kind": "random", "bumps": [b.to_dict() for b in bumps]}
    else:
        v = _expr_pair(ident["v"], "identity.v") if vector else parse_expr(str(ident["v"]))
        vdesc = {"kind": "expression"}
    rep = verify_identity(None, H, v, domain, hs)
    run.results["identity"] = {**rep.to_dict(), "test_function": vdesc}
    min_order = min(rep.orders) if rep.orders else math.nan
    run.check("identity_rel_gap", rep.rel_gap[-1], ident["max_rel_gap"], rep.rel_gap[-1] <= ident["max_rel_gap"])
    run.check("identity_order", min_order, ident["min_order"], min_order >= ident["min_order"])

    h = None if ratio["h"] is None else as_float(ratio["h"], "ratio.h")
    rr = lower_bound_ratio(H, domain, int(ratio["trials"]), run.seed, h)
    run.results["ratio"] = rr.to_dict()
    frac = as_float(ratio["margin_fraction"], "ratio.margin_fraction")
    run.check("min_ratio_positive", rr.min_ratio, 0.0, rr.min_ratio > 0)
    run.check("min_ratio_vs_margin", rr.min_ratio, frac * cert.delta_eff, rr.min_ratio >= frac * cert.delta_eff)
    return None


# ---------------------------------------------------------------- check-domain

def cmd_check_domain(run: Run):
    domain = run.domain()
    knobs = run.knobs("bc_checks", {"checks": ["star1", "star2"], "normal": "canonical", "n": 256,
                                    "require": {}})
    H = None
    if section(run.cfg, "multiplier"):
        H = _multiplier(run, domain)
        K, b, c = H.K, H.b, H.c
        run.results["multiplier"] = _describe_multiplier(H)
    else:
        K = run.type_change()
        b = c = None
    cls = classify_boundary(domain, K)
    run.results["classification"] = cls.to_dict()
    r = config_roles(run.cfg)
    if r:
        domain = assign_roles(domain, r, K, cls)
        run.echo["roles"] = dict(sorted(r.items()))
        run.results["roles"] = dict(sorted(r.items()))

    checks = list(knobs["checks"])
    for name in checks:
        if name not in CHECKS:
            raise ConfigError(f"unknown boundary check {name!r}; choose from {CHECKS}")
    if checks and b is None:
        raise ConfigError("boundary checks need (b, c) from a 'multiplier' section")
    reports = {}
    for name in checks:
        rep = check_bc_inequalities(domain, b, c, K, name, n=int(knobs["n"]), normal=knobs["normal"])
        reports[name] = rep.to_dict()
    run.results["bc_checks"] = reports
    if "star1" in reports:
        run.results["G_candidates"] = reports["star1"]["passing"]
    for name, arcs in sorted((knobs["require"] or {}).items()):
        if name not in reports:
            raise ConfigError(f"bc_checks.require names {name!r}, which is not in bc_checks.checks")
        want = domain.arc_names if arcs == "all" else list(arcs)
        got = reports[name]["passing"]
        run.check(f"{name}_passing_arcs", got, sorted(want), sorted(got) == sorted(want))

    flow_cfg = section(run.cfg, "flow")
    if flow_cfg:
        if flow_cfg.get("from_multiplier"):
            if H is None:
                raise ConfigError("flow.from_multiplier needs a 'multiplier' section")
            flow = FlowField(b=H.b, c=H.c)
        elif "lx" in flow_cfg or "ly" in flow_cfg:
            flow = FlowField(lx=as_float(flow_cfg.get("lx", 1.0), "flow.lx"),
                             ly=as_float(flow_cfg.get("ly", 1.0), "flow.ly"))
        else:
            flow = FlowField(b=parse_expr(str(flow_cfg.get("b", "x"))), c=parse_expr(str(flow_cfg.get("c", "y"))))
        ss = star_shaped(domain, flow)
        run.results["flow"] = flow.describe()
        run.results["star_shaped"] = ss.to_dict()
        expect = flow_cfg.get("expect", True)
        run.check("star_shaped", ss.star_shaped, expect, ss.star_shaped == bool(expect))
    return None


# ---------------------------------------------------------------- check-friedrichs

def _symmetrizer(run: Run, K: TypeChangeSpec) -> Symmetrizer:
    s = section(run.cfg, "symmetrizer")
    if "M" in s or "N" in s:
        M = as_float(s.get("M", -100.0), "symmetrizer.M")
        N = as_float(s.get("N", -1.0), "symmetrizer.N")
        b = Const(M) + Const(N / 2) * K.K
        c = Const(N) * parse_expr("y")
        run.echo["symmetrizer"] = {"M": M, "N": N}
    else:
        b = parse_expr(str(s.get("b", "1")))
        c = parse_expr(str(s.get("c", "0")))
        run.echo["symmetrizer"] = {"b": to_str(b), "c": to_str(c)}
    return Symmetrizer(b, c)


def cmd_check_friedrichs(run: Run):
    if "type_change" not in run.cfg:
        run.cfg = {**run.cfg, "type_change": {"variant": "sigma", "sigma": "y^2"}}
    K = run.type_change()
    k1, k2 = run.operator()
    domain = run.domain("circle_lens")
    knobs = run.knobs("friedrichs", {"density": 128.0, "boundary_samples": 256, "normal": "canonical",
                                     "flip_normals": [], "q_tol": 0.0, "mu_tol": 1e-12, "split_tol": 1e-12})
    E = _symmetrizer(run, K)
    sys_ = symmetrize(assemble_system(K, k1, k2), E, domain)
    run.results["system"] = sys_.describe()
    qr = q_matrix(sys_, domain, as_float(knobs["density"], "friedrichs.density"))
    run.results["Q"] = qr.to_dict()
    run.check("Q_min_eigenvalue", qr.min_eigenvalue, knobs["q_tol"], qr.min_eigenvalue > knobs["q_tol"])

    cls = classify_boundary(domain, K)
    run.results["classification"] = cls.to_dict()
    n = int(knobs["boundary_samples"])
    bm = boundary_matrix(sys_, domain, n, knobs["normal"], cls)
    adm = admissibility(bm)
    run.results["boundary_matrix"] = bm.to_dict()
    run.results["admissibility"] = adm.to_dict()
    run.check("beta_split_exact", adm.split_exact, knobs["split_tol"], adm.split_exact)
    mu = adm.mu_star_min
    run.check("mu_star_min_eigenvalue", mu, -knobs["mu_tol"], (not math.isnan(mu)) and mu >= -knobs["mu_tol"])

    flips = set(knobs["flip_normals"] or [])
    unknown = flips - set(domain.arc_names)
    if unknown:
        raise ConfigError(f"friedrichs.flip_normals names unknown arcs {sorted(unknown)}")
    other = "outward" if knobs["normal"] == "canonical" else "canonical"
    hyper = [a for a in domain.arc_names if cls.label(a) == "hyperbolic"]
    bq = {}
    for which in ("bQ1", "bQ2"):
        merged = {}
        for normal, arcs in ((knobs["normal"], [a for a in hyper if a not in flips]),
                             (other, [a for a in hyper if a in flips])):
            if arcs:
                rep = check_bc_inequalities(domain, E.b, E.c, K, which, n=n, normal=normal, arcs=arcs)
                merged.update(rep.to_dict()["arcs"])
        bq[which] = merged
        worst = min((v["margin"] for v in merged.values()), default=math.inf)
        run.check(f"{which}_hyperbolic_arcs", worst, 0.0, all(v["pass"] for v in merged.values()))
    run.results["hyperbolic_bc_checks"] = bq
    return None


# ---------------------------------------------------------------- solve / convergence

def _system(run: Run, knobs: dict):
    K = run.type_change()
    k1, k2 = run.operator()
    if knobs["system"] == "raw":
        return assemble_system(K, k1, k2)
    if knobs["system"] == "adjoint":
        return assemble_adjoint_system(K, k1)
    raise ConfigError("system must be 'raw' or 'adjoint'")


def _bc(run: Run, domain, K, spec):
    if spec == "w_space":
        return w_space_bc(domain)
    if spec == "elliptic_dirichlet":
        return elliptic_dirichlet_bc(domain, K)
    if isinstance(spec, dict):
        bc = {a: "none" for a in domain.arc_names}
        for a, kind in spec.items():
            if kind not in BC_KINDS:
                raise ConfigError(f"unknown boundary condition kind {kind!r}; choose from {BC_KINDS}")
            bc[str(a)] = kind
        return bc
    raise ConfigError("bc must be 'w_space', 'elliptic_dirichlet' or a mapping from arc to kind")


def _domain_with_roles(run: Run, K):
    domain = run.domain()
    r = config_roles(run.cfg)
    if r:
        domain = assign_roles(domain, r, K)
        run.echo["roles"] = dict(sorted(r.items()))
    return domain


def _exact(cfg_exact, cfg_potential):
    if cfg_potential is not None:
        phi = parse_expr(str(cfg_potential))
        return diff(phi, "x"), diff(phi, "y")
    if cfg_exact is not None:
        return _expr_pair(cfg_exact, "exact")
    return None


def cmd_solve(run: Run):
    knobs = run.knobs("solve", {"system": "raw", "h": 1 / 64, "bc": "elliptic_dirichlet", "f": None,
                                "exact": None, "potential": None, "rtol": 1e-12, "maxiter": 10000,
                                "max_error": 1e-8, "write_field": True, "dump_operator": False})
    sys_ = _system(run, knobs)
    domain = _domain_with_roles(run, sys_.K)
    bc = _bc(run, domain, sys_.K, knobs["bc"])
    h = as_float(knobs["h"], "solve.h")
    op = build_discrete(sys_, domain, h, bc)
    exact = _exact(knobs["exact"], knobs["potential"])
    if exact is not None:
        u1, u2 = exact
        f = sys_.apply(exact)

        def g(x, y, a1, a2):
            env = {"x": x, "y": y}
            return a1 * evaluate(u1, env, interface="neg") + a2 * evaluate(u2, env, interface="neg")
    else:
        f = _expr_pair(knobs["f"], "solve.f") if knobs["f"] is not None else (ZERO, ZERO)
        g = None
    sol = solve_ls(op, f, g, as_float(knobs["rtol"], "solve.rtol"), int(knobs["maxiter"]))
    run.results["bc"] = dict(sorted(bc.items()))
    run.results["operator_shape"] = list(op.A.shape)
    run.results["solve"] = {k: v for k, v in sol.to_dict().items() if k != "history"}
    if exact is not None:
        ex = op.exact_vector(u1, u2)
        err = op.l2_norm(sol.vector - ex)
        run.results["l2_error"] = err
        run.results["exact"] = [to_str(u1), to_str(u2)]
        run.check("l2_error", err, knobs["max_error"], err <= knobs["max_error"])
    else:
        run.check("relative_residual", sol.relative_residual, None, math.isfinite(sol.relative_residual))
    if knobs["write_field"]:
        sol.field.to_csv(run.write("field.csv"))
    if knobs["dump_operator"]:
        op.dump_triplets(run.write("operator.txt"))
    return None


def cmd_convergence(run: Run):
    knobs = run.knobs("convergence", {"system": "raw", "h": [1 / 32, 1 / 64, 1 / 128], "bc": "elliptic_dirichlet",
                                      "exact": None, "potential": "x*(x-1)*y*(y-1)", "rtol": 1e-12,
                                      "maxiter": 20000, "min_order": 1.0})
    if knobs["exact"] is not None:
        knobs["potential"] = None
        run.echo["convergence"]["potential"] = None
    sys_ = _system(run, knobs)
    domain = _domain_with_roles(run, sys_.K)
    bc = _bc(run, domain, sys_.K, knobs["bc"])
    exact = _exact(knobs["exact"], knobs["potential"])
    hs = float_list(knobs["h"], "convergence.h")
    study = manufactured_convergence(sys_, domain, exact, hs, bc, as_float(knobs["rtol"], "convergence.rtol"),
                                     int(knobs["maxiter"]))
    run.results["bc"] = dict(sorted(bc.items()))
    run.results["exact"] = [to_str(exact[0]), to_str(exact[1])]
    run.results["convergence"] = study.to_dict()
    worst = min(study.orders) if study.orders else math.nan
    run.check("min_pairwise_order", worst, knobs["min_order"], worst >= knobs["min_order"])
    return None


# ---------------------------------------------------------------- energy-constant

def cmd_energy_constant(run: Run):
    knobs = run.knobs("energy", {"sigma": "y^2", "kappa1": 1.0, "m": 10.0, "t": 2.0,
                                 "h": [1 / 32, 1 / 64, 1 / 128], "negative_control": True,
                                 "max_ratio": 2.0, "min_growth": 10.0})
    domain = run.domain("cone")
    sigma = parse_expr(str(knobs["sigma"]), ("y",))
    run.echo["energy"]["sigma"] = to_str(sigma)
    r = config_roles(run.cfg)
    if r:
        domain = assign_roles(domain, r, TypeChangeSpec.sigma_form(sigma))
        run.echo["roles"] = dict(sorted(r.items()))
    study = adjoint_energy_study(domain, float_list(knobs["h"], "energy.h"), sigma,
                             as_float(knobs["kappa1"], "energy.kappa1"), as_float(knobs["m"], "energy.m"),
                             as_float(knobs["t"], "energy.t"), bool(knobs["negative_control"]))
    run.results["energy"] = study.to_dict()
    finite = all(math.isfinite(c) for c in study.constants)
    run.check("constants_finite", finite, True, finite)
    run.check("max_over_min", study.ratio, knobs["max_ratio"], study.ratio <= knobs["max_ratio"])
    if knobs["negative_control"]:
        g = study.control_growth
        run.check("negative_control_growth", g, knobs["min_growth"], (not math.isnan(g)) and g >= knobs["min_growth"])
    return None


COMMANDS = {
    "verify-multiplier": cmd_verify_multiplier,
    "check-domain": cmd_check_domain,
    "check-friedrichs": cmd_check_friedrichs,
    "solve": cmd_solve,
    "convergence": cmd_convergence,
    "energy-constant": cmd_energy_constant,
}


# ---------------------------------------------------------------- driver

def _error_payload(exc: Exception) -> dict:
    out = {"type": type(exc).__name__, "message": str(exc)}
    for attr in ("name", "point", "offset", "iterations", "value"):
        v = getattr(exc, attr, None)
        if v is not None:
            out[attr] = list(v) if isinstance(v, tuple) else v
    return out


def versions() -> dict:
    return {"artifact": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run_command(command: str, cfg: dict, seed: int, out: Path) -> tuple[dict, int]:
    """Run one command and write its outputs; returns (report, exit status)."""
    out.mkdir(parents=True, exist_ok=True)
    run = Run(cfg, seed, out)
    t0 = time.perf_counter()
    error, status = None, 0
    try:
        special = COMMANDS[command](run)
    except CONFIG_ERRORS as exc:
        error, status, special = _error_payload(exc), 2, None
    except (ColdPlasmaError, ValueError) as exc:
        error, status, special = _error_payload(exc), 1, None
    elapsed = time.perf_counter() - t0
    passed = error is None and all(c["pass"] for c in run.checks.values())
    if status == 0 and not passed:
        status = 1
    verdict = special if (special and passed) else ("pass" if passed else "fail")
    report = {
        "command": command,
        "config": run.echo,
        "seed": seed,
        "results": run.results,
        "checks": run.checks,
        "verdict": verdict,
        "pass": passed,
        "flags": run.flags,
        "error": error,
        "outputs": sorted(run.files),
        "versions": versions(),
    }
    report = jsonable(report)
    dump_json(report, out / "report.json")
    dump_json({"command": command, "wall_clock_seconds": elapsed}, out / "timing.json")
    return report, status


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coldplasma", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, default=Path("out"))
        sp.add_argument("--seed", type=_seed, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report, status = run_command(args.command, cfg, args.seed, args.out)
    line = f"{args.command}: {report['verdict']}"
    if report["error"]:
        line += f" ({report['error']['type']}: {report['error']['message']})"
    failed = [k for k, c in report["checks"].items() if not c["pass"]]
    if failed:
        line += f"; failed checks: {', '.join(failed)}"
    print(line)
    print(json.dumps({"report": str(args.out / "report.json")}))
    return status


if __name__ == "__main__":
    sys.exit(main())
