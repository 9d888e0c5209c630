"""Command-line front end: ``abreu-lab {solve,invariants,verify} --config run.toml``.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure
(non-convergence, loss of convexity, or an unstable verdict).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .estimates import HARNESS, Case, _jsonable, ledger_csv
from .funcspec import ExprSyntaxError, FuncDomainError, parse_expr
from .geometry import ConvexityError, SectionError, geodesic_distance_field, ricci_and_kappa
from .grid import GridError, ScalarField, format_float, sample, to_csv
from .operator import OperatorContext, OperatorError, equivalence_report, h_fields
from .polytope import PolytopeError, load_polytope
from .solver import SolveConfig, SolverError, jacobian_check, manufactured_problem, newton_solve

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
THREADS_ENV = "ABREU_LAB_THREADS"
HARNESS_ITEMS = tuple(HARNESS)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    polytope_path: str
    D: str = "1"
    A: str | None = None
    psi: str | None = None
    base: str | None = None
    hs: tuple = (1 / 32,)
    solver: dict = field(default_factory=dict)
    manufactured: str | None = None
    reference_psi: str | None = None
    kappa_full: bool = False
    edge: int = 0
    harness: tuple = HARNESS_ITEMS
    out_dir: str = "out"
    seed: int = 0

    def digest(self) -> str:
        data = asdict(self)
        data.pop("out_dir")  # where results go does not change them
        text = json.dumps(_jsonable(data), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def case(self) -> Case:
        return Case(load_polytope(self.polytope_path), self.D, self.psi, self.base)


def _get(table, key, kind, default):
    if key not in table:
        return default
    val = table[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, kind):
        raise ConfigError(f"'{key}' must be {kind.__name__}, got {type(val).__name__}")
    return val


def _expr_text(table, key):
    val = table.get(key)
    if val is None:
        return None
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        val = repr(float(val))
    if not isinstance(val, str):
        raise ConfigError(f"'{key}' must be an expression string")
    parse_expr(val)
    return val


def load_config(path, seed: int | None = None, out_dir: str | None = None) -> RunConfig:
    """Read and validate a TOML run configuration.

    Relative polytope paths are resolved against the config file's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    prob = data.get("problem", {})
    if "polytope" not in prob:
        raise ConfigError("[problem] needs 'polytope'")
    poly = Path(_get(prob, "polytope", str, ""))
    if not poly.is_absolute():
        poly = path.parent / poly
    if not poly.is_file():
        raise ConfigError(f"polytope file not found: {poly}")
    hs = prob.get("h", [1 / 32])
    if not isinstance(hs, list):
        hs = [hs]
    try:
        hs = tuple(float(h) for h in hs)
    except (TypeError, ValueError):
        raise ConfigError("'h' must be a number or a list of numbers") from None
    if not hs or any(h <= 0 for h in hs):
        raise ConfigError("'h' values must be positive")
    if any(b >= a for a, b in zip(hs[:-1], hs[1:])):
        raise ConfigError("'h' list must be strictly decreasing")
    solver = data.get("solver", {})
    allowed = {"tol", "max_iter", "max_halvings", "stall_iters", "continuation_steps", "anchor",
               "manufactured"}
    unknown = set(solver) - allowed
    if unknown:
        raise ConfigError(f"unknown [solver] keys: {sorted(unknown)}")
    solver_opts = {k: v for k, v in solver.items() if k != "manufactured"}
    if "anchor" in solver_opts:
        solver_opts["anchor"] = tuple(int(c) for c in solver_opts["anchor"])
    try:
        SolveConfig(**solver_opts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[solver]: {exc}") from exc
    inv = data.get("invariants", {})
    ver = data.get("verify", {})
    items = ver.get("items", list(HARNESS_ITEMS))
    if not isinstance(items, list) or not all(isinstance(i, str) for i in items):
        raise ConfigError("[verify] items must be a list of names")
    bad = [i for i in items if i not in HARNESS]
    if bad:
        raise ConfigError(f"unknown harness items {bad}; choose from {list(HARNESS_ITEMS)}")
    out = data.get("output", {})
    return RunConfig(
        polytope_path=str(poly),
        D=_expr_text(prob, "D") or "1",
        A=_expr_text(prob, "A"),
        psi=_expr_text(prob, "psi"),
        base=_expr_text(prob, "base"),
        hs=hs,
        solver=solver_opts,
        manufactured=_expr_text(solver, "manufactured"),
        reference_psi=_expr_text(inv, "reference_psi"),
        kappa_full=bool(_get(inv, "kappa_full", bool, False)),
        edge=int(_get(ver, "edge", int, _get(inv, "edge", int, 0))),
        harness=tuple(items),
        out_dir=out_dir if out_dir is not None else str(_get(out, "dir", str, "out")),
        seed=int(seed if seed is not None else _get(data.get("run", {}), "seed", int, 0)),
    )


def _header(cfg: RunConfig, h=None, band=None) -> str:
    parts = [f"config={cfg.digest()}"]
    if h is not None:
        parts.append(f"h={format_float(h)}")
    if band is not None:
        parts.append(f"band={band}")
    return " ".join(parts)


def _h_tag(h: float) -> str:
    return "h" + format_float(h)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- verbs

def cmd_solve(cfg: RunConfig) -> int:
    case = cfg.case()
    out = Path(cfg.out_dir)
    summary = {"config": cfg.digest(), "runs": []}
    all_ok = True
    scfg = SolveConfig(**cfg.solver)
    for h in cfg.hs:
        u = case.potential(h)
        ctx = OperatorContext(u, cfg.D)
        if cfg.manufactured is not None:
            A, _ = manufactured_problem(parse_expr(cfg.manufactured), ctx)
        else:
            if cfg.A is None:
                raise ConfigError("[problem] needs 'A' (or [solver] 'manufactured')")
            A = sample(parse_expr(cfg.A), u.grid)
        ctx = OperatorContext(u, cfg.D, A)
        res = newton_solve(ctx, scfg, u.psi)
        jac = jacobian_check(res.psi, ctx, n=5, seed=cfg.seed)
        all_ok &= res.converged
        _write(out / f"psi_{_h_tag(h)}.csv", to_csv(res.psi, _header(cfg, h, res.psi.band)))
        summary["runs"].append({
            "h": h,
            "converged": res.converged,
            "iterations": res.iterations,
            "residuals": res.residuals,
            "message": res.message,
            "form_discrepancies": res.discrepancies,
            "jacobian_check_max": float(jac.max()),
        })
    if len(cfg.hs) >= 1:
        rep = equivalence_report(case.polytope, cfg.D, cfg.hs, psi=cfg.psi,
                                 base=case.potential(cfg.hs[0]).base)
        _write(out / "equivalence.csv", rep.to_csv(_header(cfg, band=rep.rows[-1].band)))
    _write(out / "summary.json", _json(summary))
    return EXIT_OK if all_ok else EXIT_NUMERIC


def cmd_invariants(cfg: RunConfig) -> int:
    case = cfg.case()
    out = Path(cfg.out_dir)
    for h in cfg.hs:
        u = case.potential(h)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            inv = ricci_and_kappa(u, full=cfg.kappa_full)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        dist = geodesic_distance_field(u)
        fields = {"phi": inv.phi, "j": inv.j, "theta": inv.theta, "ric": inv.ric,
                  "kappa": inv.kappa, "du": dist, "theta_du2": inv.theta * dist * dist}
        if inv.grad_ric is not None:
            fields["grad_ric"] = inv.grad_ric
            fields["hess_ric"] = inv.hess_ric
        if cfg.reference_psi is not None:
            ref = u.with_psi(sample(parse_expr(cfg.reference_psi), u.grid))
            H, HH = h_fields(OperatorContext(u, cfg.D, reference=ref))
            fields["H"] = H
            fields["HD"] = HH
        tag = _h_tag(h)
        for name, f in fields.items():
            hdr = _header(cfg, h, f.band)
            if name == "kappa":
                hdr += " kappa=" + ("partial" if inv.kappa_partial else "full")
            _write(out / f"{name}_{tag}.csv", to_csv(f, hdr))
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    if not cfg.harness:
        raise ConfigError("empty harness selection: nothing to do")
    case = cfg.case()
    out = Path(cfg.out_dir)
    reports = []
    for item in cfg.harness:
        fn = HARNESS[item]
        rep = fn(case, cfg.hs, edge=cfg.edge) if item == "thm51" else fn(case, cfg.hs)
        reports.append(rep)
        _write(out / f"{item}.json", rep.to_json())
    band = max(r.band for rep in reports for r in rep.rows)
    _write(out / "ledger.csv", ledger_csv(reports, _header(cfg, min(cfg.hs), band)))
    for rep in reports:
        print(f"{rep.item}: {rep.verdict}")
    return EXIT_OK if all(r.verdict == "stable" for r in reports) else EXIT_NUMERIC


COMMANDS = {"solve": cmd_solve, "invariants": cmd_invariants, "verify": cmd_verify}

CONFIG_ERRORS = (ConfigError, PolytopeError, ExprSyntaxError, FuncDomainError, GridError,
                 OperatorError, OSError)
NUMERIC_ERRORS = (ConvexityError, SolverError, SectionError, ArithmeticError, np.linalg.LinAlgError)


def _limit_threads():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return None
    try:
        count = int(n)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, count))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="abreu-lab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--out", default=None, help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, default=None, help="seed for randomized checks")
    args = parser.parse_args(argv)
    try:
        limiter = _limit_threads()
        cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
        try:
            return COMMANDS[args.command](cfg)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except FuncDomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
