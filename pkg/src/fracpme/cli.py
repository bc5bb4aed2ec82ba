"""fracpme command line.

    fracpme solve|audit|sweep|eigen|kernel|tables --config PATH [--out DIR]
            [--jobs N] [--filter CLAIM,...] [--strict]

Exit codes: 0 success, 1 configuration error, 2 solver failure, 3 audit failure.
Errors are printed as text and as one JSON object on stderr.  FRACPME_OUT
overrides the output root.
"""

from __future__ import annotations

import argparse
import copy
import itertools
import json
import logging
import os
import re
import sys
import warnings
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgWarning

from . import harness
from .estimates import _jsonable
from .fitting import boundary_fit
from .harness import ConfigError, ExperimentConfig
from .operator import OperatorError, assemble
from .solver import NewtonFailure, run_mild

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_AUDIT = 0, 1, 2, 3
OUT_ENV = "FRACPME_OUT"

log = logging.getLogger("fracpme")


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code, self.kind, self.extra = code, kind, extra


def _line_of(text: str, key: str) -> int | None:
    """First line (1-based) holding a JSON key, else a string value, for anchored diagnostics."""
    lines = text.splitlines()
    for pat in (r'"' + re.escape(key) + r'"\s*:', r'"' + re.escape(key) + r'"'):
        rx = re.compile(pat)
        for i, line in enumerate(lines, 1):
            if rx.search(line):
                return i
    return None


def _anchor(text: str, message: str) -> int | None:
    # error messages name the offending key or value; find it in the source
    for token in re.findall(r"'([^']+)'", message):
        line = _line_of(text, token)
        if line is not None:
            return line
    for token in re.findall(r"[a-z_]+", message):
        line = _line_of(text, token)
        if line is not None:
            return line
    return None


def load_config(path: str, strict: bool) -> tuple[dict, str]:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_CONFIG, "config", f"config file not found: {path}", path=path)
    text = p.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, "config", f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}",
                       path=path, line=exc.lineno) from exc
    if not isinstance(raw, dict):
        raise CliError(EXIT_CONFIG, "config", f"{path}:1: config must be a JSON object", path=path, line=1)
    if not strict:
        extra = set(raw) - harness._TOP_KEYS - {"sweep"}
        for key in sorted(extra):
            log.warning("%s:%s: ignoring unknown key %r (use --strict to reject)", path, _line_of(text, key), key)
            raw.pop(key)
    return raw, text


def parse_config(raw: dict, text: str, path: str) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_dict(raw)
    except (ConfigError, OperatorError, ValueError, KeyError, TypeError) as exc:
        msg = str(exc)
        line = _anchor(text, msg)
        where = f"{path}:{line}" if line else path
        raise CliError(EXIT_CONFIG, "config", f"{where}: {msg}", path=path, line=line) from exc


def output_dir(args, cfg: ExperimentConfig, sub: str | None = None) -> Path:
    if args.out:
        base = Path(args.out)
    elif os.environ.get(OUT_ENV):
        base = Path(os.environ[OUT_ENV]) / cfg.name
    elif cfg.output:
        base = Path(cfg.output)
    else:
        base = Path("runs") / cfg.name
    return base / sub if sub else base


def _claims(args) -> list[str] | None:
    if not args.filter:
        return None
    names = [c.strip() for c in args.filter.split(",") if c.strip()]
    unknown = [c for c in names if c not in harness.AUDITS]
    if unknown:
        raise CliError(EXIT_CONFIG, "config", f"unknown audit(s) {unknown}; available: {sorted(harness.AUDITS)}")
    return names


def _solve_only(cfg: ExperimentConfig, out: Path):
    op = assemble(cfg.operator)
    u0 = harness.make_datum(op, cfg.datum)
    traj = run_mild(op, cfg.nonlinearity, u0, cfg.time, cfg.snapshot_times, datum=cfg.datum)
    bare = copy.copy(cfg)
    bare.audits = []
    return harness.run_experiment(bare, out, trajectory=traj)


def cmd_solve(args) -> int:
    raw, text = load_config(args.config, args.strict)
    cfg = parse_config(raw, text, args.config)
    out = output_dir(args, cfg)
    _solve_only(cfg, out)
    print(f"trajectory written to {out / 'trajectory.csv'}")
    return EXIT_OK


def _report_result(res: harness.ExperimentResult) -> int:
    for rep, status in zip(res.reports, res.statuses):
        print(f"{status:4s}  {rep.claim:24s} verdict={'pass' if rep.verdict else 'fail'}")
    for err in res.failures:
        print(f"ERR   {err}")
    if res.failures:
        _emit_json({"error": "audit", "message": "audit raised", "details": res.failures})
    return EXIT_OK if res.ok else EXIT_AUDIT


def cmd_audit(args) -> int:
    raw, text = load_config(args.config, args.strict)
    cfg = parse_config(raw, text, args.config)
    claims = _claims(args)
    traj = None
    if args.trajectory:
        tpath = Path(args.trajectory)
        if not tpath.exists():
            raise CliError(EXIT_CONFIG, "config", f"trajectory file not found: {tpath}", path=str(tpath))
        traj = harness.read_trajectory_csv(tpath)
        if traj.states.shape[1] != cfg.operator.grid.n:
            raise CliError(EXIT_CONFIG, "config",
                           f"trajectory has {traj.states.shape[1]} points, config grid has {cfg.operator.grid.n}")
    res = harness.run_experiment(cfg, output_dir(args, cfg), jobs=args.jobs, claims=claims, trajectory=traj)
    return _report_result(res)


def _set_path(d: dict, dotted: str, value):
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        if isinstance(cur, list):
            k = int(k)
        cur = cur[k]
    last = keys[-1]
    if isinstance(cur, list):
        last = int(last)
    cur[last] = value


def cmd_sweep(args) -> int:
    """Cartesian sweep over dotted config paths listed under a top-level "sweep" key."""
    raw, text = load_config(args.config, args.strict)
    sweep = raw.pop("sweep", None)
    if not isinstance(sweep, dict) or not sweep:
        raise CliError(EXIT_CONFIG, "config", f"{args.config}: sweep needs a non-empty \"sweep\" object",
                       path=args.config, line=_line_of(text, "sweep"))
    base = parse_config(copy.deepcopy(raw), text, args.config)
    root = output_dir(args, base)
    paths = sorted(sweep)
    worst = EXIT_OK
    index = []
    for i, combo in enumerate(itertools.product(*(sweep[p] for p in paths))):
        variant = copy.deepcopy(raw)
        try:
            for p, v in zip(paths, combo):
                _set_path(variant, p, v)
        except (KeyError, IndexError, ValueError, TypeError) as exc:
            raise CliError(EXIT_CONFIG, "config", f"{args.config}: bad sweep path: {exc}",
                           path=args.config, line=_line_of(text, "sweep")) from exc
        variant["name"] = f"{base.name}_{i:03d}"
        cfg = parse_config(variant, text, args.config)
        res = harness.run_experiment(cfg, root / variant["name"], jobs=args.jobs, claims=_claims(args))
        print(f"[{variant['name']}] " + ", ".join(f"{p}={v}" for p, v in zip(paths, combo)))
        worst = max(worst, _report_result(res))
        index.append({"run": variant["name"], "values": dict(zip(paths, combo)), "ok": res.ok})
    root.mkdir(parents=True, exist_ok=True)
    (root / "sweep.json").write_text(json.dumps(_jsonable(index), sort_keys=True, indent=2) + "\n")
    return worst


def cmd_eigen(args) -> int:
    raw, text = load_config(args.config, args.strict)
    cfg = parse_config(raw, text, args.config)
    op = assemble(cfg.operator)
    g = op.grid
    try:
        fit = boundary_fit(op.phi1, g.x, g.a, g.b, g.h)
        fit_info, fit_text = fit.as_dict(), f"{fit.slope:.4f} +- {fit.stderr:.4f}"
    except ValueError as exc:  # grid too coarse for the default window
        fit_info, fit_text = {"error": str(exc)}, f"unavailable ({exc})"
    info = {"lambda1": op.lambda1, "residual": op.eig_residual, "iterations": op.eig_iterations,
            "phi1_boundary_exponent": fit_info, "gamma": op.gamma, "operator": cfg.operator.to_config()}
    out = output_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eigen.json").write_text(json.dumps(_jsonable(info), sort_keys=True, indent=2) + "\n")
    np.savetxt(out / "phi1.csv", np.column_stack([g.x, op.phi1]), delimiter=",", header="x,phi1",
               comments="", fmt="%.17g")
    print(f"lambda1 = {op.lambda1:.10g}  phi1 boundary exponent = {fit_text}")
    return EXIT_OK


def cmd_kernel(args) -> int:
    raw, text = load_config(args.config, args.strict)
    cfg = parse_config(raw, text, args.config)
    op = assemble(cfg.operator)
    kb = op.verify_kernel_bounds()
    info = {"green_bounds": kb.as_dict()}
    if cfg.operator.kind != "classical":
        kf = op.kernel_form()
        info["kernel_form"] = {"min_offdiag": kf.min_offdiag, "c0_l1": kf.c0_l1, "c0_l2": kf.c0_l2,
                               "b_exponent": kf.b_exponent, "verdicts": kf.verdicts}
    out = output_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "kernel.json").write_text(json.dumps(_jsonable(info), sort_keys=True, indent=2) + "\n")
    ok = all(kb.verdicts.values())
    print(f"green kernel bounds: {'pass' if ok else 'fail'}  c0={kb.fitted_c0:.4g} c1={kb.fitted_c1:.4g}")
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_tables(args) -> int:
    n = 128
    bundles = None
    if args.config:
        raw, _ = load_config(args.config, args.strict)
        extra = set(raw) - {"n", "bundles"}
        if extra and args.strict:
            raise CliError(EXIT_CONFIG, "config", f"unknown tables keys: {sorted(extra)}")
        n = int(raw.get("n", n))
        bundles = raw.get("bundles")
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUT_ENV, "runs")) / "tables"
    written = harness.run_tables(out, n=n, jobs=args.jobs, bundles=bundles)
    for kind, path in written.items():
        print(f"{kind}: {path}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "audit": cmd_audit, "sweep": cmd_sweep,
            "eigen": cmd_eigen, "kernel": cmd_kernel, "tables": cmd_tables}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracpme", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "tables")
        sp.add_argument("--out", help="output directory (overrides the config and $%s)" % OUT_ENV)
        sp.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--filter", help="comma-separated audit names to run")
        sp.add_argument("--strict", action="store_true", help="reject unknown config keys")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        if name == "audit":
            sp.add_argument("--trajectory", help="audit a stored trajectory.csv instead of solving")
    return ap


def _emit_json(obj: dict) -> None:
    print(json.dumps(_jsonable(obj), sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        # overflow and conditioning chatter from rejected Newton trials; failures still surface
        warnings.simplefilter("ignore", RuntimeWarning)
        warnings.simplefilter("ignore", LinAlgWarning)
    if args.jobs is not None and args.jobs < 1:
        args.jobs = 1
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _emit_json({"error": exc.kind, "message": str(exc), **exc.extra})
        return exc.code
    except NewtonFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        _emit_json({"error": "solver", "message": str(exc), "diagnostics": exc.diagnostics})
        return EXIT_SOLVER
    except (ConfigError, OperatorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        _emit_json({"error": "config", "message": str(exc)})
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
