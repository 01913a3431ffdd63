"""Command-line front end.

Every command writes JSON (or CSV plus a JSON sidecar) that embeds a run
manifest: the command, all flags, resolved seeds, SHA-256 digests of the
input files, and the package version. Rerunning with the same manifest
reproduces the primary outputs byte for byte.

Exit codes: 0 success, 2 usage, 3 invalid input, 4 infeasible or over
budget, 5 internal invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import __version__, synth
from .bounds import (credible_interval, estimator_error, frontdoor_estimate, lp_exact_bound, natural_bounds,
                     required_draws)
from .data import load_csv
from .exceptions import CtfBoundsError, ValidationError
from .graph import load_diagram
from .polyprog import emit, local_solve, parse_program, reduce
from .query import parse_query
from .sampler import ChainConfig, PriorConfig, run_chain

EXIT_OK, EXIT_USAGE = 0, 2


@dataclass
class RunManifest:
    command: str
    flags: Dict
    seeds: Dict = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    version: str = __version__

    def to_dict(self):
        return asdict(self)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _manifest(args, inputs=(), seeds=None) -> RunManifest:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    digests = {name: sha256_file(getattr(args, name)) for name in inputs if getattr(args, name, None)}
    return RunManifest(args.command, flags, seeds or {}, digests)


def _write_json(obj, path: Optional[str]):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _parse_assignments(items: Optional[List[str]], kind=float) -> Optional[Dict]:
    """``["U1=10", "U2=1"]`` -> ``{"U1": 10.0, "U2": 1.0}``."""
    if not items:
        return None
    out = {}
    for item in items:
        name, sep, val = item.partition("=")
        if not sep:
            raise ValidationError(f"expected NAME=VALUE, got {item!r}")
        try:
            out[name.strip()] = kind(val)
        except ValueError:
            raise ValidationError(f"bad value in {item!r}") from None
    return out


def _prior_alpha(raw: Optional[List[str]]):
    if not raw:
        return None
    if len(raw) == 1 and "=" not in raw[0]:
        try:
            return float(raw[0])
        except ValueError:
            raise ValidationError(f"bad --prior-alpha {raw[0]!r}") from None
    return _parse_assignments(raw)


def _inputs(args):
    diagram = load_diagram(args.graph)
    exo = _parse_assignments(getattr(args, "exo_card", None), int)
    if exo:
        diagram = diagram.with_override(exo)
    dataset = load_csv(args.data, diagram) if getattr(args, "data", None) else None
    query = parse_query(args.query, diagram)
    return diagram, dataset, query


def histogram(draws, bins: int = 50) -> Dict:
    """Bin edges and counts over the draw range."""
    draws = np.asarray(draws, dtype=float)
    lo, hi = float(draws.min()), float(draws.max())
    if hi <= lo:
        hi = lo + 1e-12
    counts, edges = np.histogram(draws, bins=bins, range=(lo, hi))
    return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


# -- commands --------------------------------------------------------------------


def cmd_bound(args) -> int:
    diagram, dataset, query = _inputs(args)
    T = args.draws if args.draws is not None else required_draws(args.epsilon, args.delta)
    per_chain = -(-T // args.chains)
    exo_card = _parse_assignments(args.exo_card, int)
    if exo_card:
        diagram = diagram.with_override(exo_card)
    prior = PriorConfig.build(diagram, _prior_alpha(args.prior_alpha))
    config = ChainConfig(args.sampler, burn_in=args.burnin, n_draws=per_chain, thin=args.thin,
                         n_chains=args.chains, seed=args.seed)
    run = run_chain(diagram, dataset, query, prior, config)
    ci = credible_interval(run.draws, args.alpha, args.epsilon, args.delta)
    os.makedirs(args.out, exist_ok=True)
    draws_path = os.path.join(args.out, "draws.csv")
    hist_path = os.path.join(args.out, "histogram.json")
    report_path = os.path.join(args.out, "report.json")
    with open(draws_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{v!r}\n" for v in run.draws.tolist())
    manifest = _manifest(args, ("graph", "data"), {"chains": run.chain_seeds})
    _write_json({"manifest": manifest.to_dict(), **histogram(run.draws, args.bins)}, hist_path)
    report = {
        "manifest": manifest.to_dict(),
        "method": f"posterior-{args.sampler}",
        "query": str(query),
        "interval": [ci.lower, ci.upper],
        "alpha": ci.alpha, "epsilon": ci.epsilon, "delta": ci.delta, "T": ci.T,
        "error_bound": estimator_error(ci.T, args.delta),
        "required_draws": required_draws(args.epsilon, args.delta),
        "summary": run.summary(),
        "schedule": asdict(config),
        "prior": prior.to_dict(),
        "chain_seeds": run.chain_seeds,
        "diagnostics": run.diagnostics,
        "regimes": {";".join(f"{k}={v}" for k, v in t) or "obs": n for t, n in dataset.regime_sizes().items()},
        "draws_path": "draws.csv",
        "histogram_path": "histogram.json",
    }
    if not math.isfinite(report["diagnostics"].get("split_rhat", 0.0)):
        report["diagnostics"]["split_rhat"] = None
    _write_json(report, report_path)
    print(f"[{ci.lower:.4f}, {ci.upper:.4f}]  T={ci.T}  -> {report_path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    plan = synth.default_plan(args.scm, args.n)
    ds = synth.sample(args.scm, plan, args.seed)
    scm = synth.get(args.scm)
    manifest = _manifest(args, seeds={"sample": args.seed})
    sidecar = {"manifest": manifest.to_dict(), "diagram": scm.diagram.to_dict(),
               "default_query": scm.default_query,
               "plan": [[";".join(f"{k}={v}" for k, v in sorted(do.items())), n] for do, n in plan]}
    if args.out in (None, "-"):
        sys.stdout.write(ds.to_csv())
    else:
        ds.save_csv(args.out)
        _write_json(sidecar, args.out + ".manifest.json")
    if args.graph_out:
        with open(args.graph_out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(scm.diagram.dumps() + "\n")
    return EXIT_OK


def cmd_truth(args) -> int:
    scm = synth.get(args.scm)
    query = parse_query(args.query or scm.default_query, scm.diagram)
    gt = synth.ground_truth(args.scm, query, args.n, args.seed)
    _write_json({"manifest": _manifest(args, seeds={"truth": args.seed}).to_dict(), "query": gt.query,
                 "estimate": gt.estimate, "stderr": gt.stderr, "n": gt.n}, args.out)
    return EXIT_OK


def cmd_exact(args) -> int:
    diagram, dataset, query = _inputs(args)
    constraints = [dataset.empirical(t) for t in dataset.regimes]
    b = lp_exact_bound(diagram, query, constraints, slack=args.slack)
    _write_json({"manifest": _manifest(args, ("graph", "data")).to_dict(), "method": b.method, "query": str(query),
                 "interval": [b.lower, b.upper], "detail": b.detail}, args.out)
    return EXIT_OK


def cmd_natural(args) -> int:
    diagram, dataset, query = _inputs(args)
    b = natural_bounds(dataset.empirical(()), query, diagram)
    _write_json({"manifest": _manifest(args, ("graph", "data")).to_dict(), "method": b.method, "query": str(query),
                 "interval": [b.lower, b.upper], "detail": b.detail}, args.out)
    return EXIT_OK


def cmd_frontdoor(args) -> int:
    diagram = load_diagram(args.graph)
    dataset = load_csv(args.data, diagram)
    b = frontdoor_estimate(dataset, args.x, args.y)
    _write_json({"manifest": _manifest(args, ("graph", "data")).to_dict(), "method": b.method,
                 "estimate": b.lower}, args.out)
    return EXIT_OK


def cmd_emit_polyprog(args) -> int:
    diagram, dataset, query = _inputs(args)
    regimes = [dataset.empirical(t) for t in dataset.regimes] if dataset is not None else []
    program = reduce(diagram, query, regimes, _parse_assignments(args.exo_card, int))
    program.metadata["manifest"] = _manifest(args, ("graph", "data")).to_dict()
    if args.out in (None, "-"):
        sys.stdout.write(program.dumps() + "\n")
    else:
        emit(program, args.out)
    return EXIT_OK


def cmd_solve_polyprog(args) -> int:
    with open(args.program, encoding="utf-8") as fh:
        program = parse_program(fh.read())
    out = {"manifest": _manifest(args, ("program",), {"restarts": args.seed}).to_dict()}
    for direction in ("min", "max"):
        sol = local_solve(program, direction, restarts=args.restarts, seed=args.seed)
        out[direction] = {"objective": sol.objective, "max_violation": sol.max_violation}
    _write_json(out, args.out)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctfbounds", description="Bayesian bounds on counterfactual queries.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def io(sp, data=True, data_required=True):
        sp.add_argument("--graph", required=True, help="diagram JSON")
        if data:
            sp.add_argument("--data", required=data_required, help="dataset CSV")
        sp.add_argument("--query", required=True, help='e.g. "P[Y@{X=0}=1]"')

    b = sub.add_parser("bound", help="posterior credible interval")
    io(b)
    b.add_argument("--sampler", choices=("blocked", "collapsed"), default="blocked")
    b.add_argument("--alpha", type=float, default=0.0, help="credible level (0 = min/max)")
    b.add_argument("--epsilon", type=float, default=0.05)
    b.add_argument("--delta", type=float, default=0.05)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--burnin", type=int, default=500)
    b.add_argument("--draws", type=int, default=None, help="total draws (default: required_draws)")
    b.add_argument("--chains", type=int, default=1)
    b.add_argument("--thin", type=int, default=1)
    b.add_argument("--prior-alpha", nargs="+", default=None, help="a single value or U=alpha pairs")
    b.add_argument("--exo-card", nargs="+", default=None, help="U=d overrides")
    b.add_argument("--bins", type=int, default=50)
    b.add_argument("--out", default=".", help="output directory")
    b.set_defaults(func=cmd_bound)

    s = sub.add_parser("simulate", help="draw a dataset from a built-in SCM")
    s.add_argument("--scm", required=True, choices=synth.KINDS)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.add_argument("--graph-out", default=None, help="also write the diagram JSON")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("truth", help="Monte-Carlo ground truth")
    t.add_argument("--scm", required=True, choices=synth.KINDS)
    t.add_argument("--query", default=None)
    t.add_argument("--n", type=int, default=10**6)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default=None)
    t.set_defaults(func=cmd_truth)

    e = sub.add_parser("exact", help="LP bound over response-function types")
    io(e)
    e.add_argument("--slack", type=float, default=0.0)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_exact)

    n = sub.add_parser("natural", help="natural (assumption-free) bounds")
    io(n)
    n.add_argument("--out", default=None)
    n.set_defaults(func=cmd_natural)

    f = sub.add_parser("frontdoor", help="frontdoor adjustment point estimate of P(Y_x = y)")
    f.add_argument("--graph", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--x", type=int, default=0)
    f.add_argument("--y", type=int, default=1)
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_frontdoor)

    m = sub.add_parser("emit-polyprog", help="write the polynomial program")
    io(m, data_required=False)
    m.add_argument("--exo-card", nargs="+", default=None)
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_emit_polyprog)

    r = sub.add_parser("solve-polyprog", help="multi-start local search on a program file")
    r.add_argument("--program", required=True)
    r.add_argument("--restarts", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_solve_polyprog)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CtfBoundsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ValidationError.exit_code


if __name__ == "__main__":
    sys.exit(main())
