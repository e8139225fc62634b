"""Command-line entry point.

Data go to stdout (or ``--output``), diagnostics to stderr.  Exit codes:
0 success, 1 bad input or configuration, 2 solver did not converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from pimle.kkt import SolverConfig, classify_identification
from pimle.missing_data import (
    CELLS,
    REFERENCE_SETTING,
    LogisticParams,
    Variant,
    build_model,
    fit,
    true_cell_probs,
)
from pimle.model import check_rank_conditions, validate_dims
from pimle.simulation import SimConfig, asymptotic_matrices, run_study, wald_ci
from pimle.tables import CountsFormatError, read_counts

SCHEMA_VERSION = 1
PRESETS = {"paper-sec4": REFERENCE_SETTING}

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2

log = logging.getLogger("pimle")

R_NAMES = [f"r{i}{j}{k}" for i in (0, 1) for (j, k) in CELLS]
S_NAMES = [f"s{j}{k}" for (j, k) in CELLS]
T_NAMES = [f"t{j}{k}" for (j, k) in CELLS]


class UsageError(Exception):
    pass


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _flatten(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list) and obj and isinstance(obj[0], (list, dict)):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}.{i}")
    elif isinstance(obj, list):
        yield prefix, "\t".join("" if v is None else repr(v) for v in obj)
    else:
        yield prefix, "" if obj is None else (repr(obj) if isinstance(obj, float) else str(obj))


def render(payload: dict, fmt: str) -> str:
    payload = _clean({"schema": SCHEMA_VERSION, **payload})
    if fmt == "json":
        return json.dumps(payload, indent=2) + "\n"
    return "".join(f"{k}\t{v}\n" for k, v in _flatten(payload))


def emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _params(args) -> LogisticParams:
    params = PRESETS[args.preset]
    if args.beta3 is not None:
        params = replace(params, beta3=args.beta3)
    return params


def _solver_config(args) -> SolverConfig:
    return SolverConfig(kkt_tol=args.tol, max_iter=args.max_iter)


def cmd_fit(args) -> int:
    if not args.input:
        raise UsageError("fit requires --input")
    counts = read_counts(args.input)
    res = fit(counts, args.variant, _solver_config(args))
    sol = res.solver
    w = sol.omega_hat.omega
    p = res.probs
    payload = {
        "command": "fit",
        "variant": Variant(args.variant).value,
        "n": res.n,
        "status": sol.status.value,
        "iterations": sol.iterations,
        "kkt_residual": sol.kkt_residual,
        "constraint_violation": sol.constraint_violation,
        "identification": sol.identification.value,
        "r": dict(zip(R_NAMES, p.r)),
        "s": dict(zip(S_NAMES, p.s)),
        "t": dict(zip(T_NAMES, p.t)),
        "lambda": sol.lambda_hat,
        "ci_level": args.ci_level,
    }
    for idx, name in enumerate(("beta1", "beta2")):
        entry = {"estimate": res.betas[idx]}
        if res.beta_se is not None:
            se = res.beta_se[idx]
            entry.update(se=se, ci=list(wald_ci(res.betas[idx], se, args.ci_level)))
        payload[name] = entry
    if sol.rank_report is not None:
        rr = sol.rank_report
        payload["rank"] = {"rank_J": rr.rank_J, "rank_K": rr.rank_K, "full_rank": rr.full_rank}
    if sol.local_max is not None:
        payload["local_max"] = {
            "all_positive": sol.local_max.all_positive,
            "signed_minors": sol.local_max.signed_minors,
            "permutation": sol.local_max.permutation_used,
        }
    log.debug("omega_hat = %s", w)
    emit(render(payload, args.format), args.output)
    if not sol.converged:
        print(f"pimle: solver stopped with status {sol.status.value}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        config = SimConfig(
            params=_params(args),
            n=args.n,
            reps=args.reps,
            seed=args.seed,
            ci_level=args.ci_level,
            variant=Variant(args.variant),
            solver=_solver_config(args),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    summary, reps = run_study(config, workers=args.workers, return_replicates=True)
    payload = {
        "command": "simulate",
        "preset": args.preset,
        "variant": config.variant.value,
        "n": config.n,
        "reps": config.reps,
        "seed": config.seed,
        "ci_level": config.ci_level,
        "true_beta1": config.params.beta1,
        "true_beta2": config.params.beta2,
        "summary": summary.to_dict(),
    }
    if args.verbose:
        payload["replicates"] = [vars(r) for r in reps]
    emit(render(payload, args.format), args.output)
    return EXIT_OK


def _display_rounding(M: np.ndarray) -> np.ndarray:
    out = np.round(M, 2)
    np.fill_diagonal(out, np.round(np.diag(M), 3))
    return out + 0.0


def cmd_asymptotics(args) -> int:
    params = _params(args)
    if Variant(args.variant) is Variant.FULL and params.beta3 != 0:
        raise UsageError(
            "the constrained covariance needs an additive true model: beta3 must be 0"
        )
    unc, con = asymptotic_matrices(params, args.variant)
    payload = {
        "command": "asymptotics",
        "preset": args.preset,
        "variant": Variant(args.variant).value,
        "cells": R_NAMES,
        "unconstrained": unc,
        "constrained": con,
        "unconstrained_rounded": _display_rounding(unc),
        "constrained_rounded": _display_rounding(con),
    }
    emit(render(payload, args.format), args.output)
    return EXIT_OK


def cmd_check_ident(args) -> int:
    spec = build_model(args.variant)
    validate_dims(spec.dims)
    if args.input:
        res = fit(read_counts(args.input), args.variant, _solver_config(args))
        w, where = res.solver.omega_hat.omega, "fitted"
    else:
        w, where = true_cell_probs(_params(args)).omega, "true"
    J, K = spec.jacobians(w)
    rr = check_rank_conditions(J, K)
    d = spec.dims
    payload = {
        "command": "check-ident",
        "variant": Variant(args.variant).value,
        "dims": {"s": d.s, "r": d.r, "t": d.t},
        "identification": classify_identification(d).value,
        "evaluated_at": where,
        "rank": {"rank_J": rr.rank_J, "rank_K": rr.rank_K, "full_rank": rr.full_rank},
    }
    emit(render(payload, args.format), args.output)
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "asymptotics": cmd_asymptotics,
    "check-ident": cmd_check_ident,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="counts table file")
    common.add_argument("--output", help="write results here instead of stdout")
    common.add_argument("--format", choices=("json", "tsv"), default="json")
    common.add_argument("--variant", choices=[v.value for v in Variant], default="full")
    common.add_argument("--preset", choices=sorted(PRESETS), default="paper-sec4")
    common.add_argument("--beta3", type=float, default=None, help="override the preset interaction")
    common.add_argument("--reps", type=int, default=2000)
    common.add_argument("--n", type=int, default=1000)
    common.add_argument("--seed", type=int, default=1)
    common.add_argument("--ci-level", type=float, default=0.95)
    common.add_argument("--tol", type=float, default=1e-10)
    common.add_argument("--max-iter", type=int, default=200)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="pimle", description="Constrained MLE for a partially identified missing-outcome table."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="fit a counts table")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo bias/coverage study")
    sub.add_parser("asymptotics", parents=[common], help="asymptotic covariance matrices")
    sub.add_parser("check-ident", parents=[common], help="identification diagnostics")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (CountsFormatError, UsageError, OSError, ValueError) as exc:
        print(f"pimle {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
