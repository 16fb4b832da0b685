"""Command-line front end: ``causalfair {generate,sweep,mitigate,ingest,selfcheck}``.

Exit codes: 0 success, 1 failed check or failed sweep cell, 2 usage or
configuration error. Every successful run writes a JSON manifest next to
its main output.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

from . import __version__
from . import selfcheck as _selfcheck
from .dgp import HiringParams, generate, write_cohort_csv
from .experiments import (EVALUATORS, SweepConfig, emit_plot_data, run_evaluation_sweep,
                          run_mitigation_benchmark, write_benchmark_csv)
from .mitigation import METHOD_NAMES
from .tabular import ColumnSpec, SchemaError, audit_to_json, load_csv, positivity_filter, write_csv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CLI_METHODS = ("all", "none", "rew", "prem", "roc", "causal-pre", "causal-post")


class UsageError(Exception):
    """Bad flag or configuration value (exit code 2)."""


def _write_manifest(path, command, config, seed, started, outputs, argv):
    doc = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - started, 3),
        "outputs": [os.path.abspath(p) for p in outputs],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _manifest_path(args, out):
    return args.manifest or f"{out}.manifest.json"


def _floats(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


def _hiring_params(args) -> HiringParams:
    if args.n < 1:
        raise UsageError(f"--n must be a positive integer, got {args.n}")
    if args.beta < 0:
        raise UsageError(f"--beta must be >= 0, got {args.beta}")
    if args.gamma < 0:
        raise UsageError(f"--gamma must be >= 0, got {args.gamma}")
    if not 0.0 < args.p_group1 < 1.0:
        raise UsageError(f"--p-group1 must lie in (0, 1), got {args.p_group1}")
    return HiringParams(alpha=args.alpha, beta=args.beta, gamma=args.gamma, p_group1=args.p_group1,
                        n=args.n, seed=args.seed, coupling=args.coupling)


def _add_dgp_flags(p, n_default=100_000):
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--gamma", type=float, default=0.2)
    p.add_argument("--n", type=int, default=n_default)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p-group1", type=float, default=0.75)
    p.add_argument("--coupling", choices=("shared", "independent"), default="shared")


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_generate(args, argv) -> int:
    started = time.perf_counter()
    params = _hiring_params(args)
    cohort = generate(params)
    write_cohort_csv(cohort, args.out)
    manifest = _write_manifest(_manifest_path(args, args.out), "generate", vars(params),
                               params.seed, started, [args.out], argv)
    print(f"wrote {cohort.n} rows to {args.out} (manifest {manifest})")
    return 0


def _load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc}") from None
    try:
        if str(path).endswith(".json"):
            doc = json.loads(raw.decode("utf-8"))
        else:
            doc = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"--config: malformed file {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"--config: {path} must hold a table/object of settings")
    return doc.get("sweep", doc)


def cmd_sweep(args, argv) -> int:
    started = time.perf_counter()
    doc = _load_config_file(args.config) if args.config else {}
    overrides = {
        "alphas": _floats(args.alphas, "--alphas") if args.alphas else None,
        "betas": _floats(args.betas, "--betas") if args.betas else None,
        "gammas": _floats(args.gammas, "--gammas") if args.gammas else None,
        "evaluators": args.evaluators.split(",") if args.evaluators else None,
        "n": args.n, "repeats": args.repeats, "master_seed": args.seed,
        "M": args.M, "workers": args.workers,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        config = SweepConfig.from_mapping(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid sweep config: {exc}") from None
    result = run_evaluation_sweep(config)
    emit_plot_data(result, args.out, args.format)
    outputs = [args.out]
    if result.failures:
        fail_path = f"{args.out}.failures.json"
        with open(fail_path, "w", encoding="utf-8") as fh:
            json.dump(list(result.failures), fh, indent=2)
        outputs.append(fail_path)
    _write_manifest(_manifest_path(args, args.out), "sweep", config.to_dict(), config.master_seed,
                    started, outputs, argv)
    print(f"wrote {len(result.rows)} rows to {args.out}")
    if result.failures:
        print(f"{len(result.failures)} run(s) failed; see {outputs[-1]}", file=sys.stderr)
        return 1
    return 0


def cmd_mitigate(args, argv) -> int:
    started = time.perf_counter()
    params = _hiring_params(args)
    if args.M < 1 or args.repeats < 1:
        raise UsageError("--M and --repeats must be positive")
    methods = METHOD_NAMES if args.method == "all" else (args.method,)
    table = run_mitigation_benchmark(params, methods, M=args.M, repeats=args.repeats,
                                     baseline_arm=args.baseline_arm)
    write_benchmark_csv(table, args.out)
    config = {**vars(params), "methods": list(methods), "M": args.M, "repeats": args.repeats,
              "baseline_arm": args.baseline_arm}
    _write_manifest(_manifest_path(args, args.out), "mitigate", config, params.seed, started,
                    [args.out], argv)
    for method in methods:
        name = method.replace("-", "_")
        row = table.get(name, "parity", "statistical")
        causal = table.get(name, "causal_parity", "causal")
        print(f"{name:12s} parity={row.value:+.3f} causal_parity={causal.value:+.3f} "
              f"accuracy={row.accuracy:.3f}")
    return 0


def _infer_schema(path, group_col, cat_cols) -> list[ColumnSpec]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise UsageError(f"--input: cannot read {path}: {exc}") from None
    if not header:
        raise SchemaError(f"{path}: empty file, header row is mandatory")
    for col in [group_col, *cat_cols]:
        if col not in header:
            raise SchemaError(f"{path}: column {col!r} not in header {header}")
    schema = []
    for j, name in enumerate(header):
        tokens = {r[j] for r in rows if j < len(r) and r[j] != ""}
        if name == group_col:
            levels = None
            if not tokens <= {"0", "1", "0.0", "1.0"}:
                if len(tokens) != 2:
                    raise SchemaError(f"{path}: group column {name!r} needs exactly two levels, "
                                      f"found {sorted(tokens)[:5]}")
                levels = tuple(sorted(tokens))
            schema.append(ColumnSpec(name, "binary", "group", levels))
        elif name in cat_cols:
            schema.append(ColumnSpec(name, "categorical", "pre_treatment"))
        else:
            try:
                for t in tokens:
                    float(t)
                kind = "numeric"
            except ValueError:
                kind = "categorical"
            schema.append(ColumnSpec(name, kind, "pre_treatment"))
    return schema


def cmd_ingest(args, argv) -> int:
    started = time.perf_counter()
    cat_cols = [c for c in (args.cat_cols or "").split(",") if c]
    schema = _infer_schema(args.input, args.group_col, cat_cols)
    table = load_csv(args.input, schema)
    filtered, removed, audit = positivity_filter(table, args.group_col, cat_cols)
    write_csv(filtered, args.out)
    with open(args.audit, "w", encoding="utf-8") as fh:
        fh.write(audit_to_json(audit))
        fh.write("\n")
    config = {"input": os.path.abspath(args.input), "group_col": args.group_col,
              "cat_cols": cat_cols, "schema": [vars(c) for c in schema]}
    _write_manifest(_manifest_path(args, args.out), "ingest", config, None, started,
                    [args.out, args.audit], argv)
    print(f"kept {filtered.n} of {table.n} rows; removed {removed} in {len(audit)} cell(s)")
    return 0


def cmd_selfcheck(args, argv) -> int:
    started = time.perf_counter()
    results = _selfcheck.run_selfcheck(seed=args.seed)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.n_cases} case(s), worst {r.worst:.3g}")
        if not r.passed:
            print(json.dumps(r.failure), file=sys.stderr)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump([r.to_dict() for r in results], fh, indent=2)
        _write_manifest(_manifest_path(args, args.report), "selfcheck", {}, args.seed, started,
                        [args.report], argv)
    return 0 if all(r.passed for r in results) else 1


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalfair",
                                     description="Causal fairness evaluation and mitigation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic hiring cohort")
    _add_dgp_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sweep", help="parity sweep over alpha, beta and gamma")
    p.add_argument("--config", help="TOML or JSON file with sweep settings")
    p.add_argument("--alphas")
    p.add_argument("--betas")
    p.add_argument("--gammas")
    p.add_argument("--evaluators", help=f"comma-separated subset of {','.join(EVALUATORS)}")
    p.add_argument("--n", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--M", type=int, help="imputation paths per arm")
    p.add_argument("--workers", type=int)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("mitigate", help="mitigation benchmark on the hiring cohort")
    p.add_argument("--method", choices=CLI_METHODS, default="all")
    p.add_argument("--baseline-arm", type=int, choices=(0, 1), default=0)
    _add_dgp_flags(p)
    p.add_argument("--M", type=int, default=10)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_mitigate)

    p = sub.add_parser("ingest", help="load a CSV and apply the positivity filter")
    p.add_argument("--input", required=True)
    p.add_argument("--group-col", required=True)
    p.add_argument("--cat-cols", default="")
    p.add_argument("--out", required=True)
    p.add_argument("--audit", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("selfcheck", help="identity, gradient and reweighing checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, argv)
    except (UsageError, SchemaError) as exc:
        print(f"causalfair {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"causalfair {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
