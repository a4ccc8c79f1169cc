"""Command line: `wtf verify | estimate | decompose | generate`.

Exit codes: 0 when every exact check passes, 1 when one fails, 2 for configuration errors.
Reports are JSON with a schema version; wall-clock data lives only under "metadata".
"""
from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import carleson, decomposition, experiments, instances, tiles
from .core import GridFunction, ValueSpace

SCHEMA_VERSION = 1


def _clean(value):
    """JSON-safe copy: NaN and infinities become strings, numpy scalars become Python numbers."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def dump_json(data) -> str:
    return json.dumps(_clean(data), indent=2, sort_keys=True) + "\n"


def _write(out: str | None, name: str, text: str) -> Path | None:
    if out is None:
        return None
    path = Path(out)
    if path.suffix:                     # an explicit file name
        path.parent.mkdir(parents=True, exist_ok=True)
        target = path if name.endswith(".json") else path.with_name(name)
    else:
        path.mkdir(parents=True, exist_ok=True)
        target = path / name
    target.write_text(text)
    return target


def _report(command: str, config: experiments.ExperimentConfig, results, started: float, extra_meta=None) -> dict:
    meta = {"timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "runtime_ms": round(1000 * (time.perf_counter() - started), 3),
            "threads": experiments.worker_count()}
    meta.update(extra_meta or {})
    return {"schema_version": SCHEMA_VERSION, "command": command, "config": config.to_json(),
            "results": results, "metadata": meta}


def constants_csv(rows: list[dict]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=experiments.CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buffer.getvalue()


def run_suite(config: experiments.ExperimentConfig, operators=experiments.OPERATORS) -> tuple[int, dict]:
    """Run a suite, write its reports and return (exit code, report)."""
    started = time.perf_counter()
    if config.suite == "constants":
        rows, summary, runtimes = experiments.constants_suite(config, operators)
        report = _report("estimate", config, {"summary": summary}, started, {"runtime_ms_by_case": runtimes})
        _write(config.out, "constants.csv", constants_csv(rows))
        _write(config.out, "report.json", dump_json(report))
        for key, value in summary.items():
            print(f"{key:24s} max {value['max']:.6g}  mean {value['mean']:.6g}")
        return 0, report
    suite = {"identities": experiments.identities_suite, "operators": experiments.operators_suite,
             "counting": experiments.counting_suite}[config.suite]
    checks = suite(config)
    report = _report("verify", config, {"checks": [c.to_json() for c in checks],
                                        "ok": all(c.ok for c in checks)}, started)
    _write(config.out, "report.json", dump_json(report))
    for c in checks:
        print(f"{'PASS' if c.ok else 'FAIL'} {c.name}: {c.passed}/{c.total} (worst {c.worst:.3g})")
    return (0 if all(c.ok for c in checks) else 1), report


def run_decompose(config: experiments.ExperimentConfig) -> tuple[int, dict]:
    decomposition.check_parameters(config.p, config.r, config.q)
    started = time.perf_counter()
    rng = np.random.default_rng(experiments.trial_seeds(config.seed, 1)[0])
    L = config.L[0]
    bitiles, f, g, B, E, F = experiments.decomposition_instance(rng, L, config.r, config.value_space())
    result = decomposition.full_decompose(bitiles, f, g, B, config.q, config.r, E, F)
    counting_ok = all(d.holds for d, _ in result.counting.values())
    checks = {"partition": result.is_partition_of(bitiles), "level_bounds": result.bounds_hold,
              "density_counting": counting_ok}
    report = _report("decompose", config, {"checks": checks, "decomposition": result.to_json()}, started)
    _write(config.out, "decomposition.json", dump_json(report))
    _write(config.out, "certificates_density.csv", result.certificate_csv("density"))
    _write(config.out, "certificates_size.csv", result.certificate_csv("size"))
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"levels {sorted(result.levels)}; residual {len(result.residual)} of {len(bitiles)} bitiles")
    return (0 if all(checks.values()) else 1), report


GENERATE_KINDS = ("function", "collection", "tree", "converse", "good", "sets", "breakpoints")


def generate_instance(kind: str, config: experiments.ExperimentConfig) -> dict:
    """A seeded random instance in the JSON formats of the library."""
    rng = np.random.default_rng(experiments.trial_seeds(config.seed, 1)[0])
    L, M, space = config.L[0], config.M, config.value_space()
    if kind == "function":
        data = instances.random_function(L, M, space, rng, "unit").to_json()
    elif kind == "collection":
        data = tiles.collection_to_json(instances.random_collection(L, M, rng, config.trials))
    elif kind == "tree":
        T = instances.random_tree(L, M, rng, "up")
        data = {"top": T.top.to_json(), "kind": T.kind, "bitiles": tiles.collection_to_json(T)}
    elif kind == "converse":
        C = instances.converse_instance(rng, L, config.trials)
        data = {"N": C.N, "splits": [G.to_json() for G in C.splits], "levels": C.levels.to_json()}
    elif kind == "good":
        data = instances.size_selected_collection(L, M, rng, space=space).to_json()
    elif kind == "sets":
        data = {"L": L, "M": M, "E": instances.random_set(L, M, rng).astype(int).tolist(),
                "F": instances.random_set(L, M, rng).astype(int).tolist()}
    elif kind == "breakpoints":
        data = carleson.random_breakpoints(1 << (L + M), config.r, rng, space=space.dual()).to_json()
    else:
        raise ValueError(f"unknown instance kind {kind!r}")
    return {"schema_version": SCHEMA_VERSION, "kind": kind, "seed": config.seed, "data": data}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wtf", description="Walsh time-frequency experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, suite_default, suites=None):
        if suites:
            p.add_argument("--suite", default=suite_default, choices=suites)
        p.add_argument("--L", type=int, nargs="+", default=[8], help="grid resolution(s)")
        p.add_argument("--M", type=int, default=0)
        p.add_argument("--space", default="lp:1:2", help="value space lp:d:p")
        p.add_argument("--p", type=float, default=3.0)
        p.add_argument("--r", type=float, default=3.0)
        p.add_argument("--q", type=float, default=2.0)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--trials", type=int, default=20)
        p.add_argument("--tol", type=float, default=1e-9)
        p.add_argument("--out", default=None, help="output directory (or file for generate)")

    common(sub.add_parser("verify", help="run an exact verification suite"), "identities", experiments.SUITES)
    est = sub.add_parser("estimate", help="estimate norm ratios and constants")
    common(est, "constants", experiments.SUITES)
    est.add_argument("--operators", default=",".join(experiments.OPERATORS))
    common(sub.add_parser("decompose", help="decompose a random instance into trees"), None)
    gen = sub.add_parser("generate", help="write a random instance")
    common(gen, None)
    gen.add_argument("--kind", required=True, choices=GENERATE_KINDS)
    return parser


def _config(args) -> experiments.ExperimentConfig:
    if any(L < 1 for L in args.L):
        raise ValueError("grid resolution L must be at least 1")
    if args.trials < 1:
        raise ValueError("trials must be positive")
    ValueSpace.parse(args.space)
    if args.r < 1:
        raise ValueError(f"variation exponent r must be at least 1, got {args.r}")
    return experiments.ExperimentConfig(getattr(args, "suite", None) or args.command, tuple(args.L), args.M,
                                        args.space, args.p, args.r, args.q, args.seed, args.trials, args.tol,
                                        args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config(args)
        if args.command in ("verify", "estimate"):
            operators = tuple(args.operators.split(",")) if args.command == "estimate" else experiments.OPERATORS
            unknown = set(operators) - set(experiments.OPERATORS)
            if unknown:
                raise ValueError(f"unknown operators {sorted(unknown)}")
            if config.suite == "constants" or config.suite == "counting":
                decomposition.check_parameters(config.p, config.r, config.q)
            code, _ = run_suite(config, operators)
            return code
        if args.command == "decompose":
            code, _ = run_decompose(config)
            return code
        text = dump_json(generate_instance(args.kind, config))
        if _write(config.out, f"{args.kind}.json", text) is None:
            sys.stdout.write(text)
        return 0
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
