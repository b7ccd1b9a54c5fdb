"""Command-line surface.

Subcommands: synth (emit a dataset CSV), ingest (validate a CSV), sanitize
(run one mechanism and export the matrix plus ledger audit), query
(evaluate a workload against a sanitized matrix), bench (full sweep).

Options can come from a flat key-value config file (``--config``), keys
identical to the flag names; explicit flags override the file.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .bench import MECHANISMS, BenchConfig, run_benchmark, run_mechanism
from .matrix import (
    GridSpec,
    answer_range_query,
    mean_mre,
    read_dataset_csv,
    read_matrix_csv,
    write_dataset_csv,
    write_matrix_csv,
)
from .synth import PlacementSpec, synth_households
from .workload import CATEGORIES, generate_queries, read_workload_csv, write_workload_csv


def load_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment; keys match flags."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _apply_config_file(parser: argparse.ArgumentParser, args: argparse.Namespace):
    if not getattr(args, "config", None):
        return args
    file_values = load_config_file(args.config)
    known = {}
    for action in parser._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                known[opt[2:]] = action
    defaults = {}
    for key, raw in file_values.items():
        action = known.get(key)
        if action is None:
            raise ValueError(f"config file key {key!r} is not a flag of this subcommand")
        defaults[action.dest] = action.type(raw) if action.type else raw
    # flags given on the command line win over the file
    cli_given = {a.dest for a in parser._actions if getattr(args, a.dest, None) != a.default}
    for dest, value in defaults.items():
        if dest not in cli_given:
            setattr(args, dest, value)
    return args


def _comma_list(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _add_budget_flags(sub: argparse.ArgumentParser):
    sub.add_argument("--eps-total", type=float, default=30.0)
    sub.add_argument("--eps-pattern", type=float, default=10.0)
    sub.add_argument("--eps-sanitize", type=float, default=20.0)
    sub.add_argument("--k-quant", type=int, default=8)
    sub.add_argument("--k-coeff", type=int, default=10)
    sub.add_argument("--depth", type=int, default=None)
    sub.add_argument("--window", type=int, default=6)
    sub.add_argument("--t-train", type=int, default=100)
    sub.add_argument("--epochs", type=int, default=20)
    sub.add_argument("--clip", type=float, default=1.85)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privgrid",
                                     description="Differentially private electricity matrix publication")
    subs = parser.add_subparsers(dest="command", required=True)

    synth = subs.add_parser("synth", help="generate a synthetic household dataset CSV")
    synth.add_argument("--config", default=None)
    synth.add_argument("--n", type=int, default=2048, help="household count")
    synth.add_argument("--grid", type=int, default=32)
    synth.add_argument("--t", type=int, default=220, help="interval count")
    synth.add_argument("--distribution", choices=("uniform", "normal"), default="uniform")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)

    ingest = subs.add_parser("ingest", help="validate a dataset CSV")
    ingest.add_argument("--config", default=None)
    ingest.add_argument("--in", dest="infile", required=True)
    ingest.add_argument("--grid", type=int, default=32)
    ingest.add_argument("--t", type=int, default=220)
    ingest.add_argument("--out", default=None, help="write a validated canonical copy here")

    sanitize = subs.add_parser("sanitize", help="run one mechanism, export matrix + ledger audit")
    sanitize.add_argument("--config", default=None)
    sanitize.add_argument("--mechanism", choices=MECHANISMS, required=True)
    sanitize.add_argument("--in", dest="infile", required=True)
    sanitize.add_argument("--grid", type=int, default=32)
    sanitize.add_argument("--t", type=int, default=220)
    sanitize.add_argument("--seed", type=int, default=0)
    sanitize.add_argument("--out", required=True)
    sanitize.add_argument("--ledger-out", default=None)
    _add_budget_flags(sanitize)

    query = subs.add_parser("query", help="evaluate a workload against a sanitized matrix")
    query.add_argument("--config", default=None)
    query.add_argument("--matrix", required=True)
    query.add_argument("--workload", default=None, help="workload CSV (x0,x1,y0,y1,t0,t1)")
    query.add_argument("--category", choices=CATEGORIES, default=None)
    query.add_argument("--count", type=int, default=300)
    query.add_argument("--seed", type=int, default=0)
    query.add_argument("--truth", default=None, help="true matrix CSV for MRE")
    query.add_argument("--out", default=None, help="answers CSV")

    bench = subs.add_parser("bench", help="full benchmark sweep")
    bench.add_argument("--config", default=None)
    bench.add_argument("--mechanisms", type=_comma_list, default=("identity", "pattern"))
    bench.add_argument("--placements", type=_comma_list, default=("uniform",))
    bench.add_argument("--workloads", type=_comma_list, default=("random", "small", "large"))
    bench.add_argument("--n", type=int, default=2048)
    bench.add_argument("--grid", type=int, default=32)
    bench.add_argument("--t", type=int, default=220)
    bench.add_argument("--count", type=int, default=300)
    bench.add_argument("--reps", type=int, default=10)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--n-jobs", type=int, default=1)
    bench.add_argument("--out", required=True)
    _add_budget_flags(bench)
    return parser


def _cmd_synth(args) -> int:
    spec = PlacementSpec(args.distribution, args.n, args.grid, args.t, seed=args.seed)
    dataset = synth_households(spec)
    write_dataset_csv(dataset, args.out)
    print(f"wrote {len(dataset)} households x {args.t} intervals to {args.out}")
    return 0


def _cmd_ingest(args) -> int:
    grid = GridSpec(args.grid, args.grid, args.t)
    dataset = read_dataset_csv(args.infile, grid)
    readings = np.concatenate([rec.readings for rec in dataset.records])
    print(f"{args.infile}: {len(dataset)} households, {grid.c_t} intervals each")
    print(f"readings: mean={readings.mean():.4f} std={readings.std():.4f} max={readings.max():.4f}")
    if args.out:
        write_dataset_csv(dataset, args.out)
        print(f"canonical copy written to {args.out}")
    return 0


def _cmd_sanitize(args) -> int:
    grid = GridSpec(args.grid, args.grid, args.t)
    dataset = read_dataset_csv(args.infile, grid)
    config = BenchConfig(
        mechanisms=(args.mechanism,),
        grid_side=args.grid, t_total=args.t, t_train=args.t_train,
        eps_total=args.eps_total, eps_pattern=args.eps_pattern, eps_sanitize=args.eps_sanitize,
        clip=args.clip, k_coeff=args.k_coeff, k_quant=args.k_quant,
        depth=args.depth, window=args.window, epochs=args.epochs,
        master_seed=args.seed,
    )
    sanitized, ledger, result = run_mechanism(args.mechanism, dataset, config, args.seed)
    extra = {"mechanism": args.mechanism, "k": args.k_coeff}
    if result is not None:
        extra = {"mechanism": "pattern", "k_quant": args.k_quant,
                 "partition_count": len(result.partition_info),
                 "partitions": result.partition_info}
    write_matrix_csv(sanitized, args.out, consumed_budget=ledger.total(), extra_meta=extra)
    ledger_out = args.ledger_out or (args.out + ".ledger.csv")
    ledger.to_csv(ledger_out)
    print(f"{args.mechanism}: consumed eps={ledger.total():.6f}; matrix -> {args.out}, "
          f"audit -> {ledger_out}")
    return 0


def _cmd_query(args) -> int:
    matrix, _ = read_matrix_csv(args.matrix)
    if matrix.provenance != "sanitized":
        raise SystemExit(f"refusing to evaluate a {matrix.provenance!r} matrix; "
                         "queries run against sanitized outputs")
    if args.workload:
        queries = read_workload_csv(args.workload)
    elif args.category:
        queries = generate_queries(args.category, args.count, matrix.grid, args.seed).queries
    else:
        raise SystemExit("need --workload FILE or --category")
    answers = [answer_range_query(matrix, q) for q in queries]
    truths = None
    if args.truth:
        truth_matrix, _ = read_matrix_csv(args.truth)
        truths = [answer_range_query(truth_matrix, q) for q in queries]
        mean, excluded = mean_mre(truths, answers)
        print(f"mean MRE over {len(queries) - excluded} queries: {mean:.4f}% "
              f"({excluded} excluded: true answer too small)")
    if args.out:
        with open(args.out, "w") as fh:
            header = "x0,x1,y0,y1,t0,t1,answer" + (",true,mre_pct" if truths else "")
            fh.write(header + "\n")
            for i, q in enumerate(queries):
                row = [q.x_range[0], q.x_range[1], q.y_range[0], q.y_range[1],
                       q.t_range[0], q.t_range[1], repr(answers[i])]
                if truths:
                    rel = abs(truths[i] - answers[i]) / truths[i] * 100 if truths[i] > 1e-6 else ""
                    row += [repr(truths[i]), rel]
                fh.write(",".join(str(v) for v in row) + "\n")
        print(f"answers -> {args.out}")
    return 0


def _cmd_bench(args) -> int:
    config = BenchConfig(
        mechanisms=args.mechanisms, placements=args.placements, workloads=args.workloads,
        n_households=args.n, grid_side=args.grid, t_total=args.t, t_train=args.t_train,
        eps_total=args.eps_total, eps_pattern=args.eps_pattern, eps_sanitize=args.eps_sanitize,
        clip=args.clip, k_coeff=args.k_coeff, k_quant=args.k_quant,
        depth=args.depth, window=args.window, epochs=args.epochs,
        query_count=args.count, reps=args.reps, master_seed=args.seed, n_jobs=args.n_jobs,
    )
    report = run_benchmark(config)
    report.to_csv(args.out)
    print(f"report -> {args.out} (master_seed={report.master_seed}, "
          f"config_hash={report.config_hash})")
    for row in report.mean_rows():
        print(f"  {row.mechanism:9s} {row.placement:8s} {row.workload:7s} "
              f"mean MRE {row.mre_mean_pct:12.4f}%  excluded {row.excluded}")
    return 0


COMMANDS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "sanitize": _cmd_sanitize,
    "query": _cmd_query,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = next(p for p in parser._subparsers._group_actions[0].choices.items()
               if p[0] == args.command)[1]
    args = _apply_config_file(sub, args)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
