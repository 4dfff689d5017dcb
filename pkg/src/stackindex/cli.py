"""Command-line interface.

Exit codes: 0 ok, 1 usage or input error, 2 corrupt or missing index,
3 key not found.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from stackindex.engine import flat_lookup, lookup, lookup_modeled_cost, range_scan
from stackindex.errors import CorruptIndex, KeyNotFound, StackIndexError
from stackindex.layout import (
    RECORD_DTYPE,
    RECORD_SIZE,
    ingest_keys,
    open_index,
    serialize,
    synthetic_keys,
    write_keys,
)
from stackindex.optimizer import (
    FitCache,
    LayerPlan,
    SearchSpace,
    evaluate_objective,
    search_optimal,
)
from stackindex.regressor import STEP, TYPE_BY_NAME, TYPE_NAMES, EntryTable
from stackindex.storage import (
    FileStore,
    SimulatedStore,
    StorageProfile,
    load_profile,
    transfer_cost,
)

EXIT_OK, EXIT_USAGE, EXIT_CORRUPT, EXIT_NOT_FOUND = 0, 1, 2, 3

SWEEP_HEADER = ["rtt_s", "bandwidth_bps", "optimal_height", "modeled_latency_s", "index_bytes"]

# Motivating example: decimal units, 1 KB = 1000 bytes.
SHORT_RTT = StorageProfile(0.005, 1e8)
LONG_RTT = StorageProfile(0.1, 1e8)
TALL_NODE, WIDE_NODE, DATA_PAGE = 4_000, 500_000, 4_000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _csv_ints(text: str) -> tuple:
    try:
        vals = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text}") from exc
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"key out of u64 range: {text}")
    return v


def _csv_floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text}") from exc


def _types(text: str) -> tuple:
    names = [x.strip().lower() for x in text.split(",") if x.strip()]
    bad = [n for n in names if n not in TYPE_BY_NAME]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"types must be among step,linear: {text}")
    return tuple(TYPE_BY_NAME[n] for n in names)


def _add_space_flags(p):
    p.add_argument("--types", type=_types, default=None, help="comma list of step,linear")
    p.add_argument("--max-layers", type=int, default=None)
    p.add_argument("--step-lambdas", type=_csv_ints, default=None, help="step fanouts")
    p.add_argument("--linear-lambdas", type=_csv_ints, default=None, help="linear error bounds, bytes")
    p.add_argument("--threads", type=int, default=1)


def _add_data_flags(p):
    p.add_argument("--data", required=True, help="raw little-endian u64 key file")
    p.add_argument("--values", default=None, help="parallel u64 values file")
    p.add_argument("--sosd", action="store_true", help="key file starts with a u64 count")


def _space(args) -> SearchSpace:
    kw = {}
    if args.types is not None:
        kw["regressor_types"] = args.types
    if args.max_layers is not None:
        kw["max_layers"] = args.max_layers
    if args.step_lambdas is not None:
        kw["step_lambdas"] = args.step_lambdas
    if args.linear_lambdas is not None:
        kw["linear_lambdas"] = args.linear_lambdas
    try:
        return SearchSpace(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_records(args):
    mode = "file" if args.values else "sequence"
    return ingest_keys(args.data, mode, args.values, header=args.sosd)


def _describe_layers(plan: LayerPlan) -> list:
    return [f"  layer {i + 1}: {TYPE_NAMES[t]} precision={lam}" for i, (t, lam) in enumerate(plan.configs)]


def cmd_build(args, out) -> int:
    space = _space(args)
    profile = load_profile(args.profile)
    records = _load_records(args)
    table = EntryTable(records["key"], RECORD_SIZE)
    t0 = time.perf_counter()
    plan = search_optimal(table, profile, space, threads=args.threads)
    nbytes = serialize(plan, records, args.out)
    wall = time.perf_counter() - t0
    print(f"structure: {plan.describe()}", file=out)
    for line in _describe_layers(plan):
        print(line, file=out)
    print(f"modeled_lookup_s: {plan.modeled_cost_s!r}", file=out)
    print(f"index_bytes: {plan.index_bytes}", file=out)
    print(f"file_bytes: {nbytes}", file=out)
    print(f"build_wall_s: {wall:.3f}", file=out)
    return EXIT_OK


def _open(path, profile=None):
    try:
        store = FileStore(path)
    except OSError as exc:
        raise CorruptIndex(f"cannot open index {path}: {exc}") from exc
    if profile is not None:
        store = SimulatedStore(store, profile)
    return open_index(store)


def cmd_query(args, out) -> int:
    profile = load_profile(args.profile) if args.profile else None
    handle = _open(args.index, profile)
    try:
        value, trace = lookup(handle, args.key)
    except KeyNotFound:
        print(f"key {args.key} not found", file=out)
        return EXIT_NOT_FOUND
    print(f"value: {value}", file=out)
    if args.trace:
        for r in trace.reads:
            print(
                f"read layer={r.layer_index} offset={r.offset} length={r.length} "
                f"modeled_s={r.modeled_cost_s!r}",
                file=out,
            )
        print(f"total_modeled_s: {trace.total_modeled_s!r}", file=out)
    return EXIT_OK


def sweep_rows(records, bandwidth: float, rtts, space: SearchSpace, threads: int = 1) -> list:
    table = EntryTable(records["key"], RECORD_SIZE)
    cache = FitCache(table)
    rows = []
    for rtt in sorted(rtts):
        profile = StorageProfile(rtt, bandwidth)
        plan = search_optimal(table, profile, space, threads=threads, cache=cache)
        rows.append(
            {
                "rtt_s": rtt,
                "bandwidth_bps": bandwidth,
                "optimal_height": plan.L,
                "modeled_latency_s": plan.modeled_cost_s,
                "index_bytes": plan.index_bytes,
            }
        )
    return rows


def cmd_sweep(args, out) -> int:
    if not args.rtts:
        raise UsageError("--rtts needs at least one value")
    space = _space(args)
    try:
        StorageProfile(min(args.rtts), args.bandwidth)
    except StackIndexError as exc:
        raise UsageError(str(exc)) from exc
    records = _load_records(args)
    rows = sweep_rows(records, args.bandwidth, args.rtts, space, args.threads)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for row in rows:
        w.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in SWEEP_HEADER])
    Path(args.out).write_text(buf.getvalue())
    for row in rows:
        print(
            f"rtt={row['rtt_s']:.3g}s height={row['optimal_height']} "
            f"modeled={row['modeled_latency_s']:.6g}s index_bytes={row['index_bytes']}",
            file=out,
        )
    return EXIT_OK


def motivating_costs() -> dict:
    """Analytic lookup costs of the fixed-fanout Tall and Wide trees."""

    def plan(node_bytes, inner_nodes):
        # inner_nodes node fetches (the first is the root) then one data page
        bounds = [node_bytes] * (inner_nodes - 1) + [DATA_PAGE]
        return LayerPlan(
            layers=[], configs=[(STEP, 0)] * len(bounds), modeled_cost_s=0.0,
            root_bytes=node_bytes, fetch_bounds=bounds,
        )

    tall, wide = plan(TALL_NODE, 3), plan(WIDE_NODE, 2)
    return {
        ("tall", "short"): evaluate_objective(tall, SHORT_RTT),
        ("wide", "short"): evaluate_objective(wide, SHORT_RTT),
        ("tall", "long"): evaluate_objective(tall, LONG_RTT),
        ("wide", "long"): evaluate_objective(wide, LONG_RTT),
    }


def cmd_simulate_motivating(args, out) -> int:
    c = motivating_costs()
    print(f"single page on ShortRTT: {transfer_cost(SHORT_RTT, DATA_PAGE) * 1e3:.2f} ms", file=out)
    for (shape, env), cost in c.items():
        print(f"{shape.capitalize()}/{env.capitalize()}RTT: {cost * 1e3:.2f} ms", file=out)
    wide_slower = c[("wide", "short")] / c[("tall", "short")] - 1
    tall_slower = c[("tall", "long")] / c[("wide", "long")] - 1
    print(f"ShortRTT: Wide is {wide_slower * 100:.0f}% slower than Tall ({wide_slower:.4f})", file=out)
    print(f"LongRTT: Tall is {tall_slower * 100:.0f}% slower than Wide ({tall_slower:.4f})", file=out)
    return EXIT_OK


def _percentile(sorted_vals, q):
    # nearest-rank
    k = max(0, math.ceil(q * len(sorted_vals)) - 1)
    return sorted_vals[k]


def _summary(costs, reads) -> dict:
    s = sorted(costs)
    return {
        "mean_s": statistics.fmean(s),
        "p50_s": _percentile(s, 0.50),
        "p99_s": _percentile(s, 0.99),
        "max_s": s[-1],
        "total_reads": reads,
    }


def run_bench(index_path, profile: StorageProfile, queries: int, seed: int, baseline: bool = False) -> dict:
    raw = FileStore(index_path)
    try:
        handle = open_index(raw)
        if handle.record_count == 0:
            raise StackIndexError("index holds no records")
        rng = np.random.default_rng(seed)
        picks = rng.integers(0, handle.record_count, size=queries)
        keys = []
        for i in picks:
            rec = np.frombuffer(raw.read(handle.data_offset + int(i) * RECORD_SIZE, RECORD_SIZE), RECORD_DTYPE)
            keys.append(int(rec["key"][0]))
        sim = SimulatedStore(raw, profile)
        handle = open_index(sim)
        sim.reset()
        costs = [lookup(handle, k)[1].total_modeled_s for k in keys]
        report = {
            "queries": queries,
            "seed": seed,
            "height": handle.L,
            "modeled_bound_s": lookup_modeled_cost(handle, profile),
            "index": _summary(costs, len(sim.read_log)),
        }
        if baseline:
            sim.reset()
            flat = [flat_lookup(handle, k)[1].total_modeled_s for k in keys]
            report["flat"] = _summary(flat, len(sim.read_log))
            report["speedup"] = report["flat"]["mean_s"] / report["index"]["mean_s"]
        return report
    finally:
        raw.close()


def cmd_bench(args, out) -> int:
    if args.queries < 1:
        raise UsageError("--queries must be >= 1")
    profile = load_profile(args.profile)
    try:
        report = run_bench(args.index, profile, args.queries, args.seed, args.baseline == "flat")
    except OSError as exc:
        raise CorruptIndex(f"cannot open index {args.index}: {exc}") from exc
    print(f"queries: {report['queries']} seed: {report['seed']} height: {report['height']}", file=out)
    print(f"modeled_bound_s: {report['modeled_bound_s']!r}", file=out)
    for name in ("index", "flat"):
        if name in report:
            r = report[name]
            print(
                f"{name}: mean_s={r['mean_s']!r} p50_s={r['p50_s']!r} p99_s={r['p99_s']!r} "
                f"total_reads={r['total_reads']}",
                file=out,
            )
    if "speedup" in report:
        print(f"speedup_vs_flat: {report['speedup']:.3f}", file=out)
    return EXIT_OK


def measure_profile(store, trials: int = 5, small: int = 4_000, large: int = 4_000_000) -> StorageProfile:
    """Fit latency and bandwidth from median timings of two read sizes."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    large = min(large, store.total_len)
    small = min(small, large // 2)
    if small < 1:
        raise ValueError("target too small to profile")

    def timed(n):
        samples = []
        for _ in range(trials):
            t0 = time.perf_counter()
            store.read(0, n)
            samples.append(time.perf_counter() - t0)
        return statistics.median(samples)

    t_small, t_large = timed(small), timed(large)
    if t_large > t_small:
        bandwidth = (large - small) / (t_large - t_small)
    else:
        bandwidth = large / max(t_large, 1e-9)
    latency = max(0.0, t_small - small / bandwidth)
    return StorageProfile(latency, bandwidth)


def cmd_profile(args, out) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    try:
        store = FileStore(args.target)
    except OSError as exc:
        raise UsageError(f"cannot read target {args.target}: {exc}") from exc
    try:
        profile = measure_profile(store, args.trials)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    finally:
        store.close()
    print("warning: measured timings depend on caches and machine load", file=sys.stderr)
    text = profile.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text, file=out)
    return EXIT_OK


def cmd_synth(args, out) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    write_keys(args.out, synthetic_keys(args.n, args.seed))
    print(f"wrote {args.n} keys to {args.out}", file=out)
    return EXIT_OK


def cmd_scan(args, out) -> int:
    profile = load_profile(args.profile) if args.profile else None
    handle = _open(args.index, profile)
    for rec in range_scan(handle, args.begin, args.end):
        print(f"{rec.key} {rec.value}", file=out)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stackindex", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", help="search the optimal structure and write an index file")
    _add_data_flags(p)
    p.add_argument("--profile", required=True)
    p.add_argument("--out", required=True)
    _add_space_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="point lookup")
    p.add_argument("--index", required=True)
    p.add_argument("--key", type=_u64, required=True)
    p.add_argument("--profile")
    p.add_argument("--trace", action="store_true")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("scan", help="range scan, inclusive bounds")
    p.add_argument("--index", required=True)
    p.add_argument("--begin", type=_u64, required=True)
    p.add_argument("--end", type=_u64, required=True)
    p.add_argument("--profile")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("sweep", help="optimal height across RTTs at fixed bandwidth")
    _add_data_flags(p)
    p.add_argument("--bandwidth", type=float, required=True)
    p.add_argument("--rtts", type=_csv_floats, required=True, help="comma list of seconds")
    p.add_argument("--out", required=True, help="CSV path")
    _add_space_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate-motivating", help="Tall vs Wide B-tree analytic costs")
    p.set_defaults(func=cmd_simulate_motivating)

    p = sub.add_parser("bench", help="modeled lookup times on a simulated device")
    p.add_argument("--index", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--queries", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--baseline", choices=["flat"], default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("profile", help="estimate latency and bandwidth of a file's device")
    p.add_argument("--target", required=True)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("synth", help="write uniform random distinct u64 keys")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    try:
        args = make_parser().parse_args(argv)
        return args.func(args, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CorruptIndex as exc:
        print(f"error: corrupt index: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except KeyNotFound as exc:
        print(f"error: key not found: {exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except (StackIndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
