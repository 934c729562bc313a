"""Command line entry point: ``rcclab sim|model|sweep|fit|table1|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

from .analytic import SeriesMode, throughput_no_rto, throughput_rto
from .engine import Params
from .experiments import (
    SweepConfig,
    default_p_values,
    fit_constant,
    read_csv,
    report,
    run_sweep,
    table1,
    table1_to_json,
    write_csv,
    write_report,
)
from .lossmodel import ChannelSpec
from .netsim import LinkConfig, run_sim, write_trace


def cmd_sim(args) -> int:
    spec = ChannelSpec.parse(args.loss)
    params = Params(p=spec.p, b=args.b, rtt=args.rtt, mss=args.mss, seed=args.seed, variant=args.variant)
    trace = [] if args.trace else None
    res = run_sim(params, LinkConfig.for_rtt(args.rtt, args.capacity), spec,
                  duration=args.duration, rounds=args.rounds, trace=trace, backend=args.backend)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            write_trace(trace, fh)
    doc = asdict(res)
    if args.no_series:
        del doc["cwnd_series"]
    doc["c"] = res.throughput * args.rtt * spec.p / args.mss
    print(json.dumps(doc, sort_keys=True))
    return 0


def cmd_model(args) -> int:
    if args.which == "no-rto":
        pred = throughput_no_rto(args.p, args.b, args.rtt, args.mss, v_x=args.v_x)
        doc = asdict(pred)
        doc["which"] = "no-rto"
    else:
        pred = throughput_rto(args.p, args.rtt, args.mss, mode=args.mode, tol=args.tol)
        doc = asdict(pred)
        doc["c_exact"] = pred.c_exact
        doc["which"] = "rto"
    print(json.dumps(doc, sort_keys=True, default=str))
    return 0


def _config_from_args(args) -> SweepConfig:
    if args.config:
        cfg = SweepConfig.from_json(args.config)
        if args.workers is not None:
            cfg.workers = args.workers
        return cfg
    if args.p:
        ps = args.p
    else:
        ps = default_p_values(args.points, args.p_min, args.p_max)
    return SweepConfig(
        p_values=ps, rtt=args.rtt, mss=args.mss, b=args.b, variant=args.variant,
        loss_model=args.loss_model, burst=args.burst, seeds=args.seeds, seed_base=args.seed_base,
        rounds=args.rounds, capacity=args.capacity, model_mode=args.model_mode,
        workers=args.workers or 1,
    )


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    rows = run_sweep(cfg)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        write_csv(rows, fh)
    failed = sum(1 for r in rows if r.error)
    print(f"wrote {len(rows)} rows to {args.out} ({failed} failed)", file=sys.stderr)
    return 0


def cmd_fit(args) -> int:
    fit = fit_constant(read_csv(args.csv), c_p_max=args.c_p_max)
    print(json.dumps(fit.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_table1(args) -> int:
    cfg = _config_from_args(args)
    table = table1(cfg)
    text = table1_to_json(table, cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.write("\n")
    for name, entry in table.items():
        print(f"{name:8s} C={entry.fit.c_hat:.3f} slope={entry.fit.slope_hat:.3f} rto={entry.rto_total}")
    return 0


def cmd_report(args) -> int:
    rows = read_csv(args.csv)
    column = {"exact": "throughput_model_exact_Bps", "asym": "throughput_model_asym_Bps"}[args.model]
    rep = report([asdict(r) for r in rows], column=column, p_max=args.p_max, threshold=args.threshold)
    prefix = args.out_prefix or args.csv.rsplit(".", 1)[0] + "_report"
    with open(prefix + ".csv", "w", newline="", encoding="utf-8") as cf, \
            open(prefix + ".json", "w", encoding="utf-8") as jf:
        write_report(rep, cf, jf)
    print(f"mean |rel err| = {rep.mean_abs_rel_err:.4f}, max = {rep.max_abs_rel_err:.4f}, "
          f"{'PASS' if rep.passed else 'FAIL'}")
    return 0 if rep.passed else 1


def _add_flow_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rtt", type=float, default=0.1, help="round-trip time in seconds")
    p.add_argument("--mss", type=int, default=1460, help="segment size in bytes")
    p.add_argument("--b", type=int, default=1, help="segments per ACK")
    p.add_argument("--capacity", type=float, default=None, help="link rate in bit/s (default unbounded)")


def _add_sweep_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file mirroring SweepConfig")
    _add_flow_args(p)
    p.add_argument("--variant", choices=["rcc", "rcc+"], default="rcc+")
    p.add_argument("--loss-model", choices=["uniform", "ge"], default="uniform")
    p.add_argument("--burst", type=float, default=1.0, help="mean burst length for ge")
    p.add_argument("--p", type=float, nargs="+", help="explicit loss rates")
    p.add_argument("--p-min", type=float, default=3e-4)
    p.add_argument("--p-max", type=float, default=5e-2)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--rounds", type=int, default=None, help="fixed run length in RTTs")
    p.add_argument("--model-mode", choices=[m.value for m in SeriesMode], default="survival")
    p.add_argument("--workers", type=int, default=None, help="parallel simulations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcclab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sim", help="simulate one flow and print the result as JSON")
    p.add_argument("--variant", choices=["rcc", "rcc+"], default="rcc+")
    p.add_argument("--loss", default="uniform:0.01", help="uniform:P or ge:P:B")
    _add_flow_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--duration", type=float, default=None, help="seconds (overrides --rounds)")
    p.add_argument("--trace", help="write NDJSON trace records to this file")
    p.add_argument("--backend", choices=["fast", "reference"], default="fast")
    p.add_argument("--no-series", action="store_true", help="omit the sampled cwnd series")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("model", help="evaluate a throughput model")
    p.add_argument("--which", choices=["no-rto", "rto"], default="no-rto")
    p.add_argument("--mode", choices=[m.value for m in SeriesMode], default="survival")
    p.add_argument("-p", type=float, required=True)
    p.add_argument("--b", type=int, default=1)
    p.add_argument("--rtt", type=float, default=0.1)
    p.add_argument("--mss", type=int, default=1460)
    p.add_argument("--v-x", type=float, default=0.0, help="variance of rounds per cycle")
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("sweep", help="run a loss-rate sweep and write CSV")
    _add_sweep_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="fit C and the log-log slope from a sweep CSV")
    p.add_argument("csv")
    p.add_argument("--c-p-max", type=float, default=0.01)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("table1", help="fit C under uniform and Gilbert-Elliott losses")
    _add_sweep_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("report", help="compare a sweep CSV with its model column")
    p.add_argument("csv")
    p.add_argument("--model", choices=["exact", "asym"], default="exact")
    p.add_argument("--p-max", type=float, default=0.01)
    p.add_argument("--threshold", type=float, default=0.15)
    p.add_argument("--out-prefix")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
