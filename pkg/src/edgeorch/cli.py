"""Command line entry point: simulate, train, predict, compare."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from typing import Sequence

from .config import load_config
from .emulator import emit_reports
from .errors import EdgeOrchError
from .harness import compare_policies, make_fleet, run_scenario, train_from_store, write_comparison, write_outputs
from .monitoring import TimeSeriesStore
from .predictor import load_model, predict, save_model

log = logging.getLogger("edgeorch")


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.policy:
        config = config.with_policy(args.policy)
    result = run_scenario(config)
    write_outputs(result, args.out, dump_store=args.dump_store)
    m = result.metrics
    print(f"{m.policy}: downtime {m.total_downtime} ticks, {m.migration_count()} migrations -> {args.out}")
    return 0


def _emulated_store(config) -> TimeSeriesStore:
    fleet = make_fleet(config)
    store = TimeSeriesStore(fleet.order)
    for t in range(config.train_ticks):
        states, _ = emit_reports(fleet, t)
        for report in states:
            store.ingest(report)
    return store


def _cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.data:
        store = TimeSeriesStore.load(args.data)
        ticks = [r.timestamp for r in store.reports()]
        if not ticks:
            raise EdgeOrchError(f"{args.data}: no reports")
        t0, t1 = min(ticks), max(ticks)
    else:
        store = _emulated_store(config)
        t0, t1 = 0, config.train_ticks - 1
    model, history = train_from_store(store, store.node_ids, t0, t1, config)
    save_model(model, args.out)
    final = history[-1] if history else math.nan
    print(f"trained on ticks [{t0}, {t1}], final loss {final:.6f} -> {args.out}")
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    store = TimeSeriesStore.load(args.data)
    t0 = args.at - model.seq_len + 1
    if t0 < 0:
        raise EdgeOrchError(f"tick {args.at} leaves fewer than seq_len={model.seq_len} ticks of history")
    window = store.query_range(model.node_order, t0, args.at)
    response = predict(model, window, args.at)
    print(json.dumps(response.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    rows = write_comparison(compare_policies(config), args.out)
    for row in rows:
        print(f"{row['policy']:<18} downtime {row['downtime_ticks']:>6}  accuracy {row['accuracy']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgeorch", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one policy and write events.jsonl / metrics.csv")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--policy", choices=("reactive", "proactive_oracle", "proactive_lstm"))
    p.add_argument("--out", required=True)
    p.add_argument("--dump-store", action="store_true", help="also write the telemetry store as store.jsonl")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="fit the status predictor and save it as JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="store.jsonl to train on (default: emulate the training period)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="predict node statuses horizon ticks after --at")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--at", type=int, required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("compare", help="run all three policies on the same fleet")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (EdgeOrchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
