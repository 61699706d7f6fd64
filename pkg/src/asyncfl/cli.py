"""Command-line entry point: ``asyncfl run | compare | sweep | secagg-bench | accept``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments
from .orchestrator.config import ConfigError
from .scenario import ScenarioError, bundled_names, resolve
from .secagg.bench import boundary_table
from .secagg.fixed_point import FixedPointOverflow
from .sim.runner import SimulationTimeout, StopRule

log = logging.getLogger("asyncfl")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _stop(text: str) -> StopRule:
    try:
        return StopRule.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _emit(doc: dict, out: Path | None, name: str) -> None:
    text = experiments.canonical_json(doc)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n", encoding="utf-8")
        log.info("wrote %s", out / name)
    print(text)


def _seeds(args, scenario) -> tuple:
    return (args.seed,) if args.seed is not None else scenario.seeds


def cmd_run(args) -> int:
    scenario = resolve(args.scenario).override(seed=args.seed, stop=args.stop)
    out = Path(args.out or scenario.output or f"runs/{scenario.name}-seed{scenario.seed}")
    result, summary = experiments.run(scenario, outdir=out)
    log.info("%s: %s after %d events, %.1f virtual s; artifacts in %s", scenario.name, result.stop_reason,
             result.events, result.end_time, out)
    print(json.dumps({"summary": str(out / "summary.json"), "sha256": experiments.document_hash(summary),
                      "stop_reason": result.stop_reason}, sort_keys=True))
    return 0 if result.stop_reason == scenario.stop.kind else 3


def cmd_compare(args) -> int:
    a = resolve(args.a).override(stop=args.stop)
    b = resolve(args.b).override(stop=args.stop)
    seeds = (args.seed,) if args.seed is not None else tuple(args.seeds or a.seeds)
    report = experiments.compare(a, b, seeds, threads=args.threads)
    _emit(report, Path(args.out) if args.out else None, "compare.json")
    return 0


def cmd_sweep(args) -> int:
    scenario = resolve(args.scenario).override(stop=args.stop)
    table = experiments.sweep(scenario, args.axis, args.values, _seeds(args, scenario), threads=args.threads)
    _emit(table, Path(args.out) if args.out else None, "sweep.json")
    return 0


def cmd_secagg_bench(args) -> int:
    rows = [c.as_dict() for c in boundary_table(args.clients, args.lengths, args.modulus_bits, args.seed or 0)]
    _emit({"schema": "asyncfl.secagg-bench/1", "modulus_bits": args.modulus_bits, "rows": rows},
          Path(args.out) if args.out else None, "secagg_bench.json")
    return 0


def cmd_accept(args) -> int:
    from . import acceptance

    results = acceptance.run_all(args.only)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_list(args) -> int:
    for name in bundled_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asyncfl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, stop=True):
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed(s)")
        sp.add_argument("--out", default=None, help="output directory")
        if stop:
            sp.add_argument("--stop", type=_stop, default=None,
                            help="target-loss=X | updates=N | versions=N | time=S")
        sp.add_argument("--threads", type=int, default=1, help="parallel processes for independent runs")

    sp = sub.add_parser("run", help="run one scenario and write its artifacts")
    sp.add_argument("scenario", help="scenario file or bundled scenario name")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="paired runs of two scenarios on the same population")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--seeds", type=_int_list, default=None)
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("sweep", help="one run per value of concurrency or aggregation goal")
    sp.add_argument("scenario")
    sp.add_argument("--axis", choices=experiments.SWEEP_AXES, required=True)
    sp.add_argument("--values", type=_int_list, required=True)
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("secagg-bench", help="bytes across the trusted-party interface per (K, m)")
    sp.add_argument("--clients", type=_int_list, default=[1, 16, 64])
    sp.add_argument("--lengths", type=_int_list, default=[1000, 10_000, 100_000])
    sp.add_argument("--modulus-bits", type=int, default=32)
    common(sp, stop=False)
    sp.set_defaults(func=cmd_secagg_bench)

    sp = sub.add_parser("accept", help="run the acceptance criteria")
    sp.add_argument("--only", type=_int_list, default=None, help="criterion numbers to run")
    sp.set_defaults(func=cmd_accept)

    sp = sub.add_parser("list", help="list bundled scenarios")
    sp.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ScenarioError, ConfigError, FixedPointOverflow) as exc:
        print(f"asyncfl: invalid scenario: {exc}", file=sys.stderr)
        return 2
    except SimulationTimeout as exc:
        print(f"asyncfl: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as exc:
        print(f"asyncfl: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
