"""Command-line entry point: ``bdfm <subcommand> [options]``.

Global flags ``--config``, ``--seed`` and ``--out`` apply to every
subcommand; flags override values read from the config file.
"""

from __future__ import annotations

import argparse
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .core import NetworkSpec
from .exceptions import FlowModelError
from .io import export_flows, load_config, load_snapshot, save_snapshot, write_table
from .pipeline import export_results, monitor_columns, run_pipeline
from .simgen import KINDS, ScenarioSpec, simulate


def _common(parser, top=False):
    # on subcommands, leave values given before the subcommand intact
    kw = {} if top else {"default": argparse.SUPPRESS}
    parser.add_argument("--config", help="key = value run configuration file", **kw)
    parser.add_argument("--seed", type=int, help="random seed (overrides config)", **kw)
    parser.add_argument("--out", help="output directory (overrides config)", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdfm", description="Dynamic network flow models")
    _common(parser, top=True)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a synthetic flow file and its ground truth")
    _common(sim)
    sim.add_argument("--nodes", type=int, default=3)
    sim.add_argument("--ticks", type=int, default=50)
    sim.add_argument("--kind", choices=KINDS, default="constant-rate")
    sim.add_argument("--inflow-rate", type=float, default=20.0)
    sim.add_argument("--transition-rate", type=float, default=5.0)
    sim.add_argument("--occupancy", type=int, default=50, help="initial occupancy per node")
    sim.add_argument("--discount", type=float, default=0.95)

    for name, text in (
        ("select-discount", "grid posterior over each series' discount"),
        ("filter", "forward filter with monitoring; writes a snapshot"),
        ("smooth", "backward-sample rates and transition probabilities"),
        ("emulate", "map rate draws onto the gravity model"),
        ("run", "full pipeline"),
    ):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--input", help="flow file (overrides config)")
        p.add_argument("--draws", type=int, help="Monte Carlo draws (overrides config)")

    rep = sub.add_parser("monitor-report", help="summarise monitor events")
    _common(rep)
    src = rep.add_mutually_exclusive_group()
    src.add_argument("--snapshot", help="model snapshot written by 'filter'")
    src.add_argument("--input", help="flow file to filter first")
    return parser


def _config(args):
    pick = lambda name: getattr(args, name, None)  # noqa: E731
    return load_config(
        args.config, seed=args.seed, out=args.out, input=pick("input"), draws=pick("draws")
    )


def _simulate(args):
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    I = args.nodes
    spec = ScenarioSpec(
        NetworkSpec(I), args.ticks, args.kind,
        inflow_rates=np.full(I, args.inflow_rate),
        transition_rates=np.full((I, I + 1), args.transition_rate),
        dgm=_flat_dgm(args.ticks, I, args.transition_rate) if args.kind == "dgm-parametric" else None,
        discount=args.discount,
        n0=np.r_[0, np.full(I, args.occupancy)],
        seed=0 if args.seed is None else args.seed,
    )
    sim = simulate(spec)
    export_flows(out / "flows.txt", sim.frames, spec.network, spec.n0)
    np.savez(out / "truth.npz", **sim.truth)
    print(f"wrote {out / 'flows.txt'} and {out / 'truth.npz'}")


def _flat_dgm(T, I, rate):
    return {
        "mu": np.full(T, rate), "alpha": np.ones((T, I)), "beta": np.ones((T, I + 1)),
        "gamma": np.ones((T, I, I + 1)),
    }


_STAGES = {
    "select-discount": ("select", "filter"),
    "filter": ("select", "filter"),
    "smooth": ("select", "filter", "smooth"),
    "emulate": ("select", "filter", "smooth", "emulate"),
    "run": ("select", "filter", "smooth", "emulate", "export"),
}


def _run_stages(args):
    config = _config(args)
    stages = set(_STAGES[args.command])
    if not config.select_discount:
        stages.discard("select")
    result = run_pipeline(config, stages)
    out = Path(config.out)
    files = result.files or export_results(result, out)
    if args.command in ("filter", "run"):
        save_snapshot(result.model, out / "snapshot.json")
    for name, rows in files.items():
        print(f"{name}: {rows} rows")
    print(f"results in {out}")


def _monitor_report(args):
    if args.snapshot:
        model = load_snapshot(args.snapshot)
        offset = 0
    else:
        config = _config(args)
        result = run_pipeline(config, ("select", "filter") if config.select_discount else ("filter",))
        model, offset = result.model, result.tick_offset
    events = model.events()
    counts = Counter(ev.kind for _, ev in events)
    print(f"ticks filtered: {model.t}, series: {len(model.filters)}, events: {len(events)}")
    for kind in ("outlier", "change-signal", "run-length-signal", "intervention"):
        print(f"  {kind}: {counts.get(kind, 0)}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_table(out / "monitor.csv", "monitor", monitor_columns(events, offset))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            _simulate(args)
        elif args.command == "monitor-report":
            _monitor_report(args)
        else:
            _run_stages(args)
    except FlowModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
