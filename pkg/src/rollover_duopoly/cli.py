"""Command line entry point: ``rollover-duopoly {solve,sweep,regimes,presets}``."""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

import numpy as np

from .demand import rollover_profile, simulate_rollover
from .scenario import (
    ScenarioError,
    emit,
    evaluate_point,
    load_preset,
    load_scenario,
    preset_names,
    run_cost_map,
    run_psi_map,
    run_sweep,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="path to a YAML scenario file")
    src.add_argument("--preset", help="name of a bundled scenario (see `presets`)")
    p.add_argument("--format", choices=("csv", "json"), help="output format (default: scenario's)")
    p.add_argument("--out", help="write output here instead of stdout")
    p.add_argument("--unit-mb", type=float, help="data unit size in MB (default: scenario's, else 10)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rollover-duopoly", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("solve", help="equilibrium at one parameter point")
    _add_common(p)
    p.add_argument("--at", type=float, help="value of the sweep variable (default: scenario base point)")
    p.add_argument("--mc-months", type=int, default=0,
                   help="also simulate this many months of the rollover chain and report overage")
    p.add_argument("--seed", type=int, default=0, help="seed for the Monte Carlo check")

    p = sub.add_parser("sweep", help="evaluate the scenario's sweep grid")
    _add_common(p)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("regimes", help="2-D map: (psi1, psi2) regimes or (c2, c1) mechanism labels")
    _add_common(p)

    sub.add_parser("presets", help="list bundled scenarios")
    return ap


def _load(args):
    if args.preset:
        return load_preset(args.preset, args.unit_mb)
    return load_scenario(args.scenario, args.unit_mb)


def _write(rows, sc, args) -> None:
    fmt = args.format or sc.output_format
    text = emit(rows, fmt, args.out or sc.output_path)
    if not (args.out or sc.output_path):
        sys.stdout.write(text)


def _monte_carlo(sc, months: int, seed: int) -> List[str]:
    lines = []
    rng = np.random.default_rng(seed)
    for op in sc.operators:
        rp = rollover_profile(sc.demand, op.cap, sc.beta, "R")
        mc = simulate_rollover(sc.demand, op.cap, months, rng)
        lines.append(
            f"# cap={op.cap} units: overage exact={rp.expected_overage:.6g} "
            f"simulated={mc.mean_overage:.6g} +/- {mc.stderr:.2g} (batch means)"
        )
    return lines


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "presets":
        for name in preset_names():
            sc = load_preset(name)
            print(f"{name:12s} {sc.kind:10s} {' '.join(sc.description.split())}")
        return 0
    try:
        sc = _load(args)
        if args.verb == "solve":
            if args.at is not None and sc.sweep is None:
                raise ScenarioError(f"{sc.name}: --at needs a sweep variable in the scenario")
            rows = evaluate_point(sc, args.at) if sc.kind != "regime_map" else None
            if rows is None:
                raise ScenarioError("regime_map scenarios only support `regimes`")
            if args.mc_months:
                sys.stderr.write("\n".join(_monte_carlo(sc, args.mc_months, args.seed)) + "\n")
        elif args.verb == "sweep":
            if sc.kind == "regime_map":
                raise ScenarioError("regime_map scenarios only support `regimes`")
            rows = run_sweep(sc, jobs=args.jobs)
        else:
            rows = run_psi_map(sc) if sc.kind == "regime_map" else run_cost_map(sc)
        _write(rows, sc, args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
