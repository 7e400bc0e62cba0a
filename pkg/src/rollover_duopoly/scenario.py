"""Scenario files, parameter sweeps, region maps and table output.

A scenario is a YAML document. Money amounts (costs, valuation scales,
swept costs and reported thresholds) are read in the scenario's money
unit, either ``rmb_per_gb`` or ``per_unit`` (money per data unit of
``unit_mb`` megabytes); data amounts are in GB.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .demand import (
    MB_PER_GB,
    DemandModel,
    Mechanism,
    load_demand_table,
    make_point_mass_demand,
    make_truncated_lognormal_demand,
    make_uniform_demand,
)
from .market import OperatorProfile, utility_slope
from .mechanism_game import (
    MECHANISMS,
    MechanismEquilibrium,
    classify_mechanism_equilibrium,
    profile_table,
)
from .pricing_game import monopoly_threshold, pricing_equilibrium, threshold_equilibrium
from .valuation import ValuationDistribution, make_truncated_gamma, make_uniform

SWEEP_HEADER = (
    "swept_var", "eq_label", "kappa1", "kappa2", "sigma1", "sigma2",
    "theta_tilde", "W1", "W2", "regime", "flags",
)
PSI_MAP_HEADER = ("psi1", "psi2", "regime", "sigma1", "sigma2", "W1", "W2", "flags")
COST_MAP_HEADER = ("c2", "c1", "eq_label", "mode", "qos_flip", "flags")

KINDS = ("duopoly", "monopoly", "regime_map")
MONEY_UNITS = ("rmb_per_gb", "per_unit")
SWEEP_VARS = ("c1", "c2", "rho1", "rho2", "beta")


class ScenarioError(ValueError):
    """Invalid scenario content; the message names the field and line."""


# -- loading ---------------------------------------------------------------------------


def _line_map(node, prefix: str = "", out: Optional[Dict[str, int]] = None) -> Dict[str, int]:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = f"{prefix}.{key.value}" if prefix else str(key.value)
            out[path] = key.start_mark.line + 1
            _line_map(value, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}[{i}]"
            out[path] = item.start_mark.line + 1
            _line_map(item, path, out)
    return out


class _Fields:
    """Validated lookups into the raw mapping with line-aware errors."""

    def __init__(self, raw: dict, lines: Dict[str, int], source: str):
        self.raw, self.lines, self.source = raw, lines, source

    def fail(self, path: str, msg: str):
        line = self.lines.get(path)
        where = f"{self.source}:{line}" if line else self.source
        raise ScenarioError(f"{where}: {path}: {msg}")

    def get(self, path: str, default=Ellipsis):
        node = self.raw
        for part in path.replace("]", "").replace("[", ".").split("."):
            if isinstance(node, list):
                node = node[int(part)] if part.isdigit() and int(part) < len(node) else Ellipsis
            elif isinstance(node, dict):
                node = node.get(part, Ellipsis)
            else:
                node = Ellipsis
            if node is Ellipsis:
                break
        if node is Ellipsis:
            if default is Ellipsis:
                self.fail(path, "missing required field")
            return default
        return node

    def number(self, path: str, default=Ellipsis, lo=None, hi=None, lo_open=False, hi_open=False) -> float:
        value = self.get(path, default)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            self.fail(path, "must be finite")
        if lo is not None and (value < lo or (lo_open and value == lo)):
            self.fail(path, f"must be {'>' if lo_open else '>='} {lo}, got {value}")
        if hi is not None and (value > hi or (hi_open and value == hi)):
            self.fail(path, f"must be {'<' if hi_open else '<='} {hi}, got {value}")
        return value


@dataclass(frozen=True)
class Grid:
    variable: str
    values: Tuple[float, ...]


@dataclass
class Scenario:
    """A fully resolved scenario.

    Model objects (demand, valuation, operators) are in internal units:
    money per data unit and integer data units. ``money_factor`` converts
    an internal per-unit amount to the scenario's money unit.
    """

    name: str
    kind: str
    raw: dict
    unit_mb: float
    money_unit: str
    demand: Optional[DemandModel]
    dist: ValuationDistribution
    operators: List[OperatorProfile]
    fixed_mechanisms: Optional[Tuple[Mechanism, ...]]
    beta: Optional[float]
    sweep: Optional[Grid]
    cost_map: Optional[Tuple[Grid, Grid]] = None
    psi_map: Optional[Tuple[Grid, Grid, float]] = None
    output_format: str = "csv"
    output_path: Optional[str] = None
    undercut_step: Optional[float] = None
    description: str = ""
    _profiles: Dict = field(default_factory=dict, repr=False)

    @property
    def money_factor(self) -> float:
        """Scenario money unit per internal (per data unit) money."""
        return MB_PER_GB / self.unit_mb if self.money_unit == "rmb_per_gb" else 1.0

    def to_internal(self, amount: float) -> float:
        return amount / self.money_factor

    def to_external(self, amount: float) -> float:
        return amount * self.money_factor

    def profiles(self, beta: Optional[float] = None):
        beta = self.beta if beta is None else beta
        key = float(beta)
        if key not in self._profiles:
            self._profiles[key] = profile_table(self.demand, [op.cap for op in self.operators], beta)
        return self._profiles[key]


def _gb_to_units(f: _Fields, path: str, unit_mb: float, lo_units: int = 1) -> int:
    gb = f.number(path, lo=0.0)
    units = gb * MB_PER_GB / unit_mb
    if abs(units - round(units)) > 1e-9 * max(1.0, units):
        f.fail(path, f"{gb} GB is not a whole number of {unit_mb:g} MB data units")
    units = int(round(units))
    if units < lo_units:
        f.fail(path, f"must be at least {lo_units} data unit(s), got {gb} GB")
    return units


def _parse_grid(f: _Fields, path: str, variable: str) -> Grid:
    grid_spec = f.get(path)
    if isinstance(grid_spec, list):
        values = [f.number(f"{path}[{i}]") for i in range(len(grid_spec))]
    elif isinstance(grid_spec, dict):
        start, stop = f.number(f"{path}.start"), f.number(f"{path}.stop")
        if "num" in grid_spec:
            num = int(f.number(f"{path}.num", lo=1))
            values = list(np.linspace(start, stop, num))
        else:
            step = f.number(f"{path}.step", lo=0.0, lo_open=True)
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            values = [start + i * step for i in range(max(count, 0))]
    else:
        f.fail(path, "grid must be a list of values or a {start, stop, step|num} mapping")
    if not values:
        f.fail(path, "grid is empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        f.fail(path, "grid must be strictly increasing")
    return Grid(variable, tuple(float(v) for v in values))


def _build_demand(f: _Fields, unit_mb: float) -> DemandModel:
    family = f.get("demand.family")
    if family == "lognormal":
        mean_units = f.number("demand.mean_gb", lo=0.0, lo_open=True) * MB_PER_GB / unit_mb
        max_units = _gb_to_units(f, "demand.max_gb", unit_mb, lo_units=2)
        sigma_log = f.number("demand.sigma_log", default=1.0, lo=0.0, lo_open=True)
        if not mean_units < max_units:
            f.fail("demand.mean_gb", "mean must be below max_gb")
        return make_truncated_lognormal_demand(mean_units, max_units, sigma_log, unit_mb)
    if family == "uniform":
        return make_uniform_demand(_gb_to_units(f, "demand.max_gb", unit_mb), unit_mb)
    if family == "point":
        units = _gb_to_units(f, "demand.at_gb", unit_mb, lo_units=0)
        return make_point_mass_demand(units, max(units, 1), unit_mb)
    if family == "table":
        path = Path(str(f.get("demand.path")))
        if not path.is_absolute():
            path = Path(f.source).parent / path
        return load_demand_table(path, unit_mb)
    f.fail("demand.family", f"unknown demand family {family!r} (lognormal, uniform, point, table)")


def _build_valuation(f: _Fields, factor: float) -> ValuationDistribution:
    family = f.get("valuation.family")
    if family == "gamma":
        shape = f.number("valuation.shape", lo=0.0, lo_open=True)
        scale = f.number("valuation.scale", lo=0.0, lo_open=True) / factor
        q = f.number("valuation.trunc_quantile", default=0.9999, lo=0.5, hi=1.0, lo_open=True, hi_open=True)
        return make_truncated_gamma(shape, scale, q)
    if family == "uniform":
        return make_uniform(f.number("valuation.theta_max", lo=0.0, lo_open=True) / factor)
    f.fail("valuation.family", f"unknown valuation family {family!r} (gamma, uniform)")


def scenario_from_dict(raw: dict, source: str = "<scenario>", lines=None, unit_mb: Optional[float] = None) -> Scenario:
    """Validate ``raw`` and resolve units; ``unit_mb`` overrides the file's value."""
    raw = copy.deepcopy(raw)
    f = _Fields(raw, lines or {}, source)
    if not isinstance(raw, dict):
        raise ScenarioError(f"{source}: top level must be a mapping")
    kind = f.get("kind", "duopoly")
    if kind not in KINDS:
        f.fail("kind", f"must be one of {KINDS}")
    if unit_mb is not None:
        raw.setdefault("units", {})["unit_mb"] = float(unit_mb)
    unit_mb = f.number("units.unit_mb", default=10.0, lo=0.0, lo_open=True)
    money = f.get("units.money", "rmb_per_gb")
    if money not in MONEY_UNITS:
        f.fail("units.money", f"must be one of {MONEY_UNITS}")
    factor = MB_PER_GB / unit_mb if money == "rmb_per_gb" else 1.0

    dist = _build_valuation(f, factor)
    out_fmt = f.get("output.format", "csv")
    if out_fmt not in ("csv", "json"):
        f.fail("output.format", "must be csv or json")
    step = f.number("numerics.undercut_step", default=None, lo=0.0, lo_open=True)
    common = dict(
        name=str(f.get("name", Path(source).stem)),
        kind=kind,
        raw=raw,
        unit_mb=unit_mb,
        money_unit=money,
        dist=dist,
        output_format=out_fmt,
        output_path=f.get("output.path", None),
        undercut_step=None if step is None else step / factor,
        description=str(f.get("description", "")),
    )

    if kind == "regime_map":
        xi = f.number("psi_map.xi", lo=0.0, hi=1.0, lo_open=True)
        g1 = _parse_grid(f, "psi_map.psi1", "psi1")
        g2 = _parse_grid(f, "psi_map.psi2", "psi2")
        return Scenario(demand=None, operators=[], fixed_mechanisms=None, beta=None, sweep=None,
                        psi_map=(g1, g2, xi), **common)

    beta = f.number("beta", lo=0.0, hi=1.0, lo_open=True)
    demand = _build_demand(f, unit_mb)
    ops_raw = f.get("operators")
    n_ops = 1 if kind == "monopoly" else 2
    if not isinstance(ops_raw, list) or len(ops_raw) != n_ops:
        f.fail("operators", f"{kind} scenarios need exactly {n_ops} operator(s)")
    operators, fixed = [], []
    for i in range(n_ops):
        p = f"operators[{i}]"
        rho = f.number(f"{p}.rho", lo=0.0, lo_open=True)
        cost = f.number(f"{p}.cost", lo=0.0) / factor
        cap = _gb_to_units(f, f"{p}.cap_gb", unit_mb)
        if cap > demand.max_units:
            f.fail(f"{p}.cap_gb", f"cap exceeds maximal demand ({demand.max_units} units)")
        mech = f.get(f"{p}.mechanism", None)
        try:
            mech = None if mech is None else Mechanism.parse(mech)
        except ValueError:
            f.fail(f"{p}.mechanism", "must be T or R")
        if cost / rho >= dist.theta_max:
            f.fail(f"{p}.cost", "cost/rho must lie below the largest valuation")
        operators.append(OperatorProfile(rho, cost, cap, mech or Mechanism.ROLLOVER))
        fixed.append(mech)
    if any(m is None for m in fixed) and any(m is not None for m in fixed):
        f.fail("operators", "fix the mechanism of both operators or of neither")
    fixed_mechs = None if fixed[0] is None else tuple(fixed)

    sweep = None
    if "sweep" in raw:
        var = f.get("sweep.variable")
        if var not in SWEEP_VARS or (kind == "monopoly" and var not in ("c1", "rho1", "beta")):
            f.fail("sweep.variable", f"unsupported sweep variable {var!r}")
        sweep = _parse_grid(f, "sweep.grid", var)
        if var == "beta" and not all(0 < v <= 1 for v in sweep.values):
            f.fail("sweep.grid", "beta values must lie in (0, 1]")
    cost_map = None
    if "cost_map" in raw:
        cost_map = (_parse_grid(f, "cost_map.c2", "c2"), _parse_grid(f, "cost_map.c1", "c1"))
    return Scenario(demand=demand, operators=operators, fixed_mechanisms=fixed_mechs, beta=beta,
                    sweep=sweep, cost_map=cost_map, **common)


def _read_yaml(text: str, source: str):
    try:
        raw = yaml.safe_load(text)
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ScenarioError(f"{where}: YAML parse error: {getattr(exc, 'problem', exc)}") from exc
    return raw, _line_map(node)


def load_scenario(path, unit_mb: Optional[float] = None) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"{path}: no such scenario file")
    raw, lines = _read_yaml(path.read_text(), str(path))
    return scenario_from_dict(raw, str(path), lines, unit_mb)


def preset_names() -> List[str]:
    folder = resources.files(__package__) / "presets"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str, unit_mb: Optional[float] = None) -> Scenario:
    folder = resources.files(__package__) / "presets"
    target = folder / f"{name}.yaml"
    if not target.is_file():
        raise ScenarioError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    raw, lines = _read_yaml(target.read_text(), f"preset:{name}")
    return scenario_from_dict(raw, f"preset:{name}", lines, unit_mb)


# -- evaluation --------------------------------------------------------------------------


def _with_value(sc: Scenario, var: str, value: float):
    """Operators and beta after setting the swept variable (value in scenario units)."""
    ops = list(sc.operators)
    beta = sc.beta
    if var in ("c1", "c2"):
        i = int(var[1]) - 1
        ops[i] = OperatorProfile(ops[i].rho, sc.to_internal(value), ops[i].cap, ops[i].mechanism)
    elif var in ("rho1", "rho2"):
        i = int(var[3]) - 1
        ops[i] = OperatorProfile(value, ops[i].cost, ops[i].cap, ops[i].mechanism)
    elif var == "beta":
        beta = value
    return ops, beta


def _row(sc: Scenario, value, label, k1, k2, eq, flags) -> dict:
    ext = sc.to_external
    part = getattr(eq, "partition", None)
    neutral = part.neutral if part is not None else None
    return {
        "swept_var": value,
        "eq_label": label,
        "kappa1": k1,
        "kappa2": k2,
        "sigma1": ext(eq.thresholds[0]) if eq is not None else None,
        "sigma2": ext(eq.thresholds[1]) if eq is not None and len(eq.thresholds) > 1 else None,
        "theta_tilde": ext(neutral) if neutral is not None else None,
        "W1": eq.profits[0] if eq is not None else None,
        "W2": eq.profits[1] if eq is not None and len(eq.profits) > 1 else None,
        "regime": str(eq.regime) if eq is not None and eq.regime is not None else "",
        "flags": ";".join(flags),
    }


@dataclass(frozen=True)
class _MonopolyPoint:
    thresholds: Tuple[float]
    profits: Tuple[float]
    regime: Optional[str] = None
    partition: Any = None


def evaluate_point(sc: Scenario, value: Optional[float] = None) -> List[dict]:
    """Rows for one grid point (``value`` of the swept variable, or the base scenario)."""
    var = sc.sweep.variable if sc.sweep is not None else None
    ops, beta = _with_value(sc, var, value) if var is not None and value is not None else (sc.operators, sc.beta)
    shown = value if value is not None else math.nan
    profiles = sc.profiles(beta)
    try:
        if sc.kind == "monopoly":
            return _monopoly_rows(sc, ops[0], profiles, shown)
        if sc.fixed_mechanisms is not None:
            k1, k2 = sc.fixed_mechanisms
            a, b = ops
            eq = pricing_equilibrium(a, b, profiles[(a.cap, k1)], profiles[(b.cap, k2)], sc.dist, sc.undercut_step)
            return [_row(sc, shown, f"({k1},{k2})", k1.value, k2.value, eq, eq.flags)]
        meq = classify_mechanism_equilibrium(ops[0], ops[1], profiles, sc.dist, sc.undercut_step)
        return _mechanism_rows(sc, meq, shown)
    except (ArithmeticError, ValueError) as exc:
        # a failing point is reported in its row and never aborts the sweep
        return [_row(sc, shown, "error", "", "", None, (f"error:{type(exc).__name__}:{exc}",))]


def _mechanism_rows(sc: Scenario, meq: MechanismEquilibrium, shown) -> List[dict]:
    flags = list(meq.flags) + [f"mode={meq.mode}"] + (["qos-flip"] if meq.qos_flip else [])
    rows = []
    for k1, k2 in meq.pure_outcomes():
        eq = meq.matrix.cells[(k1, k2)]
        rows.append(_row(sc, shown, meq.label, k1.value, k2.value, eq, flags + list(eq.flags)))
    if not rows:
        rows.append(_row(sc, shown, meq.label, "", "", None, flags))
    return rows


def _monopoly_rows(sc: Scenario, op: OperatorProfile, profiles, shown) -> List[dict]:
    rows = []
    for k in MECHANISMS:
        rp = profiles[(op.cap, k)]
        sigma = monopoly_threshold(op.psi, sc.dist)
        w = utility_slope(op, rp) * (sigma - op.psi) * sc.dist.sf(sigma)
        pt = _MonopolyPoint((sigma,), (w,), "monopoly")
        row = _row(sc, shown, f"({k.value})", k.value, "", pt, ())
        row["sigma2"] = row["W2"] = None
        rows.append(row)
    return rows


_WORKER_CACHE: Dict[str, Scenario] = {}


def _worker(args) -> List[dict]:
    raw_json, unit_mb, value = args
    sc = _WORKER_CACHE.get(raw_json)
    if sc is None:
        sc = scenario_from_dict(json.loads(raw_json), unit_mb=unit_mb)
        _WORKER_CACHE[raw_json] = sc
    return evaluate_point(sc, value)


def run_sweep(sc: Scenario, jobs: int = 1) -> List[dict]:
    """Evaluate every grid point; output is in grid order regardless of ``jobs``."""
    values = list(sc.sweep.values) if sc.sweep is not None else [None]
    if jobs <= 1 or len(values) == 1:
        chunks = [evaluate_point(sc, v) for v in values]
    else:
        payload = json.dumps(sc.raw, sort_keys=True)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_worker, [(payload, sc.unit_mb, v) for v in values]))
    return [row for chunk in chunks for row in chunk]


def run_psi_map(sc: Scenario) -> List[dict]:
    """Stage-II regime and thresholds over the ``(psi1, psi2)`` grid."""
    g1, g2, xi = sc.psi_map
    ext = sc.to_external
    rows = []
    for p2 in g2.values:
        for p1 in g1.values:
            try:
                teq = threshold_equilibrium(sc.to_internal(p1), sc.to_internal(p2), xi, sc.dist, sc.undercut_step)
                rows.append({
                    "psi1": p1, "psi2": p2, "regime": str(teq.regime),
                    "sigma1": ext(teq.thresholds[0]), "sigma2": ext(teq.thresholds[1]),
                    "W1": teq.unit_profits[0], "W2": teq.unit_profits[1], "flags": ";".join(teq.flags),
                })
            except (ArithmeticError, ValueError) as exc:
                rows.append({"psi1": p1, "psi2": p2, "regime": "error", "sigma1": None, "sigma2": None,
                             "W1": None, "W2": None, "flags": f"error:{exc}"})
    return rows


def run_cost_map(sc: Scenario) -> List[dict]:
    """Mechanism equilibrium labels over the ``(c2, c1)`` grid."""
    if sc.cost_map is None:
        raise ScenarioError(f"{sc.name}: no cost_map block")
    g2, g1 = sc.cost_map
    profiles = sc.profiles()
    rows = []
    for c2 in g2.values:
        for c1 in g1.values:
            a, b = sc.operators
            a = OperatorProfile(a.rho, sc.to_internal(c1), a.cap)
            b = OperatorProfile(b.rho, sc.to_internal(c2), b.cap)
            try:
                meq = classify_mechanism_equilibrium(a, b, profiles, sc.dist, sc.undercut_step)
                rows.append({"c2": c2, "c1": c1, "eq_label": meq.label, "mode": str(meq.mode),
                             "qos_flip": meq.qos_flip, "flags": ";".join(meq.flags)})
            except (ArithmeticError, ValueError) as exc:
                rows.append({"c2": c2, "c1": c1, "eq_label": "error", "mode": "", "qos_flip": None,
                             "flags": f"error:{exc}"})
    return rows


# -- output ---------------------------------------------------------------------------------


def _fmt(value):
    if value is None:
        return None
    if isinstance(value, bool):
        return value
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
        return float(f"{v:.12g}")
    return value


def normalize_rows(rows: Sequence[dict]) -> List[dict]:
    """Rows as written: floats rounded to 12 significant digits."""
    return [{k: _fmt(v) for k, v in row.items()} for row in rows]


def render(rows: Sequence[dict], fmt: str) -> str:
    if not rows:
        raise ValueError("nothing to emit: no rows")
    rows = normalize_rows(rows)
    if fmt == "json":
        return json.dumps(rows, indent=1) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    header = list(rows[0].keys())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if row[k] is None else (f"{row[k]:.12g}" if isinstance(row[k], float) else row[k]) for k in header])
    return buf.getvalue()


def emit(rows: Sequence[dict], fmt: str, path=None) -> str:
    """Serialize ``rows``; write to ``path`` when given and return the text."""
    text = render(rows, fmt)
    if path is not None:
        Path(path).write_text(text)
    return text
