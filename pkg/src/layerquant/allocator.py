"""Quantization plans: boosted allocation around a base budget, ablations, and the global MXQ optimum."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import CoverageError, FormatError, InfeasibleError
from .mxq import solve_mckp
from .outlier_detect import DetectParams, detect_outliers
from .quant_core import HqSolverParams, QuantConfig, frobenius_error, quantize, storage_bits

__all__ = [
    "MenuEntry",
    "MENU",
    "MAX_STOP",
    "MEGABYTE",
    "menu_index",
    "boost_stop",
    "AllocationPlan",
    "plan_uniform",
    "plan_from_layers",
    "plan_boost",
    "plan_ablation",
    "CostTable",
    "build_cost_table",
    "solve_mxq",
    "write_plan_csv",
    "read_plan_csv",
]

MEGABYTE = 2 ** 20


class MenuEntry(NamedTuple):
    stop: int
    bits_per_param: float
    config: QuantConfig


def _build_menu():
    cfgs = [QuantConfig(b1, g1) for b1 in (2, 3, 4, 8) for g1 in (128, 64, 32)]
    return tuple(MenuEntry(i, storage_bits(1, c), c) for i, c in enumerate(cfgs))


#: The 12 HQQ configurations ordered by bits per parameter.
MENU = _build_menu()
MAX_STOP = len(MENU) - 1


def menu_index(cfg, menu=MENU):
    for e in menu:
        if e.config == cfg:
            return e.stop
    raise ValueError(f"{cfg} is not on the configuration menu")


def boost_stop(base_stop, stops):
    """Move `stops` steps up the menu from `base_stop`, saturating at the top."""
    if not 0 <= base_stop <= MAX_STOP:
        raise ValueError(f"base_stop must lie in [0, {MAX_STOP}], got {base_stop}")
    if stops < 0:
        raise ValueError("stops must be non-negative")
    return min(base_stop + stops, MAX_STOP)


@dataclass(frozen=True)
class AllocationPlan:
    assignments: dict
    base_stop: int | None
    boosted: frozenset = field(default_factory=frozenset)
    achieved_bits_per_param: float = 0.0
    memory_delta_pct: float = 0.0
    total_bits: float = 0.0
    objective: float | None = None
    detections: dict = field(default_factory=dict)

    def stop_of(self, key):
        return menu_index(self.assignments[key])


def _plan_totals(bundle, assignments):
    counts = {e.key: e.element_count for e in bundle}
    total = math.fsum(storage_bits(counts[k], cfg) for k, cfg in assignments.items())
    n = sum(counts[k] for k in assignments)
    return total, (total / n if n else 0.0)


def _make_plan(bundle, stops_by_key, base_stop, boosted=frozenset(), menu=MENU, **extra):
    assignments = {e.key: menu[stops_by_key[e.key]].config for e in bundle}
    total, bpp = _plan_totals(bundle, assignments)
    if base_stop is not None and len(bundle):
        base_total = math.fsum(storage_bits(e.element_count, menu[base_stop].config) for e in bundle)
        delta = 100.0 * (total - base_total) / base_total
    else:
        delta = float("nan") if base_stop is None else 0.0
    return AllocationPlan(assignments, base_stop, frozenset(boosted), bpp, delta, total, **extra)


def plan_uniform(bundle, stop):
    boost_stop(stop, 0)
    return _make_plan(bundle, {e.key: stop for e in bundle}, stop)


def plan_from_layers(bundle, layers_by_module, base_stop, stops):
    """Boost the given layers of each module; everything else stays at `base_stop`."""
    up = boost_stop(base_stop, stops)
    boosted = {(l, m) for m, layers in layers_by_module.items() for l in layers}
    known = set(bundle.keys())
    unknown = boosted - known
    if unknown:
        raise ValueError(f"boosted keys not in bundle: {sorted(unknown)}")
    stops_by_key = {e.key: (up if e.key in boosted else base_stop) for e in bundle}
    return _make_plan(bundle, stops_by_key, base_stop, boosted)


def _metric_series(bundle, metrics):
    names = {r.metric_name for r in metrics}
    if len(names) > 1:
        raise ValueError(f"metrics mix several metric names: {sorted(names)}")
    by_key = {(r.layer_index, r.module_name): r.value for r in metrics}
    missing = [k for k in bundle.keys() if k not in by_key]
    if missing:
        raise CoverageError(f"no metric rows for {len(missing)} entries, e.g. {missing[:5]}")
    series = {}
    for module in bundle.modules:
        layers = sorted(e.layer_index for e in bundle if e.module_name == module)
        series[module] = (layers, np.array([by_key[(l, module)] for l in layers]))
    return series


def plan_boost(bundle, metrics, base_stop, stops, m=None, params=None, shared_series=False):
    """Boost the layers whose metric jumps are outliers (SensiBoost/KurtBoost planning).

    Detection runs separately on each module's layer series, unless
    `shared_series` is set. In that case the per-layer mean over modules is
    scanned once and the flagged layers are boosted in every module. `m`,
    when given, overrides ``params.m``.
    """
    params = params or DetectParams()
    if m is not None:
        params = DetectParams(params.mode, m, params.z_threshold, params.trim_fraction, params.sigma,
                              params.rank_by)
    boost_stop(base_stop, stops)
    series = _metric_series(bundle, metrics)
    flagged = {}
    detections = {}
    if shared_series:
        layer_sets = {tuple(layers) for layers, _ in series.values()}
        if len(layer_sets) != 1:
            raise CoverageError("shared-series detection needs every module to span the same layers")
        layers = list(layer_sets.pop())
        mean = np.mean([vals for _, vals in series.values()], axis=0)
        res = detect_outliers(mean, params)
        detections["*"] = res
        for module in series:
            flagged[module] = [layers[i] for i in res.layer_indices]
    else:
        for module, (layers, vals) in series.items():
            res = detect_outliers(vals, params)
            detections[module] = res
            flagged[module] = [layers[i] for i in res.layer_indices]
    plan = plan_from_layers(bundle, flagged, base_stop, stops)
    return AllocationPlan(plan.assignments, plan.base_stop, plan.boosted, plan.achieved_bits_per_param,
                          plan.memory_delta_pct, plan.total_bits, None, detections)


def plan_ablation(bundle_or_layers, sensi_layers, kurt_layers, counts=None, seed=0):
    """Draw random layer sets for the ablation runs.

    Both draws come from the layers flagged by neither method. Each draw has
    the same size as the corresponding flagged set, unless `counts` gives the
    sizes explicitly.

    Returns
    -------
    (frozenset, frozenset)
        The ablation layers for the sensitivity and kurtosis methods.
    """
    n = bundle_or_layers if isinstance(bundle_or_layers, int) else bundle_or_layers.num_layers
    sensi_layers, kurt_layers = frozenset(sensi_layers), frozenset(kurt_layers)
    p, q = counts if counts is not None else (len(sensi_layers), len(kurt_layers))
    if p < 0 or q < 0:
        raise ValueError("counts must be non-negative")
    eligible = sorted(set(range(n)) - sensi_layers - kurt_layers)
    if len(eligible) < max(p, q):
        raise ValueError(f"only {len(eligible)} eligible layers, need {max(p, q)}")
    rng = np.random.default_rng(seed)
    js = frozenset(int(x) for x in rng.choice(eligible, size=p, replace=False)) if p else frozenset()
    jk = frozenset(int(x) for x in rng.choice(eligible, size=q, replace=False)) if q else frozenset()
    return js, jk


# -- global optimum ---------------------------------------------------------

COST_COLUMNS = ("layer_index", "module_name", "stop", "error", "bits")


@dataclass(frozen=True)
class CostTable:
    """Frobenius error and storage bits of every (entry, stop) cell."""

    keys: tuple
    counts: tuple
    errors: np.ndarray  # (entries, stops)
    bits: np.ndarray

    def __len__(self):
        return len(self.keys) * self.errors.shape[1]

    def __getitem__(self, item):
        key, stop = item
        i = self.keys.index(key)
        return float(self.errors[i, stop]), float(self.bits[i, stop])

    def rows(self):
        for i, (layer, module) in enumerate(self.keys):
            for stop in range(self.errors.shape[1]):
                yield layer, module, stop, float(self.errors[i, stop]), float(self.bits[i, stop])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COST_COLUMNS)
            for layer, module, stop, e, b in self.rows():
                w.writerow([layer, module, stop, format(e, ".17g"), format(b, ".17g")])

    @classmethod
    def read_csv(cls, path, menu=MENU):
        cells = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in COST_COLUMNS if c not in (reader.fieldnames or ())]
            if missing:
                raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
            for rec in reader:
                key = (int(rec["layer_index"]), rec["module_name"])
                cells.setdefault(key, {})[int(rec["stop"])] = (float(rec["error"]), float(rec["bits"]))
        keys = tuple(cells)
        n_stops = len(menu)
        errors = np.empty((len(keys), n_stops))
        bits = np.empty((len(keys), n_stops))
        for i, key in enumerate(keys):
            if sorted(cells[key]) != list(range(n_stops)):
                raise FormatError(f"{path}: entry {key} does not list all {n_stops} stops")
            for stop, (e, b) in cells[key].items():
                errors[i, stop], bits[i, stop] = e, b
        counts = tuple(int(round(bits[i, 0] / menu[0].bits_per_param)) for i in range(len(keys)))
        return cls(keys, counts, errors, bits)


def build_cost_table(bundle, menu=MENU, method="hqq", params=None, jobs=1):
    """Quantize every entry under every menu config and record error and bits."""
    params = params or HqSolverParams()
    cells = [(i, e, m) for i, e in enumerate(bundle) for m in menu]

    def work(cell):
        _, e, m = cell
        return frobenius_error(e.matrix, quantize(e.matrix, m.config, method=method, params=params))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            errs = list(pool.map(work, cells))
    else:
        errs = [work(c) for c in cells]
    n = len(bundle)
    errors = np.array(errs, dtype=np.float64).reshape(n, len(menu))
    bits = np.array([[storage_bits(e.element_count, m.config) for m in menu] for e in bundle]).reshape(n, len(menu))
    return CostTable(tuple(bundle.keys()), tuple(e.element_count for e in bundle), errors, bits)


def solve_mxq(cost_table, budget_mb, menu=MENU, megabyte=MEGABYTE, base_stop=None):
    """Minimize the summed Frobenius error under a total memory budget in megabytes.

    The budget converts to ``budget_mb * megabyte * 8`` bits, with binary
    megabytes by default. If `base_stop` is given, ``memory_delta_pct`` is
    measured against a uniform plan at that stop; otherwise it is NaN.

    Raises
    ------
    InfeasibleError
        If even the cheapest configuration everywhere exceeds the budget.
    """
    budget_bits = budget_mb * megabyte * 8
    sol = solve_mckp(cost_table.bits, cost_table.errors, budget_bits)
    if sol is None:
        need = math.fsum(cost_table.bits.min(axis=1)) / (8 * megabyte)
        raise InfeasibleError(f"budget of {budget_mb} MB is infeasible; the minimum achievable is {need:.6f} MB",
                              min_budget_mb=need)
    assignments = {key: menu[c].config for key, c in zip(cost_table.keys, sol.choice)}
    n = sum(cost_table.counts)
    delta = float("nan")
    if base_stop is not None:
        base_total = math.fsum(cost_table.bits[:, base_stop])
        delta = 100.0 * (sol.total_bits - base_total) / base_total
    return AllocationPlan(assignments, base_stop, frozenset(), sol.total_bits / n if n else 0.0, delta,
                          sol.total_bits, sol.objective)


PLAN_COLUMNS = ("layer_index", "module_name", "b1", "g1", "b2", "g2", "boosted")


def write_plan_csv(plan, path_or_file):
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLAN_COLUMNS)
        for (layer, module), cfg in plan.assignments.items():
            w.writerow([layer, module, cfg.b1, cfg.g1, cfg.b2, cfg.g2, int((layer, module) in plan.boosted)])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)


def read_plan_csv(path):
    """Return ``(assignments, boosted)`` from a plan CSV."""
    assignments, boosted = {}, set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PLAN_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
        for rec in reader:
            key = (int(rec["layer_index"]), rec["module_name"])
            assignments[key] = QuantConfig(int(rec["b1"]), int(rec["g1"]), int(rec["b2"]), int(rec["g2"]))
            if rec["boosted"] not in ("0", ""):
                boosted.add(key)
    return assignments, frozenset(boosted)
