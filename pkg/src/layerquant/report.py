"""Win-tie-loss scoring and perplexity-drop tables from ingested perplexity results.

Perplexities are never computed here. They are read from a results CSV with
columns ``model,method,dataset,base_budget,stops,top_m,perplexity``.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .errors import FormatError, PairingError

__all__ = [
    "METHODS",
    "BASELINES",
    "DEFAULT_PAIRS",
    "PplRecord",
    "WtlRecord",
    "round2",
    "parse_method",
    "parse_pairs",
    "score_wtl",
    "ppl_vs_memory",
    "read_results_csv",
    "write_results_csv",
    "read_memory_csv",
    "write_wtl_csv",
    "write_ppl_mem_csv",
]

METHODS = ("SB", "KB", "SBAB", "KBAB", "HQQ", "MXQ")
BASELINES = frozenset({"HQQ", "MXQ"})
# rows of the assessment matrix: primary method vs. what it is compared with
DEFAULT_PAIRS = (("SB", "KB"), ("SB", "SBAB"), ("SB", "HQQ"), ("SB", "MXQ"),
                 ("KB", "KBAB"), ("KB", "HQQ"), ("KB", "MXQ"))
DATASETS = ("wikitext2", "c4", "other")
RESULT_COLUMNS = ("model", "method", "dataset", "base_budget", "stops", "top_m", "perplexity")
MEMORY_COLUMNS = ("model", "method", "base_budget", "stops", "top_m", "memory_delta_pct")

_METHOD_RE = re.compile(r"^(SBAB|KBAB|SB|KB|HQQ|MXQ)(\d*)$", re.IGNORECASE)


def parse_method(tag):
    """Normalize a method tag such as ``"sb22"`` to its base name ``"SB"``."""
    m = _METHOD_RE.match(str(tag).strip())
    if m is None:
        raise ValueError(f"unknown method tag {tag!r}; expected one of {', '.join(METHODS)}")
    return m.group(1).upper()


def _dataset(name):
    key = re.sub(r"[^a-z0-9]", "", str(name).lower())
    return key if key in DATASETS else "other"


def round2(x):
    """Round to two decimals, ties away from zero, on the shortest decimal form of `x`."""
    return float(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class PplRecord:
    model: str
    method: str
    dataset: str
    base_budget: float
    stops: int = 0
    top_m: int = 0
    perplexity: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "method", parse_method(self.method))
        object.__setattr__(self, "dataset", _dataset(self.dataset))
        if not self.perplexity > 0:
            raise ValueError(f"perplexity must be positive, got {self.perplexity}")

    def key(self, baseline=False):
        budget = round(float(self.base_budget), 6)
        if baseline:
            return (self.model, self.dataset, budget)
        return (self.model, self.dataset, budget, int(self.stops), int(self.top_m))


@dataclass(frozen=True)
class WtlRecord:
    primary: str
    comparator: str
    model: str
    wins: int
    ties: int
    losses: int

    @property
    def total(self):
        return self.wins + self.ties + self.losses

    def pct(self):
        t = self.total or 1
        return tuple(100.0 * v / t for v in (self.wins, self.ties, self.losses))


def parse_pairs(text):
    """Parse ``"sb:hqq,kb:mxq"`` into ``[("SB", "HQQ"), ("KB", "MXQ")]``."""
    pairs = []
    for chunk in str(text).split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        a, sep, b = chunk.partition(":")
        if not sep:
            raise ValueError(f"pair {chunk!r} must look like primary:comparator")
        pairs.append((parse_method(a), parse_method(b)))
    return pairs


def _index(records, method, baseline):
    idx = {}
    for r in records:
        if r.method != method:
            continue
        k = r.key(baseline)
        if k in idx:
            raise PairingError(f"duplicate {method} record for {k}", [k])
        idx[k] = r
    return idx


def score_wtl(records, pairs=DEFAULT_PAIRS):
    """Count wins, ties and losses of each primary method against its comparator.

    Every primary record is one paired cell. Baseline comparators (HQQ, MXQ)
    are matched on model, dataset and base budget only. Other comparators
    must also share the boost stops and top-m. Both perplexities are rounded
    to two decimals, and the lower one wins.
    """
    records = list(records)
    out = []
    for primary, comparator in pairs:
        primary, comparator = parse_method(primary), parse_method(comparator)
        baseline = comparator in BASELINES
        comp = _index(records, comparator, baseline)
        tallies = {}
        missing = []
        for r in records:
            if r.method != primary:
                continue
            other = comp.get(r.key(baseline))
            if other is None:
                missing.append((comparator,) + r.key(baseline))
                continue
            a, b = round2(r.perplexity), round2(other.perplexity)
            outcome = "w" if a < b else ("t" if a == b else "l")
            tallies.setdefault(r.model, Counter())[outcome] += 1
        if missing:
            raise PairingError(f"{primary} vs {comparator}: {len(missing)} cell(s) lack a counterpart, "
                               f"e.g. {missing[:3]}", sorted(set(missing)))
        for model in sorted(tallies):
            c = tallies[model]
            out.append(WtlRecord(primary, comparator, model, c["w"], c["t"], c["l"]))
    return out


def ppl_vs_memory(records, memory):
    """Perplexity drop relative to HQQ next to the extra memory each method spent.

    Parameters
    ----------
    records : iterable of PplRecord
    memory : mapping
        ``(model, method, base_budget, stops, top_m)`` to either a memory
        delta in percent or an object with a ``memory_delta_pct`` attribute,
        e.g. an :class:`~layerquant.allocator.AllocationPlan`.

    Returns
    -------
    list of dict
        Keys ``model, dataset, method, base_budget, stops, top_m,
        memory_delta_pct, ppl_drop_pct``. Baseline records are skipped.
    """
    records = list(records)
    hqq = _index(records, "HQQ", True)
    mem = {}
    for (model, method, budget, stops, top_m), v in memory.items():
        mem[(model, parse_method(method), round(float(budget), 6), int(stops), int(top_m))] = float(
            getattr(v, "memory_delta_pct", v))
    rows, missing = [], []
    for r in records:
        if r.method in BASELINES:
            continue
        base = hqq.get(r.key(True))
        mkey = (r.model, r.method, round(float(r.base_budget), 6), int(r.stops), int(r.top_m))
        if base is None:
            missing.append(("HQQ",) + r.key(True))
            continue
        if mkey not in mem:
            missing.append(("memory",) + mkey)
            continue
        drop = 100.0 * (base.perplexity - r.perplexity) / base.perplexity
        rows.append({"model": r.model, "dataset": r.dataset, "method": r.method, "base_budget": r.base_budget,
                     "stops": r.stops, "top_m": r.top_m, "memory_delta_pct": mem[mkey], "ppl_drop_pct": drop})
    if missing:
        raise PairingError(f"{len(missing)} record(s) cannot be joined, e.g. {missing[:3]}", sorted(set(missing)))
    return rows


# -- CSV plumbing -----------------------------------------------------------

def _reader(fh, path, columns):
    reader = csv.DictReader(fh)
    missing = [c for c in columns if c not in (reader.fieldnames or ())]
    if missing:
        raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
    return reader


def read_results_csv(path):
    out = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(_reader(fh, path, RESULT_COLUMNS), start=2):
            try:
                out.append(PplRecord(rec["model"], rec["method"], rec["dataset"], float(rec["base_budget"]),
                                     int(rec["stops"] or 0), int(rec["top_m"] or 0), float(rec["perplexity"])))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


def write_results_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in records:
            w.writerow([r.model, r.method, r.dataset, repr(float(r.base_budget)), r.stops, r.top_m,
                        repr(float(r.perplexity))])


def read_memory_csv(path):
    out = {}
    with open(path, newline="") as fh:
        for rec in _reader(fh, path, MEMORY_COLUMNS):
            key = (rec["model"], rec["method"], float(rec["base_budget"]), int(rec["stops"] or 0),
                   int(rec["top_m"] or 0))
            out[key] = float(rec["memory_delta_pct"])
    return out


def write_wtl_csv(wtl, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["primary", "comparator", "model", "wins", "ties", "losses", "total", "win_pct", "tie_pct",
                "loss_pct"])
    for r in wtl:
        w.writerow([r.primary, r.comparator, r.model, r.wins, r.ties, r.losses, r.total,
                    *(f"{v:.2f}" for v in r.pct())])


def write_ppl_mem_csv(rows, fh):
    cols = ["model", "dataset", "method", "base_budget", "stops", "top_m", "memory_delta_pct", "ppl_drop_pct"]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([r["model"], r["dataset"], r["method"], r["base_budget"], r["stops"], r["top_m"],
                    format(r["memory_delta_pct"], ".6f"), format(r["ppl_drop_pct"], ".6f")])
