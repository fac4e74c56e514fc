"""Named weight matrices, synthetic models and metric CSV files.

Weight containers use the safetensors layout (8-byte little-endian header
length, JSON header, raw little-endian data). Tensor names follow the
``<layer_index>.<module_name>`` convention so that every downstream stage can
key its results by ``(layer, module)``.
"""

from __future__ import annotations

import csv
import json
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from safetensors import SafetensorError
from safetensors.numpy import load_file, save_file

from .errors import FormatError, NamingError, ShapeError

__all__ = [
    "Entry",
    "ModelBundle",
    "MetricRow",
    "METRIC_NAMES",
    "METRIC_COLUMNS",
    "parse_key",
    "format_key",
    "load_model",
    "save_model",
    "synth_model",
    "write_metrics_csv",
    "read_metrics_csv",
]

DEFAULT_MODULES = ("q_proj", "k_proj", "v_proj", "o_proj")
SYNTH_STD = 0.02
SPIKE_FRACTION = 1e-3

_KEY_RE = re.compile(r"^(\d+)\.([A-Za-z_][\w.]*)$")


class Entry(NamedTuple):
    layer_index: int
    module_name: str
    matrix: np.ndarray
    element_count: int

    @property
    def key(self):
        return (self.layer_index, self.module_name)


@dataclass(frozen=True)
class ModelBundle:
    """An immutable, ordered collection of named 2-D weight matrices."""

    name: str
    entries: tuple = field(default_factory=tuple)

    def __post_init__(self):
        entries = tuple(self.entries)
        seen = set()
        for e in entries:
            if e.key in seen:
                raise ValueError(f"duplicate entry {format_key(*e.key)}")
            seen.add(e.key)
            if e.matrix.ndim != 2:
                raise ShapeError(f"{format_key(*e.key)}: expected 2-D matrix, got {e.matrix.ndim}-D")
            if not np.all(np.isfinite(e.matrix)):
                raise ValueError(f"{format_key(*e.key)}: matrix has non-finite values")
        layers = sorted({e.layer_index for e in entries})
        if layers and layers != list(range(len(layers))):
            raise ValueError(f"layer indices must be contiguous from 0, got {layers}")
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def num_layers(self):
        return 1 + max((e.layer_index for e in self.entries), default=-1)

    @property
    def modules(self):
        """Module names in order of first appearance."""
        return tuple(dict.fromkeys(e.module_name for e in self.entries))

    def keys(self):
        return [e.key for e in self.entries]

    def get(self, layer_index, module_name):
        for e in self.entries:
            if e.key == (layer_index, module_name):
                return e
        raise KeyError((layer_index, module_name))

    def total_elements(self):
        return sum(e.element_count for e in self.entries)


METRIC_NAMES = frozenset({"sensitivity", "kurtosis"})
METRIC_COLUMNS = ("layer_index", "module_name", "metric_name", "value", "context")


@dataclass(frozen=True)
class MetricRow:
    layer_index: int
    module_name: str
    metric_name: str
    value: float
    context: str | None = None

    def __post_init__(self):
        if self.metric_name not in METRIC_NAMES:
            raise ValueError(f"unknown metric {self.metric_name!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"metric value must be finite, got {self.value}")


def parse_key(name):
    """Split ``"<layer>.<module>"`` into ``(layer, module)``."""
    m = _KEY_RE.match(name)
    if m is None:
        raise NamingError(f"tensor name {name!r} is not of the form <layer_index>.<module_name>")
    return int(m.group(1)), m.group(2)


def format_key(layer_index, module_name):
    return f"{layer_index}.{module_name}"


def _sort_entries(entries, modules=()):
    # layer-major, modules in the recorded order, then first-seen order
    order = {m: i for i, m in enumerate(modules)}
    for e in entries:
        order.setdefault(e.module_name, len(order))
    return sorted(entries, key=lambda e: (e.layer_index, order[e.module_name]))


def _check_header(path):
    with open(path, "rb") as fh:
        raw = fh.read(8)
        if len(raw) != 8:
            raise FormatError(f"{path}: file too short for a tensor container header")
        (n,) = struct.unpack("<Q", raw)
        blob = fh.read(n)
    if len(blob) != n:
        raise FormatError(f"{path}: header length {n} exceeds file size")
    try:
        header = json.loads(blob)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid JSON ({exc})") from None
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header must be a JSON object")
    return header


def load_model(path, name=None):
    """Read a named-tensor container into a :class:`ModelBundle`.

    Raises
    ------
    FormatError
        The header or data section is malformed.
    ShapeError
        A tensor is not 2-D.
    NamingError
        A tensor name does not parse as ``<layer_index>.<module_name>``.
    """
    path = Path(path)
    header = _check_header(path)
    for tname, info in header.items():
        if tname == "__metadata__":
            continue
        parse_key(tname)
        if not isinstance(info, dict) or len(info.get("shape", ())) != 2:
            raise ShapeError(f"{path}: tensor {tname!r} is not 2-D")
    try:
        tensors = load_file(str(path))
    except SafetensorError as exc:
        raise FormatError(f"{path}: {exc}") from None
    entries = []
    for tname, arr in tensors.items():
        layer, module = parse_key(tname)
        entries.append(Entry(layer, module, arr, int(arr.size)))
    meta = header.get("__metadata__") or {}
    try:
        modules = json.loads(meta.get("modules", "[]"))
    except json.JSONDecodeError:
        modules = []
    return ModelBundle(name or meta.get("name") or path.stem, tuple(_sort_entries(entries, modules)))


def save_model(bundle, path):
    """Write ``bundle`` so that :func:`load_model` reproduces it exactly."""
    tensors = {format_key(*e.key): np.ascontiguousarray(e.matrix) for e in bundle}
    meta = {"name": bundle.name, "modules": json.dumps(list(bundle.modules))}
    save_file(tensors, str(path), metadata=meta)


def synth_model(layers, modules=DEFAULT_MODULES, rows=256, cols=256, planted=(), tail_scale=50.0, seed=0,
                name="synthetic"):
    """Generate a bundle of Gaussian matrices with optional heavy-tailed entries.

    Every matrix is drawn i.i.d. from N(0, 0.02^2) in float32. Matrices whose
    ``(layer, module)`` key is in `planted` additionally have 0.1% of their
    entries (at least one) multiplied by `tail_scale`, which makes them
    strongly leptokurtic.

    Each matrix has its own random stream derived from ``(seed, layer,
    module position)``, so planting one entry never perturbs another.
    """
    modules = tuple(modules)
    if layers < 2:
        raise ValueError("layers must be >= 2")
    if tail_scale <= 1:
        raise ValueError("tail_scale must be > 1")
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be positive")
    planted = {(int(l), str(m)) for l, m in planted}
    grid = {(l, m) for l in range(layers) for m in modules}
    outside = planted - grid
    if outside:
        raise ValueError(f"planted keys outside the (layer, module) grid: {sorted(outside)}")

    n = rows * cols
    n_spikes = max(1, int(round(SPIKE_FRACTION * n)))
    entries = []
    for layer in range(layers):
        for mi, module in enumerate(modules):
            rng = np.random.default_rng([seed, layer, mi])
            w = rng.normal(0.0, SYNTH_STD, size=(rows, cols))
            if (layer, module) in planted:
                idx = rng.choice(n, size=n_spikes, replace=False)
                w.flat[idx] *= tail_scale
            entries.append(Entry(layer, module, w.astype(np.float32), n))
    return ModelBundle(name, tuple(entries))


def write_metrics_csv(rows, path):
    """Write metric rows to a path or an open text file; values keep 17 significant digits."""
    if hasattr(path, "write"):
        _write_metrics(rows, path)
    else:
        with open(path, "w", newline="") as fh:
            _write_metrics(rows, fh)


def _write_metrics(rows, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for r in rows:
        writer.writerow([r.layer_index, r.module_name, r.metric_name, format(float(r.value), ".17g"),
                         "" if r.context is None else r.context])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in METRIC_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
        out = []
        for lineno, rec in enumerate(reader, start=2):
            try:
                out.append(MetricRow(int(rec["layer_index"]), rec["module_name"], rec["metric_name"],
                                     float(rec["value"]), rec["context"] or None))
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


def group_by_module(rows: Iterable[MetricRow]) -> dict:
    """Map module name to its rows sorted by layer index."""
    out = {}
    for r in rows:
        out.setdefault(r.module_name, []).append(r)
    return {m: sorted(rs, key=lambda r: r.layer_index) for m, rs in out.items()}
