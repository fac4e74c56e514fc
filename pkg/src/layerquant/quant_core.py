"""Group-wise weight quantization: round-to-nearest, HQQ refinement and metadata quantization.

Grouping is over the row-major flattened matrix: consecutive ``g1`` elements
form a group and the tail group is padded by repeating the last element.
Padded slots never contribute to statistics, objectives or error metrics.

Dequantization follows ``W ~ s * (codes - z)`` with codes in
``[0, 2**b1 - 1]``. All arithmetic runs in float64.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from safetensors.numpy import load_file, save_file

from .errors import FormatError, ShapeError

__all__ = [
    "QuantConfig",
    "HqSolverParams",
    "MetaQuantized",
    "QuantizedMatrix",
    "HqqResult",
    "round_half_away",
    "quantize_rtn",
    "hqq_quantize",
    "shrink_lp",
    "lp_objective",
    "dequantize",
    "meta_quantize",
    "storage_bits",
    "frobenius_error",
    "quantize",
    "save_quantized",
    "load_quantized",
]

VALID_B1 = (2, 3, 4, 8)
VALID_G1 = (32, 64, 128)


@dataclass(frozen=True, order=True)
class QuantConfig:
    """Weight bit-width/group size and metadata bit-width/group size."""

    b1: int
    g1: int
    b2: int = 8
    g2: int = 128

    def __post_init__(self):
        if self.b1 not in VALID_B1:
            raise ValueError(f"b1 must be one of {VALID_B1}, got {self.b1}")
        if self.g1 not in VALID_G1:
            raise ValueError(f"g1 must be one of {VALID_G1}, got {self.g1}")
        if self.b2 != 8 or self.g2 != 128:
            raise ValueError(f"metadata must be quantized with b2=8, g2=128, got b2={self.b2}, g2={self.g2}")

    @classmethod
    def parse(cls, text):
        """Parse ``"b1,g1,b2,g2"`` (``b2,g2`` optional)."""
        try:
            parts = [int(p) for p in str(text).split(",")]
        except ValueError:
            raise ValueError(f"cannot parse quantization config {text!r}") from None
        if len(parts) not in (2, 4):
            raise ValueError(f"expected b1,g1[,b2,g2], got {text!r}")
        return cls(*parts)

    @property
    def levels(self):
        return 2 ** self.b1

    @property
    def tag(self):
        return f"b{self.b1}g{self.g1}"

    def __str__(self):
        return f"{self.b1},{self.g1},{self.b2},{self.g2}"


@dataclass(frozen=True)
class HqSolverParams:
    """Half-quadratic solver settings.

    Only `p` comes from the published method (0.7); the remaining defaults are
    our own choices and exposed on the command line.
    """

    p: float = 0.7
    beta0: float = 10.0
    kappa: float = 1.01
    iters: int = 20
    early_stop_tol: float = 1e-5

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if self.beta0 <= 0:
            raise ValueError("beta0 must be positive")
        if self.kappa <= 1:
            raise ValueError("kappa must exceed 1")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.early_stop_tol < 0:
            raise ValueError("early_stop_tol must be non-negative")


@dataclass(frozen=True)
class MetaQuantized:
    """An 8-bit RTN encoding of a per-group metadata vector (scales or zeros)."""

    codes: np.ndarray
    scale: np.ndarray
    zero: np.ndarray
    length: int
    group_size: int = 128

    def decode(self):
        vals = self.scale[:, None] * (self.codes.astype(np.float64) - self.zero[:, None])
        return vals.ravel()[: self.length]

    @property
    def step(self):
        """Per-metadata-group grid step, expanded to one value per weight group."""
        return np.repeat(self.scale, self.group_size)[: self.length]


@dataclass(frozen=True)
class QuantizedMatrix:
    codes: np.ndarray  # (groups, g1) uint8, padded
    scales: np.ndarray  # (groups,)
    zeros: np.ndarray  # (groups,)
    shape: tuple
    config: QuantConfig
    meta_scales: MetaQuantized | None = None
    meta_zeros: MetaQuantized | None = None

    @property
    def num_groups(self):
        return self.codes.shape[0]

    @property
    def is_meta(self):
        return self.meta_scales is not None

    def effective_params(self):
        """Scales and zeros as used by dequantization."""
        s = self.meta_scales.decode() if self.meta_scales is not None else self.scales
        z = self.meta_zeros.decode() if self.meta_zeros is not None else self.zeros
        return s, z


@dataclass(frozen=True)
class HqqResult:
    quantized: QuantizedMatrix
    trace: tuple = field(default_factory=tuple)
    iterations: int = 0
    rejected: bool = False


def round_half_away(x):
    """Round to nearest integer, ties away from zero."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def _grouped(W, g1):
    """Flatten row-major, pad to a multiple of `g1`, return (groups, mask)."""
    W = np.asarray(W)
    if W.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {W.shape}")
    if W.size == 0:
        raise ValueError("cannot quantize an empty matrix")
    if not np.all(np.isfinite(W)):
        raise ValueError("matrix contains non-finite values")
    flat = W.astype(np.float64).ravel()
    n = flat.size
    pad = (-n) % g1
    mask = np.ones(n + pad, dtype=bool)
    if pad:
        flat = np.concatenate([flat, np.full(pad, flat[-1])])
        mask[n:] = False
    return flat.reshape(-1, g1), mask.reshape(-1, g1)


def _rtn_params(groups, levels):
    lo = groups.min(axis=1)
    hi = groups.max(axis=1)
    s = (hi - lo) / (levels - 1)
    s[hi == lo] = 1.0
    z = -lo / s
    return s, z


def _encode(groups, s, z, levels):
    q = round_half_away(groups / s[:, None] + z[:, None])
    return np.clip(q, 0, levels - 1)


def _decode(codes, s, z):
    return s[:, None] * (codes - z[:, None])


def _ungroup(deq, shape):
    n = shape[0] * shape[1]
    return deq.ravel()[:n].reshape(shape)


def quantize_rtn(W, cfg, meta=False):
    """Min-max round-to-nearest quantization per ``g1`` group.

    Parameters
    ----------
    W : array_like, shape (rows, cols)
    cfg : QuantConfig
    meta : bool
        Also quantize the per-group scales and zeros to 8 bits.

    Returns
    -------
    QuantizedMatrix
    """
    groups, _ = _grouped(W, cfg.g1)
    s, z = _rtn_params(groups, cfg.levels)
    codes = _encode(groups, s, z, cfg.levels)
    q = QuantizedMatrix(codes.astype(np.uint8), s, z, tuple(np.shape(W)), cfg)
    return meta_quantize(q) if meta else q


def shrink_lp(x, beta, p=0.7):
    """Generalized soft-thresholding, the proximal step for ``|x|**p``.

    Computes ``sign(x) * max(0, |x| - |x|**(p-1) / beta)`` elementwise with
    ``shrink_lp(0) == 0``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    nz = ax > 0
    out = np.zeros_like(x)
    with np.errstate(over="ignore", divide="ignore"):
        # tiny |x| overflows to -inf, which clamps to 0 below
        mag = ax[nz] - ax[nz] ** (p - 1) / beta
    out[nz] = np.sign(x[nz]) * np.maximum(mag, 0.0)
    return out


def lp_objective(W, q, p=0.7):
    """Sum of ``|W - dequantize(q)|**p`` over the original elements."""
    W = np.asarray(W, dtype=np.float64)
    err = W - dequantize(q)
    return float(np.sum(np.abs(err) ** p))


def _masked_lp(groups, mask, codes, s, z, p):
    err = groups - _decode(codes, s, z)
    return float(np.sum(np.abs(err[mask]) ** p))


def hqq_quantize(W, cfg, params=None, meta=False, return_trace=False):
    """Refine RTN zero-points with the half-quadratic L_p solver.

    Starting from :func:`quantize_rtn`, each round

    1. computes the codes and residual under the current zero-points,
    2. shrinks the residual with :func:`shrink_lp` at penalty ``beta``,
    3. sets each group's zero-point to the mean of
       ``codes - (W - W_e) / s`` over its real elements,
    4. multiplies ``beta`` by ``kappa``.

    Scales stay at their RTN values. An update that would raise the L_p
    objective is rejected and ends the loop, so the recorded trace is
    non-increasing and the result is never worse than RTN. The loop also
    stops early once the relative improvement drops below
    ``params.early_stop_tol``.

    Returns
    -------
    QuantizedMatrix, or HqqResult if `return_trace` is true.
    """
    params = params or HqSolverParams()
    groups, mask = _grouped(W, cfg.g1)
    levels = cfg.levels
    p = params.p
    s, z = _rtn_params(groups, levels)
    counts = mask.sum(axis=1)

    codes = _encode(groups, s, z, levels)
    obj = _masked_lp(groups, mask, codes, s, z, p)
    trace = [obj]
    beta = params.beta0
    rejected = False
    it = 0
    while it < params.iters and obj > 0.0:
        it += 1
        resid = groups - _decode(codes, s, z)
        w_e = shrink_lp(resid, beta, p)
        target = np.where(mask, codes - (groups - w_e) / s[:, None], 0.0)
        z_new = target.sum(axis=1) / counts
        beta *= params.kappa
        codes_new = _encode(groups, s, z_new, levels)
        obj_new = _masked_lp(groups, mask, codes_new, s, z_new, p)
        if obj_new > obj:
            rejected = True
            break
        improvement = obj - obj_new
        z, codes, obj = z_new, codes_new, obj_new
        trace.append(obj)
        if improvement <= params.early_stop_tol * trace[-2]:
            break

    q = QuantizedMatrix(codes.astype(np.uint8), s, z, tuple(np.shape(W)), cfg)
    if meta:
        q = meta_quantize(q)
    if return_trace:
        return HqqResult(q, tuple(trace), it, rejected)
    return q


def _meta_encode(values, group_size, bits=8):
    n = values.size
    pad = (-n) % group_size
    v = np.concatenate([values, np.full(pad, values[-1])]) if pad else values.copy()
    g = v.reshape(-1, group_size)
    levels = 2 ** bits
    s, z = _rtn_params(g, levels)
    codes = _encode(g, s, z, levels)
    return MetaQuantized(codes.astype(np.uint8), s, z, n, group_size)


def meta_quantize(q):
    """Quantize the scales and zeros of `q` to ``b2`` bits over ``g2`` groups.

    Weight codes are left unchanged; only their dequantization parameters
    become lossy.
    """
    if q.is_meta:
        return q
    cfg = q.config
    ms = _meta_encode(np.asarray(q.scales, dtype=np.float64), cfg.g2, cfg.b2)
    mz = _meta_encode(np.asarray(q.zeros, dtype=np.float64), cfg.g2, cfg.b2)
    return QuantizedMatrix(q.codes, q.scales, q.zeros, q.shape, cfg, ms, mz)


def dequantize(q):
    """Reconstruct a float64 matrix of ``q.shape``."""
    s, z = q.effective_params()
    deq = _decode(q.codes.astype(np.float64), np.asarray(s, np.float64), np.asarray(z, np.float64))
    return _ungroup(deq, q.shape)


def storage_bits(element_count, cfg):
    """Linear storage cost ``n * (b1 + 2*b2/g1 + 32/(g1*g2))`` in bits."""
    if element_count <= 0:
        raise ValueError("element_count must be positive")
    return element_count * (cfg.b1 + 2 * cfg.b2 / cfg.g1 + 32 / (cfg.g1 * cfg.g2))


def frobenius_error(W, q):
    W = np.asarray(W, dtype=np.float64)
    if tuple(W.shape) != tuple(q.shape):
        raise ShapeError(f"shape mismatch: W {W.shape} vs quantized {q.shape}")
    return float(np.sqrt(np.sum((W - dequantize(q)) ** 2)))


def quantize(W, cfg, method="hqq", params=None, meta=False):
    """Dispatch to :func:`quantize_rtn` or :func:`hqq_quantize`."""
    if method == "rtn":
        return quantize_rtn(W, cfg, meta=meta)
    if method == "hqq":
        return hqq_quantize(W, cfg, params, meta=meta)
    raise ValueError(f"unknown quantization method {method!r}")


# -- container serialization -------------------------------------------------

def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_quantized(items, path, extra=None):
    """Write ``{key: QuantizedMatrix}`` as ``<key>.codes/.scales/.zeros`` plus a JSON sidecar.

    Meta-quantized matrices additionally store ``<key>.{scales,zeros}.meta_*``
    tensors.
    """
    tensors = {}
    side = {"format": "layerquant.quantized/1", "tensors": {}}
    if extra:
        side.update(extra)
    for key, q in items.items():
        tensors[f"{key}.codes"] = np.ascontiguousarray(q.codes)
        tensors[f"{key}.scales"] = np.ascontiguousarray(q.scales, dtype=np.float64)
        tensors[f"{key}.zeros"] = np.ascontiguousarray(q.zeros, dtype=np.float64)
        info = {"shape": list(q.shape), "config": asdict(q.config), "meta": q.is_meta}
        if q.is_meta:
            for name, m in (("scales", q.meta_scales), ("zeros", q.meta_zeros)):
                tensors[f"{key}.{name}.meta_codes"] = np.ascontiguousarray(m.codes)
                tensors[f"{key}.{name}.meta_scale"] = np.ascontiguousarray(m.scale)
                tensors[f"{key}.{name}.meta_zero"] = np.ascontiguousarray(m.zero)
                info[f"{name}_length"] = m.length
        side["tensors"][key] = info
    save_file(tensors, str(path))
    with open(sidecar_path(path), "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_quantized(path):
    try:
        with open(sidecar_path(path)) as fh:
            side = json.load(fh)
        tensors = load_file(str(path))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: cannot read quantized container ({exc})") from None
    out = {}
    for key, info in side["tensors"].items():
        cfg = QuantConfig(**info["config"])
        metas = [None, None]
        if info.get("meta"):
            for i, name in enumerate(("scales", "zeros")):
                metas[i] = MetaQuantized(tensors[f"{key}.{name}.meta_codes"], tensors[f"{key}.{name}.meta_scale"],
                                         tensors[f"{key}.{name}.meta_zero"], int(info[f"{name}_length"]), cfg.g2)
        out[key] = QuantizedMatrix(tensors[f"{key}.codes"], tensors[f"{key}.scales"], tensors[f"{key}.zeros"],
                                   tuple(info["shape"]), cfg, *metas)
    return out
