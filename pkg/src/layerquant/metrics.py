"""Per-matrix kurtosis and activation-sensitivity scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeError
from .quant_core import HqSolverParams, dequantize, quantize
from .tensor_io import MetricRow

__all__ = [
    "SensitivityInput",
    "synthetic_input",
    "sensitivity_score",
    "model_sensitivity",
    "kurtosis",
    "model_kurtosis",
]

DEFAULT_TOKENS = 128


@dataclass(frozen=True)
class SensitivityInput:
    """Calibration activations, one row per token and one column per input feature."""

    X: np.ndarray
    source: str = "unknown"

    def __post_init__(self):
        X = np.asarray(self.X)
        if X.ndim != 2:
            raise ShapeError(f"calibration input must be 2-D, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("calibration input contains non-finite values")
        object.__setattr__(self, "X", X)

    @property
    def dim(self):
        return self.X.shape[1]


def synthetic_input(dim, seed=0, tokens=DEFAULT_TOKENS):
    """Seeded i.i.d. N(0, 1) activations of shape ``(tokens, dim)``."""
    rng = np.random.default_rng(seed)
    return SensitivityInput(rng.standard_normal((tokens, dim)), f"synthetic:{seed}")


def sensitivity_score(W, q, X):
    """Mean squared difference between full-precision and quantized activations.

    Each token ``x`` (a row of ``X.X``) is pushed through both ``W`` and
    ``dequantize(q)``; the score is the squared error summed over all outputs
    divided by the number of outputs.
    """
    if not isinstance(X, SensitivityInput):
        X = SensitivityInput(X)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or tuple(W.shape) != tuple(q.shape):
        raise ShapeError(f"weight shape {W.shape} does not match quantized shape {q.shape}")
    if W.shape[1] != X.dim:
        raise ShapeError(f"weight has {W.shape[1]} input features but X has {X.dim} columns")
    # (W - W_hat) X^T == W X^T - W_hat X^T, without the cancellation
    out = (W - dequantize(q)) @ X.X.T.astype(np.float64)
    return float(np.sum(out * out) / out.size)


def model_sensitivity(bundle, cfg, X, method="hqq", params=None):
    """Score every matrix of `bundle` quantized under `cfg`.

    Each stored matrix is scored on its own with the shared input `X`; the
    row context records ``<source>/<config tag>``.
    """
    if not isinstance(X, SensitivityInput):
        X = SensitivityInput(X)
    params = params or HqSolverParams()
    context = f"{X.source}/{cfg.tag}"
    rows = []
    for e in bundle:
        q = quantize(e.matrix, cfg, method=method, params=params)
        rows.append(MetricRow(e.layer_index, e.module_name, "sensitivity", sensitivity_score(e.matrix, q, X), context))
    return rows


def kurtosis(W):
    """Pearson (non-excess) kurtosis ``m4 / m2**2`` of all entries of `W`.

    A Gaussian sample gives about 3. Uses a mean-centred two-pass
    computation in float64.

    Raises
    ------
    DegenerateInputError
        If the entries have zero variance.
    """
    w = np.asarray(W, dtype=np.float64).ravel()
    if w.size < 2:
        raise DegenerateInputError("kurtosis needs at least two values")
    if w.min() == w.max():
        raise DegenerateInputError("kurtosis is undefined for zero-variance input")
    d = w - w.mean()
    d2 = d * d
    m2 = d2.mean()
    if m2 == 0.0:
        raise DegenerateInputError("kurtosis is undefined for zero-variance input")
    m4 = (d2 * d2).mean()
    return float(m4 / (m2 * m2))


def model_kurtosis(bundle, context=None):
    return [MetricRow(e.layer_index, e.module_name, "kurtosis", kurtosis(e.matrix), context) for e in bundle]
