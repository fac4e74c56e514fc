"""Sensitive-layer detection from a per-layer metric series.

A series ``S`` (one value per layer) is turned into a jump series ``D`` of
adjacent differences or ratios. Jumps whose trimmed z-score exceeds the
threshold are outliers; the top ``m`` of them by descending jump size are
reported as the layer *after* the jump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["DetectParams", "DetectResult", "diff_series", "trimmed_stats", "zscores", "detect_outliers"]

MODES = ("subtract", "divide")
SIGMA_MODES = ("sample", "sqrt_ss")
RANK_BY = ("d", "z")


@dataclass(frozen=True)
class DetectParams:
    """Detection settings.

    Attributes
    ----------
    mode : {"subtract", "divide"}
        How adjacent layers are compared. ``divide`` suits series that drift
        upward, since a return to the normal range yields a small ratio
        rather than a large negative difference.
    m : int
        Keep at most this many outliers; 0 keeps all.
    z_threshold : float
        Strict lower bound on ``|d - mu| / sigma`` for an outlier.
    trim_fraction : float
        Fraction of the sorted jumps dropped at each end before estimating
        ``mu`` and ``sigma``.
    sigma : {"sample", "sqrt_ss"}
        ``sample`` is the usual n-1 standard deviation. ``sqrt_ss`` is
        ``sqrt(sum((d - mu)**2)) / (n - 1)``, about ``sqrt(n - 1)`` times
        smaller, so it flags far more points.
    rank_by : {"d", "z"}
        Order outliers by raw jump value (descending) or by z-score.
    """

    mode: str = "subtract"
    m: int = 0
    z_threshold: float = 3.0
    trim_fraction: float = 0.05
    sigma: str = "sample"
    rank_by: str = "d"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.m < 0:
            raise ValueError("m must be >= 0")
        if self.z_threshold <= 0:
            raise ValueError("z_threshold must be positive")
        if not 0 <= self.trim_fraction < 0.5:
            raise ValueError("trim_fraction must lie in [0, 0.5)")
        if self.sigma not in SIGMA_MODES:
            raise ValueError(f"sigma must be one of {SIGMA_MODES}")
        if self.rank_by not in RANK_BY:
            raise ValueError(f"rank_by must be one of {RANK_BY}")


@dataclass(frozen=True)
class DetectResult:
    layer_indices: tuple
    diffs: np.ndarray
    zscores: np.ndarray
    mu: float
    sigma: float


def diff_series(S, mode="subtract"):
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 1 or S.size < 2:
        raise ValueError("series needs at least two values")
    if mode == "subtract":
        return S[1:] - S[:-1]
    if mode == "divide":
        if np.any(S <= 0):
            raise ValueError("divide mode requires strictly positive values")
        return S[1:] / S[:-1]
    raise ValueError(f"unknown mode {mode!r}")


def trimmed_stats(D, trim_fraction=0.05, sigma="sample"):
    """Mean and spread of `D` after dropping ``floor(trim_fraction * len(D))`` values per end."""
    D = np.sort(np.asarray(D, dtype=np.float64))
    k = int(math.floor(trim_fraction * D.size))
    kept = D[k: D.size - k]
    n = kept.size
    if n < 2:
        raise ValueError(f"only {n} value(s) left after trimming; need at least 2")
    mu = float(kept.mean())
    ss = float(np.sum((kept - mu) ** 2))
    if sigma == "sample":
        sd = math.sqrt(ss / (n - 1))
    elif sigma == "sqrt_ss":
        sd = math.sqrt(ss) / (n - 1)
    else:
        raise ValueError(f"unknown sigma convention {sigma!r}")
    return mu, sd


def zscores(D, mu, sd):
    """``|d - mu| / sd``; with ``sd == 0`` any nonzero deviation is infinite."""
    dev = np.abs(np.asarray(D, dtype=np.float64) - mu)
    if sd > 0:
        return dev / sd
    return np.where(dev > 0, np.inf, 0.0)


def detect_outliers(S, params=None):
    """Find sensitive layers in the per-layer series `S`.

    Returns
    -------
    DetectResult
        ``layer_indices`` are 0-based positions in `S`, ascending. Position 0
        is never reported because a jump always lands on the later layer.
    """
    params = params or DetectParams()
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 1 or S.size < 3:
        raise ValueError("detection needs a series of at least three values")
    D = diff_series(S, params.mode)
    mu, sd = trimmed_stats(D, params.trim_fraction, params.sigma)
    z = zscores(D, mu, sd)
    hits = np.flatnonzero(z > params.z_threshold)
    key = D if params.rank_by == "d" else z
    # descending key, then lower position first
    order = sorted(hits.tolist(), key=lambda i: (-key[i], i))
    if params.m > 0:
        order = order[: params.m]
    layers = tuple(sorted(i + 1 for i in order))
    return DetectResult(layers, D, z, mu, sd)
