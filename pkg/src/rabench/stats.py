"""Rank and linear correlation coefficients with approximate p-values.

p-values use large-sample approximations (Student-t for Pearson/Spearman,
normal for Kendall) rather than exact permutation tests; they are labeled
approximate wherever reports surface them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .errors import ConfigError

__all__ = ["CorrelationResult", "pearson", "spearman", "kendall_tau", "rank_average"]


@dataclass(frozen=True)
class CorrelationResult:
    coefficient: float
    p_value: float
    n: int

    def to_dict(self) -> dict:
        return {"coefficient": self.coefficient, "p_value": self.p_value, "n": self.n}


def _validate(x, y, min_n: int = 3):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ConfigError("inputs must be equal-length 1D sequences")
    if x.size < min_n:
        raise ConfigError(f"need at least {min_n} samples")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise ConfigError("correlation is undefined for constant input")
    return x, y


def _t_sf(t: float, df: int) -> float:
    """Two-sided tail probability of Student-t via the incomplete beta."""
    if not math.isfinite(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def _pearson_r(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    return float(np.dot(xc, yc) / math.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))


def pearson(x, y) -> CorrelationResult:
    """Product-moment correlation with a two-sided t-test p-value."""
    x, y = _validate(x, y)
    n = x.size
    r = _pearson_r(x, y)
    r = max(-1.0, min(1.0, r))
    if 1.0 - r * r <= 0.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = _t_sf(t, n - 2)
    return CorrelationResult(r, p, n)


def rank_average(x) -> np.ndarray:
    """Ranks starting at 1, ties replaced by their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> CorrelationResult:
    """Pearson correlation of average ranks."""
    x, y = _validate(x, y)
    result = pearson(rank_average(x), rank_average(y))
    return CorrelationResult(result.coefficient, result.p_value, x.size)


def kendall_tau(x, y) -> CorrelationResult:
    """Tie-corrected tau-b with a normal-approximation p-value.

    The p-value variance n(n-1)(2n+5)/18 carries no tie correction.
    """
    x, y = _validate(x, y)
    n = x.size
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    prod = dx[iu] * dy[iu]
    concordant = int(np.sum(prod > 0))
    discordant = int(np.sum(prod < 0))
    n0 = n * (n - 1) // 2
    ties_x = n0 - int(np.sum(dx[iu] != 0))
    ties_y = n0 - int(np.sum(dy[iu] != 0))
    denom = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    tau = (concordant - discordant) / denom
    var = n * (n - 1) * (2 * n + 5) / 18.0
    z = (concordant - discordant) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return CorrelationResult(max(-1.0, min(1.0, tau)), min(1.0, p), n)
