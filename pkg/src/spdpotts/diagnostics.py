"""Posterior summaries, voxel-wise testing, and MCMC diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_toeplitz
from scipy.special import gammaln, kv

from .errors import ChainTooShort, EmptyChain, EmptyTrace, LengthMismatch
from .potts import PottsHyper, label_offsets


@dataclass
class DifferenceMap:
    """Posterior difference probabilities and the voxel-wise decisions."""

    prob_diff: np.ndarray
    decision: np.ndarray
    threshold: float

    def __post_init__(self):
        self.prob_diff = np.asarray(self.prob_diff, dtype=float)
        self.decision = np.asarray(self.decision, dtype=bool)
        if self.prob_diff.shape != self.decision.shape:
            raise ValueError("prob_diff and decision must share a shape")
        if not np.array_equal(self.decision, self.prob_diff > self.threshold):
            raise ValueError("decision must equal prob_diff > threshold")


def difference_map(trace, threshold: float = 0.5) -> DifferenceMap:
    """Declare a group difference where P(h_0v != h_1v | data) > threshold.

    The decision uses a strict inequality, so a 50/50 voxel is not flagged
    at the default threshold.
    """
    if trace.n_retained == 0:
        raise EmptyTrace("trace has no retained iterations")
    prob = trace.prob_diff()
    return DifferenceMap(prob, prob > threshold, threshold)


def marginal_mixture_weights(h_xv: int, theta: PottsHyper, K: int) -> np.ndarray:
    """Neighbor-marginalized mixture weights of the K components at a voxel
    with group label h_xv: proportional to exp[-k^xi + alpha 1(h_xv = k)]."""
    if not 1 <= h_xv <= K:
        raise ValueError(f"h_xv must lie in 1..{K}")
    lw = label_offsets(K, theta.xi).copy()
    lw[h_xv - 1] += theta.alpha
    lw -= lw.max()
    w = np.exp(lw)
    return w / w.sum()


class HwResult(NamedTuple):
    passed: bool
    retained_start: int


def _spectral_density_at_zero(x: np.ndarray) -> float:
    """S(0) via a 4th-order autoregressive fit (Yule-Walker)."""
    n = x.size
    centered = x - x.mean()
    if n < 16:
        return float(np.var(x))
    order = min(4, n - 2)
    acov = np.array(
        [centered[: n - lag] @ centered[lag:] / n for lag in range(order + 1)]
    )
    if acov[0] <= 0:
        return 0.0
    try:
        phi = solve_toeplitz(acov[:-1], acov[1:])
    except np.linalg.LinAlgError:
        phi = np.zeros(order)
    resid_var = acov[0] - phi @ acov[1:]
    denom = (1.0 - phi.sum()) ** 2
    if resid_var <= 0 or denom < 1e-12:
        return float(acov[0])  # unstable fit: white-noise fallback
    return float(resid_var / denom)


def _cvm_sf(x: float, terms: int = 12) -> float:
    """Survival function of the limiting Cramer-von Mises distribution."""
    if x <= 0:
        return 1.0
    total = 0.0
    for j in range(terms):
        coef = np.exp(gammaln(j + 0.5) - gammaln(0.5) - gammaln(j + 1))
        arg = (4 * j + 1) ** 2 / (16.0 * x)
        total += coef * np.sqrt(4 * j + 1) * np.exp(-arg) * kv(0.25, arg)
    cdf = total / (np.pi * np.sqrt(x))
    return float(min(max(1.0 - cdf, 0.0), 1.0))


def heidelberger_welch(chain, alpha_level: float = 0.05) -> HwResult:
    """Iterative stationarity test on a scalar chain.

    Tests the Cramer-von Mises statistic of the Brownian-bridge transform of
    the partial sums, with the spectral density at zero estimated from the
    latter half of the chain; drops leading 10% increments until the test
    passes or half the chain is gone.  A constant chain passes trivially.
    """
    x = np.asarray(chain, dtype=float)
    if x.ndim != 1 or x.size < 100:
        raise ChainTooShort("need a 1-D chain of length >= 100")
    n = x.size
    if np.ptp(x) == 0.0:
        return HwResult(True, 0)
    s0 = _spectral_density_at_zero(x[n // 2 :])
    if s0 <= 0 or s0 < 1e-12 * np.var(x):
        return HwResult(True, 0)
    start = 0
    for frac in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5):
        start = int(round(frac * n))
        y = x[start:]
        ny = y.size
        partial = np.cumsum(y)
        k = np.arange(1, ny + 1)
        bridge = (partial - k * y.mean()) / np.sqrt(ny * s0)
        cvm = float((bridge**2).sum() / ny)
        if _cvm_sf(cvm) > alpha_level:
            return HwResult(True, start)
    return HwResult(False, start)


def rand_index(labels_a, labels_b) -> float:
    """Pair-counting agreement of two clusterings, in [0, 1]."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.size != b.size:
        raise LengthMismatch(f"lengths differ: {a.size} vs {b.size}")
    if a.size < 2:
        raise LengthMismatch("need at least two items")
    n = a.size
    _, a_idx = np.unique(a, return_inverse=True)
    _, b_idx = np.unique(b, return_inverse=True)
    joint = a_idx.astype(np.int64) * (b_idx.max() + 1) + b_idx
    nij = np.bincount(joint)
    ni = np.bincount(a_idx)
    nj = np.bincount(b_idx)

    def comb2(v):
        v = v.astype(np.int64)
        return float((v * (v - 1) // 2).sum())

    total = n * (n - 1) / 2.0
    return (total + 2.0 * comb2(nij) - comb2(ni) - comb2(nj)) / total


class CredibleInterval(NamedTuple):
    lo: float
    hi: float


def credible_interval(chain, level: float = 0.95) -> CredibleInterval:
    """Equal-tailed quantile interval (linear interpolation)."""
    x = np.asarray(chain, dtype=float)
    if x.size == 0:
        raise EmptyChain("empty chain")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    lo, hi = np.quantile(x, [(1 - level) / 2.0, (1 + level) / 2.0])
    return CredibleInterval(float(lo), float(hi))
