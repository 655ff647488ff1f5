"""Linear MMSE and minimum-distance detection of one user's vector symbol.

Both receivers model the interference of the other users as colored
Gaussian noise with covariance ``R_i`` (see
:func:`fracalign.metrics.interference_covariance`). The single-observation
functions mirror the batch versions used by the simulator, which process
the columns of ``Y`` in one go.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .constellation import SymbolSpace
from .metrics import _table_from_kernel, effective_kernel, interference_covariance

__all__ = [
    "DetectionResult",
    "lmmse_combiner",
    "lmmse_detect",
    "md_detect",
    "lmmse_detect_batch",
    "md_detect_batch",
    "lemma2_distance_growth",
]

_ZERO_GAIN = 1e-12


@dataclass(frozen=True)
class DetectionResult:
    """Decision for one observation.

    ``min_metric`` is the detector's cost of the chosen symbol and
    ``runner_up_gap`` how much worse the second best candidate scored.
    """

    symbol_index: int
    min_metric: float
    runner_up_gap: float
    fallback: bool = False


def _H(channels):
    return channels.matrices if hasattr(channels, "matrices") else np.asarray(channels)


def lmmse_combiner(i: int, channels, precoders, noise_variance: float) -> np.ndarray:
    """``G_i = R_i^-1 H_ii Q_i``."""
    H = _H(channels)
    R = interference_covariance(i, H, precoders, noise_variance)
    return np.linalg.solve(R, H[i, i] @ precoders[i])


def lmmse_detect_batch(Y: np.ndarray, i: int, channels, precoders, space: SymbolSpace,
                       noise_variance: float):
    """Per-stream sliced LMMSE decisions for every column of ``Y``.

    Each stream of ``r = G^H y`` is divided by the matching diagonal
    entry of ``G^H H_ii Q_i`` and sliced to the nearest constellation
    point. Streams whose gain is numerically zero cannot be sliced; the
    affected observations fall back to a joint nearest search in the
    combiner output domain.

    Returns
    -------
    indices : ndarray of int, shape (T,)
    metrics : ndarray, shape (T,)
        Squared error of ``r`` against the chosen candidate.
    fallback : bool
    """
    H = _H(channels)
    A = H[i, i] @ precoders[i]
    G = lmmse_combiner(i, H, precoders, noise_variance)
    F = G.conj().T @ A
    r = G.conj().T @ np.asarray(Y).reshape(A.shape[0], -1)
    gains = np.diagonal(F)
    cands = F @ space.vectors.T  # (n, V)
    if np.all(np.abs(gains) > _ZERO_GAIN * max(np.max(np.abs(F)), 1e-300)):
        pts = space.constellation.slice((r / gains[:, None]).T)  # (T, n)
        idx = space.index_of(pts)
        metric = np.sum(np.abs(r - cands[:, idx]) ** 2, axis=0)
        return idx, metric, False
    cost = np.sum(np.abs(r[:, :, None] - cands[:, None, :]) ** 2, axis=0)
    idx = np.argmin(cost, axis=1)
    return idx, cost[np.arange(cost.shape[0]), idx], True


def lmmse_detect(y: np.ndarray, i: int, channels, precoders, space: SymbolSpace,
                 noise_variance: float) -> DetectionResult:
    """LMMSE combining followed by per-stream slicing of one observation.

    ``runner_up_gap`` is measured in the combiner output domain against
    the closest other candidate.
    """
    idx, metric, fb = lmmse_detect_batch(np.asarray(y)[:, None], i, channels, precoders,
                                         space, noise_variance)
    H = _H(channels)
    G = lmmse_combiner(i, H, precoders, noise_variance)
    r = G.conj().T @ np.asarray(y)
    cost = np.sum(np.abs(r[:, None] - (G.conj().T @ H[i, i] @ precoders[i]) @ space.vectors.T) ** 2,
                  axis=0)
    others = np.delete(cost, idx[0])
    gap = float(max(others.min() - metric[0], 0.0)) if others.size else 0.0
    return DetectionResult(int(idx[0]), float(metric[0]), gap, fb)


def _whitened(i, H, precoders, noise_variance):
    R = interference_covariance(i, H, precoders, noise_variance)
    L = np.linalg.cholesky(R)
    return L, solve_triangular(L, H[i, i] @ precoders[i], lower=True)


def md_detect_batch(Y: np.ndarray, i: int, channels, precoders, space: SymbolSpace,
                    noise_variance: float):
    """Exhaustive minimum-distance decisions for every column of ``Y``.

    Minimizes ``(y - H_ii Q_i x)^H R_i^-1 (y - H_ii Q_i x)`` over all
    vectors of ``space``; ties go to the lowest index.

    Returns
    -------
    indices : ndarray of int, shape (T,)
    metrics : ndarray, shape (T, V)
        Cost of every candidate.
    """
    H = _H(channels)
    L, A = _whitened(i, H, precoders, noise_variance)
    Yw = solve_triangular(L, np.asarray(Y).reshape(L.shape[0], -1), lower=True)
    cands = A @ space.vectors.T  # (N, V)
    # ||y - c||^2 = ||y||^2 - 2 Re y^H c + ||c||^2
    cost = (np.sum(np.abs(Yw) ** 2, axis=0)[:, None]
            - 2 * (Yw.conj().T @ cands).real
            + np.sum(np.abs(cands) ** 2, axis=0)[None, :])
    cost = np.maximum(cost, 0.0)
    return np.argmin(cost, axis=1), cost


def md_detect(y: np.ndarray, i: int, channels, precoders, space: SymbolSpace,
              noise_variance: float) -> DetectionResult:
    """Minimum-distance detection of one observation."""
    H = _H(channels)
    R = interference_covariance(i, H, precoders, noise_variance)
    factor = cho_factor(R, lower=True)
    diff = np.asarray(y)[:, None] - (H[i, i] @ precoders[i]) @ space.vectors.T
    cost = np.einsum("nv,nv->v", diff.conj(), cho_solve(factor, diff)).real
    order = np.argsort(cost, kind="stable")
    best = int(order[0])
    gap = float(cost[order[1]] - cost[best]) if len(cost) > 1 else 0.0
    return DetectionResult(best, float(max(cost[best], 0.0)), gap)


def lemma2_distance_growth(channels, precoders, spaces, noise_grid: Sequence[float]) -> np.ndarray:
    """Minimum pairwise distance of every user at each noise variance.

    Returns an array of shape ``(len(noise_grid), K)``. When the
    noise-free interference covariance is rank deficient and the desired
    signal leaves its span, the minimum distance grows like ``1/sigma^2``;
    with full-rank interference it levels off.
    """
    H = _H(channels)
    K = H.shape[0]
    if isinstance(spaces, SymbolSpace):
        spaces = [spaces] * K
    out = np.empty((len(noise_grid), K))
    for a, s2 in enumerate(noise_grid):
        for i in range(K):
            d = _table_from_kernel(effective_kernel(i, H, precoders, s2), spaces[i])
            out[a, i] = d[~np.eye(d.shape[0], dtype=bool)].min()
    return out
