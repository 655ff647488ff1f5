"""Distance measures, objectives and their derivative weights.

The receiver treats interference plus noise as colored Gaussian noise
with covariance ``R_i``. The distance between vector symbols ``x_j`` and
``x_k`` of user ``i`` is the quadratic form

    d_i[j, k] = e^H  (H_ii Q_i)^H R_i^-1 (H_ii Q_i)  e,   e = x_j - x_k.

Objectives are written in minimization form; see :func:`objective_value`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erfc, log_ndtr, logsumexp

from .constellation import SymbolSpace
from .exceptions import DegenerateDistanceError, ValidationError

__all__ = [
    "ObjectiveSpec",
    "DistanceTable",
    "interference_covariance",
    "effective_kernel",
    "distance_table",
    "objective_value",
    "user_objective",
    "alpha_weights",
    "error_covariance",
    "qfunc",
    "log_user_terms",
    "OBJECTIVE_KINDS",
]

OBJECTIVE_KINDS = ("ser", "ber", "mi", "md")
_LN2 = np.log(2.0)


def qfunc(x):
    """Gaussian tail probability ``Q(x)``."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def _lse(a: np.ndarray, axis=None, keepdims: bool = False):
    """Log-sum-exp without scipy's dispatch overhead; all ``-inf`` gives ``-inf``."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out if keepdims else (np.squeeze(out, axis=axis) if axis is not None else out.item())


def _phi(x):
    return np.exp(-0.5 * np.asarray(x) ** 2) / np.sqrt(2 * np.pi)


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which distance-based objective every user minimizes.

    ``kind`` is a single name or one name per user. ``eta`` scales the
    distance inside the SER/BER/MI forms, ``md_exponent`` is the power
    ``r`` of the inverse-distance sum standing in for the minimum distance.
    """

    kind: str | tuple = "mi"
    eta: float = 2.0
    md_exponent: float = 8.0

    def __post_init__(self):
        kinds = (self.kind,) if isinstance(self.kind, str) else tuple(self.kind)
        for k in kinds:
            if k not in OBJECTIVE_KINDS:
                raise ValidationError(f"unknown objective kind {k!r}; expected one of {OBJECTIVE_KINDS}")
        if not isinstance(self.kind, str):
            object.__setattr__(self, "kind", kinds)
        if not self.eta > 0:
            raise ValidationError(f"eta must be positive, got {self.eta}")
        if not self.md_exponent >= 1:
            raise ValidationError(f"md_exponent must be >= 1, got {self.md_exponent}")

    def kind_for(self, user: int) -> str:
        return self.kind if isinstance(self.kind, str) else self.kind[user]


@dataclass(frozen=True)
class DistanceTable:
    """Pairwise distances for one user; ``d[j, j]`` is 0."""

    user_index: int
    d: np.ndarray

    @property
    def offdiag(self) -> np.ndarray:
        n = self.d.shape[0]
        return self.d[~np.eye(n, dtype=bool)]


def interference_covariance(i: int, channels, precoders, noise_variance: float) -> np.ndarray:
    """``sum_{j != i} (H_ij Q_j)(H_ij Q_j)^H + noise_variance * I``."""
    H = channels.matrices if hasattr(channels, "matrices") else np.asarray(channels)
    N = H.shape[2]
    R = noise_variance * np.eye(N, dtype=complex)
    for j in range(H.shape[0]):
        if j == i:
            continue
        g = H[i, j] @ precoders[j]
        R += g @ g.conj().T
    return R


def effective_kernel(i: int, channels, precoders, noise_variance: float) -> np.ndarray:
    """Hermitian PSD ``(H_ii Q_i)^H R_i^-1 (H_ii Q_i)`` in symbol coordinates."""
    H = channels.matrices if hasattr(channels, "matrices") else np.asarray(channels)
    R = interference_covariance(i, channels, precoders, noise_variance)
    g = H[i, i] @ precoders[i]
    K = g.conj().T @ np.linalg.solve(R, g)
    return 0.5 * (K + K.conj().T)


def _table_from_kernel(kernel: np.ndarray, space: SymbolSpace) -> np.ndarray:
    """Distance table(s) from kernel(s) of shape ``(..., n, n)``."""
    x = space.vectors
    # d_jk = g_jj + g_kk - 2 Re g_jk with g_jk = x_j^H K x_k
    gram = (x.conj() @ kernel @ x.T).real
    dg = np.diagonal(gram, axis1=-2, axis2=-1)
    d = dg[..., :, None] + dg[..., None, :] - 2 * gram
    d = 0.5 * (d + np.swapaxes(d, -1, -2))
    d = d * ~np.eye(d.shape[-1], dtype=bool)
    return np.maximum(d, 0.0)


def distance_table(i: int, channels, precoders, space: SymbolSpace,
                   noise_variance: float) -> DistanceTable:
    """Distances between every pair of user ``i``'s vector symbols."""
    return DistanceTable(i, _table_from_kernel(
        effective_kernel(i, channels, precoders, noise_variance), space))


def user_objective(kind: str, d: np.ndarray, space: SymbolSpace, eta: float = 2.0,
                   md_exponent: float = 8.0) -> float:
    """Objective of one user from its distance matrix (minimization form).

    * ``ser``: ``sum_{j != k} Q(d/eta)``
    * ``ber``: ``sum_{j != k} beta_jk Q(d/eta)``
    * ``mi``:  ``sum_j log2 sum_k exp(-d/eta)`` (``k`` includes ``j``);
      the negative of the mutual-information surrogate
    * ``md``:  ``sum_{j != k} d^-r``
    """
    n = d.shape[0]
    off = ~np.eye(n, dtype=bool)
    if kind == "ser":
        return float(qfunc(d[off] / eta).sum())
    if kind == "ber":
        return float((space.beta[off] * qfunc(d[off] / eta)).sum())
    if kind == "mi":
        return float(logsumexp(-d / eta, axis=1).sum() / _LN2)
    if kind == "md":
        dd = d[off]
        if np.any(dd <= 0):
            raise DegenerateDistanceError("minimum-distance objective hit a zero distance")
        return float(np.sum(dd ** (-md_exponent)))
    raise ValidationError(f"unknown objective kind {kind!r}")


def objective_value(spec: ObjectiveSpec, tables: Sequence[DistanceTable],
                    spaces: Sequence[SymbolSpace]) -> float:
    """Total objective ``C = sum_i f_i(d_i)``."""
    return float(sum(user_objective(spec.kind_for(t.user_index), t.d, s, spec.eta, spec.md_exponent)
                     for t, s in zip(tables, spaces)))


def alpha_weights(spec: ObjectiveSpec, table: DistanceTable, space: SymbolSpace,
                  exact: bool = False) -> np.ndarray:
    """Per-pair weights ``alpha[j, k]`` of the error covariance.

    By default the simplified closed forms are returned: ``exp(-d)``
    (ser), ``beta * exp(-d)`` (ber), ``exp(-d_jk) / sum_l exp(-d_jl)``
    with ``l`` running over all symbols including ``j`` (mi), and
    ``-r d^(-r-1)`` (md, negative).

    With ``exact=True`` the weights are ``-dC/dd[j, k]`` for the objective
    of :func:`user_objective`, which makes :func:`fracalign.gradient_opt.gradient`
    the true Wirtinger gradient. These are nonnegative for every kind and
    include the ``1/eta`` factors the closed forms drop.

    The diagonal is zero in both cases.
    """
    kind = spec.kind_for(table.user_index)
    d = table.d
    n = d.shape[0]
    off = ~np.eye(n, dtype=bool)
    eta, r = spec.eta, spec.md_exponent
    if kind == "md" and np.any(d[off] <= 0):
        raise DegenerateDistanceError("minimum-distance weights need positive distances")
    if not exact:
        if kind == "ser":
            a = np.exp(-d)
        elif kind == "ber":
            a = space.beta * np.exp(-d)
        elif kind == "mi":
            a = np.exp(-d - logsumexp(-d, axis=1, keepdims=True))
        else:
            a = -r * np.where(off, d, 1.0) ** (-r - 1)
    else:
        if kind == "ser":
            a = _phi(d / eta) / eta
        elif kind == "ber":
            a = space.beta * _phi(d / eta) / eta
        elif kind == "mi":
            a = np.exp(-d / eta - logsumexp(-d / eta, axis=1, keepdims=True)) / (eta * _LN2)
        else:
            a = r * np.where(off, d, 1.0) ** (-r - 1)
    a = np.array(a, dtype=float)
    a[~off] = 0.0
    return a


def error_covariance(space: SymbolSpace, alpha: np.ndarray) -> np.ndarray:
    """``sum_{j,k} alpha[j,k] e_jk e_jk^H`` with ``e_jk = x_j - x_k``.

    ``alpha`` may carry leading batch axes.
    """
    x = space.vectors
    # expanded outer products; avoids the V^2 x n^2 tensor
    xt, xc = x.T, x.conj()
    at = np.swapaxes(alpha, -1, -2)
    weights = (alpha.sum(axis=-1) + alpha.sum(axis=-2))[..., None, :]
    E = (xt * weights) @ xc - xt @ (alpha + at) @ xc
    return 0.5 * (E + np.swapaxes(E, -1, -2).conj())


def log_user_terms(kind: str, d: np.ndarray, space: SymbolSpace, eta: float = 2.0,
                   md_exponent: float = 8.0):
    """``log f`` and ``log(-df/dd)`` of :func:`user_objective`, computed stably.

    At high SNR the SER, BER and MI objectives underflow to zero long
    before their minimizers are reached; working with logarithms keeps
    both the value and the derivative weights representable. The
    diagonal of the returned log-weights is ``-inf``.

    ``d`` may carry leading batch axes, ``(..., V, V)``; the value then
    has shape ``(...)``.
    """
    n = d.shape[-1]
    off = ~np.eye(n, dtype=bool)
    batch = d.shape[:-2]

    def total(a):
        out = _lse(a.reshape(batch + (-1,)), axis=-1)
        return float(out) if not batch else out

    if kind in ("ser", "ber"):
        x = d / eta
        log_q = np.where(off, log_ndtr(-x), -np.inf)
        log_a = np.where(off, -0.5 * x ** 2 - 0.5 * np.log(2 * np.pi) - np.log(eta), -np.inf)
        if kind == "ber":
            with np.errstate(divide="ignore"):
                lb = np.log(space.beta.astype(float))
            log_q, log_a = log_q + lb, log_a + lb
        return total(log_q), log_a
    if kind == "mi":
        z = -d / eta
        log_s = _lse(np.where(off, z, -np.inf), axis=-1)  # log sum_{k != j}
        s = np.exp(log_s)
        # log(log1p(s)) = log s + log(log1p(s) / s), the ratio tends to 1 as s -> 0
        ratio = np.where(s > 1e-8, np.log1p(s) / np.where(s > 0, s, 1.0), 1.0 - 0.5 * s)
        value = total(log_s + np.log(ratio)) - np.log(_LN2)
        log_a = z - _lse(z, axis=-1, keepdims=True) - np.log(eta * _LN2)
        return value, np.where(off, log_a, -np.inf)
    if kind == "md":
        if np.any(d[..., off] <= 0):
            raise DegenerateDistanceError("minimum-distance objective hit a zero distance")
        ld = np.log(np.where(off, d, 1.0))
        value = total(np.where(off, -md_exponent * ld, -np.inf))
        return value, np.where(off, np.log(md_exponent) - (md_exponent + 1) * ld, -np.inf)
    raise ValidationError(f"unknown objective kind {kind!r}")
