"""Closed-form alignment precoders and subspace diagnostics.

The constructions here are purely channel driven (noise free). Three-user
MIMO designs pick eigenvectors of the cycle map

    T = H[1,2]^-1 H[1,0] H[2,0]^-1 H[2,1] H[0,1]^-1 H[0,2]

(users indexed from 0), which makes the interference at every receiver
collapse onto ``d`` dimensions while the desired signal still sticks out of
that subspace whenever ``d <= M - 1``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ConditioningError, InfeasibleError, SelectionError, ValidationError
from .scenario import ChannelSet

__all__ = [
    "PrecoderSet",
    "AlignmentReport",
    "subspace_rank",
    "fia_3user_mimo",
    "ia_3user_closed_form",
    "fia_3user_siso",
    "kuser_siso_asymptotic",
    "select_spac_columns",
    "check_fia_constraints",
    "normalize_power",
    "random_precoders",
    "DEFAULT_RANK_TOL",
]

DEFAULT_RANK_TOL = 1e-8
MAX_CONDITION = 1e12
SCHEME_TAGS = ("ia", "fia-mimo", "fia-siso", "kuser-asymptotic", "optimized", "min-mse", "custom")


@dataclass(frozen=True)
class PrecoderSet:
    """One precoder per user plus bookkeeping.

    Attributes
    ----------
    matrices : tuple of ndarray
        ``matrices[i]`` has shape ``(N, n_i)``.
    scheme_tag : str
    flags : tuple of str
        Diagnostics raised while building the set (e.g. zero precoders
        left unnormalized).
    info : dict
        Construction-specific metadata.
    """

    matrices: tuple
    scheme_tag: str = "custom"
    flags: tuple = ()
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        mats = []
        for q in self.matrices:
            q = np.array(q, dtype=complex)
            if q.ndim == 1:
                q = q[:, None]
            q.setflags(write=False)
            mats.append(q)
        object.__setattr__(self, "matrices", tuple(mats))
        if self.scheme_tag not in SCHEME_TAGS:
            raise ValidationError(f"unknown scheme tag {self.scheme_tag!r}")

    def __len__(self):
        return len(self.matrices)

    def __getitem__(self, i) -> np.ndarray:
        return self.matrices[i]

    def __iter__(self):
        return iter(self.matrices)

    @property
    def streams(self) -> tuple[int, ...]:
        return tuple(q.shape[1] for q in self.matrices)

    @property
    def powers(self) -> np.ndarray:
        """``trace(Q_i Q_i^H)`` per user."""
        return np.array([np.vdot(q, q).real for q in self.matrices])

    @property
    def spac(self) -> tuple[float, ...]:
        """Streams per signal dimension, per user."""
        return tuple(q.shape[1] / q.shape[0] for q in self.matrices)

    def replace(self, matrices=None, **kwargs) -> "PrecoderSet":
        return PrecoderSet(self.matrices if matrices is None else tuple(matrices),
                           kwargs.get("scheme_tag", self.scheme_tag),
                           kwargs.get("flags", self.flags),
                           kwargs.get("info", dict(self.info)))

    def check(self, max_power: Sequence[float], rtol: float = 1e-10) -> None:
        """Raise ValidationError unless power budgets and full column rank hold."""
        for i, (q, p) in enumerate(zip(self.matrices, max_power)):
            tau = np.vdot(q, q).real
            if tau > p + 1e-9:
                raise ValidationError(f"precoder {i} power {tau:.6g} exceeds budget {p:.6g}")
            s = np.linalg.svd(q, compute_uv=False)
            if s[0] == 0 or s[-1] <= rtol * s[0]:
                raise ValidationError(f"precoder {i} is not full column rank")


@dataclass(frozen=True)
class AlignmentReport:
    """Subspace dimensions observed at one receiver."""

    receiver: int
    interference_dim: int
    joint_dim: int
    signal_not_contained: bool
    tol: float
    dim: int

    @property
    def interference_deficient(self) -> bool:
        """Interference leaves at least one dimension free."""
        return self.interference_dim < self.dim

    @property
    def full_joint(self) -> bool:
        """Signal plus interference fill the whole receive space."""
        return self.joint_dim == self.dim


def subspace_rank(columns: Sequence[np.ndarray], tol: float = DEFAULT_RANK_TOL) -> int:
    """Numerical rank of the horizontally stacked ``columns``.

    Singular values above ``tol`` times the largest one are counted. An
    empty list, or an all-zero stack, has rank 0.
    """
    mats = [np.atleast_2d(np.asarray(c)) if np.ndim(c) != 1 else np.asarray(c)[:, None]
            for c in columns]
    mats = [m for m in mats if m.size]
    if not mats:
        return 0
    s = np.linalg.svd(np.hstack(mats), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def _inv(H: np.ndarray, name: str) -> np.ndarray:
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise ConditioningError(f"{name} is ill-conditioned (condition number {cond:.3g})")
    return np.linalg.inv(H)


def _scale_to(q: np.ndarray, power: float) -> np.ndarray:
    tau = np.vdot(q, q).real
    if tau == 0:
        return q
    return q * np.sqrt(power / tau)


def _orth(a: np.ndarray) -> np.ndarray:
    # span-preserving re-basis; keeps Krylov-type column sets well scaled
    q, _ = np.linalg.qr(a)
    return q


def _powers(channels: ChannelSet, max_power) -> tuple[float, ...]:
    if max_power is None:
        return (1.0,) * channels.num_users
    return tuple(float(p) for p in max_power)


def _require_three_users(channels: ChannelSet):
    if channels.num_users != 3:
        raise ValidationError(f"construction needs K = 3, got K = {channels.num_users}")


def cycle_map(channels: ChannelSet) -> np.ndarray:
    """The three-user cycle map ``T`` whose invariant subspaces align interference."""
    _require_three_users(channels)
    H = channels.matrices
    return (_inv(H[1, 2], "H[1,2]") @ H[1, 0] @ _inv(H[2, 0], "H[2,0]") @ H[2, 1]
            @ _inv(H[0, 1], "H[0,1]") @ H[0, 2])


def fia_3user_mimo(channels: ChannelSet, columns: int, max_power=None,
                   orthonormal: bool = False) -> PrecoderSet:
    """Three-user MIMO alignment with ``columns`` streams per user.

    ``Q_2`` holds the ``columns`` eigenvectors of the cycle map with the
    largest eigenvalue magnitudes (unit norm); ``Q_1 = H[0,1]^-1 H[0,2] Q_2``
    and ``Q_0 = H[1,0]^-1 H[1,2] Q_2``. Each precoder is scaled to its full
    power budget. Interference occupies ``columns`` dimensions at every
    receiver, so ``columns = M - 1`` gives SpAC ``(M-1)/M``.

    Alignment depends only on the column spans, so ``orthonormal=True``
    replaces every precoder by an orthonormal basis of its span (before
    power scaling) without changing any subspace dimension.

    Raises
    ------
    ConditioningError
        If a channel that must be inverted has condition number above 1e12.
    """
    _require_three_users(channels)
    M = channels.dim
    if channels.block_size != M:
        raise ValidationError("fia_3user_mimo needs channels without symbol extension")
    if M < 2 or not 1 <= columns <= M - 1:
        raise ValidationError(f"need M >= 2 and 1 <= columns <= M-1, got M={M}, columns={columns}")
    H = channels.matrices
    T = cycle_map(channels)
    vals, vecs = np.linalg.eig(T)
    order = np.argsort(-np.abs(vals), kind="stable")
    q2 = vecs[:, order[:columns]]
    q2 = q2 / np.linalg.norm(q2, axis=0)
    q1 = _inv(H[0, 1], "H[0,1]") @ H[0, 2] @ q2
    q0 = _inv(H[1, 0], "H[1,0]") @ H[1, 2] @ q2
    qs = (q0, q1, q2)
    if orthonormal:
        qs = tuple(_orth(q) for q in qs)
    P = _powers(channels, max_power)
    mats = [_scale_to(q, p) for q, p in zip(qs, P)]
    return PrecoderSet(tuple(mats), "fia-mimo",
                       info={"eigenvalues": vals[order], "columns": columns})


def ia_3user_closed_form(channels: ChannelSet, max_power=None) -> PrecoderSet:
    """Conventional three-user IA with ``M/2`` streams per user.

    Uses the MIMO construction with orthonormal precoder columns, so every
    stream carries the same power.
    """
    M = channels.dim
    if M % 2:
        raise ValidationError(f"closed-form IA needs an even number of antennas, got {M}")
    p = fia_3user_mimo(channels, M // 2, max_power=max_power, orthonormal=True)
    return p.replace(scheme_tag="ia")


def fia_3user_siso(channels: ChannelSet, M: int | None = None, max_power=None) -> PrecoderSet:
    """Three-user SISO alignment over a symbol extension of ``M``.

    With ``T`` the cycle map and ``w`` the all-ones vector,
    ``A = [Tw .. T^(M-2) w]``, ``B = [Tw .. T^(M-1) w]`` and
    ``C = [w .. T^(M-2) w]``; then ``Q_2 = A``, ``Q_0 = H[1,0]^-1 H[1,2] B``
    and ``Q_1 = H[0,1]^-1 H[0,2] C``. Stream counts are
    ``(M-1, M-1, M-2)`` and interference occupies ``M - 1`` dimensions at
    every receiver.
    """
    _require_three_users(channels)
    if M is None:
        M = channels.dim
    if channels.dim != M or channels.block_size != 1:
        raise ValidationError("fia_3user_siso needs diagonal channels of size M")
    if M < 3:
        raise ValidationError(f"fia_3user_siso needs M >= 3, got {M}")
    H = channels.matrices
    T = cycle_map(channels)
    w = np.ones(M, dtype=complex)
    krylov = [w]
    for _ in range(M - 1):
        v = T @ krylov[-1]
        krylov.append(v / np.linalg.norm(v))
    K = np.column_stack(krylov)  # columns span T^k w, k = 0..M-1
    A = _orth(K[:, 1:M - 1])
    B = _orth(K[:, 1:M])
    C = _orth(K[:, 0:M - 1])
    q2 = A
    q0 = _inv(H[1, 0], "H[1,0]") @ H[1, 2] @ B
    q1 = _inv(H[0, 1], "H[0,1]") @ H[0, 2] @ C
    P = _powers(channels, max_power)
    mats = [_scale_to(q, p) for q, p in zip((q0, q1, q2), P)]
    return PrecoderSet(tuple(mats), "fia-siso", info={"M": M})


def _distinct_maps(channels: ChannelSet):
    """Cross-link maps onto user 0's signal space, deduplicated.

    Returns ``(maps, index)`` where ``maps`` is a list of diagonal vectors
    and ``index[(i, j)]`` names the map that carries ``S`` into the
    interference user ``j`` causes at receiver ``i``.
    """
    H = channels.matrices
    K = channels.num_users
    d = np.array([[np.diag(H[i, j]) for j in range(K)] for i in range(K)])
    if np.any(np.abs(d) == 0):
        raise ConditioningError("diagonal channel has a zero entry")
    # Q_1 = (d[2,0]/d[2,1]) Q_0 ; Q_j = (d[1,0]/d[1,j]) Q_0 for j >= 2
    rel = [np.ones(channels.dim, dtype=complex), d[2, 0] / d[2, 1]]
    rel += [d[1, 0] / d[1, j] for j in range(2, K)]
    maps, index = [], {}
    for i in range(K):
        for j in range(K):
            if i == j:
                continue
            t = d[i, j] * rel[j]
            for m, u in enumerate(maps):
                if np.allclose(t, u, rtol=1e-12, atol=0):
                    index[(i, j)] = m
                    break
            else:
                index[(i, j)] = len(maps)
                maps.append(t)
    return maps, index, rel


def _interference_monomials(box, index, K, i):
    out = set()
    for j in range(K):
        if j == i:
            continue
        m = index[(i, j)]
        for a in box:
            b = list(a)
            b[m] += 1
            out.add(tuple(b))
    return out


def kuser_siso_asymptotic(channels: ChannelSet, M: int | None = None, max_power=None,
                          tol: float = DEFAULT_RANK_TOL) -> PrecoderSet:
    """Finite truncation of the K-user shared-subspace construction.

    Every transmitter uses the span of ``prod_m T_m^(a_m) w`` over
    exponent vectors ``a`` in ``{0..n}^kappa``, where ``T_m`` are the
    distinct cross-link maps and ``w`` is all ones. ``n`` is the largest
    order for which every receiver's interference (counted exactly as a
    set of monomials) fits in ``M - 1`` dimensions. ``info`` carries
    ``kappa``, ``n``, the per-receiver reports and the achieved SpAC.

    Raises
    ------
    InfeasibleError
        If even ``n = 0`` cannot keep the interference below ``M``
        dimensions.
    """
    K = channels.num_users
    if M is None:
        M = channels.dim
    if K < 3:
        raise ValidationError(f"needs K >= 3, got {K}")
    if channels.dim != M or channels.block_size != 1 or M < 2:
        raise ValidationError("needs diagonal channels of size M >= 2")
    maps, index, rel = _distinct_maps(channels)
    kappa = len(maps)

    def count(n):
        box = list(itertools.product(range(n + 1), repeat=kappa))
        return box, max(len(_interference_monomials(box, index, K, i)) for i in range(K))

    n, (box, c) = 0, count(0)
    if c > M - 1 or len(box) > M:
        raise InfeasibleError(
            f"M = {M} too small: order-0 interference needs {c} + 1 dimensions")
    while (n + 2) ** kappa <= M:
        nxt_box, nxt_c = count(n + 1)
        if nxt_c > M - 1:
            break
        n, box, c = n + 1, nxt_box, nxt_c

    logs = np.log(np.array(maps))  # (kappa, M); entries are nonzero
    expo = np.array(box, dtype=float)  # (|S|, kappa)
    S = np.exp(expo @ logs).T  # column for each monomial applied to w = 1
    S = S / np.linalg.norm(S, axis=0)
    u, s, _ = np.linalg.svd(S, full_matrices=False)
    r = int(np.sum(s > tol * s[0]))
    basis = u[:, :r]
    P = _powers(channels, max_power)
    mats = [_scale_to(rel[j][:, None] * basis, P[j]) for j in range(K)]
    pset = PrecoderSet(tuple(mats), "kuser-asymptotic")
    reports = check_fia_constraints(channels, pset, tol=tol)
    info = {
        "kappa": kappa,
        "order": n,
        "signal_dim": r,
        "predicted_interference_dim": c,
        "spac": r / M,
        "reports": reports,
        "interference_deficient": all(rep.interference_deficient for rep in reports),
        "full_joint": all(rep.full_joint for rep in reports),
    }
    return pset.replace(info=info)


def select_spac_columns(p: PrecoderSet, keep: Sequence[Sequence[int]]) -> PrecoderSet:
    """Keep a column subset of every precoder.

    Each reduced precoder is rescaled to the power the full one had, so
    keeping every column returns the same set.
    """
    if len(keep) != len(p):
        raise SelectionError(f"need {len(p)} column lists, got {len(keep)}")
    mats = []
    for i, (q, cols) in enumerate(zip(p.matrices, keep)):
        cols = list(cols)
        if not cols:
            raise SelectionError(f"empty column selection for user {i}")
        if len(set(cols)) != len(cols) or min(cols) < 0 or max(cols) >= q.shape[1]:
            raise SelectionError(f"invalid columns {cols} for user {i} with {q.shape[1]} columns")
        mats.append(_scale_to(q[:, cols], np.vdot(q, q).real))
    return p.replace(mats)


def check_fia_constraints(channels: ChannelSet, p: PrecoderSet,
                          tol: float = DEFAULT_RANK_TOL) -> list[AlignmentReport]:
    """Interference and joint subspace dimensions at every receiver."""
    H = channels.matrices
    K = channels.num_users
    if len(p) != K:
        raise ValidationError(f"{len(p)} precoders for {K} users")
    reports = []
    for i in range(K):
        interf = [H[i, j] @ p[j] for j in range(K) if j != i]
        idim = subspace_rank(interf, tol)
        jdim = subspace_rank([H[i, i] @ p[i]] + interf, tol)
        reports.append(AlignmentReport(i, idim, jdim, jdim > idim, tol, channels.dim))
    return reports


def normalize_power(p: PrecoderSet, max_power: Sequence[float]) -> PrecoderSet:
    """Scale every precoder above its budget back onto it.

    Precoders within budget are untouched. All-zero precoders are left as
    they are and flagged.
    """
    mats, flags = [], list(p.flags)
    for i, (q, P) in enumerate(zip(p.matrices, max_power)):
        if not P > 0:
            raise ValidationError(f"max_power[{i}] must be positive")
        tau = np.vdot(q, q).real
        if tau == 0:
            flags.append(f"zero-precoder:{i}")
            mats.append(q)
        elif tau > P:
            mats.append(q * np.sqrt(P / tau))
        else:
            mats.append(q)
    return p.replace(mats, flags=tuple(flags))


def random_precoders(dim: int, streams: Sequence[int], rng: np.random.Generator,
                     max_power=None) -> PrecoderSet:
    """Gaussian precoders scaled to their full power budgets."""
    P = (1.0,) * len(streams) if max_power is None else max_power
    mats = [_scale_to(rng.standard_normal((dim, n)) + 1j * rng.standard_normal((dim, n)), pw)
            for n, pw in zip(streams, P)]
    return PrecoderSet(tuple(mats), "custom")
