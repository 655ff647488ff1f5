"""Analytic gradients and conjugate-gradient precoder optimization.

Gradients follow the Wirtinger convention: :func:`gradient` returns
``dC/dQ_i*`` so that a perturbation ``dQ`` changes the objective by
``2 Re tr(grad^H dQ)`` to first order. The steepest-descent direction is
therefore ``-grad`` and the real inner product between two iterates is
``2 Re tr(A^H B)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .alignment import PrecoderSet, random_precoders, subspace_rank
from .constellation import SymbolSpace
from .exceptions import ValidationError
from .metrics import (
    DistanceTable,
    ObjectiveSpec,
    _lse,
    _table_from_kernel,
    alpha_weights,
    error_covariance,
    interference_covariance,
    log_user_terms,
    user_objective,
)

__all__ = [
    "OptimizerOptions",
    "OptimizeResult",
    "objective",
    "gradient",
    "all_gradients",
    "cgd_optimize",
    "optimize_multistart",
    "local_opt_structure_residual",
    "power_scaling_monotonicity_check",
    "reciprocal_rank_B",
    "finite_difference_check",
]

INIT_KINDS = ("ia", "fia", "random", "custom")


@dataclass(frozen=True)
class OptimizerOptions:
    """Settings of :func:`cgd_optimize`.

    The first trial step of every line search moves the iterate by
    ``initial_step`` times its own norm, which keeps the search
    independent of the objective's scale. With ``log_merit`` the descent
    runs on ``log C``, which has the same minimizers as ``C`` but does not
    underflow at high SNR; ``grad_tol`` then applies to the gradient of
    ``log C``. For users sitting on their power budget the outward radial
    part of the gradient is left out of the stopping test, since the
    projection cancels it anyway. ``random_restarts`` extra descents from
    random precoders are run by :func:`optimize_multistart`. A positive
    ``ftol`` also stops the descent once an accepted step lowers the merit
    by less than ``ftol * max(1, |merit|)``.
    """

    max_iters: int = 500
    grad_tol: float = 1e-6
    restart_period: int = 20
    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    max_shrinks: int = 40
    init: str = "ia"
    log_merit: bool = True
    ftol: float = 0.0
    random_restarts: int = 0

    def __post_init__(self):
        if self.max_iters < 0 or self.restart_period < 1 or self.max_shrinks < 1:
            raise ValidationError("max_iters, restart_period and max_shrinks must be positive")
        if self.random_restarts < 0:
            raise ValidationError(f"random_restarts must be nonnegative, got {self.random_restarts}")
        if self.ftol < 0:
            raise ValidationError(f"ftol must be nonnegative, got {self.ftol}")
        if not (self.grad_tol > 0 and self.initial_step > 0 and self.sufficient_decrease > 0):
            raise ValidationError("grad_tol, initial_step and sufficient_decrease must be positive")
        if not 0 < self.shrink < 1:
            raise ValidationError(f"shrink must lie in (0, 1), got {self.shrink}")
        if self.init not in INIT_KINDS:
            raise ValidationError(f"init must be one of {INIT_KINDS}, got {self.init!r}")


@dataclass
class OptimizeResult:
    """Outcome of :func:`cgd_optimize`.

    ``trace`` holds ``C`` after every accepted step (starting with the
    initial value) and ``merit`` the quantity actually minimized, which is
    ``log C`` under ``log_merit``. ``grad_norms`` are Frobenius norms of
    the gradient of ``C`` itself in either mode.
    """

    precoders: PrecoderSet
    trace: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    accepted_steps: int = 0
    stalled: bool = False
    converged: bool = False
    merit: list = field(default_factory=list)

    def __iter__(self):
        # allows ``precoders, trace = cgd_optimize(...)``
        return iter((self.precoders, self.trace))


def _mats(precoders) -> list[np.ndarray]:
    return [np.asarray(q) for q in precoders]


def _uniform(Qs, spec, spaces) -> bool:
    return (isinstance(spec.kind, str) and len({q.shape for q in Qs}) == 1
            and all(s is spaces[0] or (s.size == spaces[0].size
                                       and np.array_equal(s.vectors, spaces[0].vectors)
                                       and np.array_equal(s.beta, spaces[0].beta))
                    for s in spaces))


def _evaluate_stacked(H, Qs, spec, space, noise_variance, want_grad, log):
    """Vectorized :func:`_evaluate` for users sharing kind, shape and alphabet."""
    K, N = H.shape[0], H.shape[2]
    Q = np.stack(Qs)
    own_link = np.arange(K)
    HQ = np.einsum("ijab,jbc->ijac", H, Q)
    S = HQ @ np.swapaxes(HQ, -1, -2).conj()
    R = S.sum(axis=1) - S[own_link, own_link] + noise_variance * np.eye(N)
    A = HQ[own_link, own_link]
    RiA = np.linalg.solve(R, A)
    kern = np.swapaxes(A, -1, -2).conj() @ RiA
    d = _table_from_kernel(0.5 * (kern + np.swapaxes(kern, -1, -2).conj()), space)
    if log:
        values, log_a = log_user_terms(spec.kind, d, space, spec.eta, spec.md_exponent)
        total = float(_lse(values))
    else:
        values = [user_objective(spec.kind, d[i], space, spec.eta, spec.md_exponent) for i in range(K)]
        total = float(sum(values))
    if not want_grad:
        return total, None
    if log:
        alpha = np.exp(log_a - total)
    else:
        alpha = np.stack([alpha_weights(spec, DistanceTable(i, d[i]), space, exact=True)
                          for i in range(K)])
    E = error_covariance(space, alpha)
    own = RiA @ E
    W = own @ np.swapaxes(RiA, -1, -2).conj()
    Hh = np.swapaxes(H, -1, -2).conj()
    leak = Hh @ W[:, None] @ H  # leak[l, i] = H_li^H W_l H_li
    leak[own_link, own_link] = 0.0
    grads = leak.sum(axis=0) @ Q - Hh[own_link, own_link] @ own
    return total, list(grads)


def _evaluate(H, Qs, spec, spaces, noise_variance, want_grad=True, log=False, stacked=None):
    """Objective and, optionally, every user's gradient with shared work.

    With ``log=True`` the value is ``log C`` and the gradients are those of
    ``log C``; both stay finite when ``C`` itself underflows.
    """
    if stacked is None:
        stacked = _uniform(Qs, spec, spaces)
    if stacked:
        return _evaluate_stacked(H, Qs, spec, spaces[0], noise_variance, want_grad, log)
    K = H.shape[0]
    values, parts = [], []
    for i in range(K):
        R = interference_covariance(i, H, Qs, noise_variance)
        A = H[i, i] @ Qs[i]
        RiA = np.linalg.solve(R, A)
        kern = A.conj().T @ RiA
        d = _table_from_kernel(0.5 * (kern + kern.conj().T), spaces[i])
        kind = spec.kind_for(i)
        if log:
            value, log_a = log_user_terms(kind, d, spaces[i], spec.eta, spec.md_exponent)
            parts.append((RiA, log_a))
        else:
            value = user_objective(kind, d, spaces[i], spec.eta, spec.md_exponent)
            parts.append((RiA, d))
        values.append(value)
    total = float(_lse(np.array(values))) if log else float(sum(values))
    if not want_grad:
        return total, None
    # W_l = R_l^-1 A_l E_l A_l^H R_l^-1 is the sensitivity of user l to R_l
    Ws, own = [], []
    for l in range(K):
        RiA, aux = parts[l]
        if log:
            # d(log C)/dd = (dC/dd) / C
            alpha = np.exp(aux - total)
        else:
            alpha = alpha_weights(spec, DistanceTable(l, aux), spaces[l], exact=True)
        E = error_covariance(spaces[l], alpha)
        Ws.append(RiA @ E @ RiA.conj().T)
        own.append(RiA @ E)
    grads = []
    for i in range(K):
        g = -H[i, i].conj().T @ own[i]
        for l in range(K):
            if l != i:
                g = g + H[l, i].conj().T @ Ws[l] @ H[l, i] @ Qs[i]
        grads.append(g)
    return total, grads


def objective(channels, precoders, spec: ObjectiveSpec, spaces: Sequence[SymbolSpace],
              noise_variance: float) -> float:
    """Total objective ``C`` of a precoder set."""
    return _evaluate(np.asarray(channels.matrices if hasattr(channels, "matrices") else channels),
                     _mats(precoders), spec, spaces, noise_variance, want_grad=False)[0]


def all_gradients(channels, precoders, spec: ObjectiveSpec, spaces: Sequence[SymbolSpace],
                  noise_variance: float) -> list[np.ndarray]:
    H = channels.matrices if hasattr(channels, "matrices") else np.asarray(channels)
    return _evaluate(H, _mats(precoders), spec, spaces, noise_variance)[1]


def gradient(i: int, channels, precoders, spec: ObjectiveSpec, spaces: Sequence[SymbolSpace],
             noise_variance: float) -> np.ndarray:
    """``dC/dQ_i*``: the own-link term plus the leakage into every other receiver.

    ``-H_ii^H R_i^-1 H_ii Q_i E_i
    + sum_{l != i} H_li^H R_l^-1 H_ll Q_l E_l Q_l^H H_ll^H R_l^-1 H_li Q_i``

    with ``E_l`` built from the exact weights ``-dC/dd``. The power
    constraint is not part of the gradient; :func:`cgd_optimize` enforces
    it by projection.
    """
    return all_gradients(channels, precoders, spec, spaces, noise_variance)[i]


def _inner(a: list, b: list) -> float:
    return float(sum(2 * np.vdot(x, y).real for x, y in zip(a, b)))


def _objective_gnorm(merit: float, gnorm: float, log: bool) -> float:
    # grad C = C grad log C
    return float(np.exp(merit) * gnorm) if log else gnorm


def _kkt_norm(g, Qs, max_power) -> float:
    """Gradient norm with the outward radial part removed at full-power users."""
    total = 0.0
    for x, q, P in zip(g, Qs, max_power):
        tau = np.vdot(q, q).real
        radial = np.vdot(q, x).real
        if tau >= P * (1 - 1e-9) and radial < 0:
            # -x would raise the power past the budget; only the tangent part counts
            x = x - (radial / tau) * q
        total += np.vdot(x, x).real
    return float(np.sqrt(total))


def _project(Qs, max_power):
    out = []
    for q, P in zip(Qs, max_power):
        tau = np.vdot(q, q).real
        out.append(q * np.sqrt(P / tau) if tau > P else q)
    return out


def cgd_optimize(channels, init: PrecoderSet, spec: ObjectiveSpec, spaces: Sequence[SymbolSpace],
                 noise_variance: float, opts: OptimizerOptions | None = None,
                 max_power: Sequence[float] | None = None) -> OptimizeResult:
    """Polak-Ribiere conjugate gradient descent on the stacked precoders.

    Every trial point is projected onto the per-user power balls and
    accepted under an Armijo condition measured along the projected step,
    so the returned ``trace`` of objective values never increases.

    Parameters
    ----------
    channels : ChannelSet
    init : PrecoderSet
        Starting point; must satisfy the power budgets.
    spec : ObjectiveSpec
    spaces : sequence of SymbolSpace
        One enumeration per user.
    noise_variance : float
    opts : OptimizerOptions, optional
    max_power : sequence of float, optional
        Per-user budgets; all ones by default.

    Returns
    -------
    OptimizeResult
        ``stalled`` is set when a line search fails to decrease the
        objective after ``opts.max_shrinks`` halvings.
    """
    opts = opts or OptimizerOptions()
    H = channels.matrices if hasattr(channels, "matrices") else np.asarray(channels)
    K = H.shape[0]
    P = tuple(max_power) if max_power is not None else (1.0,) * K
    init.check(P)
    Q = _mats(init)
    log = opts.log_merit
    stacked = _uniform(Q, spec, spaces)
    C, g = _evaluate(H, Q, spec, spaces, noise_variance, log=log, stacked=stacked)
    gnorm = np.sqrt(_inner(g, g) / 2)
    kkt = _kkt_norm(g, Q, P)
    res = OptimizeResult(init, [float(np.exp(C)) if log else C], [_objective_gnorm(C, gnorm, log)],
                         merit=[C])
    direction = [-x for x in g]
    g_prev = g
    since_restart = 0
    last_move = opts.initial_step
    for it in range(opts.max_iters):
        if kkt <= opts.grad_tol:
            res.converged = True
            break
        slope = _inner(g, direction)
        if slope >= 0:
            direction = [-x for x in g]
            slope = _inner(g, direction)
            since_restart = 0
        qnorm = np.sqrt(sum(np.vdot(q, q).real for q in Q))
        dnorm = np.sqrt(sum(np.vdot(x, x).real for x in direction))
        # relative move of the first trial; grows back after short steps
        rel = min(opts.initial_step, 2.0 * last_move)
        t = rel * qnorm / dnorm
        accepted = False
        for _ in range(opts.max_shrinks):
            trial = _project([q + t * x for q, x in zip(Q, direction)], P)
            step = [a - b for a, b in zip(trial, Q)]
            C_new = _evaluate(H, trial, spec, spaces, noise_variance, want_grad=False, log=log,
                              stacked=stacked)[0]
            if C_new <= C + opts.sufficient_decrease * _inner(g, step) and C_new < C:
                accepted = True
                break
            t *= opts.shrink
            rel *= opts.shrink
        if not accepted:
            if since_restart > 0:
                # retry once along steepest descent before giving up
                direction = [-x for x in g]
                since_restart = 0
                continue
            res.stalled = True
            break
        Q = trial
        last_move = rel
        C_old = C
        C, g_new = _evaluate(H, Q, spec, spaces, noise_variance, log=log, stacked=stacked)
        res.accepted_steps += 1
        since_restart += 1
        if since_restart >= opts.restart_period:
            beta = 0.0
            since_restart = 0
        else:
            y = [a - b for a, b in zip(g_new, g_prev)]
            beta = max(0.0, _inner(g_new, y) / _inner(g_prev, g_prev))
        direction = [-a + beta * b for a, b in zip(g_new, direction)]
        g = g_prev = g_new
        gnorm = np.sqrt(_inner(g, g) / 2)
        kkt = _kkt_norm(g, Q, P)
        res.trace.append(float(np.exp(C)) if log else C)
        res.merit.append(C)
        res.grad_norms.append(_objective_gnorm(C, gnorm, log))
        if C_old - C <= opts.ftol * max(1.0, abs(C)):
            res.converged = True
            break
    else:
        res.converged = kkt <= opts.grad_tol
    if res.accepted_steps:
        res.precoders = PrecoderSet(tuple(Q), "optimized", init.flags,
                                    {"objective": spec.kind, "init_scheme": init.scheme_tag})
    return res


def optimize_multistart(channels, init: PrecoderSet, spec: ObjectiveSpec,
                        spaces: Sequence[SymbolSpace], noise_variance: float,
                        opts: OptimizerOptions | None = None,
                        max_power: Sequence[float] | None = None,
                        rng: np.random.Generator | None = None) -> OptimizeResult:
    """Best of a descent from ``init`` and ``opts.random_restarts`` random starts.

    The objective is multimodal; random starts are drawn from ``rng`` at
    full power and the run with the lowest final objective is returned.
    """
    opts = opts or OptimizerOptions()
    best = cgd_optimize(channels, init, spec, spaces, noise_variance, opts, max_power)
    if opts.random_restarts:
        rng = rng if rng is not None else np.random.default_rng(0)
        dim = init[0].shape[0]
        for _ in range(opts.random_restarts):
            start = random_precoders(dim, init.streams, rng, max_power)
            run = cgd_optimize(channels, start, spec, spaces, noise_variance, opts, max_power)
            if run.merit[-1] < best.merit[-1]:
                best = run
    return best


def finite_difference_check(channels, precoders, spec: ObjectiveSpec, spaces: Sequence[SymbolSpace],
                            noise_variance: float, rng: np.random.Generator, n_coords: int = 20,
                            h: float = 1e-5, log: bool = False) -> float:
    """Max relative error of the analytic gradient against central differences.

    ``n_coords`` random (user, entry, real-or-imaginary) coordinates are
    perturbed by ``+-h``; the directional derivative along a real
    perturbation is ``2 Re grad`` and along an imaginary one ``2 Im grad``.
    With ``log=True`` the check is run on ``log C`` instead.
    """
    H = channels.matrices if hasattr(channels, "matrices") else np.asarray(channels)
    Q = _mats(precoders)
    grads = _evaluate(H, Q, spec, spaces, noise_variance, log=log)[1]
    worst = 0.0
    for _ in range(n_coords):
        u = int(rng.integers(len(Q)))
        r, c = (int(rng.integers(s)) for s in Q[u].shape)
        imag = bool(rng.integers(2))
        delta = 1j * h if imag else h
        vals = []
        for sign in (1, -1):
            Qp = [q.copy() for q in Q]
            Qp[u][r, c] += sign * delta
            vals.append(_evaluate(H, Qp, spec, spaces, noise_variance, want_grad=False, log=log)[0])
        fd = (vals[0] - vals[1]) / (2 * h)
        an = 2 * (grads[u][r, c].imag if imag else grads[u][r, c].real)
        scale = max(abs(an), abs(fd), 1e-300)
        worst = max(worst, abs(an - fd) / scale)
    return worst


def _sorted_eigh(a: np.ndarray):
    w, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def _repeated(w: np.ndarray, rtol: float = 1e-9) -> bool:
    scale = max(np.max(np.abs(w)), 1e-300)
    return bool(np.any(np.abs(np.diff(w)) <= rtol * scale))


def local_opt_structure_residual(channels, precoders, spec: ObjectiveSpec,
                                 spaces: Sequence[SymbolSpace], noise_variance: float):
    """How far each ``Q_i`` is from the form ``U_H Lambda U_E^H``.

    ``U_H`` holds the eigenvectors of ``H_ii^H R_i^-1 H_ii`` and ``U_E``
    those of the error covariance ``E_i``, both in descending eigenvalue
    order. The residual is the energy of ``U_H^H Q_i U_E`` outside its
    strongest one-to-one pairing of rows and columns (a diagonal up to
    permutation), over its total energy.

    Returns
    -------
    residuals : list of float
    degenerate : list of bool
        True where either eigenbasis has repeated eigenvalues, in which
        case the residual depends on an arbitrary basis choice.
    """
    H = channels.matrices if hasattr(channels, "matrices") else np.asarray(channels)
    Q = _mats(precoders)
    residuals, degenerate = [], []
    for i in range(H.shape[0]):
        R = interference_covariance(i, H, Q, noise_variance)
        Hi = H[i, i]
        wh, UH = _sorted_eigh(Hi.conj().T @ np.linalg.solve(R, Hi))
        A = Hi @ Q[i]
        kern = A.conj().T @ np.linalg.solve(R, A)
        d = _table_from_kernel(0.5 * (kern + kern.conj().T), spaces[i])
        E = error_covariance(spaces[i], alpha_weights(spec, DistanceTable(i, d), spaces[i], exact=True))
        we, UE = _sorted_eigh(E)
        P = np.abs(UH.conj().T @ Q[i] @ UE) ** 2
        # modes may pair up in any order, so keep the best one-to-one matching
        rows, cols = linear_sum_assignment(P, maximize=True)
        total = P.sum()
        residuals.append(float((total - P[rows, cols].sum()) / total) if total > 0 else 0.0)
        degenerate.append(_repeated(wh) or _repeated(we))
    return residuals, degenerate


def power_scaling_monotonicity_check(channels, precoders, spec: ObjectiveSpec,
                                     spaces: Sequence[SymbolSpace], noise_variance: float,
                                     eps_grid: Sequence[float] = (0.01, 0.05, 0.1)):
    """Whether shrinking every precoder by ``sqrt(1 - eps)`` raises ``C``.

    Returns a dict ``eps -> bool``, or ``None`` when some precoder is
    identically zero (the excluded degenerate point).
    """
    Q = _mats(precoders)
    if any(not np.any(q) for q in Q):
        return None
    base = objective(channels, Q, spec, spaces, noise_variance)
    out = {}
    for eps in eps_grid:
        scaled = [np.sqrt(1 - eps) * q for q in Q]
        out[float(eps)] = objective(channels, scaled, spec, spaces, noise_variance) > base
    return out


def reciprocal_rank_B(channels, precoders, noise_variance: float, tol: float = 1e-8) -> list[int]:
    """Rank of ``{H_ji^H R_j^-1 H_jj Q_j : j != i}`` for every user ``i``.

    These are the LMMSE combiners of the other receivers seen through the
    reciprocal channels; at an aligned point they collapse to ``M/2``
    dimensions as the noise vanishes.
    """
    H = channels.matrices if hasattr(channels, "matrices") else np.asarray(channels)
    Q = _mats(precoders)
    K = H.shape[0]
    G = [np.linalg.solve(interference_covariance(j, H, Q, noise_variance), H[j, j] @ Q[j])
         for j in range(K)]
    return [subspace_rank([H[j, i].conj().T @ G[j] for j in range(K) if j != i], tol)
            for i in range(K)]
