"""Monte Carlo BER sweeps, the Min-MSE baseline and floor detection.

Random numbers are split per channel realization from the master seed,
independently of the scheme under test. Two sweeps that differ only in
their scheme therefore see the same channels, symbols and noise (common
random numbers), which makes paired SNR-gain comparisons cheap.
"""

from __future__ import annotations

import csv
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .alignment import (
    PrecoderSet,
    check_fia_constraints,
    fia_3user_mimo,
    fia_3user_siso,
    ia_3user_closed_form,
    kuser_siso_asymptotic,
    random_precoders,
)
from .constellation import enumerate_vectors, get_constellation
from .exceptions import FracAlignError, ValidationError
from .gradient_opt import OptimizerOptions, optimize_multistart
from .metrics import ObjectiveSpec, interference_covariance
from .receivers import lmmse_detect_batch, md_detect_batch
from .scenario import ChannelSet, Scenario, draw_channels

__all__ = [
    "SweepConfig",
    "SimResult",
    "run_ber_sweep",
    "min_mse_baseline",
    "sum_mse",
    "interference_leakage",
    "detect_floor",
    "snr_at_ber",
    "snr_gain",
    "design_precoders",
    "write_sweep_csv",
    "SCHEMES",
    "RECEIVERS",
]

SCHEMES = ("ia", "fia-mimo", "fia-siso", "kuser-asymptotic", "eia-optimized", "min-mse-baseline")
RECEIVERS = ("md", "lmmse")
_Z95 = 1.959963984540054


@dataclass(frozen=True)
class SweepConfig:
    """Everything that determines one BER sweep.

    Parameters
    ----------
    scenario : Scenario
        Its ``noise_variance`` is ignored; the SNR grid sets it.
    snr_db_grid : sequence of float
        SNR is ``1 / noise_variance``.
    channel_realizations, symbols_per_realization : int
    scheme : str
        One of :data:`SCHEMES`.
    receiver : {"md", "lmmse"}
    seed : int
    constellation : str
    objective : ObjectiveSpec
        Used by ``eia-optimized``.
    optimizer : OptimizerOptions
        Used by ``eia-optimized``.
    fia_columns : int, optional
        Columns of the ``fia-mimo`` design; defaults to the first user's
        stream count.
    baseline_iters : int
        Iteration cap of the Min-MSE baseline.
    n_jobs : int
        Worker processes; realizations are distributed among them.
    """

    scenario: Scenario
    snr_db_grid: tuple
    channel_realizations: int
    symbols_per_realization: int
    scheme: str
    receiver: str = "md"
    seed: int = 0
    constellation: str = "qpsk"
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    fia_columns: int | None = None
    baseline_iters: int = 500
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "snr_db_grid", tuple(float(s) for s in self.snr_db_grid))
        if not self.snr_db_grid:
            raise ValidationError("snr_db_grid must not be empty")
        if self.channel_realizations < 1 or self.symbols_per_realization < 1:
            raise ValidationError("channel_realizations and symbols_per_realization must be positive")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.receiver not in RECEIVERS:
            raise ValidationError(f"receiver must be one of {RECEIVERS}, got {self.receiver!r}")
        if self.n_jobs < 1:
            raise ValidationError("n_jobs must be positive")
        get_constellation(self.constellation)


@dataclass
class SimResult:
    """Error counts per SNR point, accumulated over all realizations."""

    snr_db: np.ndarray
    bit_errors: np.ndarray
    bits: np.ndarray
    symbol_errors: np.ndarray
    symbols: np.ndarray
    interference_dims: list = field(default_factory=list)
    skipped: int = 0
    wall_time: float = 0.0
    scheme: str = ""
    receiver: str = ""

    @property
    def ber(self) -> np.ndarray:
        return self.bit_errors / np.maximum(self.bits, 1)

    @property
    def ser(self) -> np.ndarray:
        return self.symbol_errors / np.maximum(self.symbols, 1)

    @property
    def ci_halfwidth(self) -> np.ndarray:
        """95% normal-approximation half-width of the BER."""
        p = self.ber
        return _Z95 * np.sqrt(p * (1 - p) / np.maximum(self.bits, 1))

    @property
    def interference_dim_mode(self) -> list:
        """Most common interference dimension per SNR point (None if no data)."""
        out = []
        for dims in self.interference_dims:
            out.append(Counter(dims).most_common(1)[0][0] if dims else None)
        return out


def _snr_to_noise(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


def _realization_seeds(seed: int, r: int):
    """Channel seed and data generator of realization ``r``."""
    channel_seed = int(np.random.SeedSequence([seed, r, 0]).generate_state(1)[0])
    return channel_seed, np.random.default_rng([seed, r, 1]), np.random.default_rng([seed, r, 2])


def sum_mse(channels, U, V, noise_variance: float) -> float:
    """Sum over users of ``E||U_i^H y_i - x_i||^2`` for unit-power symbols."""
    H = channels.matrices if hasattr(channels, "matrices") else np.asarray(channels)
    total = 0.0
    for i in range(H.shape[0]):
        C = interference_covariance(i, H, V, noise_variance) + (H[i, i] @ V[i]) @ (H[i, i] @ V[i]).conj().T
        total += (np.trace(U[i].conj().T @ C @ U[i]).real
                  - 2 * np.trace(U[i].conj().T @ H[i, i] @ V[i]).real + V[i].shape[1])
    return float(total)


def _mmse_combiners(H, V, noise_variance):
    out = []
    for i in range(H.shape[0]):
        A = H[i, i] @ V[i]
        C = interference_covariance(i, H, V, noise_variance) + A @ A.conj().T
        out.append(np.linalg.solve(C, A))
    return out


def _power_limited_solve(A: np.ndarray, b: np.ndarray, power: float) -> np.ndarray:
    """``(A + mu I)^-1 b`` with the smallest ``mu >= 0`` meeting the budget."""
    lam, W = np.linalg.eigh(0.5 * (A + A.conj().T))
    lam = np.maximum(lam, 0.0)
    c = np.sum(np.abs(W.conj().T @ b) ** 2, axis=1)

    def norm2(mu):
        return float(np.sum(c / (lam + mu) ** 2))

    floor = 1e-12 * max(lam[-1], 1.0)
    if lam[0] > floor and norm2(0.0) <= power:
        mu = 0.0
    else:
        hi = np.sqrt(c.sum() / power) + floor
        lo = floor
        if norm2(lo) <= power:
            mu = lo
        else:
            mu = brentq(lambda m: norm2(m) - power, lo, hi, xtol=1e-15, rtol=1e-12)
    return W @ ((W.conj().T @ b) / (lam + mu)[:, None])


def min_mse_baseline(channels, streams: Sequence[int], noise_variance: float, iters: int = 500,
                     tol: float = 1e-6, rng: np.random.Generator | None = None,
                     max_power: Sequence[float] | None = None,
                     init: PrecoderSet | None = None) -> PrecoderSet:
    """Alternating minimization of the sum MSE.

    With the precoders fixed the MMSE combiners are optimal; with the
    combiners fixed each precoder solves a power-constrained least-squares
    problem whose multiplier is found by root search. Both half-steps are
    exact minimizers, so the sum MSE never increases.

    Stops when the relative decrease falls below ``tol`` or after
    ``iters`` rounds; the latter is flagged ``"not-converged"``. The
    sum-MSE history is stored in ``info["mse_trace"]``.
    """
    H = channels.matrices if hasattr(channels, "matrices") else np.asarray(channels)
    K, N = H.shape[0], H.shape[2]
    P = tuple(max_power) if max_power is not None else (1.0,) * K
    if init is None:
        init = random_precoders(N, streams, rng if rng is not None else np.random.default_rng(0), P)
    V = [np.asarray(q) for q in init]
    trace = []
    converged = False
    U = _mmse_combiners(H, V, noise_variance)
    prev = sum_mse(H, U, V, noise_variance)
    trace.append(prev)
    for _ in range(iters):
        V = [_power_limited_solve(sum(H[i, j].conj().T @ U[i] @ U[i].conj().T @ H[i, j] for i in range(K)),
                                  H[j, j].conj().T @ U[j], P[j]) for j in range(K)]
        trace.append(sum_mse(H, U, V, noise_variance))
        U = _mmse_combiners(H, V, noise_variance)
        cur = sum_mse(H, U, V, noise_variance)
        trace.append(cur)
        if prev - cur <= tol * max(abs(cur), 1e-12):
            converged = True
            break
        prev = cur
    flags = () if converged else ("not-converged",)
    return PrecoderSet(tuple(V), "min-mse", flags, {"mse_trace": trace, "combiners": U})


def interference_leakage(channels, precoders, dims: Sequence[int] | None = None) -> np.ndarray:
    """Fraction of received interference power outside its strongest subspace.

    For receiver ``i`` the interference covariance's eigenvalues beyond
    the ``dims[i]`` largest are summed and divided by the total
    interference power. ``dims`` defaults to ``N - n_i``.
    """
    H = channels.matrices if hasattr(channels, "matrices") else np.asarray(channels)
    K, N = H.shape[0], H.shape[2]
    Q = list(precoders)
    out = []
    for i in range(K):
        keep = N - Q[i].shape[1] if dims is None else dims[i]
        w = np.sort(np.linalg.eigvalsh(interference_covariance(i, H, Q, 0.0)))[::-1]
        total = w.sum()
        out.append(float(max(w[keep:].sum(), 0.0) / total) if total > 0 else 0.0)
    return np.array(out)


def design_precoders(cfg: SweepConfig, channels: ChannelSet, noise_variance: float,
                     rng: np.random.Generator) -> PrecoderSet:
    """Precoders of ``cfg.scheme`` for one realization at one noise level."""
    sc = cfg.scenario
    P = sc.max_power
    if cfg.scheme == "ia":
        return ia_3user_closed_form(channels, P)
    if cfg.scheme == "fia-mimo":
        return fia_3user_mimo(channels, cfg.fia_columns or sc.streams[0], P)
    if cfg.scheme == "fia-siso":
        return fia_3user_siso(channels, sc.symbol_extension, P)
    if cfg.scheme == "kuser-asymptotic":
        return kuser_siso_asymptotic(channels, sc.symbol_extension, P)
    if cfg.scheme == "min-mse-baseline":
        return min_mse_baseline(channels, sc.streams, noise_variance, cfg.baseline_iters,
                                rng=rng, max_power=P)
    init_kind = cfg.optimizer.init
    if init_kind == "ia":
        init = ia_3user_closed_form(channels, P)
    elif init_kind == "fia":
        init = fia_3user_mimo(channels, cfg.fia_columns or sc.streams[0], P)
    else:
        init = random_precoders(sc.dim, sc.streams, rng, P)
    spaces = [enumerate_vectors(get_constellation(cfg.constellation), n, i)
              for i, n in enumerate(init.streams)]
    return optimize_multistart(channels, init, cfg.objective, spaces, noise_variance,
                               cfg.optimizer, P, rng).precoders


def _snr_dependent(scheme: str) -> bool:
    return scheme in ("eia-optimized", "min-mse-baseline")


def _run_realization(cfg: SweepConfig, r: int):
    sc = cfg.scenario
    const = get_constellation(cfg.constellation)
    channel_seed, data_rng, design_rng = _realization_seeds(cfg.seed, r)
    channels = draw_channels(sc, channel_seed)
    H = channels.matrices
    K, N, T = sc.num_users, sc.dim, cfg.symbols_per_realization
    G = len(cfg.snr_db_grid)
    out = np.zeros((4, G), dtype=np.int64)
    dims: list[list[int]] = [[] for _ in range(G)]
    detect = md_detect_batch if cfg.receiver == "md" else lmmse_detect_batch

    precoders = spaces = None
    for g, snr in enumerate(cfg.snr_db_grid):
        s2 = _snr_to_noise(snr)
        if precoders is None or _snr_dependent(cfg.scheme):
            precoders = design_precoders(cfg, channels, s2, design_rng)
            reports = check_fia_constraints(channels, precoders)
        if spaces is None:
            # one set of symbols and unit noise reused at every SNR point
            spaces = [enumerate_vectors(const, n, i) for i, n in enumerate(precoders.streams)]
            sym = [data_rng.integers(spaces[i].size, size=T) for i in range(K)]
            noise = [(data_rng.standard_normal((N, T)) + 1j * data_rng.standard_normal((N, T))) / np.sqrt(2)
                     for _ in range(K)]
        tx = [precoders[j] @ spaces[j].vectors[sym[j]].T for j in range(K)]
        for i in range(K):
            y = sum(H[i, j] @ tx[j] for j in range(K)) + np.sqrt(s2) * noise[i]
            idx = detect(y, i, H, precoders.matrices, spaces[i], s2)[0]
            out[0, g] += int(np.sum(spaces[i].bits[idx] != spaces[i].bits[sym[i]]))
            out[1, g] += T * spaces[i].bits_per_vector
            out[2, g] += int(np.sum(idx != sym[i]))
            out[3, g] += T
        dims[g].extend(rep.interference_dim for rep in reports)
    return out, dims


def _run_chunk(cfg: SweepConfig, rs: Sequence[int]):
    G = len(cfg.snr_db_grid)
    acc = np.zeros((4, G), dtype=np.int64)
    dims: list[list[int]] = [[] for _ in range(G)]
    skipped = 0
    for r in rs:
        try:
            counts, d = _run_realization(cfg, r)
        except FracAlignError:
            skipped += 1
            continue
        acc += counts
        for g in range(G):
            dims[g].extend(d[g])
    return acc, dims, skipped


def run_ber_sweep(cfg: SweepConfig) -> SimResult:
    """Bit and symbol error counts of ``cfg.scheme`` over the SNR grid.

    Every realization draws its channels, designs the precoders (once, or
    once per SNR point for the noise-aware schemes), sends uniform random
    vector symbols from all users through the interference channel and
    detects each user's symbols. Realizations whose design fails are
    skipped and counted. Results are deterministic per configuration,
    including the number of worker processes.
    """
    start = time.perf_counter()
    G = len(cfg.snr_db_grid)
    reals = list(range(cfg.channel_realizations))
    if cfg.n_jobs == 1:
        parts = [_run_chunk(cfg, reals)]
    else:
        chunks = [reals[k::cfg.n_jobs] for k in range(cfg.n_jobs)]
        with ProcessPoolExecutor(cfg.n_jobs) as ex:
            parts = list(ex.map(_run_chunk, [cfg] * len(chunks), chunks))
    acc = np.zeros((4, G), dtype=np.int64)
    dims: list[list[int]] = [[] for _ in range(G)]
    skipped = 0
    for a, d, s in parts:
        acc += a
        skipped += s
        for g in range(G):
            dims[g].extend(d[g])
    return SimResult(np.array(cfg.snr_db_grid), acc[0], acc[1], acc[2], acc[3], dims, skipped,
                     time.perf_counter() - start, cfg.scheme, cfg.receiver)


def detect_floor(result: SimResult, window_db: float = 10.0):
    """Whether the BER stops falling at the top of the SNR grid.

    True iff ``BER(top) > BER(top - window_db) / 3`` and ``BER(top)``
    exceeds three times its 95% confidence half-width, i.e. errors are
    still clearly present at the top of the grid. Returns ``None`` when the
    grid does not reach ``window_db`` below its top point.
    """
    snr = np.asarray(result.snr_db, dtype=float)
    top = int(np.argmax(snr))
    lower = np.flatnonzero(np.isclose(snr, snr[top] - window_db))
    if lower.size == 0:
        return None
    ber, hw = result.ber, result.ci_halfwidth
    b_top, b_low = ber[top], ber[lower[0]]
    return bool(b_top > b_low / 3 and b_top > 3 * hw[top])


def snr_at_ber(snr_db: Sequence[float], ber: Sequence[float], target: float = 1e-3) -> float:
    """SNR where the BER curve first crosses ``target``.

    Interpolates ``log10(BER)`` linearly in dB between the bracketing grid
    points. Returns NaN when the curve never crosses the target.
    """
    snr = np.asarray(snr_db, dtype=float)
    b = np.asarray(ber, dtype=float)
    for k in range(len(snr) - 1):
        b0, b1 = b[k], b[k + 1]
        if b0 >= target > b1 or b0 > target >= b1:
            if b1 <= 0:
                return float("nan")
            l0, l1 = np.log10(b0), np.log10(b1)
            return float(snr[k] + (np.log10(target) - l0) * (snr[k + 1] - snr[k]) / (l1 - l0))
    return float("nan")


def snr_gain(reference: SimResult, candidate: SimResult, target: float = 1e-3) -> float:
    """SNR saved by ``candidate`` relative to ``reference`` at ``target`` BER."""
    return snr_at_ber(reference.snr_db, reference.ber, target) - snr_at_ber(candidate.snr_db,
                                                                            candidate.ber, target)


SWEEP_COLUMNS = ("scheme", "receiver", "snr_db", "trials", "bit_errors", "ber", "ci_halfwidth",
                 "interference_dim_mode", "floor_flag")


def sweep_rows(result: SimResult) -> list[dict]:
    floor = detect_floor(result)
    floor_txt = "inconclusive" if floor is None else str(floor).lower()
    modes = result.interference_dim_mode
    return [{
        "scheme": result.scheme,
        "receiver": result.receiver,
        "snr_db": f"{result.snr_db[g]:g}",
        "trials": int(result.symbols[g]),
        "bit_errors": int(result.bit_errors[g]),
        "ber": f"{result.ber[g]:.6e}",
        "ci_halfwidth": f"{result.ci_halfwidth[g]:.6e}",
        "interference_dim_mode": "" if modes[g] is None else modes[g],
        "floor_flag": floor_txt,
    } for g in range(len(result.snr_db))]


def write_sweep_csv(stream, results: Sequence[SimResult]) -> None:
    """Write sweep rows of one or more results to an open text stream."""
    writer = csv.DictWriter(stream, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for res in results:
        writer.writerows(sweep_rows(res))
