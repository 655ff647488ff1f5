"""K-user interference-channel scenarios and random channel draws.

Users are indexed from 0. ``channels[i, j]`` is the matrix from
transmitter ``j`` to receiver ``i``, so the received signal at receiver
``i`` is ``sum_j channels[i, j] @ Q_j @ x_j + z_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .exceptions import ValidationError

__all__ = ["Scenario", "ChannelSet", "draw_channels", "reciprocal"]

CHANNEL_KINDS = ("mimo-dense", "siso-diagonal")

# relative smallest-singular-value threshold below which a block is redrawn
_SINGULAR_RTOL = 1e-12


@dataclass(frozen=True)
class Scenario:
    """Static description of a K-user interference-channel experiment.

    Parameters
    ----------
    num_users : int
        Number of transmitter/receiver pairs ``K`` (at least 2).
    antennas : int
        Antennas per node ``M``.
    streams : sequence of int
        Streams per user, one entry per user.
    symbol_extension : int
        Symbol extension factor ``L``; 1 means no extension.
    noise_variance : float
        Linear noise variance; SNR is ``1 / noise_variance``.
    interference_gain : float
        Power scaling applied to every cross link (1.0 is unit SIR).
    max_power : sequence of float, optional
        Per-user power budget on ``trace(Q Q^H)``; defaults to all ones.
    channel_kind : {"mimo-dense", "siso-diagonal"}
        ``siso-diagonal`` needs ``antennas == 1`` and
        ``symbol_extension >= 2``.
    """

    num_users: int
    antennas: int
    streams: tuple[int, ...]
    symbol_extension: int = 1
    noise_variance: float = 1.0
    interference_gain: float = 1.0
    max_power: tuple[float, ...] | None = None
    channel_kind: str = "mimo-dense"

    def __post_init__(self):
        object.__setattr__(self, "streams", tuple(int(n) for n in self.streams))
        if self.max_power is None:
            object.__setattr__(self, "max_power", (1.0,) * self.num_users)
        else:
            object.__setattr__(self, "max_power", tuple(float(p) for p in self.max_power))
        self.validate()

    @property
    def dim(self) -> int:
        """Signal dimension ``M * L`` at every node."""
        return self.antennas * self.symbol_extension

    def validate(self) -> None:
        K, M, L = self.num_users, self.antennas, self.symbol_extension
        if K < 2:
            raise ValidationError(f"num_users must be >= 2, got {K}")
        if M < 1 or L < 1:
            raise ValidationError(f"antennas and symbol_extension must be >= 1, got M={M}, L={L}")
        if len(self.streams) != K:
            raise ValidationError(f"streams has {len(self.streams)} entries, expected {K}")
        for i, n in enumerate(self.streams):
            if not 1 <= n <= M * L:
                raise ValidationError(f"streams[{i}] = {n} must lie in [1, {M * L}]")
        if len(self.max_power) != K:
            raise ValidationError(f"max_power has {len(self.max_power)} entries, expected {K}")
        for i, p in enumerate(self.max_power):
            if not p > 0:
                raise ValidationError(f"max_power[{i}] = {p} must be positive")
        if not self.noise_variance > 0:
            raise ValidationError(f"noise_variance must be positive, got {self.noise_variance}")
        if not self.interference_gain >= 0:
            raise ValidationError(
                f"interference_gain must be nonnegative, got {self.interference_gain}")
        if self.channel_kind not in CHANNEL_KINDS:
            raise ValidationError(f"channel_kind must be one of {CHANNEL_KINDS}, got {self.channel_kind!r}")
        if self.channel_kind == "siso-diagonal" and (M != 1 or L < 2):
            raise ValidationError("siso-diagonal channels need antennas == 1 and symbol_extension >= 2")

    def with_noise(self, noise_variance: float) -> "Scenario":
        """Copy of this scenario at a different noise variance."""
        return replace(self, noise_variance=noise_variance)


@dataclass(frozen=True)
class ChannelSet:
    """All ``K x K`` channel matrices of one realization.

    ``matrices`` has shape ``(K, K, N, N)`` with ``N = M * L``; the array
    is marked read-only.
    """

    matrices: np.ndarray
    seed: int | None = None
    block_size: int = field(default=0)

    def __post_init__(self):
        H = np.array(self.matrices, dtype=complex)
        if H.ndim != 4 or H.shape[0] != H.shape[1] or H.shape[2] != H.shape[3]:
            raise ValidationError(f"channel array must have shape (K, K, N, N), got {H.shape}")
        H.setflags(write=False)
        object.__setattr__(self, "matrices", H)
        if not self.block_size:
            object.__setattr__(self, "block_size", H.shape[2])

    @property
    def num_users(self) -> int:
        return self.matrices.shape[0]

    @property
    def dim(self) -> int:
        return self.matrices.shape[2]

    def __getitem__(self, key) -> np.ndarray:
        return self.matrices[key]

    def __eq__(self, other):
        if not isinstance(other, ChannelSet):
            return NotImplemented
        return (self.seed == other.seed and self.block_size == other.block_size
                and np.array_equal(self.matrices, other.matrices))

    __hash__ = None


def _draw_block(rng: np.random.Generator, m: int) -> np.ndarray:
    scale = np.sqrt(0.5 / m)
    while True:
        block = scale * (rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m)))
        s = np.linalg.svd(block, compute_uv=False)
        if s[-1] >= _SINGULAR_RTOL * s[0]:
            return block


def draw_channels(scenario: Scenario, seed: int) -> ChannelSet:
    """Draw one channel realization for ``scenario``.

    Every ``M x M`` block has i.i.d. circularly-symmetric complex Gaussian
    entries of variance ``1/M`` so that ``E[H H^H] = I``. Channels are
    block diagonal with ``L`` blocks; cross links are scaled by
    ``sqrt(interference_gain)``. Near-singular blocks are redrawn.
    """
    K, M, L = scenario.num_users, scenario.antennas, scenario.symbol_extension
    N = M * L
    rng = np.random.default_rng(seed)
    H = np.zeros((K, K, N, N), dtype=complex)
    cross = np.sqrt(scenario.interference_gain)
    for i in range(K):
        for j in range(K):
            for b in range(L):
                sl = slice(b * M, (b + 1) * M)
                H[i, j, sl, sl] = _draw_block(rng, M)
            if i != j:
                H[i, j] *= cross
    return ChannelSet(H, seed=seed, block_size=M)


def reciprocal(channels: ChannelSet) -> ChannelSet:
    """Reciprocal network: link ``(i, j)`` becomes ``channels[j, i]^H``."""
    H = channels.matrices
    R = np.conj(np.swapaxes(np.swapaxes(H, 0, 1), 2, 3))
    return ChannelSet(R, seed=channels.seed, block_size=channels.block_size)


def channels_from_arrays(blocks: Sequence[Sequence[np.ndarray]], seed: int | None = None) -> ChannelSet:
    """Build a ChannelSet from a nested ``K x K`` list of square arrays."""
    return ChannelSet(np.array([[np.asarray(b, dtype=complex) for b in row] for row in blocks]),
                      seed=seed)
