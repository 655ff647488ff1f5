"""Finite-alphabet signal sets and exhaustive vector-symbol enumeration."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import CapacityError, ValidationError

__all__ = [
    "Constellation",
    "SymbolSpace",
    "bpsk",
    "qpsk",
    "custom",
    "get_constellation",
    "enumerate_vectors",
    "error_vectors",
    "DEFAULT_ENUMERATION_CAP",
]

DEFAULT_ENUMERATION_CAP = 65536


@dataclass(frozen=True)
class Constellation:
    """A labelled point set with unit average energy.

    Parameters
    ----------
    name : str
        ``"bpsk"``, ``"qpsk"`` or ``"custom"``.
    points : ndarray of complex
    bit_labels : tuple of str
        One bit string per point, all of equal length.
    """

    name: str
    points: np.ndarray
    bit_labels: tuple[str, ...]

    def __post_init__(self):
        pts = np.array(self.points, dtype=complex).ravel()
        labels = tuple(str(b) for b in self.bit_labels)
        if len(pts) != len(labels):
            raise ValidationError(f"{len(pts)} points but {len(labels)} bit labels")
        size = len(pts)
        if size < 2 or size & (size - 1):
            raise ValidationError(f"constellation size must be a power of two >= 2, got {size}")
        if len(set(labels)) != size:
            raise ValidationError("bit labels must be distinct")
        width = len(labels[0])
        if any(len(b) != width or set(b) - {"0", "1"} for b in labels):
            raise ValidationError("bit labels must be equal-length strings of 0/1")
        energy = np.mean(np.abs(pts) ** 2)
        if not np.isclose(energy, 1.0, rtol=1e-9, atol=1e-12):
            raise ValidationError(f"average point energy must be 1, got {energy:.6g}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "bit_labels", labels)

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def bits_per_symbol(self) -> int:
        return len(self.bit_labels[0])

    @property
    def bit_matrix(self) -> np.ndarray:
        """``(size, bits_per_symbol)`` integer array of label bits."""
        return np.array([[int(c) for c in b] for b in self.bit_labels], dtype=np.int8)

    def slice(self, values: np.ndarray) -> np.ndarray:
        """Index of the nearest point for every entry of ``values``."""
        v = np.asarray(values)
        return np.argmin(np.abs(v[..., None] - self.points) ** 2, axis=-1)


def bpsk() -> Constellation:
    return Constellation("bpsk", np.array([1.0, -1.0]), ("0", "1"))


def qpsk() -> Constellation:
    """Gray-labelled QPSK; the first bit sets the real sign, the second the imaginary."""
    a = 1 / np.sqrt(2)
    pts = np.array([a + 1j * a, a - 1j * a, -a + 1j * a, -a - 1j * a])
    return Constellation("qpsk", pts, ("00", "01", "10", "11"))


def custom(points: Sequence[complex], bit_labels: Sequence[str]) -> Constellation:
    return Constellation("custom", np.asarray(points, dtype=complex), tuple(bit_labels))


def get_constellation(name: str) -> Constellation:
    builders = {"bpsk": bpsk, "qpsk": qpsk}
    try:
        return builders[name]()
    except KeyError:
        raise ValidationError(f"unknown constellation {name!r}; use one of {sorted(builders)}") from None


@dataclass(frozen=True)
class SymbolSpace:
    """Ordered enumeration of all vector symbols a user can send.

    Attributes
    ----------
    vectors : ndarray, shape (V, n)
        Row ``j`` is the ``j``-th vector symbol; rows follow the
        lexicographic order of per-coordinate point indices.
    indices : ndarray, shape (V, n)
        Per-coordinate constellation indices of each row.
    beta : ndarray, shape (V, V)
        Hamming distance between concatenated bit labels.
    """

    user_index: int
    dimension: int
    constellation: Constellation
    vectors: np.ndarray
    indices: np.ndarray
    bits: np.ndarray
    beta: np.ndarray

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def bits_per_vector(self) -> int:
        return self.bits.shape[1]

    def index_of(self, point_indices: np.ndarray) -> np.ndarray:
        """Map per-coordinate point indices (``(..., n)``) to row indices."""
        q = self.constellation.size
        weights = q ** np.arange(self.dimension - 1, -1, -1)
        return np.asarray(point_indices) @ weights


def enumerate_vectors(constellation: Constellation, n: int, user_index: int = 0,
                      cap: int = DEFAULT_ENUMERATION_CAP) -> SymbolSpace:
    """All ``|points|**n`` vector symbols in lexicographic order.

    Raises
    ------
    CapacityError
        If the enumeration would hold more than ``cap`` vectors.
    """
    if n < 1:
        raise ValidationError(f"dimension must be >= 1, got {n}")
    q = constellation.size
    count = q ** n
    if count > cap:
        raise CapacityError(
            f"enumeration of {q}**{n} = {count} vectors exceeds the cap of {cap}")
    idx = np.array(list(itertools.product(range(q), repeat=n)), dtype=np.int64)
    vectors = constellation.points[idx]
    bits = constellation.bit_matrix[idx].reshape(count, -1)
    beta = (bits[:, None, :] != bits[None, :, :]).sum(axis=-1)
    for arr in (vectors, idx, bits, beta):
        arr.setflags(write=False)
    return SymbolSpace(user_index, n, constellation, vectors, idx, bits, beta)


def error_vectors(space: SymbolSpace) -> list[tuple[int, int, np.ndarray]]:
    """Every ordered pair ``(j, k)``, ``j != k``, with ``x_j - x_k``."""
    x = space.vectors
    return [(j, k, x[j] - x[k])
            for j in range(space.size) for k in range(space.size) if j != k]


def pair_differences(space: SymbolSpace) -> np.ndarray:
    """Array form of the error vectors: ``out[j, k] = x_j - x_k``."""
    x = space.vectors
    return x[:, None, :] - x[None, :, :]
