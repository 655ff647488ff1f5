import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracalign.constellation import (
    bpsk, custom, enumerate_vectors, error_vectors, get_constellation, pair_differences, qpsk,
)
from fracalign.exceptions import CapacityError, ValidationError


def test_bpsk_single():
    s = enumerate_vectors(bpsk(), 1)
    assert s.size == 2
    np.testing.assert_array_equal(s.beta, [[0, 1], [1, 0]])


def test_qpsk_pairs_enumeration():
    s = enumerate_vectors(qpsk(), 2)
    assert s.size == 16
    assert s.beta.max() == 4
    assert np.allclose(np.mean(np.abs(s.vectors) ** 2), 1.0)


def test_qpsk_is_gray():
    c = qpsk()
    bits = c.bit_matrix
    # nearest neighbours (distance sqrt(2)) differ in exactly one bit
    for a in range(4):
        for b in range(4):
            if np.isclose(abs(c.points[a] - c.points[b]), np.sqrt(2)):
                assert np.sum(bits[a] != bits[b]) == 1


def test_error_vectors_bpsk():
    ev = error_vectors(enumerate_vectors(bpsk(), 1))
    assert len(ev) == 2
    assert sorted(e[0].real for _, _, e in ev) == [-2.0, 2.0]


def test_error_vectors_qpsk_count_and_symmetry():
    s = enumerate_vectors(qpsk(), 2)
    ev = error_vectors(s)
    assert len(ev) == 240
    diffs = pair_differences(s)
    for j, k, e in ev:
        np.testing.assert_array_equal(diffs[k, j], -e)


@given(st.integers(1, 4), st.integers(0, 255))
@settings(max_examples=20, deadline=None)
def test_index_of_inverts_enumeration(n, seed):
    s = enumerate_vectors(qpsk(), n)
    rows = np.random.default_rng(seed).integers(0, s.size, 10)
    np.testing.assert_array_equal(s.index_of(s.indices[rows]), rows)


def test_capacity_cap():
    with pytest.raises(CapacityError):
        enumerate_vectors(qpsk(), 9)
    assert enumerate_vectors(qpsk(), 3, cap=64).size == 64


def test_bad_constellations():
    with pytest.raises(ValidationError):
        custom([1, -1, 1j], ["00", "01", "10"])
    with pytest.raises(ValidationError):
        custom([2, -2], ["0", "1"])
    with pytest.raises(ValidationError):
        get_constellation("16qam")
