import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from fracalign.alignment import random_precoders
from fracalign.constellation import bpsk, enumerate_vectors, qpsk
from fracalign.metrics import (
    DistanceTable, ObjectiveSpec, alpha_weights, distance_table, effective_kernel, error_covariance,
    interference_covariance, log_user_terms, objective_value, qfunc, user_objective,
)
from fracalign.exceptions import DegenerateDistanceError, ValidationError
from fracalign.scenario import channels_from_arrays


def _scalar_pair(h, g, q, p, sigma2):
    """Two users, 1x1 links; user 0 sees interference g*p."""
    return channels_from_arrays([[[[h]], [[g]]], [[[g]], [[h]]]]), [np.array([[q]]), np.array([[p]])]


class TestCovariance:
    def test_noise_only_when_zero_precoders(self, mimo4):
        Q = [np.zeros((4, 2))] * 3
        np.testing.assert_array_equal(interference_covariance(0, mimo4, Q, 0.3), 0.3 * np.eye(4))

    def test_hand_expanded(self):
        h01 = np.array([[1.0, 2j], [0.5, -1.0]])
        q1 = np.array([[1.0], [1j]])
        zero = np.zeros((2, 2))
        ch = channels_from_arrays([[np.eye(2), h01], [zero, np.eye(2)]])
        v = h01 @ q1
        expect = np.array([[abs(v[0, 0]) ** 2, v[0, 0] * np.conj(v[1, 0])],
                           [v[1, 0] * np.conj(v[0, 0]), abs(v[1, 0]) ** 2]]) + 0.1 * np.eye(2)
        got = interference_covariance(0, ch, [np.zeros((2, 1)), q1], 0.1)
        np.testing.assert_allclose(got, expect, atol=1e-12)


class TestDistances:
    def test_scalar_closed_form(self):
        h, g, q, p, s2 = 0.8 + 0.3j, -0.4 + 0.9j, 1.1, 0.7j, 0.2
        ch, Q = _scalar_pair(h, g, q, p, s2)
        sp = enumerate_vectors(bpsk(), 1)
        d = distance_table(0, ch, Q, sp, s2).d
        expect = abs(h) ** 2 * abs(q) ** 2 * 4 / (abs(g) ** 2 * abs(p) ** 2 + s2)
        assert d[0, 1] == pytest.approx(expect, rel=1e-12)
        assert d[0, 0] == 0

    def test_identity_kernel_gives_squared_norm(self):
        sp = enumerate_vectors(qpsk(), 2)
        from fracalign.metrics import _table_from_kernel
        d = _table_from_kernel(np.eye(2), sp)
        x = sp.vectors
        np.testing.assert_allclose(d, np.sum(np.abs(x[:, None] - x[None]) ** 2, axis=-1), atol=1e-12)

    @given(st.floats(0.1, 10.0))
    @settings(max_examples=15, deadline=None)
    def test_own_power_homogeneity(self, beta):
        from fracalign.scenario import Scenario, draw_channels
        ch = draw_channels(Scenario(3, 4, (2, 2, 2)), 5)
        Q = list(random_precoders(4, (2, 2, 2), np.random.default_rng(1)))
        sp = enumerate_vectors(qpsk(), 2)
        d0 = distance_table(0, ch, Q, sp, 0.1).d
        Q[0] = np.sqrt(beta) * Q[0]
        np.testing.assert_allclose(distance_table(0, ch, Q, sp, 0.1).d, beta * d0, rtol=1e-9, atol=1e-12)

    def test_unitary_receive_invariance(self, mimo4, rng, qpsk2_spaces):
        Q = random_precoders(4, (2, 2, 2), rng).matrices
        u, _ = np.linalg.qr(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
        rotated = channels_from_arrays([[u @ mimo4[0, j] for j in range(3)]] +
                                       [[mimo4[i, j] for j in range(3)] for i in (1, 2)])
        np.testing.assert_allclose(distance_table(0, rotated, Q, qpsk2_spaces[0], 0.2).d,
                                   distance_table(0, mimo4, Q, qpsk2_spaces[0], 0.2).d, atol=1e-10)

    def test_kernel_hermitian_psd(self, mimo4, rng):
        Q = random_precoders(4, (2, 2, 2), rng).matrices
        K = effective_kernel(1, mimo4, Q, 0.05)
        np.testing.assert_allclose(K, K.conj().T)
        assert np.linalg.eigvalsh(K).min() >= 0


class TestObjectives:
    def test_large_distance_limits(self):
        sp = enumerate_vectors(qpsk(), 1)
        d = 1e6 * (1 - np.eye(4))
        for kind in ("ser", "ber", "mi"):
            assert user_objective(kind, d, sp) == pytest.approx(0.0, abs=1e-12)

    def test_q_at_zero(self):
        assert qfunc(0.0) == 0.5
        sp = enumerate_vectors(bpsk(), 1)
        d = np.array([[0.0, 0.0], [0.0, 0.0]])
        assert user_objective("ser", d, sp) == pytest.approx(1.0)

    def test_scalar_oracle(self):
        sp = enumerate_vectors(bpsk(), 1)
        dd = 1.7
        d = np.array([[0, dd], [dd, 0]])
        eta = 2.0
        assert user_objective("ser", d, sp) == pytest.approx(2 * norm.sf(dd / eta))
        assert user_objective("ber", d, sp) == pytest.approx(2 * norm.sf(dd / eta))
        assert user_objective("mi", d, sp) == pytest.approx(2 * np.log2(1 + np.exp(-dd / eta)))
        assert user_objective("md", d, sp) == pytest.approx(2 * dd ** -8)

    def test_md_zero_distance(self):
        sp = enumerate_vectors(bpsk(), 1)
        with pytest.raises(DegenerateDistanceError):
            user_objective("md", np.zeros((2, 2)), sp)

    def test_total_sums_users(self, mimo4, rng, qpsk2_spaces):
        Q = random_precoders(4, (2, 2, 2), rng).matrices
        tabs = [distance_table(i, mimo4, Q, qpsk2_spaces[i], 0.1) for i in range(3)]
        spec = ObjectiveSpec(("ser", "mi", "md"))
        expect = sum(user_objective(k, t.d, s) for k, t, s in zip(spec.kind, tabs, qpsk2_spaces))
        assert objective_value(spec, tabs, qpsk2_spaces) == pytest.approx(expect)

    @pytest.mark.parametrize("kind", ["ser", "ber", "mi", "md"])
    def test_log_terms_match(self, kind, rng):
        sp = enumerate_vectors(qpsk(), 2)
        a = rng.uniform(0.5, 3.0, (16, 16))
        d = (a + a.T) * (1 - np.eye(16))
        logf, loga = log_user_terms(kind, d, sp)
        assert logf == pytest.approx(np.log(user_objective(kind, d, sp)), rel=1e-10)
        exact = alpha_weights(ObjectiveSpec(kind), DistanceTable(0, d), sp, exact=True)
        off = ~np.eye(16, dtype=bool)
        mask = off & (exact > 0)
        np.testing.assert_allclose(np.exp(loga[mask]), exact[mask], rtol=1e-10)

    def test_bad_kind(self):
        with pytest.raises(ValidationError):
            ObjectiveSpec("snr")


class TestAlpha:
    def _table(self):
        d = np.array([[0, 0.5, 1.0], [0.5, 0, 2.0], [1.0, 2.0, 0]])
        return DistanceTable(0, d)

    def test_ser_closed_form(self):
        sp = enumerate_vectors(qpsk(), 1)
        d = 1.0 + np.arange(16.0).reshape(4, 4)
        d = (d + d.T) * (1 - np.eye(4))
        a = alpha_weights(ObjectiveSpec("ser"), DistanceTable(0, d), sp)
        np.testing.assert_allclose(a, np.exp(-d) * (1 - np.eye(4)))

    def test_mi_rows_bounded(self, rng):
        sp = enumerate_vectors(qpsk(), 2)
        a = rng.uniform(0, 4, (16, 16))
        d = (a + a.T) * (1 - np.eye(16))
        w = alpha_weights(ObjectiveSpec("mi"), DistanceTable(0, d), sp)
        assert np.all(w.sum(axis=1) <= 1 + 1e-12)

    def test_ber_ratio(self, rng):
        sp = enumerate_vectors(qpsk(), 2)
        a = rng.uniform(0.1, 4, (16, 16))
        t = DistanceTable(0, (a + a.T) * (1 - np.eye(16)))
        ber = alpha_weights(ObjectiveSpec("ber"), t, sp)
        ser = alpha_weights(ObjectiveSpec("ser"), t, sp)
        off = ~np.eye(16, dtype=bool)
        np.testing.assert_allclose(ber[off] / ser[off], sp.beta[off])

    def test_md_sign(self, rng):
        sp = enumerate_vectors(qpsk(), 2)
        a = rng.uniform(0.1, 4, (16, 16))
        t = DistanceTable(0, (a + a.T) * (1 - np.eye(16)))
        off = ~np.eye(16, dtype=bool)
        assert np.all(alpha_weights(ObjectiveSpec("md"), t, sp)[off] < 0)
        assert np.all(alpha_weights(ObjectiveSpec("md"), t, sp, exact=True)[off] > 0)


class TestErrorCovariance:
    def test_zero(self):
        sp = enumerate_vectors(qpsk(), 2)
        np.testing.assert_array_equal(error_covariance(sp, np.zeros((16, 16))), np.zeros((2, 2)))

    def test_bpsk_uniform(self):
        sp = enumerate_vectors(bpsk(), 1)
        E = error_covariance(sp, 1 - np.eye(2))
        np.testing.assert_allclose(E, [[8.0]])

    def test_direct_sum_and_hermitian(self, rng):
        sp = enumerate_vectors(qpsk(), 2)
        a = rng.uniform(0, 1, (16, 16))
        a = a + a.T
        E = error_covariance(sp, a)
        x = sp.vectors
        direct = sum(a[j, k] * np.outer(x[j] - x[k], (x[j] - x[k]).conj())
                     for j in range(16) for k in range(16))
        np.testing.assert_allclose(E, direct, atol=1e-12)
        assert np.max(np.abs(E - E.conj().T)) < 1e-14

    def test_batched(self, rng):
        sp = enumerate_vectors(qpsk(), 2)
        a = rng.uniform(0, 1, (3, 16, 16))
        E = error_covariance(sp, a)
        for b in range(3):
            np.testing.assert_allclose(E[b], error_covariance(sp, a[b]), atol=1e-13)
