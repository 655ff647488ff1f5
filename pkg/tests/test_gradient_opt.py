import numpy as np
import pytest

from fracalign.alignment import PrecoderSet, ia_3user_closed_form, random_precoders
from fracalign.constellation import bpsk, enumerate_vectors, qpsk
from fracalign.exceptions import ValidationError
from fracalign.gradient_opt import (
    OptimizerOptions, _sorted_eigh, all_gradients, cgd_optimize, finite_difference_check,
    gradient, local_opt_structure_residual, objective, optimize_multistart,
    power_scaling_monotonicity_check, reciprocal_rank_B,
)
from fracalign.metrics import (
    ObjectiveSpec, alpha_weights, distance_table, error_covariance, interference_covariance,
)
from fracalign.scenario import Scenario, draw_channels

KINDS = ("ser", "ber", "mi", "md")


def _bpsk_pair(seed):
    ch = draw_channels(Scenario(2, 2, (1, 1)), seed)
    rng = np.random.default_rng(seed)
    return ch, random_precoders(2, (1, 1), rng), [enumerate_vectors(bpsk(), 1, i) for i in range(2)]


class TestGradient:
    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("log", [False, True])
    def test_fd_qpsk_4x4(self, kind, log, mimo4, qpsk2_spaces):
        p = random_precoders(4, (2, 2, 2), np.random.default_rng(3))
        err = finite_difference_check(mimo4, p, ObjectiveSpec(kind), qpsk2_spaces, 0.5,
                                      np.random.default_rng(4), log=log)
        assert err < 1e-5

    @pytest.mark.parametrize("kind", KINDS)
    def test_fd_bpsk_2x2(self, kind):
        ch, p, spaces = _bpsk_pair(8)
        err = finite_difference_check(ch, p, ObjectiveSpec(kind), spaces, 0.3,
                                      np.random.default_rng(0))
        assert err < 1e-5

    def test_mixed_kinds(self, mimo4, qpsk2_spaces):
        p = random_precoders(4, (2, 2, 2), np.random.default_rng(5))
        spec = ObjectiveSpec(("mi", "ber", "md"))
        assert finite_difference_check(mimo4, p, spec, qpsk2_spaces, 0.2,
                                       np.random.default_rng(1)) < 1e-5

    @pytest.mark.parametrize("kind", KINDS)
    def test_single_term_without_cross_links(self, kind, qpsk2_spaces):
        ch = draw_channels(Scenario(2, 4, (2, 2), interference_gain=0.0), 2)
        Q = random_precoders(4, (2, 2), np.random.default_rng(0)).matrices
        spec, s2 = ObjectiveSpec(kind), 0.4
        H = ch.matrices
        E = error_covariance(qpsk2_spaces[0], alpha_weights(
            spec, distance_table(0, ch, Q, qpsk2_spaces[0], s2), qpsk2_spaces[0], exact=True))
        expect = -H[0, 0].conj().T @ H[0, 0] @ Q[0] @ E / s2
        np.testing.assert_allclose(gradient(0, ch, Q, spec, qpsk2_spaces[:2], s2), expect,
                                   rtol=1e-10, atol=1e-14)

    def test_aligned_leakage_is_span_orthogonal(self, qpsk2_spaces):
        # at an IA point and vanishing noise, the leakage part of the gradient
        # has no component along directions Q_i -> Q_i G that keep alignment
        spec, s2 = ObjectiveSpec("md"), 1e-8
        sc = Scenario(3, 4, (2, 2, 2))
        worst = 0.0
        for seed in range(10):
            ch = draw_channels(sc, seed)
            H, Q = ch.matrices, ia_3user_closed_form(ch).matrices
            W = []
            for l in range(3):
                G = np.linalg.solve(interference_covariance(l, ch, Q, s2), H[l, l] @ Q[l])
                E = error_covariance(qpsk2_spaces[l], alpha_weights(
                    spec, distance_table(l, ch, Q, qpsk2_spaces[l], s2), qpsk2_spaces[l], exact=True))
                W.append(G @ E @ G.conj().T)
            for i in range(3):
                leak = sum(H[l, i].conj().T @ W[l] @ H[l, i] @ Q[i] for l in range(3) if l != i)
                r = np.linalg.norm(Q[i].conj().T @ leak) / (np.linalg.norm(Q[i]) * np.linalg.norm(leak))
                worst = max(worst, r)
        assert worst < 1e-4


class TestCGD:
    def test_mi_from_random_descends(self, mimo4, qpsk2_spaces):
        init = random_precoders(4, (2, 2, 2), np.random.default_rng(0))
        res = cgd_optimize(mimo4, init, ObjectiveSpec("mi"), qpsk2_spaces, 0.1,
                           OptimizerOptions(max_iters=40))
        assert res.trace[-1] < res.trace[0]
        assert res.accepted_steps > 0
        assert np.all(res.precoders.powers <= 1 + 1e-9)

    @pytest.mark.parametrize("kind", ["ser", "ber", "mi"])
    @pytest.mark.parametrize("seed", [0, 1])
    @pytest.mark.parametrize("log", [False, True])
    def test_trace_nonincreasing(self, kind, seed, log, qpsk2_spaces):
        ch = draw_channels(Scenario(3, 4, (2, 2, 2)), seed)
        init = random_precoders(4, (2, 2, 2), np.random.default_rng(seed))
        res = cgd_optimize(ch, init, ObjectiveSpec(kind), qpsk2_spaces, 0.3,
                           OptimizerOptions(max_iters=25, log_merit=log))
        assert np.all(np.diff(res.trace) <= 1e-12 * abs(res.trace[0]))
        assert res.grad_norms[-1] <= res.grad_norms[0]

    def test_stationary_init_returns_unchanged(self, mimo4, qpsk2_spaces):
        init = random_precoders(4, (2, 2, 2), np.random.default_rng(1))
        res = cgd_optimize(mimo4, init, ObjectiveSpec("ser"), qpsk2_spaces, 0.3,
                           OptimizerOptions(grad_tol=1e6))
        assert res.accepted_steps == 0
        assert res.converged
        for a, b in zip(init, res.precoders):
            np.testing.assert_array_equal(a, b)

    def test_unpacking(self, mimo4, qpsk2_spaces):
        init = ia_3user_closed_form(mimo4)
        precoders, trace = cgd_optimize(mimo4, init, ObjectiveSpec("ber"), qpsk2_spaces, 0.1,
                                        OptimizerOptions(max_iters=5))
        assert isinstance(precoders, PrecoderSet)
        assert len(trace) >= 1

    def test_multistart_not_worse(self, mimo4, qpsk2_spaces):
        init = ia_3user_closed_form(mimo4)
        spec = ObjectiveSpec("mi")
        one = cgd_optimize(mimo4, init, spec, qpsk2_spaces, 0.1, OptimizerOptions(max_iters=20))
        many = optimize_multistart(mimo4, init, spec, qpsk2_spaces, 0.1,
                                   OptimizerOptions(max_iters=20, random_restarts=2),
                                   rng=np.random.default_rng(0))
        assert many.merit[-1] <= one.merit[-1]

    @pytest.mark.parametrize("kwargs", [dict(shrink=1.0), dict(init="zero"), dict(max_iters=-1),
                                        dict(random_restarts=-1), dict(grad_tol=0.0)])
    def test_bad_options(self, kwargs):
        with pytest.raises(ValidationError):
            OptimizerOptions(**kwargs)


class TestStructure:
    @pytest.mark.parametrize("kind", KINDS)
    def test_constructed_structure(self, kind, qpsk2_spaces):
        # Q_0 = U_H diag(lam) P^T with the kernel weights ordered so that the
        # eigenbasis of E_0 is the same permutation P
        rng = np.random.default_rng(7)
        for seed in range(5):
            ch = draw_channels(Scenario(3, 4, (2, 2, 2)), seed)
            H = ch.matrices
            Q = list(random_precoders(4, (2, 2, 2), rng).matrices)
            R = interference_covariance(0, ch, Q, 0.1)
            w, UH = _sorted_eigh(H[0, 0].conj().T @ np.linalg.solve(R, H[0, 0]))
            lam1 = rng.uniform(0.2, 0.5)
            lam = np.array([lam1, lam1 * np.sqrt(2 * w[0] / w[1])])
            for perm in (np.eye(2), np.eye(2)[::-1]):
                Q[0] = UH[:, :2] @ np.diag(lam) @ perm.T
                res, deg = local_opt_structure_residual(ch, Q, ObjectiveSpec(kind), qpsk2_spaces, 0.1)
                assert not deg[0]
                assert res[0] < 1e-10

    def test_random_is_unstructured(self, mimo4, qpsk2_spaces):
        vals = []
        for seed in range(10):
            Q = random_precoders(4, (2, 2, 2), np.random.default_rng(seed))
            vals.extend(local_opt_structure_residual(mimo4, Q, ObjectiveSpec("ser"), qpsk2_spaces, 0.1)[0])
        assert np.median(vals) > 0.1

    def test_cgd_reduces_residual(self, mimo4, qpsk2_spaces):
        spec, s2 = ObjectiveSpec("mi"), 0.2
        init = random_precoders(4, (2, 2, 2), np.random.default_rng(2))
        res = cgd_optimize(mimo4, init, spec, qpsk2_spaces, s2,
                           OptimizerOptions(max_iters=300, grad_tol=1e-9))
        before = local_opt_structure_residual(mimo4, init, spec, qpsk2_spaces, s2)[0]
        after = local_opt_structure_residual(mimo4, res.precoders, spec, qpsk2_spaces, s2)[0]
        assert sum(after) < sum(before)


class TestMonotonicity:
    @pytest.mark.parametrize("kind", ["ser", "ber", "mi"])
    def test_shrinking_raises_objective(self, kind, mimo4, qpsk2_spaces):
        for seed in range(5):
            p = random_precoders(4, (2, 2, 2), np.random.default_rng(seed))
            out = power_scaling_monotonicity_check(mimo4, p, ObjectiveSpec(kind), qpsk2_spaces, 0.1)
            assert all(out.values())

    def test_zero_precoders_flagged(self, mimo4, qpsk2_spaces):
        Q = [np.zeros((4, 2))] * 3
        assert power_scaling_monotonicity_check(mimo4, Q, ObjectiveSpec("ser"), qpsk2_spaces, 0.1) is None

    @pytest.mark.parametrize("kind", ["ser", "ber", "mi"])
    def test_first_order_gap(self, kind, mimo4, qpsk2_spaces):
        p = random_precoders(4, (2, 2, 2), np.random.default_rng(9))
        spec = ObjectiveSpec(kind)
        base = objective(mimo4, p, spec, qpsk2_spaces, 0.1)

        def gap(eps):
            return objective(mimo4, [np.sqrt(1 - eps) * q for q in p], spec, qpsk2_spaces, 0.1) - base

        assert 1.5 <= gap(0.02) / gap(0.01) <= 2.5


class TestReciprocalRank:
    def test_ia_low_noise_and_unit_noise(self):
        for seed in range(5):
            ch = draw_channels(Scenario(3, 4, (2, 2, 2)), seed)
            p = ia_3user_closed_form(ch)
            assert reciprocal_rank_B(ch, p, 1e-9) == [2, 2, 2]
            assert reciprocal_rank_B(ch, p, 1.0) == [4, 4, 4]

    def test_random_generic(self, mimo4):
        p = random_precoders(4, (2, 2, 2), np.random.default_rng(0))
        assert reciprocal_rank_B(mimo4, p, 1e-9) == [4, 4, 4]


def test_all_gradients_matches_single(mimo4, qpsk2_spaces):
    p = random_precoders(4, (2, 2, 2), np.random.default_rng(11))
    spec = ObjectiveSpec("ber")
    g = all_gradients(mimo4, p, spec, qpsk2_spaces, 0.2)
    for i in range(3):
        np.testing.assert_allclose(gradient(i, mimo4, p, spec, qpsk2_spaces, 0.2), g[i])
