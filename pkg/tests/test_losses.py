import math

import numpy as np
import pytest

from wsvad import autograd as ag
from wsvad.autograd import Tensor, backward, grad_check
from wsvad.errors import ContractError
from wsvad.losses import (
    LossReport,
    LossWeights,
    bce_loss,
    dil_loss,
    normalize_minmax,
    profile_cosine,
    rank_loss_abnormal,
    rank_loss_normal,
    smooth_sparse,
    total_loss,
)

RNG = np.random.default_rng(17)


def _vec(*values):
    return Tensor(np.array(values, dtype=np.float64))


class TestRankNormal:
    def test_margin_satisfied(self):
        assert rank_loss_normal(_vec(0.2, 1.0), [_vec(0.0, 0.0)]).item() == 0.0

    def test_scalar_case_half_half(self):
        assert rank_loss_normal(_vec(0.5), [_vec(0.5)]).item() == 1.0

    def test_scalar_case_point_nine(self):
        assert rank_loss_normal(_vec(0.9), [_vec(0.3)]).item() == pytest.approx(0.4)

    def test_max_over_competitor_set(self):
        loss = rank_loss_normal(_vec(0.9), [_vec(0.1), _vec(0.6), _vec(0.2)])
        assert loss.item() == pytest.approx(1.0 - 0.9 + 0.6)

    def test_invariant_to_nonmaximal_entries(self):
        s = RNG.standard_normal(6)
        phi = RNG.standard_normal(6)
        base = rank_loss_normal(Tensor(s), [Tensor(phi)]).item()
        s2 = s.copy()
        s2[np.argsort(s)[0]] -= 1.0
        phi2 = phi.copy()
        phi2[np.argsort(phi)[0]] -= 2.0
        assert rank_loss_normal(Tensor(s2), [Tensor(phi2)]).item() == base

    def test_empty_competitors_rejected(self):
        with pytest.raises(ContractError):
            rank_loss_normal(_vec(1.0), [])


class TestRankAbnormal:
    def test_both_margins_met(self):
        loss = rank_loss_abnormal(_vec(1.0), _vec(1.0), [_vec(0.0)])
        assert loss.item() == 0.0

    def test_hand_case(self):
        loss = rank_loss_abnormal(_vec(0.2), _vec(0.2), [_vec(0.8)])
        assert loss.item() == pytest.approx(3.2)

    def test_term_symmetry(self):
        a = rank_loss_abnormal(_vec(0.3), _vec(0.7), [_vec(0.1)]).item()
        b = rank_loss_abnormal(_vec(0.7), _vec(0.3), [_vec(0.1)]).item()
        assert a == pytest.approx(b)

    def test_single_abnormal_class_fallback(self):
        # No competitors: each hinge keeps only the margin-to-1 term.
        loss = rank_loss_abnormal(_vec(0.4), _vec(1.5), [])
        assert loss.item() == pytest.approx(0.6)


class TestDil:
    def test_identical_profiles(self):
        v = Tensor(RNG.uniform(0.1, 1.0, 8))
        assert dil_loss([v], [v]).item() == pytest.approx(1.0)

    def test_orthogonal_indicators(self):
        a = _vec(1.0, 0.0, 0.0)
        b = _vec(0.0, 1.0, 0.0)
        assert dil_loss([a], [b]).item() == 0.0

    def test_zero_vector_contributes_zero(self):
        assert profile_cosine(_vec(0.0, 0.0), _vec(1.0, 1.0)).item() == 0.0

    def test_mean_over_videos(self):
        v = Tensor(RNG.uniform(0.1, 1.0, 5))
        a = _vec(1.0, 0.0, 0.0, 0.0, 0.0)
        b = _vec(0.0, 1.0, 0.0, 0.0, 0.0)
        assert dil_loss([v, a], [v, b]).item() == pytest.approx(0.5)

    def test_descent_drives_cosine_down(self):
        # 100 plain gradient steps on free vectors should decorrelate the
        # min-max normalized profiles.
        rng = np.random.default_rng(3)
        a = ag.parameter(rng.uniform(0.2, 1.0, 12))
        b = ag.parameter(a.data + 0.01 * rng.standard_normal(12))

        def loss_value():
            return dil_loss([normalize_minmax(a)], [normalize_minmax(b)])

        start = loss_value().item()
        for _ in range(100):
            a.zero_grad()
            b.zero_grad()
            loss = loss_value()
            backward(loss)
            a.data = a.data - 0.05 * a.grad
            b.data = b.data - 0.05 * b.grad
        end = loss_value().item()
        assert start > 0.9
        assert end < 0.15


class TestSmoothSparse:
    def test_constant_profile(self):
        sp, sm = smooth_sparse(Tensor(np.full(5, 0.3)))
        assert sp.item() == 0.0
        assert sm.item() == pytest.approx(1.5)

    def test_all_zero(self):
        sp, sm = smooth_sparse(Tensor(np.zeros(4)))
        assert sp.item() == 0.0 and sm.item() == 0.0

    def test_hand_case(self):
        sp, sm = smooth_sparse(_vec(0.0, 1.0, 0.0))
        assert sp.item() == 2.0
        assert sm.item() == 1.0

    def test_needs_two_frames(self):
        with pytest.raises(ContractError):
            smooth_sparse(_vec(1.0))


class TestBce:
    def test_half_scores_give_ln2_for_any_labels(self):
        eta = Tensor(np.full(6, 0.5))
        for gamma in (np.zeros(6), np.ones(6), (RNG.uniform(0, 1, 6) > 0.5).astype(float)):
            assert bce_loss(eta, gamma).item() == pytest.approx(math.log(2.0), abs=1e-12)

    def test_perfect_fit_approaches_zero(self):
        gamma = np.array([0.0, 1.0, 1.0, 0.0])
        eta = Tensor(np.abs(gamma - 1e-9))
        assert bce_loss(eta, gamma).item() < 1e-6

    def test_hand_value(self):
        assert bce_loss(_vec(0.9), np.ones(1)).item() == pytest.approx(-math.log(0.9))

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            bce_loss(_vec(0.5, 0.5), np.zeros(3))

    def test_midpoint_convexity_in_eta(self):
        for _ in range(20):
            gamma = (RNG.uniform(0, 1, 8) > 0.5).astype(float)
            e1 = RNG.uniform(0.01, 0.99, 8)
            e2 = RNG.uniform(0.01, 0.99, 8)
            mid = bce_loss(Tensor((e1 + e2) / 2), gamma).item()
            avg = (bce_loss(Tensor(e1), gamma).item() + bce_loss(Tensor(e2), gamma).item()) / 2
            assert mid <= avg + 1e-12


class TestNormalizeMinmax:
    def test_endpoints(self):
        out = normalize_minmax(_vec(2.0, 4.0, 6.0))
        np.testing.assert_array_equal(out.data, [0.0, 0.5, 1.0])

    def test_constant_gives_zeros(self):
        out = normalize_minmax(Tensor(np.full(4, 1.7)))
        np.testing.assert_array_equal(out.data, np.zeros(4))

    def test_gradient(self):
        p = ag.parameter(RNG.standard_normal(6))
        result = grad_check(lambda: ag.tensor_sum(ag.sigmoid(normalize_minmax(p))), {"p": p})
        assert result.max_rel_error < 1e-4


class TestTotal:
    def test_all_zero(self):
        assert total_loss(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, LossWeights()) == 0.0

    def test_weight_zeroing_ablates_temporal_terms(self):
        weights = LossWeights(smooth=0.0, sparse=0.0)
        assert total_loss(0.1, 0.2, 0.3, 0.4, 99.0, 99.0, weights) == pytest.approx(1.0)

    def test_hand_tuple(self):
        value = total_loss(0.4, 3.2, 0.5, 0.69, 2.0, 1.0, LossWeights(0.1, 0.01))
        assert value == pytest.approx(5.0)

    def test_negative_weights_rejected(self):
        with pytest.raises(ContractError):
            LossWeights(smooth=-0.1)

    def test_report_round_trip(self):
        report = LossReport(rank_normal=1.0, total=1.0)
        assert report.as_dict()["rank_normal"] == 1.0


class TestGradients:
    def test_every_term_passes_finite_differences(self):
        rng = np.random.default_rng(8)
        s_nn = ag.parameter(rng.standard_normal(6))
        s_an = ag.parameter(rng.standard_normal(6))
        s_aa = ag.parameter(rng.standard_normal(6))
        phi = ag.parameter(rng.standard_normal(6))
        eta_logits = ag.parameter(rng.standard_normal(6))
        gamma = (rng.uniform(0, 1, 6) > 0.5).astype(float)

        def f():
            eta = ag.sigmoid(eta_logits)
            sa_n = normalize_minmax(s_aa)
            sn_n = normalize_minmax(s_an)
            sp, sm = smooth_sparse(sa_n)
            return total_loss(
                rank_loss_normal(s_nn, [phi]),
                rank_loss_abnormal(s_an, s_aa, [phi]),
                dil_loss([sa_n], [sn_n]),
                bce_loss(eta, gamma),
                sp,
                sm,
                LossWeights(),
            )

        params = {"s_nn": s_nn, "s_an": s_an, "s_aa": s_aa, "phi": phi, "eta": eta_logits}
        result = grad_check(f, params)
        assert result.max_rel_error < 1e-4
