import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsvad.data import FeatureSequence
from wsvad.errors import ContractError
from wsvad.pseudolabels import (
    PlgConfig,
    fuse,
    minmax_normalize,
    pseudo_labels,
    similarities,
    threshold_labels,
)

RNG = np.random.default_rng(7)


# ---------------------------------------------------------------------------
# Scalar-loop oracle: plain-Python reimplementation of the fuse/threshold
# chain, kept independent of the vectorized module code.
# ---------------------------------------------------------------------------

def oracle_labels(s_an_raw, s_aa_raw, alpha, theta, polarity):
    def norm(values):
        lo = min(values)
        hi = max(values)
        if hi == lo:
            return [0.0 for _ in values]
        return [(v - lo) / (hi - lo) for v in values]

    s_an = norm(list(s_an_raw))
    s_aa = norm(list(s_aa_raw))
    psi = [alpha * a + (1.0 - alpha) * (1.0 - b) for a, b in zip(s_an, s_aa)]
    psi_n = norm(psi)
    if polarity == "literal":
        return [1.0 if p >= theta else 0.0 for p in psi_n], psi_n
    return [1.0 if (1.0 - p) >= theta else 0.0 for p in psi_n], psi_n


class TestOps:
    def test_similarities_orthogonal(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(similarities(x, np.array([0.0, 0.0])), [0.0, 0.0])

    def test_similarities_self_inner_product(self):
        t = np.array([2.0, 0.0])
        np.testing.assert_array_equal(similarities(t[None, :], t), [4.0])

    def test_similarities_match_loop(self):
        x = RNG.standard_normal((5, 3))
        t = RNG.standard_normal(3)
        loop = np.array([sum(x[j, d] * t[d] for d in range(3)) for j in range(5)])
        np.testing.assert_allclose(similarities(x, t), loop, rtol=1e-12)

    def test_minmax_endpoints(self):
        np.testing.assert_array_equal(minmax_normalize(np.array([2.0, 4.0, 6.0])), [0.0, 0.5, 1.0])

    def test_minmax_constant_is_zeros(self):
        np.testing.assert_array_equal(minmax_normalize(np.full(3, 3.3)), np.zeros(3))

    def test_minmax_preserves_order(self):
        s = np.sort(RNG.standard_normal(10))
        out = minmax_normalize(s)
        assert np.all(np.diff(out) >= 0)

    def test_fuse_agreement_cases(self):
        one, zero = np.ones(3), np.zeros(3)
        np.testing.assert_array_equal(fuse(one, zero, 0.2), np.ones(3))
        np.testing.assert_array_equal(fuse(zero, one, 0.2), np.zeros(3))
        np.testing.assert_allclose(fuse(np.full(3, 0.5), np.full(3, 0.5), 0.7), np.full(3, 0.5))

    def test_fuse_length_mismatch(self):
        with pytest.raises(ContractError):
            fuse(np.zeros(3), np.zeros(4), 0.2)

    def test_threshold_literal_boundary(self):
        out = threshold_labels(np.array([0.56, 0.54]), 0.55, polarity="literal")
        np.testing.assert_array_equal(out, [1.0, 0.0])

    def test_threshold_inclusive_at_theta(self):
        assert threshold_labels(np.array([0.55]), 0.55, polarity="literal")[0] == 1.0

    def test_threshold_unreachable(self):
        out = threshold_labels(RNG.uniform(0, 0.9, 8), 0.95, polarity="literal")
        np.testing.assert_array_equal(out, np.zeros(8))

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(0, 1), min_size=1, max_size=12),
        st.floats(0.05, 0.95),
        st.floats(0.05, 0.95),
    )
    def test_threshold_monotone_in_theta(self, psi, theta_lo, theta_hi):
        lo, hi = sorted((theta_lo, theta_hi))
        psi = np.array(psi)
        for polarity in ("anomaly", "literal"):
            ones_hi = threshold_labels(psi, hi, polarity).sum()
            ones_lo = threshold_labels(psi, lo, polarity).sum()
            assert ones_hi <= ones_lo


class TestPlgConfig:
    def test_ranges(self):
        with pytest.raises(ContractError):
            PlgConfig(alpha=1.5)
        with pytest.raises(ContractError):
            PlgConfig(theta=0.0)
        with pytest.raises(ContractError):
            PlgConfig(polarity="backwards")


def _abnormal_video(frames, class_index=1):
    return FeatureSequence("v", frames, 1, class_index)


class TestPseudoLabels:
    def test_normal_video_all_zero(self):
        video = FeatureSequence("n", RNG.standard_normal((6, 4)), 0, 3)
        out = pseudo_labels(video, [RNG.standard_normal(4) for _ in range(3)],
                            RNG.standard_normal(4), PlgConfig())
        np.testing.assert_array_equal(out.gamma, np.zeros(6))

    def test_missing_embedding(self):
        video = _abnormal_video(RNG.standard_normal((4, 3)), class_index=5)
        with pytest.raises(ContractError):
            pseudo_labels(video, [RNG.standard_normal(3) for _ in range(3)],
                          RNG.standard_normal(3), PlgConfig())

    def test_alpha_zero_reduces_to_abnormal_only(self):
        frames = RNG.standard_normal((8, 4))
        video = _abnormal_video(frames)
        embeddings = [RNG.standard_normal(4) for _ in range(3)]
        enhanced = RNG.standard_normal(4)
        out = pseudo_labels(video, embeddings, enhanced, PlgConfig(alpha=0.0, theta=0.4))
        s_aa = minmax_normalize(similarities(frames, embeddings[0]))
        expected = threshold_labels(minmax_normalize(1.0 - s_aa), 0.4, "anomaly")
        np.testing.assert_array_equal(out.gamma, expected)

    def test_clean_separation_recovers_truth(self):
        # Noise-free segment on a noise-free background with well separated
        # prototypes: labels equal frame truth for any theta.
        proto_n = np.array([1.0, 0.0, 0.0, 0.0])
        proto_a = np.array([0.0, 1.0, 0.0, 0.0])
        frames = np.tile(proto_n, (10, 1))
        frames[3:6] = proto_a
        truth = np.zeros(10)
        truth[3:6] = 1.0
        video = _abnormal_video(frames)
        embeddings = [proto_a, np.array([0.0, 0.0, 1.0, 0.0]), proto_n]
        for theta in (0.2, 0.55, 0.9):
            out = pseudo_labels(video, embeddings, proto_n, PlgConfig(alpha=0.2, theta=theta))
            np.testing.assert_array_equal(out.gamma, truth)

    @pytest.mark.parametrize("polarity", ["anomaly", "literal"])
    def test_oracle_equivalence_exact(self, polarity):
        rng = np.random.default_rng(101)
        for _ in range(300):
            num_frames = int(rng.integers(1, 33))
            dim = int(rng.integers(1, 9))
            frames = rng.standard_normal((num_frames, dim))
            embeddings = [rng.standard_normal(dim) for _ in range(3)]
            enhanced = rng.standard_normal(dim)
            alpha = float(rng.uniform(0, 1))
            theta = float(rng.uniform(0.05, 0.95))
            video = _abnormal_video(frames, class_index=int(rng.integers(1, 3)))
            cfg = PlgConfig(alpha=alpha, theta=theta, polarity=polarity)
            out = pseudo_labels(video, embeddings, enhanced, cfg)
            expected, psi = oracle_labels(
                similarities(frames, enhanced),
                similarities(frames, embeddings[video.class_index - 1]),
                alpha, theta, polarity,
            )
            assert out.gamma.tolist() == expected
            assert out.psi_norm.tolist() == psi
