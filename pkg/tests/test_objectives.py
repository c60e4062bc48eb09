import math

import numpy as np
import pytest

import disrec.autodiff as ad
from disrec.objectives import (
    BprTriplet,
    ContrastiveBatch,
    LossWeights,
    NonFiniteLossError,
    bpr_loss,
    cosine_affinity,
    cross_domain_loss,
    domain_specific_losses,
    info_nce_term,
    joint_objective,
    symmetric_contrastive,
)

# the w=2 orthogonal hand instance: both views are the same two one-hot rows
Z_ORTHO = np.array([[1.0, 0.0], [0.0, 1.0]])
HAND_VALUE = -math.log(math.e / (math.e + 2))  # 0.551445...


def naive_symmetric_loss(z1, z2, tau):
    """Double-loop reference for the symmetric contrastive loss, straight
    from the definition with plain exp/log arithmetic."""

    def cos(a, b):
        return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))

    views = (np.asarray(z1, float), np.asarray(z2, float))
    w = len(views[0])

    def term(anchor_view, j):
        anchor = views[anchor_view][j]
        other = views[1 - anchor_view][j]
        num = math.exp(cos(anchor, other) / tau)
        den = num
        for view in views:
            for k in range(w):
                if k != j:
                    den += math.exp(cos(anchor, view[k]) / tau)
        return -math.log(num / den)

    return sum(term(0, j) + term(1, j) for j in range(w)) / (2 * w)


class TestCosineAffinity:
    def test_identical_directions(self):
        assert cosine_affinity([3.0, 0.0], [3.0, 0.0], 1.0) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_affinity([1.0, 0.0], [0.0, 1.0], 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_colinear_scaled(self):
        assert cosine_affinity([1.0, 1.0], [2.0, 2.0], 0.2) == pytest.approx(5.0, abs=1e-9)

    def test_bounded_by_inverse_temperature(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            tau = float(rng.uniform(0.05, 2.0))
            a, b = rng.normal(size=(2, 5))
            assert abs(cosine_affinity(a, b, tau)) <= 1.0 / tau + 1e-12

    def test_zero_vector_guarded(self):
        # epsilon guard: degenerate input yields 0, not an exception
        assert cosine_affinity([0.0, 0.0], [1.0, 0.0], 1.0) == 0.0

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(2, 6))
        base = cosine_affinity(a, b, 0.3)
        assert cosine_affinity(3.7 * a, 0.2 * b, 0.3) == pytest.approx(base, abs=1e-9)

    def test_requires_positive_temperature(self):
        with pytest.raises(ValueError):
            cosine_affinity([1.0], [1.0], 0.0)


class TestInfoNceTerm:
    def test_hand_value_orthogonal(self):
        batch = ContrastiveBatch(Z_ORTHO, Z_ORTHO, 1.0)
        assert info_nce_term(0, batch, "1->2") == pytest.approx(HAND_VALUE, abs=1e-9)

    def test_all_identical_gives_log3(self):
        z = np.array([[1.0, 0.0], [1.0, 0.0]])
        batch = ContrastiveBatch(z, z, 1.0)
        assert info_nce_term(0, batch) == pytest.approx(math.log(3), abs=1e-9)

    def test_small_temperature_limit(self):
        # aligned positive, orthogonal negatives: the term goes to zero
        batch = ContrastiveBatch(Z_ORTHO, Z_ORTHO, 0.05)
        assert 0 < info_nce_term(0, batch) < 1e-8

    def test_strictly_positive(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            w, d = int(rng.integers(2, 7)), int(rng.integers(2, 5))
            batch = ContrastiveBatch(rng.normal(size=(w, d)), rng.normal(size=(w, d)), 0.2)
            for j in range(w):
                assert info_nce_term(j, batch, "1->2") > 0
                assert info_nce_term(j, batch, "2->1") > 0

    def test_batch_invariants(self):
        with pytest.raises(ValueError, match="two instances"):
            ContrastiveBatch(np.ones((1, 3)), np.ones((1, 3)), 1.0)
        with pytest.raises(ValueError, match="zero row"):
            ContrastiveBatch(np.array([[0.0, 0.0], [1.0, 0.0]]), np.ones((2, 2)), 1.0)
        with pytest.raises(ValueError, match="direction"):
            info_nce_term(0, ContrastiveBatch(Z_ORTHO, Z_ORTHO, 1.0), "sideways")


class TestSymmetricContrastive:
    def test_hand_value(self):
        assert symmetric_contrastive(Z_ORTHO, Z_ORTHO, 1.0) == pytest.approx(HAND_VALUE, abs=1e-9)

    def test_one_hot_w3(self):
        z = np.eye(3)
        expected = -math.log(math.e / (math.e + 4))
        assert symmetric_contrastive(z, z, 1.0) == pytest.approx(expected, abs=1e-9)
        assert symmetric_contrastive(z, z, 1.0) == pytest.approx(naive_symmetric_loss(z, z, 1.0), abs=1e-10)

    def test_swap_is_bitwise_identical(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            z1 = rng.normal(size=(5, 4))
            z2 = rng.normal(size=(5, 4))
            assert symmetric_contrastive(z1, z2, 0.2) == symmetric_contrastive(z2, z1, 0.2)

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            w, d = int(rng.integers(2, 9)), int(rng.integers(2, 5))
            tau = float(rng.choice([0.1, 0.2, 1.0]))
            z1, z2 = rng.normal(size=(2, w, d))
            vectorized = symmetric_contrastive(z1, z2, tau)
            assert vectorized == pytest.approx(naive_symmetric_loss(z1, z2, tau), abs=1e-10)

    def test_matches_per_term_average(self):
        rng = np.random.default_rng(5)
        z1, z2 = rng.normal(size=(2, 6, 3))
        batch = ContrastiveBatch(z1, z2, 0.5)
        mean = sum(
            info_nce_term(j, batch, "1->2") + info_nce_term(j, batch, "2->1") for j in range(6)
        ) / 12
        assert symmetric_contrastive(z1, z2, 0.5) == pytest.approx(mean, abs=1e-10)

    def test_positive_rescaling_invariance(self):
        rng = np.random.default_rng(6)
        z1, z2 = rng.normal(size=(2, 7, 4))
        base = symmetric_contrastive(z1, z2, 0.2)
        a = rng.uniform(0.2, 5.0, size=(7, 1))
        b = rng.uniform(0.2, 5.0, size=(7, 1))
        assert symmetric_contrastive(a * z1, b * z2, 0.2) == pytest.approx(base, abs=1e-9)

    def test_nonnegativity_random(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            w, d = int(rng.integers(2, 8)), int(rng.integers(2, 5))
            z1, z2 = rng.normal(size=(2, w, d))
            assert symmetric_contrastive(z1, z2, float(rng.uniform(0.05, 1.5))) > 0

    def test_perfect_alignment_bound(self):
        # identical views, distinct directions: each term under log(2w-1),
        # and shrinking the temperature shrinks the loss
        rng = np.random.default_rng(8)
        z = rng.normal(size=(6, 5))
        w = 6
        previous = None
        for tau in (1.0, 0.5, 0.2, 0.1):
            batch = ContrastiveBatch(z, z, tau)
            terms = [info_nce_term(j, batch) for j in range(w)]
            assert all(t < math.log(2 * w - 1) for t in terms)
            total = symmetric_contrastive(z, z, tau)
            if previous is not None:
                assert total < previous
            previous = total

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(9)
        arrays = {"z1": rng.normal(size=(5, 3)), "z2": rng.normal(size=(5, 3))}

        def build(t):
            return symmetric_contrastive(t["z1"], t["z2"], 0.2)

        _, grads = ad.value_and_grad(build, arrays)
        reference = ad.finite_diff_grad(build, arrays, epsilon=1e-6)
        for k in arrays:
            np.testing.assert_allclose(grads[k], reference[k], rtol=1e-5, atol=1e-9)

    def test_radial_derivative_is_zero(self):
        # positive-rescaling invariance means zero gradient along each row's ray
        rng = np.random.default_rng(10)
        arrays = {"z1": rng.normal(size=(5, 3)), "z2": rng.normal(size=(5, 3))}
        _, grads = ad.value_and_grad(lambda t: symmetric_contrastive(t["z1"], t["z2"], 0.2), arrays)
        for k in arrays:
            radial = np.sum(grads[k] * arrays[k], axis=1)
            np.testing.assert_allclose(radial, 0.0, atol=1e-9)


class TestCrossDomain:
    def test_equals_four_identical_terms(self):
        rng = np.random.default_rng(11)
        z = rng.normal(size=(5, 3))
        single = symmetric_contrastive(z, z, 0.2)
        assert cross_domain_loss(z, z, z, z, 0.2) == pytest.approx(4 * single, rel=1e-12)

    def test_view_swap_invariance(self):
        rng = np.random.default_rng(12)
        s1, s2, i1, i2 = rng.normal(size=(4, 6, 3))
        a = cross_domain_loss(s1, s2, i1, i2, 0.2)
        b = cross_domain_loss(s2, s1, i2, i1, 0.2)
        assert a == pytest.approx(b, rel=1e-12)

    def test_against_naive_oracle(self):
        rng = np.random.default_rng(13)
        s1, s2, i1, i2 = rng.normal(size=(4, 2, 3))
        expected = (
            naive_symmetric_loss(s1, i1, 0.5)
            + naive_symmetric_loss(s1, i2, 0.5)
            + naive_symmetric_loss(s2, i1, 0.5)
            + naive_symmetric_loss(s2, i2, 0.5)
        )
        assert cross_domain_loss(s1, s2, i1, i2, 0.5) == pytest.approx(expected, abs=1e-10)


class TestDomainSpecific:
    def test_identical_views(self):
        rng = np.random.default_rng(14)
        u = rng.normal(size=(5, 3))
        v = rng.normal(size=(7, 3))
        s = rng.normal(size=(5, 3))
        collab, social = domain_specific_losses(u, u, v, v, s, s, 0.2)
        assert collab == pytest.approx(
            symmetric_contrastive(u, u, 0.2) + symmetric_contrastive(v, v, 0.2), rel=1e-12
        )
        assert social == pytest.approx(symmetric_contrastive(s, s, 0.2), rel=1e-12)

    def test_single_domain_perturbation_is_local(self):
        rng = np.random.default_rng(15)
        u1, u2 = rng.normal(size=(2, 5, 3))
        v1, v2 = rng.normal(size=(2, 6, 3))
        s1, s2 = rng.normal(size=(2, 5, 3))
        collab_a, social_a = domain_specific_losses(u1, u2, v1, v2, s1, s2, 0.2)
        collab_b, social_b = domain_specific_losses(u1, u2, v1, v2, s1, 2.0 + s2, 0.2)
        assert collab_a == collab_b
        assert social_a != social_b

    def test_social_free_mode(self):
        rng = np.random.default_rng(16)
        u, v = rng.normal(size=(5, 3)), rng.normal(size=(6, 3))
        collab, social = domain_specific_losses(u, u, v, v, None, None, 0.2)
        assert social == 0.0
        assert collab > 0

    def test_small_instance_oracle(self):
        rng = np.random.default_rng(17)
        u1, u2 = rng.normal(size=(2, 3, 2))
        v1, v2 = rng.normal(size=(2, 4, 2))
        s1, s2 = rng.normal(size=(2, 3, 2))
        collab, social = domain_specific_losses(u1, u2, v1, v2, s1, s2, 0.1)
        assert collab == pytest.approx(
            naive_symmetric_loss(u1, u2, 0.1) + naive_symmetric_loss(v1, v2, 0.1), abs=1e-12
        )
        assert social == pytest.approx(naive_symmetric_loss(s1, s2, 0.1), abs=1e-12)


class TestBprLoss:
    def test_equal_scores_give_log2(self):
        u = np.ones((1, 2))
        v = np.ones((2, 2))
        assert bpr_loss([(0, 0, 1)], u, v) == pytest.approx(math.log(2), abs=1e-12)

    def test_large_margin(self):
        u = np.array([[1.0, 0.0]])
        v = np.array([[20.0, 0.0], [0.0, 0.0]])
        assert bpr_loss([(0, 0, 1)], u, v) == pytest.approx(math.exp(-20), rel=1e-3)

    def test_zero_user_row(self):
        u = np.zeros((1, 2))
        v = np.random.default_rng(18).normal(size=(3, 2))
        assert bpr_loss([(0, 1, 2)], u, v) == pytest.approx(math.log(2), abs=1e-12)

    def test_triplet_objects_accepted(self):
        u = np.ones((1, 2))
        v = np.ones((2, 2))
        assert bpr_loss([BprTriplet(0, 0, 1)], u, v) == pytest.approx(math.log(2), abs=1e-12)

    def test_sums_over_batch(self):
        rng = np.random.default_rng(19)
        u = rng.normal(size=(4, 3))
        v = rng.normal(size=(6, 3))
        triplets = [(0, 1, 2), (1, 3, 4), (3, 0, 5)]
        total = bpr_loss(triplets, u, v)
        parts = sum(bpr_loss([t], u, v) for t in triplets)
        assert total == pytest.approx(parts, rel=1e-12)
        assert total > 0

    def test_hand_gradient_single_triplet(self):
        # d/du of softplus(y_uj - y_ui) is -sigma(-(y_ui - y_uj)) * (v_i - v_j)
        rng = np.random.default_rng(20)
        u = rng.normal(size=(1, 2))
        v = rng.normal(size=(2, 2))
        _, grads = ad.value_and_grad(
            lambda t: bpr_loss([(0, 0, 1)], t["u"], t["v"]), {"u": u, "v": v}
        )
        margin = float(u[0] @ (v[0] - v[1]))
        sig = 1.0 / (1.0 + math.exp(margin))
        np.testing.assert_allclose(grads["u"], -sig * (v[0] - v[1])[None, :], atol=1e-12)
        np.testing.assert_allclose(grads["v"][0], -sig * u[0], atol=1e-12)
        np.testing.assert_allclose(grads["v"][1], sig * u[0], atol=1e-12)


class TestJointObjective:
    def test_weight_annihilation(self):
        weights = LossWeights(0.0, 0.0, 0.0)
        assert joint_objective(1.25, 99.0, 98.0, 97.0, 96.0, weights) == 1.25

    def test_pure_regularizer(self):
        # unit parameter vector of length p contributes lambda3 * p
        p = 17
        weights = LossWeights(0.0, 0.0, 0.5)
        assert joint_objective(0.0, 0.0, 0.0, 0.0, float(p), weights) == pytest.approx(0.5 * p)

    def test_formula(self):
        weights = LossWeights(0.3, 0.7, 0.1)
        value = joint_objective(1.0, 2.0, 3.0, 4.0, 5.0, weights)
        assert value == pytest.approx(1.0 + 0.3 * 5.0 + 0.7 * 4.0 + 0.1 * 5.0)

    def test_lower_bounded_by_main(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            main = float(rng.uniform(0, 5))
            parts = rng.uniform(0, 3, size=4)
            weights = LossWeights(*rng.uniform(0, 2, size=3))
            assert joint_objective(main, *parts, weights) >= main

    def test_non_finite_component_named(self):
        with pytest.raises(NonFiniteLossError, match="cross_domain"):
            joint_objective(1.0, 1.0, 1.0, float("nan"), 1.0, LossWeights(1, 1, 1))

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            LossWeights(-0.1, 0.0, 0.0)
