import numpy as np
import pytest

import disrec.autodiff as ad
from disrec.autodiff import NonFiniteError, Tensor, backward, finite_diff_grad, value_and_grad
from disrec.data import build_social_adjacency


def fd_check(build, arrays, rtol=1e-6, atol=1e-8, epsilon=1e-6):
    """Compare reverse-mode gradients of ``build(leaves) -> scalar`` with
    central differences on every input coordinate."""
    value, grads = value_and_grad(build, arrays)
    reference = finite_diff_grad(build, arrays, epsilon=epsilon)
    for name in arrays:
        np.testing.assert_allclose(grads[name], reference[name], rtol=rtol, atol=atol, err_msg=name)
    return value, grads


class TestPrimitiveGradients:
    """Every registered operation against the finite-difference oracle."""

    def setup_method(self):
        self.rng = np.random.default_rng(42)

    def test_add_sub_scale(self):
        x = self.rng.normal(size=(3, 4))
        y = self.rng.normal(size=(3, 4))
        fd_check(
            lambda t: ad.sum_all(ad.scale(ad.sub(ad.add(t["x"], t["y"]), ad.scale(t["y"], 0.5)), 1.7)),
            {"x": x, "y": y},
        )

    def test_add_bias(self):
        fd_check(
            lambda t: ad.sum_of_squares(ad.add_bias(t["x"], t["b"])),
            {"x": self.rng.normal(size=(5, 3)), "b": self.rng.normal(size=3)},
        )

    def test_matmul(self):
        fd_check(
            lambda t: ad.sum_of_squares(ad.matmul(t["a"], t["b"])),
            {"a": self.rng.normal(size=(4, 3)), "b": self.rng.normal(size=(3, 5))},
        )

    def test_matmul_nt(self):
        fd_check(
            lambda t: ad.sum_of_squares(ad.matmul_nt(t["a"], t["b"])),
            {"a": self.rng.normal(size=(4, 3)), "b": self.rng.normal(size=(6, 3))},
        )

    def test_spmm(self):
        adj = build_social_adjacency([(0, 1), (1, 2), (0, 3)], 5)
        fd_check(
            lambda t: ad.sum_of_squares(ad.spmm(adj, t["x"])),
            {"x": self.rng.normal(size=(5, 3))},
        )

    def test_gather_rows_accumulates_repeats(self):
        idx = np.array([0, 2, 2, 1])
        x = self.rng.normal(size=(4, 3))
        _, grads = fd_check(
            lambda t: ad.sum_of_squares(ad.gather_rows(t["x"], idx)),
            {"x": x},
        )
        np.testing.assert_allclose(grads["x"][2], 2 * (2 * x[2]))

    def test_vstack_slice(self):
        fd_check(
            lambda t: ad.sum_of_squares(ad.slice_rows(ad.vstack2(t["a"], t["b"]), 1, 4)),
            {"a": self.rng.normal(size=(2, 3)), "b": self.rng.normal(size=(3, 3))},
        )

    def test_average(self):
        fd_check(
            lambda t: ad.sum_all(ad.average([t["a"], t["b"], t["c"]])),
            {k: self.rng.normal(size=(2, 2)) for k in "abc"},
        )

    def test_relu(self):
        x = self.rng.normal(size=(4, 4)) + 0.05  # keep clear of the kink
        fd_check(lambda t: ad.sum_of_squares(ad.relu(t["x"])), {"x": x})

    def test_normalize_rows(self):
        fd_check(
            lambda t: ad.sum_of_squares(ad.matmul_nt(ad.normalize_rows(t["x"]), ad.normalize_rows(t["y"]))),
            {"x": self.rng.normal(size=(4, 3)), "y": self.rng.normal(size=(4, 3))},
        )

    def test_transpose_and_diag(self):
        def build(t):
            s = ad.matmul_nt(t["x"], t["y"])
            return ad.sum_all(ad.add(ad.take_diag(ad.transpose(s)), ad.take_diag(s)))

        fd_check(build, {"x": self.rng.normal(size=(4, 3)), "y": self.rng.normal(size=(4, 3))})

    def test_concat_cols(self):
        fd_check(
            lambda t: ad.sum_of_squares(ad.concat_cols(t["a"], t["b"])),
            {"a": self.rng.normal(size=(3, 2)), "b": self.rng.normal(size=(3, 4))},
        )

    def test_masked_logsumexp(self):
        mask = np.zeros((4, 5), dtype=bool)
        mask[:, 3] = True
        fd_check(
            lambda t: ad.sum_all(ad.masked_logsumexp_rows(t["x"], mask)),
            {"x": self.rng.normal(size=(4, 5))},
        )

    def test_paired_logsumexp_excl_diag(self):
        def build(t):
            s_ab = ad.matmul_nt(t["a"], t["b"])
            s_aa = ad.matmul_nt(t["a"], t["a"])
            return ad.sum_all(ad.paired_logsumexp_excl_diag(s_ab, s_aa))

        fd_check(build, {"a": self.rng.normal(size=(5, 3)), "b": self.rng.normal(size=(5, 3))})

    def test_paired_logsumexp_matches_masked_form(self):
        a = self.rng.normal(size=(6, 6))
        b = self.rng.normal(size=(6, 6))
        fused = ad.paired_logsumexp_excl_diag(a, b).value
        mask = np.concatenate([np.zeros((6, 6), bool), np.eye(6, dtype=bool)], axis=1)
        stacked = ad.masked_logsumexp_rows(np.concatenate([a, b], axis=1), mask).value
        np.testing.assert_allclose(fused, stacked, atol=1e-12)

    def test_rowwise_dot(self):
        fd_check(
            lambda t: ad.sum_all(ad.rowwise_dot(t["a"], t["b"])),
            {"a": self.rng.normal(size=(4, 3)), "b": self.rng.normal(size=(4, 3))},
        )

    def test_softplus_stable_at_extremes(self):
        x = np.array([-800.0, -20.0, 0.0, 20.0, 800.0])
        out = ad.softplus(x)
        assert np.all(np.isfinite(out.value))
        np.testing.assert_allclose(out.value[2], np.log(2))
        np.testing.assert_allclose(out.value[4], 800.0)
        fd_check(lambda t: ad.sum_all(ad.softplus(t["x"])), {"x": self.rng.normal(size=7)})

    def test_sum_of_squares(self):
        fd_check(lambda t: ad.sum_of_squares(t["x"]), {"x": self.rng.normal(size=(3, 3))})


class TestEngine:
    def test_quadratic_gradient_is_identity(self):
        # d/dP of 0.5 * ||P||^2 is exactly P
        p = np.random.default_rng(0).normal(size=(5, 3))
        _, grads = value_and_grad(lambda t: ad.scale(ad.sum_of_squares(t["p"]), 0.5), {"p": p})
        np.testing.assert_array_equal(grads["p"], p)

    def test_linear_gradient_exact(self):
        c = np.arange(1.0, 7.0).reshape(2, 3)
        _, grads = value_and_grad(
            lambda t: ad.sum_all(ad.rowwise_dot(t["x"], Tensor(c))),
            {"x": np.ones((2, 3))},
        )
        np.testing.assert_array_equal(grads["x"], c)

    def test_untouched_parameter_gets_zero_gradient(self):
        arrays = {"used": np.ones((2, 2)), "unused": np.ones((3, 3))}
        _, grads = value_and_grad(lambda t: ad.sum_all(t["used"]), arrays)
        np.testing.assert_array_equal(grads["unused"], np.zeros((3, 3)))

    def test_reused_subexpression_accumulates(self):
        # y = sum(x) * 2 via two consumers of the same node
        def build(t):
            s = ad.sum_all(t["x"])
            return ad.add(s, s)

        _, grads = value_and_grad(build, {"x": np.ones(4)})
        np.testing.assert_array_equal(grads["x"], np.full(4, 2.0))

    def test_gradient_of_sum_equals_sum_of_gradients(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 3))

        def f(t):
            return ad.sum_of_squares(t["x"])

        def g(t):
            return ad.sum_all(ad.relu(t["x"]))

        _, gf = value_and_grad(f, {"x": x})
        _, gg = value_and_grad(g, {"x": x})
        _, gfg = value_and_grad(lambda t: ad.add(f(t), g(t)), {"x": x})
        np.testing.assert_allclose(gfg["x"], gf["x"] + gg["x"], atol=1e-15)

    def test_determinism_bitwise(self):
        rng = np.random.default_rng(2)
        arrays = {"x": rng.normal(size=(6, 4)), "y": rng.normal(size=(6, 4))}

        def build(t):
            s = ad.matmul_nt(ad.normalize_rows(t["x"]), ad.normalize_rows(t["y"]))
            return ad.sum_all(ad.paired_logsumexp_excl_diag(s, ad.matmul_nt(t["x"], t["x"])))

        v1, g1 = value_and_grad(build, arrays)
        v2, g2 = value_and_grad(build, arrays)
        assert v1 == v2
        for k in arrays:
            np.testing.assert_array_equal(g1[k], g2[k])

    def test_backward_requires_scalar(self):
        with pytest.raises(ValueError, match="scalar"):
            backward(Tensor(np.ones(3)))

    def test_non_finite_forward_aborts_with_op_name(self):
        with pytest.raises(NonFiniteError, match="scale"):
            ad.scale(Tensor(np.array([1e308])), 1e308)

    def test_finite_diff_restores_inputs(self):
        x = np.arange(6.0).reshape(2, 3)
        original = x.copy()
        finite_diff_grad(lambda t: ad.sum_of_squares(t["x"]), {"x": x})
        np.testing.assert_array_equal(x, original)

    def test_finite_diff_quadratic(self):
        # 0.5 * theta^2 at theta=3: derivative 3 within 1e-8
        g = finite_diff_grad(
            lambda t: ad.scale(ad.sum_of_squares(t["theta"]), 0.5),
            {"theta": np.array([3.0])},
            epsilon=1e-4,
        )
        np.testing.assert_allclose(g["theta"], [3.0], atol=1e-8)
