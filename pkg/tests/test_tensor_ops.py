import math

import numpy as np
import pytest

from carpe import tensor as T
from carpe.errors import ContractError, NumericError, ShapeError


def matmul_oracle(a, b):
    """Naive triple loop, independent of the library path."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


class TestMatmul:
    def test_identity(self):
        a = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(a, T.Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_small_product_vs_triple_loop(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        expect = matmul_oracle(a, b)
        np.testing.assert_array_equal(expect, [[19.0, 22.0], [43.0, 50.0]])
        out = T.matmul(T.Tensor(a), T.Tensor(b))
        np.testing.assert_array_equal(out.data, expect)

    def test_zero_left_factor(self):
        out = T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.arange(12.0).reshape(3, 4)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_random_vs_triple_loop(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(4, 6))
        b = rng.normal(size=(6, 3))
        out = T.matmul(T.Tensor(a), T.Tensor(b))
        assert np.abs(out.data - matmul_oracle(a, b)).max() < 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((2, 3))))

    def test_backward_formulas(self):
        rng = np.random.default_rng(3)
        a = T.parameter(rng.normal(size=(3, 4)))
        b = T.parameter(rng.normal(size=(4, 2)))
        out = T.matmul(a, b)
        T.sum_all(out).backward()
        # dC = ones => dA = 1 @ B^T, dB = A^T @ 1
        np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T, atol=1e-14)
        np.testing.assert_allclose(b.grad, a.data.T @ np.ones((3, 2)), atol=1e-14)


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax(T.Tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)

    def test_closed_form_log3(self):
        out = T.softmax(T.Tensor([0.0, math.log(3.0)]))
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-15)

    def test_shift_invariance_large_inputs(self):
        # [1000, 1001] must match [0, 1]: softmax is shift invariant.
        big = T.softmax(T.Tensor([1000.0, 1001.0])).data
        ref = T.softmax(T.Tensor([0.0, 1.0])).data
        assert np.abs(big - ref).max() < 1e-10
        np.testing.assert_allclose(big, [1 / (1 + math.e), math.e / (1 + math.e)], atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_sums_to_one_and_positive(self, seed):
        rng = np.random.default_rng(seed)
        v = rng.normal(scale=10.0, size=rng.integers(1, 9))
        y = T.softmax(T.Tensor(v)).data
        assert abs(y.sum() - 1.0) < 1e-12
        assert (y > 0).all()

    def test_non_finite_input_rejected(self):
        with pytest.raises(NumericError):
            T.softmax(T.Tensor([0.0, np.nan]))
        with pytest.raises(NumericError):
            T.softmax(T.Tensor([0.0, np.inf]))


class TestBackward:
    def test_sum_gradient(self):
        x = T.parameter([1.0, 2.0, 3.0])
        T.sum_all(x).backward()
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_square_gradient(self):
        x = T.parameter([1.0, 2.0])
        T.sum_all(T.mul(x, x)).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_accumulates_across_calls(self):
        x = T.parameter([1.0, 2.0])
        loss = T.sum_all(T.mul(x, x))
        loss.backward()
        loss.backward()
        np.testing.assert_array_equal(x.grad, [4.0, 8.0])

    def test_shared_node_fanout(self):
        x = T.parameter([3.0])
        y = T.add(T.mul(x, x), x)  # x^2 + x -> grad 2x + 1
        T.sum_all(y).backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_non_scalar_loss_rejected(self):
        x = T.parameter([1.0, 2.0])
        with pytest.raises(ContractError):
            T.mul(x, x).backward()

    def test_bitwise_deterministic(self):
        def run():
            rng = np.random.default_rng(42)
            a = T.parameter(rng.normal(size=(6, 5)))
            b = T.parameter(rng.normal(size=(5, 4)))
            g = T.parameter(np.ones(4))
            h = T.gelu(T.matmul(a, b))
            out = T.layer_norm(h, g, T.parameter(np.zeros(4)))
            T.sum_all(T.mul(out, out)).backward()
            return a.grad.copy(), b.grad.copy()

        ga1, gb1 = run()
        ga2, gb2 = run()
        assert np.array_equal(ga1, ga2)
        assert np.array_equal(gb1, gb2)


class TestElementwiseAndShape:
    def test_add_sub_mul_shapes_checked(self):
        a = T.Tensor(np.zeros((2, 2)))
        b = T.Tensor(np.zeros((2, 3)))
        for op in (T.add, T.sub, T.mul):
            with pytest.raises(ShapeError):
                op(a, b)

    def test_scale_by_scalar_tensor(self):
        x = T.parameter([[1.0, 2.0], [3.0, 4.0]])
        s = T.parameter([2.0])
        out = T.scale(x, s)
        np.testing.assert_array_equal(out.data, [[2.0, 4.0], [6.0, 8.0]])
        T.sum_all(out).backward()
        np.testing.assert_array_equal(x.grad, np.full((2, 2), 2.0))
        np.testing.assert_allclose(s.grad, [10.0])

    def test_add_row_broadcast(self):
        x = T.parameter(np.zeros((3, 2)))
        b = T.parameter([1.0, -1.0])
        out = T.add_row(x, b)
        np.testing.assert_array_equal(out.data, np.tile([1.0, -1.0], (3, 1)))
        T.sum_all(out).backward()
        np.testing.assert_array_equal(b.grad, [3.0, 3.0])

    def test_concat_narrow_roundtrip(self):
        rng = np.random.default_rng(0)
        parts = [T.parameter(rng.normal(size=(n, 3))) for n in (2, 1, 4)]
        cat = T.concat_rows(parts)
        assert cat.shape == (7, 3)
        mid = T.narrow(cat, 0, 2, 1)
        np.testing.assert_array_equal(mid.data, parts[1].data)
        T.sum_all(mid).backward()
        np.testing.assert_array_equal(parts[1].grad, np.ones((1, 3)))
        np.testing.assert_array_equal(parts[0].grad, np.zeros((2, 3)))

    def test_narrow_columns(self):
        x = T.parameter(np.arange(12.0).reshape(3, 4))
        cols = T.narrow(x, 1, 1, 2)
        np.testing.assert_array_equal(cols.data, x.data[:, 1:3])

    def test_mean_rows_matches_loop(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(64, 7))
        got = T.mean_rows(T.Tensor(x)).data
        want = np.zeros(7)
        for row in x:
            want += row
        want /= 64
        assert np.abs(got - want).max() < 1e-12


class TestLayerNormGelu:
    def test_layer_norm_rows_standardized(self):
        rng = np.random.default_rng(9)
        x = T.Tensor(rng.normal(size=(4, 16), scale=3.0))
        out = T.layer_norm(x, T.Tensor(np.ones(16)), T.Tensor(np.zeros(16))).data
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-4)

    def test_gelu_against_erf_formula(self):
        xs = np.linspace(-4, 4, 41)
        got = T.gelu(T.Tensor(xs.reshape(1, -1))).data.ravel()
        want = np.array([0.5 * x * (1 + math.erf(x / math.sqrt(2))) for x in xs])
        assert np.abs(got - want).max() < 1e-12


class TestEmbeddingAndCrossEntropy:
    def test_lookup_and_scatter(self):
        table = T.parameter(np.arange(12.0).reshape(4, 3))
        out = T.embedding(table, [1, 1, 3])
        np.testing.assert_array_equal(out.data, table.data[[1, 1, 3]])
        T.sum_all(out).backward()
        expect = np.zeros((4, 3))
        expect[1] = 2.0
        expect[3] = 1.0
        np.testing.assert_array_equal(table.grad, expect)

    def test_cross_entropy_uniform_bound(self):
        # All-zero logits on k classes cost exactly ln k.
        logits = T.Tensor(np.zeros((3, 20)))
        loss = T.cross_entropy(logits, [0, 5, 19], np.ones(3, dtype=bool))
        assert abs(loss.item() - math.log(20.0)) < 1e-12

    def test_masked_rows_get_zero_gradient(self):
        rng = np.random.default_rng(2)
        logits = T.parameter(rng.normal(size=(5, 7)))
        mask = np.array([False, True, False, True, False])
        T.cross_entropy(logits, [1, 2, 3, 4, 5], mask).backward()
        assert np.array_equal(logits.grad[0], np.zeros(7))
        assert np.array_equal(logits.grad[2], np.zeros(7))
        assert np.array_equal(logits.grad[4], np.zeros(7))
        assert np.abs(logits.grad[1]).max() > 0

    def test_cross_entropy_matches_log_softmax_loop(self):
        rng = np.random.default_rng(7)
        z = rng.normal(size=(4, 6), scale=2.0)
        targets = [3, 0, 2, 5]
        mask = np.array([True, True, False, True])
        loss = T.cross_entropy(T.Tensor(z), targets, mask).item()
        ref = 0.0
        for i in np.flatnonzero(mask):
            denom = sum(math.exp(v) for v in z[i])
            ref -= math.log(math.exp(z[i, targets[i]]) / denom)
        ref /= mask.sum()
        assert abs(loss - ref) < 1e-12

    def test_no_selected_rows_rejected(self):
        with pytest.raises(ContractError):
            T.cross_entropy(T.Tensor(np.zeros((2, 3))), [0, 1], np.zeros(2, dtype=bool))
