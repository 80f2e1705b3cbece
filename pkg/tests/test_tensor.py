import numpy as np
import pytest

import tensor as T
from errors import ContractError, DimensionError
from helpers import probe, rand

TOL = 1e-5


class TestElementwise:
    def test_scalar_broadcast_and_values(self):
        x = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal((x + 1.0).data, [[2.0, 3.0], [4.0, 5.0]])
        assert np.array_equal((2.0 * x).data, [[2.0, 4.0], [6.0, 8.0]])
        assert np.array_equal((1.0 - x).data, [[0.0, -1.0], [-2.0, -3.0]])

    def test_mismatched_shapes_raise(self):
        with pytest.raises(DimensionError):
            T.Tensor(np.ones((2, 3))) + T.Tensor(np.ones((3, 2)))

    def test_size_one_tensor_acts_as_scalar(self, rng):
        x, s = rand(rng, 3, 4), rand(rng, 1)
        assert (x * s).shape == (3, 4)
        assert T.grad_check(lambda a, b: T.tensor_sum(a * b), [x, s]) <= TOL

    def test_division_by_tensor_is_rejected(self):
        with pytest.raises(ContractError):
            T.Tensor(1.0) / T.Tensor(2.0)

    @pytest.mark.parametrize("op", [T.exp, T.sigmoid, lambda x: T.leaky_relu(x, 0.1),
                                    T.absolute, lambda x: T.clamp(x, -0.5, 0.5)])
    def test_unary_gradients(self, rng, op):
        x = rand(rng, 2, 3, 4)
        f = probe(rng, (2, 3, 4))
        assert T.grad_check(lambda a: f(op(a)), x) <= TOL

    def test_log_gradient(self, rng):
        x = T.Tensor(rng.uniform(0.5, 2.0, size=(3, 3)))
        assert T.grad_check(lambda a: T.tensor_sum(T.log(a)), x) <= TOL

    def test_sigmoid_is_stable_for_large_inputs(self):
        y = T.sigmoid(T.Tensor([-1000.0, 0.0, 1000.0])).data
        assert np.all(np.isfinite(y))
        assert y[0] == 0.0 and y[1] == 0.5 and y[2] == 1.0

    def test_clamp_limits(self, rng):
        y = T.clamp(rand(rng, 50, scale=3.0), -1.0, 1.0).data
        assert y.min() >= -1.0 and y.max() <= 1.0


class TestReductions:
    def test_sum_and_mean_gradients(self, rng):
        x = rand(rng, 2, 3, 4)
        f = probe(rng, (2, 4))
        assert T.grad_check(lambda a: f(T.tensor_sum(a, axis=1)), x) <= TOL
        g = probe(rng, (1, 3, 1))
        assert T.grad_check(lambda a: g(T.mean(a, axis=(0, 2), keepdims=True)), x) <= TOL

    def test_softmax_rows_sum_to_one(self, rng):
        y = T.softmax(rand(rng, 5, 7, scale=10.0), axis=-1).data
        assert np.all(y >= 0)
        assert np.max(np.abs(y.sum(axis=-1) - 1.0)) <= 1e-12

    def test_softmax_gradient(self, rng):
        x = rand(rng, 3, 5)
        f = probe(rng, (3, 5))
        assert T.grad_check(lambda a: f(T.softmax(a, axis=0)), x) <= TOL

    def test_softmax_bad_axis(self, rng):
        with pytest.raises(DimensionError):
            T.softmax(rand(rng, 2, 2), axis=3)


class TestLinearAlgebra:
    def test_matmul_matches_numpy(self, rng):
        a, b = rand(rng, 2, 3, 4), rand(rng, 2, 4, 5)
        assert np.allclose(T.matmul(a, b).data, a.data @ b.data)

    def test_matmul_gradient(self, rng):
        a, b = rand(rng, 2, 3, 4), rand(rng, 2, 4, 5)
        f = probe(rng, (2, 3, 5))
        assert T.grad_check(lambda x, y: f(x @ y), [a, b]) <= TOL

    def test_matmul_shape_error_names_shapes(self, rng):
        with pytest.raises(DimensionError, match=r"\(3, 4\).*\(3, 4\)"):
            T.matmul(rand(rng, 3, 4), rand(rng, 3, 4))


class TestStructure:
    def test_reshape_transpose_gradients(self, rng):
        x = rand(rng, 2, 3, 4)
        f = probe(rng, (4, 6))
        assert T.grad_check(lambda a: f(T.reshape(T.transpose(a, (2, 0, 1)), (4, 6))), x) <= TOL

    def test_concat_stack_gradients(self, rng):
        a, b = rand(rng, 2, 3), rand(rng, 1, 3)
        f = probe(rng, (3, 3))
        assert T.grad_check(lambda x, y: f(T.concat([x, y], axis=0)), [a, b]) <= TOL
        c = rand(rng, 2, 3)
        g = probe(rng, (2, 2, 3))
        assert T.grad_check(lambda x, y: g(T.stack([x, y], axis=1)), [a, c]) <= TOL

    def test_concat_mismatch(self, rng):
        with pytest.raises(DimensionError):
            T.concat([rand(rng, 2, 3), rand(rng, 2, 4)], axis=0)

    def test_getitem_pad_expand_gradients(self, rng):
        x = rand(rng, 2, 4, 4)
        f = probe(rng, (2, 2, 4))
        assert T.grad_check(lambda a: f(a[:, 1:3, :]), x) <= TOL
        g = probe(rng, (2, 7, 5))
        assert T.grad_check(lambda a: g(T.pad_hw(a, 1, 2, 0, 1)), x) <= TOL
        y = rand(rng, 1, 4, 1)
        h = probe(rng, (3, 4, 5))
        assert T.grad_check(lambda a: h(T.expand(a, (3, 4, 5))), y) <= TOL

    def test_expand_rejects_incompatible(self, rng):
        with pytest.raises(DimensionError):
            T.expand(rand(rng, 2, 3), (4, 3))

    def test_pixel_shuffle_inverse(self, rng):
        x = rand(rng, 8, 3, 5)
        y = T.pixel_shuffle(x, 2)
        assert y.shape == (2, 6, 10)
        assert np.array_equal(T.pixel_unshuffle(y, 2).data, x.data)

    def test_pixel_shuffle_layout(self):
        x = T.Tensor(np.arange(4.0).reshape(4, 1, 1))
        assert np.array_equal(T.pixel_shuffle(x, 2).data[0], [[0.0, 1.0], [2.0, 3.0]])

    def test_pixel_shuffle_gradients(self, rng):
        x = rand(rng, 8, 2, 3)
        f = probe(rng, (2, 4, 6))
        assert T.grad_check(lambda a: f(T.pixel_shuffle(a, 2)), x) <= TOL
        g = probe(rng, (32, 1, 1))
        assert T.grad_check(lambda a: g(T.pixel_unshuffle(a, 2)), rand(rng, 8, 2, 2)) <= TOL

    def test_pixel_shuffle_rejects_bad_channels(self, rng):
        with pytest.raises(DimensionError):
            T.pixel_shuffle(rand(rng, 6, 2, 2), 2)


def _naive_conv(x, w, b, stride, padding):
    c_out, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    h_out = (xp.shape[1] - k) // stride + 1
    w_out = (xp.shape[2] - k) // stride + 1
    y = np.zeros((c_out, h_out, w_out))
    for o in range(c_out):
        for i in range(h_out):
            for j in range(w_out):
                patch = xp[:, i * stride:i * stride + k, j * stride:j * stride + k]
                y[o, i, j] = np.sum(patch * w[o]) + b[o]
    return y


class TestConv:
    @pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0)])
    def test_matches_direct_loops(self, rng, stride, padding):
        x, w, b = rand(rng, 3, 6, 6), rand(rng, 4, 3, 3, 3), rand(rng, 4)
        got = T.conv2d(x, w, b, stride, padding).data
        assert np.allclose(got, _naive_conv(x.data, w.data, b.data, stride, padding), atol=1e-12)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradient(self, rng, stride):
        x, w, b = rand(rng, 2, 6, 6), rand(rng, 3, 2, 3, 3), rand(rng, 3)
        out_shape = T.conv2d(x, w, b, stride, 1).shape
        f = probe(rng, out_shape)
        assert T.grad_check(lambda a, k, c: f(T.conv2d(a, k, c, stride, 1)), [x, w, b]) <= TOL

    def test_kernel_larger_than_input(self, rng):
        with pytest.raises(DimensionError):
            T.conv2d(rand(rng, 1, 2, 2), rand(rng, 1, 1, 5, 5))

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            T.conv2d(rand(rng, 2, 4, 4), rand(rng, 1, 3, 3, 3))


class TestBackward:
    def test_non_scalar_root(self, rng):
        with pytest.raises(ContractError):
            T.backward(rand(rng, 2, 2))

    def test_unreached_leaf_gets_zeros(self, rng):
        a, b = T.Tensor.parameter(rng.normal(size=3)), T.Tensor.parameter(rng.normal(size=3))
        ga, gb = T.backward(T.tensor_sum(a * 2.0), [a, b])
        assert np.array_equal(ga, np.full(3, 2.0))
        assert np.array_equal(gb, np.zeros(3))

    def test_shared_node_accumulates_once(self):
        x = T.Tensor.parameter([3.0])
        y = x * x
        (g,) = T.backward(T.tensor_sum(y + y), [x])
        assert np.array_equal(g, [12.0])

    def test_long_chain_does_not_recurse(self):
        x = T.Tensor.parameter([1.0])
        y = x
        for _ in range(5000):
            y = y + 1.0
        (g,) = T.backward(T.tensor_sum(y), [x])
        assert g[0] == 1.0

    def test_constants_are_not_recorded(self):
        y = T.Tensor([1.0]) * T.Tensor([2.0])
        assert not y.requires_grad and y._parents == ()

    def test_no_grad_records_nothing_and_restores(self):
        x = T.Tensor.parameter([2.0])
        with T.no_grad():
            with T.no_grad():
                inner = x * x
            outer = T.exp(x)
        after = x * x
        assert not inner.requires_grad and inner._parents == ()
        assert not outer.requires_grad
        assert inner.data[0] == 4.0
        assert after.requires_grad and T.grad_enabled()


class TestWorkedExamples:
    def test_matmul_identity_and_triple_loop(self, rng):
        a = rand(rng, 5, 4)
        assert np.array_equal(T.matmul(a, T.Tensor(np.eye(4))).data, a.data)
        b = rand(rng, 4, 3)
        expected = np.array([[sum(a.data[i, k] * b.data[k, j] for k in range(4)) for j in range(3)]
                             for i in range(5)])
        assert np.max(np.abs(T.matmul(a, b).data - expected)) <= 1e-12

    def test_softmax_hand_values(self):
        y = T.softmax(T.Tensor([0.0, 10.0])).data
        small = 1.0 / (1.0 + np.exp(10.0))
        assert abs(y[0] - small) <= 1e-15 and abs(y[1] - (1.0 - small)) <= 1e-15
        assert np.array_equal(T.softmax(T.Tensor(np.full(4, 3.0))).data, np.full(4, 0.25))

    def test_softmax_shift_invariant(self, rng):
        x = rng.normal(size=6)
        assert np.allclose(T.softmax(T.Tensor(x)).data, T.softmax(T.Tensor(x - 7.5)).data, atol=1e-15)

    def test_conv_hand_values(self, rng):
        x = rand(rng, 2, 4, 4)
        ident = np.zeros((2, 2, 1, 1))
        ident[0, 0] = ident[1, 1] = 1.0
        assert np.array_equal(T.conv2d(x, T.Tensor(ident), T.Tensor(np.zeros(2))).data, x.data)
        ones = T.conv2d(T.Tensor(np.full((1, 5, 5), 0.5)), T.Tensor(np.ones((1, 1, 3, 3))), None, 1, 1)
        assert np.all(ones.data[0, 1:-1, 1:-1] == 4.5)

    def test_pixel_shuffle_unit_factor(self, rng):
        x = rand(rng, 3, 2, 2)
        assert np.array_equal(T.pixel_shuffle(x, 1).data, x.data)

    def test_quadratic_gradient(self, rng):
        x = T.Tensor.parameter(rng.normal(size=(2, 3)))
        (g,) = T.backward(T.tensor_sum(x * x), [x])
        assert np.array_equal(g, 2.0 * x.data)

    def test_composite_graph(self, rng):
        x, w, b = rand(rng, 2, 4, 4), rand(rng, 3, 2, 3, 3), rand(rng, 3)
        m = rand(rng, 16, 5)
        f = probe(rng, (3, 5))

        def run(a, k, c, mm):
            y = T.reshape(T.conv2d(a, k, c, 1, 1), (3, 16))
            return f(T.softmax(T.matmul(y, mm), axis=-1))

        assert T.grad_check(run, [x, w, b, m]) <= TOL

    def test_checker_on_linear_function(self, rng):
        assert T.grad_check(T.tensor_sum, rand(rng, 2, 3, 3)) <= 1e-10

    def test_checker_catches_corrupted_gradient(self, rng):
        def doubled_square(x):
            return T.Tensor.from_op(x.data ** 2, (x,), lambda g: (2.0 * 2.0 * x.data * g,), "bad_square")

        x = T.Tensor(rng.uniform(1.0, 2.0, size=(2, 3)))
        assert T.grad_check(lambda a: T.tensor_sum(doubled_square(a)), x) >= 0.5

    def test_repeated_runs_are_bit_identical(self, rng):
        x, w = rand(rng, 2, 5, 5), rand(rng, 3, 2, 3, 3)
        first = T.conv2d(x, w, None, 2, 1).data
        assert first.tobytes() == T.conv2d(x, w, None, 2, 1).data.tobytes()
