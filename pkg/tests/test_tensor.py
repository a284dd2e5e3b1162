import numpy as np
import pytest

from roadcond import tensor as T
from roadcond.tensor import DomainError, GraphError, ShapeError, Tensor, apply_primitive, backward, seeded_init


def _conv_loop(x, w, stride, pad):
    # scalar reference: cross-correlation, NHWC / (KH, KW, Cin, Cout)
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    xp = np.zeros((n, h + 2 * pad, wd + 2 * pad, cin))
    xp[:, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, ho, wo, cout))
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for o in range(cout):
                    acc = 0.0
                    for di in range(kh):
                        for dj in range(kw):
                            for c in range(cin):
                                acc += xp[b, i * stride + di, j * stride + dj, c] * w[di, dj, c, o]
                    out[b, i, j, o] = acc
    return out


class TestForward:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 5, 4, 1))
        y = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), stride=1, pad=0)
        np.testing.assert_array_equal(y.data, x)

    def test_ramp_conv(self):
        x = np.arange(9.0).reshape(1, 3, 3, 1)
        y = T.conv2d(Tensor(x), Tensor(np.ones((2, 2, 1, 1))))
        np.testing.assert_array_equal(y.data[0, :, :, 0], [[8, 12], [20, 24]])

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1)])
    def test_conv_matches_loop(self, rng, stride, pad):
        x = rng.normal(size=(2, 5, 6, 3))
        w = rng.normal(size=(3, 3, 3, 2))
        np.testing.assert_allclose(T.conv2d(Tensor(x), Tensor(w), stride, pad).data,
                                   _conv_loop(x, w, stride, pad), atol=1e-12)

    def test_softmax_uniform(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)

    def test_softmax_rows_sum_to_one(self, rng):
        y = T.softmax(Tensor(rng.normal(0, 30, size=(20, 7)))).data
        assert (y >= 0).all()
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)

    def test_log_softmax_stable(self):
        y = T.log_softmax(Tensor([[1000.0, 0.0]])).data
        np.testing.assert_allclose(y, [[0.0, -1000.0]])

    def test_l2_norm_unit(self, rng):
        y = T.l2_norm(Tensor(rng.normal(size=(50, 5)))).data
        np.testing.assert_allclose(np.linalg.norm(y, axis=-1), 1.0, atol=1e-9)

    def test_l2_norm_zero(self):
        with pytest.raises(DomainError):
            T.l2_norm(Tensor(np.zeros((1, 3))))
        np.testing.assert_array_equal(T.l2_norm(Tensor(np.zeros((1, 3))), eps=1e-12).data, 0.0)

    def test_max_pool(self):
        x = np.arange(16.0).reshape(1, 4, 4, 1)
        np.testing.assert_array_equal(T.max_pool2d(Tensor(x), 2).data[0, :, :, 0], [[5, 7], [13, 15]])

    def test_global_avg_pool(self, rng):
        x = rng.normal(size=(2, 3, 4, 5))
        np.testing.assert_allclose(T.global_avg_pool(Tensor(x)).data, x.mean(axis=(1, 2)))

    def test_upsample(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
        y = T.upsample2d(Tensor(x), 2).data[0, :, :, 0]
        np.testing.assert_array_equal(y, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_broadcast_over_leading_dims(self):
        y = T.add(Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(y.data, [[1, 2, 3], [1, 2, 3]])

    def test_apply_primitive_dispatch(self):
        y = apply_primitive("matmul", [Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]])])
        np.testing.assert_array_equal(y.data, [[1, 2], [3, 4]])
        assert apply_primitive("concat", [Tensor([1.0]), Tensor([2.0])], axis=0).shape == (2,)
        with pytest.raises(ValueError, match="unknown primitive"):
            apply_primitive("fft", [Tensor([1.0])])


class TestErrors:
    def test_shape_mismatch_names_op(self):
        with pytest.raises(ShapeError, match="matmul"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ShapeError, match="add"):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))

    def test_kernel_larger_than_input(self):
        with pytest.raises(ShapeError, match="conv2d"):
            T.conv2d(Tensor(np.ones((1, 2, 2, 1))), Tensor(np.ones((3, 3, 1, 1))))

    def test_conv_channel_mismatch(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.ones((1, 4, 4, 2))), Tensor(np.ones((3, 3, 1, 1))))

    def test_log_domain(self):
        with pytest.raises(DomainError):
            T.log(Tensor([1.0, 0.0]))
        with pytest.raises(DomainError):
            T.log(Tensor([-1.0]))


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        backward(T.sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_square(self):
        x = Tensor([3.0], requires_grad=True)
        backward(T.sum(x * x))
        np.testing.assert_array_equal(x.grad, [6.0])

    def test_shared_input_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        backward(T.sum(x * x + x))
        np.testing.assert_array_equal(x.grad, [5.0])

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(GraphError):
            backward(x * 2.0)

    def test_second_backward_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        loss = T.sum(x * x)
        backward(loss)
        with pytest.raises(GraphError):
            backward(loss)

    def test_unused_leaf_gets_zero(self):
        x = Tensor([1.0], requires_grad=True)
        unused = Tensor(np.ones((2, 2)), requires_grad=True)
        backward(T.sum(x), leaves=[x, unused])
        np.testing.assert_array_equal(unused.grad, np.zeros((2, 2)))

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with T.no_grad():
            y = x * x
        assert y._parents == () and not y.requires_grad

    def test_max_pool_routes_to_first_max(self):
        x = Tensor(np.ones((1, 2, 2, 1)), requires_grad=True)
        backward(T.sum(T.max_pool2d(x, 2)))
        np.testing.assert_array_equal(x.grad[0, :, :, 0], [[1, 0], [0, 0]])

    def test_topological_order(self, rng):
        a = Tensor(rng.normal(size=3), requires_grad=True)
        b = T.exp(a)
        c = b * a
        order = T._topo_order(T.sum(c + b))
        pos = {id(t): i for i, t in enumerate(order)}
        for node in order:
            for p in node._parents:
                if p.requires_grad:
                    assert pos[id(p)] < pos[id(node)]


class TestInit:
    def test_zeros(self):
        assert not seeded_init((3, 4), "zeros").data.any()

    def test_deterministic(self):
        np.testing.assert_array_equal(seeded_init((5, 6), seed=3).data, seeded_init((5, 6), seed=3).data)
        assert not np.array_equal(seeded_init((5, 6), seed=3).data, seeded_init((5, 6), seed=4).data)

    def test_fan_in_bound(self):
        x = seeded_init((100, 50), seed=0, fan_in=100, dtype=np.float64).data
        assert np.abs(x).max() <= 0.1
        assert np.abs(x).max() > 0.09

    def test_unknown_scheme(self):
        with pytest.raises(ValueError, match="scheme"):
            seeded_init((2,), "normal")


class TestThreads:
    def test_parallel_conv_matches_serial(self, rng):
        x = Tensor(rng.normal(size=(7, 6, 6, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 3, 3, 4)), requires_grad=True)
        before = T.num_threads()
        results = []
        try:
            for n in (1, 3):
                T.set_num_threads(n)
                x.grad = w.grad = None
                y = T.conv2d(x, w, stride=1, pad=1)
                backward(T.sum(y * y))
                results.append((y.data.copy(), x.grad.copy(), w.grad.copy()))
        finally:
            T.set_num_threads(before)
        (y1, gx1, gw1), (y3, gx3, gw3) = results
        np.testing.assert_array_equal(y1, y3)
        np.testing.assert_array_equal(gx1, gx3)
        np.testing.assert_allclose(gw1, gw3, rtol=1e-12)

    def test_parallel_reruns_bit_identical(self, rng):
        x = Tensor(rng.normal(size=(8, 5, 5, 2)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 3, 2, 3)), requires_grad=True)
        before = T.num_threads()
        grads = []
        try:
            T.set_num_threads(4)
            for _ in range(2):
                w.grad = None
                backward(T.sum(T.conv2d(x, w, pad=1)))
                grads.append(w.grad.copy())
        finally:
            T.set_num_threads(before)
        np.testing.assert_array_equal(grads[0], grads[1])
