import numpy as np
import pytest

from volwarp import autodiff as ad
from volwarp.autodiff import Node, backward


def numeric_grad(f, x, h=1e-6):
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x, dtype=np.float64)
    for i in np.ndindex(x.shape):
        up = x.copy()
        up[i] += h
        down = x.copy()
        down[i] -= h
        g[i] = (f(up) - f(down)) / (2 * h)
    return g


def check_op(build, *inputs, h=1e-6, tol=5e-6):
    """Gradcheck `build(*nodes) -> Node` against finite differences for every input."""
    nodes = [Node(x) for x in inputs]
    out = ad.nsum(build(*nodes))
    backward(out)
    for k, x in enumerate(inputs):
        def f(xk, k=k):
            trial = [Node(v) for v in inputs]
            trial[k] = Node(xk)
            return float(ad.nsum(build(*trial)).value)

        fd = numeric_grad(f, np.asarray(x, dtype=np.float64), h)
        rel = np.abs(nodes[k].grad - fd) / np.maximum(np.maximum(np.abs(fd), np.abs(nodes[k].grad)), 1e-4)
        assert rel.max() < tol, f"input {k}: max rel err {rel.max():.2e}"


class TestElementwise:
    def test_add_sub_mul_div_with_broadcasting(self, rng):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((3, 4))
        row = rng.standard_normal((4,))
        check_op(lambda x, y: ad.add(x, y), a, b)
        check_op(lambda x, y: ad.sub(x, y), a, b)
        check_op(lambda x, y: ad.mul(x, y), a, b)
        check_op(lambda x, y: ad.mul(x, y), a, row)
        check_op(lambda x, y: ad.div(x, y), a, b + 3.0)
        check_op(lambda x, y: ad.div(x, y), a, row + 3.0)

    def test_operator_sugar_matches_functions(self, rng):
        a, b = Node(rng.standard_normal(3)), Node(rng.standard_normal(3))
        assert np.array_equal((a + b).value, ad.add(a, b).value)
        assert np.array_equal((a * b).value, ad.mul(a, b).value)
        assert np.array_equal((a - b).value, ad.sub(a, b).value)
        assert np.array_equal((-a).value, -a.value)

    def test_reductions_and_pointwise(self, rng):
        a = rng.standard_normal((3, 4, 2)) + 0.05
        a[np.abs(a) < 0.02] += 0.05  # keep |x| away from the abs kink
        check_op(lambda x: ad.nmean(x, axis=(0, 1), keepdims=True), a)
        check_op(lambda x: ad.nsum(x, axis=2), a)
        check_op(ad.nabs, a)
        check_op(ad.nsqrt, np.abs(a) + 0.5)
        check_op(ad.nlog, np.abs(a) + 0.5)
        check_op(ad.sigmoid, a)
        check_op(lambda x: ad.leaky_relu(x, 0.01), a)
        check_op(lambda x: ad.softmax(x, axis=0), a)
        check_op(lambda x: ad.clip(x, -0.5, 0.5), a, tol=2e-5)

    def test_shape_ops(self, rng):
        a = rng.standard_normal((2, 3, 4))
        check_op(lambda x: ad.reshape(x, (4, 6)), a)
        check_op(lambda x: ad.transpose(x, (2, 0, 1)), a)
        check_op(lambda x: ad.flip(x, 1), a)
        check_op(lambda x: ad.channel_slice(x, 1, 3), a)

    def test_matmul(self, rng):
        a = rng.standard_normal((3, 5))
        b = rng.standard_normal((5, 2))
        check_op(ad.matmul, a, b)


class TestStructuredOps:
    def test_conv2d_stride1_and_2(self, rng):
        x = rng.standard_normal((6, 6, 3))
        w = rng.standard_normal((3, 3, 3, 4)) * 0.3
        b = rng.standard_normal(4) * 0.1
        check_op(lambda xx, ww, bb: ad.conv2d(xx, ww, bb, stride=1, pad=1), x, w, b)
        check_op(lambda xx, ww, bb: ad.conv2d(xx, ww, bb, stride=2, pad=1), x, w, b)
        check_op(lambda xx, ww, bb: ad.conv2d(xx, ww, bb, stride=1, pad=0), x, w, b)

    def test_conv2d_output_shape(self, rng):
        x = rng.standard_normal((32, 32, 3))
        w = rng.standard_normal((3, 3, 3, 8))
        b = np.zeros(8)
        assert ad.conv2d(Node(x), Node(w), Node(b), stride=2, pad=1).value.shape == (16, 16, 8)

    def test_conv3d(self, rng):
        x = rng.standard_normal((4, 4, 4, 2))
        w = rng.standard_normal((3, 3, 3, 2, 3)) * 0.3
        b = rng.standard_normal(3) * 0.1
        check_op(lambda xx, ww, bb: ad.conv3d(xx, ww, bb, pad=1), x, w, b)

    def test_upsample_and_resize(self, rng):
        x = rng.standard_normal((4, 5, 2))
        check_op(ad.upsample2x, x)
        check_op(lambda xx: ad.linear_resize2d(xx, 9, 7), x)
        up = ad.upsample2x(Node(x))
        assert up.value.shape == (8, 10, 2)
        assert np.array_equal(up.value[::2, ::2], x)

    def test_resize_matrix_align_corners(self):
        m = ad.resize_matrix(4, 7)
        np.testing.assert_allclose(m.sum(axis=1), 1.0)
        np.testing.assert_allclose(m[0], [1, 0, 0, 0])
        np.testing.assert_allclose(m[-1], [0, 0, 0, 1])

    def test_uniform_filter(self, rng):
        x = rng.standard_normal((9, 9, 2))
        check_op(lambda xx: ad.uniform_filter2d(xx, 3), x)
        out = ad.uniform_filter2d(Node(x), 3)
        assert out.value.shape == (7, 7, 2)
        np.testing.assert_allclose(out.value[0, 0], x[:3, :3].mean(axis=(0, 1)))
        with pytest.raises(ValueError):
            ad.uniform_filter2d(Node(x), 11)

    def test_volume_resample_op(self, rng):
        x = rng.standard_normal((4, 4, 4, 2))
        coords = rng.uniform(-0.8, 0.8, size=(3, 3, 3, 3))
        f = (coords + 1.0) * 1.5
        coords += np.where(np.abs(f - np.round(f)) < 0.05, 0.12, 0.0)
        check_op(lambda xx: ad.volume_resample(xx, coords), x, h=1e-5)

    def test_mean_of(self, rng):
        xs = [rng.standard_normal((2, 3)) for _ in range(3)]
        check_op(lambda a, b, c: ad.mean_of([a, b, c]), *xs)


class TestBackwardMechanics:
    def test_diamond_graph_accumulates(self):
        x = Node(np.array([2.0]))
        y = ad.add(ad.mul(x, x), ad.mul(x, 3.0))  # x^2 + 3x -> dy/dx = 2x + 3
        backward(y)
        np.testing.assert_allclose(x.grad, [7.0])

    def test_every_participating_leaf_gets_a_gradient(self, rng):
        leaves = {k: Node(rng.standard_normal((2, 2))) for k in "abc"}
        out = ad.nsum(ad.mul(ad.add(leaves["a"], leaves["b"]), leaves["c"]))
        backward(out)
        for node in leaves.values():
            assert node.grad is not None and node.grad.shape == (2, 2)

    def test_unused_leaf_has_no_gradient(self, rng):
        used = Node(rng.standard_normal(3))
        unused = Node(rng.standard_normal(3))
        backward(ad.nsum(used))
        assert used.grad is not None
        assert unused.grad is None

    def test_backward_seed(self):
        x = Node(np.array([1.0, 2.0]))
        y = ad.mul(x, 2.0)
        backward(y, seed=np.array([1.0, 10.0]))
        np.testing.assert_allclose(x.grad, [2.0, 20.0])

    def test_deep_chain_iterative_traversal(self):
        x = Node(np.array([1.0]))
        y = x
        for _ in range(3000):
            y = ad.add(y, 1.0)
        backward(ad.nsum(y))
        np.testing.assert_allclose(x.grad, [1.0])
