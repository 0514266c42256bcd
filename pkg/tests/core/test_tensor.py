import numpy as np
import oracles
import pytest

from bnrectify.core import tensor
from bnrectify.core.errors import SemanticError, ShapeError
from bnrectify.core.rng import generator


def _numeric_gradient(f, x, step=1e-6):
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + step
        plus = f()
        x[index] = original - step
        minus = f()
        x[index] = original
        grad[index] = (plus - minus) / (2 * step)
    return grad


@pytest.mark.parametrize("case", range(100))
class TestConv2dOracle:

    def test_matches_naive_loops(self, case):
        rng = generator(100, case)
        n, cin, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        k = int(rng.integers(1, 4))
        h, w = rng.integers(k, 7, size=2)
        stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        x = rng.normal(size=(n, cin, h, w)).astype(np.float32)
        weights = rng.normal(size=(cout, cin, k, k)).astype(np.float32)
        bias = rng.normal(size=cout).astype(np.float32)
        result = tensor.conv2d(x, weights, bias, stride, padding)
        expected = oracles.conv2d(x, weights, bias, stride, padding)
        np.testing.assert_allclose(result, expected, rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("case", range(100))
class TestPoolingAndDenseOracles:

    def test_avgpool(self, case):
        rng = generator(200, case)
        k = int(rng.integers(1, 4))
        x = rng.normal(size=(2, 2, *rng.integers(k, 8, size=2))).astype(np.float32)
        np.testing.assert_allclose(tensor.avgpool2d(x, k), oracles.avgpool2d(x, k), atol=1e-5)

    def test_dense(self, case):
        rng = generator(300, case)
        d, k = int(rng.integers(1, 10)), int(rng.integers(1, 6))
        x = rng.normal(size=(3, d)).astype(np.float32)
        weights = rng.normal(size=(k, d)).astype(np.float32)
        bias = rng.normal(size=k).astype(np.float32)
        np.testing.assert_allclose(
            tensor.dense(x, weights, bias), oracles.dense(x, weights, bias), rtol=1e-5, atol=1e-5
        )


class TestConv2d:

    def test_output_shape(self):
        x = np.zeros((2, 3, 7, 5), dtype=np.float32)
        weights = np.zeros((4, 3, 3, 3), dtype=np.float32)
        out = tensor.conv2d(x, weights, np.zeros(4, dtype=np.float32), stride=2, padding=1)
        assert out.shape == (2, 4, 4, 3)

    def test_channel_mismatch_names_both_shapes(self):
        x = np.zeros((1, 2, 5, 5), dtype=np.float32)
        weights = np.zeros((4, 3, 3, 3), dtype=np.float32)
        with pytest.raises(ShapeError, match=r"\(1, 2, 5, 5\).*\(4, 3, 3, 3\)"):
            tensor.conv2d(x, weights, np.zeros(4, dtype=np.float32))

    def test_kernel_larger_than_input(self):
        with pytest.raises(ShapeError):
            tensor.conv2d(
                np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)), np.zeros(1), padding=0
            )

    def test_preserves_float64(self):
        out = tensor.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
        assert out.dtype == np.float64

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
    def test_backward_matches_finite_differences(self, rng, stride, padding):
        x = rng.normal(size=(2, 2, 5, 5))
        weights = rng.normal(size=(3, 2, 3, 3))
        bias = rng.normal(size=3)
        out_shape = tensor.conv2d(x, weights, bias, stride, padding).shape
        upstream = rng.normal(size=out_shape)

        def loss():
            return float((tensor.conv2d(x, weights, bias, stride, padding) * upstream).sum())

        gx, gw, gb = tensor.conv2d_backward(x, weights, stride, padding, upstream)
        np.testing.assert_allclose(gx, _numeric_gradient(loss, x), atol=1e-6)
        np.testing.assert_allclose(gw, _numeric_gradient(loss, weights), atol=1e-6)
        np.testing.assert_allclose(gb, _numeric_gradient(loss, bias), atol=1e-6)


class TestSmallOps:

    def test_relu_and_backward(self):
        x = np.array([-1.0, 0.0, 2.0])
        assert np.array_equal(tensor.relu(x), [0.0, 0.0, 2.0])
        assert np.array_equal(tensor.relu_backward(x, np.ones(3)), [0.0, 0.0, 1.0])

    def test_avgpool_drops_trailing_rows(self):
        x = np.arange(25, dtype=np.float32).reshape(1, 1, 5, 5)
        assert tensor.avgpool2d(x, 2).shape == (1, 1, 2, 2)

    def test_avgpool_backward_spreads_evenly(self):
        grad = tensor.avgpool2d_backward((1, 1, 5, 4), 2, np.ones((1, 1, 2, 2)))
        assert grad[0, 0, :4, :4].tolist() == [[0.25] * 4] * 4
        assert not grad[0, 0, 4].any()

    def test_global_avg_pool(self):
        x = np.arange(8, dtype=np.float32).reshape(1, 2, 2, 2)
        assert tensor.global_avg_pool(x).ravel().tolist() == [1.5, 5.5]

    def test_dense_flattens_4d_input(self):
        out = tensor.dense(np.ones((2, 3, 1, 1)), np.ones((4, 3)), np.zeros(4))
        assert out.shape == (2, 4)

    def test_softmax_rows_sum_to_one(self, rng):
        probs = tensor.softmax(rng.normal(size=(5, 7)) * 50)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)


class TestSoftmaxXent:

    def test_uniform_logits_give_log_k(self):
        loss, _ = tensor.softmax_xent(np.zeros((4, 10)), np.arange(4))
        assert loss == pytest.approx(np.log(10))

    def test_equal_logits_are_uniform(self):
        assert np.array_equal(tensor.softmax(np.full((2, 4), 3.0)), np.full((2, 4), 0.25))

    def test_probabilities_are_the_softmax(self, rng):
        logits = rng.normal(size=(3, 5))
        _, probs = tensor.softmax_xent(logits, np.array([0, 4, 2]))
        assert np.array_equal(probs, tensor.softmax(logits))

    def test_label_out_of_range(self):
        with pytest.raises(SemanticError):
            tensor.softmax_xent(np.zeros((2, 3)), np.array([0, 3]))

    def test_backward_matches_finite_differences(self, rng):
        logits = rng.normal(size=(3, 4))
        labels = np.array([0, 3, 1])
        _, probs = tensor.softmax_xent(logits, labels)

        def loss():
            return tensor.softmax_xent(logits, labels)[0]

        np.testing.assert_allclose(
            tensor.softmax_xent_backward(probs, labels), _numeric_gradient(loss, logits),
            atol=1e-7,
        )


class TestAsTensor:

    def test_wrong_rank(self):
        with pytest.raises(ShapeError):
            tensor.as_tensor(np.zeros((2, 2)))

    def test_non_finite(self):
        with pytest.raises(SemanticError):
            tensor.as_tensor(np.full((1, 1, 1, 1), np.nan))
