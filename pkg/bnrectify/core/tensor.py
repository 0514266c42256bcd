"""
Dense tensor primitives and their hand-written backward passes

A tensor is a plain :class:`numpy.ndarray` in ``(N, C, H, W)`` layout,
float32 for everything stored on disk. The functions here preserve the
dtype of their inputs so that gradient checks can run the very same code
in float64.

Summation order is fixed by construction: convolutions and dense layers
are lowered to a single matrix product over ``(Cin, kh, kw)`` columns in
that row-major order, pooling reduces with numpy's pairwise sum over a
fixed axis layout. For a fixed BLAS build and thread count every call
is bit-reproducible.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from bnrectify.core.errors import SemanticError, ShapeError, shape_mismatch


Tensor = np.ndarray


def as_tensor(data, ndim: int = 4, dtype=np.float32) -> Tensor:
    """
    Validate and convert array-like data into a tensor

    :param data: Anything :func:`numpy.asarray` accepts.
    :param ndim: Required number of dimensions.
    :type ndim: int
    :param dtype: Target dtype.

    :return: A C-contiguous array of the requested dtype.
    :rtype: :class:`numpy.ndarray`
    """
    array = np.ascontiguousarray(data, dtype=dtype)
    if array.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-D tensor, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise SemanticError("tensor contains non-finite values")
    return array


def _windows(x: Tensor, kh: int, kw: int, stride: int, padding: int) -> Tensor:
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # (N, C, Ho, Wo, kh, kw) view, no copy yet.
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d(
    x: Tensor, weights: Tensor, bias: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """
    2-D cross-correlation

    :param x: Input of shape ``(N, Cin, H, W)``.
    :param weights: Kernel of shape ``(Cout, Cin, kh, kw)``.
    :param bias: Per-output-channel bias of shape ``(Cout,)``.
    :param stride: Positive step between windows.
    :type stride: int
    :param padding: Zero padding added to each spatial border.
    :type padding: int

    :return: Output of shape ``(N, Cout, Ho, Wo)`` with
        ``Ho = floor((H + 2p - kh) / stride) + 1``.
    :rtype: :class:`numpy.ndarray`
    """
    if x.ndim != 4 or weights.ndim != 4 or x.shape[1] != weights.shape[1]:
        raise shape_mismatch("conv2d input vs weights", x.shape, weights.shape)
    if stride < 1 or padding < 0:
        raise SemanticError(f"invalid stride {stride} / padding {padding}")
    n, _, h, w = x.shape
    cout, cin, kh, kw = weights.shape
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise shape_mismatch("conv2d kernel larger than padded input", x.shape, weights.shape)
    if bias.shape != (cout,):
        raise shape_mismatch("conv2d bias", bias.shape, (cout,))

    windows = _windows(x, kh, kw, stride, padding)
    ho, wo = windows.shape[2], windows.shape[3]
    columns = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    out = columns @ weights.reshape(cout, -1).T
    out += bias
    return np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))


def conv2d_backward(
    x: Tensor, weights: Tensor, stride: int, padding: int, grad_out: Tensor
) -> tuple[Tensor, Tensor, Tensor]:
    """
    Gradients of :func:`conv2d`

    :return: ``(grad_x, grad_weights, grad_bias)``.
    :rtype: tuple
    """
    n, c, h, w = x.shape
    cout, cin, kh, kw = weights.shape
    windows = _windows(x, kh, kw, stride, padding)
    ho, wo = windows.shape[2], windows.shape[3]
    columns = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    grad_rows = grad_out.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)

    grad_weights = (grad_rows.T @ columns).reshape(weights.shape)
    grad_bias = grad_rows.sum(axis=0)

    grad_columns = (grad_rows @ weights.reshape(cout, -1)).reshape(n, ho, wo, cin, kh, kw)
    grad_padded = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            grad_padded[
                :, :, i : i + stride * ho : stride, j : j + stride * wo : stride
            ] += grad_columns[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    grad_x = grad_padded[:, :, padding : padding + h, padding : padding + w]
    return np.ascontiguousarray(grad_x), grad_weights, grad_bias


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    return grad_out * (x > 0)


def avgpool2d(x: Tensor, k: int) -> Tensor:
    """
    Non-overlapping ``k x k`` average pooling; trailing rows and columns
    that do not fill a window are dropped.
    """
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    if k < 1 or ho == 0 or wo == 0:
        raise ShapeError(f"avgpool2d window {k} does not fit input shape {x.shape}")
    trimmed = x[:, :, : ho * k, : wo * k].reshape(n, c, ho, k, wo, k)
    return trimmed.mean(axis=(3, 5), dtype=x.dtype)


def avgpool2d_backward(input_shape: tuple, k: int, grad_out: Tensor) -> Tensor:
    n, c, h, w = input_shape
    ho, wo = grad_out.shape[2], grad_out.shape[3]
    grad_x = np.zeros(input_shape, dtype=grad_out.dtype)
    share = grad_out / (k * k)
    grad_x[:, :, : ho * k, : wo * k] = np.repeat(np.repeat(share, k, axis=2), k, axis=3)
    return grad_x


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean: ``(N, C, H, W) -> (N, C, 1, 1)``."""
    return x.mean(axis=(2, 3), keepdims=True, dtype=x.dtype)


def global_avg_pool_backward(input_shape: tuple, grad_out: Tensor) -> Tensor:
    h, w = input_shape[2], input_shape[3]
    return np.broadcast_to(grad_out / (h * w), input_shape).copy()


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """
    Fully connected layer ``y = x W^T + b``

    :param x: Input of shape ``(N, D)``; 4-D inputs are flattened.
    :param weights: Matrix of shape ``(K, D)``.
    :param bias: Vector of shape ``(K,)``.

    :return: Output of shape ``(N, K)``.
    :rtype: :class:`numpy.ndarray`
    """
    flat = x.reshape(x.shape[0], -1)
    if weights.ndim != 2 or flat.shape[1] != weights.shape[1]:
        raise shape_mismatch("dense input vs weights", x.shape, weights.shape)
    return flat @ weights.T + bias


def dense_backward(
    x: Tensor, weights: Tensor, grad_out: Tensor
) -> tuple[Tensor, Tensor, Tensor]:
    flat = x.reshape(x.shape[0], -1)
    grad_x = (grad_out @ weights).reshape(x.shape)
    return grad_x, grad_out.T @ flat, grad_out.sum(axis=0)


def softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax_xent(logits: Tensor, labels: np.ndarray) -> tuple[float, Tensor]:
    """
    Mean softmax cross-entropy

    :param logits: Array of shape ``(N, K)``.
    :param labels: Integer class indices of shape ``(N,)``.

    :return: ``(loss, probs)``; the gradient of the loss with respect to
        the logits is ``(probs - onehot(labels)) / N``.
    :rtype: tuple
    """
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise shape_mismatch("softmax_xent labels vs logits", labels.shape, (n,))
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise SemanticError(f"labels must lie in [0, {k}), got range "
                            f"[{labels.min()}, {labels.max()}]")
    probs = softmax(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), labels].mean())
    return loss, probs


def softmax_xent_backward(probs: Tensor, labels: np.ndarray) -> Tensor:
    n = probs.shape[0]
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    return grad / n
