"""
Batch, group and instance normalization

Batch normalization keeps its population statistics in an explicit,
immutable :class:`BNState`. Train-mode forwards return a new state
instead of mutating the old one, and eval-mode forwards read it only,
which is what makes the statistics safe to rectify from outside.

Statistics are reduced in float64 and stored in the dtype of the
activations. Variances are population (biased) variances: the sum of
squared deviations divided by the number of reduced elements.
"""

import enum
from dataclasses import dataclass, replace

import numpy as np

from bnrectify.core import const
from bnrectify.core.errors import SemanticError, ShapeError, shape_mismatch
from bnrectify.core.tensor import Tensor


class StatsScope(str, enum.Enum):
    """Which population statistics a rectification overwrites."""

    BOTH = "both"
    MEAN_ONLY = "mean_only"
    VARIANCE_ONLY = "variance_only"

    @property
    def rectifies_mean(self) -> bool:
        return self is not StatsScope.VARIANCE_ONLY

    @property
    def rectifies_variance(self) -> bool:
        return self is not StatsScope.MEAN_ONLY


@dataclass(frozen=True)
class BatchStats:
    """
    Per-channel mean and variance of a batch.

    :ivar mean: Shape ``(C,)``.
    :ivar variance: Shape ``(C,)``, non-negative.
    """

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.variance.shape or self.mean.ndim != 1:
            raise shape_mismatch("batch stats", self.mean.shape, self.variance.shape)
        if np.any(self.variance < 0):
            raise SemanticError("batch variance must be non-negative")


@dataclass(frozen=True)
class InstanceStats:
    """
    Per-sample, per-channel spatial mean and variance, both ``(N, C)``.
    """

    mean: np.ndarray
    variance: np.ndarray


@dataclass(frozen=True)
class BNState:
    """
    Learnable affine parameters and population statistics of one batch
    normalization layer.
    """

    gamma: np.ndarray
    beta: np.ndarray
    pop_mean: np.ndarray
    pop_var: np.ndarray
    epsilon: float = const.BN_EPSILON
    momentum: float = const.BN_MOMENTUM

    def __post_init__(self):
        shapes = {a.shape for a in (self.gamma, self.beta, self.pop_mean, self.pop_var)}
        if len(shapes) != 1 or self.gamma.ndim != 1:
            raise ShapeError(f"BN vectors must share one length, got {sorted(shapes)}")
        if np.any(self.pop_var < 0):
            raise SemanticError("population variance must be non-negative")
        if not self.epsilon > 0:
            raise SemanticError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.momentum <= 1:
            raise SemanticError(f"momentum must lie in (0, 1], got {self.momentum}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def initial(cls, channels: int, epsilon: float = const.BN_EPSILON,
                momentum: float = const.BN_MOMENTUM, dtype=np.float32) -> "BNState":
        """Identity affine transform, zero mean and unit variance."""
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            pop_mean=np.zeros(channels, dtype=dtype),
            pop_var=np.ones(channels, dtype=dtype),
            epsilon=epsilon,
            momentum=momentum,
        )

    def rectified(self, stats: BatchStats, scope: StatsScope) -> "BNState":
        """
        Replace population statistics with batch statistics

        :param stats: Statistics measured on representation samples.
        :type stats: :class:`BatchStats`
        :param scope: Which of the two statistics to replace; the other
            keeps its current population value.
        :type scope: :class:`StatsScope`

        :return: A new state; ``gamma`` and ``beta`` are shared, not copied.
        :rtype: :class:`BNState`
        """
        _check_channels("rectify", stats.mean.shape[0], self.channels)
        return replace(
            self,
            pop_mean=stats.mean if scope.rectifies_mean else self.pop_mean,
            pop_var=stats.variance if scope.rectifies_variance else self.pop_var,
        )


def _check_channels(what: str, got: int, expected: int) -> None:
    if got != expected:
        raise ShapeError(f"{what}: input has {got} channels, layer expects {expected}")


def _moments(x: np.ndarray, axes: tuple) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=axes, dtype=np.float64, keepdims=True)
    variance = np.square(x - mean).mean(axis=axes, keepdims=True)
    return mean, variance


def _per_channel(vector: np.ndarray) -> np.ndarray:
    return vector[None, :, None, None]


def _affine_normalize(x, mean, variance, gamma, beta, epsilon) -> Tensor:
    scale = gamma / np.sqrt(variance + epsilon)
    return (x - _per_channel(mean)) * _per_channel(scale) + _per_channel(beta)


def compute_batch_stats(x: Tensor) -> BatchStats:
    """
    Per-channel mean and variance over batch and spatial dimensions

    :param x: Activations of shape ``(N, C, H, W)``.

    :return: The statistics, in the dtype of ``x``.
    :rtype: :class:`BatchStats`
    """
    if x.ndim != 4:
        raise ShapeError(f"expected a 4-D tensor, got shape {x.shape}")
    n, _, h, w = x.shape
    if n * h * w == 0:
        raise SemanticError(f"cannot compute batch statistics of empty shape {x.shape}")
    mean, variance = _moments(x, (0, 2, 3))
    return BatchStats(mean.ravel().astype(x.dtype), variance.ravel().astype(x.dtype))


def bn_forward_eval(x: Tensor, state: BNState) -> Tensor:
    """
    Normalize with the population statistics held in ``state``

    :return: ``gamma * (x - pop_mean) / sqrt(pop_var + eps) + beta``.
    :rtype: :class:`numpy.ndarray`
    """
    _check_channels("bn_forward_eval", x.shape[1], state.channels)
    return _affine_normalize(
        x, state.pop_mean, state.pop_var, state.gamma, state.beta, state.epsilon
    )


def bn_forward_train(x: Tensor, state: BNState) -> tuple[Tensor, BNState]:
    """
    Normalize with the statistics of ``x`` and update the moving averages

    :return: ``(y, new_state)``; only ``pop_mean`` and ``pop_var``
        differ between ``state`` and ``new_state``.
    :rtype: tuple
    """
    _check_channels("bn_forward_train", x.shape[1], state.channels)
    stats = compute_batch_stats(x)
    y = _affine_normalize(x, stats.mean, stats.variance, state.gamma, state.beta,
                          state.epsilon)
    m = state.momentum
    new_state = replace(
        state,
        pop_mean=((1 - m) * state.pop_mean + m * stats.mean).astype(x.dtype),
        pop_var=((1 - m) * state.pop_var + m * stats.variance).astype(x.dtype),
    )
    return y, new_state


def batch_norm_backward(
    x: Tensor, gamma: np.ndarray, epsilon: float, grad_out: Tensor
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """
    Gradients of a train-mode batch normalization

    Population statistics receive no gradient.

    :return: ``(grad_x, grad_gamma, grad_beta)``.
    :rtype: tuple
    """
    mean, variance = _moments(x, (0, 2, 3))
    inv_std = 1.0 / np.sqrt(variance + epsilon)
    x_hat = (x - mean) * inv_std
    grad_gamma = (grad_out * x_hat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_x_hat = grad_out * _per_channel(gamma)
    grad_x = _normalized_backward(x_hat, inv_std, grad_x_hat, (0, 2, 3))
    return (
        grad_x.astype(x.dtype),
        grad_gamma.astype(x.dtype),
        grad_beta.astype(x.dtype),
    )


def _normalized_backward(x_hat, inv_std, grad_x_hat, axes) -> np.ndarray:
    return inv_std * (
        grad_x_hat
        - grad_x_hat.mean(axis=axes, keepdims=True)
        - x_hat * (grad_x_hat * x_hat).mean(axis=axes, keepdims=True)
    )


def compute_instance_stats(x: Tensor) -> InstanceStats:
    """
    Spatial mean and variance of every (sample, channel) pair

    :return: Statistics of shape ``(N, C)``.
    :rtype: :class:`InstanceStats`
    """
    if x.ndim != 4:
        raise ShapeError(f"expected a 4-D tensor, got shape {x.shape}")
    if x.shape[2] * x.shape[3] == 0:
        raise SemanticError(f"empty spatial extent in shape {x.shape}")
    mean, variance = _moments(x, (2, 3))
    return InstanceStats(
        mean[:, :, 0, 0].astype(x.dtype), variance[:, :, 0, 0].astype(x.dtype)
    )


def in_forward(
    x: Tensor, gamma: np.ndarray, beta: np.ndarray, epsilon: float = const.BN_EPSILON
) -> Tensor:
    """
    Instance normalization: every sample and channel is normalized by
    its own spatial statistics, then scaled and shifted per channel.
    """
    _check_channels("in_forward", x.shape[1], gamma.shape[0])
    stats = compute_instance_stats(x)
    inv_std = 1.0 / np.sqrt(stats.variance + epsilon)
    x_hat = (x - stats.mean[:, :, None, None]) * inv_std[:, :, None, None]
    return (x_hat * _per_channel(gamma) + _per_channel(beta)).astype(x.dtype)


def gn_forward(
    x: Tensor,
    groups: int,
    gamma: np.ndarray,
    beta: np.ndarray,
    epsilon: float = const.BN_EPSILON,
) -> Tensor:
    """
    Group normalization over ``channels-in-group x spatial`` per sample

    :param groups: Number of channel groups; must divide ``C``.
    :type groups: int
    """
    x_hat, _ = _group_normalize(x, groups, gamma, epsilon)
    return (x_hat * _per_channel(gamma) + _per_channel(beta)).astype(x.dtype)


def _group_normalize(x, groups, gamma, epsilon):
    if x.ndim != 4:
        raise ShapeError(f"expected a 4-D tensor, got shape {x.shape}")
    n, c, h, w = x.shape
    _check_channels("gn_forward", c, gamma.shape[0])
    if groups < 1 or c % groups:
        raise SemanticError(f"{c} channels cannot be split into {groups} groups")
    if h * w == 0:
        raise SemanticError(f"empty spatial extent in shape {x.shape}")
    grouped = x.reshape(n, groups, -1)
    mean, variance = _moments(grouped, (2,))
    mean, variance = mean.astype(x.dtype), variance.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(variance + epsilon)
    x_hat = ((grouped - mean) * inv_std).reshape(x.shape)
    return x_hat, inv_std


def group_norm_backward(
    x: Tensor, groups: int, gamma: np.ndarray, epsilon: float, grad_out: Tensor
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """
    Gradients of :func:`gn_forward`; instance normalization is the
    ``groups == C`` case.

    :return: ``(grad_x, grad_gamma, grad_beta)``.
    :rtype: tuple
    """
    n = x.shape[0]
    x_hat, inv_std = _group_normalize(x, groups, gamma, epsilon)
    grad_gamma = (grad_out * x_hat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_x_hat = (grad_out * _per_channel(gamma)).reshape(n, groups, -1)
    grad_x = _normalized_backward(x_hat.reshape(n, groups, -1), inv_std, grad_x_hat, (2,))
    return grad_x.reshape(x.shape).astype(x.dtype), grad_gamma, grad_beta
