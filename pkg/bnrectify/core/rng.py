"""
Counter-based random streams

Every random draw in bnrectify comes from a :class:`RngStream`. A stream
is addressed by a ``(seed, stream_id)`` pair and backed by numpy's
Philox-4x64 generator, so independent streams (one per image, per epoch,
per evaluation cell) are derived by changing the key rather than by
splitting one long sequence.
"""

import hashlib
from dataclasses import dataclass

import numpy as np


ALGORITHM = "philox4x64"

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """
    Identity of a reproducible random stream.

    :ivar seed: 64-bit seed.
    :ivar stream_id: 64-bit stream identifier.
    """

    seed: int
    stream_id: int = 0
    algorithm: str = ALGORITHM

    def __post_init__(self):
        object.__setattr__(self, "seed", self.seed & _MASK64)
        object.__setattr__(self, "stream_id", self.stream_id & _MASK64)

    def generator(self) -> np.random.Generator:
        """
        Create a fresh generator positioned at the start of the stream

        :return: A numpy generator whose sequence depends only on
            ``(seed, stream_id)``.
        :rtype: :class:`numpy.random.Generator`
        """
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *parts) -> "RngStream":
        """
        Derive an independent stream labelled by ``parts``

        :return: A new stream with the same stream id and a seed mixed
            with a hash of the labels.
        :rtype: :class:`RngStream`
        """
        return RngStream(derive_seed(self.seed, *parts), self.stream_id)


def derive_seed(seed: int, *parts) -> int:
    """
    Mix a seed with a label hash: ``seed XOR blake2b(parts)``

    :param seed: The base seed.
    :type seed: int

    :return: A 64-bit seed.
    :rtype: int
    """
    label = ":".join(str(part) for part in parts).encode("utf-8")
    digest = hashlib.blake2b(label, digest_size=8).digest()
    return (seed ^ int.from_bytes(digest, "little")) & _MASK64


def generator(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Shortcut for ``RngStream(seed, stream_id).generator()``."""
    return RngStream(seed, stream_id).generator()
