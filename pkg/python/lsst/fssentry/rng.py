# This file is part of fssentry.
#
# Developed for the LSST Data Management System.
# This product includes software developed by the LSST Project
# (https://www.lsst.org).
# See the COPYRIGHT file at the top-level directory of this distribution
# for details of code ownership.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

from __future__ import annotations

__all__ = ["RngStream", "stream_id_for"]

import hashlib
from collections.abc import Sequence

import numpy as np
import torch

_MASK64 = (1 << 64) - 1


def stream_id_for(*names: str | int) -> int:
    """Derive a 64-bit stream identifier from a sequence of names.

    Parameters
    ----------
    *names : `str` or `int`
        Components identifying the stream, e.g. ``("attack", "pgd", 3)``.

    Returns
    -------
    stream_id : `int`
        Deterministic 64-bit identifier.
    """
    key = "/".join(str(name) for name in names)
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


class RngStream:
    """Seeded random number stream.

    Identical ``(seed, stream_id)`` pairs produce bit-identical draw
    sequences, different ``stream_id`` values give independent streams.

    Parameters
    ----------
    seed : `int`
        Master seed, 64-bit.
    stream_id : `int`, optional
        Stream identifier, 64-bit.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.counter = 0
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def fork(self, *names: str | int) -> RngStream:
        """Return an independent child stream.

        The child depends only on the parent's seed and stream id and on
        ``names``, not on how many values were drawn from the parent.

        Parameters
        ----------
        *names : `str` or `int`
            Components naming the child stream.

        Returns
        -------
        child : `RngStream`
            New stream.
        """
        return RngStream(self.seed, stream_id_for(self.stream_id, *names))

    @property
    def generator(self) -> np.random.Generator:
        """Underlying numpy generator (`numpy.random.Generator`)."""
        return self._gen

    def integers(
        self, low: int, high: int | None = None, size: int | Sequence[int] | None = None
    ) -> np.ndarray:
        """Draw integers from ``[low, high)``."""
        self.counter += 1
        return self._gen.integers(low, high, size=size)

    def choice(self, n: int, size: int) -> np.ndarray:
        """Draw ``size`` distinct indices from ``range(n)``."""
        self.counter += 1
        return self._gen.choice(n, size=size, replace=False)

    def permutation(self, n: int) -> np.ndarray:
        """Return a random permutation of ``range(n)``."""
        self.counter += 1
        return self._gen.permutation(n)

    def uniform(self, low: float, high: float, size: int | Sequence[int] | None = None) -> np.ndarray:
        """Draw uniform floats from ``[low, high)``."""
        self.counter += 1
        return self._gen.uniform(low, high, size=size)

    def normal(self, scale: float | np.ndarray = 1.0, size: int | Sequence[int] | None = None) -> np.ndarray:
        """Draw zero-mean normal floats."""
        self.counter += 1
        return self._gen.normal(0.0, scale, size=size)

    def bernoulli(self, p: float, size: int | Sequence[int]) -> np.ndarray:
        """Draw a boolean mask with probability ``p`` of `True`."""
        self.counter += 1
        return self._gen.random(size=size) < p

    def torch_uniform(
        self, shape: Sequence[int], low: float, high: float, dtype: torch.dtype = torch.float32
    ) -> torch.Tensor:
        """Draw a uniform torch tensor."""
        return torch.from_numpy(self.uniform(low, high, size=tuple(shape))).to(dtype)

    def torch_normal(
        self, shape: Sequence[int], std: float | np.ndarray = 1.0, dtype: torch.dtype = torch.float32
    ) -> torch.Tensor:
        """Draw a zero-mean normal torch tensor."""
        return torch.from_numpy(np.asarray(self.normal(std, size=tuple(shape)))).to(dtype)
