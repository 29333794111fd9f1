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

"""Isolation forest written against `RngStream` so that fitting is
reproducible from a seed.
"""

from __future__ import annotations

__all__ = [
    "IsolationForestModel",
    "IsolationTree",
    "anomaly_score",
    "average_path_length",
    "iforest_fit",
    "iforest_score",
]

import dataclasses
import logging
import math

import numpy as np
from scipy.special import digamma

from .errors import ConfigError, ShapeError
from .rng import RngStream

_LOG = logging.getLogger(__name__)


def average_path_length(n: int | np.ndarray) -> np.ndarray:
    """Return ``c(n) = 2 H(n - 1) - 2 (n - 1) / n``, zero for ``n <= 1``.

    ``H(k)`` is the harmonic number, computed as ``digamma(k + 1) + gamma``.
    """
    n = np.asarray(n, dtype=np.float64)
    safe = np.maximum(n, 2.0)
    harmonic = digamma(safe) + np.euler_gamma
    return np.where(n > 1, 2.0 * harmonic - 2.0 * (safe - 1.0) / safe, 0.0)


def anomaly_score(mean_path: float | np.ndarray, subsample_size: int) -> np.ndarray:
    """Return ``2 ** (-mean_path / c(subsample_size))``."""
    return np.power(2.0, -np.asarray(mean_path, dtype=np.float64) / average_path_length(subsample_size))


@dataclasses.dataclass
class IsolationTree:
    """Isolation tree stored as parallel node arrays.

    Node ``i`` is a leaf when ``feature[i] == -1``, ``size[i]`` is the number
    of training points that reached it. Points with ``x[feature] < threshold``
    go to the left child.
    """

    feature: list[int] = dataclasses.field(default_factory=list)
    threshold: list[float] = dataclasses.field(default_factory=list)
    left: list[int] = dataclasses.field(default_factory=list)
    right: list[int] = dataclasses.field(default_factory=list)
    size: list[int] = dataclasses.field(default_factory=list)

    @classmethod
    def fit(cls, points: np.ndarray, height_limit: int, rng: RngStream) -> IsolationTree:
        tree = cls()
        tree._grow(points, 0, height_limit, rng)
        return tree

    def _grow(self, points: np.ndarray, depth: int, height_limit: int, rng: RngStream) -> int:
        node = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.size.append(points.shape[0])
        if depth >= height_limit or points.shape[0] <= 1:
            return node
        lows, highs = points.min(axis=0), points.max(axis=0)
        candidates = np.flatnonzero(highs > lows)
        if candidates.size == 0:
            return node
        feature = int(candidates[int(rng.integers(0, candidates.size))])
        threshold = float(rng.uniform(lows[feature], highs[feature]))
        goes_left = points[:, feature] < threshold
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = self._grow(points[goes_left], depth + 1, height_limit, rng)
        self.right[node] = self._grow(points[~goes_left], depth + 1, height_limit, rng)
        return node

    def path_length(self, x: np.ndarray) -> float:
        """Return path length of a point, leaves add ``c(size)``."""
        node, depth = 0, 0
        while self.feature[node] != -1:
            node = self.left[node] if x[self.feature[node]] < self.threshold[node] else self.right[node]
            depth += 1
        return depth + float(average_path_length(self.size[node]))


@dataclasses.dataclass
class IsolationForestModel:
    """Fitted isolation forest."""

    trees: list[IsolationTree]
    subsample_size: int
    n_features: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def height_limit(self) -> int:
        return math.ceil(math.log2(self.subsample_size))

    def mean_path_length(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != self.n_features:
            raise ShapeError((-1, self.n_features), tuple(points.shape), "isolation forest input")
        return np.array([np.mean([tree.path_length(x) for tree in self.trees]) for x in points])


def iforest_fit(
    features: np.ndarray, n_trees: int, subsample_size: int, rng: RngStream
) -> IsolationForestModel:
    """Fit an isolation forest.

    Parameters
    ----------
    features : `numpy.ndarray`
        Training points, shape ``(n, d)``.
    n_trees : `int`
        Number of trees.
    subsample_size : `int`
        Points per tree, capped at ``n``.
    rng : `RngStream`
        Source of randomness.

    Returns
    -------
    model : `IsolationForestModel`
        Fitted forest, tree height limit is ``ceil(log2(subsample_size))``.

    Raises
    ------
    ConfigError
        Raised if the subsample size is below 2 or there are no trees.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError((-1, -1), tuple(features.shape), "isolation forest features")
    subsample_size = min(subsample_size, features.shape[0])
    if subsample_size < 2 or n_trees < 1:
        raise ConfigError(f"Need subsample size >= 2 and n_trees >= 1, got {subsample_size}, {n_trees}")
    height_limit = math.ceil(math.log2(subsample_size))
    trees = []
    for index in range(n_trees):
        tree_rng = rng.fork("tree", index)
        sample = features[tree_rng.choice(features.shape[0], subsample_size)]
        trees.append(IsolationTree.fit(sample, height_limit, tree_rng))
    _LOG.debug("Fitted %d isolation trees on %d points", n_trees, features.shape[0])
    return IsolationForestModel(trees, subsample_size, features.shape[1])


def iforest_score(model: IsolationForestModel, points: np.ndarray) -> np.ndarray:
    """Return anomaly score in ``(0, 1)`` of every point."""
    return anomaly_score(model.mean_path_length(points), model.subsample_size)
