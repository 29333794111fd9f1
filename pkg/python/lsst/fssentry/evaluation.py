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

"""Attack success rates and threshold-free detection metrics."""

from __future__ import annotations

__all__ = [
    "DIRECTIONS",
    "SCENARIOS",
    "Direction",
    "asr",
    "auroc",
    "auroc_sweep",
    "roc_curve",
]

import logging
from collections.abc import Sequence
from typing import Literal

import numpy as np
import torch
from scipy.integrate import trapezoid
from scipy.stats import rankdata

from .attacks import AdvSupportSet
from .data import Dataset, sample_attack_episode
from .errors import ConfigError
from .models import FewShotModel, predict
from .rng import RngStream

_LOG = logging.getLogger(__name__)

Direction = Literal["flag_if_above", "flag_if_below"]
DIRECTIONS: tuple[Direction, ...] = ("flag_if_above", "flag_if_below")

Scenario = Literal["fixed_supports", "new_supports"]
SCENARIOS: tuple[Scenario, ...] = ("fixed_supports", "new_supports")


def _oriented(
    clean_scores: Sequence[float], adv_scores: Sequence[float], direction: Direction
) -> tuple[np.ndarray, np.ndarray]:
    clean = np.asarray(clean_scores, dtype=np.float64)
    adv = np.asarray(adv_scores, dtype=np.float64)
    if clean.size == 0 or adv.size == 0:
        raise ValueError("AUROC needs at least one clean and one adversarial score")
    if direction not in DIRECTIONS:
        raise ValueError(f"Unknown direction {direction!r}")
    if direction == "flag_if_below":
        return -clean, -adv
    return clean, adv


def auroc(clean_scores: Sequence[float], adv_scores: Sequence[float], direction: Direction) -> float:
    """Return the area under the ROC curve from score ranks.

    The value is the probability that an adversarial score ranks as more
    adversarial than a clean one, ties counting one half.

    Parameters
    ----------
    clean_scores : `~collections.abc.Sequence` [ `float` ]
        Scores of clean sets.
    adv_scores : `~collections.abc.Sequence` [ `float` ]
        Scores of adversarial sets.
    direction : `str`
        "flag_if_above" if large scores are adversarial, "flag_if_below"
        otherwise.

    Returns
    -------
    auroc : `float`
        Value in ``[0, 1]``.

    Raises
    ------
    ValueError
        Raised if either score list is empty.
    """
    clean, adv = _oriented(clean_scores, adv_scores, direction)
    ranks = rankdata(np.concatenate([clean, adv]))
    u_stat = ranks[clean.size :].sum() - adv.size * (adv.size + 1) / 2
    return float(u_stat / (adv.size * clean.size))


def roc_curve(
    clean_scores: Sequence[float], adv_scores: Sequence[float], direction: Direction
) -> tuple[np.ndarray, np.ndarray]:
    """Sweep the threshold over every observed score.

    Returns
    -------
    fpr : `numpy.ndarray`
        False positive rates, starting at 0 and ending at 1.
    tpr : `numpy.ndarray`
        True positive rates at the same thresholds.
    """
    clean, adv = _oriented(clean_scores, adv_scores, direction)
    thresholds = np.unique(np.concatenate([clean, adv]))[::-1]
    fpr = [0.0] + [float(np.mean(clean >= t)) for t in thresholds]
    tpr = [0.0] + [float(np.mean(adv >= t)) for t in thresholds]
    return np.array(fpr), np.array(tpr)


def auroc_sweep(clean_scores: Sequence[float], adv_scores: Sequence[float], direction: Direction) -> float:
    """Return the trapezoid integral of `roc_curve`."""
    fpr, tpr = roc_curve(clean_scores, adv_scores, direction)
    return float(trapezoid(tpr, fpr))


def asr(
    model: FewShotModel,
    adv_set: AdvSupportSet,
    dataset: Dataset,
    scenario: Scenario,
    n_episodes: int,
    rng: RngStream,
    n_query: int = 15,
) -> tuple[float, float]:
    """Measure attack success rate of an adversarial support.

    With "fixed_supports" the adversarial support of the target class is
    used as is; with "new_supports" the stored perturbation is added to a
    freshly drawn clean support of the class and clipped to ``[0, 1]``.
    Either way the other ways and all queries are redrawn every episode.

    Parameters
    ----------
    model : `FewShotModel`
        Attacked model.
    adv_set : `AdvSupportSet`
        Adversarial support.
    dataset : `Dataset`
        Dataset containing the target class.
    scenario : `str`
        "fixed_supports" or "new_supports".
    n_episodes : `int`
        Number of episodes.
    rng : `RngStream`
        Source of randomness.
    n_query : `int`
        Target-class queries per episode.

    Returns
    -------
    mean : `float`
        Mean over episodes of the fraction of target queries not assigned
        to the target way.
    sd : `float`
        Standard deviation over episodes.

    Raises
    ------
    SamplingError
        Raised if the target class has too few samples.
    """
    if scenario not in SCENARIOS:
        raise ConfigError(f"Unknown scenario {scenario!r}, expected one of {SCENARIOS}")
    cfg = adv_set.config
    target = adv_set.target_class
    rates = []
    with torch.no_grad():
        for _ in range(n_episodes):
            if scenario == "fixed_supports":
                support_ids = adv_set.base_ids
                support = adv_set.adversarial
            else:
                support_ids = tuple(int(i) for i in rng.choice(dataset.n_samples(target), cfg.n_shot))
                clean = dataset.images[target][list(support_ids)]
                support = torch.clamp(clean + adv_set.delta, 0.0, 1.0)
            episode = sample_attack_episode(dataset, target, support_ids, cfg.k_way, cfg.n_shot, n_query, rng)
            full_support, labels = episode.assemble(support)
            logits = model.logits(full_support, labels, episode.target_queries, episode.k_way)
            rates.append(float((predict(logits) != episode.target_way).double().mean()))
    values = np.array(rates)
    return float(values.mean()), float(values.std())
