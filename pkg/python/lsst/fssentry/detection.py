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

"""Self-similarity detection of adversarial support sets and the ODIN and
isolation forest baselines.

The inspected class always sits at way 0 of the scored episodes; the other
ways come from a clean context support owned by the defender.
"""

from __future__ import annotations

__all__ = [
    "STATISTICS",
    "AuxSplit",
    "ContextSupport",
    "DetectionScore",
    "OdinConfig",
    "aux_partitions",
    "aux_split",
    "draw_context",
    "embed",
    "filter_direction",
    "iforest_set_score",
    "iforest_tune",
    "loo_accuracy",
    "odin_score",
    "self_similarity_report",
    "u_adv",
    "u_adv_averaged",
    "u_adv_prime",
    "verdict",
]

import dataclasses
import logging
from collections.abc import Mapping, Sequence

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, Field

from .data import Dataset
from .errors import ConfigError, SamplingError
from .evaluation import Direction, auroc
from .filters import AeModel, FilterSpec, apply_filter
from .isolation import IsolationForestModel, iforest_fit, iforest_score
from .models import FewShotModel, predict
from .rng import RngStream

_LOG = logging.getLogger(__name__)

STATISTICS = ("u_adv", "u_adv_avg", "u_adv_prime", "odin", "iforest")

_IDENTITY = FilterSpec(kind="identity")


@dataclasses.dataclass(frozen=True)
class AuxSplit:
    """Auxiliary support and query of one support set."""

    support: torch.Tensor
    query: torch.Tensor
    index: int


@dataclasses.dataclass(frozen=True)
class DetectionScore:
    """Value of a detection statistic for one support set."""

    statistic: str
    value: float
    direction: Direction


@dataclasses.dataclass(frozen=True)
class ContextSupport:
    """Clean supports of the ``K - 1`` ways accompanying an inspected class.

    ``labels`` are way indices starting at 1.
    """

    images: torch.Tensor
    labels: torch.Tensor
    classes: tuple[int, ...]

    @property
    def k_way(self) -> int:
        return len(self.classes) + 1


class OdinConfig(BaseModel):
    """ODIN temperature and input preprocessing magnitude."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    temperature: float = Field(default=100.0, gt=0.0)
    epsilon: float = Field(default=0.002, ge=0.0)


def draw_context(
    dataset: Dataset, target_class: int, k_way: int, n_shot: int, rng: RngStream
) -> ContextSupport:
    """Draw clean supports for the other ways of an inspected class.

    Classes come from the split of ``target_class``, excluding it.
    """
    split = dataset.split[target_class]
    candidates = [cid for cid in dataset.classes(split) if cid != target_class]
    if len(candidates) < k_way - 1:
        raise SamplingError(f"Split {split!r} has {len(candidates)} context classes, {k_way - 1} needed")
    classes = tuple(candidates[int(i)] for i in rng.choice(len(candidates), k_way - 1))
    images = [dataset.images[cid][rng.choice(dataset.n_samples(cid), n_shot).tolist()] for cid in classes]
    labels = torch.arange(1, k_way).repeat_interleave(n_shot)
    return ContextSupport(torch.cat(images), labels, classes)


def aux_split(support: torch.Tensor, rng: RngStream) -> AuxSplit:
    """Split a class support into ``n_shot - 1`` auxiliary supports and one
    auxiliary query chosen at random.

    Raises
    ------
    ConfigError
        Raised for supports with fewer than two samples.
    """
    if support.shape[0] < 2:
        raise ConfigError(f"Auxiliary split needs at least 2 support samples, got {support.shape[0]}")
    return _split_at(support, int(rng.integers(0, support.shape[0])))


def _split_at(support: torch.Tensor, index: int) -> AuxSplit:
    keep = [i for i in range(support.shape[0]) if i != index]
    return AuxSplit(support[keep], support[index : index + 1], index)


def aux_partitions(support: torch.Tensor) -> list[AuxSplit]:
    """Return all leave-one-out auxiliary splits of a class support."""
    if support.shape[0] < 2:
        raise ConfigError(f"Auxiliary split needs at least 2 support samples, got {support.shape[0]}")
    return [_split_at(support, index) for index in range(support.shape[0])]


def filter_direction(spec: FilterSpec) -> Direction:
    """Return the flagging direction of filter-based statistics.

    Bit reduction lowers the logit change of adversarial sets, so its
    direction is "flag_if_below". The flip is intentional and applies to
    every statistic built on a filter: `u_adv`, `u_adv_averaged` and
    `u_adv_prime` all report bit reduction scores as "flag_if_below",
    and AUROC of those cells is oriented the same way.
    """
    return "flag_if_below" if spec.kind == "bitr" else "flag_if_above"


def _aux_logits(
    model: FewShotModel, context: ContextSupport, aux_support: torch.Tensor, query: torch.Tensor
) -> torch.Tensor:
    support = torch.cat([aux_support, context.images])
    labels = torch.cat([torch.zeros(aux_support.shape[0], dtype=torch.long), context.labels])
    return model.logits(support, labels, query, context.k_way)


def _logit_change(
    model: FewShotModel,
    spec: FilterSpec,
    context: ContextSupport,
    split: AuxSplit,
    rng: RngStream,
    ae: AeModel | None,
) -> float:
    filtered = apply_filter(spec, split.support, rng, ae)
    with torch.no_grad():
        before = _aux_logits(model, context, split.support, split.query)
        after = _aux_logits(model, context, filtered, split.query)
    return float((after - before).abs().sum())


def u_adv(
    model: FewShotModel,
    spec: FilterSpec,
    context: ContextSupport,
    split: AuxSplit,
    rng: RngStream,
    ae: AeModel | None = None,
) -> DetectionScore:
    """L1 change of the auxiliary query logits caused by filtering the
    auxiliary support.

    Parameters
    ----------
    model : `FewShotModel`
        Trained model.
    spec : `FilterSpec`
        Filter applied to the auxiliary support.
    context : `ContextSupport`
        Supports of the other ways.
    split : `AuxSplit`
        Auxiliary split of the inspected support.
    rng : `RngStream`
        Source of randomness for stochastic filters.
    ae : `AeModel`, optional
        Autoencoder for the fpa filter kinds.

    Returns
    -------
    score : `DetectionScore`
        Non-negative score.
    """
    value = _logit_change(model, spec, context, split, rng, ae)
    return DetectionScore("u_adv", value, filter_direction(spec))


def u_adv_averaged(
    model: FewShotModel,
    spec: FilterSpec,
    context: ContextSupport,
    support: torch.Tensor,
    rng: RngStream,
    ae: AeModel | None = None,
) -> DetectionScore:
    """Mean of `u_adv` over all leave-one-out splits."""
    values = [
        _logit_change(model, spec, context, split, rng.fork("split", split.index), ae)
        for split in aux_partitions(support)
    ]
    return DetectionScore("u_adv_avg", float(np.mean(values)), filter_direction(spec))


def u_adv_prime(
    model: FewShotModel,
    spec: FilterSpec,
    context: ContextSupport,
    support: torch.Tensor,
    rng: RngStream,
    ae: AeModel | None = None,
) -> DetectionScore:
    """Fraction of leave-one-out auxiliary queries misclassified after
    filtering their auxiliary support.
    """
    wrong = 0
    splits = aux_partitions(support)
    for split in splits:
        filtered = apply_filter(spec, split.support, rng.fork("split", split.index), ae)
        with torch.no_grad():
            logits = _aux_logits(model, context, filtered, split.query)
        wrong += int(predict(logits)[0] != 0)
    return DetectionScore("u_adv_prime", wrong / len(splits), filter_direction(spec))


def loo_accuracy(model: FewShotModel, context: ContextSupport, support: torch.Tensor) -> float:
    """Leave-one-out accuracy of a support set without filtering."""
    # the identity filter draws nothing from the stream
    score = u_adv_prime(model, _IDENTITY, context, support, RngStream(0))
    return 1.0 - score.value


def odin_score(
    model: FewShotModel,
    context: ContextSupport,
    support: torch.Tensor,
    cfg: OdinConfig,
    rng: RngStream,
) -> DetectionScore:
    """Maximum temperature-scaled softmax of the preprocessed auxiliary
    query.

    The query is moved by ``epsilon`` against the sign of the gradient of
    the negative log of its top temperature-scaled probability before
    scoring.
    """
    split = aux_split(support, rng)
    query = split.query.detach().clone().requires_grad_(True)
    logits = _aux_logits(model, context, split.support, query) / cfg.temperature
    label = predict(logits.detach())
    loss = torch.nn.functional.cross_entropy(logits, label)
    (grad,) = torch.autograd.grad(loss, [query])
    with torch.no_grad():
        shifted = query - cfg.epsilon * grad.sign()
        probs = torch.softmax(_aux_logits(model, context, split.support, shifted) / cfg.temperature, dim=-1)
    return DetectionScore("odin", float(probs.max()), "flag_if_below")


def embed(model: FewShotModel, images: torch.Tensor) -> np.ndarray:
    """Return flattened encoder features as a float64 array."""
    with torch.no_grad():
        return model.encoder(images).flatten(1).double().numpy()


def iforest_set_score(
    forest: IsolationForestModel, model: FewShotModel, support: torch.Tensor
) -> DetectionScore:
    """Mean isolation forest score of the embeddings of a support set."""
    value = float(np.mean(iforest_score(forest, embed(model, support))))
    return DetectionScore("iforest", value, "flag_if_above")


def iforest_tune(
    model: FewShotModel,
    train_features: np.ndarray,
    val_clean_sets: Sequence[torch.Tensor],
    val_adv_sets: Sequence[torch.Tensor],
    candidates: Sequence[int],
    subsample_size: int,
    rng: RngStream,
) -> tuple[IsolationForestModel, int]:
    """Choose the number of trees by validation AUROC.

    One forest is fitted per candidate tree count; the first candidate
    with the highest AUROC on the validation sets wins.

    Returns
    -------
    forest : `IsolationForestModel`
        Selected forest.
    n_trees : `int`
        Its number of trees.
    """
    if not candidates:
        raise ConfigError("No isolation forest tree counts to choose from")
    best: tuple[float, IsolationForestModel, int] | None = None
    for n_trees in candidates:
        forest = iforest_fit(train_features, n_trees, subsample_size, rng.fork("trees", n_trees))
        if val_clean_sets and val_adv_sets:
            clean = [iforest_set_score(forest, model, s).value for s in val_clean_sets]
            adv = [iforest_set_score(forest, model, s).value for s in val_adv_sets]
            value = auroc(clean, adv, "flag_if_above")
        else:
            value = 0.5
        _LOG.debug("isolation forest with %d trees: validation AUROC %.4f", n_trees, value)
        if best is None or value > best[0]:
            best = (value, forest, n_trees)
    assert best is not None
    return best[1], best[2]


def verdict(score: DetectionScore, threshold: float) -> bool:
    """Return `True` if a score flags its support set as adversarial."""
    if score.direction == "flag_if_above":
        return score.value > threshold
    return score.value < threshold


def self_similarity_report(
    model: FewShotModel,
    dataset: Dataset,
    clean_sets: Sequence[tuple[int, torch.Tensor]],
    adv_sets: Mapping[str, Sequence[tuple[int, torch.Tensor]]],
    rng: RngStream,
    k_way: int = 5,
) -> pd.DataFrame:
    """Tabulate leave-one-out accuracy of clean and adversarial supports.

    Parameters
    ----------
    model : `FewShotModel`
        Trained model.
    dataset : `Dataset`
        Dataset providing context supports.
    clean_sets : `~collections.abc.Sequence`
        Pairs of class id and clean support.
    adv_sets : `~collections.abc.Mapping`
        Pairs of class id and adversarial support, keyed by attack name.
    rng : `RngStream`
        Source of randomness for context supports.
    k_way : `int`
        Number of ways.

    Returns
    -------
    table : `pandas.DataFrame`
        One row per population with columns ``population``, ``n_sets``,
        ``mean_accuracy`` and ``sd_accuracy``.
    """
    populations = {"clean": clean_sets, **adv_sets}
    rows = []
    for name, sets in populations.items():
        accuracies = []
        for index, (class_id, support) in enumerate(sets):
            context = draw_context(dataset, class_id, k_way, support.shape[0], rng.fork(name, index))
            accuracies.append(loo_accuracy(model, context, support))
        rows.append(
            {
                "population": name,
                "n_sets": len(accuracies),
                "mean_accuracy": float(np.mean(accuracies)) if accuracies else float("nan"),
                "sd_accuracy": float(np.std(accuracies)) if accuracies else float("nan"),
            }
        )
    return pd.DataFrame(rows, columns=["population", "n_sets", "mean_accuracy", "sd_accuracy"])
