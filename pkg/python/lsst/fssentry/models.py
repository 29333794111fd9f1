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

"""Metric-based few-shot classifiers and their episodic training."""

from __future__ import annotations

__all__ = [
    "HEAD_KINDS",
    "EpisodeLogits",
    "FewShotModel",
    "TrainingLog",
    "build_model",
    "class_feature",
    "eval_accuracy",
    "model_load",
    "model_save",
    "predict",
    "proto_logits",
    "relation_logits",
    "train_fewshot",
]

import copy
import dataclasses
import logging
import math
from collections.abc import Sequence
from typing import Any

import numpy as np
import torch
from lsst.resources import ResourcePathExpression
from lsst.utils.timer import time_this
from scipy import stats
from torch import nn

from . import checkpoint
from .data import Dataset, Episode, sample_episode
from .errors import ConfigError, DivergenceError, NumericError
from .network import Network, encoder_specs, loss_and_grad_params, relation_head_specs
from .optim import OptimizerState, optimizer_step
from .rng import RngStream

_LOG = logging.getLogger(__name__)

HEAD_KINDS = ("prototypical", "relation")


def predict(logits: torch.Tensor) -> torch.Tensor:
    """Return predicted way index per query, ties go to the lowest index."""
    # torch.argmax returns the first maximal index
    return torch.argmax(logits, dim=-1)


@dataclasses.dataclass
class EpisodeLogits:
    """Scores of every query for every way of an episode."""

    scores: torch.Tensor
    way_classes: tuple[int, ...]

    def predictions(self) -> torch.Tensor:
        return predict(self.scores)

    def predicted_classes(self) -> list[int]:
        return [self.way_classes[int(way)] for way in self.predictions()]


def class_feature(encoder: nn.Module, support_of_class: torch.Tensor) -> torch.Tensor:
    """Return the averaged feature of a class support.

    Parameters
    ----------
    encoder : `torch.nn.Module`
        Feature extractor.
    support_of_class : `torch.Tensor`
        Support images of one class, at least one.

    Returns
    -------
    feature : `torch.Tensor`
        Mean feature over the support samples.
    """
    return encoder(support_of_class).mean(dim=0)


def _way_means(features: torch.Tensor, labels: torch.Tensor, k_way: int) -> torch.Tensor:
    # ways may have unequal shot counts, empty ways are not allowed
    return torch.stack([features[labels == way].mean(dim=0) for way in range(k_way)])


class FewShotModel(nn.Module):
    """Encoder plus a metric head scoring queries against class supports.

    Parameters
    ----------
    encoder : `Network`
        Convolutional feature extractor.
    head_kind : `str`
        Either "prototypical" or "relation".
    head : `Network`, optional
        Relation head, required for the relation kind.
    k_way : `int`
        Number of ways used in training.
    n_shot : `int`
        Number of shots used in training.
    """

    def __init__(
        self,
        encoder: Network,
        head_kind: str = "prototypical",
        head: Network | None = None,
        k_way: int = 5,
        n_shot: int = 5,
    ):
        super().__init__()
        if head_kind not in HEAD_KINDS:
            raise ConfigError(f"Unknown head kind {head_kind!r}, expected one of {HEAD_KINDS}")
        if (head_kind == "relation") != (head is not None):
            raise ConfigError("A relation head is required for, and only for, head_kind='relation'")
        self.encoder = encoder
        self.head_kind = head_kind
        self.head = head
        self.k_way = k_way
        self.n_shot = n_shot

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.encoder(images)

    def logits_from_features(
        self,
        support_features: torch.Tensor,
        support_labels: torch.Tensor,
        query_features: torch.Tensor,
        k_way: int,
    ) -> torch.Tensor:
        """Score query features against per-way support features.

        Returns
        -------
        logits : `torch.Tensor`
            Tensor of shape ``(n_query, k_way)``.
        """
        if self.head_kind == "prototypical":
            prototypes = _way_means(support_features.flatten(1), support_labels, k_way)
            diff = query_features.flatten(1)[:, None, :] - prototypes[None, :, :]
            return -(diff**2).sum(dim=-1)
        assert self.head is not None
        pooled_class = _way_means(support_features.mean(dim=(2, 3)), support_labels, k_way)
        pooled_query = query_features.mean(dim=(2, 3))
        n_query, channels = pooled_query.shape
        pairs = torch.cat(
            [
                pooled_class[None, :, :].expand(n_query, k_way, channels),
                pooled_query[:, None, :].expand(n_query, k_way, channels),
            ],
            dim=-1,
        )
        return self.head(pairs.reshape(n_query * k_way, 2 * channels)).reshape(n_query, k_way)

    def logits(
        self,
        support: torch.Tensor,
        support_labels: torch.Tensor,
        query: torch.Tensor,
        k_way: int | None = None,
    ) -> torch.Tensor:
        """Compute query logits given a labelled support.

        Parameters
        ----------
        support : `torch.Tensor`
            Support images.
        support_labels : `torch.Tensor`
            Way index of each support image.
        query : `torch.Tensor`
            Query images.
        k_way : `int`, optional
            Number of ways, defaults to the number of distinct labels.

        Returns
        -------
        logits : `torch.Tensor`
            Tensor of shape ``(n_query, k_way)``, differentiable with respect
            to support and query pixels.
        """
        if k_way is None:
            k_way = int(support_labels.max()) + 1
        features = self.encoder(torch.cat([support, query]))
        n_support = support.shape[0]
        return self.logits_from_features(features[:n_support], support_labels, features[n_support:], k_way)

    def episode_logits(self, episode: Episode) -> EpisodeLogits:
        scores = self.logits(episode.support, episode.support_labels, episode.query, episode.k_way)
        return EpisodeLogits(scores, episode.way_classes)

    def manifest(self) -> dict[str, Any]:
        return {
            "kind": "fewshot",
            "head_kind": self.head_kind,
            "k_way": self.k_way,
            "n_shot": self.n_shot,
            "encoder": self.encoder.manifest(),
            "head": None if self.head is None else self.head.manifest(),
        }


def proto_logits(
    model: FewShotModel, support: torch.Tensor, support_labels: torch.Tensor, query: torch.Tensor, k_way: int
) -> torch.Tensor:
    """Negative squared Euclidean distance of flattened query features to
    class prototypes.
    """
    if model.head_kind != "prototypical":
        raise ConfigError(f"proto_logits needs a prototypical model, got {model.head_kind!r}")
    return model.logits(support, support_labels, query, k_way)


def relation_logits(
    model: FewShotModel, support: torch.Tensor, support_labels: torch.Tensor, query: torch.Tensor, k_way: int
) -> torch.Tensor:
    """Relation-head scores of every (query, way) pair of pooled features."""
    if model.head_kind != "relation":
        raise ConfigError(f"relation_logits needs a relation model, got {model.head_kind!r}")
    return model.logits(support, support_labels, query, k_way)


def build_model(
    head_kind: str,
    rng: RngStream,
    widths: Sequence[int] = (16, 32, 64),
    k_way: int = 5,
    n_shot: int = 5,
    activation: str = "relu",
    pool: str = "max",
    image_shape: Sequence[int] = (3, 16, 16),
) -> FewShotModel:
    """Create a freshly initialized few-shot model.

    Parameters
    ----------
    head_kind : `str`
        Either "prototypical" or "relation".
    rng : `RngStream`
        Initialization stream.
    widths : `~collections.abc.Sequence` [ `int` ]
        Encoder block widths.
    k_way, n_shot : `int`
        Training episode configuration.
    activation, pool : `str`
        Encoder activation and down-sampling modes.
    image_shape : `~collections.abc.Sequence` [ `int` ]
        Input image shape.

    Returns
    -------
    model : `FewShotModel`
        New model.
    """
    specs = encoder_specs(widths, image_shape[0], activation, pool)
    encoder = Network(specs, image_shape, "encoder", rng.fork("encoder"))
    head = None
    if head_kind == "relation":
        head = Network(relation_head_specs(widths[-1]), (2 * widths[-1],), "relation_head", rng.fork("head"))
    return FewShotModel(encoder, head_kind, head, k_way, n_shot)


@dataclasses.dataclass
class TrainingLog:
    """Record of an episodic training run."""

    losses: list[float] = dataclasses.field(default_factory=list)
    validation: list[tuple[int, float]] = dataclasses.field(default_factory=list)
    best_episode: int | None = None
    best_accuracy: float | None = None

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.losses)) if self.losses else math.nan


def _episode_loss(model: FewShotModel, n_support: int, k_way: int) -> Any:
    def loss_fn(features: torch.Tensor, targets: tuple[torch.Tensor, torch.Tensor]) -> torch.Tensor:
        support_labels, query_labels = targets
        logits = model.logits_from_features(features[:n_support], support_labels, features[n_support:], k_way)
        return nn.functional.cross_entropy(logits, query_labels)

    return loss_fn


def train_fewshot(
    model: FewShotModel,
    dataset: Dataset,
    n_episodes: int,
    opt: OptimizerState,
    rng: RngStream,
    n_query: int = 75,
    val_every: int = 100,
    val_episodes: int = 50,
) -> TrainingLog:
    """Train a model on episodes of the train split.

    Each episode contributes one optimizer step on the mean query
    cross-entropy. Every ``val_every`` episodes the model is evaluated on
    the val split and the best state is restored at the end.

    Parameters
    ----------
    model : `FewShotModel`
        Model to train in place.
    dataset : `Dataset`
        Split dataset.
    n_episodes : `int`
        Number of training episodes, 0 leaves the model untouched.
    opt : `OptimizerState`
        Optimizer over the model parameters.
    rng : `RngStream`
        Source of randomness.
    n_query : `int`
        Total number of queries per episode.
    val_every : `int`
        Validation period in episodes, 0 disables validation.
    val_episodes : `int`
        Number of validation episodes.

    Returns
    -------
    log : `TrainingLog`
        Per-episode losses and validation accuracies.

    Raises
    ------
    DivergenceError
        Raised if the loss of an episode is not finite.
    """
    log = TrainingLog()
    best_state: dict[str, torch.Tensor] | None = None
    train_rng = rng.fork("train")
    val_rng = rng.fork("val")
    with time_this(log=_LOG, msg="Episodic training", level=logging.INFO):
        for index in range(n_episodes):
            episode = sample_episode(dataset, "train", model.k_way, model.n_shot, n_query, train_rng)
            batch = torch.cat([episode.support, episode.query])
            loss_fn = _episode_loss(model, episode.support.shape[0], episode.k_way)
            targets = (episode.support_labels, episode.query_labels)
            try:
                loss, grads = loss_and_grad_params(model, loss_fn, batch, targets)
            except NumericError as exc:
                raise DivergenceError(index) from exc
            log.losses.append(loss)
            optimizer_step(opt, None, grads)
            if val_every and (index + 1) % val_every == 0:
                accuracy, _ = eval_accuracy(
                    model,
                    dataset,
                    "val",
                    val_episodes,
                    val_rng.fork(index),
                    model.k_way,
                    model.n_shot,
                    n_query,
                )
                log.validation.append((index, accuracy))
                _LOG.debug("episode %d: loss=%.4f val_accuracy=%.4f", index, loss, accuracy)
                if log.best_accuracy is None or accuracy > log.best_accuracy:
                    log.best_accuracy = accuracy
                    log.best_episode = index
                    best_state = copy.deepcopy(model.state_dict())
    if best_state is not None:
        model.load_state_dict(best_state)
        _LOG.info(
            "Restored best model from episode %d (val accuracy %.4f)", log.best_episode, log.best_accuracy
        )
    return log


def eval_accuracy(
    model: Any,
    dataset: Dataset,
    split: str,
    n_episodes: int,
    rng: RngStream,
    k_way: int = 5,
    n_shot: int = 5,
    n_query: int = 75,
) -> tuple[float, float]:
    """Evaluate mean query accuracy over random episodes.

    Parameters
    ----------
    model : `FewShotModel`
        Model, anything with an ``episode_logits`` method works.
    dataset : `Dataset`
        Split dataset.
    split : `str`
        Split to draw episodes from.
    n_episodes : `int`
        Number of episodes, at least one.
    rng : `RngStream`
        Source of randomness.
    k_way, n_shot, n_query : `int`
        Episode configuration.

    Returns
    -------
    mean : `float`
        Mean episode accuracy.
    half_width : `float`
        Half width of the 95% normal-approximation confidence interval.
    """
    accuracies = []
    with torch.no_grad():
        for _ in range(n_episodes):
            episode = sample_episode(dataset, split, k_way, n_shot, n_query, rng)
            logits = model.episode_logits(episode)
            correct = logits.predictions() == episode.query_labels
            accuracies.append(float(correct.double().mean()))
    values = np.array(accuracies)
    if values.size < 2:
        return float(values.mean()), 0.0
    half_width = stats.norm.ppf(0.975) * values.std(ddof=1) / math.sqrt(values.size)
    return float(values.mean()), float(half_width)


def model_save(
    model: FewShotModel, root: ResourcePathExpression, extra: dict[str, Any] | None = None
) -> None:
    """Save a few-shot model checkpoint.

    Parameters
    ----------
    model : `FewShotModel`
        Model to save.
    root : `lsst.resources.ResourcePathExpression`
        Checkpoint directory.
    extra : `dict`, optional
        Additional manifest content, e.g. training configuration.
    """
    manifest = model.manifest()
    if extra:
        manifest["training"] = extra
    checkpoint.module_save(model, manifest, root)


def model_load(root: ResourcePathExpression) -> FewShotModel:
    """Load a checkpoint written by `model_save`.

    Raises
    ------
    FormatError
        Raised for malformed manifests or mismatched tensors.
    """
    manifest = checkpoint.read_manifest(root, ("head_kind", "encoder", "head", "k_way", "n_shot"))
    encoder = Network.from_manifest(manifest["encoder"])
    head = None if manifest["head"] is None else Network.from_manifest(manifest["head"])
    model = FewShotModel(encoder, manifest["head_kind"], head, manifest["k_way"], manifest["n_shot"])
    checkpoint.module_load_state(model, root, manifest)
    return model
