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

"""Support-set poisoning attacks."""

from __future__ import annotations

__all__ = [
    "AdvSupportSet",
    "AttackBatch",
    "AttackConfig",
    "archive_load",
    "archive_save",
    "attack_batch",
    "cw_margin",
    "cw_sgd_support_attack",
    "pgd_support_attack",
    "run_attack",
]

import dataclasses
import logging
from collections.abc import Callable, Iterable, Sequence
from typing import Any, Literal

import torch
import yaml
from lsst.resources import ResourcePath, ResourcePathExpression
from lsst.utils.timer import time_this
from pydantic import BaseModel, ConfigDict, model_validator

from .data import Dataset, sample_attack_episode
from .digests import run_id as make_run_id
from .errors import AttackError, FormatError, FsSentryError
from .models import FewShotModel
from .rng import RngStream
from .tensorio import tensor_read, tensor_write

_LOG = logging.getLogger(__name__)

IterateCallback = Callable[[int, torch.Tensor], None]
"""Called with the iteration index and the current adversarial support."""


class AttackConfig(BaseModel):
    """Parameters of a support-set attack."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    method: Literal["pgd", "cw_sgd"] = "pgd"
    eps: float = 12 / 255
    """l-infinity budget in [0, 1] pixel units; initialization scale for
    CW-SGD."""
    eta: float = 0.05
    iterations: int = 75
    kappa: float = 0.1
    const: float = 1.0
    n_attacked: int = 5
    k_way: int = 5
    n_shot: int = 5
    n_qt: int = 8
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> AttackConfig:
        if self.method == "pgd" and self.eps <= 0:
            raise ValueError("eps must be positive for pgd")
        if self.eps < 0 or self.kappa < 0:
            raise ValueError("eps and kappa must be non-negative")
        if not 1 <= self.n_attacked <= self.n_shot:
            raise ValueError(f"n_attacked must be in [1, {self.n_shot}], got {self.n_attacked}")
        if self.iterations < 0 or self.k_way < 2 or self.n_qt < 1:
            raise ValueError("need iterations >= 0, k_way >= 2 and n_qt >= 1")
        return self


@dataclasses.dataclass
class AdvSupportSet:
    """Adversarial support of one target class.

    ``base + delta`` is the adversarial support, ``delta`` is exactly zero
    for slots not in ``attacked_slots``.
    """

    target_class: int
    base_ids: tuple[int, ...]
    base: torch.Tensor
    delta: torch.Tensor
    attacked_slots: tuple[int, ...]
    config: AttackConfig
    run_id: str

    @property
    def adversarial(self) -> torch.Tensor:
        return self.base + self.delta

    def linf(self) -> float:
        return float(self.delta.abs().max())

    def l2(self) -> float:
        return float(self.delta.flatten().norm())


def cw_margin(logits: torch.Tensor, target_way: int, kappa: float) -> torch.Tensor:
    """Return ``max(-kappa, h_t - max_{i != t} h_i)`` for every query.

    Parameters
    ----------
    logits : `torch.Tensor`
        Logits of shape ``(n_query, k_way)``.
    target_way : `int`
        Way index of the attacked class.
    kappa : `float`
        Confidence margin.

    Returns
    -------
    margin : `torch.Tensor`
        Margin per query, never below ``-kappa``.
    """
    others = torch.cat([logits[:, :target_way], logits[:, target_way + 1 :]], dim=1)
    margin = logits[:, target_way] - others.max(dim=1).values
    return torch.clamp(margin, min=-kappa)


def _attack_mask(base: torch.Tensor, slots: Sequence[int]) -> torch.Tensor:
    mask = torch.zeros_like(base)
    mask[list(slots)] = 1.0
    return mask


def _support_gradient(
    model: FewShotModel,
    dataset: Dataset,
    target_class: int,
    base_ids: Sequence[int],
    cfg: AttackConfig,
    support: torch.Tensor,
    rng: RngStream,
    iteration: int,
    loss_of: Callable[[torch.Tensor, int], torch.Tensor],
) -> torch.Tensor:
    episode = sample_attack_episode(dataset, target_class, base_ids, cfg.k_way, cfg.n_shot, cfg.n_qt, rng)
    target = support.detach().clone().requires_grad_(True)
    full_support, labels = episode.assemble(target)
    logits = model.logits(full_support, labels, episode.target_queries, episode.k_way)
    loss = loss_of(logits, episode.target_way)
    (grad,) = torch.autograd.grad(loss, [target])
    if not torch.isfinite(grad).all():
        raise AttackError(iteration)
    _LOG.debug("iteration %d: loss=%.5f", iteration, loss.item())
    return grad


def pgd_support_attack(
    model: FewShotModel,
    dataset: Dataset,
    target_class: int,
    base_ids: Sequence[int],
    cfg: AttackConfig,
    rng: RngStream,
    attacked_slots: Sequence[int] | None = None,
    callback: IterateCallback | None = None,
) -> AdvSupportSet:
    """Run PGD on the support of a target class.

    The attacked slots start from uniform noise in the eps ball; every
    iteration redraws the other classes and the target queries and
    ascends the query cross-entropy against the target way with a signed
    step, then projects onto the eps ball and ``[0, 1]``.

    Parameters
    ----------
    model : `FewShotModel`
        Trained model, its parameters are not modified.
    dataset : `Dataset`
        Dataset holding the target class.
    target_class : `int`
        Attacked class.
    base_ids : `~collections.abc.Sequence` [ `int` ]
        Sample indices of the clean target support.
    cfg : `AttackConfig`
        Attack parameters.
    rng : `RngStream`
        Source of randomness.
    attacked_slots : `~collections.abc.Sequence` [ `int` ], optional
        Support slots to perturb, random ``cfg.n_attacked`` slots by default.
    callback : `~collections.abc.Callable`, optional
        Called after every iteration with the current adversarial support.

    Returns
    -------
    adv : `AdvSupportSet`
        Adversarial support.

    Raises
    ------
    AttackError
        Raised if a gradient is not finite.
    """
    base = dataset.images[target_class][list(base_ids)].clone()
    slots = _choose_slots(cfg, rng) if attacked_slots is None else tuple(sorted(attacked_slots))
    mask = _attack_mask(base, slots)
    noise = rng.torch_uniform(base.shape, -cfg.eps, cfg.eps, base.dtype)
    adv = torch.clamp(base + noise * mask, 0.0, 1.0)
    lower, upper = base - cfg.eps, base + cfg.eps

    def loss_of(logits: torch.Tensor, target_way: int) -> torch.Tensor:
        labels = torch.full((logits.shape[0],), target_way, dtype=torch.long)
        return torch.nn.functional.cross_entropy(logits, labels)

    for iteration in range(cfg.iterations):
        grad = _support_gradient(model, dataset, target_class, base_ids, cfg, adv, rng, iteration, loss_of)
        with torch.no_grad():
            adv = adv + cfg.eta * grad.sign() * mask
            adv = torch.minimum(torch.maximum(adv, lower), upper)
            adv = torch.clamp(adv, 0.0, 1.0)
        if callback is not None:
            callback(iteration, adv)
    return _make_set(target_class, base_ids, base, adv - base, slots, cfg)


def cw_sgd_support_attack(
    model: FewShotModel,
    dataset: Dataset,
    target_class: int,
    base_ids: Sequence[int],
    cfg: AttackConfig,
    rng: RngStream,
    attacked_slots: Sequence[int] | None = None,
    callback: IterateCallback | None = None,
) -> AdvSupportSet:
    """Run CW-SGD on the support of a target class.

    Minimizes ``|delta|_2 + const * mean(cw_margin)`` by plain gradient
    descent with step ``cfg.eta``, without sign or clipping; the final
    adversarial support is clipped to ``[0, 1]`` once. ``delta`` starts
    from uniform noise of scale ``cfg.eps`` (zero if ``cfg.eps`` is 0).

    Parameters are the same as for `pgd_support_attack`.
    """
    base = dataset.images[target_class][list(base_ids)].clone()
    slots = _choose_slots(cfg, rng) if attacked_slots is None else tuple(sorted(attacked_slots))
    mask = _attack_mask(base, slots)
    delta = torch.zeros_like(base)
    if cfg.eps > 0:
        delta = rng.torch_uniform(base.shape, -cfg.eps, cfg.eps, base.dtype) * mask

    # gradients with respect to the support x + delta equal those for delta
    def loss_of(logits: torch.Tensor, target_way: int) -> torch.Tensor:
        return cfg.const * cw_margin(logits, target_way, cfg.kappa).mean()

    for iteration in range(cfg.iterations):
        margin_grad = _support_gradient(
            model, dataset, target_class, base_ids, cfg, base + delta, rng, iteration, loss_of
        )
        with torch.no_grad():
            norm = torch.sqrt((delta**2).sum() + 1e-12)
            grad = margin_grad + delta / norm
            delta = delta - cfg.eta * grad * mask
        if callback is not None:
            callback(iteration, base + delta)
    adv = torch.clamp(base + delta, 0.0, 1.0)
    return _make_set(target_class, base_ids, base, adv - base, slots, cfg)


def _choose_slots(cfg: AttackConfig, rng: RngStream) -> tuple[int, ...]:
    return tuple(sorted(int(i) for i in rng.choice(cfg.n_shot, cfg.n_attacked)))


def _make_set(
    target_class: int,
    base_ids: Sequence[int],
    base: torch.Tensor,
    delta: torch.Tensor,
    slots: tuple[int, ...],
    cfg: AttackConfig,
) -> AdvSupportSet:
    ids = tuple(int(i) for i in base_ids)
    rid = make_run_id(cfg.method, target_class, ids, slots, cfg.model_dump_json())
    return AdvSupportSet(target_class, ids, base, delta.detach(), slots, cfg, rid)


_ATTACKS = {"pgd": pgd_support_attack, "cw_sgd": cw_sgd_support_attack}


def run_attack(
    model: FewShotModel,
    dataset: Dataset,
    target_class: int,
    base_ids: Sequence[int],
    cfg: AttackConfig,
    rng: RngStream,
    **kwargs: Any,
) -> AdvSupportSet:
    """Dispatch to the attack named by ``cfg.method``."""
    return _ATTACKS[cfg.method](model, dataset, target_class, base_ids, cfg, rng, **kwargs)


@dataclasses.dataclass
class AttackBatch:
    """Result of `attack_batch`."""

    sets: list[AdvSupportSet] = dataclasses.field(default_factory=list)
    failures: list[tuple[int, int, str]] = dataclasses.field(default_factory=list)
    """Class, run index and message of every failed run."""


def attack_batch(
    model: FewShotModel,
    dataset: Dataset,
    cfg: AttackConfig,
    classes: Iterable[int],
    runs_per_class: int,
    rng: RngStream,
    root: ResourcePathExpression | None = None,
) -> AttackBatch:
    """Generate independent adversarial supports for several classes.

    Every run draws a fresh clean support from its class and uses its own
    random stream, so results do not depend on the order of runs. A run
    that fails is logged and recorded, the batch continues.

    Parameters
    ----------
    model : `FewShotModel`
        Trained model.
    dataset : `Dataset`
        Split dataset.
    cfg : `AttackConfig`
        Attack parameters.
    classes : `~collections.abc.Iterable` [ `int` ]
        Target classes.
    runs_per_class : `int`
        Number of runs per class.
    rng : `RngStream`
        Parent stream, each run forks its own.
    root : `lsst.resources.ResourcePathExpression`, optional
        If given, every set is archived under this directory.

    Returns
    -------
    batch : `AttackBatch`
        Generated sets and failures.
    """
    batch = AttackBatch()
    classes = list(classes)
    with time_this(log=_LOG, msg=f"Attack batch {cfg.method}", level=logging.INFO):
        for target_class in classes:
            for run in range(runs_per_class):
                run_rng = rng.fork(cfg.method, target_class, run)
                base_ids = tuple(int(i) for i in run_rng.choice(dataset.n_samples(target_class), cfg.n_shot))
                try:
                    adv = run_attack(model, dataset, target_class, base_ids, cfg, run_rng.fork("attack"))
                except FsSentryError as exc:
                    _LOG.warning("Attack on class %d run %d failed: %s", target_class, run, exc)
                    batch.failures.append((target_class, run, str(exc)))
                    continue
                adv = dataclasses.replace(adv, run_id=make_run_id(adv.run_id, cfg.seed, run))
                batch.sets.append(adv)
                if root is not None:
                    archive_save(adv, root)
    _LOG.info(
        "Generated %d adversarial sets for %d classes, %d failures",
        len(batch.sets),
        len(classes),
        len(batch.failures),
    )
    return batch


def archive_save(adv: AdvSupportSet, root: ResourcePathExpression) -> ResourcePath:
    """Save an adversarial set to ``<root>/<run_id>/``.

    Returns
    -------
    location : `lsst.resources.ResourcePath`
        Run directory.
    """
    run_dir = ResourcePath(root, forceDirectory=True).join(adv.run_id, forceDirectory=True)
    run_dir.mkdir()
    tensor_write(run_dir.join("delta.fstn"), adv.delta)
    tensor_write(run_dir.join("base.fstn"), adv.base)
    manifest = {
        "run_id": adv.run_id,
        "target_class": adv.target_class,
        "base_ids": list(adv.base_ids),
        "attacked_slots": list(adv.attacked_slots),
        "config": adv.config.model_dump(),
    }
    run_dir.join("manifest.yaml").write(yaml.safe_dump(manifest, sort_keys=True).encode(), overwrite=True)
    return run_dir


def archive_load(root: ResourcePathExpression) -> list[AdvSupportSet]:
    """Load every adversarial set saved under a directory.

    Sets are returned sorted by target class and run ID.

    Raises
    ------
    FormatError
        Raised if a run manifest is malformed.
    """
    root_uri = ResourcePath(root, forceDirectory=True)
    sets = []
    for manifest_uri in ResourcePath.findFileResources([root_uri], file_filter=r"manifest\.yaml$"):
        sets.append(_load_run(manifest_uri.dirname()))
    sets.sort(key=lambda adv: (adv.target_class, adv.run_id))
    return sets


def _load_run(run_dir: ResourcePath) -> AdvSupportSet:
    manifest = yaml.safe_load(run_dir.join("manifest.yaml").read())
    if not isinstance(manifest, dict):
        raise FormatError("manifest", f"{run_dir} manifest is not a mapping")
    for key in ("run_id", "target_class", "base_ids", "attacked_slots", "config"):
        if key not in manifest:
            raise FormatError(key, f"missing from {run_dir} manifest")
    return AdvSupportSet(
        target_class=int(manifest["target_class"]),
        base_ids=tuple(manifest["base_ids"]),
        base=torch.from_numpy(tensor_read(run_dir.join("base.fstn"))),
        delta=torch.from_numpy(tensor_read(run_dir.join("delta.fstn"))),
        attacked_slots=tuple(manifest["attacked_slots"]),
        config=AttackConfig(**manifest["config"]),
        run_id=str(manifest["run_id"]),
    )
