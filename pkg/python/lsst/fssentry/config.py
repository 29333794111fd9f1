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

"""Experiment configuration: TOML file, command-line overrides and
environment.
"""

from __future__ import annotations

__all__ = [
    "AttackStrength",
    "AttacksConfig",
    "AutoencoderConfig",
    "DataConfig",
    "DetectionConfig",
    "EvaluationConfig",
    "ExperimentConfig",
    "FewShotConfig",
    "FiltersConfig",
    "OutputConfig",
    "load_config",
]

import logging
import os
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from collections.abc import Mapping
from typing import Any, Literal

import yaml
from lsst.resources import ResourcePath, ResourcePathExpression
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .attacks import AttackConfig
from .detection import STATISTICS, OdinConfig
from .digests import get_digest
from .errors import ConfigError
from .filters import FilterSpec

_LOG = logging.getLogger(__name__)

_SEED_ENV = "FSSENTRY_SEED"
"""Name of envvar overriding the master seed."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataConfig(_Section):
    n_classes: int = Field(default=24, ge=8)
    per_class: int = Field(default=40, ge=20)
    image_size: int = 16
    split_ratios: tuple[float, float, float] = (14 / 24, 4 / 24, 6 / 24)


class FewShotConfig(_Section):
    head_kind: Literal["prototypical", "relation"] = "prototypical"
    widths: tuple[int, ...] = (16, 32, 64)
    k_way: int = Field(default=5, ge=2)
    n_shot: int = Field(default=5, ge=2)
    n_query: int = 75
    episodes: int = 2000
    lr: float = 1e-3
    val_every: int = 100
    val_episodes: int = 50
    eval_episodes: int = 500


class AutoencoderConfig(_Section):
    widths: tuple[int, ...] = (16, 32, 64)
    epochs: int = 30
    fpa_epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    fpa_lr: float = 1e-4
    weight_decay: float = 1e-4
    step_size: int = 10
    gamma: float = 0.1


class AttackStrength(_Section):
    """One attack setting of the strength grid."""

    label: str
    method: Literal["pgd", "cw_sgd"]
    eps: float = 12 / 255
    eta: float = 0.05
    kappa: float = 0.1
    iterations: int = 75

    def attack_config(
        self, attacks: AttacksConfig, fewshot: FewShotConfig, n_attacked: int, seed: int
    ) -> AttackConfig:
        return AttackConfig(
            method=self.method,
            eps=self.eps,
            eta=self.eta,
            iterations=self.iterations,
            kappa=self.kappa,
            const=attacks.const,
            n_attacked=n_attacked,
            k_way=fewshot.k_way,
            n_shot=fewshot.n_shot,
            n_qt=attacks.n_qt,
            seed=seed,
        )


def _default_strengths() -> list[AttackStrength]:
    pgd = [
        AttackStrength(label=f"eps{n}", method="pgd", eps=n / 255, eta=0.05, iterations=75)
        for n in (3, 6, 12)
    ]
    cw = [
        AttackStrength(
            label=f"k{kappa:g}-eta{eta:g}", method="cw_sgd", eps=0.0, eta=eta, kappa=kappa, iterations=150
        )
        for kappa, eta in ((0.0, 25.0), (0.0, 50.0), (0.1, 50.0))
    ]
    return pgd + cw


class AttacksConfig(_Section):
    strengths: list[AttackStrength] = Field(default_factory=_default_strengths)
    runs_per_class: int = 30
    classes: list[int] | None = None
    """Target classes, all test classes if not given."""
    n_attacked: list[int] = [5]
    n_qt: int = 8
    const: float = 1.0

    @field_validator("strengths")
    @classmethod
    def _unique_labels(cls, value: list[AttackStrength]) -> list[AttackStrength]:
        if not value:
            raise ValueError("attack grid is empty")
        labels = [s.label for s in value]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate attack strength labels: {labels}")
        return value


def _default_filters() -> list[FilterSpec]:
    return [
        FilterSpec(kind="noise"),
        FilterSpec(kind="feats"),
        FilterSpec(kind="bitr", bits=6),
        FilterSpec(kind="tvm"),
        FilterSpec(kind="fpa"),
    ]


class FiltersConfig(_Section):
    filters: list[FilterSpec] = Field(default_factory=_default_filters, min_length=1)


class DetectionConfig(_Section):
    statistics: list[str] = list(STATISTICS)
    odin: OdinConfig = OdinConfig()
    iforest_candidates: list[int] = [4, 16, 64, 256, 1000]
    iforest_subsample: int = 256
    val_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)

    @field_validator("statistics")
    @classmethod
    def _known(cls, value: list[str]) -> list[str]:
        unknown = set(value) - set(STATISTICS)
        if unknown or not value:
            raise ValueError(f"statistics must be a non-empty subset of {STATISTICS}")
        return value


class EvaluationConfig(_Section):
    asr_episodes: int = 20
    """Episodes per adversarial set and scenario."""
    asr_queries: int = 15
    scenarios: list[Literal["fixed_supports", "new_supports"]] = ["fixed_supports", "new_supports"]
    self_similarity: bool = True


class OutputConfig(_Section):
    root: str | None = None
    """Experiment directory, defaults to ``$FSSENTRY_OUTPUT_DIR``."""


class ExperimentConfig(_Section):
    """Complete configuration of an experiment."""

    seed: int = 0
    data: DataConfig = DataConfig()
    fewshot: FewShotConfig = FewShotConfig()
    autoencoder: AutoencoderConfig = AutoencoderConfig()
    attacks: AttacksConfig = AttacksConfig()
    filters: FiltersConfig = FiltersConfig()
    detection: DetectionConfig = DetectionConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def _consistent(self) -> ExperimentConfig:
        for n_attacked in self.attacks.n_attacked:
            if not 1 <= n_attacked <= self.fewshot.n_shot:
                raise ValueError(f"n_attacked {n_attacked} outside [1, {self.fewshot.n_shot}]")
        return self

    @property
    def digest(self) -> str:
        """md5 digest of the configuration, the output location excluded."""
        return get_digest(self.model_dump(mode="json", exclude={"output"}))

    @property
    def needs_autoencoder(self) -> bool:
        return any(spec.kind in ("fpa", "fpa_prime") for spec in self.filters.filters)

    def to_toml_dict(self) -> dict[str, Any]:
        return self.model_dump(mode="json", exclude_none=True)


def _set_dotted(data: dict[str, Any], key: str, value: Any) -> None:
    *parents, leaf = key.split(".")
    node = data
    for name in parents:
        child = node.setdefault(name, {})
        if not isinstance(child, dict):
            raise ConfigError(f"Cannot override {key!r}: {name!r} is not a section")
        node = child
    node[leaf] = value


def load_config(
    path: ResourcePathExpression | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> ExperimentConfig:
    """Build an experiment configuration.

    Values come from defaults, then the TOML file, then ``overrides``, and
    finally the ``FSSENTRY_SEED`` environment variable for the seed.

    Parameters
    ----------
    path : `lsst.resources.ResourcePathExpression`, optional
        TOML configuration file.
    overrides : `~collections.abc.Mapping`, optional
        Values keyed by dotted names such as ``"attacks.runs_per_class"``;
        string values are parsed as YAML scalars or lists.
    environ : `~collections.abc.Mapping`, optional
        Environment, `os.environ` by default.

    Returns
    -------
    config : `ExperimentConfig`
        Validated configuration.

    Raises
    ------
    ConfigError
        Raised for unreadable files, unknown keys or invalid values.
    """
    data: dict[str, Any] = {}
    if path is not None:
        content = ResourcePath(path).read().decode()
        try:
            data = tomllib.loads(content)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"Cannot parse configuration {path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if isinstance(value, str):
            value = yaml.safe_load(value)
        _set_dotted(data, key, value)
    environ = os.environ if environ is None else environ
    if seed := environ.get(_SEED_ENV):
        try:
            data["seed"] = int(seed)
        except ValueError:
            raise ConfigError(f"{_SEED_ENV} must be an integer, got {seed!r}") from None
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    _LOG.debug("configuration digest %s", config.digest)
    return config
