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

from collections.abc import Mapping, Sequence
from typing import Any

from ..experiment import ExperimentContext, prepare_attacks, prepare_data, prepare_model
from ._config import experiment_config

_DEFAULTS = {
    "pgd": {"eps": 12 / 255, "eta": 0.05, "kappa": 0.1, "iterations": 75},
    "cw_sgd": {"eps": 0.0, "eta": 50.0, "kappa": 0.1, "iterations": 150},
}


def _strength(
    method: str, eps: float | None, eta: float | None, kappa: float | None, iterations: int | None
) -> dict[str, Any]:
    values = dict(_DEFAULTS[method])
    given = {"eps": eps, "eta": eta, "kappa": kappa, "iterations": iterations}
    values.update({key: value for key, value in given.items() if value is not None})
    label = (
        f"{method}-eps{values['eps']:.6g}-eta{values['eta']:g}-k{values['kappa']:g}-it{values['iterations']}"
    )
    return {"label": label, "method": method, **values}


def attack(
    config_file: str | None,
    seed: int | None,
    output: str | None,
    overrides: Mapping[str, str] | None,
    model: str | None,
    method: str | None,
    eps: float | None,
    eta: float | None,
    kappa: float | None,
    iterations: int | None,
    runs: int | None,
    classes: Any,
    n_attacked: Sequence[int],
) -> None:
    """Generate adversarial support sets.

    With ``method`` the attack grid of the configuration is replaced by a
    single setting built from the command-line values.

    Parameters
    ----------
    config_file : `str`, optional
        TOML configuration file.
    seed : `int`, optional
        Master seed.
    output : `str`, optional
        Experiment folder.
    overrides : `~collections.abc.Mapping` [ `str`, `str` ], optional
        Configuration overrides.
    model : `str`, optional
        Few-shot head kind of the attacked model.
    method : `str`, optional
        Attack method.
    eps, eta, kappa : `float`, optional
        Attack parameters.
    iterations : `int`, optional
        Attack iterations.
    runs : `int`, optional
        Runs per class.
    classes : `list` [ `int` ] or `str`, optional
        Target classes or "all".
    n_attacked : `~collections.abc.Sequence` [ `int` ]
        Numbers of attacked slots.
    """
    flags: dict[str, Any] = {"fewshot.head_kind": model, "attacks.runs_per_class": runs}
    if method is not None:
        flags["attacks.strengths"] = [_strength(method, eps, eta, kappa, iterations)]
    if classes is not None and classes != "all":
        flags["attacks.classes"] = list(classes)
    if n_attacked:
        flags["attacks.n_attacked"] = list(n_attacked)
    config = experiment_config(config_file, seed, output, overrides, **flags)
    if classes == "all":
        attacks = config.attacks.model_copy(update={"classes": None})
        config = config.model_copy(update={"attacks": attacks})
    ctx = ExperimentContext.from_config(config)
    dataset = prepare_data(ctx)
    fewshot = prepare_model(ctx, dataset)
    report = ctx.new_report(dataset)
    sets = prepare_attacks(ctx, dataset, fewshot, report)
    for (label, n), cell in sorted(sets.items()):
        print(f"{label} n_attacked={n}: {len(cell)} sets in {ctx.layout.attack_dir(label, n)}")
    for failure in report.failures:
        print(f"failed: {failure}")
