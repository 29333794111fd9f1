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

from collections.abc import Mapping

from ..experiment import run_experiment
from ._config import experiment_config


def train_fewshot(
    config_file: str | None,
    seed: int | None,
    output: str | None,
    overrides: Mapping[str, str] | None,
    model: str | None,
) -> None:
    """Train the few-shot model and report its test accuracy.

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
        Head kind overriding the configuration.
    """
    config = experiment_config(config_file, seed, output, overrides, **{"fewshot.head_kind": model})
    report = run_experiment(config, ["fewshot"])
    assert report.accuracy is not None
    mean, half_width = report.accuracy
    print(f"{report.model} test accuracy: {mean:.4f} +- {half_width:.4f}")
