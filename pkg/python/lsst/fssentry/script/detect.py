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

from ..experiment import run_experiment
from ._config import experiment_config


def detect(
    config_file: str | None,
    seed: int | None,
    output: str | None,
    overrides: Mapping[str, str] | None,
    filters: Sequence[str],
    statistics: Sequence[str],
) -> None:
    """Score adversarial and clean sets and print AUROC of every cell.

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
    filters : `~collections.abc.Sequence` [ `str` ]
        Filter kinds replacing the configured ones, with default parameters.
    statistics : `~collections.abc.Sequence` [ `str` ]
        Statistics replacing the configured ones.
    """
    flags: dict[str, Any] = {}
    if filters:
        flags["filters.filters"] = [{"kind": kind} for kind in filters]
    if statistics:
        flags["detection.statistics"] = list(statistics)
    config = experiment_config(config_file, seed, output, overrides, **flags)
    report = run_experiment(config, ["detect"])
    columns = ["attack", "strength", "n_attacked", "filter", "statistic", "auroc", "status"]
    print(report.auroc[columns].to_string(index=False))
