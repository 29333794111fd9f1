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

from ..experiment import ExperimentContext, run_experiment
from ._config import experiment_config


def report(
    config_file: str | None, seed: int | None, output: str | None, overrides: Mapping[str, str] | None
) -> None:
    """Write the report tables and summary."""
    config = experiment_config(config_file, seed, output, overrides)
    result = run_experiment(config, ["report"])
    location = ExperimentContext.from_config(config).layout.report_dir()
    print(f"Report for configuration {result.config_digest} written to {location}")
