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

__all__ = ["experiment_config"]

from collections.abc import Mapping
from typing import Any

from ..config import ExperimentConfig, OutputConfig, load_config


def experiment_config(
    config_file: str | None,
    seed: int | None,
    output: str | None,
    overrides: Mapping[str, str] | None,
    **flags: Any,
) -> ExperimentConfig:
    """Build configuration from command-line values.

    Parameters
    ----------
    config_file : `str`, optional
        TOML configuration file.
    seed : `int`, optional
        Master seed from the command line.
    output : `str`, optional
        Experiment folder from the command line.
    overrides : `~collections.abc.Mapping` [ `str`, `str` ], optional
        ``--set`` values keyed by dotted configuration names.
    **flags
        Values of dedicated command-line options keyed by dotted names,
        `None` values are ignored.

    Returns
    -------
    config : `ExperimentConfig`
        Validated configuration.
    """
    values: dict[str, Any] = dict(overrides or {})
    values.update({key: value for key, value in flags.items() if value is not None})
    if seed is not None:
        values["seed"] = seed
    config = load_config(config_file, values)
    if output is not None:
        config = config.model_copy(update={"output": OutputConfig(root=output)})
    return config
