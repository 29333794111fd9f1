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


def train_ae(
    config_file: str | None, seed: int | None, output: str | None, overrides: Mapping[str, str] | None
) -> None:
    """Train the autoencoders required by the configured filters."""
    config = experiment_config(config_file, seed, output, overrides)
    if not config.needs_autoencoder:
        print("No autoencoder filter configured, nothing to train.")
        return
    run_experiment(config, ["autoencoder"])
    kinds = sorted({spec.kind for spec in config.filters.filters} & {"fpa", "fpa_prime"})
    print(f"Trained autoencoders: standard, {', '.join(kinds)}")
