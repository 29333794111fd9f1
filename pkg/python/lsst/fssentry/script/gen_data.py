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

from ..experiment import ExperimentContext, prepare_data
from ._config import experiment_config


def gen_data(
    config_file: str | None, seed: int | None, output: str | None, overrides: Mapping[str, str] | None
) -> None:
    """Generate and split the synthetic dataset.

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
    """
    config = experiment_config(config_file, seed, output, overrides)
    ctx = ExperimentContext.from_config(config)
    dataset = prepare_data(ctx)
    print(f"dataset: {ctx.layout.data_dir()}")
    for split in ("train", "val", "test"):
        classes = dataset.classes(split)
        samples = sum(dataset.n_samples(cid) for cid in classes)
        print(f"{split}: {len(classes)} classes, {samples} samples")
