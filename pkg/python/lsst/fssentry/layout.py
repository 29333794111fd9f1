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

__all__ = ["ExperimentLayout"]

import os

from lsst.resources import ResourcePath, ResourcePathExpression

from .errors import ConfigError


class ExperimentLayout:
    """Class encapsulating the knowledge of directory structure used by an
    experiment.

    Parameters
    ----------
    root : `lsst.resources.ResourcePathExpression`, optional
        Top-level experiment folder, `output_folder` is used if not given.
    """

    _OUTPUT_FOLDER_ENV = "FSSENTRY_OUTPUT_DIR"
    """Name of envvar that can be used to define location of top-level
    experiment folder.
    """

    def __init__(self, root: ResourcePathExpression | None = None):
        if root is None:
            root = self.output_folder()
        self.root = ResourcePath(root, forceDirectory=True)

    @classmethod
    def output_folder(cls) -> str:
        """Return default location of top-level experiment folder.

        Returns
        -------
        path : `str`
            Location of top-level folder.

        Raises
        ------
        ConfigError
            Raised if the environment variable is not defined.
        """
        loc = os.environ.get(cls._OUTPUT_FOLDER_ENV)
        if loc:
            return loc
        raise ConfigError(f"No output folder configured and {cls._OUTPUT_FOLDER_ENV} is not defined")

    def data_dir(self) -> ResourcePath:
        """Return location of the dataset."""
        return self.root.join("data", forceDirectory=True)

    def model_dir(self, name: str) -> ResourcePath:
        """Return location of a checkpoint.

        Parameters
        ----------
        name : `str`
            Checkpoint name, e.g. "fewshot" or "ae_fpa".

        Returns
        -------
        path : `lsst.resources.ResourcePath`
            Checkpoint folder, may not exist yet.
        """
        return self.root.join("models", forceDirectory=True).join(name, forceDirectory=True)

    def attack_dir(self, label: str, n_attacked: int) -> ResourcePath:
        """Return location of the archive for one attack grid cell."""
        return self.root.join(f"attacks/{label}/n{n_attacked}", forceDirectory=True)

    def scores_path(self, label: str, n_attacked: int) -> ResourcePath:
        """Return location of the per-set scores of one attack grid cell."""
        return self.root.join(f"scores/{label}-n{n_attacked}.csv")

    def report_dir(self) -> ResourcePath:
        return self.root.join("report", forceDirectory=True)

    def stage_marker(self, folder: ResourcePath) -> ResourcePath:
        """Return the file marking a completed stage in ``folder``."""
        return folder.join("complete.yaml")
