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

__all__ = ["get_cli_subcommands"]

import click

from .cmd import fssentry


def get_cli_subcommands() -> list[click.Command]:
    """Return commands registered with ``butler`` through the
    ``butler.cli`` entry point group.

    The whole ``fssentry`` group becomes a single ``butler fssentry``
    subcommand, the same group object is installed as the standalone
    ``fssentry`` script.
    """
    return [fssentry]
