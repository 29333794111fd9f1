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

__all__ = ["NS_UUID", "get_digest", "run_id"]

import hashlib
import json
import uuid
from collections.abc import Mapping
from typing import Any

NS_UUID = uuid.UUID("840b31d9-05cd-5161-b2c8-00d32b280d0f")
"""Namespace UUID used for UUID5 generation. Do not change. This was
produced by `uuid.uuid5(uuid.NAMESPACE_DNS, "lsst.org")`.
"""


def get_digest(config: Mapping[str, Any]) -> str:
    """Calculate digest of a configuration.

    Parameters
    ----------
    config : `~collections.abc.Mapping`
        JSON-serializable configuration, usually a pydantic model dump.

    Returns
    -------
    digest : `str`
        Hex md5 digest of the canonical JSON representation; key order
        does not matter.
    """
    md5 = hashlib.md5()
    md5.update(json.dumps(config, sort_keys=True, separators=(",", ":"), default=str).encode())
    return md5.hexdigest()


def run_id(*args: Any) -> str:
    """Generate an attack run ID from its provenance.

    Returned string is a deterministic hash of the arguments.

    Parameters
    ----------
    *args
        Values identifying the run, converted with `str`.

    Returns
    -------
    run_id : `str`
        Run ID, 12-character string.
    """
    name = "-".join(str(arg) for arg in args)
    return uuid.uuid5(NS_UUID, name).hex[-12:]
