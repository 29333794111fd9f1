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

"""Checkpoints: a directory of FSTN parameter tensors plus a YAML manifest."""

from __future__ import annotations

__all__ = ["MANIFEST_NAME", "module_load_state", "module_save", "read_manifest"]

import logging
from collections.abc import Mapping
from typing import Any

import torch
import yaml
from lsst.resources import ResourcePath, ResourcePathExpression
from torch import nn

from .errors import FormatError
from .tensorio import tensor_read, tensor_write

_LOG = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.yaml"


def module_save(module: nn.Module, manifest: Mapping[str, Any], root: ResourcePathExpression) -> None:
    """Save module parameters and a manifest describing the module.

    Parameters
    ----------
    module : `torch.nn.Module`
        Module whose ``state_dict`` is saved, one FSTN file per tensor.
    manifest : `~collections.abc.Mapping`
        Architecture description, must be YAML-serializable. A
        ``tensors`` key listing the saved files is added to it.
    root : `lsst.resources.ResourcePathExpression`
        Destination directory.
    """
    root_uri = ResourcePath(root, forceDirectory=True)
    root_uri.mkdir()
    tensors = {}
    for name, tensor in module.state_dict().items():
        relpath = f"params/{name}.fstn"
        tensor_write(root_uri.join(relpath), tensor.detach().cpu())
        tensors[name] = relpath
    content = dict(manifest)
    content["tensors"] = tensors
    root_uri.join(MANIFEST_NAME).write(yaml.safe_dump(content, sort_keys=True).encode(), overwrite=True)
    _LOG.debug("Saved %d tensors to %s", len(tensors), root_uri)


def read_manifest(root: ResourcePathExpression, required: tuple[str, ...] = ()) -> dict[str, Any]:
    """Read and validate a checkpoint manifest.

    Parameters
    ----------
    root : `lsst.resources.ResourcePathExpression`
        Checkpoint directory.
    required : `tuple` [ `str` ], optional
        Keys that must be present in addition to ``tensors``.

    Returns
    -------
    manifest : `dict`
        Parsed manifest.

    Raises
    ------
    FormatError
        Raised if the manifest is not a mapping or misses a key.
    """
    root_uri = ResourcePath(root, forceDirectory=True)
    try:
        manifest = yaml.safe_load(root_uri.join(MANIFEST_NAME).read())
    except yaml.YAMLError as exc:
        raise FormatError("manifest", f"cannot parse {MANIFEST_NAME}: {exc}") from exc
    if not isinstance(manifest, dict):
        raise FormatError("manifest", f"{MANIFEST_NAME} is not a mapping")
    for key in ("tensors",) + required:
        if key not in manifest:
            raise FormatError(key, f"missing from {MANIFEST_NAME}")
    return manifest


def module_load_state(module: nn.Module, root: ResourcePathExpression, manifest: Mapping[str, Any]) -> None:
    """Load parameter tensors listed in a manifest into a module.

    Raises
    ------
    FormatError
        Raised if the tensor set does not match module parameters.
    """
    root_uri = ResourcePath(root, forceDirectory=True)
    tensors = manifest["tensors"]
    expected = module.state_dict()
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise FormatError("tensors", f"parameter mismatch, missing={missing} unexpected={extra}")
    state = {}
    for name, relpath in tensors.items():
        value = torch.from_numpy(tensor_read(root_uri.join(relpath)))
        if value.shape != expected[name].shape:
            raise FormatError("tensors", f"{name} has shape {tuple(value.shape)}")
        state[name] = value.to(expected[name].dtype)
    module.load_state_dict(state)
