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

"""Reading and writing of tensors in the FSTN binary format.

An FSTN file consists of an 8-byte header (magic ``b"FSTN"``, version
byte, dtype code byte, rank byte and one reserved zero byte), followed by
``rank`` little-endian unsigned 32-bit extents and the row-major
little-endian payload.
"""

from __future__ import annotations

__all__ = [
    "FSTN_MAGIC",
    "FSTN_VERSION",
    "tensor_from_bytes",
    "tensor_read",
    "tensor_to_bytes",
    "tensor_write",
]

import logging
import struct
from typing import Any

import numpy as np
import torch
from lsst.resources import ResourcePath, ResourcePathExpression

from .errors import FormatError

_LOG = logging.getLogger(__name__)

FSTN_MAGIC = b"FSTN"
"""Magic bytes at the start of every tensor file (`bytes`)."""

FSTN_VERSION = 1
"""Only supported format version (`int`)."""

_HEADER = struct.Struct("<4sBBBB")

# dtype code in the header -> little-endian numpy dtype
_DTYPES: dict[int, np.dtype] = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("u1"),
}
_CODES = {dtype: code for code, dtype in _DTYPES.items()}


def _as_numpy(tensor: Any) -> np.ndarray:
    if isinstance(tensor, torch.Tensor):
        tensor = tensor.detach().cpu().numpy()
    array = np.asarray(tensor)
    dtype = array.dtype.newbyteorder("<") if array.dtype.itemsize > 1 else array.dtype
    if dtype not in _CODES:
        raise TypeError(f"Unsupported tensor dtype {array.dtype}, expected float32, float64 or uint8")
    return np.ascontiguousarray(array, dtype=dtype)


def tensor_to_bytes(tensor: np.ndarray | torch.Tensor) -> bytes:
    """Serialize a tensor to FSTN bytes.

    Parameters
    ----------
    tensor : `numpy.ndarray` or `torch.Tensor`
        Tensor of dtype float32, float64 or uint8 and rank at most 255.

    Returns
    -------
    data : `bytes`
        Serialized tensor.
    """
    array = _as_numpy(tensor)
    if array.ndim > 255:
        raise ValueError(f"Tensor rank {array.ndim} does not fit in the header")
    header = _HEADER.pack(FSTN_MAGIC, FSTN_VERSION, _CODES[array.dtype], array.ndim, 0)
    extents = struct.pack(f"<{array.ndim}I", *array.shape)
    return header + extents + array.tobytes(order="C")


def tensor_from_bytes(data: bytes) -> np.ndarray:
    """Deserialize FSTN bytes.

    Parameters
    ----------
    data : `bytes`
        Serialized tensor.

    Returns
    -------
    tensor : `numpy.ndarray`
        Tensor with the stored dtype and shape.

    Raises
    ------
    FormatError
        Raised if any header field is invalid or the data is truncated, the
        exception names the offending field.
    """
    if len(data) < _HEADER.size:
        raise FormatError("header", f"truncated, {len(data)} bytes present, {_HEADER.size} required")
    magic, version, code, rank, reserved = _HEADER.unpack_from(data)
    if magic != FSTN_MAGIC:
        raise FormatError("magic", f"expected {FSTN_MAGIC!r}, found {magic!r}")
    if version != FSTN_VERSION:
        raise FormatError("version", f"unsupported version {version}")
    if code not in _DTYPES:
        raise FormatError("dtype", f"unknown dtype code {code}")
    if reserved != 0:
        raise FormatError("reserved", f"reserved byte must be zero, found {reserved}")
    offset = _HEADER.size
    extents_size = 4 * rank
    if len(data) < offset + extents_size:
        raise FormatError("extents", f"truncated, {rank} extents expected")
    shape = struct.unpack_from(f"<{rank}I", data, offset)
    offset += extents_size
    dtype = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    expected = count * dtype.itemsize
    payload = data[offset:]
    if len(payload) != expected:
        raise FormatError("payload", f"expected {expected} bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=dtype, count=count).reshape(shape).copy()


def tensor_write(path: ResourcePathExpression, tensor: np.ndarray | torch.Tensor) -> None:
    """Write a tensor to a file in FSTN format.

    Parameters
    ----------
    path : `lsst.resources.ResourcePathExpression`
        Destination, existing file is overwritten.
    tensor : `numpy.ndarray` or `torch.Tensor`
        Tensor to write.
    """
    uri = ResourcePath(path, forceDirectory=False)
    _LOG.debug("writing tensor %s to %s", tuple(tensor.shape), uri)
    uri.write(tensor_to_bytes(tensor), overwrite=True)


def tensor_read(path: ResourcePathExpression) -> np.ndarray:
    """Read a tensor from a file in FSTN format.

    Parameters
    ----------
    path : `lsst.resources.ResourcePathExpression`
        Location of the file.

    Returns
    -------
    tensor : `numpy.ndarray`
        Tensor read from the file.
    """
    uri = ResourcePath(path, forceDirectory=False)
    return tensor_from_bytes(uri.read())
