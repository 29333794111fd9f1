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

"""Synthetic datasets, class splits and episode sampling."""

from __future__ import annotations

__all__ = [
    "SPLITS",
    "AttackEpisode",
    "Dataset",
    "Episode",
    "dataset_load",
    "dataset_save",
    "sample_attack_episode",
    "sample_episode",
    "split_classes",
    "synth_generate",
]

import colorsys
import dataclasses
import itertools
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from typing import Any

import numpy as np
import torch
import yaml
from lsst.resources import ResourcePath, ResourcePathExpression

from .errors import ConfigError, FormatError, SamplingError
from .rng import RngStream, stream_id_for
from .tensorio import tensor_read, tensor_write

_LOG = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
"""Names of the class splits (`tuple` [ `str` ])."""

_UNASSIGNED = "unassigned"

_HUES = tuple(i / 8 for i in range(8))
_ORIENTATIONS = (0, 45, 90, 135)
_FREQUENCIES = (2, 3, 4)
_NOISE_SIGMA = 0.05
_MAX_SHIFT = 2


class Dataset:
    """Labelled image collection with a class-level split.

    Parameters
    ----------
    images : `~collections.abc.Mapping` [ `int`, `torch.Tensor` ]
        Images of each class, tensor of shape ``(n, C, H, W)`` with values
        in ``[0, 1]``.
    split : `~collections.abc.Mapping` [ `int`, `str` ], optional
        Split name of each class, classes without a split are unassigned.
    descriptor : `~collections.abc.Mapping`, optional
        Description of how the data was generated.
    """

    def __init__(
        self,
        images: Mapping[int, torch.Tensor],
        split: Mapping[int, str] | None = None,
        descriptor: Mapping[str, Any] | None = None,
    ):
        self.images = {int(cid): imgs.to(torch.float32) for cid, imgs in images.items()}
        self.split = {cid: _UNASSIGNED for cid in self.images}
        if split:
            self.split.update({int(cid): name for cid, name in split.items()})
        self.descriptor = dict(descriptor or {})
        shapes = {tuple(imgs.shape[1:]) for imgs in self.images.values()}
        if len(shapes) > 1:
            raise FormatError("images", f"classes have different image shapes: {sorted(shapes)}")

    @property
    def image_shape(self) -> tuple[int, ...]:
        """Shape of a single image (`tuple` [ `int`, ... ])."""
        return tuple(next(iter(self.images.values())).shape[1:])

    @property
    def class_ids(self) -> list[int]:
        """Sorted list of all class identifiers."""
        return sorted(self.images)

    def classes(self, split: str) -> list[int]:
        """Return sorted class identifiers assigned to a split.

        Parameters
        ----------
        split : `str`
            Split name.

        Returns
        -------
        classes : `list` [ `int` ]
            Class identifiers.
        """
        return sorted(cid for cid, name in self.split.items() if name == split)

    def n_samples(self, class_id: int) -> int:
        """Return number of samples of a class."""
        return int(self.images[class_id].shape[0])

    def split_images(self, split: str) -> torch.Tensor:
        """Return all images of a split stacked into one tensor."""
        classes = self.classes(split)
        if not classes:
            raise SamplingError(f"Split {split!r} has no classes")
        return torch.cat([self.images[cid] for cid in classes])

    def __len__(self) -> int:
        return sum(self.n_samples(cid) for cid in self.images)


@dataclasses.dataclass
class Episode:
    """One K-way N-shot task.

    Support and query tensors are ordered way by way, labels are way
    indices into ``way_classes``.
    """

    way_classes: tuple[int, ...]
    support: torch.Tensor
    support_labels: torch.Tensor
    query: torch.Tensor
    query_labels: torch.Tensor
    support_ids: list[tuple[int, int]]
    query_ids: list[tuple[int, int]]

    @property
    def k_way(self) -> int:
        return len(self.way_classes)

    @property
    def n_shot(self) -> int:
        return len(self.support_ids) // len(self.way_classes)

    @property
    def query_class_ids(self) -> list[int]:
        """Class identifier of every query sample."""
        return [self.way_classes[int(label)] for label in self.query_labels]


@dataclasses.dataclass
class AttackEpisode:
    """Episode redrawn at every attack iteration around a fixed target
    support.

    ``other_support`` holds the ``K - 1`` non-target ways, way by way, in the
    order of ``other_classes``; the target support is inserted at way
    index ``target_way`` by `assemble`.
    """

    target_class: int
    fixed_support: tuple[int, ...]
    other_classes: tuple[int, ...]
    other_support: torch.Tensor
    other_queries: torch.Tensor
    other_query_labels: torch.Tensor
    target_queries: torch.Tensor
    target_query_ids: tuple[int, ...]
    target_way: int
    n_shot: int

    @property
    def k_way(self) -> int:
        return len(self.other_classes) + 1

    @property
    def way_classes(self) -> tuple[int, ...]:
        others = list(self.other_classes)
        return tuple(others[: self.target_way] + [self.target_class] + others[self.target_way :])

    def assemble(self, target_support: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Build the full K-way support with a given target support.

        Parameters
        ----------
        target_support : `torch.Tensor`
            Support images of the target class, may require gradients.

        Returns
        -------
        support : `torch.Tensor`
            Support images, way by way.
        labels : `torch.Tensor`
            Way index of every support image.
        """
        before = self.other_support[: self.target_way * self.n_shot]
        after = self.other_support[self.target_way * self.n_shot :]
        support = torch.cat([before, target_support.to(self.other_support.dtype), after])
        counts = [self.n_shot] * self.k_way
        counts[self.target_way] = int(target_support.shape[0])
        labels = torch.repeat_interleave(torch.arange(self.k_way), torch.tensor(counts))
        return support, labels

    @property
    def target_query_labels(self) -> torch.Tensor:
        return torch.full((self.target_queries.shape[0],), self.target_way, dtype=torch.long)


def _render(
    hue: float, orientation: int, frequency: int, shift: tuple[int, int], size: int
) -> np.ndarray:
    red, green, blue = colorsys.hsv_to_rgb(hue, 0.8, 0.9)
    color = np.array([red, green, blue]).reshape(3, 1, 1)
    theta = math.radians(orientation)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    coord = (xs + shift[0]) * math.cos(theta) + (ys + shift[1]) * math.sin(theta)
    stripes = 0.5 + 0.5 * np.sin(2 * math.pi * frequency * coord / size)
    return stripes * color + (1.0 - stripes) * 0.15


def synth_generate(n_classes: int, per_class: int, seed: int, size: int = 16) -> Dataset:
    """Generate the desk-scale synthetic dataset.

    Every class is a distinct combination of base hue, stripe orientation
    and stripe frequency. Samples are translated by up to two pixels and
    get per-pixel Gaussian noise, values are clipped to ``[0, 1]``.

    Parameters
    ----------
    n_classes : `int`
        Number of classes, at least 8.
    per_class : `int`
        Samples per class, at least 20.
    seed : `int`
        Master seed.
    size : `int`, optional
        Image height and width.

    Returns
    -------
    dataset : `Dataset`
        Unsplit dataset.

    Raises
    ------
    ConfigError
        Raised for too few classes or samples, or if more classes are
        requested than there are distinct parameter tuples.
    """
    params = list(itertools.product(_HUES, _ORIENTATIONS, _FREQUENCIES))
    if n_classes < 8 or per_class < 20:
        raise ConfigError(f"Need n_classes >= 8 and per_class >= 20, got {n_classes} and {per_class}")
    if n_classes > len(params):
        raise ConfigError(f"Only {len(params)} distinct classes can be generated, {n_classes} requested")
    rng = RngStream(seed, stream_id_for("synth"))
    order = rng.permutation(len(params))[:n_classes]
    images: dict[int, torch.Tensor] = {}
    class_params = {}
    for cid, pindex in enumerate(order):
        hue, orientation, frequency = params[int(pindex)]
        class_params[cid] = {"hue": hue, "orientation": orientation, "frequency": frequency}
        class_rng = rng.fork("class", cid)
        shifts = class_rng.integers(-_MAX_SHIFT, _MAX_SHIFT + 1, size=(per_class, 2))
        noise = class_rng.normal(_NOISE_SIGMA, size=(per_class, 3, size, size))
        samples = np.stack(
            [_render(hue, orientation, frequency, (int(dx), int(dy)), size) for dx, dy in shifts]
        )
        samples = np.clip(samples + noise, 0.0, 1.0)
        images[cid] = torch.from_numpy(samples.astype(np.float32))
    descriptor = {
        "generator": "synthetic-stripes",
        "n_classes": n_classes,
        "per_class": per_class,
        "seed": seed,
        "size": size,
        "classes": class_params,
    }
    _LOG.info("Generated synthetic dataset: %d classes x %d samples", n_classes, per_class)
    return Dataset(images, descriptor=descriptor)


def split_classes(dataset: Dataset, ratios: Sequence[float], seed: int) -> None:
    """Assign classes to train/val/test splits.

    Split sizes use largest-remainder rounding of ``ratios`` times the
    number of classes, membership is a seeded random permutation.

    Parameters
    ----------
    dataset : `Dataset`
        Dataset to update in place.
    ratios : `~collections.abc.Sequence` [ `float` ]
        Fractions of train, val and test classes, must sum to 1.
    seed : `int`
        Seed of the permutation.

    Raises
    ------
    ConfigError
        Raised if ratios are invalid or any split ends up empty.
    """
    if len(ratios) != len(SPLITS) or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ConfigError(f"Split ratios must be three non-negative numbers summing to 1, got {ratios}")
    class_ids = dataset.class_ids
    n = len(class_ids)
    exact = [r * n for r in ratios]
    sizes = [math.floor(x + 1e-9) for x in exact]
    remainders = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in remainders[: n - sum(sizes)]:
        sizes[i] += 1
    if any(size == 0 for size in sizes):
        raise ConfigError(f"Split ratios {ratios} leave an empty split for {n} classes")
    rng = RngStream(seed, stream_id_for("split"))
    perm = [class_ids[int(i)] for i in rng.permutation(n)]
    start = 0
    for name, size in zip(SPLITS, sizes, strict=True):
        for cid in perm[start : start + size]:
            dataset.split[cid] = name
        start += size
    _LOG.debug("class split sizes: %s", dict(zip(SPLITS, sizes, strict=True)))


def _query_counts(k_way: int, n_query: int) -> list[int]:
    # n_query is the episode total, spread as evenly as possible
    base, extra = divmod(n_query, k_way)
    return [base + (1 if way < extra else 0) for way in range(k_way)]


def sample_episode(
    dataset: Dataset, split: str, k_way: int, n_shot: int, n_query: int, rng: RngStream
) -> Episode:
    """Sample one episode from a split.

    Parameters
    ----------
    dataset : `Dataset`
        Source dataset.
    split : `str`
        Split to sample classes from.
    k_way : `int`
        Number of classes.
    n_shot : `int`
        Support samples per class.
    n_query : `int`
        Total number of query samples, spread evenly over the ways.
    rng : `RngStream`
        Source of randomness.

    Returns
    -------
    episode : `Episode`
        Sampled episode, support and query samples are distinct.

    Raises
    ------
    SamplingError
        Raised if the split has too few classes or a class too few samples.
    """
    classes = dataset.classes(split)
    if len(classes) < k_way:
        raise SamplingError(f"Split {split!r} has {len(classes)} classes, {k_way} needed")
    way_classes = tuple(classes[int(i)] for i in rng.choice(len(classes), k_way))
    supports, queries, support_ids, query_ids, query_labels = [], [], [], [], []
    for way, (cid, n_q) in enumerate(zip(way_classes, _query_counts(k_way, n_query), strict=True)):
        available = dataset.n_samples(cid)
        if available < n_shot + n_q:
            raise SamplingError(f"Class {cid} has {available} samples, {n_shot + n_q} needed")
        picks = [int(i) for i in rng.choice(available, n_shot + n_q)]
        supports.append(dataset.images[cid][picks[:n_shot]])
        queries.append(dataset.images[cid][picks[n_shot:]])
        support_ids += [(cid, i) for i in picks[:n_shot]]
        query_ids += [(cid, i) for i in picks[n_shot:]]
        query_labels += [way] * n_q
    return Episode(
        way_classes=way_classes,
        support=torch.cat(supports),
        support_labels=torch.arange(k_way).repeat_interleave(n_shot),
        query=torch.cat(queries),
        query_labels=torch.tensor(query_labels, dtype=torch.long),
        support_ids=support_ids,
        query_ids=query_ids,
    )


def sample_attack_episode(
    dataset: Dataset,
    target_class: int,
    fixed_support: Sequence[int],
    k_way: int,
    n_shot: int,
    n_qt: int,
    rng: RngStream,
) -> AttackEpisode:
    """Redraw the non-target part of an attack episode.

    The ``K - 1`` other classes are drawn uniformly from the target's split
    without the target, with their supports and one query batch; target
    queries are drawn from the target class excluding the fixed support.

    Parameters
    ----------
    dataset : `Dataset`
        Source dataset.
    target_class : `int`
        Attacked class.
    fixed_support : `~collections.abc.Sequence` [ `int` ]
        Sample indices of the target class forming its support.
    k_way : `int`
        Number of ways.
    n_shot : `int`
        Support samples per non-target class.
    n_qt : `int`
        Number of target queries.
    rng : `RngStream`
        Source of randomness.

    Returns
    -------
    episode : `AttackEpisode`
        Redrawn episode.

    Raises
    ------
    SamplingError
        Raised if there are too few classes or samples.
    """
    split = dataset.split[target_class]
    candidates = [cid for cid in dataset.classes(split) if cid != target_class]
    if len(candidates) < k_way - 1:
        raise SamplingError(f"Split {split!r} has {len(candidates)} non-target classes, {k_way - 1} needed")
    other_classes = tuple(candidates[int(i)] for i in rng.choice(len(candidates), k_way - 1))
    n_q_other = max(1, n_qt // max(1, k_way - 1))
    supports, queries, labels = [], [], []
    for index, cid in enumerate(other_classes):
        available = dataset.n_samples(cid)
        if available < n_shot + n_q_other:
            raise SamplingError(f"Class {cid} has {available} samples, {n_shot + n_q_other} needed")
        picks = [int(i) for i in rng.choice(available, n_shot + n_q_other)]
        supports.append(dataset.images[cid][picks[:n_shot]])
        queries.append(dataset.images[cid][picks[n_shot:]])
        labels += [index] * n_q_other
    excluded = {int(i) for i in fixed_support}
    remaining = [i for i in range(dataset.n_samples(target_class)) if i not in excluded]
    if len(remaining) < n_qt:
        raise SamplingError(
            f"Class {target_class} has {len(remaining)} samples outside the support, {n_qt} needed"
        )
    target_ids = tuple(remaining[int(i)] for i in rng.choice(len(remaining), n_qt))
    target_way = int(rng.integers(0, k_way))
    shape = (0,) + dataset.image_shape
    # non-target query labels are shifted past the inserted target way
    other_labels = torch.tensor(labels, dtype=torch.long)
    other_labels = other_labels + (other_labels >= target_way).long()
    return AttackEpisode(
        target_class=target_class,
        fixed_support=tuple(int(i) for i in fixed_support),
        other_classes=other_classes,
        other_support=torch.cat(supports) if supports else torch.empty(shape),
        other_queries=torch.cat(queries) if queries else torch.empty(shape),
        other_query_labels=other_labels,
        target_queries=dataset.images[target_class][list(target_ids)],
        target_query_ids=target_ids,
        target_way=target_way,
        n_shot=n_shot,
    )


def dataset_save(dataset: Dataset, root: ResourcePathExpression) -> None:
    """Write a dataset as a directory of FSTN tensors and a manifest.

    The manifest ``manifest.txt`` has one line per sample with class id,
    split name and path relative to ``root``, comma-separated. The generator
    descriptor goes to ``generator.yaml``.

    Parameters
    ----------
    dataset : `Dataset`
        Dataset to save.
    root : `lsst.resources.ResourcePathExpression`
        Destination directory.
    """
    root_uri = ResourcePath(root, forceDirectory=True)
    root_uri.mkdir()
    lines = ["# class_id,split,path"]
    for cid in dataset.class_ids:
        for index, image in enumerate(dataset.images[cid]):
            relpath = f"images/c{cid:04d}/s{index:05d}.fstn"
            tensor_write(root_uri.join(relpath), image)
            lines.append(f"{cid},{dataset.split[cid]},{relpath}")
    root_uri.join("manifest.txt").write("\n".join(lines).encode() + b"\n", overwrite=True)
    root_uri.join("generator.yaml").write(
        yaml.safe_dump(dataset.descriptor, sort_keys=True).encode(), overwrite=True
    )
    _LOG.info("Saved %d samples to %s", len(dataset), root_uri)


def _parse_manifest(lines: Iterable[str]) -> list[tuple[int, str, str]]:
    entries = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [field.strip() for field in line.split(",")]
        if len(fields) != 3:
            raise FormatError("manifest", f"line {lineno}: expected 3 fields, found {len(fields)}")
        try:
            cid = int(fields[0])
        except ValueError:
            message = f"line {lineno}: class id {fields[0]!r} is not an integer"
            raise FormatError("manifest", message) from None
        if fields[1] not in SPLITS + (_UNASSIGNED,):
            raise FormatError("manifest", f"line {lineno}: unknown split {fields[1]!r}")
        entries.append((cid, fields[1], fields[2]))
    return entries


def dataset_load(root: ResourcePathExpression) -> Dataset:
    """Read a dataset written by `dataset_save` or laid out the same way.

    uint8 tensors are rescaled to ``[0, 1]``, float tensors are used as is.

    Parameters
    ----------
    root : `lsst.resources.ResourcePathExpression`
        Dataset directory.

    Returns
    -------
    dataset : `Dataset`
        Loaded dataset.

    Raises
    ------
    FormatError
        Raised if the manifest is malformed or classes have mixed splits.
    """
    root_uri = ResourcePath(root, forceDirectory=True)
    entries = _parse_manifest(root_uri.join("manifest.txt").read().decode().splitlines())
    images: dict[int, list[torch.Tensor]] = {}
    split: dict[int, str] = {}
    for cid, name, relpath in entries:
        if split.setdefault(cid, name) != name:
            raise FormatError("manifest", f"class {cid} appears in splits {split[cid]!r} and {name!r}")
        array = tensor_read(root_uri.join(relpath))
        tensor = torch.from_numpy(array)
        if array.dtype == np.uint8:
            tensor = tensor.to(torch.float32) / 255.0
        images.setdefault(cid, []).append(tensor.to(torch.float32))
    descriptor: dict[str, Any] = {}
    generator = root_uri.join("generator.yaml")
    if generator.exists():
        descriptor = yaml.safe_load(generator.read()) or {}
    return Dataset({cid: torch.stack(imgs) for cid, imgs in images.items()}, split, descriptor)
