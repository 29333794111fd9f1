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

import os
import unittest

import numpy as np
import torch
from lsst.fssentry import data
from lsst.fssentry.errors import ConfigError, FormatError, SamplingError
from lsst.fssentry.rng import RngStream
from lsst.fssentry.tensorio import tensor_write
from lsst.utils.tests import temporaryDirectory


def make_dataset(n_classes: int = 12, per_class: int = 20, seed: int = 1) -> data.Dataset:
    """Generate a small split dataset.

    Parameters
    ----------
    n_classes : `int`
        Number of classes.
    per_class : `int`
        Samples per class.
    seed : `int`
        Generator seed.

    Returns
    -------
    dataset : `lsst.fssentry.data.Dataset`
        Dataset split 6/2/4 for the default size.
    """
    dataset = data.synth_generate(n_classes, per_class, seed, size=8)
    data.split_classes(dataset, (0.5, 1 / 6, 1 / 3), seed)
    return dataset


class DataTestCase(unittest.TestCase):
    """Tests for data module"""

    def test_generate(self) -> None:
        """Test synthetic generator output"""
        dataset = data.synth_generate(8, 20, 3, size=8)
        self.assertEqual(dataset.class_ids, list(range(8)))
        self.assertEqual(dataset.image_shape, (3, 8, 8))
        self.assertEqual(len(dataset), 160)
        for images in dataset.images.values():
            self.assertEqual(images.dtype, torch.float32)
            self.assertTrue(torch.all((images >= 0) & (images <= 1)))
        classes = dataset.descriptor["classes"]
        tuples = {(c["hue"], c["orientation"], c["frequency"]) for c in classes.values()}
        self.assertEqual(len(tuples), 8)
        self.assertEqual(dataset.descriptor["generator"], "synthetic-stripes")

        again = data.synth_generate(8, 20, 3, size=8)
        for cid in dataset.class_ids:
            self.assertTrue(torch.equal(dataset.images[cid], again.images[cid]))
        other = data.synth_generate(8, 20, 4, size=8)
        self.assertFalse(all(torch.equal(dataset.images[c], other.images[c]) for c in dataset.class_ids))

    def test_generate_limits(self) -> None:
        """Test generator argument checks"""
        with self.assertRaises(ConfigError):
            data.synth_generate(7, 20, 0)
        with self.assertRaises(ConfigError):
            data.synth_generate(8, 19, 0)
        with self.assertRaises(ConfigError):
            data.synth_generate(97, 20, 0)

    def test_split(self) -> None:
        """Test class split sizes and determinism"""
        dataset = data.synth_generate(24, 20, 0, size=8)
        data.split_classes(dataset, (14 / 24, 4 / 24, 6 / 24), 5)
        sizes = [len(dataset.classes(name)) for name in data.SPLITS]
        self.assertEqual(sizes, [14, 4, 6])
        first = dict(dataset.split)
        data.split_classes(dataset, (14 / 24, 4 / 24, 6 / 24), 5)
        self.assertEqual(dataset.split, first)

        dataset = data.synth_generate(10, 20, 0, size=8)
        data.split_classes(dataset, (0.45, 0.25, 0.3), 1)
        # 4.5, 2.5 and 3 are rounded by largest remainder, ties go to the first split
        self.assertEqual([len(dataset.classes(name)) for name in data.SPLITS], [5, 2, 3])

        with self.assertRaises(ConfigError):
            data.split_classes(dataset, (0.5, 0.5), 1)
        with self.assertRaises(ConfigError):
            data.split_classes(dataset, (0.98, 0.01, 0.01), 1)
        with self.assertRaises(SamplingError):
            data.Dataset(dataset.images).split_images("train")

    def test_episode(self) -> None:
        """Test episode structure"""
        dataset = make_dataset()
        episode = data.sample_episode(dataset, "train", 5, 2, 12, RngStream(2))
        self.assertEqual(episode.k_way, 5)
        self.assertEqual(episode.n_shot, 2)
        self.assertEqual(tuple(episode.support.shape), (10, 3, 8, 8))
        self.assertEqual(episode.support_labels.tolist(), [0, 0, 1, 1, 2, 2, 3, 3, 4, 4])
        self.assertEqual(tuple(episode.query.shape), (12, 3, 8, 8))
        self.assertEqual(np.bincount(episode.query_labels.numpy()).tolist(), [3, 3, 2, 2, 2])
        self.assertTrue(set(episode.way_classes) <= set(dataset.classes("train")))
        self.assertFalse(set(episode.support_ids) & set(episode.query_ids))
        for (cid, index), image in zip(episode.support_ids, episode.support, strict=True):
            self.assertTrue(torch.equal(dataset.images[cid][index], image))
        self.assertEqual(episode.query_class_ids[0], episode.way_classes[0])

        again = data.sample_episode(dataset, "train", 5, 2, 12, RngStream(2))
        self.assertEqual(again.support_ids, episode.support_ids)

        with self.assertRaises(SamplingError):
            data.sample_episode(dataset, "val", 5, 2, 10, RngStream(2))
        with self.assertRaises(SamplingError):
            data.sample_episode(dataset, "train", 2, 15, 20, RngStream(2))

    def test_attack_episode(self) -> None:
        """Test attack episode assembly"""
        dataset = make_dataset()
        target = dataset.classes("test")[0]
        fixed = [0, 1, 2]
        episode = data.sample_attack_episode(dataset, target, fixed, 4, 3, 6, RngStream(3))
        self.assertEqual(episode.k_way, 4)
        self.assertNotIn(target, episode.other_classes)
        self.assertTrue(set(episode.other_classes) <= set(dataset.classes("test")))
        self.assertFalse(set(episode.target_query_ids) & set(fixed))
        self.assertEqual(len(episode.target_query_ids), 6)
        self.assertEqual(episode.way_classes[episode.target_way], target)
        self.assertTrue(torch.all(episode.target_query_labels == episode.target_way))
        self.assertFalse(torch.any(episode.other_query_labels == episode.target_way))
        self.assertEqual(episode.other_query_labels.shape[0], 3 * 2)

        target_support = dataset.images[target][fixed]
        support, labels = episode.assemble(target_support)
        self.assertEqual(tuple(support.shape), (12, 3, 8, 8))
        way = episode.target_way
        self.assertTrue(torch.equal(support[way * 3 : way * 3 + 3], target_support))
        self.assertEqual(labels.tolist(), [w for w in range(4) for _ in range(3)])
        for label, image in zip(episode.other_query_labels.tolist(), episode.other_queries, strict=True):
            cid = episode.way_classes[label]
            self.assertTrue(any(torch.equal(image, other) for other in dataset.images[cid]))

    def test_save_load(self) -> None:
        """Test dataset persistence"""
        dataset = make_dataset(8, 20)
        with temporaryDirectory() as folder:
            data.dataset_save(dataset, folder)
            with open(os.path.join(folder, "manifest.txt")) as manifest:
                lines = manifest.read().splitlines()
            self.assertEqual(lines[0], "# class_id,split,path")
            self.assertEqual(len(lines), 161)
            loaded = data.dataset_load(folder)
            self.assertEqual(loaded.split, dataset.split)
            self.assertEqual(loaded.descriptor["seed"], 1)
            for cid in dataset.class_ids:
                self.assertTrue(torch.equal(loaded.images[cid], dataset.images[cid]))

    def test_load_uint8(self) -> None:
        """Test loading of a hand-made dataset with uint8 images"""
        with temporaryDirectory() as folder:
            lines = []
            for cid in range(2):
                for index in range(2):
                    relpath = f"img/{cid}_{index}.fstn"
                    os.makedirs(os.path.join(folder, "img"), exist_ok=True)
                    tensor_write(os.path.join(folder, relpath), np.full((3, 4, 4), 255 * cid, dtype=np.uint8))
                    lines.append(f"{cid},train,{relpath}")
            with open(os.path.join(folder, "manifest.txt"), "w") as manifest:
                manifest.write("\n".join(lines) + "\n")
            loaded = data.dataset_load(folder)
            self.assertEqual(loaded.classes("train"), [0, 1])
            self.assertTrue(torch.all(loaded.images[1] == 1.0))
            self.assertTrue(torch.all(loaded.images[0] == 0.0))

    def test_bad_manifest(self) -> None:
        """Test manifest validation"""
        for content in ("1,train\n", "x,train,a.fstn\n", "1,holdout,a.fstn\n"):
            with temporaryDirectory() as folder:
                with open(os.path.join(folder, "manifest.txt"), "w") as manifest:
                    manifest.write(content)
                with self.assertRaises(FormatError) as cm:
                    data.dataset_load(folder)
                self.assertEqual(cm.exception.field, "manifest")


if __name__ == "__main__":
    unittest.main()
