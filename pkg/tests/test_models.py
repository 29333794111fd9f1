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

import math
import unittest

import torch
from lsst.fssentry import models
from lsst.fssentry.data import Dataset, sample_episode, split_classes, synth_generate
from lsst.fssentry.errors import ConfigError, DivergenceError, FormatError
from lsst.fssentry.network import LayerSpec, Network
from lsst.fssentry.optim import OptimizerState
from lsst.fssentry.rng import RngStream
from lsst.utils.tests import temporaryDirectory


def constant_dataset() -> Dataset:
    """Make a dataset where every class is a distinct flat gray level."""
    rng = RngStream(0)
    images = {
        cid: torch.full((20, 3, 4, 4), cid / 12) + rng.torch_uniform((20, 3, 4, 4), -0.005, 0.005)
        for cid in range(12)
    }
    split = {cid: ("train" if cid < 6 else "val" if cid < 8 else "test") for cid in range(12)}
    return Dataset(images, split)


def small_model(
    head_kind: str = "prototypical", widths: tuple[int, ...] = (4, 8), size: int = 8
) -> models.FewShotModel:
    """Build a 3-way 2-shot model for small images."""
    return models.build_model(head_kind, RngStream(8), widths, k_way=3, n_shot=2, image_shape=(3, size, size))


def pixel_model() -> models.FewShotModel:
    """Prototypical model whose features are the raw pixels."""
    return models.FewShotModel(Network([LayerSpec.flatten()], (3, 4, 4), "encoder"), "prototypical")


class ModelsTestCase(unittest.TestCase):
    """Tests for models module"""

    def test_predict(self) -> None:
        """Test that ties resolve to the lowest way"""
        logits = torch.tensor([[1.0, 3.0, 3.0], [2.0, 2.0, 2.0], [0.0, -1.0, 5.0]])
        self.assertEqual(models.predict(logits).tolist(), [1, 0, 2])
        episode_logits = models.EpisodeLogits(logits, (7, 8, 9))
        self.assertEqual(episode_logits.predicted_classes(), [8, 7, 9])

    def test_proto_logits(self) -> None:
        """Test prototype logits against a direct computation"""
        model = pixel_model()
        rng = RngStream(1)
        support = rng.torch_uniform((6, 3, 4, 4), 0.0, 1.0)
        labels = torch.tensor([0, 0, 1, 1, 2, 2])
        query = rng.torch_uniform((4, 3, 4, 4), 0.0, 1.0)
        logits = models.proto_logits(model, support, labels, query, 3)
        self.assertEqual(tuple(logits.shape), (4, 3))
        for q in range(4):
            for way in range(3):
                prototype = support[labels == way].flatten(1).mean(dim=0)
                expected = -((query[q].flatten() - prototype) ** 2).sum()
                self.assertAlmostEqual(float(logits[q, way]), float(expected), places=4)
        # the feature of a class is the mean of its support features
        feature = models.class_feature(model, support[:2])
        self.assertTrue(torch.allclose(feature, support[:2].flatten(1).mean(dim=0)))
        with self.assertRaises(ConfigError):
            models.relation_logits(model, support, labels, query, 3)

    def test_proto_logits_cases(self) -> None:
        """Test prototype logits against a loop over random episodes"""
        model = pixel_model()
        for seed in range(100):
            rng = RngStream(seed)
            k_way = 2 + seed % 4
            shots = rng.integers(1, 4, size=k_way)
            order = torch.from_numpy(rng.permutation(int(sum(shots))))
            labels = torch.cat([torch.full((int(n),), way) for way, n in enumerate(shots)])[order]
            support = rng.torch_uniform((len(labels), 3, 4, 4), 0.0, 1.0, torch.float64)
            query = rng.torch_uniform((int(rng.integers(1, 5)), 3, 4, 4), 0.0, 1.0, torch.float64)
            logits = models.proto_logits(model, support, labels, query, k_way)
            expected = torch.zeros(query.shape[0], k_way, dtype=torch.float64)
            for q in range(query.shape[0]):
                for way in range(k_way):
                    members = [support[i].flatten() for i in range(len(labels)) if labels[i] == way]
                    prototype = sum(members) / len(members)
                    expected[q, way] = -sum((query[q].flatten()[i] - prototype[i]) ** 2 for i in range(48))
            self.assertTrue(torch.allclose(logits, expected, atol=1e-10), f"seed={seed}")

    def test_way_permutation(self) -> None:
        """Test that relabelling the ways permutes the logit columns"""
        rng = RngStream(13)
        support = rng.torch_uniform((6, 3, 8, 8), 0.0, 1.0)
        labels = torch.tensor([0, 0, 1, 1, 2, 2])
        query = rng.torch_uniform((4, 3, 8, 8), 0.0, 1.0)
        perm = torch.tensor([2, 0, 1])
        for head_kind in models.HEAD_KINDS:
            model = small_model(head_kind)
            with torch.no_grad():
                logits = model.logits(support, labels, query, 3)
                permuted = model.logits(support, perm[labels], query, 3)
            self.assertTrue(torch.allclose(permuted[:, perm], logits, atol=1e-6), head_kind)

    def test_initial_loss(self) -> None:
        """Test that an untrained 5-way relation model scores near chance"""
        dataset = synth_generate(12, 20, 0, size=8)
        split_classes(dataset, (0.5, 1 / 6, 1 / 3), 0)
        model = models.build_model(
            "relation", RngStream(12), (4, 8), k_way=5, n_shot=2, image_shape=(3, 8, 8)
        )
        rng = RngStream(14)
        losses = []
        with torch.no_grad():
            for index in range(100):
                episode = sample_episode(dataset, "train", 5, 2, 10, rng.fork("episode", index))
                logits = model.episode_logits(episode).scores
                losses.append(float(torch.nn.functional.cross_entropy(logits, episode.query_labels)))
        self.assertAlmostEqual(sum(losses) / len(losses), math.log(5), delta=0.3)

    def test_zero_relation_head(self) -> None:
        """Test that a relation head with zero weights outputs its bias"""
        model = small_model("relation")
        assert model.head is not None
        with torch.no_grad():
            for layer in model.head.layers:
                if isinstance(layer, torch.nn.Linear):
                    layer.weight.zero_()
        rng = RngStream(15)
        support = rng.torch_uniform((6, 3, 8, 8), 0.0, 1.0)
        query = rng.torch_uniform((5, 3, 8, 8), 0.0, 1.0)
        with torch.no_grad():
            logits = model.logits(support, torch.tensor([0, 1, 2, 2, 1, 0]), query, 3)
        bias = float(model.head.layers[-1].bias)
        self.assertTrue(torch.allclose(logits, torch.full((5, 3), bias)))

    def test_relation_logits(self) -> None:
        """Test relation head scores"""
        model = models.build_model("relation", RngStream(2), widths=(4, 8), image_shape=(3, 8, 8))
        rng = RngStream(3)
        support = rng.torch_uniform((6, 3, 8, 8), 0.0, 1.0)
        labels = torch.tensor([0, 1, 2, 0, 1, 2])
        query = rng.torch_uniform((5, 3, 8, 8), 0.0, 1.0)
        logits = models.relation_logits(model, support, labels, query, 3)
        self.assertEqual(tuple(logits.shape), (5, 3))
        # score depends only on the pooled pair of class and query features
        features = model.encoder(support).mean(dim=(2, 3))
        pooled = features[labels == 1].mean(dim=0)
        query_pooled = model.encoder(query[2:3]).mean(dim=(2, 3))[0]
        expected = model.head(torch.cat([pooled, query_pooled])[None, :])
        self.assertAlmostEqual(float(logits[2, 1]), float(expected), places=5)
        with self.assertRaises(ConfigError):
            models.proto_logits(model, support, labels, query, 3)
        with self.assertRaises(ConfigError):
            models.FewShotModel(model.encoder, "relation")
        with self.assertRaises(ConfigError):
            models.FewShotModel(model.encoder, "matching")

    def test_support_gradient(self) -> None:
        """Test that logits are differentiable in support pixels"""
        model = models.build_model("prototypical", RngStream(4), widths=(4, 8), image_shape=(3, 8, 8))
        support = RngStream(5).torch_uniform((4, 3, 8, 8), 0.0, 1.0).requires_grad_(True)
        query = RngStream(6).torch_uniform((2, 3, 8, 8), 0.0, 1.0)
        logits = model.logits(support, torch.tensor([0, 0, 1, 1]), query)
        logits[:, 0].sum().backward()
        self.assertIsNotNone(support.grad)
        self.assertGreater(float(support.grad.abs().sum()), 0.0)

    def test_oracle_accuracy(self) -> None:
        """Test evaluation on perfectly separable classes"""
        dataset = constant_dataset()
        mean, half_width = models.eval_accuracy(pixel_model(), dataset, "train", 10, RngStream(7), 5, 5, 25)
        self.assertEqual(mean, 1.0)
        self.assertEqual(half_width, 0.0)
        mean, half_width = models.eval_accuracy(pixel_model(), dataset, "test", 1, RngStream(7), 4, 2, 8)
        self.assertEqual((mean, half_width), (1.0, 0.0))

    def test_train(self) -> None:
        """Test episodic training bookkeeping"""
        dataset = synth_generate(12, 20, 0, size=8)
        split_classes(dataset, (0.5, 1 / 3, 1 / 6), 0)
        model = small_model()
        opt = OptimizerState.for_module(model, kind="adam", lr=1e-3)
        log = models.train_fewshot(
            model, dataset, 6, opt, RngStream(9), n_query=6, val_every=3, val_episodes=2
        )
        self.assertEqual(len(log.losses), 6)
        self.assertEqual([index for index, _ in log.validation], [2, 5])
        self.assertIn(log.best_episode, (2, 5))
        self.assertEqual(log.best_accuracy, max(acc for _, acc in log.validation))

        untouched = small_model()
        state = {name: value.clone() for name, value in untouched.state_dict().items()}
        opt = OptimizerState.for_module(untouched)
        log = models.train_fewshot(untouched, dataset, 0, opt, RngStream(9))
        self.assertTrue(all(torch.equal(state[k], v) for k, v in untouched.state_dict().items()))
        self.assertTrue(math.isnan(log.mean_loss))

    def test_divergence(self) -> None:
        """Test that non-finite loss reports the episode"""
        dataset = constant_dataset()
        model = small_model(widths=(4,), size=4)
        with torch.no_grad():
            model.encoder.layers[0].bias.fill_(float("nan"))
        opt = OptimizerState.for_module(model)
        with self.assertRaises(DivergenceError) as cm:
            models.train_fewshot(model, dataset, 3, opt, RngStream(9), n_query=6, val_every=0)
        self.assertEqual(cm.exception.index, 0)

    def test_save_load(self) -> None:
        """Test model checkpoints"""
        dataset = constant_dataset()
        episode = sample_episode(dataset, "train", 3, 2, 6, RngStream(10))
        for head_kind in models.HEAD_KINDS:
            model = small_model(head_kind, size=4)
            with temporaryDirectory() as folder:
                models.model_save(model, folder, {"episodes": 0})
                loaded = models.model_load(folder)
            self.assertEqual(loaded.head_kind, head_kind)
            self.assertEqual((loaded.k_way, loaded.n_shot), (3, 2))
            with torch.no_grad():
                expected = model.episode_logits(episode).scores
                actual = loaded.episode_logits(episode).scores
            self.assertTrue(torch.equal(expected, actual))

    def test_bad_checkpoint(self) -> None:
        """Test manifest validation of checkpoints"""
        model = models.build_model("prototypical", RngStream(11), widths=(4,), image_shape=(3, 4, 4))
        with temporaryDirectory() as folder:
            models.model_save(model, folder)
            with open(f"{folder}/manifest.yaml", "w") as stream:
                stream.write("- not a mapping\n")
            with self.assertRaises(FormatError):
                models.model_load(folder)


if __name__ == "__main__":
    unittest.main()
