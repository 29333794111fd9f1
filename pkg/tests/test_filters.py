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

import copy
import math
import unittest

import pydantic
import torch
from lsst.fssentry import filters
from lsst.fssentry.data import split_classes, synth_generate
from lsst.fssentry.errors import ConfigError
from lsst.fssentry.models import build_model
from lsst.fssentry.optim import OptimizerState
from lsst.fssentry.rng import RngStream
from lsst.utils.tests import temporaryDirectory


def naive_median(images: torch.Tensor) -> torch.Tensor:
    """Reference 2x2 median filter with explicit loops."""
    n, c, h, w = images.shape
    result = torch.empty_like(images)
    for b in range(n):
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    i1, j1 = min(i + 1, h - 1), min(j + 1, w - 1)
                    values = sorted(
                        float(images[b, ch, y, x]) for y, x in ((i, j), (i, j1), (i1, j), (i1, j1))
                    )
                    result[b, ch, i, j] = (values[1] + values[2]) / 2
    return result


class FiltersTestCase(unittest.TestCase):
    """Tests for filters module"""

    def test_spec(self) -> None:
        """Test filter spec defaults and names"""
        self.assertEqual(filters.FilterSpec(kind="bitr").name, "bitr6")
        self.assertEqual(filters.FilterSpec(kind="bitr", bits=4).name, "bitr4")
        self.assertEqual(filters.FilterSpec(kind="tvm").name, "tvm")
        with self.assertRaises(pydantic.ValidationError):
            filters.FilterSpec(kind="bitr", bits=9)
        with self.assertRaises(pydantic.ValidationError):
            filters.FilterSpec(kind="jpeg")

    def test_identity(self) -> None:
        """Test that the identity filter returns an equal copy"""
        images = RngStream(0).torch_uniform((2, 3, 4, 4), 0.0, 1.0)
        result = filters.apply_filter(filters.FilterSpec(kind="identity"), images, RngStream(1))
        self.assertTrue(torch.equal(result, images))
        result[0, 0, 0, 0] = 5.0
        self.assertNotEqual(float(images[0, 0, 0, 0]), 5.0)

    def test_median(self) -> None:
        """Test median filter against explicit loops"""
        images = RngStream(2).torch_uniform((2, 3, 5, 4), 0.0, 1.0, torch.float64)
        result = filters.filter_feats_median(images)
        self.assertTrue(torch.allclose(result, naive_median(images), atol=1e-12))
        flat = torch.full((1, 3, 4, 4), 0.25)
        self.assertTrue(torch.equal(filters.filter_feats_median(flat), flat))

    def test_bitr(self) -> None:
        """Test bit depth reduction levels"""
        images = torch.linspace(0, 1, 101).reshape(1, 1, 1, 101)
        for bits in (1, 3, 6):
            result = filters.filter_bitr(images, bits)
            levels = 2**bits - 1
            self.assertLessEqual(len(torch.unique(result)), levels + 1)
            self.assertTrue(torch.allclose(result * levels, torch.round(result * levels)))
            self.assertLessEqual(float((result - images).abs().max()), 0.5 / levels + 1e-6)
        self.assertEqual(torch.unique(filters.filter_bitr(images, 1)).tolist(), [0.0, 1.0])
        exact = torch.arange(256, dtype=torch.float64).reshape(1, 1, 16, 16) / 255
        self.assertTrue(torch.allclose(filters.filter_bitr(exact, 8), exact))
        with self.assertRaises(ConfigError):
            filters.filter_bitr(images, 0)

    def test_noise(self) -> None:
        """Test additive noise filter"""
        images = RngStream(3).torch_uniform((4, 3, 6, 6), 0.2, 0.8)
        first = filters.filter_noise(images, RngStream(4))
        second = filters.filter_noise(images, RngStream(4))
        self.assertTrue(torch.equal(first, second))
        self.assertFalse(torch.equal(first, images))
        self.assertTrue(torch.all((first >= 0) & (first <= 1)))
        flat = torch.full((3, 3, 4, 4), 0.5)
        self.assertTrue(torch.equal(filters.filter_noise(flat, RngStream(4)), flat))

    def test_tvm(self) -> None:
        """Test total variation reconstruction"""
        images = RngStream(5).torch_uniform((2, 3, 6, 6), 0.0, 1.0, torch.float64)
        mask = torch.from_numpy(RngStream(6).bernoulli(0.5, (2, 1, 6, 6))).to(torch.float64)
        solution, objectives = filters.tvm_solve(images, mask, 0.03, 20, 0.1)
        self.assertEqual(solution.shape, images.shape)
        self.assertGreater(len(objectives), 1)
        for before, after in zip(objectives, objectives[1:], strict=False):
            self.assertLessEqual(after, before)
        self.assertLess(objectives[-1], objectives[0])

        flat = torch.full((1, 3, 4, 4), 0.3, dtype=torch.float64)
        ones = torch.ones(1, 1, 4, 4, dtype=torch.float64)
        self.assertAlmostEqual(float(filters.tv_objective(flat, flat, ones, 0.5)), 0.0, places=9)

        spec = filters.FilterSpec(kind="tvm", tv_iterations=5)
        result = filters.apply_filter(spec, images, RngStream(7))
        self.assertTrue(torch.all((result >= 0) & (result <= 1)))
        unchanged, objectives = filters.tvm_solve(images, mask, 0.03, 0, 0.1)
        self.assertTrue(torch.equal(unchanged, images))
        self.assertEqual(len(objectives), 1)

    def test_median_cases(self) -> None:
        """Test median filter against explicit loops on random shapes"""
        for seed in range(100):
            rng = RngStream(seed)
            shape = (1 + seed % 2, 1 + seed % 3, int(rng.integers(1, 6)), int(rng.integers(1, 6)))
            images = rng.torch_uniform(shape, 0.0, 1.0, torch.float64)
            if seed % 5 == 0:
                images = torch.round(images * 3) / 3
            result = filters.filter_feats_median(images)
            self.assertTrue(torch.allclose(result, naive_median(images), atol=1e-12), f"seed={seed}")

    def test_bitr_idempotent(self) -> None:
        """Test that 4-bit reduction has at most 16 levels and is a projection"""
        images = RngStream(8).torch_uniform((8, 3, 16, 16), 0.0, 1.0)
        once = filters.filter_bitr(images, 4)
        self.assertLessEqual(len(torch.unique(once)), 16)
        self.assertTrue(torch.equal(filters.filter_bitr(once, 4), once))

    def test_noise_variance(self) -> None:
        """Test that added noise has the per-channel variance of the batch"""
        images = RngStream(9).torch_uniform((100, 3, 10, 10), 0.45, 0.55, torch.float64)
        noisy = filters.filter_noise(images, RngStream(10))
        expected = images.var(dim=(0, 2, 3), unbiased=False)
        actual = (noisy - images).var(dim=(0, 2, 3), unbiased=False)
        for channel in range(3):
            self.assertAlmostEqual(float(actual[channel] / expected[channel]), 1.0, delta=0.2)

    def test_tvm_monotone(self) -> None:
        """Test that the total variation objective never increases"""
        for seed in range(10):
            rng = RngStream(seed)
            images = rng.torch_uniform((1, 3, 5, 5), 0.0, 1.0, torch.float64)
            mask = torch.from_numpy(rng.bernoulli(0.5, (1, 1, 5, 5))).to(torch.float64)
            weight = float(rng.uniform(0.01, 0.5))
            _, objectives = filters.tvm_solve(images, mask, weight, 15, 0.5)
            for before, after in zip(objectives, objectives[1:], strict=False):
                self.assertLessEqual(after, before, f"seed={seed}")

    def test_losses(self) -> None:
        """Test feature-preserving losses on known values"""
        x = torch.zeros(1, 3, 2, 2)
        x_hat = torch.ones(1, 3, 2, 2)
        f = torch.zeros(1, 4)
        f_hat = torch.full((1, 4), 2.0)
        loss = filters.fpa_loss(x, x_hat, f, f_hat)
        self.assertAlmostEqual(float(loss), 0.01 * math.sqrt(12) + 8.0, places=5)
        z = torch.zeros(1, 4)
        loss = filters.fpa_prime_loss(x, x_hat, f, f_hat, z, torch.ones(1, 4))
        self.assertAlmostEqual(float(loss), 0.01 * math.sqrt(12) + 8.0 + 2.0, places=5)

    def test_autoencoders(self) -> None:
        """Test autoencoder training stages and checkpoints"""
        dataset = synth_generate(12, 20, 0, size=8)
        split_classes(dataset, (0.5, 1 / 6, 1 / 3), 0)
        model = build_model("prototypical", RngStream(1), (4, 8), k_way=3, n_shot=2, image_shape=(3, 8, 8))
        ae = filters.build_ae(RngStream(2), (4, 8), (3, 8, 8))
        opt = OptimizerState.for_module(ae, kind="adam", lr=1e-3, step_size=1, gamma=0.5)
        log = filters.train_ae_standard(ae, dataset, opt, 2, RngStream(3), batch_size=32)
        self.assertEqual(log.stage, "standard")
        self.assertEqual(len(log.train_loss), 2)
        self.assertEqual(log.best_epoch, min(range(2), key=lambda e: log.val_loss[e]))
        self.assertGreaterEqual(filters.reconstruction_rmse(ae, dataset.split_images("test")), 0.0)

        standard = copy.deepcopy(ae)
        opt = OptimizerState.for_module(ae, kind="adam", lr=1e-4)
        log = filters.finetune_fpa(ae, model.encoder, dataset, opt, 1, RngStream(4))
        self.assertEqual(ae.stage, "fpa")
        self.assertEqual(len(log.val_loss), 1)
        self.assertTrue(all(param.requires_grad for param in model.parameters()))
        self.assertGreaterEqual(filters.feature_error(ae, model.encoder, dataset.split_images("val")), 0.0)

        with self.assertRaises(ConfigError):
            filters.finetune_fpa_prime(ae, model, dataset, opt, 1, RngStream(5))
        with self.assertRaises(ConfigError):
            filters.finetune_fpa(ae, model.encoder, dataset, opt, 1, RngStream(5))
        ae = standard
        opt = OptimizerState.for_module(ae, kind="adam", lr=1e-4)
        log = filters.finetune_fpa_prime(ae, model, dataset, opt, 1, RngStream(5))
        self.assertEqual(ae.stage, "fpa_prime")

        images = dataset.split_images("test")[:4]
        with temporaryDirectory() as folder:
            filters.ae_save(ae, folder)
            loaded = filters.ae_load(folder)
        self.assertEqual(loaded.stage, "fpa_prime")
        spec = filters.FilterSpec(kind="fpa_prime")
        expected = filters.apply_filter(spec, images, RngStream(6), ae)
        self.assertTrue(torch.equal(filters.apply_filter(spec, images, RngStream(6), loaded), expected))
        self.assertTrue(torch.all((expected >= 0) & (expected <= 1)))
        with self.assertRaises(ConfigError):
            filters.apply_filter(filters.FilterSpec(kind="fpa"), images, RngStream(6))


if __name__ == "__main__":
    unittest.main()
