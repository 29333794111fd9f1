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

import unittest

import pydantic
import torch
from lsst.fssentry import attacks
from lsst.fssentry.data import split_classes, synth_generate
from lsst.fssentry.models import build_model
from lsst.fssentry.rng import RngStream
from lsst.utils.tests import temporaryDirectory


class AttacksTestCase(unittest.TestCase):
    """Tests for attacks module"""

    @classmethod
    def setUpClass(cls) -> None:
        cls.dataset = synth_generate(12, 20, 0, size=8)
        split_classes(cls.dataset, (0.5, 1 / 6, 1 / 3), 0)
        cls.model = build_model(
            "prototypical", RngStream(1), (4, 8), k_way=3, n_shot=3, image_shape=(3, 8, 8)
        )
        cls.target = cls.dataset.classes("test")[0]
        cls.base_ids = (0, 1, 2)

    def config(self, **kwargs: object) -> attacks.AttackConfig:
        values = dict(k_way=3, n_shot=3, n_qt=4, n_attacked=2, iterations=4, eps=0.05, eta=0.01)
        values.update(kwargs)
        return attacks.AttackConfig(**values)

    def test_config(self) -> None:
        """Test attack parameter validation"""
        cfg = attacks.AttackConfig()
        self.assertEqual((cfg.method, cfg.iterations, cfg.n_attacked), ("pgd", 75, 5))
        self.assertAlmostEqual(cfg.eps, 12 / 255)
        with self.assertRaises(pydantic.ValidationError):
            attacks.AttackConfig(eps=0.0)
        attacks.AttackConfig(method="cw_sgd", eps=0.0)
        with self.assertRaises(pydantic.ValidationError):
            attacks.AttackConfig(n_attacked=6)
        with self.assertRaises(pydantic.ValidationError):
            attacks.AttackConfig(method="fgsm")
        with self.assertRaises(pydantic.ValidationError):
            attacks.AttackConfig(steps=3)

    def test_cw_margin(self) -> None:
        """Test margin values and the kappa floor"""
        logits = torch.tensor([[3.0, 1.0, 2.0], [0.0, 4.0, 4.5]])
        self.assertEqual(attacks.cw_margin(logits, 0, 0.5).tolist(), [1.0, -0.5])
        self.assertEqual(attacks.cw_margin(logits, 2, 10.0).tolist(), [-1.0, 0.5])

    def test_pgd_invariants(self) -> None:
        """Test that every PGD iterate stays in the budget"""
        cfg = self.config(eta=0.02)
        base = self.dataset.images[self.target][list(self.base_ids)]
        iterates = []

        def record(iteration: int, support: torch.Tensor) -> None:
            iterates.append(support.clone())

        adv = attacks.pgd_support_attack(
            self.model, self.dataset, self.target, self.base_ids, cfg, RngStream(2), (0, 2), record
        )
        self.assertEqual(len(iterates), 4)
        for support in iterates + [adv.adversarial]:
            self.assertLessEqual(float((support - base).abs().max()), cfg.eps + 1e-6)
            self.assertTrue(torch.all((support >= 0) & (support <= 1)))
            self.assertTrue(torch.equal(support[1], base[1]))
        self.assertEqual(adv.attacked_slots, (0, 2))
        self.assertTrue(torch.all(adv.delta[1] == 0))
        self.assertGreater(adv.linf(), 0.0)
        self.assertAlmostEqual(adv.l2(), float(adv.delta.flatten().norm()))
        self.assertTrue(torch.equal(adv.base, base))

    def test_no_slots(self) -> None:
        """Test that attacking no slot leaves the support clean"""
        for method in ("pgd", "cw_sgd"):
            cfg = self.config(method=method)
            adv = attacks.run_attack(
                self.model, self.dataset, self.target, self.base_ids, cfg, RngStream(3), attacked_slots=()
            )
            self.assertEqual(adv.linf(), 0.0)
            self.assertEqual(adv.attacked_slots, ())

    def test_cw_shrinks(self) -> None:
        """Test that without the margin term CW-SGD only shrinks delta"""
        cfg = self.config(method="cw_sgd", const=0.0, eta=0.01, iterations=5)
        base = self.dataset.images[self.target][list(self.base_ids)]
        norms = []

        def record(iteration: int, support: torch.Tensor) -> None:
            norms.append(float((support - base).flatten().norm()))

        adv = attacks.cw_sgd_support_attack(
            self.model, self.dataset, self.target, self.base_ids, cfg, RngStream(4), (1,), record
        )
        self.assertEqual(len(norms), 5)
        for before, after in zip(norms, norms[1:], strict=False):
            self.assertAlmostEqual(before - after, 0.01, places=4)
        self.assertTrue(torch.all(adv.delta[0] == 0) and torch.all(adv.delta[2] == 0))
        self.assertTrue(torch.all((adv.adversarial >= 0) & (adv.adversarial <= 1)))

    def test_deterministic(self) -> None:
        """Test that identical streams give identical sets"""
        cfg = self.config()
        first = attacks.run_attack(self.model, self.dataset, self.target, self.base_ids, cfg, RngStream(5))
        second = attacks.run_attack(self.model, self.dataset, self.target, self.base_ids, cfg, RngStream(5))
        self.assertEqual(first.attacked_slots, second.attacked_slots)
        self.assertEqual(len(first.attacked_slots), 2)
        self.assertTrue(torch.equal(first.delta, second.delta))
        self.assertEqual(first.run_id, second.run_id)

    def test_batch_archive(self) -> None:
        """Test batch generation, failures and the archive"""
        cfg = self.config(iterations=2)
        val_class = self.dataset.classes("val")[0]
        test_classes = self.dataset.classes("test")[:2]
        with temporaryDirectory() as folder:
            batch = attacks.attack_batch(
                self.model, self.dataset, cfg, test_classes + [val_class], 2, RngStream(6), folder
            )
            # the val split has too few classes for a 3-way episode
            self.assertEqual(len(batch.sets), 4)
            self.assertEqual([(c, r) for c, r, _ in batch.failures], [(val_class, 0), (val_class, 1)])
            self.assertEqual(len({adv.run_id for adv in batch.sets}), 4)
            loaded = attacks.archive_load(folder)
        expected = sorted(batch.sets, key=lambda adv: (adv.target_class, adv.run_id))
        self.assertEqual([adv.run_id for adv in loaded], [adv.run_id for adv in expected])
        for adv, orig in zip(loaded, expected, strict=True):
            self.assertTrue(torch.equal(adv.delta, orig.delta))
            self.assertTrue(torch.equal(adv.base, orig.base))
            self.assertEqual(adv.config, orig.config)
            self.assertEqual(adv.base_ids, orig.base_ids)
            self.assertEqual(adv.attacked_slots, orig.attacked_slots)

        again = attacks.attack_batch(self.model, self.dataset, cfg, test_classes, 2, RngStream(6))
        self.assertEqual([adv.run_id for adv in again.sets], [adv.run_id for adv in batch.sets])


if __name__ == "__main__":
    unittest.main()
