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
from unittest import mock

from lsst.fssentry.config import AttackStrength, ExperimentConfig, load_config
from lsst.fssentry.errors import ConfigError
from lsst.utils.tests import temporaryDirectory

_TOML = """
seed = 7

[data]
n_classes = 12
per_class = 20

[fewshot]
k_way = 3
n_shot = 4
episodes = 10

[attacks]
runs_per_class = 2
n_attacked = [1, 4]

[[attacks.strengths]]
label = "weak"
method = "pgd"
eps = 0.01

[[filters.filters]]
kind = "bitr"
bits = 4
"""


class ConfigTestCase(unittest.TestCase):
    """Tests for config module"""

    def test_defaults(self) -> None:
        """Test default configuration"""
        config = load_config(environ={})
        self.assertEqual(config.seed, 0)
        self.assertEqual(config.fewshot.k_way, 5)
        self.assertEqual(config.attacks.runs_per_class, 30)
        labels = [s.label for s in config.attacks.strengths]
        self.assertEqual(labels, ["eps3", "eps6", "eps12", "k0-eta25", "k0-eta50", "k0.1-eta50"])
        self.assertEqual([f.name for f in config.filters.filters], ["noise", "feats", "bitr6", "tvm", "fpa"])
        self.assertTrue(config.needs_autoencoder)
        self.assertEqual(config.digest, ExperimentConfig().digest)

    def test_precedence(self) -> None:
        """Test defaults, file, overrides and environment precedence"""
        with temporaryDirectory() as folder:
            path = os.path.join(folder, "experiment.toml")
            with open(path, "w") as stream:
                stream.write(_TOML)
            config = load_config(path, environ={})
            self.assertEqual(config.seed, 7)
            self.assertEqual(config.data.n_classes, 12)
            self.assertEqual(config.attacks.n_attacked, [1, 4])
            self.assertEqual([s.label for s in config.attacks.strengths], ["weak"])
            self.assertEqual(config.attacks.strengths[0].iterations, 75)
            self.assertFalse(config.needs_autoencoder)

            overrides = {"seed": "9", "fewshot.episodes": "20", "attacks.classes": "[1, 2]"}
            config = load_config(path, overrides, {})
            self.assertEqual((config.seed, config.fewshot.episodes), (9, 20))
            self.assertEqual(config.attacks.classes, [1, 2])

            config = load_config(path, {"seed": 9}, {"FSSENTRY_SEED": "11"})
            self.assertEqual(config.seed, 11)

        with mock.patch.dict(os.environ, {"FSSENTRY_SEED": "3"}):
            self.assertEqual(load_config().seed, 3)

    def test_digest(self) -> None:
        """Test that digest follows content but not the output location"""
        base = load_config(environ={})
        self.assertEqual(load_config(None, {"output.root": "/tmp/elsewhere"}, {}).digest, base.digest)
        self.assertNotEqual(load_config(None, {"seed": 1}, {}).digest, base.digest)
        self.assertNotEqual(load_config(None, {"fewshot.n_query": 30}, {}).digest, base.digest)

    def test_errors(self) -> None:
        """Test rejection of invalid configuration"""
        bad = [
            {"fewshot.epochs": 3},
            {"fewshot.head_kind": "matching"},
            {"data.n_classes": 4},
            {"attacks.n_attacked": "[6]"},
            {"detection.statistics": "[entropy]"},
            {"seed.value": 1},
            {"filters.filters": "[{kind: bitr, bits: 12}]"},
        ]
        for overrides in bad:
            with self.subTest(overrides=overrides):
                with self.assertRaises(ConfigError):
                    load_config(None, overrides, {})
        with self.assertRaises(ConfigError):
            load_config(environ={"FSSENTRY_SEED": "abc"})
        with temporaryDirectory() as folder:
            path = os.path.join(folder, "bad.toml")
            with open(path, "w") as stream:
                stream.write("seed = = 1\n")
            with self.assertRaises(ConfigError):
                load_config(path, environ={})
        strengths = [{"label": "a", "method": "pgd"}, {"label": "a", "method": "cw_sgd"}]
        with self.assertRaises(ConfigError):
            load_config(None, {"attacks.strengths": strengths}, {})

    def test_attack_config(self) -> None:
        """Test conversion of a grid cell to attack parameters"""
        config = load_config(None, {"fewshot.k_way": 3, "attacks.n_qt": 6, "attacks.const": 2.0}, {})
        strength = AttackStrength(label="cw", method="cw_sgd", eps=0.0, eta=25.0, kappa=0.0, iterations=150)
        cfg = strength.attack_config(config.attacks, config.fewshot, 2, config.seed)
        self.assertEqual((cfg.method, cfg.k_way, cfg.n_shot, cfg.n_qt), ("cw_sgd", 3, 5, 6))
        self.assertEqual((cfg.const, cfg.n_attacked, cfg.iterations), (2.0, 2, 150))


if __name__ == "__main__":
    unittest.main()
