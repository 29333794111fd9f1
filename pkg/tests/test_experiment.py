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

import yaml
from lsst.fssentry.config import ExperimentConfig, load_config
from lsst.fssentry.errors import ConfigError
from lsst.fssentry.experiment import STAGES, run_experiment
from lsst.fssentry.layout import ExperimentLayout
from lsst.utils.tests import temporaryDirectory

_TOML = """
seed = 3

[data]
n_classes = 12
per_class = 20
image_size = 8
split_ratios = [0.5, 0.25, 0.25]

[fewshot]
widths = [4, 8]
k_way = 3
n_shot = 3
n_query = 6
episodes = 4
val_every = 2
val_episodes = 2
eval_episodes = 2

[autoencoder]
widths = [4, 8]
epochs = 1
fpa_epochs = 1
batch_size = 16

[attacks]
runs_per_class = 1
n_attacked = [1]
n_qt = 3

[[attacks.strengths]]
label = "strong"
method = "pgd"
eps = 0.05
eta = 0.05
iterations = 2

[[filters.filters]]
kind = "bitr"
bits = 4

[[filters.filters]]
kind = "fpa"

[detection]
iforest_candidates = [2, 4]
iforest_subsample = 16
val_fraction = 0.3

[evaluation]
asr_episodes = 2
asr_queries = 3
"""

_TABLES = ("auroc.csv", "asr.csv", "scores.csv")


def _tiny_config(folder: str) -> ExperimentConfig:
    path = os.path.join(folder, "experiment.toml")
    with open(path, "w") as stream:
        stream.write(_TOML)
    return load_config(path, {"output.root": os.path.join(folder, "out")}, environ={})


class ExperimentTestCase(unittest.TestCase):
    """Tests for experiment module"""

    def test_unknown_stage(self) -> None:
        """Test that unknown stage names are rejected"""
        with temporaryDirectory() as folder:
            config = _tiny_config(folder)
            with self.assertRaises(ConfigError):
                run_experiment(config, ["data", "deploy"])

    def test_data_stage(self) -> None:
        """Test running only the data stage"""
        with temporaryDirectory() as folder:
            config = _tiny_config(folder)
            report = run_experiment(config, ["data"])
            self.assertIsNone(report.accuracy)
            self.assertEqual(report.dataset, "synthetic-stripes")
            self.assertEqual(report.config_digest, config.digest)
            layout = ExperimentLayout(config.output.root)
            self.assertTrue(layout.data_dir().join("manifest.txt").exists())
            self.assertFalse(layout.model_dir("fewshot").exists())

    def test_pipeline(self) -> None:
        """Test complete pipeline and its resumption"""
        with temporaryDirectory() as folder:
            config = _tiny_config(folder)
            report = run_experiment(config, STAGES)

            self.assertIsNotNone(report.accuracy)
            self.assertEqual(len(report.asr), 2)
            self.assertEqual(set(report.asr["scenario"]), {"fixed_supports", "new_supports"})
            self.assertEqual(list(report.asr["n_sets"]), [3, 3])

            self.assertEqual(len(report.auroc), 8)
            self.assertEqual(set(report.auroc["status"]), {"ok"})
            filters = set(zip(report.auroc["filter"], report.auroc["statistic"], strict=True))
            self.assertIn(("bitr4", "u_adv"), filters)
            self.assertIn(("fpa", "u_adv_prime"), filters)
            self.assertIn(("none", "odin"), filters)
            self.assertIn(("none", "iforest"), filters)
            for value, sweep in zip(report.auroc["auroc"], report.auroc["auroc_sweep"], strict=True):
                self.assertGreaterEqual(value, 0.0)
                self.assertLessEqual(value, 1.0)
                self.assertAlmostEqual(value, sweep, places=9)
            self.assertIsNotNone(report.self_similarity)
            self.assertEqual(report.failures, [])

            layout = ExperimentLayout(config.output.root)
            report_dir = layout.report_dir()
            for name in ("auroc.csv", "asr.csv", "scores.csv", "self_similarity.csv", "summary.yaml"):
                self.assertTrue(report_dir.join(name).exists(), name)
            auroc_csv = report_dir.join("auroc.csv").read()
            self.assertTrue(auroc_csv.startswith(b"model,dataset,attack,strength,"))
            self.assertIn(b"\r\n", auroc_csv)
            summary = yaml.safe_load(report_dir.join("summary.yaml").read())
            self.assertEqual(summary["config_digest"], config.digest)
            self.assertEqual(summary["n_auroc_cells"], 8)
            self.assertEqual(summary["missing_cells"], 0)
            self.assertTrue(layout.stage_marker(layout.attack_dir("strong", 1)).exists())
            self.assertTrue(layout.scores_path("strong", 1).exists())
            asr_csv = report_dir.join("asr.csv").read()
            scores_csv = report_dir.join("scores.csv").read()

            # second run loads every stage from disk
            again = run_experiment(config, STAGES)
            self.assertEqual(again.accuracy, report.accuracy)
            self.assertEqual(report_dir.join("auroc.csv").read(), auroc_csv)
            self.assertEqual(report_dir.join("asr.csv").read(), asr_csv)
            self.assertEqual(report_dir.join("scores.csv").read(), scores_csv)

    def test_fresh_roots(self) -> None:
        """Test that two fresh runs with one seed write identical tables"""
        tables = []
        for _ in range(2):
            with temporaryDirectory() as folder:
                config = _tiny_config(folder)
                run_experiment(config, STAGES)
                report_dir = ExperimentLayout(config.output.root).report_dir()
                tables.append({name: report_dir.join(name).read() for name in _TABLES})
        for name in _TABLES:
            self.assertEqual(tables[0][name], tables[1][name], name)


if __name__ == "__main__":
    unittest.main()
