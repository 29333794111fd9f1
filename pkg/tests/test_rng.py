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

import numpy as np
import torch
from lsst.fssentry.rng import RngStream, stream_id_for


class RngTestCase(unittest.TestCase):
    """Tests for rng module"""

    def test_reproducible(self) -> None:
        """Test that identical seeds give identical sequences"""
        first = RngStream(5, 7)
        second = RngStream(5, 7)
        self.assertTrue(np.array_equal(first.uniform(0, 1, 10), second.uniform(0, 1, 10)))
        self.assertTrue(np.array_equal(first.integers(0, 100, 5), second.integers(0, 100, 5)))
        self.assertFalse(np.array_equal(RngStream(5, 8).uniform(0, 1, 10), RngStream(5, 7).uniform(0, 1, 10)))
        self.assertFalse(np.array_equal(RngStream(6, 7).uniform(0, 1, 10), RngStream(5, 7).uniform(0, 1, 10)))

    def test_fork(self) -> None:
        """Test that forks do not depend on parent draws"""
        parent = RngStream(11)
        child1 = parent.fork("attack", 3)
        parent.uniform(0, 1, 100)
        child2 = parent.fork("attack", 3)
        self.assertEqual(child1.stream_id, child2.stream_id)
        self.assertTrue(np.array_equal(child1.normal(1.0, 4), child2.normal(1.0, 4)))
        self.assertNotEqual(parent.fork("attack", 4).stream_id, child1.stream_id)
        self.assertEqual(stream_id_for("a", 1), stream_id_for("a", "1"))

    def test_draws(self) -> None:
        """Test ranges and shapes of draws"""
        rng = RngStream(3)
        choice = rng.choice(10, 10)
        self.assertEqual(sorted(choice.tolist()), list(range(10)))
        self.assertEqual(sorted(rng.permutation(6).tolist()), list(range(6)))
        values = rng.uniform(-0.5, 0.5, (100,))
        self.assertTrue(np.all(values >= -0.5) and np.all(values < 0.5))
        mask = rng.bernoulli(0.0, (3, 3))
        self.assertEqual(mask.dtype, np.bool_)
        self.assertFalse(mask.any())
        self.assertTrue(rng.bernoulli(1.0, 4).all())
        tensor = rng.torch_uniform((2, 3), 0.0, 1.0, torch.float64)
        self.assertEqual(tensor.dtype, torch.float64)
        self.assertEqual(tuple(tensor.shape), (2, 3))
        self.assertEqual(rng.torch_normal((5,), 0.1).dtype, torch.float32)


if __name__ == "__main__":
    unittest.main()
