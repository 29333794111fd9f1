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

import logging
from collections.abc import Callable
from typing import Any

import click
from lsst.daf.butler.cli.utils import ButlerCommand

from ... import script
from ..opt import (
    attack_classes_option,
    config_option,
    eps_option,
    eta_option,
    filter_option,
    iterations_option,
    kappa_option,
    log_level_option,
    method_option,
    model_option,
    n_attacked_option,
    output_option,
    runs_option,
    seed_option,
    set_option,
    stage_argument,
    statistic_option,
)


def _experiment_options(func: Callable) -> Callable:
    for option in (set_option, output_option, seed_option, config_option):
        func = option(func)
    return func


@click.group(short_help="Few-shot support set poisoning experiments.")
@log_level_option
def fssentry(log_level: str | None) -> None:
    """Commands for attacking few-shot support sets and detecting the attacks."""
    if log_level is not None:
        logging.basicConfig(level=log_level.upper())


@fssentry.command(short_help="Generate the synthetic dataset.", cls=ButlerCommand)
@_experiment_options
def gen_data(*args: Any, **kwargs: Any) -> None:
    """Generate, split and save the synthetic image dataset."""
    script.gen_data(*args, **kwargs)


@fssentry.command(short_help="Train the few-shot model.", cls=ButlerCommand)
@_experiment_options
@model_option
def train_fewshot(*args: Any, **kwargs: Any) -> None:
    """Train a few-shot model episodically and report its test accuracy."""
    script.train_fewshot(*args, **kwargs)


@fssentry.command(short_help="Train autoencoder filters.", cls=ButlerCommand)
@_experiment_options
def train_ae(*args: Any, **kwargs: Any) -> None:
    """Train the standard autoencoder and fine-tune its feature-preserving variants."""
    script.train_ae(*args, **kwargs)


@fssentry.command(short_help="Generate adversarial support sets.", cls=ButlerCommand)
@_experiment_options
@model_option
@method_option
@eps_option
@eta_option
@kappa_option
@iterations_option
@runs_option
@attack_classes_option
@n_attacked_option
def attack(*args: Any, **kwargs: Any) -> None:
    """Generate adversarial support sets for the test classes.

    Options given here replace the attack grid of the configuration with a
    single setting.
    """
    script.attack(*args, **kwargs)


@fssentry.command(short_help="Score support sets and compute AUROC.", cls=ButlerCommand)
@_experiment_options
@filter_option
@statistic_option
def detect(*args: Any, **kwargs: Any) -> None:
    """Compute detection statistics of adversarial and clean sets."""
    script.detect(*args, **kwargs)


@fssentry.command(short_help="Evaluate attack success rates.", cls=ButlerCommand)
@_experiment_options
def eval_asr(*args: Any, **kwargs: Any) -> None:
    """Evaluate attack success rates of the adversarial sets."""
    script.eval_asr(*args, **kwargs)


@fssentry.command(short_help="Write experiment report.", cls=ButlerCommand)
@_experiment_options
def report(*args: Any, **kwargs: Any) -> None:
    """Write AUROC, ASR and score tables with a YAML summary."""
    script.report(*args, **kwargs)


@fssentry.command(short_help="Run pipeline stages.", cls=ButlerCommand)
@_experiment_options
@stage_argument()
def run(*args: Any, **kwargs: Any) -> None:
    """Run STAGE and the stages it depends on, all stages by default."""
    script.run(*args, **kwargs)
