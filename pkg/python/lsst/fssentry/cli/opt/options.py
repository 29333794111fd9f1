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

from __future__ import annotations

__all__ = [
    "attack_classes_option",
    "config_option",
    "eps_option",
    "eta_option",
    "filter_option",
    "iterations_option",
    "kappa_option",
    "log_level_option",
    "method_option",
    "model_option",
    "n_attacked_option",
    "output_option",
    "runs_option",
    "seed_option",
    "set_option",
    "statistic_option",
]

from fractions import Fraction
from typing import Any

import click
from lsst.daf.butler.cli.utils import split_kv

from ...detection import STATISTICS
from ...filters import FILTER_KINDS


def _parse_fraction(context: click.Context, param: click.Parameter, value: str | None) -> float | None:
    """Accept values like "0.05" or "12/255"."""
    if value is None:
        return None
    try:
        return float(Fraction(value))
    except (ValueError, ZeroDivisionError):
        raise click.BadParameter(f"{value!r} is not a number or fraction") from None


_HEAD_ALIASES = {"proto": "prototypical"}


def _parse_head(context: click.Context, param: click.Parameter, value: str | None) -> str | None:
    return _HEAD_ALIASES.get(value, value) if value is not None else None


def _parse_classes(context: click.Context, param: click.Parameter, value: str | None) -> Any:
    if value is None:
        return None
    if value == "all":
        return "all"
    try:
        return [int(item) for item in value.split(",")]
    except ValueError:
        raise click.BadParameter(f"{value!r} is not 'all' or a comma-separated list of class ids") from None


config_option = click.option(
    "--config",
    "config_file",
    type=click.Path(exists=True, dir_okay=False),
    help="Experiment configuration file in TOML format.",
    metavar="PATH",
    default=None,
)

seed_option = click.option(
    "--seed", type=int, help="Master seed, FSSENTRY_SEED overrides it.", default=None
)

output_option = click.option(
    "--output",
    type=click.Path(file_okay=False, writable=True),
    help="Experiment folder, default: $FSSENTRY_OUTPUT_DIR.",
    metavar="PATH",
    default=None,
)

set_option = click.option(
    "--set",
    "overrides",
    callback=split_kv,
    help="Override a configuration value, e.g. fewshot.episodes=500.",
    metavar="KEY=VALUE",
    multiple=True,
)

log_level_option = click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    help="Logging level of the standalone command.",
    default=None,
)

model_option = click.option(
    "--model",
    type=click.Choice(["prototypical", "proto", "relation"]),
    callback=_parse_head,
    help="Few-shot head kind, \"proto\" is short for \"prototypical\".",
    default=None,
)

method_option = click.option(
    "--method", type=click.Choice(["pgd", "cw_sgd"]), help="Attack method.", default=None
)

eps_option = click.option(
    "--eps", callback=_parse_fraction, help="Perturbation budget, e.g. 12/255.", default=None
)

eta_option = click.option("--eta", callback=_parse_fraction, help="Attack step size.", default=None)

kappa_option = click.option("--kappa", type=float, help="CW-SGD margin.", default=None)

iterations_option = click.option("--iters", "iterations", type=int, help="Attack iterations.", default=None)

runs_option = click.option("--runs", type=int, help="Attack runs per class.", default=None)

attack_classes_option = click.option(
    "--classes",
    callback=_parse_classes,
    help="Target classes, 'all' or a comma-separated list of class ids.",
    default=None,
)

n_attacked_option = click.option(
    "--n-attacked",
    type=int,
    multiple=True,
    help="Number of attacked support samples, may be repeated.",
)

filter_option = click.option(
    "--filter",
    "filters",
    type=click.Choice(FILTER_KINDS),
    multiple=True,
    help="Filter kind, may be repeated; default filters come from configuration.",
)

statistic_option = click.option(
    "--statistic",
    "statistics",
    type=click.Choice(STATISTICS),
    multiple=True,
    help="Detection statistic, may be repeated.",
)
