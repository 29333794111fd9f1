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

"""Experiment pipeline: data, training, attack grid, detection grid and
report.

Every stage stores its artifacts under an `ExperimentLayout` and reuses
them when they exist, so an interrupted run resumes where it stopped.
"""

from __future__ import annotations

__all__ = [
    "STAGES",
    "EvalReport",
    "ExperimentContext",
    "detect_cell",
    "evaluate_asr",
    "prepare_attacks",
    "prepare_autoencoders",
    "prepare_data",
    "prepare_model",
    "prepare_scores",
    "report_write",
    "run_experiment",
    "summarize_auroc",
]

import copy
import dataclasses
import io
import logging
import math
from collections.abc import Iterable
from typing import Any

import numpy as np
import pandas as pd
import torch
import yaml
from lsst.resources import ResourcePath, ResourcePathExpression
from lsst.utils.timer import time_this

from .attacks import AdvSupportSet, archive_load, attack_batch
from .config import ExperimentConfig
from .data import Dataset, dataset_load, dataset_save, split_classes, synth_generate
from .detection import (
    aux_split,
    draw_context,
    embed,
    iforest_set_score,
    iforest_tune,
    odin_score,
    self_similarity_report,
    u_adv,
    u_adv_averaged,
    u_adv_prime,
)
from .errors import ConfigError, FsSentryError
from .evaluation import asr, auroc, auroc_sweep
from .filters import AeModel, ae_load, ae_save, build_ae, finetune_fpa, finetune_fpa_prime, train_ae_standard
from .layout import ExperimentLayout
from .models import FewShotModel, build_model, eval_accuracy, model_load, model_save, train_fewshot
from .optim import OptimizerState
from .rng import RngStream

_LOG = logging.getLogger(__name__)

STAGES = ("data", "fewshot", "autoencoder", "attacks", "asr", "detect", "report")

SCORE_COLUMNS = [
    "model",
    "dataset",
    "attack",
    "strength",
    "n_attacked",
    "filter",
    "statistic",
    "set_id",
    "class_id",
    "is_adversarial",
    "value",
    "direction",
]
AUROC_COLUMNS = [
    "model",
    "dataset",
    "attack",
    "strength",
    "n_attacked",
    "filter",
    "statistic",
    "auroc",
    "auroc_sweep",
    "n_clean",
    "n_adversarial",
    "status",
    "config_digest",
    "seed",
]
ASR_COLUMNS = [
    "model",
    "dataset",
    "attack",
    "strength",
    "n_attacked",
    "scenario",
    "mean",
    "sd",
    "n_sets",
    "config_digest",
    "seed",
]
_FILTER_STATISTICS = ("u_adv", "u_adv_avg", "u_adv_prime")
_BASELINE_FILTER = "none"


@dataclasses.dataclass
class EvalReport:
    """Results of an experiment."""

    config_digest: str
    seed: int
    model: str
    dataset: str
    accuracy: tuple[float, float] | None = None
    auroc: pd.DataFrame = dataclasses.field(default_factory=lambda: pd.DataFrame(columns=AUROC_COLUMNS))
    asr: pd.DataFrame = dataclasses.field(default_factory=lambda: pd.DataFrame(columns=ASR_COLUMNS))
    scores: pd.DataFrame = dataclasses.field(default_factory=lambda: pd.DataFrame(columns=SCORE_COLUMNS))
    self_similarity: pd.DataFrame | None = None
    failures: list[dict[str, Any]] = dataclasses.field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        """Return the structured summary written next to the tables."""
        missing = int((self.auroc["status"] != "ok").sum()) if len(self.auroc) else 0
        summary: dict[str, Any] = {
            "config_digest": self.config_digest,
            "seed": self.seed,
            "model": self.model,
            "dataset": self.dataset,
            "n_auroc_cells": len(self.auroc),
            "missing_cells": missing,
            "failures": self.failures,
        }
        if self.accuracy is not None:
            summary["accuracy"] = {"mean": self.accuracy[0], "ci95": self.accuracy[1]}
        if self.self_similarity is not None:
            summary["self_similarity"] = self.self_similarity.to_dict(orient="records")
        return summary


@dataclasses.dataclass
class ExperimentContext:
    """Objects shared by the stages of one experiment."""

    config: ExperimentConfig
    layout: ExperimentLayout
    rng: RngStream

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> ExperimentContext:
        """Create context and switch torch to deterministic single-threaded
        execution.
        """
        _deterministic()
        return cls(config, ExperimentLayout(config.output.root), RngStream(config.seed))

    def new_report(self, dataset: Dataset | None = None) -> EvalReport:
        name = "synthetic"
        if dataset is not None:
            name = str(dataset.descriptor.get("generator", "external"))
        return EvalReport(self.config.digest, self.config.seed, self.config.fewshot.head_kind, name)


def _deterministic() -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


def _write_marker(marker: ResourcePath, content: dict[str, Any]) -> None:
    marker.write(yaml.safe_dump(content, sort_keys=True).encode(), overwrite=True)


def prepare_data(ctx: ExperimentContext) -> Dataset:
    """Generate, split and save the dataset unless it exists."""
    data_dir = ctx.layout.data_dir()
    if data_dir.join("manifest.txt").exists():
        _LOG.info("Loading dataset from %s", data_dir)
        return dataset_load(data_dir)
    cfg = ctx.config.data
    dataset = synth_generate(cfg.n_classes, cfg.per_class, ctx.config.seed, cfg.image_size)
    split_classes(dataset, cfg.split_ratios, ctx.config.seed)
    dataset_save(dataset, data_dir)
    return dataset


def prepare_model(ctx: ExperimentContext, dataset: Dataset) -> FewShotModel:
    """Train and save the few-shot model unless a checkpoint exists."""
    model_dir = ctx.layout.model_dir("fewshot")
    if model_dir.join("manifest.yaml").exists():
        _LOG.info("Loading few-shot model from %s", model_dir)
        return model_load(model_dir)
    cfg = ctx.config.fewshot
    image_shape = dataset.image_shape
    model = build_model(
        cfg.head_kind,
        ctx.rng.fork("fewshot-init"),
        cfg.widths,
        cfg.k_way,
        cfg.n_shot,
        image_shape=image_shape,
    )
    opt = OptimizerState.for_module(model, kind="adam", lr=cfg.lr)
    log = train_fewshot(
        model,
        dataset,
        cfg.episodes,
        opt,
        ctx.rng.fork("fewshot-train"),
        cfg.n_query,
        cfg.val_every,
        cfg.val_episodes,
    )
    training = {
        "episodes": cfg.episodes,
        "lr": cfg.lr,
        "mean_loss": log.mean_loss,
        "best_episode": log.best_episode,
        "best_val_accuracy": log.best_accuracy,
    }
    model_save(model, model_dir, training)
    return model


def prepare_autoencoders(ctx: ExperimentContext, dataset: Dataset, model: FewShotModel) -> dict[str, AeModel]:
    """Train the autoencoders needed by the filter grid.

    Returns
    -------
    autoencoders : `dict` [ `str`, `AeModel` ]
        Autoencoders keyed by filter kind ("fpa", "fpa_prime").
    """
    kinds = {spec.kind for spec in ctx.config.filters.filters} & {"fpa", "fpa_prime"}
    if not kinds:
        return {}
    cfg = ctx.config.autoencoder

    def optimizer(ae: AeModel, lr: float) -> OptimizerState:
        return OptimizerState.for_module(
            ae, kind="adam", lr=lr, weight_decay=cfg.weight_decay, step_size=cfg.step_size, gamma=cfg.gamma
        )

    def cached(name: str, train: Any) -> AeModel:
        folder = ctx.layout.model_dir(name)
        if folder.join("manifest.yaml").exists():
            return ae_load(folder)
        ae = train()
        ae_save(ae, folder)
        return ae

    def standard() -> AeModel:
        ae = build_ae(ctx.rng.fork("ae-init"), cfg.widths, dataset.image_shape)
        rng = ctx.rng.fork("ae-standard")
        train_ae_standard(ae, dataset, optimizer(ae, cfg.lr), cfg.epochs, rng, cfg.batch_size)
        return ae

    base = cached("ae_standard", standard)
    result = {}
    if "fpa" in kinds:

        def fpa() -> AeModel:
            ae = copy.deepcopy(base)
            rng = ctx.rng.fork("ae-fpa")
            opt = optimizer(ae, cfg.fpa_lr)
            finetune_fpa(ae, model.encoder, dataset, opt, cfg.fpa_epochs, rng, cfg.batch_size)
            return ae

        result["fpa"] = cached("ae_fpa", fpa)
    if "fpa_prime" in kinds:

        def fpa_prime() -> AeModel:
            ae = copy.deepcopy(base)
            rng = ctx.rng.fork("ae-fpa-prime")
            opt = optimizer(ae, cfg.fpa_lr)
            finetune_fpa_prime(ae, model, dataset, opt, cfg.fpa_epochs, rng, cfg.batch_size)
            return ae

        result["fpa_prime"] = cached("ae_fpa_prime", fpa_prime)
    return result


def _target_classes(ctx: ExperimentContext, dataset: Dataset) -> list[int]:
    test_classes = dataset.classes("test")
    classes = ctx.config.attacks.classes
    if classes is None:
        return test_classes
    outside = sorted(set(classes) - set(test_classes))
    if outside:
        raise ConfigError(f"Attack classes {outside} are not in the test split")
    return list(classes)


def _cells(ctx: ExperimentContext) -> Iterable[tuple[Any, int]]:
    for strength in ctx.config.attacks.strengths:
        for n_attacked in ctx.config.attacks.n_attacked:
            yield strength, n_attacked


def prepare_attacks(
    ctx: ExperimentContext, dataset: Dataset, model: FewShotModel, report: EvalReport
) -> dict[tuple[str, int], list[AdvSupportSet]]:
    """Generate or load the adversarial sets of every attack grid cell.

    Returns
    -------
    sets : `dict`
        Adversarial sets sorted by class and run ID, keyed by strength label
        and number of attacked slots.
    """
    classes = _target_classes(ctx, dataset)
    result = {}
    for strength, n_attacked in _cells(ctx):
        folder = ctx.layout.attack_dir(strength.label, n_attacked)
        marker = ctx.layout.stage_marker(folder)
        if marker.exists():
            sets = archive_load(folder)
            failures = yaml.safe_load(marker.read()).get("failures", [])
        else:
            cfg = strength.attack_config(ctx.config.attacks, ctx.config.fewshot, n_attacked, ctx.config.seed)
            batch = attack_batch(
                model,
                dataset,
                cfg,
                classes,
                ctx.config.attacks.runs_per_class,
                ctx.rng.fork("attacks", strength.label, n_attacked),
                folder,
            )
            sets = batch.sets
            failures = [{"class_id": c, "run": r, "error": msg} for c, r, msg in batch.failures]
            _write_marker(marker, {"n_sets": len(sets), "failures": failures})
        for failure in failures:
            report.failures.append({"stage": "attacks", "strength": strength.label, **failure})
        result[(strength.label, n_attacked)] = sorted(sets, key=lambda adv: (adv.target_class, adv.run_id))
    return result


def evaluate_asr(
    ctx: ExperimentContext,
    dataset: Dataset,
    model: FewShotModel,
    attacks: dict[tuple[str, int], list[AdvSupportSet]],
    report: EvalReport,
) -> pd.DataFrame:
    """Compute ASR rows for every attack cell and scenario."""
    rows = []
    cfg = ctx.config.evaluation
    for strength, n_attacked in _cells(ctx):
        sets = attacks.get((strength.label, n_attacked), [])
        for scenario in cfg.scenarios:
            means = [
                asr(
                    model,
                    adv,
                    dataset,
                    scenario,
                    cfg.asr_episodes,
                    ctx.rng.fork("asr", strength.label, n_attacked, scenario, adv.run_id),
                    cfg.asr_queries,
                )[0]
                for adv in sets
            ]
            rows.append(
                {
                    "model": report.model,
                    "dataset": report.dataset,
                    "attack": strength.method,
                    "strength": strength.label,
                    "n_attacked": n_attacked,
                    "scenario": scenario,
                    "mean": float(np.mean(means)) if means else math.nan,
                    "sd": float(np.std(means)) if means else math.nan,
                    "n_sets": len(means),
                    "config_digest": report.config_digest,
                    "seed": report.seed,
                }
            )
    return pd.DataFrame(rows, columns=ASR_COLUMNS)


def _clean_support(
    ctx: ExperimentContext, dataset: Dataset, adv: AdvSupportSet, pair_rng: RngStream
) -> torch.Tensor:
    ids = pair_rng.fork("clean").choice(dataset.n_samples(adv.target_class), adv.config.n_shot)
    return dataset.images[adv.target_class][ids.tolist()]


def detect_cell(
    ctx: ExperimentContext,
    dataset: Dataset,
    model: FewShotModel,
    autoencoders: dict[str, AeModel],
    strength: Any,
    n_attacked: int,
    sets: list[AdvSupportSet],
    train_features: np.ndarray | None,
    report: EvalReport,
) -> pd.DataFrame:
    """Score every adversarial set of a cell and its paired clean set.

    Each adversarial set is paired with a clean support of the same class
    and both are scored against the same context support and split.

    Returns
    -------
    scores : `pandas.DataFrame`
        One row per set, filter and statistic.
    """
    cfg = ctx.config
    statistics = cfg.detection.statistics
    k_way, n_shot = cfg.fewshot.k_way, cfg.fewshot.n_shot
    rows = []

    def row(filter_name: str, statistic: str, set_id: str, class_id: int, is_adv: bool, score: Any) -> None:
        rows.append(
            {
                "model": report.model,
                "dataset": report.dataset,
                "attack": strength.method,
                "strength": strength.label,
                "n_attacked": n_attacked,
                "filter": filter_name,
                "statistic": statistic,
                "set_id": set_id,
                "class_id": class_id,
                "is_adversarial": is_adv,
                "value": score.value,
                "direction": score.direction,
            }
        )

    pairs = []
    for adv in sets:
        pair_rng = ctx.rng.fork("detect", strength.label, n_attacked, adv.run_id)
        clean = _clean_support(ctx, dataset, adv, pair_rng)
        context = draw_context(dataset, adv.target_class, k_way, n_shot, pair_rng.fork("context"))
        pairs.append((adv, clean, context, pair_rng))

    for spec in cfg.filters.filters:
        ae = ae_load(spec.ae_path) if spec.ae_path else autoencoders.get(spec.kind)
        for adv, clean, context, pair_rng in pairs:
            for is_adv, support in ((False, clean), (True, adv.adversarial)):
                filter_rng = pair_rng.fork("filter", spec.name, int(is_adv))
                if "u_adv" in statistics:
                    split = aux_split(support, pair_rng.fork("split"))
                    score = u_adv(model, spec, context, split, filter_rng.fork("u_adv"), ae)
                    row(spec.name, "u_adv", adv.run_id, adv.target_class, is_adv, score)
                if "u_adv_avg" in statistics:
                    score = u_adv_averaged(model, spec, context, support, filter_rng.fork("u_adv_avg"), ae)
                    row(spec.name, "u_adv_avg", adv.run_id, adv.target_class, is_adv, score)
                if "u_adv_prime" in statistics:
                    score = u_adv_prime(model, spec, context, support, filter_rng.fork("u_adv_prime"), ae)
                    row(spec.name, "u_adv_prime", adv.run_id, adv.target_class, is_adv, score)

    if "odin" in statistics:
        for adv, clean, context, pair_rng in pairs:
            for is_adv, support in ((False, clean), (True, adv.adversarial)):
                score = odin_score(model, context, support, cfg.detection.odin, pair_rng.fork("split"))
                row(_BASELINE_FILTER, "odin", adv.run_id, adv.target_class, is_adv, score)

    if "iforest" in statistics and train_features is not None and pairs:
        n_val = math.ceil(cfg.detection.val_fraction * len(pairs)) if len(pairs) > 1 else 0
        val_pairs, test_pairs = pairs[:n_val], pairs[n_val:]
        forest, n_trees = iforest_tune(
            model,
            train_features,
            [clean for _, clean, _, _ in val_pairs],
            [adv.adversarial for adv, _, _, _ in val_pairs],
            cfg.detection.iforest_candidates,
            cfg.detection.iforest_subsample,
            ctx.rng.fork("iforest", strength.label, n_attacked),
        )
        _LOG.info("cell %s/n%d: isolation forest uses %d trees", strength.label, n_attacked, n_trees)
        for adv, clean, _, _ in test_pairs:
            for is_adv, support in ((False, clean), (True, adv.adversarial)):
                score = iforest_set_score(forest, model, support)
                row(_BASELINE_FILTER, "iforest", adv.run_id, adv.target_class, is_adv, score)

    return pd.DataFrame(rows, columns=SCORE_COLUMNS)


def _read_csv(uri: ResourcePath) -> pd.DataFrame:
    return pd.read_csv(io.BytesIO(uri.read()), dtype={"set_id": str, "strength": str})


def _write_csv(frame: pd.DataFrame, uri: ResourcePath) -> None:
    uri.write(frame.to_csv(index=False, lineterminator="\r\n").encode(), overwrite=True)


def prepare_scores(
    ctx: ExperimentContext,
    dataset: Dataset,
    model: FewShotModel,
    autoencoders: dict[str, AeModel],
    attacks: dict[tuple[str, int], list[AdvSupportSet]],
    report: EvalReport,
) -> pd.DataFrame:
    """Score all cells, reusing score tables stored by earlier runs.

    A cell whose scoring fails is logged and recorded in the report, its
    AUROC rows are marked missing.
    """
    train_features = None
    if "iforest" in ctx.config.detection.statistics:
        train_features = embed(model, dataset.split_images("train"))
    frames = []
    with time_this(log=_LOG, msg="Detection grid", level=logging.INFO):
        for strength, n_attacked in _cells(ctx):
            path = ctx.layout.scores_path(strength.label, n_attacked)
            if path.exists():
                frames.append(_read_csv(path))
                continue
            sets = attacks.get((strength.label, n_attacked), [])
            try:
                frame = detect_cell(
                    ctx, dataset, model, autoencoders, strength, n_attacked, sets, train_features, report
                )
            except FsSentryError as exc:
                _LOG.warning("Detection for %s/n%d failed: %s", strength.label, n_attacked, exc)
                failure = {"stage": "detect", "strength": strength.label, "n_attacked": n_attacked}
                report.failures.append({**failure, "error": str(exc)})
                continue
            _write_csv(frame, path)
            frames.append(_read_csv(path))
    if not frames:
        return pd.DataFrame(columns=SCORE_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def _expected_cells(ctx: ExperimentContext) -> list[tuple[str, str, int, str, str]]:
    cells = []
    statistics = ctx.config.detection.statistics
    for strength, n_attacked in _cells(ctx):
        for spec in ctx.config.filters.filters:
            for statistic in _FILTER_STATISTICS:
                if statistic in statistics:
                    cells.append((strength.method, strength.label, n_attacked, spec.name, statistic))
        for statistic in ("odin", "iforest"):
            if statistic in statistics:
                cells.append((strength.method, strength.label, n_attacked, _BASELINE_FILTER, statistic))
    return cells


def summarize_auroc(ctx: ExperimentContext, scores: pd.DataFrame, report: EvalReport) -> pd.DataFrame:
    """Compute the AUROC of every expected cell from per-set scores."""
    rows = []
    keys = ["attack", "strength", "n_attacked", "filter", "statistic"]
    groups = {key: frame for key, frame in scores.groupby(keys, sort=False)}
    for cell in _expected_cells(ctx):
        frame = groups.get(cell)
        row: dict[str, Any] = dict(zip(keys, cell, strict=True))
        row.update(model=report.model, dataset=report.dataset)
        row.update(config_digest=report.config_digest, seed=report.seed)
        if frame is None:
            row.update(auroc=math.nan, auroc_sweep=math.nan, n_clean=0, n_adversarial=0, status="missing")
            rows.append(row)
            continue
        is_adv = frame["is_adversarial"].astype(str) == "True"
        clean = frame.loc[~is_adv, "value"].astype(float).tolist()
        adv = frame.loc[is_adv, "value"].astype(float).tolist()
        direction = frame["direction"].iloc[0]
        if clean and adv:
            row.update(auroc=auroc(clean, adv, direction), auroc_sweep=auroc_sweep(clean, adv, direction))
            row.update(status="ok")
        else:
            row.update(auroc=math.nan, auroc_sweep=math.nan, status="missing")
        row.update(n_clean=len(clean), n_adversarial=len(adv))
        rows.append(row)
    return pd.DataFrame(rows, columns=AUROC_COLUMNS)


def _self_similarity(
    ctx: ExperimentContext,
    dataset: Dataset,
    model: FewShotModel,
    attacks: dict[tuple[str, int], list[AdvSupportSet]],
) -> pd.DataFrame:
    n_attacked = max(ctx.config.attacks.n_attacked)
    strengths = ctx.config.attacks.strengths
    adv_sets = {
        s.label: [(adv.target_class, adv.adversarial) for adv in attacks.get((s.label, n_attacked), [])]
        for s in strengths
    }
    first = strengths[0]
    clean_sets = []
    for adv in attacks.get((first.label, n_attacked), []):
        pair_rng = ctx.rng.fork("detect", first.label, n_attacked, adv.run_id)
        clean_sets.append((adv.target_class, _clean_support(ctx, dataset, adv, pair_rng)))
    return self_similarity_report(
        model, dataset, clean_sets, adv_sets, ctx.rng.fork("self-similarity"), ctx.config.fewshot.k_way
    )


def run_experiment(config: ExperimentConfig, stages: Iterable[str] = STAGES) -> EvalReport:
    """Run the pipeline up to and including the requested stages.

    Parameters
    ----------
    config : `ExperimentConfig`
        Experiment configuration.
    stages : `~collections.abc.Iterable` [ `str` ]
        Stages to run, earlier stages they depend on are loaded from disk
        or run as needed.

    Returns
    -------
    report : `EvalReport`
        Results of the requested stages.
    """
    stages = set(stages)
    unknown = stages - set(STAGES)
    if unknown:
        raise ConfigError(f"Unknown stages {sorted(unknown)}, expected some of {STAGES}")
    ctx = ExperimentContext.from_config(config)
    last = max(STAGES.index(stage) for stage in stages)
    dataset = prepare_data(ctx)
    report = ctx.new_report(dataset)
    if last < STAGES.index("fewshot"):
        return report
    model = prepare_model(ctx, dataset)
    model.eval()
    if "fewshot" in stages or "report" in stages:
        report.accuracy = eval_accuracy(
            model,
            dataset,
            "test",
            config.fewshot.eval_episodes,
            ctx.rng.fork("accuracy"),
            config.fewshot.k_way,
            config.fewshot.n_shot,
            config.fewshot.n_query,
        )
        _LOG.info("Test accuracy %.4f +- %.4f", *report.accuracy)
    if last < STAGES.index("autoencoder"):
        return report
    autoencoders = {}
    if "autoencoder" in stages or last >= STAGES.index("detect"):
        autoencoders = prepare_autoencoders(ctx, dataset, model)
    if last < STAGES.index("attacks"):
        return report
    attacks = prepare_attacks(ctx, dataset, model, report)
    if "asr" in stages or "report" in stages:
        report.asr = evaluate_asr(ctx, dataset, model, attacks, report)
    if last < STAGES.index("detect"):
        return report
    report.scores = prepare_scores(ctx, dataset, model, autoencoders, attacks, report)
    report.auroc = summarize_auroc(ctx, report.scores, report)
    if "report" in stages:
        if config.evaluation.self_similarity:
            report.self_similarity = _self_similarity(ctx, dataset, model, attacks)
        report_write(report, ctx.layout.report_dir())
    return report


def report_write(report: EvalReport, root: ResourcePathExpression) -> None:
    """Write report tables as CSV and a YAML summary.

    Files are ``auroc.csv``, ``asr.csv``, ``scores.csv``, optionally
    ``self_similarity.csv``, and ``summary.yaml``.
    """
    root_uri = ResourcePath(root, forceDirectory=True)
    root_uri.mkdir()
    _write_csv(report.auroc, root_uri.join("auroc.csv"))
    _write_csv(report.asr, root_uri.join("asr.csv"))
    _write_csv(report.scores, root_uri.join("scores.csv"))
    if report.self_similarity is not None:
        _write_csv(report.self_similarity, root_uri.join("self_similarity.csv"))
    summary = yaml.safe_dump(report.summary(), sort_keys=True)
    root_uri.join("summary.yaml").write(summary.encode(), overwrite=True)
    _LOG.info("Report written to %s", root_uri)
