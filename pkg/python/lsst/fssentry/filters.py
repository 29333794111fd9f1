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

"""Filtering functions applied to auxiliary support sets.

Every filter maps a batch of images of shape ``(n, C, H, W)`` with values
in ``[0, 1]`` to a batch of the same shape and domain.
"""

from __future__ import annotations

__all__ = [
    "FILTER_KINDS",
    "AeModel",
    "AeTrainingLog",
    "FilterSpec",
    "ae_load",
    "ae_save",
    "apply_filter",
    "build_ae",
    "feature_error",
    "filter_bitr",
    "filter_feats_median",
    "filter_noise",
    "filter_tvm",
    "finetune_fpa",
    "finetune_fpa_prime",
    "fpa_loss",
    "fpa_prime_loss",
    "reconstruction_rmse",
    "train_ae_standard",
    "tv_objective",
    "tvm_solve",
]

import copy
import dataclasses
import logging
import math
from collections.abc import Callable, Sequence
from typing import Any, Literal

import torch
import torch.nn.functional as F
from lsst.resources import ResourcePathExpression
from lsst.utils.timer import time_this
from pydantic import BaseModel, ConfigDict, Field
from torch import nn

from . import checkpoint
from .data import Dataset, sample_episode
from .errors import ConfigError, DivergenceError, NumericError
from .models import FewShotModel
from .network import Network, autoencoder_specs, loss_and_grad_params, mse
from .optim import OptimizerState, optimizer_step
from .rng import RngStream

_LOG = logging.getLogger(__name__)

FILTER_KINDS = ("identity", "noise", "feats", "bitr", "tvm", "fpa", "fpa_prime")

_TV_SMOOTHING = 1e-6
_FPA_IMAGE_WEIGHT = 0.01


class FilterSpec(BaseModel):
    """Filter kind and its parameters."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["identity", "noise", "feats", "bitr", "tvm", "fpa", "fpa_prime"]
    bits: int = Field(default=6, ge=1, le=8)
    keep_prob: float = Field(default=0.5, gt=0.0, le=1.0)
    tv_weight: float = Field(default=0.03, ge=0.0)
    tv_iterations: int = Field(default=50, ge=0)
    tv_step: float = Field(default=0.1, gt=0.0)
    ae_path: str | None = None
    """Autoencoder checkpoint for the fpa kinds."""

    @property
    def name(self) -> str:
        """Short name used in reports."""
        return f"bitr{self.bits}" if self.kind == "bitr" else self.kind


def filter_noise(images: torch.Tensor, rng: RngStream) -> torch.Tensor:
    """Add Gaussian noise with the per-channel variance of the batch.

    Parameters
    ----------
    images : `torch.Tensor`
        Non-empty batch.
    rng : `RngStream`
        Source of randomness.

    Returns
    -------
    filtered : `torch.Tensor`
        Noisy images clipped to ``[0, 1]``.
    """
    std = images.var(dim=(0, 2, 3), unbiased=False).sqrt()
    noise = rng.torch_normal(images.shape, 1.0, images.dtype) * std[None, :, None, None]
    return torch.clamp(images + noise, 0.0, 1.0)


def filter_feats_median(images: torch.Tensor) -> torch.Tensor:
    """Apply the 2x2 median filter.

    Pixel ``(i, j)`` becomes the mean of the two middle values of the
    window ``{(i, j), (i, j+1), (i+1, j), (i+1, j+1)}``; bottom and right
    edges are replicated.
    """
    padded = F.pad(images, (0, 1, 0, 1), mode="replicate")
    window = torch.stack(
        [padded[..., :-1, :-1], padded[..., :-1, 1:], padded[..., 1:, :-1], padded[..., 1:, 1:]], dim=-1
    )
    ordered = torch.sort(window, dim=-1).values
    return (ordered[..., 1] + ordered[..., 2]) / 2


def filter_bitr(images: torch.Tensor, bits: int) -> torch.Tensor:
    """Reduce every channel value to ``bits`` bits of precision."""
    if not 1 <= bits <= 8:
        raise ConfigError(f"bits must be in [1, 8], got {bits}")
    levels = 2**bits - 1
    return torch.floor(images * levels + 0.5) / levels


def tv_objective(z: torch.Tensor, images: torch.Tensor, mask: torch.Tensor, weight: float) -> torch.Tensor:
    """Masked data term plus smoothed anisotropic total variation."""
    data = (mask * (z - images) ** 2).sum()
    dx = z[..., :, 1:] - z[..., :, :-1]
    dy = z[..., 1:, :] - z[..., :-1, :]
    tv = torch.sqrt(dx**2 + _TV_SMOOTHING).sum() + torch.sqrt(dy**2 + _TV_SMOOTHING).sum()
    # constant offset so a constant image has zero objective
    offset = math.sqrt(_TV_SMOOTHING) * (dx.numel() + dy.numel())
    return data + weight * (tv - offset)


def tvm_solve(
    images: torch.Tensor, mask: torch.Tensor, weight: float, iterations: int, step: float
) -> tuple[torch.Tensor, list[float]]:
    """Minimize `tv_objective` by gradient descent from the input.

    Each step halves the step size until the objective does not increase,
    a step that cannot be made non-increasing ends the solve.

    Returns
    -------
    solution : `torch.Tensor`
        Unclipped solution.
    objectives : `list` [ `float` ]
        Objective value at the start and after every accepted step.

    Raises
    ------
    NumericError
        Raised if the objective or gradient is not finite.
    """
    z = images.detach().clone()
    with torch.enable_grad():
        current = z.requires_grad_(True)
        value = tv_objective(current, images, mask, weight)
        objectives = [float(value)]
        for _ in range(iterations):
            (grad,) = torch.autograd.grad(value, [current])
            if not (torch.isfinite(value) and torch.isfinite(grad).all()):
                raise NumericError("non-finite value in total variation solver")
            trial_step = step
            accepted = False
            for _ in range(30):
                trial = (current.detach() - trial_step * grad).requires_grad_(True)
                trial_value = tv_objective(trial, images, mask, weight)
                if float(trial_value) <= objectives[-1]:
                    accepted = True
                    break
                trial_step /= 2
            if not accepted:
                break
            current, value = trial, trial_value
            objectives.append(float(value))
    return current.detach(), objectives


def filter_tvm(images: torch.Tensor, spec: FilterSpec, rng: RngStream) -> torch.Tensor:
    """Reconstruct images from a random subset of pixels with total
    variation regularization.

    The keep mask is drawn per pixel and shared by the channels.
    """
    shape = (images.shape[0], 1) + tuple(images.shape[2:])
    mask = torch.from_numpy(rng.bernoulli(spec.keep_prob, shape)).to(images.dtype)
    solution, _ = tvm_solve(images, mask, spec.tv_weight, spec.tv_iterations, spec.tv_step)
    return torch.clamp(solution, 0.0, 1.0)


class AeModel(nn.Module):
    """Autoencoder made of an encoder and a decoder `Network`.

    Parameters
    ----------
    encoder : `Network`
        Encoder network.
    decoder : `Network`
        Decoder network, its output shape equals the encoder input shape.
    stage : `str`
        Training stage, one of "standard", "fpa", "fpa_prime".
    """

    def __init__(self, encoder: Network, decoder: Network, stage: str = "standard"):
        super().__init__()
        if decoder.output_shape != encoder.input_shape:
            raise ConfigError(f"decoder output {decoder.output_shape} != input {encoder.input_shape}")
        self.encoder = encoder
        self.decoder = decoder
        self.stage = stage

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(images))

    def manifest(self) -> dict[str, Any]:
        return {
            "kind": "autoencoder",
            "stage": self.stage,
            "encoder": self.encoder.manifest(),
            "decoder": self.decoder.manifest(),
        }


def build_ae(
    rng: RngStream, widths: Sequence[int] = (16, 32, 64), image_shape: Sequence[int] = (3, 16, 16)
) -> AeModel:
    """Create a freshly initialized mirrored autoencoder."""
    encoder_layers, decoder_layers = autoencoder_specs(widths, image_shape[0])
    encoder = Network(encoder_layers, image_shape, "encoder", rng.fork("encoder"))
    decoder = Network(decoder_layers, encoder.output_shape, "decoder", rng.fork("decoder"))
    return AeModel(encoder, decoder)


def ae_save(ae: AeModel, root: ResourcePathExpression) -> None:
    """Save an autoencoder checkpoint."""
    checkpoint.module_save(ae, ae.manifest(), root)


def ae_load(root: ResourcePathExpression) -> AeModel:
    """Load an autoencoder checkpoint written by `ae_save`."""
    manifest = checkpoint.read_manifest(root, ("stage", "encoder", "decoder"))
    ae = AeModel(
        Network.from_manifest(manifest["encoder"]),
        Network.from_manifest(manifest["decoder"]),
        manifest["stage"],
    )
    checkpoint.module_load_state(ae, root, manifest)
    return ae


def _scaled_sq_error(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    # per-sample squared error divided by the square root of its size
    dim = math.prod(a.shape[1:])
    return ((a - b) ** 2).flatten(1).sum(dim=1) / math.sqrt(dim)


def fpa_loss(x: torch.Tensor, x_hat: torch.Tensor, f: torch.Tensor, f_hat: torch.Tensor) -> torch.Tensor:
    """Feature-preserving reconstruction loss.

    Mean over the batch of ``0.01 * |x - x_hat|^2 / sqrt(dim x)`` plus
    ``|f - f_hat|^2 / sqrt(dim f)``, with dimensions counted per sample.
    """
    return (_FPA_IMAGE_WEIGHT * _scaled_sq_error(x, x_hat) + _scaled_sq_error(f, f_hat)).mean()


def fpa_prime_loss(
    x: torch.Tensor,
    x_hat: torch.Tensor,
    f: torch.Tensor,
    f_hat: torch.Tensor,
    z: torch.Tensor,
    z_hat: torch.Tensor,
) -> torch.Tensor:
    """`fpa_loss` plus the mean of ``|z - z_hat|^2 / sqrt(dim z)`` over
    logits.
    """
    return fpa_loss(x, x_hat, f, f_hat) + _scaled_sq_error(z, z_hat).mean()


@dataclasses.dataclass
class AeTrainingLog:
    """Record of an autoencoder training stage."""

    stage: str
    train_loss: list[float] = dataclasses.field(default_factory=list)
    val_loss: list[float] = dataclasses.field(default_factory=list)
    best_epoch: int | None = None


def _train_ae(
    ae: AeModel,
    dataset: Dataset,
    opt: OptimizerState,
    epochs: int,
    rng: RngStream,
    stage: str,
    make_loss: Callable[[int], Callable[[torch.Tensor], tuple[Callable[..., torch.Tensor], Any]]],
    batch_size: int,
) -> AeTrainingLog:
    log = AeTrainingLog(stage)
    train_images = dataset.split_images("train")
    val_images = dataset.split_images("val")
    best_state = None
    best_loss = math.inf
    with time_this(log=_LOG, msg=f"Autoencoder training ({stage})", level=logging.INFO):
        for epoch in range(epochs):
            # the loss factory of an epoch maps a batch to (loss_fn, targets)
            loss_for = make_loss(epoch)
            order = rng.fork("epoch", epoch).permutation(train_images.shape[0])
            losses = []
            for start in range(0, len(order), batch_size):
                batch = train_images[torch.from_numpy(order[start : start + batch_size])]
                loss_fn, targets = loss_for(batch)
                try:
                    loss, grads = loss_and_grad_params(ae, loss_fn, batch, targets)
                except NumericError as exc:
                    raise DivergenceError(epoch, "epoch") from exc
                losses.append(loss * batch.shape[0])
                optimizer_step(opt, None, grads)
            opt.end_epoch()
            log.train_loss.append(sum(losses) / train_images.shape[0])
            with torch.no_grad():
                loss_fn, targets = loss_for(val_images)
                val_loss = float(loss_fn(ae(val_images), targets))
            if not math.isfinite(val_loss):
                raise DivergenceError(epoch, "epoch")
            log.val_loss.append(val_loss)
            _LOG.debug("%s epoch %d: train=%.6f val=%.6f", stage, epoch, log.train_loss[-1], val_loss)
            if val_loss < best_loss:
                best_loss = val_loss
                log.best_epoch = epoch
                best_state = copy.deepcopy(ae.state_dict())
    if best_state is not None:
        ae.load_state_dict(best_state)
    ae.stage = stage
    return log


def train_ae_standard(
    ae: AeModel, dataset: Dataset, opt: OptimizerState, epochs: int, rng: RngStream, batch_size: int = 32
) -> AeTrainingLog:
    """Train an autoencoder to reconstruct train-split images with MSE.

    The state with the lowest validation loss is kept.

    Parameters
    ----------
    ae : `AeModel`
        Autoencoder, trained in place.
    dataset : `Dataset`
        Split dataset.
    opt : `OptimizerState`
        Optimizer over the autoencoder parameters.
    epochs : `int`
        Number of epochs.
    rng : `RngStream`
        Source of randomness for batch order.
    batch_size : `int`
        Mini-batch size.

    Returns
    -------
    log : `AeTrainingLog`
        Per-epoch losses.

    Raises
    ------
    DivergenceError
        Raised if a loss is not finite.
    """

    def make_loss(epoch: int) -> Callable[[torch.Tensor], tuple[Callable[..., torch.Tensor], Any]]:
        return lambda batch: (mse, batch)

    return _train_ae(ae, dataset, opt, epochs, rng, "standard", make_loss, batch_size)


def _require_standard(ae: AeModel) -> None:
    if ae.stage != "standard":
        raise ConfigError(f"fine-tuning needs a standard autoencoder, got stage {ae.stage!r}")


def _frozen(module: nn.Module) -> nn.Module:
    module = copy.deepcopy(module)
    for param in module.parameters():
        param.requires_grad_(False)
    return module


def finetune_fpa(
    ae: AeModel,
    fewshot_encoder: nn.Module,
    dataset: Dataset,
    opt: OptimizerState,
    epochs: int,
    rng: RngStream,
    batch_size: int = 32,
) -> AeTrainingLog:
    """Fine-tune an autoencoder to preserve few-shot encoder features.

    Parameters are as for `train_ae_standard`, ``fewshot_encoder`` is the
    frozen feature extractor of the few-shot model.
    """
    _require_standard(ae)
    encoder = _frozen(fewshot_encoder)

    def make_loss(epoch: int) -> Callable[[torch.Tensor], tuple[Callable[..., torch.Tensor], Any]]:
        def loss_for(batch: torch.Tensor) -> tuple[Callable[..., torch.Tensor], Any]:
            with torch.no_grad():
                features = encoder(batch)

            def loss_fn(x_hat: torch.Tensor, targets: tuple[torch.Tensor, torch.Tensor]) -> torch.Tensor:
                x, f = targets
                return fpa_loss(x, x_hat, f, encoder(x_hat))

            return loss_fn, (batch, features)

        return loss_for

    return _train_ae(ae, dataset, opt, epochs, rng, "fpa", make_loss, batch_size)


def finetune_fpa_prime(
    ae: AeModel,
    fewshot_model: FewShotModel,
    dataset: Dataset,
    opt: OptimizerState,
    epochs: int,
    rng: RngStream,
    batch_size: int = 32,
) -> AeTrainingLog:
    """Fine-tune an autoencoder to preserve features and logits.

    Logits of a sample are its scores as a query against a calibration
    support drawn from the train split once per epoch, with the model's
    training way and shot counts.
    """
    _require_standard(ae)
    model = _frozen(fewshot_model)
    assert isinstance(model, FewShotModel)

    def make_loss(epoch: int) -> Callable[[torch.Tensor], tuple[Callable[..., torch.Tensor], Any]]:
        calibration = sample_episode(
            dataset, "train", model.k_way, model.n_shot, model.k_way, rng.fork("calibration", epoch)
        )

        def logits(images: torch.Tensor) -> torch.Tensor:
            return model.logits(calibration.support, calibration.support_labels, images, model.k_way)

        def loss_for(batch: torch.Tensor) -> tuple[Callable[..., torch.Tensor], Any]:
            with torch.no_grad():
                features = model.encoder(batch)
                z = logits(batch)

            def loss_fn(x_hat: torch.Tensor, targets: tuple[torch.Tensor, ...]) -> torch.Tensor:
                x, f, z = targets
                return fpa_prime_loss(x, x_hat, f, model.encoder(x_hat), z, logits(x_hat))

            return loss_fn, (batch, features, z)

        return loss_for

    return _train_ae(ae, dataset, opt, epochs, rng, "fpa_prime", make_loss, batch_size)


def reconstruction_rmse(ae: AeModel, images: torch.Tensor) -> float:
    """Per-pixel root mean squared reconstruction error."""
    with torch.no_grad():
        return float(torch.sqrt(((ae(images) - images) ** 2).mean()))


def feature_error(ae: AeModel, encoder: nn.Module, images: torch.Tensor) -> float:
    """Mean feature-space reconstruction error ``|f - f_hat|^2 / sqrt(dim f)``."""
    with torch.no_grad():
        return float(_scaled_sq_error(encoder(images), encoder(ae(images))).mean())


def apply_filter(
    spec: FilterSpec, images: torch.Tensor, rng: RngStream, ae: AeModel | None = None
) -> torch.Tensor:
    """Apply the filter described by ``spec`` to a batch of images.

    Parameters
    ----------
    spec : `FilterSpec`
        Filter description.
    images : `torch.Tensor`
        Batch of images.
    rng : `RngStream`
        Source of randomness for stochastic filters.
    ae : `AeModel`, optional
        Trained autoencoder, required for the fpa kinds.

    Returns
    -------
    filtered : `torch.Tensor`
        Filtered images, same shape, values in ``[0, 1]``.

    Raises
    ------
    ConfigError
        Raised if an autoencoder is needed but not given.
    """
    images = images.detach()
    if spec.kind == "identity":
        return images.clone()
    elif spec.kind == "noise":
        return filter_noise(images, rng)
    elif spec.kind == "feats":
        return filter_feats_median(images)
    elif spec.kind == "bitr":
        return filter_bitr(images, spec.bits)
    elif spec.kind == "tvm":
        return filter_tvm(images, spec, rng)
    if ae is None:
        raise ConfigError(f"Filter {spec.kind!r} needs a trained autoencoder")
    with torch.no_grad():
        return torch.clamp(ae(images), 0.0, 1.0)
