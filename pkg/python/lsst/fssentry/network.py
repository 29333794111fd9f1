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

"""Small differentiable networks built from declarative layer specs.

The layer set is deliberately closed: convolutions, fully connected
layers, elementwise activations, 2x down/up-sampling and flattening. It is
enough for the desk-scale encoder, the mirrored autoencoder and the
relation head.
"""

from __future__ import annotations

__all__ = [
    "LayerSpec",
    "LossFn",
    "Network",
    "autoencoder_specs",
    "cross_entropy",
    "encoder_specs",
    "finite_diff_grad",
    "forward",
    "grad_input",
    "grad_params",
    "loss_and_grad_params",
    "mse",
    "relation_head_specs",
]

import dataclasses
import logging
import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from typing import Any

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, NumericError, ShapeError
from .rng import RngStream

_LOG = logging.getLogger(__name__)

LossFn = Callable[[torch.Tensor, Any], torch.Tensor]
"""Signature of loss functions: ``loss_fn(output, targets) -> scalar``."""

_LAYER_KINDS = ("conv", "linear", "act", "down", "up", "flatten")
_ACTIVATIONS = ("relu", "tanh", "sigmoid")
_TOPOLOGIES = ("encoder", "decoder", "relation_head", "generic")


@dataclasses.dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer.

    Parameters
    ----------
    kind : `str`
        One of "conv", "linear", "act", "down", "up", "flatten".
    in_size : `int`, optional
        Input channels (conv) or input features (linear).
    out_size : `int`, optional
        Output channels (conv) or output features (linear).
    kernel : `int`, optional
        Convolution kernel size, padding is ``kernel // 2``.
    stride : `int`, optional
        Convolution stride.
    mode : `str`, optional
        Activation name for "act" ("relu", "tanh", "sigmoid"), pooling mode
        for "down" ("max", "avg").
    """

    kind: str
    in_size: int = 0
    out_size: int = 0
    kernel: int = 3
    stride: int = 1
    mode: str = ""

    def __post_init__(self) -> None:
        if self.kind not in _LAYER_KINDS:
            raise ConfigError(f"Unknown layer kind {self.kind!r}, expected one of {_LAYER_KINDS}")
        if self.kind == "act" and self.mode not in _ACTIVATIONS:
            raise ConfigError(f"Unknown activation {self.mode!r}")
        if self.kind == "down" and self.mode not in ("max", "avg"):
            raise ConfigError(f"Unknown down-sampling mode {self.mode!r}")
        if self.kind in ("conv", "linear") and (self.in_size <= 0 or self.out_size <= 0):
            raise ConfigError(f"Layer {self.kind!r} needs positive in_size and out_size")

    @classmethod
    def conv(cls, in_size: int, out_size: int, kernel: int = 3, stride: int = 1) -> LayerSpec:
        return cls("conv", in_size, out_size, kernel, stride)

    @classmethod
    def linear(cls, in_size: int, out_size: int) -> LayerSpec:
        return cls("linear", in_size, out_size)

    @classmethod
    def act(cls, mode: str = "relu") -> LayerSpec:
        return cls("act", mode=mode)

    @classmethod
    def down(cls, mode: str = "max") -> LayerSpec:
        return cls("down", mode=mode)

    @classmethod
    def up(cls) -> LayerSpec:
        return cls("up")

    @classmethod
    def flatten(cls) -> LayerSpec:
        return cls("flatten")

    def to_dict(self) -> dict[str, Any]:
        """Return a plain dictionary for manifests."""
        return dataclasses.asdict(self)

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        """Return output shape (without batch dimension) for an input shape.

        Parameters
        ----------
        shape : `tuple` [ `int`, ... ]
            Input shape without batch dimension.

        Returns
        -------
        shape : `tuple` [ `int`, ... ]
            Output shape without batch dimension.
        """
        if self.kind == "conv":
            if len(shape) != 3 or shape[0] != self.in_size:
                raise ShapeError((self.in_size, -1, -1), shape, "conv input")
            pad = self.kernel // 2
            height = (shape[1] + 2 * pad - self.kernel) // self.stride + 1
            width = (shape[2] + 2 * pad - self.kernel) // self.stride + 1
            return (self.out_size, height, width)
        elif self.kind == "linear":
            if shape != (self.in_size,):
                raise ShapeError((self.in_size,), shape, "linear input")
            return (self.out_size,)
        elif self.kind == "down":
            if len(shape) != 3:
                raise ShapeError((-1, -1, -1), shape, "down-sampling input")
            return (shape[0], shape[1] // 2, shape[2] // 2)
        elif self.kind == "up":
            if len(shape) != 3:
                raise ShapeError((-1, -1, -1), shape, "up-sampling input")
            return (shape[0], shape[1] * 2, shape[2] * 2)
        elif self.kind == "flatten":
            return (math.prod(shape),)
        return shape

    def build(self) -> nn.Module:
        """Make the torch module implementing this layer."""
        if self.kind == "conv":
            return nn.Conv2d(
                self.in_size, self.out_size, self.kernel, stride=self.stride, padding=self.kernel // 2
            )
        elif self.kind == "linear":
            return nn.Linear(self.in_size, self.out_size)
        elif self.kind == "act":
            return {"relu": nn.ReLU, "tanh": nn.Tanh, "sigmoid": nn.Sigmoid}[self.mode]()
        elif self.kind == "down":
            return nn.MaxPool2d(2) if self.mode == "max" else nn.AvgPool2d(2)
        elif self.kind == "up":
            return nn.Upsample(scale_factor=2, mode="nearest")
        return nn.Flatten()


class Network(nn.Module):
    """Feed-forward network assembled from a sequence of `LayerSpec`.

    Parameters
    ----------
    specs : `~collections.abc.Sequence` [ `LayerSpec` ]
        Layers in evaluation order.
    input_shape : `tuple` [ `int`, ... ]
        Declared input shape without the batch dimension.
    topology : `str`
        One of "encoder", "decoder", "relation_head", "generic".
    rng : `RngStream`, optional
        Stream used to initialize parameters; without it all parameters
        are zero.
    """

    def __init__(
        self,
        specs: Sequence[LayerSpec],
        input_shape: Sequence[int],
        topology: str = "generic",
        rng: RngStream | None = None,
    ):
        super().__init__()
        if topology not in _TOPOLOGIES:
            raise ConfigError(f"Unknown topology {topology!r}, expected one of {_TOPOLOGIES}")
        self.specs = tuple(specs)
        self.input_shape = tuple(int(n) for n in input_shape)
        self.topology = topology
        shapes = [self.input_shape]
        for spec in self.specs:
            shapes.append(spec.output_shape(shapes[-1]))
        self._shapes = tuple(shapes)
        self.layers = nn.ModuleList(spec.build() for spec in self.specs)
        self.reset_parameters(rng)

    @property
    def output_shape(self) -> tuple[int, ...]:
        """Output shape without the batch dimension (`tuple`)."""
        return self._shapes[-1]

    def reset_parameters(self, rng: RngStream | None) -> None:
        """Initialize parameters.

        Weights and biases of every layer are drawn from
        ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.

        Parameters
        ----------
        rng : `RngStream` or `None`
            Source of randomness, `None` sets all parameters to zero.
        """
        with torch.no_grad():
            for index, layer in enumerate(self.layers):
                if not isinstance(layer, nn.Conv2d | nn.Linear):
                    continue
                weight = layer.weight
                fan_in = math.prod(weight.shape[1:])
                bound = 1.0 / math.sqrt(fan_in)
                if rng is None:
                    weight.zero_()
                    layer.bias.zero_()
                else:
                    layer_rng = rng.fork("layer", index)
                    weight.copy_(layer_rng.torch_uniform(weight.shape, -bound, bound, weight.dtype))
                    layer.bias.copy_(layer_rng.torch_uniform(layer.bias.shape, -bound, bound, weight.dtype))

    def check_input(self, batch: torch.Tensor) -> None:
        """Raise `ShapeError` unless ``batch`` is a batch of declared inputs."""
        if batch.dim() != len(self.input_shape) + 1 or tuple(batch.shape[1:]) != self.input_shape:
            raise ShapeError((-1,) + self.input_shape, tuple(batch.shape), "network input")

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        self.check_input(batch)
        out = batch
        for layer in self.layers:
            out = layer(out)
        return out

    def activations(self, batch: torch.Tensor) -> list[torch.Tensor]:
        """Return the output of every layer for a batch.

        Parameters
        ----------
        batch : `torch.Tensor`
            Input batch.

        Returns
        -------
        outputs : `list` [ `torch.Tensor` ]
            Output of each layer, in order.
        """
        self.check_input(batch)
        outputs = []
        out = batch
        for layer in self.layers:
            out = layer(out)
            outputs.append(out)
        return outputs

    def first_non_finite_layer(self, batch: torch.Tensor) -> int | None:
        """Return index of the first layer producing non-finite output, or
        `None` if all layer outputs are finite.
        """
        with torch.no_grad():
            for index, out in enumerate(self.activations(batch)):
                if not torch.isfinite(out).all():
                    return index
        return None

    def manifest(self) -> dict[str, Any]:
        """Return the architecture description stored with checkpoints."""
        return {
            "topology": self.topology,
            "input_shape": list(self.input_shape),
            "layers": [spec.to_dict() for spec in self.specs],
        }

    @classmethod
    def from_manifest(cls, manifest: Mapping[str, Any]) -> Network:
        """Rebuild a network (with zero parameters) from `manifest` output."""
        specs = [LayerSpec(**layer) for layer in manifest["layers"]]
        return cls(specs, manifest["input_shape"], manifest["topology"])


def encoder_specs(
    widths: Iterable[int] = (16, 32, 64), in_channels: int = 3, activation: str = "relu", pool: str = "max"
) -> list[LayerSpec]:
    """Return layer specs of the desk encoder.

    Each block is a 3x3 convolution, an activation and 2x down-sampling;
    with the default widths a 3x16x16 image becomes a 64x2x2 feature map.

    Parameters
    ----------
    widths : `~collections.abc.Iterable` [ `int` ]
        Output channels of each block.
    in_channels : `int`
        Number of image channels.
    activation : `str`
        Activation name.
    pool : `str`
        Down-sampling mode.

    Returns
    -------
    specs : `list` [ `LayerSpec` ]
        Layer specs.
    """
    specs: list[LayerSpec] = []
    channels = in_channels
    for width in widths:
        specs += [LayerSpec.conv(channels, width), LayerSpec.act(activation), LayerSpec.down(pool)]
        channels = width
    return specs


def autoencoder_specs(
    widths: Sequence[int] = (16, 32, 64), in_channels: int = 3
) -> tuple[list[LayerSpec], list[LayerSpec]]:
    """Return encoder and decoder specs of the mirrored autoencoder.

    The decoder mirrors the encoder with nearest-neighbour up-sampling and
    ends with a sigmoid so reconstructions stay in ``[0, 1]``.

    Parameters
    ----------
    widths : `~collections.abc.Sequence` [ `int` ]
        Encoder block widths.
    in_channels : `int`
        Number of image channels.

    Returns
    -------
    encoder : `list` [ `LayerSpec` ]
        Encoder specs.
    decoder : `list` [ `LayerSpec` ]
        Decoder specs.
    """
    encoder = encoder_specs(widths, in_channels)
    decoder: list[LayerSpec] = []
    reverse = list(reversed(widths))
    targets = reverse[1:] + [in_channels]
    for index, (width, target) in enumerate(zip(reverse, targets, strict=True)):
        decoder += [LayerSpec.up(), LayerSpec.conv(width, target)]
        if index < len(reverse) - 1:
            decoder.append(LayerSpec.act("relu"))
    decoder.append(LayerSpec.act("sigmoid"))
    return encoder, decoder


def relation_head_specs(feature_channels: int = 64, hidden: int = 32) -> list[LayerSpec]:
    """Return specs of the relation head (two fully connected layers).

    Parameters
    ----------
    feature_channels : `int`
        Channels of the pooled class and query features; the head input is
        their concatenation.
    hidden : `int`
        Width of the hidden layer.

    Returns
    -------
    specs : `list` [ `LayerSpec` ]
        Layer specs, output is one scalar per pair.
    """
    return [
        LayerSpec.linear(2 * feature_channels, hidden),
        LayerSpec.act("relu"),
        LayerSpec.linear(hidden, 1),
    ]


def cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean softmax cross-entropy of logits against integer targets."""
    return F.cross_entropy(logits, targets)


def mse(output: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean squared error."""
    return F.mse_loss(output, targets)


def forward(net: Network, batch: torch.Tensor) -> torch.Tensor:
    """Evaluate a network on a batch.

    Parameters
    ----------
    net : `Network`
        Network to evaluate.
    batch : `torch.Tensor`
        Batch whose trailing dimensions match ``net.input_shape``.

    Returns
    -------
    output : `torch.Tensor`
        Network output.

    Raises
    ------
    ShapeError
        Raised if batch shape does not match the declared input shape.
    """
    return net(batch)


def _checked_loss(net: nn.Module, loss_fn: LossFn, batch: torch.Tensor, targets: Any) -> torch.Tensor:
    loss = loss_fn(net(batch), targets)
    if not torch.isfinite(loss).all():
        layer = net.first_non_finite_layer(batch.detach()) if isinstance(net, Network) else None
        raise NumericError("non-finite loss", layer=layer)
    return loss


def grad_params(
    net: nn.Module, loss_fn: LossFn, batch: torch.Tensor, targets: Any
) -> dict[str, torch.Tensor]:
    """Compute gradients of a loss with respect to network parameters.

    Parameters
    ----------
    net : `torch.nn.Module`
        Network, usually a `Network`; any module whose parameters take part
        in ``loss_fn`` works.
    loss_fn : `LossFn`
        Scalar loss of the network output and ``targets``.
    batch : `torch.Tensor`
        Network input.
    targets : `typing.Any`
        Second argument of ``loss_fn``.

    Returns
    -------
    grads : `dict` [ `str`, `torch.Tensor` ]
        Gradients keyed by parameter name, same shapes as the parameters.

    Raises
    ------
    NumericError
        Raised if the loss is not finite.
    """
    _, grads = loss_and_grad_params(net, loss_fn, batch, targets)
    return grads


def loss_and_grad_params(
    net: nn.Module, loss_fn: LossFn, batch: torch.Tensor, targets: Any
) -> tuple[float, dict[str, torch.Tensor]]:
    """Compute the loss and its parameter gradients from one forward pass.

    Parameters and exceptions are the same as for `grad_params`.

    Returns
    -------
    loss : `float`
        Loss value.
    grads : `dict` [ `str`, `torch.Tensor` ]
        Gradients keyed by parameter name.
    """
    named = [(name, param) for name, param in net.named_parameters() if param.requires_grad]
    loss = _checked_loss(net, loss_fn, batch, targets)
    value = loss.item()
    if not loss.requires_grad:
        return value, {name: torch.zeros_like(param) for name, param in named}
    grads = torch.autograd.grad(loss, [param for _, param in named], allow_unused=True)
    return value, {
        name: torch.zeros_like(param) if grad is None else grad
        for (name, param), grad in zip(named, grads, strict=True)
    }


def grad_input(net: nn.Module, loss_fn: LossFn, batch: torch.Tensor, targets: Any) -> torch.Tensor:
    """Compute gradient of a loss with respect to the network input.

    Parameters are the same as for `grad_params`.

    Returns
    -------
    grad : `torch.Tensor`
        Gradient with the shape of ``batch``.
    """
    inputs = batch.detach().clone().requires_grad_(True)
    loss = _checked_loss(net, loss_fn, inputs, targets)
    if not loss.requires_grad:
        return torch.zeros_like(inputs)
    (grad,) = torch.autograd.grad(loss, [inputs], allow_unused=True)
    return torch.zeros_like(inputs) if grad is None else grad


def finite_diff_grad(fn: Callable[[torch.Tensor], Any], x: torch.Tensor, h: float = 1e-4) -> torch.Tensor:
    """Estimate a gradient with central differences.

    Parameters
    ----------
    fn : `~collections.abc.Callable`
        Scalar function of a tensor.
    x : `torch.Tensor`
        Point of evaluation, float64 is recommended.
    h : `float`
        Step size.

    Returns
    -------
    grad : `torch.Tensor`
        Estimate of the gradient, same shape as ``x``.

    Raises
    ------
    NumericError
        Raised if any evaluation of ``fn`` is not finite.
    """
    base = x.detach().clone()
    flat = base.view(-1)
    grad = torch.zeros_like(flat)
    with torch.no_grad():
        for index in range(flat.numel()):
            saved = flat[index].item()
            flat[index] = saved + h
            plus = float(fn(base))
            flat[index] = saved - h
            minus = float(fn(base))
            flat[index] = saved
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise NumericError(f"non-finite function value at coordinate {index}")
            grad[index] = (plus - minus) / (2 * h)
    return grad.view_as(x)
