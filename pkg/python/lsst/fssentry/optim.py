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

__all__ = ["OptimizerState", "optimizer_step"]

import logging
from collections.abc import Iterable, Mapping

import torch
from torch import nn

from .errors import ConfigError, ShapeError

_LOG = logging.getLogger(__name__)


class OptimizerState:
    """Optimizer with a step-decay learning rate schedule.

    Parameters
    ----------
    params : `~collections.abc.Iterable` [ `tuple` [ `str`, `torch.nn.Parameter` ] ]
        Named parameters to optimize, usually ``module.named_parameters()``.
    kind : `str`
        Either "sgd" or "adam".
    lr : `float`
        Initial learning rate.
    weight_decay : `float`
        L2 weight decay added to the gradient, ``g + weight_decay * p``.
    step_size : `int`, optional
        Number of epochs between learning rate decays, 0 disables decay.
    gamma : `float`
        Multiplicative decay factor.

    Notes
    -----
    SGD updates are ``p <- p - lr * (g + weight_decay * p)`` (no momentum),
    Adam uses the standard moment updates with bias correction.
    """

    def __init__(
        self,
        params: Iterable[tuple[str, nn.Parameter]],
        kind: str = "adam",
        lr: float = 1e-3,
        weight_decay: float = 0.0,
        step_size: int = 0,
        gamma: float = 0.1,
    ):
        self.names, tensors = [], []
        for name, param in params:
            self.names.append(name)
            tensors.append(param)
        self.params: dict[str, nn.Parameter] = dict(zip(self.names, tensors, strict=True))
        self.kind = kind
        if kind == "sgd":
            self.optimizer: torch.optim.Optimizer = torch.optim.SGD(tensors, lr=lr, weight_decay=weight_decay)
        elif kind == "adam":
            self.optimizer = torch.optim.Adam(tensors, lr=lr, weight_decay=weight_decay)
        else:
            raise ConfigError(f"Unknown optimizer kind {kind!r}, expected 'sgd' or 'adam'")
        self.scheduler: torch.optim.lr_scheduler.StepLR | None = None
        if step_size > 0:
            self.scheduler = torch.optim.lr_scheduler.StepLR(self.optimizer, step_size=step_size, gamma=gamma)

    @classmethod
    def for_module(cls, module: nn.Module, **kwargs: float | int | str) -> OptimizerState:
        """Create optimizer for all trainable parameters of a module."""
        params = [(name, param) for name, param in module.named_parameters() if param.requires_grad]
        return cls(params, **kwargs)  # type: ignore[arg-type]

    @property
    def lr(self) -> float:
        """Current learning rate (`float`)."""
        return float(self.optimizer.param_groups[0]["lr"])

    def end_epoch(self) -> None:
        """Advance the decay schedule by one epoch."""
        if self.scheduler is not None:
            self.scheduler.step()

    def state_dict(self) -> dict:
        return {
            "optimizer": self.optimizer.state_dict(),
            "scheduler": None if self.scheduler is None else self.scheduler.state_dict(),
        }


def optimizer_step(
    state: OptimizerState, params: Mapping[str, torch.Tensor] | None, grads: Mapping[str, torch.Tensor]
) -> None:
    """Apply one optimizer update.

    Parameters
    ----------
    state : `OptimizerState`
        Optimizer to use.
    params : `~collections.abc.Mapping` [ `str`, `torch.Tensor` ], optional
        Parameters being updated, only used to validate ``grads``; defaults
        to the parameters the optimizer was created with.
    grads : `~collections.abc.Mapping` [ `str`, `torch.Tensor` ]
        Gradients keyed by parameter name, as returned by
        `~lsst.fssentry.network.grad_params`. Parameters without a
        gradient are left untouched.

    Raises
    ------
    ShapeError
        Raised if a gradient shape does not match its parameter.
    """
    params = state.params if params is None else params
    for name, grad in grads.items():
        param = params.get(name)
        if param is None:
            raise KeyError(f"Gradient for unknown parameter {name!r}")
        if grad.shape != param.shape:
            raise ShapeError(tuple(param.shape), tuple(grad.shape), f"gradient of {name}")
    for name, param in state.params.items():
        grad = grads.get(name)
        param.grad = None if grad is None else grad.detach().to(param.dtype).clone()
    state.optimizer.step()
    for param in state.params.values():
        param.grad = None
