"""
Layer library: dense, conv2d, batchnorm, relu, maxpool, flatten
"""

from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class LayerKind(str, Enum):
    """Kinds of layers the model can hold"""
    DENSE = "dense"
    CONV2D = "conv2d"
    BATCHNORM = "batchnorm"
    RELU = "relu"
    MAXPOOL = "maxpool"
    FLATTEN = "flatten"


class ForwardContext:
    """Per-call forward options shared by every layer of a model."""

    def __init__(
        self,
        training: bool = True,
        masks: Optional[Dict[str, np.ndarray]] = None,
        dense_grad_sink: Optional[Dict[str, np.ndarray]] = None,
    ):
        self.training = training
        self.masks = masks or {}
        self.dense_grad_sink = dense_grad_sink


class Layer:
    """Base layer: named parameter tensors, non-trainable buffers, hyperparameters."""

    kind: LayerKind

    def __init__(self):
        self.params: Dict[str, Tensor] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self.hyper: Dict[str, Any] = {}
        self.prefix = ""

    def bind(self, index: int):
        """Assign qualified parameter names ``<index>.<param>``."""
        self.prefix = f"{index}"
        for key, tensor in self.params.items():
            tensor.name = f"{self.prefix}.{key}"

    def _param(self, key: str, ctx: ForwardContext) -> Tensor:
        tensor = self.params[key]
        mask = ctx.masks.get(tensor.name)
        sink = ctx.dense_grad_sink if key == "weight" else None
        return ag.apply_mask(tensor, mask, sink)

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        raise NotImplementedError

    def output_shape(self, input_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        return input_shape


class Dense(Layer):
    kind = LayerKind.DENSE

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.hyper = {"in_features": in_features, "out_features": out_features}
        std = np.sqrt(2.0 / in_features)
        self.params["weight"] = Tensor(rng.normal(0.0, std, (out_features, in_features)), requires_grad=True)
        if bias:
            self.params["bias"] = Tensor(np.zeros(out_features), requires_grad=True)

    @property
    def out_channels(self) -> int:
        return self.hyper["out_features"]

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        bias = self._param("bias", ctx) if "bias" in self.params else None
        return ag.linear(x, self._param("weight", ctx), bias)

    def output_shape(self, input_shape):
        return (self.hyper["out_features"],)


class Conv2d(Layer):
    kind = LayerKind.CONV2D

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
    ):
        super().__init__()
        self.hyper = {
            "in_channels": in_channels,
            "out_channels": out_channels,
            "kernel_size": kernel_size,
            "stride": stride,
            "padding": padding,
        }
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.params["weight"] = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), shape), requires_grad=True)
        if bias:
            self.params["bias"] = Tensor(np.zeros(out_channels), requires_grad=True)

    @property
    def out_channels(self) -> int:
        return self.hyper["out_channels"]

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        bias = self._param("bias", ctx) if "bias" in self.params else None
        return ag.conv2d(
            x, self._param("weight", ctx), bias,
            stride=self.hyper["stride"], padding=self.hyper["padding"],
        )

    def output_shape(self, input_shape):
        _, h, w = input_shape
        k, s, p = self.hyper["kernel_size"], self.hyper["stride"], self.hyper["padding"]
        return (self.hyper["out_channels"], (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)


class BatchNorm(Layer):
    kind = LayerKind.BATCHNORM

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.hyper = {"channels": channels, "momentum": momentum, "eps": eps}
        self.params["gamma"] = Tensor(np.ones(channels), requires_grad=True)
        self.params["beta"] = Tensor(np.zeros(channels), requires_grad=True)
        self.buffers["running_mean"] = np.zeros(channels, dtype=np.float64)
        self.buffers["running_var"] = np.ones(channels, dtype=np.float64)

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        return ag.batch_norm(
            x,
            self._param("gamma", ctx),
            self._param("beta", ctx),
            self.buffers["running_mean"],
            self.buffers["running_var"],
            training=ctx.training,
            momentum=self.hyper["momentum"],
            eps=self.hyper["eps"],
        )


class ReLU(Layer):
    kind = LayerKind.RELU

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        return ag.relu(x)


class MaxPool(Layer):
    kind = LayerKind.MAXPOOL

    def __init__(self, size: int = 2):
        super().__init__()
        self.hyper = {"size": size}

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        return ag.max_pool2d(x, self.hyper["size"])

    def output_shape(self, input_shape):
        c, h, w = input_shape
        s = self.hyper["size"]
        return (c, h // s, w // s)


class Flatten(Layer):
    kind = LayerKind.FLATTEN

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        return ag.flatten(x)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)
