"""
Sequential model, architecture specs, and the forward/backward contract
"""

from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from . import autograd as ag
from .autograd import Tensor
from .layers import BatchNorm, Conv2d, Dense, Flatten, ForwardContext, Layer, LayerKind, MaxPool, ReLU
from ..errors import ShapeError, StateError


class LossKind(str, Enum):
    """Training loss functions"""
    CROSS_ENTROPY = "cross-entropy"
    MSE = "mse"


class LayerSpec(BaseModel):
    """One layer of a custom architecture"""
    model_config = ConfigDict(extra="forbid")

    kind: LayerKind
    out: Optional[int] = None
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1
    size: int = 2


class ModelSpec(BaseModel):
    """Architecture description, stored in configs and checkpoint headers"""
    model_config = ConfigDict(extra="forbid")

    arch: Literal["mlp", "cnn", "custom"] = "mlp"
    input_shape: List[int] = Field(default_factory=lambda: [784])
    hidden: List[int] = Field(default_factory=lambda: [300, 100])
    num_classes: int = 10
    batchnorm: bool = True
    kernel_size: int = 3
    loss: LossKind = LossKind.CROSS_ENTROPY
    layers: List[LayerSpec] = Field(default_factory=list)

    def layer_specs(self) -> List[LayerSpec]:
        """Expand the ``mlp``/``cnn`` shorthands into explicit layers."""
        if self.arch == "custom":
            return list(self.layers)
        specs: List[LayerSpec] = []
        if self.arch == "mlp":
            if len(self.input_shape) != 1:
                specs.append(LayerSpec(kind=LayerKind.FLATTEN))
            for width in self.hidden:
                specs.append(LayerSpec(kind=LayerKind.DENSE, out=width))
                if self.batchnorm:
                    specs.append(LayerSpec(kind=LayerKind.BATCHNORM))
                specs.append(LayerSpec(kind=LayerKind.RELU))
        else:
            pad = self.kernel_size // 2
            for channels in self.hidden:
                specs.append(LayerSpec(
                    kind=LayerKind.CONV2D, out=channels,
                    kernel_size=self.kernel_size, padding=pad,
                ))
                if self.batchnorm:
                    specs.append(LayerSpec(kind=LayerKind.BATCHNORM))
                specs.append(LayerSpec(kind=LayerKind.RELU))
                specs.append(LayerSpec(kind=LayerKind.MAXPOOL, size=2))
            specs.append(LayerSpec(kind=LayerKind.FLATTEN))
        specs.append(LayerSpec(kind=LayerKind.DENSE, out=self.num_classes))
        return specs


class ChannelGroup(BaseModel):
    """A channel-prunable layer and the tensors one channel mask bit covers"""
    layer_index: int
    kind: LayerKind
    channels: int
    weight: str
    bias: Optional[str] = None
    gamma: Optional[str] = None
    beta: Optional[str] = None


class Model:
    """
    Ordered list of layers with a loss.

    ``forward`` caches the graph for ``backward``; calling ``backward``
    without a fresh ``forward`` raises ``StateError``.
    """

    def __init__(self, layers: List[Layer], input_shape: Tuple[int, ...], loss: LossKind = LossKind.CROSS_ENTROPY):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.loss_kind = LossKind(loss)
        self.spec: Optional[ModelSpec] = None
        self.dense_grads: Dict[str, np.ndarray] = {}
        self._graph_ready = False
        for index, layer in enumerate(self.layers):
            layer.bind(index)
        self.shapes = self._infer_shapes()

    def _infer_shapes(self) -> List[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
        shapes = []
        current = self.input_shape
        for layer in self.layers:
            out = layer.output_shape(current)
            shapes.append((current, out))
            current = out
        return shapes

    def named_parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for layer in self.layers:
            for tensor in layer.params.values():
                params[tensor.name] = tensor
        return params

    def parameter(self, name: str) -> Tensor:
        return self.named_parameters()[name]

    def weight_layers(self) -> List[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind in (LayerKind.DENSE, LayerKind.CONV2D)]

    def prunable_weights(self) -> List[str]:
        """Dense/conv weights except the final classifier."""
        return [self.layers[i].params["weight"].name for i in self.weight_layers()[:-1]]

    def channel_groups(self) -> List[ChannelGroup]:
        """Dense/conv layers except the classifier, with their following batchnorm if any."""
        groups = []
        for index in self.weight_layers()[:-1]:
            layer = self.layers[index]
            bn = self.layers[index + 1] if index + 1 < len(self.layers) else None
            has_bn = isinstance(bn, BatchNorm)
            groups.append(ChannelGroup(
                layer_index=index,
                kind=layer.kind,
                channels=layer.out_channels,
                weight=layer.params["weight"].name,
                bias=layer.params["bias"].name if "bias" in layer.params else None,
                gamma=bn.params["gamma"].name if has_bn else None,
                beta=bn.params["beta"].name if has_bn else None,
            ))
        return groups

    def zero_grad(self):
        for tensor in self.named_parameters().values():
            tensor.zero_grad()
        self.dense_grads = {}

    def forward(
        self,
        batch,
        training: bool = True,
        masks: Optional[Dict[str, np.ndarray]] = None,
        dense_grad: bool = False,
    ) -> Tensor:
        """
        Run the layers on a batch.

        Args:
            batch: Input array or Tensor, shape (N, *input_shape)
            training: Batchnorm uses batch statistics and updates running stats when True
            masks: Per-parameter multiplicative masks keyed by qualified name
            dense_grad: Record gradients w.r.t. masked weights in ``dense_grads``

        Returns:
            Output activations
        """
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=np.float32))
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(
                f"batch shape {x.shape} does not match model input (N, {', '.join(map(str, self.input_shape))})"
            )
        self.dense_grads = {}
        ctx = ForwardContext(
            training=training,
            masks=masks,
            dense_grad_sink=self.dense_grads if dense_grad else None,
        )
        for layer in self.layers:
            x = layer.forward(x, ctx)
        self._graph_ready = True
        return x

    def compute_loss(self, output: Tensor, targets) -> Tensor:
        if self.loss_kind == LossKind.CROSS_ENTROPY:
            return ag.cross_entropy(output, targets)
        return ag.mse(output, targets)

    def backward(self, loss: Tensor):
        """Populate ``grad`` on every trainable parameter."""
        if not self._graph_ready:
            raise StateError("backward called before forward")
        loss.backward()
        self._graph_ready = False

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t in self.named_parameters().items()}
        for layer in self.layers:
            for key, buf in layer.buffers.items():
                state[f"{layer.prefix}.{key}"] = buf.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = self.named_parameters()
        for name, tensor in params.items():
            if name not in state:
                raise StateError(f"state is missing parameter '{name}'")
            if state[name].shape != tensor.shape:
                raise ShapeError(f"parameter '{name}' expects {tensor.shape}, got {state[name].shape}")
            tensor.data = np.array(state[name], dtype=np.float32)
        for layer in self.layers:
            for key in layer.buffers:
                qualified = f"{layer.prefix}.{key}"
                if qualified in state:
                    layer.buffers[key] = np.array(state[qualified], dtype=np.float64)


def build_model(spec: ModelSpec, rng: np.random.Generator) -> Model:
    """
    Instantiate a model from its spec.

    Args:
        spec: Architecture description
        rng: Generator for weight initialization

    Returns:
        Model with Kaiming-normal weights, zero biases, unit BN scale
    """
    layers: List[Layer] = []
    shape: Tuple[int, ...] = tuple(spec.input_shape)
    for ls in spec.layer_specs():
        if ls.kind == LayerKind.DENSE:
            if len(shape) != 1:
                raise ShapeError(f"dense layer after non-flat shape {shape}; insert a flatten layer")
            layer: Layer = Dense(shape[0], ls.out, rng)
        elif ls.kind == LayerKind.CONV2D:
            if len(shape) != 3:
                raise ShapeError(f"conv2d expects (C, H, W) input, got {shape}")
            layer = Conv2d(shape[0], ls.out, ls.kernel_size, rng, stride=ls.stride, padding=ls.padding)
        elif ls.kind == LayerKind.BATCHNORM:
            layer = BatchNorm(shape[0])
        elif ls.kind == LayerKind.RELU:
            layer = ReLU()
        elif ls.kind == LayerKind.MAXPOOL:
            layer = MaxPool(ls.size)
        else:
            layer = Flatten()
        shape = layer.output_shape(shape)
        layers.append(layer)
    model = Model(layers, tuple(spec.input_shape), spec.loss)
    model.spec = spec
    return model
