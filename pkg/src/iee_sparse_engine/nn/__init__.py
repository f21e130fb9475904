"""nn-core package"""
from .autograd import Tensor
from .layers import BatchNorm, Conv2d, Dense, Flatten, LayerKind, MaxPool, ReLU
from .model import ChannelGroup, LayerSpec, LossKind, Model, ModelSpec, build_model
from .optim import LRSchedule, Optimizer, sgd_step

__all__ = [
    "Tensor",
    "BatchNorm",
    "Conv2d",
    "Dense",
    "Flatten",
    "LayerKind",
    "MaxPool",
    "ReLU",
    "ChannelGroup",
    "LayerSpec",
    "LossKind",
    "Model",
    "ModelSpec",
    "build_model",
    "LRSchedule",
    "Optimizer",
    "sgd_step",
]
