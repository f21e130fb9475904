"""Test configuration"""
import shutil
import tempfile

import numpy as np
import pytest

from iee_sparse_engine.harness.datasets import DatasetSpec, load_dataset
from iee_sparse_engine.nn.model import ModelSpec, build_model


@pytest.fixture
def temp_dir():
    """Create temporary directory for tests"""
    tmpdir = tempfile.mkdtemp()
    yield tmpdir
    shutil.rmtree(tmpdir, ignore_errors=True)


@pytest.fixture
def tiny_spec():
    """Four inputs, two hidden layers (8, 6), three classes, no batchnorm"""
    return ModelSpec(arch="mlp", input_shape=[4], hidden=[8, 6], num_classes=3, batchnorm=False)


@pytest.fixture
def tiny_model(tiny_spec):
    """Model with prunable weights '0.weight' (8x4) and '2.weight' (6x8)"""
    return build_model(tiny_spec, np.random.default_rng(0))


@pytest.fixture
def blobs_spec():
    """Synthetic blobs matching the tiny model"""
    return DatasetSpec(
        kind="synthetic",
        generator="blobs",
        n_samples=256,
        n_test=64,
        n_features=4,
        n_classes=3,
        batch_size=32,
    )


@pytest.fixture
def blobs(blobs_spec):
    """Loaded blobs dataset (8 batches per epoch)"""
    return load_dataset(blobs_spec, seed=0)


@pytest.fixture
def tiny_config(temp_dir):
    """Raw config for a short IEE run on the tiny model"""
    return {
        "name": "tiny",
        "seeds": [0],
        "output_dir": temp_dir,
        "model": {"arch": "mlp", "input_shape": [4], "hidden": [8, 6], "num_classes": 3, "batchnorm": False},
        "plan": {"mode": "uniform", "sparsity": 0.5},
        "schedule": {"H": 2, "J": 2, "Q": 2, "epochs": 3},
        "optimizer": {"lr": 0.05, "weight_decay": 0.0},
        "data": {
            "kind": "synthetic",
            "generator": "blobs",
            "n_samples": 256,
            "n_test": 64,
            "n_features": 4,
            "n_classes": 3,
            "batch_size": 32,
        },
    }
