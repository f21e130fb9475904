"""
Tests for importance criteria
"""

import numpy as np
import pytest

from iee_sparse_engine.errors import ConfigError, UnsupportedScopeError
from iee_sparse_engine.importance.criteria import (
    MagnitudeCriterion,
    TaylorCriterion,
    build_criterion,
    magnitude_score,
    rigl_grow_score,
    taylor_channel_terms,
)
from iee_sparse_engine.nn.layers import Dense
from iee_sparse_engine.nn.model import LossKind, Model, ModelSpec, build_model
from iee_sparse_engine.sparsity.distributions import init_channel_partition
from iee_sparse_engine.sparsity.masks import Granularity, Mask, ParamPartition


def _linear_model(weights) -> Model:
    weights = np.asarray(weights, dtype=np.float32)
    layer = Dense(weights.shape[1], weights.shape[0], np.random.default_rng(0), bias=False)
    model = Model([layer], (weights.shape[1],), LossKind.MSE)
    model.parameter("0.weight").data = weights
    return model


def _weight_partition(bits) -> ParamPartition:
    bits = np.asarray(bits, dtype=bool)
    return ParamPartition({"0.weight": Mask(name="0.weight", granularity=Granularity.WEIGHT, bits=bits)})


@pytest.fixture
def bn_model():
    """dense(4 -> 3), batchnorm, relu, dense(3 -> 2)"""
    spec = ModelSpec(input_shape=[4], hidden=[3], num_classes=2, batchnorm=True)
    return build_model(spec, np.random.default_rng(0))


class TestMagnitude:
    """|theta| scores"""

    def test_magnitude_example(self):
        """[-3, 0.5] scores [3, 0.5], including the inactive entry"""
        model = _linear_model([[-3.0, 0.5]])
        report = magnitude_score(model, _weight_partition([[True, False]]))
        assert report.values["0.weight"].tolist() == [[3.0, 0.5]]

    def test_channel_magnitude_is_row_mean(self):
        """A channel partition scores each output channel by its mean |w|"""
        model = _linear_model([[1.0, -3.0], [0.5, 0.5]])
        partition = ParamPartition({"0.weight": Mask(name="0.weight", granularity=Granularity.CHANNEL, bits=np.ones(2, dtype=bool))})
        report = magnitude_score(model, partition)
        assert report.values["0.weight"].tolist() == [2.0, 0.5]

    def test_criterion_counts_window_steps(self):
        """The report carries how many batches the window observed"""
        model = _linear_model([[1.0]])
        partition = _weight_partition([[True]])
        criterion = MagnitudeCriterion()
        criterion.begin_window()
        for _ in range(3):
            criterion.observe(model, partition)
        assert criterion.report(model, partition).accumulation_steps == 3


class TestTaylor:
    """BatchNorm Taylor channel scores"""

    def _set_bn(self, model, gamma, g_gamma, beta, g_beta):
        params = model.named_parameters()
        params["1.gamma"].data = np.asarray(gamma, dtype=np.float32)
        params["1.gamma"].grad = np.asarray(g_gamma, dtype=np.float32)
        params["1.beta"].data = np.asarray(beta, dtype=np.float32)
        params["1.beta"].grad = np.asarray(g_beta, dtype=np.float32)

    def test_taylor_examples(self, bn_model):
        """Zero parameters score 0; gamma 2, g 0.5, beta 1, g -1 cancels to 0"""
        partition = init_channel_partition(bn_model, 1.0, np.random.default_rng(0))
        self._set_bn(bn_model, [0.0, 2.0, 2.0], [0.3, 0.5, 0.5], [0.0, 1.0, 1.0], [0.7, -1.0, 1.0])
        terms = taylor_channel_terms(bn_model, partition)["0.weight"]
        assert terms.tolist() == pytest.approx([0.0, 0.0, 2.0])

    def test_window_mean(self, bn_model):
        """The report is the mean of the per-batch terms"""
        partition = init_channel_partition(bn_model, 1.0, np.random.default_rng(0))
        criterion = TaylorCriterion()
        criterion.begin_window()
        self._set_bn(bn_model, [1.0, 1.0, 1.0], [1.0, 2.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        criterion.observe(bn_model, partition)
        self._set_bn(bn_model, [1.0, 1.0, 1.0], [3.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        criterion.observe(bn_model, partition)
        report = criterion.report(bn_model, partition)
        assert report.values["0.weight"].tolist() == pytest.approx([2.0, 1.0, 0.0])
        assert report.accumulation_steps == 2

    def test_state_restores_window(self, bn_model):
        """A criterion loaded from state reports the same scores"""
        partition = init_channel_partition(bn_model, 1.0, np.random.default_rng(0))
        criterion = TaylorCriterion()
        self._set_bn(bn_model, [1.0, 2.0, 3.0], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        criterion.observe(bn_model, partition)
        restored = TaylorCriterion()
        restored.load_state(criterion.state(), criterion.steps)
        np.testing.assert_allclose(
            restored.report(bn_model, partition).values["0.weight"],
            criterion.report(bn_model, partition).values["0.weight"],
        )

    def test_terms_match_finite_differences(self):
        """A single-channel layer's term equals |g_gamma*gamma + g_beta*beta| with central-difference gradients"""
        spec = ModelSpec(input_shape=[3], hidden=[1], num_classes=2, batchnorm=True)
        model = build_model(spec, np.random.default_rng(4))
        partition = init_channel_partition(model, 1.0, np.random.default_rng(0))
        params = model.named_parameters()
        params["1.gamma"].data = np.array([1.3], dtype=np.float32)
        params["1.beta"].data = np.array([0.4], dtype=np.float32)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(16, 3)).astype(np.float32)
        y = rng.integers(0, 2, 16)

        model.zero_grad()
        model.backward(model.compute_loss(model.forward(x), y))
        analytic = taylor_channel_terms(model, partition)["0.weight"][0]

        h = 1e-3
        numeric = {}
        for key in ("1.gamma", "1.beta"):
            tensor = params[key]
            original = tensor.data.copy()
            tensor.data = original + h
            up = model.compute_loss(model.forward(x), y).item()
            tensor.data = original - h
            down = model.compute_loss(model.forward(x), y).item()
            tensor.data = original
            numeric[key] = (up - down) / (2 * h)
        expected = abs(numeric["1.gamma"] * 1.3 + numeric["1.beta"] * 0.4)
        assert expected > 1e-3
        assert analytic == pytest.approx(expected, rel=1e-2)

    def test_requires_batchnorm(self, tiny_model):
        """Taylor scores without a following batchnorm raise ConfigError"""
        partition = init_channel_partition(tiny_model, 1.0, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            taylor_channel_terms(tiny_model, partition)

    def test_unknown_criterion(self):
        """Only magnitude and taylor exist"""
        assert build_criterion("taylor").name == "taylor"
        with pytest.raises(ConfigError):
            build_criterion("snip")


class TestRigLScore:
    """Dense-gradient growth scores"""

    def test_linear_example(self):
        """Masked w, x = 2, target 1, squared error: |dL/dw| = 4"""
        model = _linear_model([[5.0]])
        report = rigl_grow_score(model, _weight_partition([[False]]), np.array([[2.0]]), np.array([[1.0]]))
        assert report.values["0.weight"][0, 0] == pytest.approx(4.0)
        assert model.parameter("0.weight").data[0, 0] == 5.0
        assert model.parameter("0.weight").grad is None

    def test_channel_scope_unsupported(self, tiny_model):
        """Dense-gradient scores are undefined for channels"""
        partition = init_channel_partition(tiny_model, 0.5, np.random.default_rng(0))
        with pytest.raises(UnsupportedScopeError):
            rigl_grow_score(tiny_model, partition, np.ones((2, 4)), np.zeros(2))
