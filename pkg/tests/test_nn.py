"""
Tests for the autograd core, layers, and momentum SGD
"""

import numpy as np
import pytest

from iee_sparse_engine.errors import ShapeError, StateError
from iee_sparse_engine.nn import autograd as ag
from iee_sparse_engine.nn.autograd import Tensor
from iee_sparse_engine.nn.layers import Dense
from iee_sparse_engine.nn.model import LossKind, Model, ModelSpec, build_model
from iee_sparse_engine.nn.optim import LRSchedule, Optimizer, sgd_step


def _single_weight_model(value: float) -> Model:
    layer = Dense(1, 1, np.random.default_rng(0), bias=False)
    model = Model([layer], (1,), LossKind.MSE)
    model.parameter("0.weight").data = np.array([[value]], dtype=np.float32)
    return model


class TestAutograd:
    """Forward values and gradients of the tensor ops"""

    def test_dense_forward(self):
        """Weight 2, bias 1, input 3 gives 7"""
        x = Tensor([[3.0]])
        w = Tensor([[2.0]], requires_grad=True)
        b = Tensor([1.0], requires_grad=True)
        out = ag.linear(x, w, b)
        assert out.data.tolist() == [[7.0]]

    def test_square_loss_gradient(self):
        """y = w * x with w = 1, x = 3 and loss y^2 gives dL/dw = 18"""
        w = Tensor([[1.0]], requires_grad=True, name="w")
        y = ag.linear(Tensor([[3.0]]), w, None)
        loss = ag.mse(y, np.zeros((1, 1)))
        loss.backward()
        assert w.grad[0, 0] == pytest.approx(18.0)

    def test_masked_weight_keeps_value_and_records_dense_grad(self):
        """A zero mask bit removes the weight from the output but not from storage"""
        w = Tensor([[2.0, 5.0]], requires_grad=True, name="w")
        sink = {}
        effective = ag.apply_mask(w, np.array([[1.0, 0.0]]), sink)
        out = ag.linear(Tensor([[1.0, 1.0]]), effective, None)
        assert out.data.tolist() == [[2.0]]
        ag.total(out).backward()
        assert w.grad.tolist() == [[1.0, 0.0]]
        assert sink["w"].tolist() == [[1.0, 1.0]]
        assert w.data.tolist() == [[2.0, 5.0]]

    def test_conv2d_matches_direct_loop(self):
        """im2col convolution equals a nested-loop reference"""
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 3, 5, 5)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        b = rng.normal(size=4).astype(np.float32)
        out = ag.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1).data

        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        expected = np.zeros((2, 4, 5, 5))
        for n in range(2):
            for o in range(4):
                for i in range(5):
                    for j in range(5):
                        expected[n, o, i, j] = np.sum(padded[n, :, i:i + 3, j:j + 3] * w[o]) + b[o]
        np.testing.assert_allclose(out, expected, rtol=1e-4, atol=1e-4)

    @pytest.mark.parametrize("shape", [(64, 3), (8, 3, 4, 4)])
    def test_batch_norm_normalizes_each_channel(self, shape):
        """Training-mode batchnorm output, with the affine step undone, has per-channel mean 0 and variance 1"""
        rng = np.random.default_rng(2)
        x = (rng.normal(size=shape) * 3.0 + 2.0).astype(np.float32)
        gamma = np.array([2.0, 0.5, 1.5], dtype=np.float32)
        beta = np.array([3.0, -1.0, 0.0], dtype=np.float32)
        out = ag.batch_norm(
            Tensor(x), Tensor(gamma, requires_grad=True), Tensor(beta, requires_grad=True),
            np.zeros(3), np.ones(3), training=True,
        ).data.astype(np.float64)
        bshape = (1, -1) if len(shape) == 2 else (1, -1, 1, 1)
        axes = (0,) if len(shape) == 2 else (0, 2, 3)
        x_hat = (out - beta.reshape(bshape)) / gamma.reshape(bshape)
        np.testing.assert_allclose(x_hat.mean(axis=axes), 0.0, atol=1e-4)
        np.testing.assert_allclose(x_hat.var(axis=axes), 1.0, atol=1e-4)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    @pytest.mark.parametrize("spec", [
        ModelSpec(input_shape=[3], hidden=[5], num_classes=2, batchnorm=False),
        ModelSpec(input_shape=[3], hidden=[4], num_classes=2, batchnorm=True),
        ModelSpec(arch="cnn", input_shape=[2, 6, 6], hidden=[3], num_classes=2, batchnorm=True),
    ], ids=["mlp", "mlp-bn", "cnn-bn-pool"])
    def test_gradients_match_finite_differences(self, spec, seed):
        """Analytic gradients of every parameter agree with finite differences"""
        model = build_model(spec, np.random.default_rng(seed))
        rng = np.random.default_rng(seed + 100)
        x = rng.normal(size=(4, *spec.input_shape)).astype(np.float32)
        y = rng.integers(0, 2, 4)

        def loss() -> float:
            return model.compute_loss(model.forward(x), y).item()

        model.zero_grad()
        model.backward(model.compute_loss(model.forward(x), y))
        params = model.named_parameters()
        analytic = {name: t.grad.astype(np.float64).copy() for name, t in params.items()}

        h = 1e-3
        checked = 0
        for name, tensor in params.items():
            for idx in np.ndindex(*tensor.shape):
                original = tensor.data[idx]
                base = loss()
                tensor.data[idx] = original + h
                up = loss()
                tensor.data[idx] = original - h
                down = loss()
                tensor.data[idx] = original
                # relu and max-pool are piecewise linear; across a kink only the
                # one-sided difference on the unperturbed side is exact
                candidates = ((up - down) / (2 * h), (up - base) / h, (base - down) / h)
                g = analytic[name][idx]
                assert any(abs(c - g) <= 5e-3 + 5e-2 * abs(g) for c in candidates), (name, idx, g, candidates)
                checked += 1
        assert checked == sum(t.size for t in params.values())

    def test_mismatched_input_shape(self):
        """Dense layers reject inputs of the wrong width"""
        with pytest.raises(ShapeError):
            ag.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), None)


class TestModel:
    """Model construction and the forward/backward contract"""

    def test_mlp_layout(self, tiny_model):
        """Parameters are named by layer index; the classifier is not prunable"""
        assert tiny_model.prunable_weights() == ["0.weight", "2.weight"]
        assert tiny_model.parameter("4.weight").shape == (3, 6)

    def test_backward_before_forward(self, tiny_model):
        """Calling backward without a forward pass raises StateError"""
        with pytest.raises(StateError):
            tiny_model.backward(Tensor([0.0], requires_grad=True))

    def test_wrong_batch_shape(self, tiny_model):
        """A batch that does not match input_shape raises ShapeError"""
        with pytest.raises(ShapeError):
            tiny_model.forward(np.ones((2, 5)))

    def test_state_dict_round_trip(self, tiny_spec, tiny_model):
        """A fresh model loaded from a state dict computes the same outputs"""
        other = build_model(tiny_spec, np.random.default_rng(99))
        other.load_state_dict(tiny_model.state_dict())
        x = np.random.default_rng(1).normal(size=(4, 4)).astype(np.float32)
        np.testing.assert_array_equal(
            other.forward(x, training=False).data, tiny_model.forward(x, training=False).data
        )

    def test_cnn_channel_groups_include_batchnorm(self):
        """Conv layers followed by batchnorm expose gamma and beta in their channel group"""
        spec = ModelSpec(arch="cnn", input_shape=[1, 8, 8], hidden=[4, 6], num_classes=2, batchnorm=True)
        model = build_model(spec, np.random.default_rng(0))
        groups = model.channel_groups()
        assert [g.channels for g in groups] == [4, 6]
        assert all(g.gamma is not None and g.beta is not None for g in groups)


class TestOptimizer:
    """Momentum SGD with update masks"""

    def test_plain_step(self):
        """lr 0.1, gradient 2, no momentum: 1 becomes 0.8"""
        model = _single_weight_model(1.0)
        model.parameter("0.weight").grad = np.array([[2.0]], dtype=np.float32)
        optimizer = Optimizer(momentum=0.0, weight_decay=0.0, constant_lr=0.1)
        sgd_step(model, optimizer)
        assert model.parameter("0.weight").data[0, 0] == pytest.approx(0.8)

    def test_momentum_two_steps(self):
        """Momentum 0.9, lr 0.1, gradient 1 twice: 1 - 0.1 - 0.19 = 0.71"""
        model = _single_weight_model(1.0)
        optimizer = Optimizer(momentum=0.9, weight_decay=0.0, constant_lr=0.1)
        for _ in range(2):
            model.parameter("0.weight").grad = np.array([[1.0]], dtype=np.float32)
            sgd_step(model, optimizer)
        assert model.parameter("0.weight").data[0, 0] == pytest.approx(0.71, abs=1e-6)
        assert optimizer.step_count == 2

    def test_masked_entry_is_untouched(self):
        """An entry with update-mask bit 0 keeps its value and has zero velocity"""
        layer = Dense(2, 1, np.random.default_rng(0), bias=False)
        model = Model([layer], (2,), LossKind.MSE)
        weight = model.parameter("0.weight")
        weight.data = np.array([[1.0, 1.0]], dtype=np.float32)
        weight.grad = np.array([[1.0, 1.0]], dtype=np.float32)
        optimizer = Optimizer(momentum=0.9, weight_decay=0.0, constant_lr=0.5)
        sgd_step(model, optimizer, {"0.weight": np.array([[1.0, 0.0]])})
        assert weight.data.tolist() == [[0.5, 1.0]]
        assert optimizer.velocity["0.weight"][0, 1] == 0.0

    def test_schedule_warmup_then_cosine(self):
        """Learning rate ramps up linearly and decays to min_lr"""
        schedule = LRSchedule(base_lr=1.0, total_iters=100, warmup_fraction=0.1, min_lr=0.0)
        assert schedule.lr_at(0) == pytest.approx(0.1)
        assert schedule.lr_at(9) == pytest.approx(1.0)
        assert schedule.lr_at(10) == pytest.approx(1.0)
        assert schedule.lr_at(100) == pytest.approx(0.0, abs=1e-12)
