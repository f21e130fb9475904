"""
Tests for the static, SET and RigL reference strategies
"""

import numpy as np
import pytest

from iee_sparse_engine.audit.event_log import EventKind
from iee_sparse_engine.baselines.strategies import (
    BaselineKind,
    BaselineSchedule,
    BaselineStageManager,
    BaselineTrainer,
    rigl_update,
    set_update,
)
from iee_sparse_engine.errors import UnsupportedScopeError
from iee_sparse_engine.importance.criteria import MagnitudeCriterion
from iee_sparse_engine.nn.layers import Dense
from iee_sparse_engine.nn.model import LossKind, Model, ModelSpec, build_model
from iee_sparse_engine.nn.optim import Optimizer
from iee_sparse_engine.phases.stage_manager import StageName
from iee_sparse_engine.reproducibility.state_manager import seed_stream
from iee_sparse_engine.sparsity.distributions import SparsityPlan, init_channel_partition, init_partition
from iee_sparse_engine.sparsity.masks import Granularity, Mask, ParamPartition


def _baseline(model, partition, dataset, kind, interval=3, total=24, seed=0):
    schedule = BaselineSchedule(kind=kind, interval=interval, total_train_iters=total)
    return BaselineTrainer(
        model, partition, Optimizer(momentum=0.9, weight_decay=0.0, constant_lr=0.05), dataset,
        schedule, MagnitudeCriterion(), seed=seed,
    )


class TestBaselineSchedule:
    """Update cadence and annealed fraction"""

    def test_update_iterations(self):
        """Interval 3 over 12 iterations: T = 3, updates at 3, 6, 9"""
        schedule = BaselineSchedule(kind=BaselineKind.RIGL, interval=3, total_train_iters=12)
        manager = BaselineStageManager(schedule)
        plans = [manager.advance() for _ in range(12)]
        assert schedule.T == 3
        assert [p.iteration for p in plans if p.prune] == [3, 6, 9]
        assert all(p.grow == p.prune for p in plans)
        assert plans[0].stage == StageName.IMPROVE
        assert plans[-1].stage == StageName.POST_PERIOD

    def test_static_never_updates(self):
        """A static schedule has no update steps"""
        schedule = BaselineSchedule(kind=BaselineKind.STATIC, interval=3, total_train_iters=12)
        manager = BaselineStageManager(schedule)
        assert schedule.T == 0
        assert not any(manager.advance().prune for _ in range(12))

    def test_fraction_anneals(self):
        """alpha0 at t = 0, half at T / 2, zero at T"""
        schedule = BaselineSchedule(kind=BaselineKind.SET, interval=1, alpha0=0.3, total_train_iters=8)
        assert schedule.T == 6
        assert schedule.fraction_at(0) == pytest.approx(0.3)
        assert schedule.fraction_at(3) == pytest.approx(0.15)
        assert schedule.fraction_at(6) == pytest.approx(0.0)


class TestUpdates:
    """Drop / grow rules"""

    def test_rigl_conserves_and_separates(self, tiny_model, blobs):
        """RigL keeps every tensor's count; grown entries were inactive before the drop"""
        partition = init_partition(tiny_model, SparsityPlan(sparsity=0.5), np.random.default_rng(0))
        x, y = blobs.batch(0, 0)
        after, dropped, grown = rigl_update(tiny_model, partition, x, y, 0.25)
        assert after.per_layer_active() == partition.per_layer_active()
        for name, mask in partition.masks.items():
            assert dropped[name].size == grown[name].size == int(mask.active * 0.25)
            assert not np.intersect1d(dropped[name], grown[name]).size
            assert not mask.bits.reshape(-1)[grown[name]].any()

    def test_rigl_grows_largest_gradient(self):
        """The inactive entry with the largest |dL/dw| is grown"""
        layer = Dense(4, 1, np.random.default_rng(0), bias=False)
        model = Model([layer], (4,), LossKind.MSE)
        model.parameter("0.weight").data = np.array([[5.0, 0.1, 0.0, 0.0]], dtype=np.float32)
        bits = np.array([[True, True, False, False]])
        partition = ParamPartition({"0.weight": Mask(name="0.weight", granularity=Granularity.WEIGHT, bits=bits)})
        x = np.array([[1.0, 1.0, 3.0, 1.0]])
        after, dropped, grown = rigl_update(model, partition, x, np.array([[1.0]]), 0.5)
        assert dropped["0.weight"].tolist() == [1]
        assert grown["0.weight"].tolist() == [2]
        assert after.masks["0.weight"].bits.tolist() == [[True, False, True, False]]

    def test_set_growth_is_uniform(self):
        """SET grow counts over the inactive entries pass a chi-square test"""
        spec = ModelSpec(input_shape=[20], hidden=[10], num_classes=2, batchnorm=False)
        model = build_model(spec, np.random.default_rng(0))
        partition = init_partition(model, SparsityPlan(sparsity=0.5), np.random.default_rng(1))
        assert partition.total_count == 200
        inactive = np.flatnonzero(~partition.masks["0.weight"].bits.reshape(-1))
        rng = np.random.default_rng(7)
        counts = np.zeros(200)
        trials = 4000
        for _ in range(trials):
            _, dropped, grown = set_update(model, partition, 0.1, rng)
            assert grown["0.weight"].size == 10
            counts[grown["0.weight"]] += 1
        expected = trials * 10 / inactive.size
        assert counts.sum() == trials * 10
        assert counts[inactive].sum() == trials * 10
        chi2 = float(np.sum((counts[inactive] - expected) ** 2 / expected))
        # 99 degrees of freedom, p = 0.001
        assert chi2 < 148.2

    def test_channel_scope_rejected(self, tiny_model, blobs):
        """Neither baseline supports channel partitions"""
        partition = init_channel_partition(tiny_model, 0.5, np.random.default_rng(0))
        x, y = blobs.batch(0, 0)
        with pytest.raises(UnsupportedScopeError):
            rigl_update(tiny_model, partition, x, y, 0.3)
        with pytest.raises(UnsupportedScopeError):
            set_update(tiny_model, partition, 0.3, 0)


class TestBaselineTrainer:
    """Baseline runs on the shared training loop"""

    @pytest.mark.parametrize("kind", [BaselineKind.RIGL, BaselineKind.SET])
    def test_run_keeps_active_count(self, tiny_model, blobs, kind):
        """Six updates over 24 iterations; the active count never changes"""
        partition = init_partition(tiny_model, SparsityPlan(sparsity=0.5), np.random.default_rng(0))
        trainer = _baseline(tiny_model, partition, blobs, kind)
        result = trainer.run()
        grows = trainer.event_log.of_kind(EventKind.GROW)
        assert result.strategy == kind.value
        assert result.cycles == 6
        assert len(grows) == 6
        assert all(r.active_count == 40 for r in grows)
        assert trainer.partition.per_layer_active() == partition.per_layer_active()
        assert trainer.event_log.verify_chain()

    def test_rigl_charges_dense_gradient(self, tiny_model, blobs):
        """Every RigL update charges one dense-gradient batch"""
        partition = init_partition(tiny_model, SparsityPlan(sparsity=0.5), np.random.default_rng(0))
        result = _baseline(tiny_model, partition, blobs, BaselineKind.RIGL).run()
        assert result.flops.stage_samples["dense-grad"] == 6 * 32
        assert result.flops.stage_samples["explore"] == 0

    def test_rigl_scores_on_its_own_batch(self, tiny_model, blobs, monkeypatch):
        """The dense gradient comes from a seeded extra batch, not the iteration's training batch"""
        import iee_sparse_engine.baselines.strategies as strategies

        seen = []
        original = strategies.rigl_update

        def spy(model, partition, inputs, targets, fraction):
            seen.append((inputs.copy(), targets.copy()))
            return original(model, partition, inputs, targets, fraction)

        monkeypatch.setattr(strategies, "rigl_update", spy)
        partition = init_partition(tiny_model, SparsityPlan(sparsity=0.5), np.random.default_rng(0))
        trainer = _baseline(tiny_model, partition, blobs, BaselineKind.RIGL, seed=7)
        stream = blobs.stream(0)
        for _ in range(3):
            _, _, x, y = next(stream)
            plan = trainer.next_plan()
            trainer.apply_mask_events(plan, x, y)
        assert len(seen) == 1
        gx, gy = blobs.sample_batch(seed_stream(7, "rigl-batch", plan.t))
        np.testing.assert_array_equal(seen[0][0], gx)
        np.testing.assert_array_equal(seen[0][1], gy)
        assert not np.array_equal(seen[0][0], x)
        assert trainer.ledger.snapshot().stage_samples["dense-grad"] == 32

    def test_grown_weights_start_at_zero(self, tiny_model, blobs):
        """Right after an update the grown entries hold zero"""
        partition = init_partition(tiny_model, SparsityPlan(sparsity=0.5), np.random.default_rng(0))
        trainer = _baseline(tiny_model, partition, blobs, BaselineKind.SET)
        stream = blobs.stream(0)
        for _ in range(3):
            _, _, x, y = next(stream)
            plan = trainer.next_plan()
            before = trainer.partition.flat_bits()
            trainer.apply_mask_events(plan, x, y)
        after = trainer.partition.flat_bits()
        grown = np.flatnonzero(after & ~before)
        assert grown.size > 0
        weights = np.concatenate([tiny_model.parameter(n).data.reshape(-1) for n in trainer.partition.names()])
        assert np.all(weights[grown] == 0.0)

    def test_static_run_keeps_masks(self, tiny_model, blobs):
        """Static training never changes the partition"""
        partition = init_partition(tiny_model, SparsityPlan(sparsity=0.5), np.random.default_rng(0))
        trainer = _baseline(tiny_model, partition, blobs, BaselineKind.STATIC)
        result = trainer.run()
        assert result.cycles == 0
        assert not trainer.event_log.of_kind(EventKind.PRUNE)
        np.testing.assert_array_equal(trainer.partition.flat_bits(), partition.flat_bits())
