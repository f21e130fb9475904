"""
Tests for the IEE engine, the event log, and checkpoint / seed handling
"""

import json
import os

import numpy as np
import pytest

from iee_sparse_engine.audit.event_log import (
    EventKind,
    EventLog,
    SnapshotPhase,
    pack_bits,
    read_events,
    verify_records,
)
from iee_sparse_engine.core.engine import IeeEngine, run_dir_for
from iee_sparse_engine.errors import ConfigError, StateError
from iee_sparse_engine.harness.config import parse_config
from iee_sparse_engine.reproducibility.state_manager import (
    StateManager,
    content_hash,
    load_checkpoint,
    read_manifest,
    save_checkpoint,
    seed_stream,
)


def _trace(records):
    return [(r.kind, r.iter, r.loss) for r in records]


class TestIeeEngine:
    """Test suite for the engine"""

    def test_engine_initialization(self, tiny_config):
        """Test engine builds the model, partition, and schedule from a config"""
        engine = IeeEngine(parse_config(tiny_config))
        assert engine.seed == 0
        assert engine.partition.active_count == 40
        assert engine.schedule.total_train_iters == 24
        assert engine.schedule.T == 3
        assert engine.get_status()["iteration"] == 0

    def test_run_writes_directory(self, tiny_config, temp_dir):
        """Test a run writes config.yaml, events.jsonl, and manifest.json"""
        config = parse_config(tiny_config)
        run_dir = run_dir_for(config, 0)
        assert run_dir == os.path.join(temp_dir, "tiny", "seed-0")
        result = IeeEngine(config, run_dir=run_dir).execute()
        assert result.iterations == 24
        assert result.cycles == 3
        assert result.active_count == 40
        for name in ("config.yaml", "events.jsonl", "manifest.json"):
            assert os.path.exists(os.path.join(run_dir, name))
        manifest = read_manifest(run_dir)
        assert manifest.seed == 0
        assert manifest.strategy == "iee"
        assert set(manifest.files) == {"config.yaml", "events.jsonl"}
        assert manifest.final_metrics["iterations"] == 24

    def test_status_and_audit_trail(self, tiny_config):
        """Test status and audit trail after a run"""
        engine = IeeEngine(parse_config(tiny_config))
        engine.execute()
        status = engine.get_status()
        assert status["iteration"] == 24
        assert status["t"] == 3
        assert status["stage"] == "post-period"
        trail = engine.get_audit_trail()
        assert trail["chain_valid"]
        assert trail["by_kind"]["grow"] == 3
        assert trail["by_kind"]["iteration"] == 24
        assert trail["path"] is None

    def test_same_seed_same_log(self, tiny_config, temp_dir):
        """Test the same (config, seed) reproduces the event log exactly"""
        config = parse_config(tiny_config)
        a = IeeEngine(config, run_dir=os.path.join(temp_dir, "a"))
        b = IeeEngine(config, run_dir=os.path.join(temp_dir, "b"))
        a.execute()
        b.execute()
        assert a.event_log.records[-1].entry_hash == b.event_log.records[-1].entry_hash
        other = IeeEngine(config, seed=1)
        other.execute()
        assert _trace(other.event_log.records) != _trace(a.event_log.records)

    def test_resume_reproduces_trajectory(self, tiny_config, temp_dir):
        """Test resuming from a mid-run checkpoint ends where the uninterrupted run ended"""
        tiny_config["log"] = {"checkpoint_every": 8}
        config = parse_config(tiny_config)
        run_dir = os.path.join(temp_dir, "run")
        full = IeeEngine(config, run_dir=run_dir)
        expected = full.execute()
        records = list(full.event_log.records)
        checkpoint = full.state_manager.checkpoint_path(8)
        assert checkpoint.exists()

        resumed = IeeEngine(config, run_dir=run_dir, resume_from=str(checkpoint))
        assert resumed.get_status()["iteration"] == 8
        result = resumed.execute()
        assert result.final_loss == expected.final_loss
        assert result.flops.cumulative == expected.flops.cumulative
        assert _trace(resumed.event_log.records) == _trace(records)
        assert resumed.event_log.verify_chain()

    def test_resume_latest(self, tiny_config, temp_dir):
        """Test "latest" picks the newest checkpoint and fails without one"""
        config = parse_config(tiny_config)
        with pytest.raises(StateError):
            IeeEngine(config, run_dir=os.path.join(temp_dir, "empty"), resume_from="latest")
        config = parse_config({**tiny_config, "log": {"checkpoint_every": 8}})
        run_dir = os.path.join(temp_dir, "run")
        IeeEngine(config, run_dir=run_dir).execute()
        engine = IeeEngine(config, run_dir=run_dir, resume_from="latest")
        assert engine.get_status()["iteration"] == 24

    def test_warm_start(self, tiny_config, temp_dir):
        """Test init_from loads parameters and, optionally, masks"""
        config = parse_config({**tiny_config, "log": {"checkpoint_every": 24}})
        run_dir = os.path.join(temp_dir, "run")
        source = IeeEngine(config, run_dir=run_dir)
        source.execute()
        path = str(source.state_manager.checkpoint_path(24))
        warm = IeeEngine(parse_config({**tiny_config, "seeds": [5]}), init_from=path, init_masks=True)
        np.testing.assert_array_equal(warm.partition.flat_bits(), source.trainer.partition.flat_bits())
        np.testing.assert_allclose(
            warm.model.parameter("0.weight").data, source.model.parameter("0.weight").data
        )

    def test_warm_start_validates_masks(self, tiny_config, temp_dir):
        """Test masks that do not fit the model are rejected on init_from"""
        source = IeeEngine(parse_config(tiny_config))
        arrays = {f"param/{k}": v for k, v in source.model.state_dict().items()}
        path = os.path.join(temp_dir, "resized.ckpt")
        save_checkpoint(path, arrays, {"mask/0.weight": np.ones(30, dtype=bool), "mask/2.weight": np.ones((6, 8), dtype=bool)}, {})
        IeeEngine(parse_config(tiny_config), init_from=path)
        with pytest.raises(StateError, match="0.weight"):
            IeeEngine(parse_config(tiny_config), init_from=path, init_masks=True)

    def test_input_shape_mismatch(self, tiny_config):
        """Test a model that does not fit the data is a configuration error"""
        tiny_config["model"]["input_shape"] = [5]
        with pytest.raises(ConfigError):
            IeeEngine(parse_config(tiny_config))

    @pytest.mark.parametrize("strategy", ["rigl", "set", "static"])
    def test_baseline_strategies(self, tiny_config, strategy):
        """Test baselines run through the same engine"""
        engine = IeeEngine(parse_config({**tiny_config, "strategy": strategy, "baseline": {"interval": 3}}))
        result = engine.execute()
        assert result.strategy == strategy
        assert result.active_count == 40
        assert result.cycles == (0 if strategy == "static" else 6)


class TestEventLog:
    """Test suite for the hash-chained event log"""

    def test_chain_integrity(self):
        """Test a fresh chain verifies"""
        log = EventLog()
        for i in range(3):
            log.emit(EventKind.ITERATION, iter=i + 1, loss=0.5)
        assert [r.seq for r in log.records] == [1, 2, 3]
        assert log.records[1].previous_hash == log.records[0].entry_hash
        assert log.verify_chain()

    def test_tampering_detected(self, temp_dir):
        """Test editing a written record breaks the chain"""
        path = os.path.join(temp_dir, "events.jsonl")
        log = EventLog(path)
        for i in range(3):
            log.emit(EventKind.ITERATION, iter=i + 1, loss=0.5)
        with open(path, encoding="utf-8") as f:
            lines = f.readlines()
        record = json.loads(lines[1])
        record["loss"] = 0.25
        lines[1] = json.dumps(record) + "\n"
        with open(path, "w", encoding="utf-8") as f:
            f.writelines(lines)
        assert not verify_records(list(read_events(path)))

    def test_file_backed_log_continues(self, temp_dir):
        """Test reopening a log file continues its chain"""
        path = os.path.join(temp_dir, "events.jsonl")
        log = EventLog(path)
        log.emit(EventKind.RUN_START)
        log.emit(EventKind.ITERATION, iter=1)
        reopened = EventLog(path)
        record = reopened.emit(EventKind.ITERATION, iter=2)
        assert record.seq == 3
        assert reopened.verify_chain()

    def test_truncate_after(self, temp_dir):
        """Test truncation rewinds the file and the chain"""
        path = os.path.join(temp_dir, "events.jsonl")
        log = EventLog(path)
        for i in range(4):
            log.emit(EventKind.ITERATION, iter=i + 1)
        log.truncate_after(2)
        assert log.last_seq == 2
        log.emit(EventKind.ITERATION, iter=3)
        assert len(list(read_events(path))) == 3
        assert log.verify_chain()

    def test_snapshot_bits(self):
        """Test snapshot payloads unpack to the logged bitset"""
        bits = np.array([True, False, False, True, True, False, True, False, True])
        log = EventLog()
        log.emit(EventKind.SNAPSHOT, t=1, phase=SnapshotPhase.AFTER_GROW, snapshot=pack_bits(bits), snapshot_size=9)
        assert log.snapshots(SnapshotPhase.AFTER_GROW)[0].bits().tolist() == bits.tolist()
        assert not log.snapshots(SnapshotPhase.AFTER_PRUNE)


class TestStateManager:
    """Test suite for checkpoints, seeds, and manifests"""

    def test_checkpoint_round_trip(self, temp_dir):
        """Test arrays, masks, and header survive a checkpoint"""
        path = os.path.join(temp_dir, "c.ckpt")
        weights = np.arange(6, dtype=np.float32).reshape(2, 3)
        mask = np.array([[True, False, True], [False, False, True]])
        save_checkpoint(path, {"param/w": weights, "velocity/w": weights.astype(np.float64)}, {"mask/w": mask}, {"i": 7})
        header, arrays, masks = load_checkpoint(path)
        assert header["i"] == 7
        np.testing.assert_array_equal(arrays["param/w"], weights)
        assert arrays["velocity/w"].dtype == np.float64
        np.testing.assert_array_equal(masks["mask/w"], mask)

    def test_bad_magic(self, temp_dir):
        """Test a file without the checkpoint magic is rejected"""
        path = os.path.join(temp_dir, "c.ckpt")
        with open(path, "wb") as f:
            f.write(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(StateError, match="magic"):
            load_checkpoint(path)

    def test_digest_mismatch(self, temp_dir):
        """Test a corrupted payload is rejected"""
        path = os.path.join(temp_dir, "c.ckpt")
        save_checkpoint(path, {"param/w": np.ones(8, dtype=np.float32)})
        with open(path, "rb") as f:
            raw = bytearray(f.read())
        raw[-1] ^= 0xFF
        with open(path, "wb") as f:
            f.write(bytes(raw))
        with pytest.raises(StateError, match="digest"):
            load_checkpoint(path)

    def test_seed_streams(self):
        """Test named sub-streams are reproducible and independent"""
        a = seed_stream(0, "shuffle", 1).random(4)
        np.testing.assert_array_equal(a, seed_stream(0, "shuffle", 1).random(4))
        assert not np.array_equal(a, seed_stream(0, "shuffle", 2).random(4))
        assert not np.array_equal(a, seed_stream(0, "init", 1).random(4))
        assert not np.array_equal(a, seed_stream(1, "shuffle", 1).random(4))

    def test_manager_paths_and_manifest(self, temp_dir):
        """Test run-directory layout and manifest digests"""
        manager = StateManager(os.path.join(temp_dir, "run"), 3, {"name": "x"})
        assert manager.checkpoint_path(12).name == "checkpoint_00000012.ckpt"
        assert manager.latest_checkpoint() is None
        manager.config_path.write_text("name: x\n", encoding="utf-8")
        manifest = manager.write_manifest("iee", {"iterations": 1})
        assert manifest.config_hash == content_hash({"name": "x"})
        assert list(manifest.files) == ["config.yaml"]
        assert read_manifest(str(manager.run_dir)).seed == 3
