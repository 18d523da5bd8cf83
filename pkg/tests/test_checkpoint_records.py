import struct

import numpy as np
import pytest

from monitored_fermions.checkpoint import MAGIC, CheckpointPolicy, read_checkpoint, write_checkpoint
from monitored_fermions.exceptions import TrajectoryInterrupted
from monitored_fermions.records import TrajectoryRecord


def test_checkpoint_roundtrip_is_exact(tmp_path, orbitals):
    U = orbitals(10, 5, seed=8)
    rng = np.random.Generator(np.random.PCG64(123))
    rng.random(7)
    state = rng.bit_generator.state
    write_checkpoint(tmp_path / "c.bin", U, extents=(10,), time=3.25, rng_state=state, extra={"k": [1, 2]})
    V, hdr = read_checkpoint(tmp_path / "c.bin")
    assert V.tobytes() == U.astype(np.complex128).tobytes()
    assert hdr["L"] == 10 and hdr["N"] == 5 and hdr["dimension"] == 1 and hdr["time"] == 3.25
    assert hdr["extra"] == {"k": [1, 2]}
    r2 = np.random.Generator(np.random.PCG64())
    r2.bit_generator.state = hdr["rng_state"]
    assert r2.random() == rng.random()


def test_checkpoint_layout_little_endian(tmp_path):
    U = np.array([[1 + 2j], [3 - 4j]])
    write_checkpoint(tmp_path / "c.bin", U, extents=(2,), time=0.0, rng_state={})
    raw = (tmp_path / "c.bin").read_bytes()
    assert raw[:8] == MAGIC
    version, n = struct.unpack("<IQ", raw[8:20])
    assert version == 1
    payload = raw[20 + n :]
    assert struct.unpack("<4d", payload) == (1.0, 2.0, 3.0, -4.0)


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        read_checkpoint(tmp_path / "x.bin")
    write_checkpoint(tmp_path / "t.bin", np.eye(4, 2), extents=(4,), time=0.0, rng_state={})
    raw = (tmp_path / "t.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_checkpoint(tmp_path / "t.bin")


def test_policy_cadence_and_halt(tmp_path):
    assert CheckpointPolicy.cadence(5.0) == 1.0
    assert CheckpointPolicy.cadence(64.0) == 6.4
    pol = CheckpointPolicy(tmp_path / "p.bin", 1.0, halt_after=2)
    pol.save(np.eye(2, 1), extents=(2,), time=1.0, rng_state={})
    with pytest.raises(TrajectoryInterrupted):
        pol.save(np.eye(2, 1), extents=(2,), time=2.0, rng_state={})
    assert pol.exists()
    pol.clear()
    assert not pol.exists()


def test_record_save_load_roundtrip(tmp_path):
    rec = TrajectoryRecord(3, 2**63 + 5, "QSD", 0.5, (8,), 8.0)
    rec.add(4.0, {"entropy": 0.7, "profile": np.array([-0.1, -0.02, -0.01, -0.005]), "gab": 0.01, "i2": 0.05})
    rec.add(8.0, {"entropy": 0.9, "profile": np.array([-0.2, -0.03, -0.01, -0.004])})
    rec.n_events = 160
    rec.save(tmp_path / "r.npz")
    back = TrajectoryRecord.load(tmp_path / "r.npz")
    assert back.seed == 2**63 + 5 and back.trajectory_id == 3 and back.extents == (8,)
    a, b = rec.arrays(), back.arrays()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    assert np.isnan(b["gab"][1])


def test_record_snapshot_payload_roundtrip():
    rec = TrajectoryRecord(0, 1, "PM", 1.0, (4,), 4.0)
    rec.add(2.0, {"entropy": 0.1, "profile": np.array([-0.1, -0.2])})
    other = TrajectoryRecord(0, 1, "PM", 1.0, (4,), 4.0)
    other.restore_snapshots(rec.snapshot_payload())
    assert other.resumed
    np.testing.assert_array_equal(other.arrays()["profile"], rec.arrays()["profile"])


def test_failed_record():
    rec = TrajectoryRecord(0, 1, "PM", 1.0, (4,), 4.0)
    rec.fail("rank collapse")
    assert not rec.completed and rec.reason == "rank collapse"
