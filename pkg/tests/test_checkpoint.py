import numpy as np
import pytest

from rmpc.checkpoint import (MAGIC, CheckpointDigestError, CheckpointFormatError, CheckpointShapeError,
                             CheckpointTruncatedError, CheckpointVersionError, config_digest, load_checkpoint,
                             save_checkpoint)
from rmpc.policy import Policy, PolicyArchitecture


@pytest.fixture
def saved(tmp_path):
    pol = Policy(PolicyArchitecture(hidden=5, depth=2, output_scale=(0.2,)), 4, 1, 1, np.arange(5.0), np.ones(5) * 2)
    th = pol.init(4)
    path = save_checkpoint(tmp_path / "p.rmpc", pol, th, config_digest({"a": 1}), iteration=17)
    return pol, th, path


def test_roundtrip(saved):
    pol, th, path = saved
    p2, th2, header = load_checkpoint(path, expected_arch=pol.arch, expected_digest=config_digest({"a": 1}))
    np.testing.assert_array_equal(th2, th)
    assert header["iteration"] == 17 and p2.n_params == pol.n_params
    np.testing.assert_array_equal(p2.in_shift, pol.in_shift)
    assert path.read_bytes()[:8] == MAGIC


def test_byte_identical(saved, tmp_path):
    pol, th, path = saved
    other = save_checkpoint(tmp_path / "q.rmpc", pol, th, config_digest({"a": 1}), iteration=17)
    assert other.read_bytes() == path.read_bytes()


def test_payload_is_little_endian_f64(saved):
    pol, th, path = saved
    data = path.read_bytes()
    np.testing.assert_array_equal(np.frombuffer(data[-8 * th.size:], "<f8"), th)


def test_arch_mismatch(saved):
    _, _, path = saved
    with pytest.raises(CheckpointShapeError):
        load_checkpoint(path, expected_arch=PolicyArchitecture(hidden=6, depth=2, output_scale=(0.2,)))


def test_digest_mismatch(saved):
    with pytest.raises(CheckpointDigestError):
        load_checkpoint(saved[2], expected_digest="0" * 64)


def test_truncated_and_trailing(saved):
    path = saved[2]
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(CheckpointTruncatedError):
        load_checkpoint(path)
    path.write_bytes(data + b"\x00" * 8)
    with pytest.raises(CheckpointTruncatedError):
        load_checkpoint(path)
    path.write_bytes(data[:10])
    with pytest.raises(CheckpointTruncatedError):
        load_checkpoint(path)


def test_corrupted_payload(saved):
    path = saved[2]
    data = bytearray(path.read_bytes())
    data[-1] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointDigestError):
        load_checkpoint(path)


def test_bad_magic_and_version(saved):
    path = saved[2]
    data = path.read_bytes()
    path.write_bytes(b"NOTACKPT" + data[8:])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)
    path.write_bytes(data[:8] + (2).to_bytes(4, "little") + data[12:])
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_wrong_theta_shape(tmp_path, saved):
    pol, th, _ = saved
    with pytest.raises(CheckpointShapeError):
        save_checkpoint(tmp_path / "x.rmpc", pol, th[:-1])
