"""Policy checkpoint files.

Layout (all integers little-endian)::

    0       8 bytes   magic b"RMPCCKPT"
    8       uint32    format version (currently 1)
    12      uint32    header length H in bytes
    16      H bytes   UTF-8 JSON header, keys sorted
    16+H    P * 8     flat parameter vector, float64 little-endian

The header records the architecture, input/output dimensions, input
normalisation, parameter count, the SHA-256 of the parameter bytes, the
training-config digest and the iteration count. Files are byte-identical for
identical inputs.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from rmpc.policy import Policy, PolicyArchitecture

MAGIC = b"RMPCCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


class CheckpointError(RuntimeError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointDigestError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def config_digest(obj) -> str:
    """SHA-256 of the canonical JSON form of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serialisable: {type(o)}")


def arch_dict(arch: PolicyArchitecture) -> dict:
    return {"hidden": arch.hidden, "depth": arch.depth, "cell": arch.cell,
            "output_scale": [float(s) for s in arch.output_scale]}


def save_checkpoint(path, policy: Policy, theta, config_digest: str = "", iteration: int = 0, extra=None):
    theta = np.ascontiguousarray(theta, dtype="<f8")
    if theta.shape != (policy.n_params,):
        raise CheckpointShapeError(f"theta has shape {theta.shape}, policy expects ({policy.n_params},)")
    payload = theta.tobytes()
    header = {
        "format_version": FORMAT_VERSION,
        "arch": arch_dict(policy.arch),
        "state_dim": policy.state_dim,
        "ref_dim": policy.ref_dim,
        "out_dim": policy.out_dim,
        "in_shift": policy.in_shift.tolist(),
        "in_scale": policy.in_scale.tolist(),
        "n_params": policy.n_params,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "config_digest": config_digest,
        "iteration": int(iteration),
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":"), default=_jsonable).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)
    tmp.replace(path)
    return path


def load_checkpoint(path, expected_arch: PolicyArchitecture | None = None, expected_digest: str | None = None):
    """Returns ``(policy, theta, header)``."""
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointTruncatedError(f"{path}: file too short for a checkpoint prefix")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(data) < _PREFIX.size + hlen:
        raise CheckpointTruncatedError(f"{path}: header cut short")
    try:
        header = json.loads(data[_PREFIX.size : _PREFIX.size + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header ({exc})") from exc
    if header.get("format_version") != version:
        raise CheckpointVersionError(f"{path}: header/prefix version disagree")
    payload = data[_PREFIX.size + hlen :]
    if len(payload) != 8 * header["n_params"]:
        raise CheckpointTruncatedError(
            f"{path}: expected {8 * header['n_params']} parameter bytes, found {len(payload)}")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointDigestError(f"{path}: parameter bytes do not match their digest")
    if expected_digest is not None and header["config_digest"] != expected_digest:
        raise CheckpointDigestError(f"{path}: trained with config digest {header['config_digest'][:12]}, "
                                    f"expected {expected_digest[:12]}")
    a = header["arch"]
    arch = PolicyArchitecture(hidden=a["hidden"], depth=a["depth"], cell=a["cell"],
                              output_scale=tuple(a["output_scale"]))
    if expected_arch is not None and arch_dict(expected_arch) != arch_dict(arch):
        raise CheckpointShapeError(f"{path}: architecture {a} differs from requested {arch_dict(expected_arch)}")
    policy = Policy(arch, header["state_dim"], header["ref_dim"], header["out_dim"],
                    header["in_shift"], header["in_scale"])
    if policy.n_params != header["n_params"]:
        raise CheckpointShapeError(f"{path}: parameter count does not match architecture")
    theta = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return policy, theta, header
