"""
Seeds, checkpoints, and run manifests for reproducible runs
"""

import json
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import blake3
import numpy as np
from pydantic import BaseModel, Field

from ..errors import StateError

CHECKPOINT_MAGIC = b"IEECKPT1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}


def _name_key(name: str) -> int:
    return int.from_bytes(blake3.blake3(name.encode()).digest()[:4], "little")


def seed_stream(root: int, name: str, *extra: int) -> np.random.Generator:
    """
    Independent generator for a named sub-stream of a root seed.

    The same (root, name, extra) always yields the same stream, and
    different names never share one, so e.g. the data order is unaffected
    by how many random draws initialization makes.
    """
    entropy = [int(root) & 0xFFFFFFFF, _name_key(name)] + [int(e) & 0xFFFFFFFF for e in extra]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def content_hash(data: Any) -> str:
    """BLAKE3 of the canonical JSON form of ``data``."""
    return blake3.blake3(json.dumps(data, sort_keys=True, default=str).encode()).hexdigest()


def package_hash() -> str:
    """BLAKE3 over the package's source files (path and bytes, sorted by path)."""
    root = Path(__file__).resolve().parents[1]
    hasher = blake3.blake3()
    for path in sorted(root.rglob("*.py")):
        hasher.update(str(path.relative_to(root)).encode())
        hasher.update(path.read_bytes())
    return hasher.hexdigest()


def save_checkpoint(
    path: str,
    arrays: Dict[str, np.ndarray],
    masks: Optional[Dict[str, np.ndarray]] = None,
    header: Optional[Dict[str, Any]] = None,
):
    """
    Write a checkpoint.

    Layout: magic, u32 header length, JSON header, then one record per
    tensor: u16 name length, name, u8 dtype code (0 float32, 1 float64,
    2 bit-packed mask), u8 ndim, u32 dims, u64 payload length, payload. All
    integers and floats are little-endian; mask bits are packed
    little-endian. The header carries the BLAKE3 digest of the records.

    Args:
        path: Output file
        arrays: Float tensors (parameters, buffers, velocities)
        masks: Boolean mask bits
        header: JSON-serializable run state
    """
    body = bytearray()
    entries = [(n, a, False) for n, a in arrays.items()] + [(n, m, True) for n, m in (masks or {}).items()]
    for name, array, is_mask in entries:
        array = np.asarray(array)
        if is_mask:
            code = 2
            payload = np.packbits(array.astype(bool).reshape(-1), bitorder="little").tobytes()
        else:
            dtype = np.dtype("<f8") if array.dtype == np.float64 else np.dtype("<f4")
            code = _CODES[dtype]
            payload = array.astype(dtype).tobytes()
        encoded = name.encode()
        body += struct.pack("<H", len(encoded)) + encoded
        body += struct.pack("<BB", code, array.ndim)
        body += struct.pack(f"<{array.ndim}I", *array.shape)
        body += struct.pack("<Q", len(payload)) + payload
    head = dict(header or {})
    head["body_digest"] = blake3.blake3(bytes(body)).hexdigest()
    head_bytes = json.dumps(head, sort_keys=True).encode()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + struct.pack("<I", len(head_bytes)) + head_bytes + bytes(body))


def load_checkpoint(path: str) -> Tuple[Dict[str, Any], Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """
    Read a checkpoint written by ``save_checkpoint``.

    Returns:
        (header, float arrays, boolean masks)

    Raises:
        StateError: bad magic or digest mismatch
    """
    raw = Path(path).read_bytes()
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise StateError(f"{path}: not a checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    (head_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    header = json.loads(raw[offset:offset + head_len].decode())
    offset += head_len
    body = raw[offset:]
    if blake3.blake3(body).hexdigest() != header.get("body_digest"):
        raise StateError(f"{path}: checkpoint digest mismatch")
    arrays: Dict[str, np.ndarray] = {}
    masks: Dict[str, np.ndarray] = {}
    pos = 0
    while pos < len(body):
        (name_len,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + name_len].decode()
        pos += name_len
        code, ndim = struct.unpack_from("<BB", body, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        (length,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        payload = body[pos:pos + length]
        pos += length
        if code == 2:
            count = int(np.prod(shape)) if shape else 1
            bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")[:count]
            masks[name] = bits.astype(bool).reshape(shape)
        else:
            arrays[name] = np.frombuffer(payload, dtype=_DTYPES[code]).reshape(shape).copy()
    return header, arrays, masks


class RunManifest(BaseModel):
    """What a run directory holds and how to reproduce it"""
    config_hash: str
    package_hash: str
    seed: int
    strategy: str
    files: Dict[str, str] = Field(default_factory=dict)
    final_metrics: Dict[str, Any] = Field(default_factory=dict)
    diverged: bool = False


class StateManager:
    """
    Owns one run directory: resolved config, event log path, checkpoints, manifest.
    """

    def __init__(self, run_dir: str, seed: int, config_data: Optional[Dict[str, Any]] = None):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.seed = seed
        self.config_data = config_data or {}
        self.config_hash = content_hash(self.config_data)

    @property
    def events_path(self) -> Path:
        return self.run_dir / "events.jsonl"

    @property
    def config_path(self) -> Path:
        return self.run_dir / "config.yaml"

    def checkpoint_path(self, iteration: int) -> Path:
        return self.run_dir / f"checkpoint_{iteration:08d}.ckpt"

    def latest_checkpoint(self) -> Optional[Path]:
        found = sorted(self.run_dir.glob("checkpoint_*.ckpt"))
        return found[-1] if found else None

    def write_manifest(self, strategy: str, final_metrics: Dict[str, Any], diverged: bool = False) -> RunManifest:
        """Write ``manifest.json`` listing every file of the run with its BLAKE3 digest."""
        files = {
            p.name: blake3.blake3(p.read_bytes()).hexdigest()
            for p in sorted(self.run_dir.iterdir())
            if p.is_file() and p.name != "manifest.json"
        }
        manifest = RunManifest(
            config_hash=self.config_hash,
            package_hash=package_hash(),
            seed=self.seed,
            strategy=strategy,
            files=files,
            final_metrics=final_metrics,
            diverged=diverged,
        )
        with open(self.run_dir / "manifest.json", "w", encoding="utf-8") as f:
            f.write(manifest.model_dump_json(indent=2))
        return manifest


def read_manifest(run_dir: str) -> RunManifest:
    with open(Path(run_dir) / "manifest.json", "r", encoding="utf-8") as f:
        return RunManifest(**json.load(f))
