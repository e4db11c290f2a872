"""Versioned binary checkpoint container ("BFMC").

Layout, all integers little-endian:

    bytes 0..3    magic b"BFMC"
    bytes 4..7    format version (u32)
    bytes 8..11   header length in bytes (u32)
    header        UTF-8 JSON: kind, embodiment_hash, tensor table
                  (name / shape / dtype "f32"), normalization stats,
                  free-form training metadata
    payload       the tensors' raw bytes, row-major float32,
                  concatenated in table order

Round trips are bit-exact: tensors are stored as their literal float32
bytes, and the normalizer's float64 statistics ride in the header as
base64-encoded raw bytes.  Loading validates magic, version, and the
embodiment hash before anything touches a rollout, so a checkpoint from a
different embodiment fails fast.
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .cvae import BfmModel, BfmSpec
from .embodiment import EmbodimentSpec, default_embodiment
from .nets import ParamStore
from .normalization import RunningNorm
from .ppo import ActorCriticSpec
from .proxy import ProxyController, ProxyTrainResult
from .residual import ResidualTrainResult

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "FORMAT_VERSION",
    "KINDS",
    "embodiment_hash",
    "load_bfm",
    "load_checkpoint",
    "load_proxy",
    "load_residual",
    "save_bfm",
    "save_checkpoint",
    "save_proxy",
    "save_residual",
]

MAGIC = b"BFMC"
FORMAT_VERSION = 1
KINDS = ("proxy", "bfm", "residual")


class CheckpointError(ValueError):
    """Structural or compatibility failure in a checkpoint file."""


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not hashable as part of an embodiment: {type(o)}")


def embodiment_hash(spec: EmbodimentSpec | None = None) -> str:
    """Stable digest of every constant defining the embodiment."""
    spec = spec or default_embodiment()
    blob = json.dumps(asdict(spec), sort_keys=True, default=_json_default)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    kind: str
    tensors: dict[str, np.ndarray]
    norm: RunningNorm | None
    metadata: dict
    embodiment_hash: str
    version: int = FORMAT_VERSION


def _norm_to_header(norm: RunningNorm | None) -> dict | None:
    if norm is None:
        return None
    return {
        "mean": base64.b64encode(np.ascontiguousarray(norm.mean, dtype="<f8").tobytes()).decode(),
        "m2": base64.b64encode(np.ascontiguousarray(norm.m2, dtype="<f8").tobytes()).decode(),
        "count": repr(float(norm.count)),
        "frozen": bool(norm.frozen),
    }


def _norm_from_header(blob: dict | None) -> RunningNorm | None:
    if blob is None:
        return None
    mean = np.frombuffer(base64.b64decode(blob["mean"]), dtype="<f8").copy()
    m2 = np.frombuffer(base64.b64decode(blob["m2"]), dtype="<f8").copy()
    return RunningNorm(mean=mean, m2=m2, count=float(blob["count"]), frozen=blob["frozen"])


def save_checkpoint(
    path: str | Path,
    kind: str,
    tensors: ParamStore | dict[str, np.ndarray],
    norm: RunningNorm | None = None,
    metadata: dict | None = None,
    spec: EmbodimentSpec | None = None,
) -> None:
    if kind not in KINDS:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}; expected one of {KINDS}")
    if isinstance(tensors, ParamStore):
        tensors = {name: tensors[name] for name in tensors.names()}

    table = []
    payloads = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype != np.float32:
            raise CheckpointError(
                f"tensor {name!r} has dtype {arr.dtype}; the table stores f32 only"
            )
        table.append({"name": name, "shape": list(arr.shape), "dtype": "f32"})
        payloads.append(arr.astype("<f4", copy=False).tobytes())

    header = {
        "kind": kind,
        "embodiment_hash": embodiment_hash(spec),
        "tensors": table,
        "norm": _norm_to_header(norm),
        "metadata": metadata or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for blob in payloads:
            f.write(blob)


def load_checkpoint(
    path: str | Path,
    spec: EmbodimentSpec | None = None,
    expect_kind: str | None = None,
) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a BFMC checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})"
        )
    (header_len,) = struct.unpack_from("<I", raw, 8)
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None

    kind = header.get("kind")
    if kind not in KINDS:
        raise CheckpointError(f"{path}: unknown kind {kind!r}")
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"{path}: kind {kind!r}, expected {expect_kind!r}")

    expected_hash = embodiment_hash(spec)
    if header["embodiment_hash"] != expected_hash:
        raise CheckpointError(
            f"{path}: embodiment hash {header['embodiment_hash'][:12]}… does not "
            f"match this embodiment ({expected_hash[:12]}…); refusing to load"
        )

    tensors: dict[str, np.ndarray] = {}
    offset = 12 + header_len
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + n_bytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload at tensor {entry['name']!r}")
        flat = np.frombuffer(raw, dtype="<f4", count=n_bytes // 4, offset=offset)
        tensors[entry["name"]] = flat.reshape(shape).copy()
        offset += n_bytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after payload")

    return Checkpoint(
        kind=kind, tensors=tensors, norm=_norm_from_header(header["norm"]),
        metadata=header["metadata"], embodiment_hash=header["embodiment_hash"],
        version=version,
    )


# ---------------------------------------------------------------------------
# typed wrappers
# ---------------------------------------------------------------------------
def save_proxy(
    path: str | Path,
    proxy: ProxyController | ProxyTrainResult,
    spec: EmbodimentSpec | None = None,
    metadata: dict | None = None,
) -> None:
    controller = proxy.controller() if isinstance(proxy, ProxyTrainResult) else proxy
    md = {"ac_spec": asdict(controller.ac_spec), **(metadata or {})}
    save_checkpoint(path, "proxy", controller.params, controller.norm, md, spec)


def load_proxy(path: str | Path, spec: EmbodimentSpec | None = None) -> ProxyController:
    ckpt = load_checkpoint(path, spec, expect_kind="proxy")
    md = ckpt.metadata["ac_spec"]
    ac_spec = ActorCriticSpec(**{**md, "hidden": tuple(md["hidden"])})
    return ProxyController(
        spec or default_embodiment(), ac_spec,
        ParamStore(ckpt.tensors, check=False), ckpt.norm,
    )


def save_bfm(
    path: str | Path,
    model: BfmModel,
    spec: EmbodimentSpec | None = None,
    metadata: dict | None = None,
) -> None:
    md = {"bfm_spec": asdict(model.spec), **(metadata or {})}
    save_checkpoint(path, "bfm", model.params, model.norm, md, spec)


def load_bfm(path: str | Path, spec: EmbodimentSpec | None = None) -> BfmModel:
    ckpt = load_checkpoint(path, spec, expect_kind="bfm")
    md = ckpt.metadata["bfm_spec"]
    bfm_spec = BfmSpec(**{**md, "hidden": tuple(md["hidden"])})
    return BfmModel(
        spec=bfm_spec, params=ParamStore(ckpt.tensors, check=False), norm=ckpt.norm
    )


def save_residual(
    path: str | Path,
    result: ResidualTrainResult,
    spec: EmbodimentSpec | None = None,
    metadata: dict | None = None,
) -> None:
    md = {
        "ac_spec": asdict(result.ac_spec),
        "arm": result.arm,
        "delta_max": result.delta_max,
        **(metadata or {}),
    }
    save_checkpoint(path, "residual", result.params, result.norm, md, spec)


def load_residual(
    path: str | Path,
    bfm: BfmModel | None = None,
    spec: EmbodimentSpec | None = None,
) -> ResidualTrainResult:
    ckpt = load_checkpoint(path, spec, expect_kind="residual")
    md = ckpt.metadata["ac_spec"]
    ac_spec = ActorCriticSpec(**{**md, "hidden": tuple(md["hidden"])})
    arm = ckpt.metadata["arm"]
    if arm == "residual" and bfm is None:
        raise CheckpointError("residual-arm checkpoint needs its frozen BFM to act")
    return ResidualTrainResult(
        arm=arm, ac_spec=ac_spec, params=ParamStore(ckpt.tensors, check=False),
        norm=ckpt.norm, bfm=bfm if arm == "residual" else None,
        delta_max=float(ckpt.metadata["delta_max"]),
        curves=[], env_steps=0, steps_to_target=None,
    )
