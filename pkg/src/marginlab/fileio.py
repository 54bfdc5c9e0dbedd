"""File formats: logits containers, audit JSONL, checkpoints, reports.

Formats are designed for bit-exact round trips:

* LogitsContainer: one JSON header line + a raw little-endian payload
  (``f32`` or ``bf16``).  bf16 payloads store the top 16 bits of the
  rounded float32 pattern and widen exactly on read.
* AuditFile: JSONL; a header line followed by one margin record per
  line.  Floats are serialized with ``repr``, which round-trips float64
  exactly.
* Checkpoint: one JSON header line (config, seed, step, parameter
  manifest) + concatenated raw little-endian float64 blocks.

All writes are atomic (temp file in the target directory + rename).
The ``created`` stamp honors the ``SOURCE_DATE_EPOCH`` convention so
that repeated runs with identical seeds produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from dataclasses import asdict, is_dataclass
from enum import Enum

import numpy as np

from .errors import DataError, UsageError
from .margins import MarginRecord
from .precision import emulate_bf16
from .toylm import ToyLm, ToyLmConfig

__all__ = [
    "atomic_write_bytes",
    "atomic_write_text",
    "created_stamp",
    "file_digest",
    "write_logits",
    "read_logits",
    "write_audit",
    "read_audit",
    "save_checkpoint",
    "load_checkpoint",
    "write_report_json",
    "write_metrics_csv",
    "to_jsonable",
    "AUDIT_VERSION",
    "CHECKPOINT_VERSION",
]

AUDIT_VERSION = 1
CHECKPOINT_VERSION = 1

_LOGITS_DTYPES = {"f32": 4, "bf16": 2}


def atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-marginlab-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def created_stamp() -> str:
    """ISO-8601 UTC stamp; SOURCE_DATE_EPOCH overrides the wall clock so
    reproducible pipelines can emit identical bytes."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return "sha256:" + h.hexdigest()


# ---------------------------------------------------------------------------
# logits container
# ---------------------------------------------------------------------------


def write_logits(
    path: str,
    matrix: np.ndarray,
    dtype: str = "f32",
    corpus_id: str = "",
    model_id: str = "",
) -> None:
    arr = np.asarray(matrix)
    if arr.ndim != 2:
        raise UsageError(f"logits container holds a 2-D matrix, got shape {arr.shape}")
    if dtype not in _LOGITS_DTYPES:
        raise UsageError(f"dtype must be one of {sorted(_LOGITS_DTYPES)}")
    header = {
        "rows": int(arr.shape[0]),
        "cols": int(arr.shape[1]),
        "dtype": dtype,
        "layout": "row-major-le",
        "corpus_id": corpus_id,
        "model_id": model_id,
    }
    if dtype == "f32":
        payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    else:
        rounded = emulate_bf16(np.asarray(arr, dtype=np.float32))
        bits = rounded.view(np.uint32) >> np.uint32(16)
        payload = bits.astype("<u2").tobytes()
    atomic_write_bytes(
        path, json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + payload
    )


def read_logits(path: str) -> tuple[np.ndarray, dict]:
    """Returns (float32 matrix, header).  bf16 payloads widen exactly."""
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: unparseable header: {e}") from e
    for key in ("rows", "cols", "dtype", "layout"):
        if key not in header:
            raise DataError(f"{path}: header missing {key!r}")
    if header["layout"] != "row-major-le":
        raise DataError(f"{path}: unsupported layout {header['layout']!r}")
    dtype = header["dtype"]
    if dtype not in _LOGITS_DTYPES:
        raise DataError(f"{path}: unsupported dtype {dtype!r}")
    rows, cols = int(header["rows"]), int(header["cols"])
    payload = raw[nl + 1 :]
    expected = rows * cols * _LOGITS_DTYPES[dtype]
    if len(payload) != expected:
        raise DataError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    if rows * cols == 0:
        raise DataError(f"{path}: empty logits container")
    if dtype == "f32":
        matrix = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()
    else:
        bits = np.frombuffer(payload, dtype="<u2").astype(np.uint32) << np.uint32(16)
        matrix = bits.view(np.float32).reshape(rows, cols).copy()
    return matrix, header


# ---------------------------------------------------------------------------
# audit JSONL
# ---------------------------------------------------------------------------


def write_audit(
    path: str,
    records: list[MarginRecord],
    dtype: str = "f32",
    tau: float | None = None,
    seed: int | None = None,
    created: str | None = None,
) -> None:
    header = {
        "version": AUDIT_VERSION,
        "count": len(records),
        "dtype": dtype,
        "tau": tau,
        "created": created if created is not None else created_stamp(),
        "seed": seed,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for r in records:
        lines.append(
            json.dumps(
                {
                    "position_index": r.position_index,
                    "target_id": r.target_id,
                    "top1_id": r.top1_id,
                    "top2_id": r.top2_id,
                    "margin": r.margin,
                    "correct": r.correct,
                },
                sort_keys=True,
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_audit(path: str) -> tuple[list[MarginRecord], dict]:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln]
    if not lines:
        raise DataError(f"{path}: empty audit file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: unparseable audit header: {e}") from e
    if header.get("version") != AUDIT_VERSION:
        raise DataError(
            f"{path}: audit version {header.get('version')!r} is not {AUDIT_VERSION}"
        )
    if header.get("count") != len(lines) - 1:
        raise DataError(
            f"{path}: header count {header.get('count')} does not match "
            f"{len(lines) - 1} record lines"
        )
    records = []
    for i, ln in enumerate(lines[1:]):
        try:
            obj = json.loads(ln)
            records.append(
                MarginRecord(
                    position_index=int(obj["position_index"]),
                    target_id=int(obj["target_id"]),
                    top1_id=int(obj["top1_id"]),
                    top2_id=int(obj["top2_id"]),
                    margin=float(obj["margin"]),
                    correct=bool(obj["correct"]),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: bad record on line {i + 2}: {e}") from e
    return records, header


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str, model: ToyLm, step: int = 0, train_config: dict | None = None) -> None:
    manifest = [
        {"name": name, "shape": list(p.values.shape), "dtype": "<f8"}
        for name, p in model.params.items()
    ]
    header = {
        "version": CHECKPOINT_VERSION,
        "kind": "marginlab-checkpoint",
        "config": model.config.to_dict(),
        "seed": model.seed,
        "step": int(step),
        "train_config": train_config,
        "params": manifest,
    }
    blob = bytearray(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
    for name, p in model.params.items():
        blob += np.ascontiguousarray(p.values, dtype="<f8").tobytes()
    atomic_write_bytes(path, bytes(blob))


def load_checkpoint(path: str) -> tuple[ToyLm, dict]:
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: unparseable checkpoint header: {e}") from e
    if header.get("kind") != "marginlab-checkpoint":
        raise DataError(f"{path}: not a marginlab checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise DataError(
            f"{path}: checkpoint version {header.get('version')!r} is not "
            f"{CHECKPOINT_VERSION}"
        )
    config = ToyLmConfig(**header["config"])
    model = ToyLm(config, seed=int(header["seed"]))
    offset = nl + 1
    for entry in header["params"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        n_bytes = int(np.prod(shape)) * 8
        block = raw[offset : offset + n_bytes]
        if len(block) != n_bytes:
            raise DataError(f"{path}: truncated parameter block {name!r}")
        if name not in model.params or model.params[name].values.shape != shape:
            raise DataError(f"{path}: unexpected parameter {name!r} of shape {shape}")
        model.params[name].values = (
            np.frombuffer(block, dtype="<f8").reshape(shape).copy()
        )
        offset += n_bytes
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes")
    return model, header


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def to_jsonable(obj):
    """Dataclasses, enums, numpy scalars and arrays to plain JSON types."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(asdict(obj))
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj]
    return obj


def write_report_json(path: str, report: dict) -> None:
    atomic_write_text(
        path, json.dumps(to_jsonable(report), sort_keys=True, indent=2) + "\n"
    )


def write_metrics_csv(path: str, metrics) -> None:
    lines = ["step,ce,mrp,median_margin"]
    for m in metrics:
        lines.append(f"{m.step},{m.ce!r},{m.mrp!r},{m.median_margin!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")
