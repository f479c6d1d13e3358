"""On-disk containers: the DMX tensor format, dataset manifests, and plans.

A dataset directory holds `manifest.json` plus raw little-endian tensor
files; nothing in it depends on any particular ML runtime, so adapters in
any ecosystem can emit it. Values are stored in single precision and
upcast to float64 the moment they are loaded. Every invariant is enforced
at load time: no other module ever sees an invalid example.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    Dataset,
    Example,
    Role,
    SeqProbs,
    SpanLogProbs,
    TaskKind,
    TokenProbs,
    WordAlignment,
    pool_representation,
)
from .errors import (
    BadMagicError,
    InvariantViolation,
    ParseError,
    TruncatedTensorError,
    VersionMismatchError,
)
from .selection import SelectionPlan

FORMAT_VERSION = 1
MAGIC = b"DMX1"
_ELEM_F32 = 1
_ELEM_U32 = 2
_MAX_NDIM = 8

MANIFEST_NAME = "manifest.json"
EMBEDDINGS_NAME = "embeddings.dmx"
PAYLOAD_NAME = "payload.dmx"
ALIGNMENTS_NAME = "alignments.dmx"


def fnv1a64(data: bytes | str) -> int:
    """64-bit FNV-1a over raw bytes (UTF-8 for str); the dedup content hash."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def canonical_json(obj) -> str:
    """Sorted keys, two-space indent, LF, shortest round-trip floats."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_canonical_json(obj, path: Path) -> None:
    _atomic_write_bytes(Path(path), canonical_json(obj).encode("utf-8"))


# ---------------------------------------------------------------------------
# DMX tensors


def write_tensor(path: Path, arr: np.ndarray) -> None:
    """Serialize an array as magic, element code, ndim, u64 dims, row-major data."""
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        code, packed = _ELEM_F32, arr.astype("<f4")
    elif arr.dtype.kind in "iu":
        code, packed = _ELEM_U32, arr.astype("<u4")
    else:
        raise ValueError(f"unsupported tensor dtype {arr.dtype}")
    header = struct.pack("<4sII", MAGIC, code, arr.ndim)
    header += b"".join(struct.pack("<Q", d) for d in arr.shape)
    _atomic_write_bytes(Path(path), header + packed.tobytes(order="C"))


def read_tensor(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"missing tensor file {path.name}")
    data = path.read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"{path.name}: bad magic bytes")
    if len(data) < 12:
        raise TruncatedTensorError(f"{path.name}: truncated header")
    code, ndim = struct.unpack_from("<II", data, 4)
    if code not in (_ELEM_F32, _ELEM_U32):
        raise ParseError(f"{path.name}: unknown element type code {code}")
    if ndim > _MAX_NDIM:
        raise ParseError(f"{path.name}: implausible ndim {ndim}")
    header_size = 12 + 8 * ndim
    if len(data) < header_size:
        raise TruncatedTensorError(f"{path.name}: truncated header")
    dims = struct.unpack_from("<" + "Q" * ndim, data, 12)
    expected = header_size + math.prod(dims) * 4
    if len(data) != expected:
        raise TruncatedTensorError(
            f"{path.name}: expected {expected} bytes, found {len(data)}"
        )
    dtype = "<f4" if code == _ELEM_F32 else "<u4"
    return np.frombuffer(data, dtype=dtype, offset=header_size).reshape(dims)


# ---------------------------------------------------------------------------
# Dataset directories


def _hash_to_str(h: int) -> str:
    return f"{h:016x}"


def _hash_from_str(s: str, example_id: str) -> int:
    try:
        value = int(s, 16)
    except (TypeError, ValueError):
        raise InvariantViolation("text-hash", f"not a hex hash: {s!r}", example_id) from None
    if not 0 <= value < 1 << 64:
        raise InvariantViolation("text-hash", "hash outside 64-bit range", example_id)
    return value


def write_dataset(ds: Dataset, directory: Path) -> None:
    """Write a pooled-mode dataset directory (manifest + tensors)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = len(ds.examples)
    emb = np.zeros((n, ds.dim), dtype=np.float64)
    entries = []
    payload_rows: list[np.ndarray] = []
    offset = 0
    for i, ex in enumerate(ds.examples):
        emb[i] = ex.representation
        entry = {
            "id": ex.id,
            "language": ex.language,
            "text_hash": _hash_to_str(ex.text_hash),
            "emb": [i, 1],
        }
        if ds.task is TaskKind.SEQUENCE_LEVEL:
            entry["payload"] = [i, 1]
            payload_rows.append(ex.payload.probs)
        elif ds.task is TaskKind.TOKEN_LEVEL:
            rows = ex.payload.rows
            entry["payload"] = [offset, rows.shape[0]]
            offset += rows.shape[0]
            payload_rows.append(rows)
        else:
            flat = np.concatenate([ex.payload.start_logp, ex.payload.end_logp])
            entry["payload"] = [offset, flat.shape[0]]
            offset += flat.shape[0]
            payload_rows.append(flat)
        entries.append(entry)

    if ds.task is TaskKind.SPAN_QA:
        payload = np.concatenate(payload_rows) if payload_rows else np.zeros(0)
    else:
        payload = np.vstack(payload_rows) if payload_rows else np.zeros((0, 0))

    manifest = {
        "format_version": FORMAT_VERSION,
        "task": ds.task.value,
        "dim": ds.dim,
        "pooled": True,
        "tensors": {"embeddings": EMBEDDINGS_NAME, "payload": PAYLOAD_NAME},
        "examples": entries,
    }
    write_tensor(directory / EMBEDDINGS_NAME, emb)
    write_tensor(directory / PAYLOAD_NAME, payload)
    write_canonical_json(manifest, directory / MANIFEST_NAME)


def _entry_field(entry: dict, key: str, example_id: str) -> list[int]:
    value = entry.get(key)
    if (
        not isinstance(value, list)
        or len(value) != 2
        or not all(isinstance(v, int) and v >= 0 for v in value)
    ):
        raise InvariantViolation("slice-bounds", f"malformed {key!r} slice", example_id)
    return value


def _slice_rows(tensor: np.ndarray, off: int, length: int, name: str, example_id: str) -> np.ndarray:
    if off + length > tensor.shape[0] or length < 1:
        raise InvariantViolation(
            "slice-bounds",
            f"{name} slice [{off}, {off + length}) outside tensor of {tensor.shape[0]} rows",
            example_id,
        )
    return tensor[off : off + length]


def _build_payload(task: TaskKind, payload_tensor: np.ndarray, entry: dict, example_id: str):
    off, length = _entry_field(entry, "payload", example_id)
    if task is TaskKind.SEQUENCE_LEVEL:
        if payload_tensor.ndim != 2:
            raise ParseError("sequence payload tensor must be 2-D")
        if length != 1:
            raise InvariantViolation("slice-bounds", "sequence payload must be one row", example_id)
        return SeqProbs(np.asarray(_slice_rows(payload_tensor, off, 1, "payload", example_id)[0],
                                   dtype=np.float64))
    if task is TaskKind.TOKEN_LEVEL:
        if payload_tensor.ndim != 2:
            raise ParseError("token payload tensor must be 2-D")
        rows = _slice_rows(payload_tensor, off, length, "payload", example_id)
        return TokenProbs(np.asarray(rows, dtype=np.float64))
    if payload_tensor.ndim != 1:
        raise ParseError("span payload tensor must be 1-D")
    if length % 2 != 0:
        raise InvariantViolation("span-length", "span payload length must be even", example_id)
    flat = _slice_rows(payload_tensor, off, length, "payload", example_id)
    half = length // 2
    return SpanLogProbs(
        np.asarray(flat[:half], dtype=np.float64),
        np.asarray(flat[half:], dtype=np.float64),
    )


def read_dataset(directory: Path, role: Role = Role.SOURCE,
                 _report: list[str] | None = None) -> Dataset:
    """Load and fully validate a dataset directory.

    Raw-mode directories (pooled = false) are pooled on the fly; the
    returned dataset always carries one representation vector per example.
    Stage names are appended to _report as they pass, for the CLI's
    validation output.
    """
    def done(stage: str) -> None:
        if _report is not None:
            _report.append(stage)

    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise ParseError(f"missing {MANIFEST_NAME} in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{MANIFEST_NAME}: {exc}") from exc
    for key in ("format_version", "task", "dim", "pooled", "tensors", "examples"):
        if key not in manifest:
            raise ParseError(f"{MANIFEST_NAME}: missing key {key!r}")
    done("manifest-parse")

    if manifest["format_version"] != FORMAT_VERSION:
        raise VersionMismatchError(
            f"format_version {manifest['format_version']!r}, engine supports {FORMAT_VERSION}"
        )
    done("format-version")

    try:
        task = TaskKind(manifest["task"])
    except ValueError:
        raise ParseError(f"unknown task kind {manifest['task']!r}") from None
    dim = manifest["dim"]
    if not isinstance(dim, int) or dim < 1:
        raise ParseError(f"dim must be a positive integer, got {dim!r}")
    pooled = manifest["pooled"]
    if not isinstance(pooled, bool):
        raise ParseError("pooled flag must be a boolean")

    tensors = manifest["tensors"]
    if not isinstance(tensors, dict) or not {"embeddings", "payload"} <= set(tensors):
        raise ParseError("tensors map must name 'embeddings' and 'payload' files")
    if not all(isinstance(v, str) for v in tensors.values()):
        raise ParseError("tensor references must be file names")
    emb_tensor = read_tensor(directory / tensors["embeddings"])
    payload_tensor = read_tensor(directory / tensors["payload"])
    align_tensor = None
    if "alignments" in tensors:
        align_tensor = read_tensor(directory / tensors["alignments"])
        if align_tensor.ndim != 1:
            raise ParseError("alignments tensor must be 1-D")
    if emb_tensor.ndim != 2 or emb_tensor.shape[1] != dim:
        raise ParseError(
            f"embeddings tensor shape {emb_tensor.shape} does not match dim {dim}"
        )
    done("tensor-files")

    needs_align = not pooled and task is TaskKind.TOKEN_LEVEL
    if needs_align and align_tensor is None:
        raise InvariantViolation("alignment-missing", "raw token-level dataset without alignments")
    if (pooled or task is not TaskKind.TOKEN_LEVEL) and align_tensor is not None:
        raise ParseError("alignments tensor present but not applicable")

    entries = manifest["examples"]
    if not isinstance(entries, list) or not all(isinstance(e, dict) for e in entries):
        raise ParseError("examples must be a list of objects")

    examples: list[Example] = []
    for entry in entries:
        example_id = entry.get("id")
        if not isinstance(example_id, str) or not example_id:
            raise ParseError("example without a string id")
        language = entry.get("language")
        if not isinstance(language, str) or not language:
            raise ParseError(f"example {example_id!r} without a language tag")
        text_hash = _hash_from_str(entry.get("text_hash"), example_id)

        off, rows = _entry_field(entry, "emb", example_id)
        if pooled and rows != 1:
            raise InvariantViolation("slice-bounds", "pooled embedding must be one row", example_id)
        block = _slice_rows(emb_tensor, off, rows, "embeddings", example_id)
        try:
            if pooled:
                representation = np.asarray(block[0], dtype=np.float64)
            else:
                align = None
                if needs_align:
                    a_off, a_len = _entry_field(entry, "align", example_id)
                    align_slice = _slice_rows(align_tensor, a_off, a_len, "alignments", example_id)
                    align = WordAlignment(tuple(int(v) for v in align_slice))
                representation = pool_representation(
                    np.asarray(block, dtype=np.float64), task, align
                )
            payload = _build_payload(task, payload_tensor, entry, example_id)
            examples.append(Example(example_id, language, text_hash, representation, payload))
        except InvariantViolation as exc:
            if exc.example_id is None:
                raise InvariantViolation(exc.rule, str(exc), example_id) from exc
            raise
    done("example-slices")
    done("payload-rules")

    ds = Dataset(task=task, dim=dim, examples=examples, role=role)
    done("dataset-consistency")
    return ds


VALIDATION_STAGES = (
    "manifest-parse",
    "format-version",
    "tensor-files",
    "example-slices",
    "payload-rules",
    "dataset-consistency",
)


# ---------------------------------------------------------------------------
# Plans


_PLAN_KEYS = {
    "format_version",
    "strategy",
    "round",
    "seed",
    "rng",
    "k",
    "shortfall",
    "chosen",
    "scores",
    "lang_counts",
}


def plan_to_dict(plan: SelectionPlan) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "strategy": plan.strategy,
        "round": plan.round,
        "seed": plan.seed,
        "rng": plan.rng,
        "k": plan.k,
        "shortfall": plan.shortfall,
        "chosen": list(plan.chosen),
        "scores": {k: float(v) for k, v in plan.scores.items()},
        "lang_counts": {k: int(v) for k, v in plan.lang_counts.items()},
    }


def write_plan(plan: SelectionPlan, path: Path) -> None:
    """Canonical, atomic plan serialization; equal plans give equal bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_canonical_json(plan_to_dict(plan), path)


def read_plan(path: Path) -> SelectionPlan:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"missing plan file {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path.name}: {exc}") from exc
    if not isinstance(raw, dict) or set(raw) != _PLAN_KEYS:
        raise ParseError(f"{path.name}: unexpected plan fields")
    if raw["format_version"] != FORMAT_VERSION:
        raise VersionMismatchError(f"plan format_version {raw['format_version']!r}")
    try:
        return SelectionPlan(
            strategy=str(raw["strategy"]),
            seed=int(raw["seed"]),
            chosen=[str(c) for c in raw["chosen"]],
            scores={str(k): float(v) for k, v in raw["scores"].items()},
            lang_counts={str(k): int(v) for k, v in raw["lang_counts"].items()},
            round=int(raw["round"]),
            k=None if raw["k"] is None else int(raw["k"]),
            shortfall=bool(raw["shortfall"]),
            rng=str(raw["rng"]),
        )
    except (TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"{path.name}: malformed plan field ({exc})") from exc
