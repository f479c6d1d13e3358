"""Batched feature extraction from transformer checkpoints.

Pooling mirrors what the classifier heads actually consume: the position-0
token embedding for sequence and span tasks, the mean of each word's first
sub-word embedding for token tasks. Pooled mode is the default; raw mode
emits the per-token embeddings plus alignments so the engine can redo the
pooling itself, which is what verify_pooling checks.
"""

from __future__ import annotations

import logging
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .engine_format import fnv1a64, read_tensor, write_manifest, write_tensor
from .errors import AlignmentUnavailable, MismatchBeyondTolerance, ModelLoadFailure

log = logging.getLogger(__name__)

TASKS = ("sequence-level", "token-level", "span-qa")


@dataclass
class AdapterConfig:
    model: str
    task: str
    out_dir: Path
    batch_size: int = 16
    device: str = "cpu"
    max_length: int = 128
    raw: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.max_length < 8:
            raise ValueError("max sequence length must be >= 8")


@dataclass
class _Extraction:
    """Per-example buffers accumulated over batches."""

    entries: list[dict] = field(default_factory=list)
    pooled: list[np.ndarray] = field(default_factory=list)
    raw_blocks: list[np.ndarray] = field(default_factory=list)
    payload_rows: list[np.ndarray] = field(default_factory=list)
    payload_flat: list[np.ndarray] = field(default_factory=list)
    alignments: list[np.ndarray] = field(default_factory=list)
    truncated: int = 0


def _load(config: AdapterConfig):
    from transformers import (
        AutoModelForQuestionAnswering,
        AutoModelForSequenceClassification,
        AutoModelForTokenClassification,
        AutoTokenizer,
    )

    loaders = {
        "sequence-level": AutoModelForSequenceClassification,
        "token-level": AutoModelForTokenClassification,
        "span-qa": AutoModelForQuestionAnswering,
    }
    try:
        tokenizer = AutoTokenizer.from_pretrained(config.model)
        model = loaders[config.task].from_pretrained(config.model)
    except Exception as exc:
        raise ModelLoadFailure(f"cannot load {config.model!r}: {exc}") from exc
    if config.task == "token-level" and not tokenizer.is_fast:
        raise AlignmentUnavailable(
            "token-level extraction needs a fast tokenizer with word_ids()"
        )
    model.to(config.device)
    model.eval()
    return tokenizer, model


def _record_hash(record: dict, task: str) -> int:
    if task == "span-qa":
        return fnv1a64(record["question"] + "\n" + record["context"])
    return fnv1a64(record["text"])


def _batches(records: list[dict], size: int):
    for i in range(0, len(records), size):
        yield records[i : i + size]


def _run_model(model, enc):
    with torch.no_grad():
        out = model(**enc, output_hidden_states=True)
    return out, out.hidden_states[-1]


def _extract_sequence(config, tokenizer, model, records, ex: _Extraction) -> None:
    for batch in _batches(records, config.batch_size):
        enc = tokenizer([r["text"] for r in batch], truncation=True,
                        max_length=config.max_length, padding=True,
                        return_tensors="pt").to(config.device)
        out, hidden = _run_model(model, enc)
        probs = torch.softmax(out.logits, dim=-1).cpu().numpy().astype(np.float64)
        lengths = enc["attention_mask"].sum(dim=1).tolist()
        for i, record in enumerate(batch):
            if lengths[i] >= config.max_length:
                ex.truncated += 1
            rows = hidden[i, : lengths[i]].cpu().numpy().astype(np.float64)
            ex.pooled.append(rows[0])
            ex.raw_blocks.append(rows)
            ex.payload_rows.append(probs[i])
            ex.entries.append(record)


def _extract_token(config, tokenizer, model, records, ex: _Extraction) -> None:
    for batch in _batches(records, config.batch_size):
        words = [r["text"].split() for r in batch]
        for r, w in zip(batch, words):
            if not w:
                raise ValueError(f"record {r['id']!r} has no words")
        enc = tokenizer(words, is_split_into_words=True, truncation=True,
                        max_length=config.max_length, padding=True,
                        return_tensors="pt").to(config.device)
        out, hidden = _run_model(model, enc)
        logits = out.logits
        lengths = enc["attention_mask"].sum(dim=1).tolist()
        for i, record in enumerate(batch):
            word_ids = enc.word_ids(i)
            first_idx: list[int] = []
            seen: set[int] = set()
            for pos, wid in enumerate(word_ids):
                if wid is not None and wid not in seen:
                    seen.add(wid)
                    first_idx.append(pos)
            if len(seen) < len(words[i]):
                ex.truncated += 1
            if not first_idx:
                raise ValueError(f"record {record['id']!r} lost all words to truncation")
            rows = hidden[i, : lengths[i]].cpu().numpy().astype(np.float64)
            idx = np.asarray(first_idx, dtype=np.int64)
            ex.pooled.append(rows[idx].mean(axis=0))
            ex.raw_blocks.append(rows)
            ex.alignments.append(idx.astype(np.uint32))
            token_probs = torch.softmax(logits[i, idx], dim=-1)
            ex.payload_rows.append(token_probs.cpu().numpy().astype(np.float64))
            ex.entries.append(record)


def _extract_qa(config, tokenizer, model, records, ex: _Extraction) -> None:
    for batch in _batches(records, config.batch_size):
        enc = tokenizer([r["question"] for r in batch],
                        [r["context"] for r in batch],
                        truncation="only_second", max_length=config.max_length,
                        padding=True, return_tensors="pt").to(config.device)
        out, hidden = _run_model(model, enc)
        lengths = enc["attention_mask"].sum(dim=1).tolist()
        for i, record in enumerate(batch):
            if lengths[i] >= config.max_length:
                ex.truncated += 1
            ctx_pos = [pos for pos, sid in enumerate(enc.sequence_ids(i)) if sid == 1]
            if not ctx_pos:
                raise ValueError(f"record {record['id']!r} lost its context to truncation")
            idx = torch.as_tensor(ctx_pos, device=config.device)
            # invalid positions (question/specials) are masked out before the
            # softmax, so probabilities are over context tokens only
            start_lp = torch.log_softmax(out.start_logits[i, idx], dim=-1)
            end_lp = torch.log_softmax(out.end_logits[i, idx], dim=-1)
            start = np.minimum(start_lp.cpu().numpy().astype(np.float64), 0.0)
            end = np.minimum(end_lp.cpu().numpy().astype(np.float64), 0.0)
            rows = hidden[i, : lengths[i]].cpu().numpy().astype(np.float64)
            ex.pooled.append(rows[0])
            ex.raw_blocks.append(rows)
            ex.payload_flat.append(np.concatenate([start, end]))
            ex.entries.append(record)


def _write_dataset(config: AdapterConfig, ex: _Extraction, dim: int) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    emb_offset = payload_offset = align_offset = 0
    for i, record in enumerate(ex.entries):
        entry = {
            "id": str(record["id"]),
            "language": str(record.get("language", "unknown")),
            "text_hash": f"{_record_hash(record, config.task):016x}",
        }
        if config.raw:
            rows = ex.raw_blocks[i].shape[0]
            entry["emb"] = [emb_offset, rows]
            emb_offset += rows
        else:
            entry["emb"] = [i, 1]
        if config.task == "span-qa":
            length = ex.payload_flat[i].shape[0]
            entry["payload"] = [payload_offset, length]
            payload_offset += length
        elif config.task == "token-level":
            rows = ex.payload_rows[i].shape[0]
            entry["payload"] = [payload_offset, rows]
            payload_offset += rows
        else:
            entry["payload"] = [i, 1]
        if config.raw and config.task == "token-level":
            entry["align"] = [align_offset, int(ex.alignments[i].shape[0])]
            align_offset += ex.alignments[i].shape[0]
        entries.append(entry)

    if config.raw:
        emb = (np.concatenate(ex.raw_blocks, axis=0) if ex.raw_blocks
               else np.zeros((0, dim)))
    else:
        emb = np.stack(ex.pooled) if ex.pooled else np.zeros((0, dim))
    if config.task == "span-qa":
        payload = (np.concatenate(ex.payload_flat) if ex.payload_flat
                   else np.zeros(0))
    elif config.task == "token-level":
        payload = (np.concatenate(ex.payload_rows, axis=0) if ex.payload_rows
                   else np.zeros((0, 0)))
    else:
        payload = np.stack(ex.payload_rows) if ex.payload_rows else np.zeros((0, 0))

    tensors = {"embeddings": "embeddings.dmx", "payload": "payload.dmx"}
    write_tensor(out / "embeddings.dmx", emb)
    write_tensor(out / "payload.dmx", payload)
    if config.raw and config.task == "token-level":
        align = (np.concatenate(ex.alignments) if ex.alignments
                 else np.zeros(0, dtype=np.uint32))
        tensors["alignments"] = "alignments.dmx"
        write_tensor(out / "alignments.dmx", align)

    write_manifest({
        "format_version": 1,
        "task": config.task,
        "dim": dim,
        "pooled": not config.raw,
        "tensors": tensors,
        "examples": entries,
    }, out / "manifest.json")
    return out


def extract(config: AdapterConfig, records: list[dict]) -> Path:
    """Run inference over records and write an engine dataset directory.

    Records carry {id, language, text} for sequence and token tasks, and
    {id, language, question, context} for span extraction.
    """
    tokenizer, model = _load(config)
    dim = model.config.hidden_size
    ex = _Extraction()
    if records:
        if config.task == "sequence-level":
            _extract_sequence(config, tokenizer, model, records, ex)
        elif config.task == "token-level":
            _extract_token(config, tokenizer, model, records, ex)
        else:
            _extract_qa(config, tokenizer, model, records, ex)
    if ex.truncated:
        log.warning("%d of %d examples were truncated to max_length=%d",
                    ex.truncated, len(records), config.max_length)
    return _write_dataset(config, ex, dim)


ENGINE_CLI = (sys.executable, "-m", "demux.cli")


def run_engine(*args: str) -> subprocess.CompletedProcess:
    return subprocess.run([*ENGINE_CLI, *args], capture_output=True, text=True)


@dataclass(frozen=True)
class PoolingReport:
    n_examples: int
    max_abs_error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_abs_error < self.tolerance


def verify_pooling(config: AdapterConfig, records: list[dict],
                   tolerance: float = 1e-5) -> PoolingReport:
    """Cross-check adapter pooling against the engine's.

    Extracts the same records twice (pooled and raw), has the engine pool
    the raw directory via its export command, and compares element-wise.
    """
    from dataclasses import replace

    with tempfile.TemporaryDirectory() as tmp:
        tmp_path = Path(tmp)
        pooled_dir = extract(replace(config, out_dir=tmp_path / "pooled", raw=False),
                             records)
        raw_dir = extract(replace(config, out_dir=tmp_path / "raw", raw=True),
                          records)
        for directory in (pooled_dir, raw_dir):
            proc = run_engine("validate", "--dataset", str(directory))
            if proc.returncode != 0:
                raise MismatchBeyondTolerance(
                    f"engine rejected {directory}: {proc.stdout}{proc.stderr}"
                )
        engine_out = tmp_path / "engine_pooled.dmx"
        proc = run_engine("export", "--dataset", str(raw_dir), "--out", str(engine_out))
        if proc.returncode != 0:
            raise MismatchBeyondTolerance(f"engine export failed: {proc.stderr}")
        engine_pooled = read_tensor(engine_out).astype(np.float64)
        adapter_pooled = read_tensor(pooled_dir / "embeddings.dmx").astype(np.float64)

    if engine_pooled.shape != adapter_pooled.shape:
        raise MismatchBeyondTolerance(
            f"shape mismatch: engine {engine_pooled.shape}, adapter {adapter_pooled.shape}"
        )
    max_err = float(np.max(np.abs(engine_pooled - adapter_pooled))) if len(records) else 0.0
    report = PoolingReport(len(records), max_err, tolerance)
    if not report.ok:
        raise MismatchBeyondTolerance(
            f"max element error {max_err:.3e} exceeds {tolerance:.1e}"
        )
    return report
