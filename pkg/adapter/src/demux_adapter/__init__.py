"""Checkpoint-to-dataset extraction for the demux selection engine.

Runs batched inference on a transformer checkpoint and writes engine-format
dataset directories: pooled representations (or raw token embeddings plus
word alignments), task-appropriate output distributions, and content hashes.
The engine is consumed only through its file formats and CLI.
"""

from .extract import AdapterConfig, PoolingReport, extract, verify_pooling

__all__ = ["AdapterConfig", "PoolingReport", "extract", "verify_pooling"]

__version__ = "0.1.0"
