"""Session fixtures: a deterministic multilingual corpus and tiny local
checkpoints (character-level wordpiece tokenizer, 2-layer BERT heads) so the
extraction path runs hermetically on CPU."""

from __future__ import annotations

from pathlib import Path

import pytest
import torch

WORDLISTS = {
    "de": ["zug", "haus", "straße", "kalt", "über", "wald", "stadt", "grün"],
    "fr": ["gare", "maison", "rue", "froid", "forêt", "ville", "vert", "près"],
    "es": ["tren", "casa", "calle", "frío", "bosque", "ciudad", "verde", "año"],
    "tr": ["tren", "ev", "sokak", "soguk", "orman", "sehir", "yesil", "yil"],
    "ru": ["poezd", "dom", "ulitsa", "kholod", "les", "gorod", "zeleny", "god"],
    "hi": ["gaadi", "ghar", "sadak", "thanda", "jangal", "shahar", "hara", "saal"],
    "sw": ["treni", "nyumba", "barabara", "baridi", "msitu", "mji", "kijani", "mwaka"],
    "ta": ["rayil", "veedu", "theru", "kulir", "kaadu", "nagaram", "pachai", "aandu"],
    "id": ["kereta", "rumah", "jalan", "dingin", "hutan", "kota", "hijau", "tahun"],
    "vi": ["tau", "nha", "duong", "lanh", "rung", "pho", "xanh", "nam"],
}


def make_text_corpus(n_per_language: int = 10) -> list[dict]:
    records = []
    for lang, words in WORDLISTS.items():
        for i in range(n_per_language):
            chosen = [words[(i + j) % len(words)] for j in range(4)]
            text = " ".join(chosen) + f" nr{i:02d}"
            records.append({"id": f"{lang}-{i:03d}", "language": lang, "text": text})
    return records


def make_qa_corpus(n_per_language: int = 10) -> list[dict]:
    records = []
    for rec in make_text_corpus(n_per_language):
        records.append({
            "id": rec["id"],
            "language": rec["language"],
            "question": "wo ist " + rec["text"].split()[0],
            "context": rec["text"],
        })
    return records


@pytest.fixture(scope="session")
def corpus() -> list[dict]:
    records = make_text_corpus()
    assert len(records) == 100
    return records


@pytest.fixture(scope="session")
def qa_corpus() -> list[dict]:
    return make_qa_corpus()


@pytest.fixture(scope="session")
def checkpoints(tmp_path_factory) -> dict[str, str]:
    """One tiny randomly initialized checkpoint per task head, plus a
    character-level wordpiece tokenizer covering the corpus alphabet."""
    from transformers import (
        BertConfig,
        BertForQuestionAnswering,
        BertForSequenceClassification,
        BertForTokenClassification,
        BertTokenizer,
    )

    root: Path = tmp_path_factory.mktemp("checkpoints")
    texts = [r["text"] for r in make_text_corpus()]
    texts += [r["question"] for r in make_qa_corpus()]
    chars = sorted({c for t in texts for c in t if not c.isspace()})
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    vocab += chars + [f"##{c}" for c in chars]
    tokenizer = BertTokenizer(vocab={t: i for i, t in enumerate(vocab)},
                              do_lower_case=False)

    config = BertConfig(
        vocab_size=len(vocab), hidden_size=32, num_hidden_layers=2,
        num_attention_heads=2, intermediate_size=64,
        max_position_embeddings=192,
    )
    heads = {
        "sequence-level": (BertForSequenceClassification,
                           {"num_labels": 3}),
        "token-level": (BertForTokenClassification, {"num_labels": 5}),
        "span-qa": (BertForQuestionAnswering, {}),
    }
    paths = {}
    for task, (cls, extra) in heads.items():
        torch.manual_seed(1234)
        cfg = BertConfig(**{**config.to_dict(), **extra})
        model = cls(cfg)
        model.eval()
        out = root / task.replace("-", "_")
        model.save_pretrained(out)
        tokenizer.save_pretrained(out)
        paths[task] = str(out)
    return paths
