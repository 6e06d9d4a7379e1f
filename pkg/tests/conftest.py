import json

import numpy as np
import pytest

from condlm import toydata
from condlm.config import ModelConfig
from condlm.corpus import load_records
from condlm.model import init_parameters
from condlm.tokenizer import train_unigram
from condlm.vocab import build_condition_vocab, build_label_vocabs


@pytest.fixture(scope="session")
def toy_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "toy.jsonl"
    toydata.write_jsonl(toydata.memorization_documents(), path)
    return path


@pytest.fixture(scope="session")
def toy_records(toy_path):
    records = list(load_records(toy_path))
    assert len(records) == 8
    return records


@pytest.fixture(scope="session")
def toy_tok(toy_records):
    sentences = []
    for rec in toy_records:
        sentences.append(rec.title_text())
        sentences.extend(rec.sentence_texts())
    return train_unigram(sentences, target_vocab=160, seed=0)


@pytest.fixture(scope="session")
def toy_cvocab(toy_records):
    return build_condition_vocab(toy_records, min_count=1)


@pytest.fixture(scope="session")
def toy_labels(toy_records):
    return build_label_vocabs(toy_records)


@pytest.fixture(scope="session")
def toy_model_cfg(toy_tok, toy_cvocab, toy_labels):
    return ModelConfig(
        d_model=64, heads=2, encoder_blocks=2, decoder_blocks=2,
        ff_size=256, dropout=0.0, max_seq=32,
        token_vocab=toy_tok.vocab_size,
        pos_vocab=toy_labels.pos.size,
        dep_vocab=toy_labels.dep.size,
        ent_vocab=toy_labels.ent.size,
        cond_vocab=toy_cvocab.total,
    )


@pytest.fixture()
def tiny_cfg():
    """Small shape for fast unit tests; vocab sizes are arbitrary."""
    return ModelConfig(
        d_model=16, heads=2, encoder_blocks=1, decoder_blocks=1,
        ff_size=32, dropout=0.0, max_seq=16,
        token_vocab=23, pos_vocab=5, dep_vocab=4, ent_vocab=3, cond_vocab=7,
    )


@pytest.fixture()
def tiny_params(tiny_cfg):
    return init_parameters(tiny_cfg, np.random.default_rng(0))


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
