import os
import subprocess

import pytest

from support import OFFLINE_ENV, TEST_WORDS, spawn_adapter


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """A minimal random-weight QA checkpoint: valid for protocol and
    extractive-property testing, useless for answer quality."""
    from transformers import BertConfig, BertForQuestionAnswering, BertTokenizerFast

    d = tmp_path_factory.mktemp("tiny-qa-model")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    for token in TEST_WORDS + list("abcdefghijklmnopqrstuvwxyz0123456789"):
        if token not in vocab:
            vocab.append(token)
    (d / "vocab.txt").write_text("\n".join(vocab) + "\n")

    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=192,
    )
    BertForQuestionAnswering(config).save_pretrained(d)
    BertTokenizerFast(str(d / "vocab.txt"), do_lower_case=True).save_pretrained(d)
    return str(d)


@pytest.fixture(scope="session")
def loaded_model(tiny_checkpoint):
    os.environ.update(OFFLINE_ENV)
    from tsqa_adapter.server import ExtractiveQAModel

    return ExtractiveQAModel(tiny_checkpoint)


@pytest.fixture(scope="session")
def adapter_proc(tiny_checkpoint):
    proc = spawn_adapter(tiny_checkpoint)
    yield proc
    proc.stdin.close()
    try:
        proc.wait(timeout=10)
    except subprocess.TimeoutExpired:
        proc.kill()
