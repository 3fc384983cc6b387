"""Shared helpers for the adapter test suite."""

import os
import subprocess
import sys

TEST_WORDS = [
    "what", "is", "the", "scope", "of", "paper", "statement", "level",
    "semantic", "representation", "nanopublications", "free", "text",
    "summary", "yes", "its", "accuracy", "system", "maximum", "common",
]

OFFLINE_ENV = {
    "HF_HUB_OFFLINE": "1",
    "TRANSFORMERS_OFFLINE": "1",
    "TOKENIZERS_PARALLELISM": "false",
}


def spawn_adapter(model_spec: str) -> subprocess.Popen:
    env = dict(os.environ, **OFFLINE_ENV)
    return subprocess.Popen(
        [sys.executable, "-m", "tsqa_adapter", "--model", model_spec],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
        encoding="utf-8",
        env=env,
    )
