import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture
def malformed_corpus():
    corpus = {}
    mal_dir = os.path.join(DATA_DIR, "malformed")
    for name in sorted(os.listdir(mal_dir)):
        with open(os.path.join(mal_dir, name), encoding="utf-8") as fh:
            corpus[name] = fh.read()
    return corpus
