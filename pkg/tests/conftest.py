from __future__ import annotations

import pytest

from splitsql import minicorpus
from splitsql.dataset import load_examples, load_schemas


@pytest.fixture(scope="session")
def corpus_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return minicorpus.build_corpus(root)


@pytest.fixture(scope="session")
def schemas(corpus_root):
    return load_schemas(corpus_root / "tables.json")


@pytest.fixture(scope="session")
def examples(corpus_root):
    return load_examples(corpus_root / "examples.json")
