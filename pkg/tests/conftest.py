from __future__ import annotations

from pathlib import Path

import pytest

from ltner.corpus import CONLL2003, EntitySpan, make_example, parse_iob
from ltner.retrieval import HashedBagEmbedder, build_index

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def schema():
    return CONLL2003


@pytest.fixture(scope="session")
def synth_corpus(schema):
    """The committed synthetic CoNLL-format fixture corpus, both splits."""
    examples = []
    for split in ("train", "test"):
        path = DATA_DIR / "synth_conll" / f"{split}.iob"
        with path.open("r", encoding="utf-8") as fh:
            examples.extend(parse_iob(fh, schema, split=split))
    return examples


@pytest.fixture(scope="session")
def synth_train(synth_corpus):
    return [ex for ex in synth_corpus if ex.split == "train"]


@pytest.fixture(scope="session")
def synth_test(synth_corpus):
    return [ex for ex in synth_corpus if ex.split == "test"]


@pytest.fixture(scope="session")
def synth_index(synth_train):
    return build_index(synth_train, HashedBagEmbedder())


@pytest.fixture
def al_ain():
    """The dateline sentence used as the worked example throughout."""
    return make_example(
        "test-al-ain",
        "AL-AIN , United Arab Emirates 1996-12-06".split(),
        [EntitySpan(0, 1, "LOC"), EntitySpan(2, 5, "LOC")],
        split="test",
    )
