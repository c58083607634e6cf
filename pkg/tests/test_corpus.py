from __future__ import annotations

import random

import pytest

from ltner.corpus import (CONLL2003, WNUT2017, ConversionError, EntitySpan, LabeledExample,
                          LabelSchema, ParseError, Token, bio_tags, from_json_record,
                          get_schema, load_corpus, make_example, parse_iob, save_corpus,
                          subsample_pool, to_json_record)

AL_AIN_IOB = """\
AL-AIN NNP B-NP B-LOC
, , O O
United NNP B-NP B-LOC
Arab NNP I-NP I-LOC
Emirates NNPS I-NP I-LOC
1996-12-06 CD I-NP O
"""


def merge_runs_oracle(tags):
    """Independent span extraction: emit maximal B/I runs left to right."""
    spans = []
    i = 0
    while i < len(tags):
        tag = tags[i]
        if tag == "O":
            i += 1
            continue
        etype = tag[2:]
        j = i + 1
        while j < len(tags) and tags[j] == f"I-{etype}":
            j += 1
        spans.append((i, j, etype))
        i = j
    return spans


def iob2_normalize_oracle(tags):
    out = ["O"] * len(tags)
    for start, end, etype in merge_runs_oracle(tags):
        out[start] = f"B-{etype}"
        for k in range(start + 1, end):
            out[k] = f"I-{etype}"
    return out


def test_parse_iob_dateline(schema):
    examples = parse_iob(AL_AIN_IOB.splitlines(), schema, split="test")
    assert len(examples) == 1
    ex = examples[0]
    assert ex.words == ("AL-AIN", ",", "United", "Arab", "Emirates", "1996-12-06")
    assert ex.spans == (EntitySpan(0, 1, "LOC"), EntitySpan(2, 5, "LOC"))
    assert ex.surface(ex.spans[0]) == "AL-AIN"
    assert ex.surface(ex.spans[1]) == "United Arab Emirates"


def test_parse_iob_all_o(schema):
    lines = ["no O", "entities O", "here O"]
    (ex,) = parse_iob(lines, schema)
    assert ex.spans == ()


def test_parse_iob_docstart_dropped(schema):
    lines = ["-DOCSTART- -X- -X- O", "", "word O", ""]
    examples = parse_iob(lines, schema)
    assert [ex.words for ex in examples] == [("word",)]
    assert examples[0].id == "train-00000"


def test_parse_iob_iob1_orphan_i_opens_span(schema):
    lines = ["a O", "b I-PER", "c I-PER", "d I-LOC"]
    (ex,) = parse_iob(lines, schema)
    assert ex.spans == (EntitySpan(1, 3, "PER"), EntitySpan(3, 4, "LOC"))


def test_parse_iob_adjacent_b_splits_runs(schema):
    lines = ["a I-ORG", "b B-ORG", "c I-ORG"]
    (ex,) = parse_iob(lines, schema)
    assert ex.spans == (EntitySpan(0, 1, "ORG"), EntitySpan(1, 3, "ORG"))


def test_parse_iob_wrong_column_count(schema):
    with pytest.raises(ParseError, match="line 2"):
        parse_iob(["fine O", "broken"], schema)


def test_parse_iob_unknown_type_names_tag(schema):
    with pytest.raises(ParseError, match="B-GPE"):
        parse_iob(["x B-GPE"], schema)


def test_parse_iob_malformed_tag(schema):
    with pytest.raises(ParseError, match="line 1"):
        parse_iob(["x NOTATAG"], schema)


def test_parse_iob_matches_run_merging_oracle(schema):
    rng = random.Random(4242)
    vocab = ["O"] + [f"{p}-{t}" for p in "BI" for t in schema.names]
    for _ in range(300):
        tags = [rng.choice(vocab) for _ in range(rng.randrange(1, 15))]
        lines = [f"w{i} {tag}" for i, tag in enumerate(tags)]
        (ex,) = parse_iob(lines, schema)
        assert [(s.start, s.end, s.label) for s in ex.spans] == merge_runs_oracle(tags)
        assert bio_tags(ex) == iob2_normalize_oracle(tags)


def test_ingested_fixture_invariants(synth_corpus):
    assert len(synth_corpus) > 1500
    for ex in synth_corpus:
        prev_end = 0
        for span in ex.spans:
            assert 0 <= span.start < span.end <= len(ex.tokens)
            assert span.start >= prev_end
            prev_end = span.end
    ids = [ex.id for ex in synth_corpus]
    assert len(set(ids)) == len(ids)


def test_to_json_record_dateline(al_ain):
    assert to_json_record(al_ain) == {
        "sentence": "AL-AIN , United Arab Emirates 1996-12-06",
        "label": {"LOC": ["AL-AIN", "United Arab Emirates"]},
    }


def test_to_json_record_no_spans(schema):
    ex = make_example("x", ["just", "words"], [])
    assert to_json_record(ex) == {"sentence": "just words", "label": {}}


def test_json_roundtrip_over_corpus(synth_test):
    for ex in synth_test:
        back = from_json_record(to_json_record(ex), id=ex.id, split=ex.split)
        assert back == ex


def test_from_json_duplicate_surfaces_consume_left_to_right():
    obj = {"sentence": "Paris to Paris", "label": {"LOC": ["Paris", "Paris"]}}
    ex = from_json_record(obj)
    assert ex.spans == (EntitySpan(0, 1, "LOC"), EntitySpan(2, 3, "LOC"))


def test_from_json_unalignable_surface_errors():
    obj = {"sentence": "a b c", "label": {"LOC": ["missing"]}}
    with pytest.raises(ConversionError, match="missing"):
        from_json_record(obj)


def test_from_json_rejects_bad_shapes():
    with pytest.raises(ConversionError):
        from_json_record({"label": {}})
    with pytest.raises(ConversionError):
        from_json_record({"sentence": "a", "label": []})
    with pytest.raises(ConversionError):
        from_json_record({"sentence": "a", "label": {"LOC": "nope"}})


def test_subsample_full_pool_is_identity_sorted_by_id(synth_train):
    subset = subsample_pool(synth_train, len(synth_train), seed=7)
    assert subset == sorted(synth_train, key=lambda ex: ex.id)


def test_subsample_zero_and_oversize(synth_train):
    assert subsample_pool(synth_train, 0, seed=7) == []
    with pytest.raises(ValueError):
        subsample_pool(synth_train, len(synth_train) + 1, seed=7)


def test_subsample_deterministic_and_seed_sensitive(synth_train):
    a = subsample_pool(synth_train, 30, seed=11)
    b = subsample_pool(synth_train, 30, seed=11)
    c = subsample_pool(synth_train, 30, seed=12)
    assert [ex.id for ex in a] == [ex.id for ex in b]
    assert {ex.id for ex in a} != {ex.id for ex in c}


def test_subsample_order_independent_of_input_order(synth_train):
    shuffled = list(synth_train)
    random.Random(0).shuffle(shuffled)
    assert subsample_pool(shuffled, 25, seed=3) == subsample_pool(synth_train, 25, seed=3)


def test_corpus_jsonl_roundtrip(tmp_path, synth_test):
    path = tmp_path / "corpus.jsonl"
    save_corpus(synth_test[:50], path)
    assert load_corpus(path) == synth_test[:50]


def test_example_validation_rejects_bad_spans():
    with pytest.raises(ValueError, match="out of bounds"):
        make_example("x", ["a"], [EntitySpan(0, 2, "PER")])
    with pytest.raises(ValueError, match="overlap"):
        make_example("x", ["a", "b"], [EntitySpan(0, 2, "PER"), EntitySpan(1, 2, "LOC")])
    with pytest.raises(ValueError, match="bad token"):
        LabeledExample("x", (Token("a b", 0),), ())


def test_schema_validation():
    assert get_schema("wnut2017") is WNUT2017
    assert "PER" in CONLL2003 and "GPE" not in CONLL2003
    with pytest.raises(ValueError):
        LabelSchema(names=("lower",))
    with pytest.raises(ValueError):
        LabelSchema(names=())
    with pytest.raises(ValueError):
        get_schema("nope")
