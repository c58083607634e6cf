"""Corpus ingestion and span-record management.

Reads IOB column files (CoNLL-2003 and WNUT-2017 layouts), normalizes them
into sentence/span records, converts records to and from the flat
sentence-to-label JSON shape used inside prompts, and provides deterministic
subsampling for annotation-budget experiments.

Tokens are the dataset's own whitespace-delimited tokens; nothing is
re-tokenized. IOB1-style inputs (an ``I-`` run opening an entity) are
normalized to IOB2 semantics so that every span start behaves like a ``B-``.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

DOCSTART = "-DOCSTART-"

SPLITS = ("train", "test", "dev")


class ParseError(ValueError):
    """An IOB input line could not be interpreted."""


class ConversionError(ValueError):
    """A JSON record could not be mapped back onto its sentence."""


@dataclass(frozen=True)
class Token:
    """One whitespace-delimited token and its 0-based sentence position."""

    text: str
    index: int


@dataclass(frozen=True, order=True)
class EntitySpan:
    """Token range [start, end) carrying an entity-type label."""

    start: int
    end: int
    label: str


@dataclass(frozen=True)
class LabelSchema:
    """The ordered entity-type inventory of one dataset."""

    names: tuple[str, ...]
    dataset: str = ""

    def __post_init__(self) -> None:
        if not self.names:
            raise ValueError("label schema needs at least one type name")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate type names in schema: {self.names}")
        for name in self.names:
            if not name or name != name.upper():
                raise ValueError(f"schema type names must be non-empty uppercase, got {name!r}")

    def __contains__(self, name: object) -> bool:
        return name in self.names


@dataclass(frozen=True)
class LabeledExample:
    """A tokenized sentence plus its gold entity spans.

    The unit of storage, retrieval, prompting, and scoring. Instances are
    immutable and validated on construction: spans must be sorted,
    non-overlapping, and inside the token range.
    """

    id: str
    tokens: tuple[Token, ...]
    spans: tuple[EntitySpan, ...]
    split: str = "train"

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ValueError(f"example {self.id!r} has no tokens")
        for i, tok in enumerate(self.tokens):
            if not tok.text or any(ch.isspace() for ch in tok.text):
                raise ValueError(f"example {self.id!r}: bad token text {tok.text!r}")
            if tok.index != i:
                raise ValueError(f"example {self.id!r}: token indices not consecutive from 0")
        prev_end = 0
        for span in self.spans:
            if not (0 <= span.start < span.end <= len(self.tokens)):
                raise ValueError(f"example {self.id!r}: span {span} out of bounds")
            if span.start < prev_end:
                raise ValueError(f"example {self.id!r}: spans overlap or are unsorted at {span}")
            if not span.label:
                raise ValueError(f"example {self.id!r}: empty span label")
            prev_end = span.end
        if self.split not in SPLITS:
            raise ValueError(f"example {self.id!r}: unknown split {self.split!r}")

    @cached_property
    def words(self) -> tuple[str, ...]:
        return tuple(tok.text for tok in self.tokens)

    @cached_property
    def sentence(self) -> str:
        return " ".join(self.words)

    def surface(self, span: EntitySpan) -> str:
        return " ".join(self.words[span.start:span.end])


def make_example(id: str, words: Sequence[str], spans: Iterable[EntitySpan] = (),
                 split: str = "train") -> LabeledExample:
    """Build a LabeledExample from plain strings."""
    tokens = tuple(Token(text=w, index=i) for i, w in enumerate(words))
    return LabeledExample(id=id, tokens=tokens, spans=tuple(sorted(spans)), split=split)


# Built-in dataset schemas. WNUT files carry lowercase type names; they are
# normalized to uppercase during parsing to satisfy the schema invariant.
CONLL2003 = LabelSchema(names=("PER", "LOC", "ORG", "MISC"), dataset="conll2003")
WNUT2017 = LabelSchema(
    names=("PERSON", "LOCATION", "CORPORATION", "PRODUCT", "CREATIVE-WORK", "GROUP"),
    dataset="wnut2017",
)

SCHEMAS = {s.dataset: s for s in (CONLL2003, WNUT2017)}


def get_schema(dataset: str) -> LabelSchema:
    try:
        return SCHEMAS[dataset]
    except KeyError:
        raise ValueError(f"unknown dataset {dataset!r}; known: {sorted(SCHEMAS)}") from None


def parse_iob(lines: Iterable[str], schema: LabelSchema, *, split: str = "train",
              id_prefix: str | None = None) -> list[LabeledExample]:
    """Parse CoNLL column lines into examples.

    The token is the first column and the NER tag the last; interior columns
    (POS, chunk) are ignored. Blank lines separate sentences and
    ``-DOCSTART-`` sentences are dropped. ``B-``/``I-`` runs are merged into
    spans with IOB1 tolerance: an ``I-`` following ``O`` or a different type
    opens a new span.
    """
    prefix = id_prefix if id_prefix is not None else split
    examples: list[LabeledExample] = []
    words: list[str] = []
    tags: list[tuple[str, int]] = []

    def flush() -> None:
        nonlocal words, tags
        if words:
            if words[0] != DOCSTART:
                spans = _spans_from_tags(tags, schema)
                examples.append(make_example(
                    id=f"{prefix}-{len(examples):05d}", words=words, spans=spans, split=split))
            words, tags = [], []

    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        fields = line.split()
        if len(fields) < 2:
            raise ParseError(f"line {lineno}: expected at least 2 columns, got {len(fields)}")
        words.append(fields[0])
        tags.append((fields[-1], lineno))
    flush()
    return examples


def _spans_from_tags(tags: Sequence[tuple[str, int]], schema: LabelSchema) -> list[EntitySpan]:
    spans: list[EntitySpan] = []
    open_type: str | None = None
    open_start = 0

    def close(end: int) -> None:
        nonlocal open_type
        if open_type is not None:
            spans.append(EntitySpan(start=open_start, end=end, label=open_type))
            open_type = None

    for i, (tag, lineno) in enumerate(tags):
        if tag == "O":
            close(i)
            continue
        if len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
            etype = tag[2:].upper()
            if etype not in schema:
                raise ParseError(f"line {lineno}: tag {tag!r} references a type outside the schema")
            if tag[0] == "B" or open_type != etype:
                close(i)
                open_type, open_start = etype, i
            continue
        raise ParseError(f"line {lineno}: malformed tag {tag!r}")
    close(len(tags))
    return spans


def bio_tags(example: LabeledExample) -> list[str]:
    """Regenerate the IOB2 tag sequence for an example."""
    out = ["O"] * len(example.tokens)
    for span in example.spans:
        out[span.start] = f"B-{span.label}"
        for i in range(span.start + 1, span.end):
            out[i] = f"I-{span.label}"
    return out


def to_json_record(example: LabeledExample) -> dict:
    """Render the flat sentence/label JSON shape used inside prompts.

    The mapping lists each type's surfaces in span order; positions are not
    retained, so the representation is lossy on repeated mentions.
    """
    label: dict[str, list[str]] = {}
    for span in example.spans:
        label.setdefault(span.label, []).append(example.surface(span))
    return {"sentence": example.sentence, "label": label}


def from_json_record(obj: dict, *, id: str = "", split: str = "train") -> LabeledExample:
    """Invert :func:`to_json_record` by aligning surfaces back to the sentence.

    Each surface is matched to the leftmost token subsequence not already
    consumed by an earlier surface, so duplicate surfaces map to successive
    mentions.
    """
    sentence = obj.get("sentence")
    label = obj.get("label", {})
    if not isinstance(sentence, str) or not sentence:
        raise ConversionError("record has no usable 'sentence' string")
    if not isinstance(label, dict):
        raise ConversionError("record 'label' is not a type-to-surfaces map")
    words = sentence.split(" ")
    if any(not w for w in words):
        raise ConversionError("sentence is not single-space tokenized")

    consumed = [False] * len(words)
    spans: list[EntitySpan] = []
    for etype, surfaces in label.items():
        if not isinstance(surfaces, (list, tuple)):
            raise ConversionError(f"label entry for {etype!r} is not a list")
        for surface in surfaces:
            parts = str(surface).split()
            pos = find_token_run(words, parts, consumed)
            if pos is None:
                raise ConversionError(f"surface {surface!r} not alignable to sentence")
            for i in range(pos, pos + len(parts)):
                consumed[i] = True
            spans.append(EntitySpan(start=pos, end=pos + len(parts), label=str(etype)))
    return make_example(id=id, words=words, spans=sorted(spans), split=split)


def find_token_run(words: Sequence[str], parts: Sequence[str], consumed: Sequence[bool],
                   *, casefold: bool = False) -> int | None:
    """Leftmost start of an unconsumed contiguous token run equal to ``parts``."""
    n, m = len(words), len(parts)
    if m == 0 or m > n:
        return None
    if casefold:
        words = [w.casefold() for w in words]
        parts = [p.casefold() for p in parts]
    for i in range(n - m + 1):
        if any(consumed[i:i + m]):
            continue
        if all(words[i + j] == parts[j] for j in range(m)):
            return i
    return None


def subsample_pool(examples: Sequence[LabeledExample], n: int, seed: int) -> list[LabeledExample]:
    """Deterministic pseudo-random subset of size ``n``, ordered by id."""
    if not 0 <= n <= len(examples):
        raise ValueError(f"subsample size {n} outside [0, {len(examples)}]")
    pool = sorted(examples, key=lambda ex: ex.id)
    picked = random.Random(seed).sample(pool, n)
    return sorted(picked, key=lambda ex: ex.id)


def save_corpus(examples: Iterable[LabeledExample], path: str | Path) -> None:
    """Write the corpus JSONL file, one record per sentence."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {
                "id": ex.id,
                "split": ex.split,
                "sentence": ex.sentence,
                "tokens": list(ex.words),
                "spans": [{"start": s.start, "end": s.end, "label": s.label} for s in ex.spans],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_corpus(path: str | Path) -> list[LabeledExample]:
    examples = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                spans = [EntitySpan(s["start"], s["end"], s["label"]) for s in rec["spans"]]
                examples.append(make_example(
                    id=rec["id"], words=rec["tokens"], spans=sorted(spans), split=rec["split"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: bad corpus record: {exc}") from exc
    return examples
