"""Delimiter-tagged entity markup.

Encoding rewrites a sentence with each entity's token run wrapped as
``open + surface + close + LABEL`` (label immediately after the close
delimiter, no space); everything else is reproduced verbatim. Decoding is the
inverse, hardened against arbitrary model output: a left-to-right scan
recovers (surface, label) predictions, every malformation is recorded as a
structured diagnostic instead of an exception, and surfaces are aligned back
to source-token offsets so downstream scoring works on exact spans.

The same open and close delimiter (e.g. ``##``/``##``) needs no special case:
occurrences simply alternate open, close, open, ...
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .corpus import EntitySpan, LabeledExample, LabelSchema, find_token_run, to_json_record

# One retry strips this trailing punctuation from a failed label lookup;
# models habitually append sentence punctuation to the last label.
_LABEL_STRIP = ".,;:!?"


class RepairKind(str, Enum):
    """Enumerated decode repair events."""

    UNMATCHED_OPEN = "UnmatchedOpen"
    UNKNOWN_LABEL = "UnknownLabel"
    EMPTY_ENTITY = "EmptyEntity"
    UNALIGNED = "Unaligned"
    MALFORMED_JSON = "MalformedJson"


@dataclass(frozen=True)
class Diagnostic:
    """One repair event: what was dropped, where, and why."""

    kind: RepairKind
    position: int
    detail: str = ""


@dataclass(frozen=True)
class TagConfig:
    """An (open, close) delimiter pair defining the marking format."""

    open: str
    close: str
    name: str = ""

    def __post_init__(self) -> None:
        if not self.name:
            object.__setattr__(self, "name", f"{self.open}|{self.close}")


@dataclass(frozen=True)
class Decoding:
    """Spans recovered from one generation, plus everything that went wrong.

    ``spans`` are aligned to the source sentence and never overlap.
    ``unaligned`` keeps (surface, label) predictions that could not be placed
    in the source; scoring counts them as false positives.
    """

    spans: tuple[EntitySpan, ...]
    unaligned: tuple[tuple[str, str], ...]
    diagnostics: tuple[Diagnostic, ...]


# The delimiter grid shipped as built-in presets. Pairs with empty strings
# are representable but rejected by validate_tag_config.
TAG_PRESETS: tuple[TagConfig, ...] = tuple(
    TagConfig(open=o, close=c)
    for o, c in (
        ("##", "@@"),
        ("@@", "##"),
        ("##", "##"),
        ("@@", "@@"),
        ("@@", "#"),
        ("@@", "@"),
        ("#", "#"),
        ("#", "@"),
        ("[", "]"),
        ("'", "'"),
        ("<", ">"),
        ("(", ")"),
        ("+", "+"),
        ("?", "?"),
        ("%", "%"),
        ("{", "}"),
        ("{{", "}}"),
        ("[[", "]]"),
        ("<<", ">>"),
        ("%%", "%%"),
    )
)


def get_tag_config(name: str, extra: dict[str, TagConfig] | None = None) -> TagConfig:
    """Look up a tag config by its display name, presets plus ``extra``."""
    if extra and name in extra:
        return extra[name]
    for cfg in TAG_PRESETS:
        if cfg.name == name:
            return cfg
    raise ValueError(f"unknown tag config {name!r}")


def validate_tag_config(cfg: TagConfig, schema: LabelSchema) -> list[str]:
    """Return violation messages (empty list means the config is usable).

    Flags empty delimiters, whitespace inside delimiters, and delimiters that
    occur inside a schema label name (which would corrupt the scan).
    """
    problems = []
    for side, delim in (("open", cfg.open), ("close", cfg.close)):
        if not delim:
            problems.append(f"EmptyDelimiter: {side} delimiter is empty")
        elif any(ch.isspace() for ch in delim):
            problems.append(f"WhitespaceDelimiter: {side} delimiter {delim!r} contains whitespace")
        else:
            for label in schema.names:
                if delim in label:
                    problems.append(
                        f"LabelCollision: {side} delimiter {delim!r} occurs in label {label!r}")
    return problems


def well_formed_presets(schema: LabelSchema) -> list[TagConfig]:
    return [cfg for cfg in TAG_PRESETS if not validate_tag_config(cfg, schema)]


def encode_tagged(example: LabeledExample, cfg: TagConfig) -> str:
    """Render the sentence with every entity wrapped in the tag format."""
    words = example.words
    by_start = {span.start: span for span in example.spans}
    parts: list[str] = []
    i = 0
    while i < len(words):
        span = by_start.get(i)
        if span is None:
            parts.append(words[i])
            i += 1
        else:
            surface = " ".join(words[i:span.end])
            parts.append(f"{cfg.open}{surface}{cfg.close}{span.label}")
            i = span.end
    return " ".join(parts)


def decode_tagged(generation: str, source_tokens: Sequence[str], cfg: TagConfig,
                  schema: LabelSchema) -> Decoding:
    """Parse a (possibly malformed) generation into aligned entity spans.

    Scan rule: find the next open delimiter, then the next close delimiter
    after it; the maximal run of non-whitespace characters immediately after
    the close is the label candidate. A candidate that misses the schema gets
    one retry with trailing punctuation stripped. Surfaces are then aligned
    to the leftmost unconsumed token run of the source, exact match first,
    case-insensitive second. Never raises: all malformations end up in
    ``diagnostics``.
    """
    preds, diags = _scan(generation, cfg, schema)
    spans, unaligned = _align(preds, source_tokens, diags)
    return Decoding(spans=spans, unaligned=unaligned, diagnostics=tuple(diags))


def _scan(text: str, cfg: TagConfig,
          schema: LabelSchema) -> tuple[list[tuple[str, str, int]], list[Diagnostic]]:
    preds: list[tuple[str, str, int]] = []  # (surface, label, open offset)
    diags: list[Diagnostic] = []
    pos = 0
    while True:
        i = text.find(cfg.open, pos)
        if i < 0:
            break
        body_start = i + len(cfg.open)
        j = text.find(cfg.close, body_start)
        if cfg.open != cfg.close:
            # A reopened delimiter before any close means the entity at i was
            # never closed; drop it and rescan from the inner open.
            i2 = text.find(cfg.open, body_start)
            if i2 >= 0 and (j < 0 or i2 < j):
                diags.append(Diagnostic(RepairKind.UNMATCHED_OPEN, i,
                                        "open delimiter recurs before any close"))
                pos = i2
                continue
        if j < 0:
            diags.append(Diagnostic(RepairKind.UNMATCHED_OPEN, i, "no closing delimiter"))
            break
        surface = text[body_start:j]
        after = j + len(cfg.close)
        if not surface.strip():
            diags.append(Diagnostic(RepairKind.EMPTY_ENTITY, i, f"empty surface {surface!r}"))
            pos = after
            continue
        k = after
        while k < len(text) and not text[k].isspace():
            k += 1
        candidate = text[after:k]
        label = _resolve_label(candidate, schema)
        if label is None:
            diags.append(Diagnostic(RepairKind.UNKNOWN_LABEL, after, candidate))
        else:
            preds.append((surface, label, i))
        pos = k
    return preds, diags


def _resolve_label(candidate: str, schema: LabelSchema) -> str | None:
    if candidate in schema:
        return candidate
    stripped = candidate.rstrip(_LABEL_STRIP)
    if stripped != candidate and stripped in schema:
        return stripped
    return None


def _align(preds: Sequence[tuple[str, str, int]], source_tokens: Sequence[str],
           diags: list[Diagnostic]) -> tuple[tuple[EntitySpan, ...], tuple[tuple[str, str], ...]]:
    words = [str(w) for w in source_tokens]
    consumed = [False] * len(words)
    spans: list[EntitySpan] = []
    unaligned: list[tuple[str, str]] = []
    for surface, label, offset in preds:
        parts = surface.split()
        start = find_token_run(words, parts, consumed)
        if start is None:
            start = find_token_run(words, parts, consumed, casefold=True)
        if start is None:
            unaligned.append((surface, label))
            diags.append(Diagnostic(RepairKind.UNALIGNED, offset, surface))
            continue
        for idx in range(start, start + len(parts)):
            consumed[idx] = True
        spans.append(EntitySpan(start=start, end=start + len(parts), label=label))
    return tuple(sorted(spans)), tuple(unaligned)


def encode_json(example: LabeledExample) -> str:
    """Render the JSON-format baseline output for one example."""
    return json.dumps(to_json_record(example), ensure_ascii=False)


def decode_json(generation: str, source_tokens: Sequence[str], schema: LabelSchema) -> Decoding:
    """Parse a JSON-format generation into aligned entity spans.

    Accepts either the full record shape (``{"sentence": ..., "label": {...}}``)
    or a bare type-to-surfaces map, tolerating code fences and leading or
    trailing prose around the JSON object. Same alignment and diagnostics
    contract as :func:`decode_tagged`.
    """
    diags: list[Diagnostic] = []
    obj = _extract_json_object(generation, diags)
    preds: list[tuple[str, str, int]] = []
    if obj is not None:
        label_map = obj.get("label", obj) if isinstance(obj, dict) else None
        if not isinstance(label_map, dict):
            diags.append(Diagnostic(RepairKind.MALFORMED_JSON, 0, "no type-to-surfaces map"))
            label_map = {}
        for etype, surfaces in label_map.items():
            label = _resolve_label(str(etype), schema)
            if not isinstance(surfaces, list):
                diags.append(Diagnostic(RepairKind.MALFORMED_JSON, 0,
                                        f"entry for {etype!r} is not a list"))
                continue
            for surface in surfaces:
                if not isinstance(surface, str) or not surface.strip():
                    diags.append(Diagnostic(RepairKind.EMPTY_ENTITY, 0, repr(surface)))
                elif label is None:
                    diags.append(Diagnostic(RepairKind.UNKNOWN_LABEL, 0, str(etype)))
                else:
                    preds.append((surface, label, 0))
    spans, unaligned = _align(preds, source_tokens, diags)
    return Decoding(spans=spans, unaligned=unaligned, diagnostics=tuple(diags))


def _extract_json_object(text: str, diags: list[Diagnostic]) -> dict | None:
    start = text.find("{")
    end = text.rfind("}")
    if start < 0 or end <= start:
        diags.append(Diagnostic(RepairKind.MALFORMED_JSON, 0, "no JSON object found"))
        return None
    try:
        obj = json.loads(text[start:end + 1])
    except json.JSONDecodeError as exc:
        diags.append(Diagnostic(RepairKind.MALFORMED_JSON, start, str(exc)))
        return None
    if not isinstance(obj, dict):
        diags.append(Diagnostic(RepairKind.MALFORMED_JSON, start, "top-level value is not an object"))
        return None
    return obj
