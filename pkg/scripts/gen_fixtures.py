"""Generate the deterministic IOB fixture corpora under tests/data/.

The generated text is newswire-flavored but synthetic. Two properties are
enforced so the fixtures exercise the codecs cleanly:

  * tokens use only [A-Za-z0-9.,-], so no delimiter preset character ever
    occurs as sentence text;
  * an entity surface never appears untagged earlier in its sentence, so
    leftmost alignment always recovers the original offsets.

Every sentence is verified to round-trip through encode/decode under all
well-formed delimiter presets before it is written. Re-running the script
reproduces the committed files byte for byte.
"""

from __future__ import annotations

import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ltner.corpus import (CONLL2003, WNUT2017, EntitySpan, from_json_record, make_example,
                          to_json_record)
from ltner.marking import decode_tagged, encode_tagged, well_formed_presets

ROOT = Path(__file__).resolve().parents[1]

FIRST = ["Kari", "Ana", "Petr", "Soren", "Maia", "Ravi", "Lena", "Tomas", "Ingrid", "Yusuf",
         "Marta", "Dario", "Helga", "Omar", "Nadia", "Viktor", "Paula", "Janek", "Rosa", "Emil"]
LAST = ["Molvig", "Reyes", "Castellan", "Brandt", "Okafor", "Lindqvist", "Moreau", "Santos",
        "Keller", "Varga", "Duarte", "Holm", "Ferreira", "Novak", "Eriksen", "Baros",
        "Lindgren", "Costa", "Weiss", "Horvat"]
CITY = ["Koswan", "Varena", "Alding", "Tarsus", "Brevik", "Maldon", "Quissa", "Renholm",
        "Javik", "Ostrand", "Calverra", "Nordstad", "Peltran", "Sorova", "Trelling", "Vasqum"]
LOC_PREFIX = ["East", "West", "North", "South", "Port", "Lake", "New"]
ORG_CORE = ["Delcor", "Novex", "Tarvin", "Castell", "Redmoor", "Quantis", "Halvard", "Orleth",
            "Sandor", "Vextra", "Milbrook", "Ferano", "Krontel", "Ulveco", "Pexim", "Dravon"]
ORG_SUFFIX = ["Industries", "Group", "Corp", "Holdings", "Bank", "Mills", "Motors", "Grain",
              "Securities", "Airways"]
MISC_CORE = ["Olympic", "Ralto", "Kovan", "Series", "Premier", "Winter", "Norlan", "Eastern",
             "Zendal", "Copra"]
MISC_SUFFIX = ["Cup", "Treaty", "Accord", "Games", "Open", "League", "Index", "Pact"]

VERBS = ["said", "reported", "announced", "expects", "denied", "confirmed", "added", "won",
         "lost", "beat", "signed", "visited", "warned", "noted", "forecast"]
FILLER = ["the", "a", "on", "in", "at", "of", "after", "before", "against", "over", "with",
          "to", "for", "from", "its", "their", "shares", "profit", "talks", "match",
          "season", "points", "percent", "tonnes", "officials", "government", "market",
          "quarter", "results", "deal", "strike", "border", "police", "court", "minister"]


def gen_number(rng: random.Random) -> str:
    kind = rng.random()
    if kind < 0.35:
        return str(rng.randrange(1, 100))
    if kind < 0.6:
        return f"{rng.randrange(1, 40)}.{rng.randrange(0, 10)}"
    return f"199{rng.randrange(5, 8)}-{rng.randrange(1, 13):02d}-{rng.randrange(1, 29):02d}"


def gen_name(kind: str, rng: random.Random) -> list[str]:
    if kind == "PER":
        if rng.random() < 0.3:
            return [rng.choice(LAST)]
        return [rng.choice(FIRST), rng.choice(LAST)]
    if kind == "LOC":
        if rng.random() < 0.25:
            return [rng.choice(LOC_PREFIX), rng.choice(CITY)]
        return [rng.choice(CITY)]
    if kind == "ORG":
        roll = rng.random()
        if roll < 0.4:
            return [rng.choice(ORG_CORE)]
        if roll < 0.85:
            return [rng.choice(ORG_CORE), rng.choice(ORG_SUFFIX)]
        return [rng.choice(ORG_CORE), "of", rng.choice(CITY)]
    if rng.random() < 0.5:
        return [rng.choice(MISC_CORE)]
    return [rng.choice(MISC_CORE), rng.choice(MISC_SUFFIX)]


# Template atoms: literal words, entity slots, N for a number token.
TEMPLATES = [
    ["PER", "said", "ORG", "would", "cut", "N", "jobs", "in", "LOC", "."],
    ["ORG", "shares", "rose", "N", "percent", "in", "LOC", "trading", "."],
    ["LOC", ",", "N", "-", "ORG", "beat", "ORG", "N", "-", "N", "."],
    ["PER", "won", "the", "MISC", "in", "LOC", "on", "N", "."],
    ["Officials", "in", "LOC", "denied", "the", "report", "on", "N", "."],
    ["ORG", "and", "ORG", "signed", "the", "MISC", "after", "talks", "in", "LOC", "."],
    ["The", "minister", "said", "the", "deal", "would", "be", "reviewed", "."],
    ["PER", ",", "coach", "of", "ORG", ",", "praised", "PER", "after", "the", "match", "."],
    ["Standings", ":", "ORG", "ORG", "level", "on", "N", "points", "."],
    ["LOC", "police", "arrested", "N", "people", "after", "the", "strike", "."],
    ["Results", "of", "the", "MISC", "played", "on", "N", ":"],
    ["PER", "visited", "LOC", "before", "the", "MISC", "talks", "."],
    ["ORG", "forecast", "profit", "of", "N", "million", "for", "the", "quarter", "."],
    ["Trading", "in", "ORG", "was", "suspended", "on", "N", "."],
    ["The", "government", "said", "exports", "fell", "N", "percent", "."],
    ["PER", "of", "LOC", "took", "the", "lead", "in", "the", "MISC", "."],
    ["Wheat", "prices", "rose", "to", "N", "tonnes", "at", "the", "border", "."],
    ["ORG", "named", "PER", "as", "its", "new", "chairman", "on", "N", "."],
    ["In", "LOC", ",", "PER", "warned", "against", "the", "MISC", "."],
    ["The", "court", "in", "LOC", "ruled", "against", "ORG", "on", "N", "."],
    ["Soccer", "-", "PER", "scored", "twice", "as", "ORG", "beat", "ORG", "."],
    ["No", "casualties", "were", "reported", "after", "the", "quake", "."],
    ["MISC", "champion", "PER", "lost", "to", "PER", "in", "LOC", "."],
    ["Shares", "of", "ORG", "closed", "at", "N", "after", "the", "results", "."],
    ["Rain", "delayed", "play", "on", "day", "N", "of", "the", "MISC", "."],
]


def gen_sentence(rng: random.Random, types: tuple[str, ...]):
    template = rng.choice(TEMPLATES)
    words: list[str] = []
    spans: list[EntitySpan] = []
    used_names: set[str] = set()
    for atom in template:
        if atom == "N":
            words.append(gen_number(rng))
        elif atom in ("PER", "LOC", "ORG", "MISC"):
            for _ in range(20):
                name = gen_name(atom, rng)
                if " ".join(name) not in used_names:
                    break
            used_names.add(" ".join(name))
            label = _map_type(atom, types, rng)
            spans.append(EntitySpan(len(words), len(words) + len(name), label))
            words.extend(name)
        else:
            words.append(atom)
    return words, spans


def _map_type(atom: str, types: tuple[str, ...], rng: random.Random) -> str:
    if atom in types:
        return atom
    # WNUT-style inventory: spread the slot kinds over the six types.
    if atom == "PER":
        return "PERSON" if rng.random() < 0.75 else "GROUP"
    if atom == "LOC":
        return "LOCATION"
    if atom == "ORG":
        return "CORPORATION"
    return "PRODUCT" if rng.random() < 0.5 else "CREATIVE-WORK"


def _pos_tag(word: str) -> str:
    if word[0].isdigit():
        return "CD"
    if word[0].isupper():
        return "NNP"
    if word in (",", ".", ":", "-"):
        return word
    return "NN"


def render_conll(examples, with_docstart: bool = True) -> str:
    lines = []
    for i, (words, spans) in enumerate(examples):
        if with_docstart and i % 40 == 0:
            lines.append("-DOCSTART- -X- -X- O")
            lines.append("")
        tags = _iob1_tags(words, spans)
        for word, tag in zip(words, tags):
            lines.append(f"{word} {_pos_tag(word)} I-NP {tag}")
        lines.append("")
    return "\n".join(lines) + "\n"


def render_wnut(examples) -> str:
    lines = []
    for words, spans in examples:
        tags = _iob1_tags(words, spans, lowercase=True, iob2=True)
        for word, tag in zip(words, tags):
            lines.append(f"{word}\t{tag}")
        lines.append("")
    return "\n".join(lines) + "\n"


def _iob1_tags(words, spans, lowercase: bool = False, iob2: bool = False) -> list[str]:
    tags = ["O"] * len(words)
    prev_end_type: dict[int, str] = {}
    for span in spans:
        label = span.label.lower() if lowercase else span.label
        # IOB1 writes I- at span starts unless the previous token closed a
        # same-type span; IOB2 always writes B-.
        starts_b = iob2 or prev_end_type.get(span.start) == span.label
        tags[span.start] = ("B-" if starts_b else "I-") + label
        for i in range(span.start + 1, span.end):
            tags[i] = "I-" + label
        prev_end_type[span.end] = span.label
    return tags


def verify_roundtrips(words, spans, schema) -> bool:
    ex = make_example("probe", words, spans, "train")
    if from_json_record(to_json_record(ex), id=ex.id, split=ex.split) != ex:
        return False
    for cfg in well_formed_presets(schema):
        dec = decode_tagged(encode_tagged(ex, cfg), ex.words, cfg, schema)
        if dec.spans != ex.spans or dec.diagnostics:
            return False
    return True


def generate(schema, n: int, seed: int):
    rng = random.Random(seed)
    seen: set[str] = set()
    out = []
    while len(out) < n:
        words, spans = gen_sentence(rng, schema.names)
        key = " ".join(words)
        if key in seen or not verify_roundtrips(words, spans, schema):
            continue
        seen.add(key)
        out.append((words, spans))
    return out


def main() -> None:
    conll_dir = ROOT / "tests" / "data" / "synth_conll"
    wnut_dir = ROOT / "tests" / "data" / "synth_wnut"
    conll_dir.mkdir(parents=True, exist_ok=True)
    wnut_dir.mkdir(parents=True, exist_ok=True)

    (conll_dir / "train.iob").write_text(
        render_conll(generate(CONLL2003, 1200, seed=101)), encoding="utf-8")
    (conll_dir / "test.iob").write_text(
        render_conll(generate(CONLL2003, 620, seed=202)), encoding="utf-8")
    (wnut_dir / "train.iob").write_text(
        render_wnut(generate(WNUT2017, 200, seed=303)), encoding="utf-8")
    (wnut_dir / "test.iob").write_text(
        render_wnut(generate(WNUT2017, 80, seed=404)), encoding="utf-8")
    for path in sorted(ROOT.glob("tests/data/synth_*/*.iob")):
        n_sent = path.read_text(encoding="utf-8").count("\n\n")
        print(f"{path.relative_to(ROOT)}: ~{n_sent} sentences")


if __name__ == "__main__":
    main()
