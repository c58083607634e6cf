"""Entity-level exact-match scoring and run aggregation.

A prediction is a true positive iff its (start, end, label) triple exactly
matches a gold span of the same sentence; each gold span can satisfy at most
one prediction. Predictions that match nothing are false positives, and so is
every unaligned (hallucinated) prediction. Unmatched gold spans are false
negatives. Micro-averaging pools counts over all sentences and types.

Exact duplicate predicted spans within one sentence are collapsed before
counting: a generation cannot legitimately tag the same offsets twice.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from .corpus import EntitySpan
from .marking import Diagnostic


class Prediction(NamedTuple):
    """One sentence's decoded output: aligned spans plus unaligned surfaces."""

    spans: Sequence[EntitySpan]
    unaligned: Sequence[tuple[str, str]] = ()


@dataclass(frozen=True)
class TypeScore:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ScoreReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    per_type: dict[str, TypeScore]
    n_sentences: int
    diagnostics_summary: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "n_sentences": self.n_sentences,
            "per_type": {
                t: {"tp": s.tp, "fp": s.fp, "fn": s.fn,
                    "precision": s.precision, "recall": s.recall, "f1": s.f1}
                for t, s in sorted(self.per_type.items())
            },
            "diagnostics_summary": dict(sorted(self.diagnostics_summary.items())),
        }


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def score(predictions: Mapping[str, Prediction],
          gold: Mapping[str, Sequence[EntitySpan]],
          diagnostics: Mapping[str, Sequence[Diagnostic]] | None = None) -> ScoreReport:
    """Micro-averaged entity-level P/R/F1 with a per-type breakdown.

    ``predictions`` and ``gold`` must cover the same sentence ids.
    """
    missing = sorted(set(gold) ^ set(predictions))
    if missing:
        raise ValueError(f"prediction/gold id mismatch; unmatched ids: {missing[:10]}")

    counts: dict[str, list[int]] = {}  # label -> [tp, fp, fn]

    def bucket(label: str) -> list[int]:
        return counts.setdefault(label, [0, 0, 0])

    for sent_id, gold_spans in gold.items():
        pred = predictions[sent_id]
        pred_spans = sorted(set(pred.spans))  # collapse exact duplicates
        gold_set = set(gold_spans)
        if len(gold_set) != len(gold_spans):
            raise ValueError(f"duplicate gold spans in sentence {sent_id!r}")
        for span in pred_spans:
            if span in gold_set:
                bucket(span.label)[0] += 1
            else:
                bucket(span.label)[1] += 1
        matched = set(pred_spans)
        for span in gold_spans:
            if span not in matched:
                bucket(span.label)[2] += 1
        for _surface, label in pred.unaligned:
            bucket(label)[1] += 1

    per_type = {}
    for label, (tp, fp, fn) in counts.items():
        p, r, f1 = prf(tp, fp, fn)
        per_type[label] = TypeScore(tp=tp, fp=fp, fn=fn, precision=p, recall=r, f1=f1)
    tp = sum(c[0] for c in counts.values())
    fp = sum(c[1] for c in counts.values())
    fn = sum(c[2] for c in counts.values())

    total_gold = sum(len(spans) for spans in gold.values())
    total_pred = sum(len(set(p.spans)) + len(p.unaligned) for p in predictions.values())
    assert tp + fn == total_gold, "tp + fn must equal total gold spans"
    assert tp + fp == total_pred, "tp + fp must equal total predicted spans"

    diag_summary: Counter[str] = Counter()
    if diagnostics:
        for events in diagnostics.values():
            diag_summary.update(d.kind.value for d in events)

    p, r, f1 = prf(tp, fp, fn)
    return ScoreReport(tp=tp, fp=fp, fn=fn, precision=p, recall=r, f1=f1,
                       per_type=per_type, n_sentences=len(gold),
                       diagnostics_summary=dict(diag_summary))


def record_prediction(record: Mapping) -> Prediction:
    """Rebuild a Prediction from one persisted run record."""
    spans = [EntitySpan(s["start"], s["end"], s["label"]) for s in record["spans"]]
    unaligned = [(u[0], u[1]) for u in record.get("unaligned", [])]
    return Prediction(spans=spans, unaligned=unaligned)


def score_records(records: Iterable[Mapping],
                  gold: Mapping[str, Sequence[EntitySpan]]) -> ScoreReport:
    """Score persisted run records against gold spans for the same ids."""
    predictions: dict[str, Prediction] = {}
    diag_counts: Counter[str] = Counter()
    for rec in records:
        predictions[rec["id"]] = record_prediction(rec)
        for d in rec.get("diagnostics", []):
            diag_counts[d["kind"]] += 1
    missing = sorted(set(predictions) - set(gold))
    if missing:
        raise ValueError(f"records reference ids absent from gold: {missing[:10]}")
    report = score(predictions, {i: gold[i] for i in predictions})
    return ScoreReport(tp=report.tp, fp=report.fp, fn=report.fn,
                       precision=report.precision, recall=report.recall, f1=report.f1,
                       per_type=report.per_type, n_sentences=report.n_sentences,
                       diagnostics_summary=dict(diag_counts))


def aggregate(runs: Sequence[tuple[Mapping, Sequence[Mapping]]],
              gold: Mapping[str, Sequence[EntitySpan]],
              group_by: str) -> list[dict]:
    """Aggregate (config, records) pairs into one scored row per group value.

    ``group_by`` names a config key (e.g. ``tag``, ``role``, ``shots``,
    ``mode``). Each row carries P/R/F1, totals, mean shots, and the pooled
    diagnostics summary for its group.
    """
    groups: dict[str, list[Mapping]] = {}
    for config, records in runs:
        key = str(config.get(group_by, "?"))
        groups.setdefault(key, []).extend(records)

    rows = []
    for key in sorted(groups):
        records = groups[key]
        report = score_records(records, gold)
        total_cost = sum((Decimal(str(r.get("cost", "0"))) for r in records), Decimal(0))
        shots = [len(r.get("neighbors", [])) for r in records]
        rows.append({
            group_by: key,
            "n_sentences": report.n_sentences,
            "precision": report.precision,
            "recall": report.recall,
            "f1": report.f1,
            "total_cost": str(total_cost),
            "mean_shots": sum(shots) / len(shots) if shots else 0.0,
            "diagnostics": report.diagnostics_summary,
        })
    return rows


def format_table(rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> str:
    """Aligned-column text table for terminal reports."""
    if not rows:
        return "(no rows)\n"
    cols = list(columns) if columns else list(rows[0].keys())

    def cell(row: Mapping, col: str) -> str:
        value = row.get(col, "")
        if isinstance(value, float):
            return f"{value:.4f}"
        if isinstance(value, dict):
            return ",".join(f"{k}={v}" for k, v in sorted(value.items())) or "-"
        return str(value)

    grid = [[cell(r, c) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in grid)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in grid)
    return "\n".join(lines) + "\n"


def write_csv(rows: Sequence[Mapping], path: str | Path, columns: Sequence[str]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in columns})


def write_report(report: ScoreReport, path: str | Path, extra: Mapping | None = None) -> None:
    payload = dict(extra or {})
    payload["score"] = report.to_dict()
    Path(path).write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n",
                          encoding="utf-8")
