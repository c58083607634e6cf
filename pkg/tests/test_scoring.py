from __future__ import annotations

import random

import pytest

from ltner.corpus import EntitySpan
from ltner.marking import Diagnostic, RepairKind
from ltner.scoring import (Prediction, aggregate, format_table, prf, score, score_records,
                           write_csv)


def pairing_oracle(pred_spans, gold_spans):
    """Maximum matching by exhaustive recursion over equal span pairs."""
    pairs = [(i, j) for i, p in enumerate(pred_spans) for j, g in enumerate(gold_spans) if p == g]

    def best(remaining, used_p, used_g):
        most = 0
        for k, (i, j) in enumerate(remaining):
            if i in used_p or j in used_g:
                continue
            most = max(most, 1 + best(remaining[k + 1:], used_p | {i}, used_g | {j}))
        return most

    tp = best(pairs, frozenset(), frozenset())
    return tp, len(pred_spans) - tp, len(gold_spans) - tp


def spans_of(*triples):
    return [EntitySpan(a, b, t) for a, b, t in triples]


def random_nonoverlapping_spans(rng, n_tokens, max_spans, labels=("PER", "LOC", "ORG", "MISC")):
    spans = []
    i = 0
    while i < n_tokens and len(spans) < max_spans:
        if rng.random() < 0.45:
            end = min(n_tokens, i + rng.randrange(1, 3))
            spans.append(EntitySpan(i, end, rng.choice(labels)))
            i = end
        else:
            i += 1
    return spans


def test_perfect_predictions_score_one():
    gold = {"s1": spans_of((0, 1, "PER"), (3, 5, "LOC")), "s2": []}
    preds = {k: Prediction(spans=list(v)) for k, v in gold.items()}
    report = score(preds, gold)
    assert (report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0)
    assert report.n_sentences == 2


def test_worked_example_tp7_fp1_fn3():
    # 10 gold spans, 8 predicted, 7 exact matches
    gold = {"s": spans_of(*[(i, i + 1, "PER") for i in range(10)])}
    preds = {"s": Prediction(spans=spans_of(*[(i, i + 1, "PER") for i in range(7)],
                                            (20, 21, "LOC")))}
    # span (20, 21) is out of gold; give the sentence enough room
    gold["s"] = spans_of(*[(i, i + 1, "PER") for i in range(10)])
    report = score(preds, gold)
    assert (report.tp, report.fp, report.fn) == (7, 1, 3)
    assert abs(report.precision - 0.875) <= 1e-9
    assert abs(report.recall - 0.700) <= 1e-9
    assert abs(report.f1 - 7 / 9) <= 1e-9


def test_score_matches_pairing_oracle():
    rng = random.Random(2024)
    for _ in range(400):
        n_tokens = rng.randrange(1, 11)
        gold = random_nonoverlapping_spans(rng, n_tokens, 4)
        pred = random_nonoverlapping_spans(rng, n_tokens, 4)
        report = score({"s": Prediction(spans=pred)}, {"s": gold})
        assert (report.tp, report.fp, report.fn) == pairing_oracle(pred, gold)


def test_totals_invariant():
    rng = random.Random(7)
    gold, preds = {}, {}
    for i in range(50):
        sid = f"s{i}"
        gold[sid] = random_nonoverlapping_spans(rng, 10, 4)
        unaligned = [("ghost", "PER")] * rng.randrange(0, 2)
        preds[sid] = Prediction(spans=random_nonoverlapping_spans(rng, 10, 4),
                                unaligned=unaligned)
    report = score(preds, gold)
    assert report.tp + report.fn == sum(len(v) for v in gold.values())
    assert report.tp + report.fp == sum(len(set(p.spans)) + len(p.unaligned)
                                        for p in preds.values())


def test_unaligned_count_as_false_positives():
    gold = {"s": spans_of((0, 1, "PER"))}
    preds = {"s": Prediction(spans=spans_of((0, 1, "PER")),
                             unaligned=[("ghost", "LOC"), ("ghost2", "LOC")])}
    report = score(preds, gold)
    assert (report.tp, report.fp, report.fn) == (1, 2, 0)
    assert report.per_type["LOC"].fp == 2


def test_duplicate_predictions_collapse():
    gold = {"s": spans_of((0, 1, "PER"))}
    preds = {"s": Prediction(spans=spans_of((0, 1, "PER"), (0, 1, "PER")))}
    report = score(preds, gold)
    assert (report.tp, report.fp, report.fn) == (1, 0, 0)


def test_reordering_sentences_does_not_change_score():
    rng = random.Random(5)
    gold = {f"s{i}": random_nonoverlapping_spans(rng, 8, 3) for i in range(20)}
    preds = {k: Prediction(spans=random_nonoverlapping_spans(rng, 8, 3)) for k in gold}
    a = score(preds, gold)
    items = list(gold.items())
    rng.shuffle(items)
    b = score(preds, dict(items))
    assert (a.tp, a.fp, a.fn, a.f1) == (b.tp, b.fp, b.fn, b.f1)


def test_f1_monotone_in_corrected_predictions():
    gold = {"s": spans_of((0, 1, "PER"), (2, 3, "LOC"), (4, 5, "ORG"))}
    partial = Prediction(spans=spans_of((0, 1, "PER")))
    better = Prediction(spans=spans_of((0, 1, "PER"), (2, 3, "LOC")))
    assert score({"s": better}, gold).f1 > score({"s": partial}, gold).f1


def test_id_mismatch_lists_ids():
    with pytest.raises(ValueError, match="s2"):
        score({"s1": Prediction(spans=[])}, {"s1": [], "s2": []})
    with pytest.raises(ValueError, match="s3"):
        score({"s1": Prediction(spans=[]), "s3": Prediction(spans=[])}, {"s1": []})


def test_per_type_breakdown_sums_to_micro():
    rng = random.Random(11)
    gold = {f"s{i}": random_nonoverlapping_spans(rng, 9, 4) for i in range(30)}
    preds = {k: Prediction(spans=random_nonoverlapping_spans(rng, 9, 4)) for k in gold}
    report = score(preds, gold)
    assert sum(t.tp for t in report.per_type.values()) == report.tp
    assert sum(t.fp for t in report.per_type.values()) == report.fp
    assert sum(t.fn for t in report.per_type.values()) == report.fn


def test_prf_zero_denominators():
    assert prf(0, 0, 0) == (0.0, 0.0, 0.0)
    assert prf(0, 5, 0) == (0.0, 0.0, 0.0)
    assert prf(0, 0, 5) == (0.0, 0.0, 0.0)


def test_diagnostics_summary():
    gold = {"s": []}
    preds = {"s": Prediction(spans=[])}
    diags = {"s": [Diagnostic(RepairKind.UNMATCHED_OPEN, 0),
                   Diagnostic(RepairKind.UNALIGNED, 3, "x")]}
    report = score(preds, gold, diagnostics=diags)
    assert report.diagnostics_summary == {"UnmatchedOpen": 1, "Unaligned": 1}


def fake_record(sid, spans, cost="0.001", neighbors=3, diagnostics=()):
    return {
        "id": sid,
        "spans": [{"start": s.start, "end": s.end, "label": s.label} for s in spans],
        "unaligned": [],
        "diagnostics": [{"kind": k, "position": 0, "detail": ""} for k in diagnostics],
        "cost": cost,
        "neighbors": [[f"n{i}", 0.5] for i in range(neighbors)],
    }


def test_score_records_and_missing_gold():
    gold = {"s1": spans_of((0, 1, "PER"))}
    records = [fake_record("s1", spans_of((0, 1, "PER")), diagnostics=["UnknownLabel"])]
    report = score_records(records, gold)
    assert report.f1 == 1.0
    assert report.diagnostics_summary == {"UnknownLabel": 1}
    with pytest.raises(ValueError, match="sX"):
        score_records([fake_record("sX", [])], gold)


def test_aggregate_single_group_equals_score():
    gold = {"s1": spans_of((0, 1, "PER")), "s2": spans_of((1, 2, "LOC"))}
    records = [fake_record("s1", spans_of((0, 1, "PER"))),
               fake_record("s2", spans_of((1, 2, "ORG")))]
    rows = aggregate([({"tag": "##|##"}, records)], gold, group_by="tag")
    assert len(rows) == 1
    direct = score_records(records, gold)
    assert rows[0]["f1"] == direct.f1
    assert rows[0]["precision"] == direct.precision
    assert rows[0]["total_cost"] == "0.002"
    assert rows[0]["mean_shots"] == 3.0


def test_aggregate_partitions_sentence_counts():
    gold = {f"s{i}": [] for i in range(6)}
    run_a = [fake_record(f"s{i}", []) for i in range(4)]
    run_b = [fake_record(f"s{i}", []) for i in range(4, 6)]
    rows = aggregate([({"tag": "A"}, run_a), ({"tag": "B"}, run_b)], gold, group_by="tag")
    assert sum(r["n_sentences"] for r in rows) == 6


def test_aggregate_matches_independent_recomputation():
    rng = random.Random(3)
    gold = {f"s{i}": random_nonoverlapping_spans(rng, 8, 3) for i in range(40)}
    records = [fake_record(sid, random_nonoverlapping_spans(rng, 8, 3),
                           cost=f"0.00{rng.randrange(1, 9)}") for sid in gold]
    rows = aggregate([({"role": "SUA"}, records)], gold, group_by="role")

    # independent recomputation, from the raw record dicts
    tp = fp = fn = 0
    for rec in records:
        pred = {(s["start"], s["end"], s["label"]) for s in rec["spans"]}
        gld = {(g.start, g.end, g.label) for g in gold[rec["id"]]}
        tp += len(pred & gld)
        fp += len(pred - gld)
        fn += len(gld - pred)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    assert rows[0]["precision"] == p
    assert rows[0]["recall"] == r
    assert rows[0]["f1"] == f1
    assert rows[0]["total_cost"] == str(sum(float(rec["cost"]) for rec in records).__round__(5))


def test_format_table_and_csv(tmp_path):
    rows = [{"tag": "##|##", "f1": 0.91234, "diagnostics": {"Unaligned": 2}},
            {"tag": "@@|##", "f1": 0.9, "diagnostics": {}}]
    text = format_table(rows, ["tag", "f1", "diagnostics"])
    assert "##|##" in text and "0.9123" in text and "Unaligned=2" in text
    assert format_table([]) == "(no rows)\n"
    path = tmp_path / "rows.csv"
    write_csv(rows, path, ["tag", "f1"])
    assert path.read_text().startswith("tag,f1")
