"""Experiment execution: retrieve, prompt, complete, decode, record, score.

One run walks the configured test sentences through the full pipeline and
persists a JSONL record per sentence plus a scored report. Ablation grids and
sweeps reuse retrieval results across variants (neighbors are computed once
per sentence per index) so only the dimension under study changes.

Requests run concurrently up to the configured limit; records are written in
corpus order through a single writer, so identical inputs always produce
byte-identical records files. Wall-clock fields (timestamp, latency) are only
populated for the live backend, keeping replay and mock runs deterministic.
"""

from __future__ import annotations

import json
import random
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Callable, Sequence

from .config import RunConfig
from .corpus import (EntitySpan, LabeledExample, LabelSchema, get_schema, load_corpus,
                     make_example, subsample_pool)
from .llm_client import (Backend, CompletionRequest, CompletionResult, LiveBackend, MockBackend,
                         PriceTable, ReplayBackend, cost_of, estimate_tokens, request_digest)
from .marking import (Decoding, TagConfig, decode_json, decode_tagged, encode_json,
                      encode_tagged, get_tag_config, well_formed_presets)
from .prompting import (CANONICAL_ROLE_CODES, PromptPlan, RoleSetting, build_messages,
                        default_instruction)
from .retrieval import Embedder, Neighbor, VectorIndex, build_index, make_embedder
from .scoring import Prediction, ScoreReport, format_table, score


@dataclass
class RunResult:
    out_dir: Path
    records: list[dict]
    report: dict

    @property
    def f1(self) -> float:
        return self.report["score"]["f1"]


def resolve_tag_config(cfg: RunConfig) -> TagConfig:
    extra = {name: TagConfig(open=pair[0], close=pair[1], name=name)
             for name, pair in cfg.tag_configs.items()}
    return get_tag_config(cfg.tag, extra)


def resolve_instruction(cfg: RunConfig) -> str:
    if cfg.instruction_template:
        return Path(cfg.instruction_template).read_text(encoding="utf-8")
    return default_instruction(cfg.mode)


def make_echo_gold_responder(examples: Sequence[LabeledExample], tag_cfg: TagConfig,
                             mode: str = "tag") -> Callable[[CompletionRequest], str]:
    """Perfect oracle: answers each query with its own gold tagging."""
    by_sentence: dict[str, LabeledExample] = {}
    for ex in examples:
        by_sentence.setdefault(ex.sentence, ex)

    def responder(req: CompletionRequest) -> str:
        ex = by_sentence.get(req.messages[-1].content)
        if ex is None:
            return "{}" if mode == "json" else req.messages[-1].content
        return encode_json(ex) if mode == "json" else encode_tagged(ex, tag_cfg)

    return responder


def make_noisy_gold_responder(examples: Sequence[LabeledExample], tag_cfg: TagConfig,
                              schema: LabelSchema, noise: dict, seed: int,
                              mode: str = "tag") -> Callable[[CompletionRequest], str]:
    """Gold tagging corrupted at configurable rates.

    Per entity: dropped with probability ``drop`` or relabeled with
    probability ``relabel``. Per sentence: spare tokens are tagged with random
    types at rate ``hallucinate`` (expected count), and the whole generation
    is cut short with probability ``truncate``. Deterministic given the seed
    and the query sentence.
    """
    by_sentence: dict[str, LabeledExample] = {}
    for ex in examples:
        by_sentence.setdefault(ex.sentence, ex)
    drop = float(noise.get("drop", 0.0))
    relabel = float(noise.get("relabel", 0.0))
    hallucinate = float(noise.get("hallucinate", 0.0))
    truncate = float(noise.get("truncate", 0.0))

    def responder(req: CompletionRequest) -> str:
        query = req.messages[-1].content
        ex = by_sentence.get(query)
        if ex is None:
            return query
        rng = random.Random(f"{seed}:{query}")
        spans = []
        for span in ex.spans:
            roll = rng.random()
            if roll < drop:
                continue
            if roll < drop + relabel:
                others = [n for n in schema.names if n != span.label] or [span.label]
                spans.append(EntitySpan(span.start, span.end, rng.choice(others)))
            else:
                spans.append(span)
        taken = [False] * len(ex.tokens)
        for span in spans:
            for i in range(span.start, span.end):
                taken[i] = True
        extra = hallucinate
        while extra > 0 and rng.random() < extra:
            extra -= 1.0
            free = [i for i, used in enumerate(taken) if not used]
            if not free:
                break
            pick = rng.choice(free)
            taken[pick] = True
            spans.append(EntitySpan(pick, pick + 1, rng.choice(schema.names)))
        noisy = make_example(ex.id, ex.words, sorted(spans), ex.split)
        text = encode_json(noisy) if mode == "json" else encode_tagged(noisy, tag_cfg)
        if truncate and rng.random() < truncate and len(text) > 8:
            text = text[:rng.randrange(len(text) // 2, len(text))]
        return text

    return responder


def build_backend(cfg: RunConfig, test_examples: Sequence[LabeledExample],
                  tag_cfg: TagConfig, schema: LabelSchema) -> Backend:
    if cfg.backend == "mock":
        return MockBackend(_mock_responder(cfg, test_examples, tag_cfg, schema))
    if cfg.backend == "live":
        return LiveBackend(base_url=cfg.base_url, requests_per_minute=cfg.requests_per_minute)
    if cfg.backend == "replay":
        fallthrough: Backend | None = None
        if cfg.replay_record:
            if cfg.replay_fallthrough == "mock":
                fallthrough = MockBackend(_mock_responder(cfg, test_examples, tag_cfg, schema))
            else:
                fallthrough = LiveBackend(base_url=cfg.base_url,
                                          requests_per_minute=cfg.requests_per_minute)
        return ReplayBackend(cache_dir=cfg.replay_dir, fallthrough=fallthrough)
    raise ValueError(f"unknown backend {cfg.backend!r}")


def _mock_responder(cfg: RunConfig, examples: Sequence[LabeledExample], tag_cfg: TagConfig,
                    schema: LabelSchema) -> Callable[[CompletionRequest], str]:
    noise = cfg.mock_noise or {}
    if any(float(noise.get(k, 0.0)) > 0 for k in ("drop", "relabel", "hallucinate", "truncate")):
        return make_noisy_gold_responder(examples, tag_cfg, schema, noise, cfg.seed, cfg.mode)
    return make_echo_gold_responder(examples, tag_cfg, cfg.mode)


class NeighborCache:
    """Per-sentence neighbor lists, computed once per index and reusable.

    Backed by an optional JSON file keyed by sentence id; entries are
    recomputed when a caller needs more neighbors than were stored.
    """

    def __init__(self, path: str | Path | None = None, compute_k: int = 0):
        self.path = Path(path) if path else None
        self.compute_k = compute_k
        self._entries: dict[str, list] = {}
        self._embedder_name = ""
        self._dirty = False
        if self.path and self.path.exists():
            data = json.loads(self.path.read_text(encoding="utf-8"))
            self._entries = data.get("entries", {})
            self._embedder_name = data.get("embedder", "")

    def get(self, example: LabeledExample, index: VectorIndex, embedder: Embedder,
            k: int) -> list[Neighbor]:
        if k <= 0:
            return []
        if self._embedder_name and self._embedder_name != embedder.name:
            self._entries.clear()
            self._embedder_name = ""
        entry = self._entries.get(example.id)
        if entry is None or (len(entry) < k and len(entry) < len(index)):
            want = max(k, self.compute_k)
            neighbors = index.knn(embedder.embed(example.sentence), want)
            entry = [[n.example_id, n.similarity] for n in neighbors]
            self._entries[example.id] = entry
            self._embedder_name = embedder.name
            self._dirty = True
        return [Neighbor(example_id=nid, similarity=sim, rank=r + 1)
                for r, (nid, sim) in enumerate(entry[:k])]

    def save(self) -> None:
        if self.path and self._dirty:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            payload = {"embedder": self._embedder_name, "entries": self._entries}
            self.path.write_text(json.dumps(payload), encoding="utf-8")
            self._dirty = False


class _CostGate:
    """Reservation-based budget guard for in-flight requests."""

    def __init__(self, cap: Decimal | None):
        self.cap = cap
        self.spent = Decimal(0)
        self.reserved = Decimal(0)

    def admits(self) -> bool:
        return self.cap is None or self.spent + self.reserved < self.cap

    def reserve(self, estimate: Decimal) -> None:
        self.reserved += estimate

    def settle(self, estimate: Decimal, actual: Decimal) -> None:
        self.reserved -= estimate
        self.spent += actual


def run_experiment(cfg: RunConfig, *, corpus: Sequence[LabeledExample] | None = None,
                   index: VectorIndex | None = None, backend: Backend | None = None,
                   neighbor_cache: NeighborCache | None = None,
                   write_outputs: bool = True) -> RunResult:
    """Execute one configured run end to end and score it."""
    cfg.validate(check_files=corpus is None or index is None)
    schema = get_schema(cfg.dataset)
    if corpus is None:
        corpus = load_corpus(cfg.corpus_path)
    test = [ex for ex in corpus if ex.split == cfg.split]
    if not test:
        raise ValueError(f"no sentences in split {cfg.split!r}")
    if cfg.limit_test:
        test = test[:cfg.limit_test]
    if index is None:
        index = VectorIndex.load(cfg.index_path)
    embedder = make_embedder(cfg.embedder, model=cfg.embed_model, base_url=cfg.embed_base_url)
    if index.embedder_name != embedder.name:
        raise ValueError(f"index was built with embedder {index.embedder_name!r}, "
                         f"run is configured for {embedder.name!r}")
    tag_cfg = resolve_tag_config(cfg)
    role = RoleSetting(cfg.role)
    plan = PromptPlan(instruction=resolve_instruction(cfg), shots=cfg.shots,
                      ordering=cfg.ordering)
    if backend is None:
        backend = build_backend(cfg, test, tag_cfg, schema)
    prices = PriceTable.from_mapping(cfg.prices)
    cache = neighbor_cache if neighbor_cache is not None else NeighborCache(cfg.neighbor_cache or None)
    gate = _CostGate(Decimal(cfg.cost_cap) if cfg.cost_cap else None)
    fingerprint = cfg.fingerprint()

    records: list[dict] = []
    partial = False
    window = max(1, cfg.concurrency)
    pending: deque[tuple] = deque()

    def settle_one() -> None:
        ex, neighbors, digest, estimate, future = pending.popleft()
        result: CompletionResult = future.result()
        actual = cost_of(result.input_tokens, result.output_tokens, cfg.model, prices)
        gate.settle(estimate, actual)
        records.append(_make_record(cfg, ex, neighbors, digest, result, actual,
                                    fingerprint, schema, tag_cfg))

    with ThreadPoolExecutor(max_workers=window) as pool:
        for ex in test:
            if not gate.admits():
                partial = True
                break
            neighbors = cache.get(ex, index, embedder, cfg.shots)
            shots = [index.example(n.example_id) for n in neighbors]
            messages = build_messages(plan, role, tag_cfg, shots, ex.sentence, schema, cfg.mode)
            req = CompletionRequest(model=cfg.model, messages=tuple(messages),
                                    temperature=cfg.temperature,
                                    max_output_tokens=cfg.max_output_tokens)
            estimate = cost_of(estimate_tokens(messages), cfg.max_output_tokens,
                               cfg.model, prices)
            gate.reserve(estimate)
            pending.append((ex, neighbors, request_digest(req), estimate,
                            pool.submit(backend.complete, req)))
            while len(pending) >= window:
                settle_one()
        while pending:
            settle_one()
    cache.save()

    by_id = {ex.id: ex for ex in test}
    gold = {rec["id"]: list(by_id[rec["id"]].spans) for rec in records}
    report_score = _score_from_records(records, gold)
    report = {
        "config": cfg.to_dict(),
        "fingerprint": fingerprint,
        "partial": partial,
        "n_sentences": len(records),
        "total_cost": str(sum((Decimal(r["cost"]) for r in records), Decimal(0))),
        "total_input_tokens": sum(r["usage"]["input_tokens"] for r in records),
        "total_output_tokens": sum(r["usage"]["output_tokens"] for r in records),
        "mean_shots": (sum(len(r["neighbors"]) for r in records) / len(records)
                       if records else 0.0),
        "score": report_score.to_dict(),
    }
    out_dir = Path(cfg.out_dir)
    if write_outputs:
        _write_run_outputs(out_dir, cfg, records, report, report_score)
    return RunResult(out_dir=out_dir, records=records, report=report)


def _score_from_records(records: Sequence[dict],
                        gold: dict[str, list[EntitySpan]]) -> ScoreReport:
    predictions = {}
    diag_counts: Counter[str] = Counter()
    for rec in records:
        spans = [EntitySpan(s["start"], s["end"], s["label"]) for s in rec["spans"]]
        predictions[rec["id"]] = Prediction(spans=spans, unaligned=rec["unaligned"])
        for d in rec["diagnostics"]:
            diag_counts[d["kind"]] += 1
    report = score(predictions, gold)
    return ScoreReport(tp=report.tp, fp=report.fp, fn=report.fn, precision=report.precision,
                       recall=report.recall, f1=report.f1, per_type=report.per_type,
                       n_sentences=report.n_sentences, diagnostics_summary=dict(diag_counts))


def _make_record(cfg: RunConfig, ex: LabeledExample, neighbors: list[Neighbor], digest: str,
                 result: CompletionResult, cost: Decimal, fingerprint: str,
                 schema: LabelSchema, tag_cfg: TagConfig) -> dict:
    if cfg.mode == "json":
        decoding = decode_json(result.text, ex.words, schema)
    else:
        decoding = decode_tagged(result.text, ex.words, tag_cfg, schema)
    timestamp = (datetime.now(timezone.utc).isoformat(timespec="seconds")
                 if result.backend == "live" else None)
    return {
        "id": ex.id,
        "fingerprint": fingerprint,
        "neighbors": [[n.example_id, n.similarity] for n in neighbors],
        "messages_digest": digest,
        "generation": result.text,
        "spans": [{"start": s.start, "end": s.end, "label": s.label} for s in decoding.spans],
        "unaligned": [[surface, label] for surface, label in decoding.unaligned],
        "diagnostics": [{"kind": d.kind.value, "position": d.position, "detail": d.detail}
                        for d in decoding.diagnostics],
        "usage": {"input_tokens": result.input_tokens, "output_tokens": result.output_tokens},
        "cost": str(cost),
        "backend": result.backend,
        "attempts": result.attempts,
        "latency_ms": result.latency_ms,
        "timestamp": timestamp,
    }


def _write_run_outputs(out_dir: Path, cfg: RunConfig, records: list[dict], report: dict,
                       report_score: ScoreReport) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with (out_dir / "records.jsonl").open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    rows = [{"type": t, "tp": s.tp, "fp": s.fp, "fn": s.fn, "precision": s.precision,
             "recall": s.recall, "f1": s.f1}
            for t, s in sorted(report_score.per_type.items())]
    rows.append({"type": "ALL", "tp": report_score.tp, "fp": report_score.fp,
                 "fn": report_score.fn, "precision": report_score.precision,
                 "recall": report_score.recall, "f1": report_score.f1})
    (out_dir / "report.txt").write_text(
        format_table(rows, ["type", "tp", "fp", "fn", "precision", "recall", "f1"]),
        encoding="utf-8")


def _variant_dir(base: Path, kind: str, position: int, name: str) -> Path:
    slug = "".join(ch if ch.isalnum() else "_" for ch in name) or "cfg"
    return base / kind / f"{position:02d}_{slug}"


def ablate_tags(cfg: RunConfig, tag_names: Sequence[str] | None = None,
                *, corpus: Sequence[LabeledExample] | None = None,
                index: VectorIndex | None = None) -> list[dict]:
    """Run the tag-format grid with retrieval shared across variants."""
    schema = get_schema(cfg.dataset)
    if tag_names is None:
        tag_names = [c.name for c in well_formed_presets(schema)]
    return _run_grid(cfg, "tag", tag_names, corpus=corpus, index=index)


def ablate_roles(cfg: RunConfig, roles: Sequence[str] | None = None,
                 *, corpus: Sequence[LabeledExample] | None = None,
                 index: VectorIndex | None = None) -> list[dict]:
    """Run the role-setting grid with retrieval shared across variants."""
    if roles is None:
        roles = list(CANONICAL_ROLE_CODES)
    return _run_grid(cfg, "role", roles, corpus=corpus, index=index)


def _run_grid(cfg: RunConfig, field: str, values: Sequence[str],
              *, corpus: Sequence[LabeledExample] | None,
              index: VectorIndex | None) -> list[dict]:
    if corpus is None:
        corpus = load_corpus(cfg.corpus_path)
    if index is None:
        index = VectorIndex.load(cfg.index_path)
    cache = NeighborCache(cfg.neighbor_cache or None, compute_k=cfg.shots)
    base_out = Path(cfg.out_dir)
    rows = []
    for pos, value in enumerate(values):
        variant = RunConfig(**{**cfg.to_dict(), field: value,
                               "out_dir": str(_variant_dir(base_out, field, pos, value))})
        try:
            result = run_experiment(variant, corpus=corpus, index=index, neighbor_cache=cache)
            rows.append({field: value, "failed": False, "error": "",
                         "n_sentences": result.report["n_sentences"],
                         "precision": result.report["score"]["precision"],
                         "recall": result.report["score"]["recall"],
                         "f1": result.report["score"]["f1"],
                         "total_cost": result.report["total_cost"]})
        except Exception as exc:
            rows.append({field: value, "failed": True, "error": str(exc), "n_sentences": 0,
                         "precision": 0.0, "recall": 0.0, "f1": 0.0, "total_cost": "0"})
    return rows


SHOTS_SWEEP_DEFAULT = (0, 1, 5, 10, 20, 30, 50, 70, 100, 150, 200)
BUDGET_SWEEP_DEFAULT = (30, 100, 500, 1000, 5000, "full")


def sweep(cfg: RunConfig, dimension: str, values: Sequence,
          *, corpus: Sequence[LabeledExample] | None = None,
          index: VectorIndex | None = None) -> list[dict]:
    """One scored run per value of shots, budget, or cost_cap."""
    if dimension not in ("shots", "budget", "cost_cap"):
        raise ValueError(f"unknown sweep dimension {dimension!r}")
    numeric = [float(v) for v in values if v != "full"]
    if any(b < a for a, b in zip(numeric, numeric[1:])):
        raise ValueError("sweep values must be ascending")
    if corpus is None:
        corpus = load_corpus(cfg.corpus_path)
    base_out = Path(cfg.out_dir)
    rows = []

    if dimension == "budget":
        pool = [ex for ex in corpus if ex.split == "train"]
        values = [v for v in values if v == "full" or int(v) <= len(pool)]
        embedder = make_embedder(cfg.embedder, model=cfg.embed_model,
                                 base_url=cfg.embed_base_url)
        for pos, value in enumerate(values):
            n = len(pool) if value == "full" else int(value)
            variant = RunConfig(**{**cfg.to_dict(),
                                   "out_dir": str(_variant_dir(base_out, "budget", pos, str(value)))})
            subset = subsample_pool(pool, n, cfg.seed)
            sub_index = build_index(subset, embedder)
            result = run_experiment(variant, corpus=corpus, index=sub_index,
                                    neighbor_cache=NeighborCache())
            rows.append(_sweep_row("budget", n, result))
        return rows

    if index is None:
        index = VectorIndex.load(cfg.index_path)
    cache = NeighborCache(cfg.neighbor_cache or None,
                          compute_k=max([int(v) for v in values], default=0)
                          if dimension == "shots" else cfg.shots)
    for pos, value in enumerate(values):
        overrides = {"shots": int(value)} if dimension == "shots" else {"cost_cap": str(value)}
        variant = RunConfig(**{**cfg.to_dict(), **overrides,
                               "out_dir": str(_variant_dir(base_out, dimension, pos, str(value)))})
        result = run_experiment(variant, corpus=corpus, index=index, neighbor_cache=cache)
        rows.append(_sweep_row(dimension, value, result))
    return rows


def _sweep_row(dimension: str, value, result: RunResult) -> dict:
    return {
        "value": value,
        "precision": result.report["score"]["precision"],
        "recall": result.report["score"]["recall"],
        "f1": result.report["score"]["f1"],
        "total_cost": result.report["total_cost"],
        "partial": result.report["partial"],
        "dimension": dimension,
    }
