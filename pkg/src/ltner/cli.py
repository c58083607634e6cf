"""Command-line harness: ingest corpora, build indices, run experiments."""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

from .config import RunConfig, load_config
from .corpus import get_schema, load_corpus, parse_iob, save_corpus
from .harness import (BUDGET_SWEEP_DEFAULT, SHOTS_SWEEP_DEFAULT, ablate_roles, ablate_tags,
                      run_experiment, sweep)
from .retrieval import VectorIndex, build_index, make_embedder
from .scoring import aggregate, format_table, score_records, write_csv, write_report


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args) or 0
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ltner",
                                     description="Few-shot NER with delimiter-tagged LLM output")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("ingest", help="convert IOB column files to a corpus JSONL")
    p.add_argument("--dataset", required=True, choices=["conll2003", "wnut2017"])
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--dev")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("index", help="embed a corpus split and save the vector index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--embedder", default="hashed", choices=["hashed", "remote"])
    p.add_argument("--embed-model", default="")
    p.add_argument("--embed-base-url", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("run", help="run one configured experiment")
    _add_config_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate-tags", help="run the delimiter-format grid")
    _add_config_args(p)
    p.add_argument("--tags", help="comma-separated tag config names (default: built-in grid)")
    p.set_defaults(func=cmd_ablate_tags)

    p = sub.add_parser("ablate-roles", help="run the role-setting grid")
    _add_config_args(p)
    p.add_argument("--roles", help="comma-separated role codes (default: built-in grid)")
    p.set_defaults(func=cmd_ablate_roles)

    p = sub.add_parser("sweep", help="sweep shots, annotation budget, or cost cap")
    _add_config_args(p)
    p.add_argument("--dimension", required=True, choices=["shots", "budget", "cost_cap"])
    p.add_argument("--values", help="comma-separated ascending values ('full' allowed for budget)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("score", help="re-score a records.jsonl against corpus gold")
    p.add_argument("--records", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", help="write report JSON here")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="tabulate one or more run directories")
    p.add_argument("runs", nargs="+", help="run directories (each with config.json + records.jsonl)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--group-by", default="tag")
    p.add_argument("--csv", help="also write rows to this CSV path")
    p.set_defaults(func=cmd_report)

    return parser


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags below override its values")
    p.add_argument("--corpus-path", dest="corpus_path")
    p.add_argument("--index-path", dest="index_path")
    p.add_argument("--dataset")
    p.add_argument("--split")
    p.add_argument("--limit-test", dest="limit_test", type=int)
    p.add_argument("--shots", type=int)
    p.add_argument("--tag")
    p.add_argument("--role")
    p.add_argument("--mode", choices=["tag", "json"])
    p.add_argument("--ordering", choices=["similar-last", "similar-first"])
    p.add_argument("--instruction-template", dest="instruction_template")
    p.add_argument("--model")
    p.add_argument("--backend", choices=["live", "replay", "mock"])
    p.add_argument("--base-url", dest="base_url")
    p.add_argument("--replay-dir", dest="replay_dir")
    p.add_argument("--replay-record", dest="replay_record", action="store_const", const=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--concurrency", type=int)
    p.add_argument("--cost-cap", dest="cost_cap")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--print-config", action="store_true",
                   help="print the fully resolved config and exit")


_CONFIG_KEYS = ("corpus_path", "index_path", "dataset", "split", "limit_test", "shots", "tag",
                "role", "mode", "ordering", "instruction_template", "model", "backend",
                "base_url", "replay_dir", "replay_record", "seed", "concurrency", "cost_cap",
                "out_dir")


def _resolve_config(args: argparse.Namespace) -> RunConfig | None:
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    cfg = load_config(args.config, overrides)
    if args.print_config:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return None
    return cfg


def cmd_ingest(args: argparse.Namespace) -> int:
    schema = get_schema(args.dataset)
    examples = []
    for split, path in (("train", args.train), ("test", args.test), ("dev", args.dev)):
        if not path:
            continue
        with open(path, "r", encoding="utf-8") as fh:
            examples.extend(parse_iob(fh, schema, split=split))
    if not examples:
        raise ValueError("no sentences found in the input files")
    save_corpus(examples, args.out)

    split_counts = Counter(ex.split for ex in examples)
    type_counts = Counter(span.label for ex in examples for span in ex.spans)
    print(f"dataset: {args.dataset} (types: {', '.join(schema.names)})")
    for split in ("train", "dev", "test"):
        if split_counts.get(split):
            print(f"  {split}: {split_counts[split]} sentences")
    print(f"  entities: {sum(type_counts.values())} total")
    for name in schema.names:
        print(f"    {name}: {type_counts.get(name, 0)}")
    print(f"wrote {args.out}")
    return 0


def cmd_index(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    pool = [ex for ex in corpus if ex.split == args.split]
    if not pool:
        raise ValueError(f"corpus has no sentences in split {args.split!r}")
    embedder = make_embedder(args.embedder, model=args.embed_model,
                             base_url=args.embed_base_url)
    index = build_index(pool, embedder)
    index.save(args.out)
    print(f"indexed {len(index)} sentences (dim {index.dim}, embedder {embedder.name})")
    print(f"wrote {args.out}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    if cfg is None:
        return 0
    result = run_experiment(cfg)
    s = result.report["score"]
    flag = " (partial)" if result.report["partial"] else ""
    print(f"run {result.report['fingerprint'][:12]}{flag}: "
          f"{result.report['n_sentences']} sentences  "
          f"P {s['precision']:.4f}  R {s['recall']:.4f}  F1 {s['f1']:.4f}  "
          f"cost {result.report['total_cost']}")
    print(f"wrote {result.out_dir}/records.jsonl and report.json")
    return 0


def cmd_ablate_tags(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    if cfg is None:
        return 0
    names = args.tags.split(",") if args.tags else None
    rows = ablate_tags(cfg, names)
    return _emit_grid(cfg, rows, "tag", "tag_grid")


def cmd_ablate_roles(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    if cfg is None:
        return 0
    roles = args.roles.split(",") if args.roles else None
    rows = ablate_roles(cfg, roles)
    return _emit_grid(cfg, rows, "role", "role_grid")


def _emit_grid(cfg: RunConfig, rows: list[dict], key: str, stem: str) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    columns = [key, "n_sentences", "precision", "recall", "f1", "total_cost", "failed", "error"]
    (out_dir / f"{stem}.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    write_csv(rows, out_dir / f"{stem}.csv", columns)
    print(format_table(rows, columns), end="")
    print(f"wrote {out_dir}/{stem}.json and {stem}.csv")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    if cfg is None:
        return 0
    if args.values:
        values = [v if v == "full" else (v if args.dimension == "cost_cap" else int(v))
                  for v in args.values.split(",")]
    elif args.dimension == "shots":
        values = list(SHOTS_SWEEP_DEFAULT)
    elif args.dimension == "budget":
        values = list(BUDGET_SWEEP_DEFAULT)
    else:
        raise ValueError("cost_cap sweeps need explicit --values")
    rows = sweep(cfg, args.dimension, values)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    columns = ["value", "precision", "recall", "f1", "total_cost"]
    write_csv(rows, out_dir / "sweep.csv", columns)
    (out_dir / "sweep.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    print(format_table(rows, columns + ["partial"]), end="")
    print(f"wrote {out_dir}/sweep.csv")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    gold = {ex.id: list(ex.spans) for ex in corpus}
    with open(args.records, "r", encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    report = score_records(records, gold)
    rows = [{"type": t, **{k: getattr(s, k) for k in ("tp", "fp", "fn", "precision", "recall", "f1")}}
            for t, s in sorted(report.per_type.items())]
    rows.append({"type": "ALL", "tp": report.tp, "fp": report.fp, "fn": report.fn,
                 "precision": report.precision, "recall": report.recall, "f1": report.f1})
    print(format_table(rows, ["type", "tp", "fp", "fn", "precision", "recall", "f1"]), end="")
    if args.out:
        write_report(report, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    gold = {ex.id: list(ex.spans) for ex in corpus}
    runs = []
    for run_dir in args.runs:
        run_path = Path(run_dir)
        config = json.loads((run_path / "config.json").read_text(encoding="utf-8"))
        with (run_path / "records.jsonl").open("r", encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        runs.append((config, records))
    rows = aggregate(runs, gold, args.group_by)
    columns = [args.group_by, "n_sentences", "precision", "recall", "f1",
               "total_cost", "mean_shots", "diagnostics"]
    print(format_table(rows, columns), end="")
    if args.csv:
        write_csv(rows, args.csv, columns)
        print(f"wrote {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
