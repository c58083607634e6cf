"""Run configuration: JSON file + CLI overrides, validation, fingerprinting.

Every experiment is fully described by one RunConfig; its fingerprint (a hash
of the canonical serialization) stamps every run record so results are always
traceable to the exact configuration that produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .marking import TAG_PRESETS


def _default_prices() -> dict:
    return {"gpt-3.5-turbo": {"input": 0.5, "output": 1.5}}


def _default_mock_noise() -> dict:
    return {"drop": 0.0, "relabel": 0.0, "hallucinate": 0.0, "truncate": 0.0}


@dataclass
class RunConfig:
    """Everything one experiment run depends on."""

    dataset: str = "conll2003"
    corpus_path: str = ""
    index_path: str = ""
    split: str = "test"
    limit_test: int = 0                  # 0 = full split
    embedder: str = "hashed"             # hashed | remote
    embed_model: str = ""
    embed_base_url: str = ""
    shots: int = 30
    tag: str = "##|##"                   # name of a preset or of a tag_configs entry
    tag_configs: dict = field(default_factory=dict)   # name -> [open, close]
    role: str = "SUA"
    mode: str = "tag"                    # tag | json
    ordering: str = "similar-last"
    instruction_template: str = ""       # path; empty = built-in default for the mode
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_output_tokens: int = 512
    backend: str = "mock"                # live | replay | mock
    base_url: str = "https://api.openai.com/v1"
    replay_dir: str = ""
    replay_record: bool = False          # on miss, fall through and record
    replay_fallthrough: str = "live"     # live | mock
    mock_noise: dict = field(default_factory=_default_mock_noise)
    prices: dict = field(default_factory=_default_prices)
    seed: int = 13
    concurrency: int = 4
    requests_per_minute: int = 0
    cost_cap: str = ""                   # decimal string; empty = uncapped
    out_dir: str = "runs/run"
    neighbor_cache: str = ""             # path; empty = no on-disk neighbor cache

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def validate(self, *, check_files: bool = True) -> None:
        if self.shots < 0:
            raise ValueError("shots must be >= 0")
        if self.limit_test < 0:
            raise ValueError("limit_test must be >= 0")
        if self.mode not in ("tag", "json"):
            raise ValueError(f"mode must be 'tag' or 'json', got {self.mode!r}")
        if self.backend not in ("live", "replay", "mock"):
            raise ValueError(f"backend must be live/replay/mock, got {self.backend!r}")
        if self.backend == "live" and not _positive_decimal(self.cost_cap):
            raise ValueError("a positive cost_cap is required when backend is live")
        if self.backend == "replay" and not self.replay_dir:
            raise ValueError("replay backend needs replay_dir")
        known_tags = {c.name for c in TAG_PRESETS} | set(self.tag_configs)
        if self.tag not in known_tags:
            raise ValueError(f"unknown tag config {self.tag!r}")
        if check_files:
            for label, path in (("corpus_path", self.corpus_path),
                                ("index_path", self.index_path),
                                ("instruction_template", self.instruction_template)):
                if path and not Path(path).exists():
                    raise FileNotFoundError(f"{label} does not exist: {path}")


def _positive_decimal(text: str) -> bool:
    if not text:
        return False
    try:
        return float(text) > 0
    except ValueError:
        return False


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus CLI overrides."""
    data: dict[str, Any] = {}
    if path:
        data.update(json.loads(Path(path).read_text(encoding="utf-8")))
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {unknown}")
    return RunConfig(**data)
