"""Chat prompt assembly under configurable role settings.

A prompt is: one instruction message, then N retrieved examples as
(input sentence, tagged output) pairs, then the query sentence. The 3-letter
role code decides which chat role carries each slot: position 1 the
instruction, position 2 every example input and the final query, position 3
every example output. ``SUA`` is the conventional layout; ``AAA`` puts
everything in the assistant role.

Role changes never touch content: the same byte-identical strings are sent
regardless of the code.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

from .corpus import LabeledExample, LabelSchema
from .marking import TagConfig, encode_json, encode_tagged

ROLE_CHARS = {"S": "system", "U": "user", "A": "assistant"}

# The role grid shipped as built-in presets; other codes over {S, U, A} are
# accepted with a warning.
CANONICAL_ROLE_CODES = ("UUU", "AAA", "SUU", "SAA", "SUA", "AUA", "UUA")

ORDERINGS = ("similar-last", "similar-first")

_PLACEHOLDER = re.compile(r"\{([A-Za-z_]+)\}")
_KNOWN_PLACEHOLDERS = {"labels", "tag_open", "tag_close"}


class TemplateError(ValueError):
    """An instruction template cannot be rendered."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLE_CHARS.values():
            raise ValueError(f"bad message role {self.role!r}")
        if not self.content:
            raise ValueError("empty message content")


@dataclass(frozen=True)
class RoleSetting:
    """3-slot role code: (instruction, example/query inputs, example outputs)."""

    code: str

    def __post_init__(self) -> None:
        if len(self.code) != 3 or any(ch not in ROLE_CHARS for ch in self.code):
            raise ValueError(f"role code must be 3 characters over S/U/A, got {self.code!r}")
        if self.code not in CANONICAL_ROLE_CODES:
            warnings.warn(f"role code {self.code!r} is outside the built-in grid "
                          f"{CANONICAL_ROLE_CODES}", stacklevel=2)

    @property
    def instruction_role(self) -> str:
        return ROLE_CHARS[self.code[0]]

    @property
    def input_role(self) -> str:
        return ROLE_CHARS[self.code[1]]

    @property
    def output_role(self) -> str:
        return ROLE_CHARS[self.code[2]]


@dataclass(frozen=True)
class PromptPlan:
    """Instruction template plus shot count and example ordering."""

    instruction: str
    shots: int = 30
    ordering: str = "similar-last"

    def __post_init__(self) -> None:
        if self.shots < 0:
            raise ValueError("shots must be >= 0")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}, got {self.ordering!r}")


def default_instruction(mode: str = "tag") -> str:
    """The instruction template shipped with the package."""
    name = "default_instruction.txt" if mode == "tag" else "default_instruction_json.txt"
    return resources.files("ltner.templates").joinpath(name).read_text(encoding="utf-8")


def render_instruction(plan: PromptPlan, schema: LabelSchema, cfg: TagConfig) -> str:
    """Substitute {labels}, {tag_open}, {tag_close} into the template."""
    values = {
        "labels": ", ".join(schema.names),
        "tag_open": cfg.open,
        "tag_close": cfg.close,
    }

    def sub(match: re.Match) -> str:
        key = match.group(1)
        if key not in _KNOWN_PLACEHOLDERS:
            raise TemplateError(f"unknown placeholder {{{key}}} in instruction template")
        return values[key]

    rendered = _PLACEHOLDER.sub(sub, plan.instruction)
    leftover = _PLACEHOLDER.search(rendered)
    if leftover:
        raise TemplateError(f"unresolved placeholder {leftover.group(0)} after substitution")
    if not rendered.strip():
        raise TemplateError("instruction template rendered to empty text")
    return rendered


def build_messages(plan: PromptPlan, role: RoleSetting, cfg: TagConfig,
                   examples: Sequence[LabeledExample], query_sentence: str,
                   schema: LabelSchema, mode: str = "tag") -> list[ChatMessage]:
    """Assemble the full message sequence for one query.

    ``examples`` must be ranked most-similar first; under ``similar-last``
    they are emitted in reverse so the rank-1 example sits next to the query.
    Message count is always 2 * len(examples) + 2.
    """
    if not query_sentence.strip():
        raise ValueError("empty query sentence")
    if mode not in ("tag", "json"):
        raise ValueError(f"unknown generation mode {mode!r}")
    ordered = list(examples)
    if plan.ordering == "similar-last":
        ordered.reverse()
    messages = [ChatMessage(role=role.instruction_role,
                            content=render_instruction(plan, schema, cfg))]
    for ex in ordered:
        output = encode_tagged(ex, cfg) if mode == "tag" else encode_json(ex)
        messages.append(ChatMessage(role=role.input_role, content=ex.sentence))
        messages.append(ChatMessage(role=role.output_role, content=output))
    messages.append(ChatMessage(role=role.input_role, content=query_sentence))
    return messages
