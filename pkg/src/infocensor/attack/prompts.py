"""Prompt templates, few-shot sets and subquestion parsing."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template

from ..errors import ConfigError

ROLES = ("generation", "extraction", "aggregation")

_NUMBERED = re.compile(r"^\s*(\d+)\s*[.)]\s+(\S.*?)\s*$")


@dataclass(frozen=True)
class FewShotSet:
    role: str
    examples: tuple  # of (prompt, response)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"unknown few-shot role {self.role!r}")
        object.__setattr__(self, "examples", tuple((str(p), str(r)) for p, r in self.examples))
        if not self.examples:
            raise ConfigError(f"few-shot set for {self.role!r} is empty")

    @classmethod
    def from_dict(cls, data: dict) -> "FewShotSet":
        return cls(data["role"], tuple((e["prompt"], e["response"]) for e in data["examples"]))

    def render(self) -> str:
        blocks = []
        for n, (prompt, response) in enumerate(self.examples, 1):
            blocks.append(f"Example {n} input:\n{prompt}\nExample {n} output:\n{response}\n")
        return "\n".join(blocks)


def load_fewshot(path) -> FewShotSet:
    path = Path(path)
    try:
        return FewShotSet.from_dict(json.loads(path.read_text()))
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad few-shot file: {exc}", str(path)) from exc


def default_fewshot(role: str) -> FewShotSet:
    text = resources.files("infocensor.data.fewshot").joinpath(f"{role}.json").read_text()
    return FewShotSet.from_dict(json.loads(text))


def template(name: str) -> Template:
    return Template(resources.files("infocensor.data.templates").joinpath(name).read_text())


def render_pile(pile) -> str:
    if not len(pile):
        return "(nothing yet)"
    return "\n".join(f"- Q: {e.query}\n  A: {e.response}" for e in pile)


def parse_numbered(text: str) -> list[str]:
    """Items of lines shaped ``<index>. <text>`` (or ``<index>) <text>``) in order."""
    items = []
    for line in text.splitlines():
        m = _NUMBERED.match(line)
        if m:
            items.append(m.group(2))
    return items
