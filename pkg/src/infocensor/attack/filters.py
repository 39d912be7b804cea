"""Input/output content filters placed around the victim."""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from ..errors import ConfigError
from .backends import make_backend
from .prompts import template

ALLOW = "allow"
FLAG = "flag"


class FilterBackend(Protocol):
    name: str

    def verdict(self, text: str) -> str: ...


class AllowAll:
    name = "allow-all"

    def verdict(self, text: str) -> str:
        return ALLOW


class ScriptedFilter:
    """Flags text containing any listed substring or matching any regex."""

    def __init__(self, name="scripted-filter", flag_contains: Sequence[str] = (), flag_regex: Sequence[str] = (),
                 case_sensitive: bool = False):
        self.name = name
        self.case_sensitive = case_sensitive
        self.flag_contains = [s if case_sensitive else s.lower() for s in flag_contains]
        flags = 0 if case_sensitive else re.I
        self.flag_regex = [re.compile(p, flags) for p in flag_regex]
        self.seen: list[str] = []

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScriptedFilter":
        return cls(data.get("name", "scripted-filter"), data.get("flag_contains", ()),
                   data.get("flag_regex", ()), data.get("case_sensitive", False))

    def verdict(self, text: str) -> str:
        self.seen.append(text)
        probe = text if self.case_sensitive else text.lower()
        if any(s in probe for s in self.flag_contains) or any(r.search(text) for r in self.flag_regex):
            return FLAG
        return ALLOW


class GuardModelFilter:
    """Asks a guard model to classify text; a reply starting with "unsafe" flags it."""

    def __init__(self, backend, name=None, template_name="guard_v1.txt"):
        self.backend = backend
        self.name = name or f"guard:{backend.name}"
        self._template = template(template_name)

    def verdict(self, text: str) -> str:
        reply = self.backend.generate(self._template.substitute(text=text))
        return FLAG if reply.strip().lower().startswith("unsafe") else ALLOW


def make_filter(binding: Mapping | None, base_dir=None) -> FilterBackend:
    if not binding or binding.get("kind", "allow") == "allow":
        return AllowAll()
    kind = binding["kind"]
    if kind == "scripted":
        if "path" in binding:
            path = Path(binding["path"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            try:
                data = json.loads(path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"bad filter file: {exc}", str(path)) from exc
            return ScriptedFilter.from_dict(data)
        return ScriptedFilter.from_dict(binding)
    if kind == "guard":
        return GuardModelFilter(make_backend(binding["backend"], base_dir), binding.get("name"))
    raise ConfigError(f"unknown filter kind {kind!r}")
