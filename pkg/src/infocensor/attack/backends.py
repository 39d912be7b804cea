"""Model backends: a scripted fixture backend and an HTTP chat-completions client.

Both expose ``generate(prompt) -> str`` and
``option_logprobs(prompt, options) -> list[float]``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import time
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import httpx

from ..errors import BackendUnavailable, ConfigError, ScriptMiss

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.8
DEFAULT_TOP_P = 0.95
DEFAULT_API_KEY_ENV = "INFOCENSOR_API_KEY"


class ModelBackend(Protocol):
    name: str

    def generate(self, prompt: str) -> str: ...

    def option_logprobs(self, prompt: str, options: Sequence[str]) -> list[float]: ...


class _Rule:
    def __init__(self, spec: Mapping, value_key: str):
        contains = spec.get("contains", [])
        self.contains = [contains] if isinstance(contains, str) else list(contains)
        excludes = spec.get("excludes", [])
        self.excludes = [excludes] if isinstance(excludes, str) else list(excludes)
        self.regex = re.compile(spec["regex"], re.S) if spec.get("regex") else None
        self.exact = spec.get("exact")
        value = spec[value_key]
        # a list of strings is a sequence served one per match; a plain
        # logprob vector is a single value
        if value_key == "response" and isinstance(value, list):
            self.values = list(value)
        else:
            self.values = [value]
        self.hits = 0

    def matches(self, prompt: str) -> bool:
        if self.exact is not None and prompt != self.exact:
            return False
        if any(c not in prompt for c in self.contains):
            return False
        if any(c in prompt for c in self.excludes):
            return False
        return self.regex is None or bool(self.regex.search(prompt))

    def next(self):
        value = self.values[min(self.hits, len(self.values) - 1)]
        self.hits += 1
        return value


class ScriptedBackend:
    """Deterministic backend driven by ordered prompt-matching rules.

    Rules are tried in order; the first whose ``exact`` / ``contains`` /
    ``excludes`` / ``regex`` conditions all hold answers the call.  Every
    call is recorded in :attr:`calls`.
    """

    def __init__(self, name="scripted", generate=(), option_logprobs=(), default_generate=None,
                 default_logprobs=None):
        self.name = name
        self._gen = [_Rule(r, "response") for r in generate]
        self._lp = [_Rule(r, "logprobs") for r in option_logprobs]
        self.default_generate = default_generate
        self.default_logprobs = default_logprobs
        self.calls: list[tuple[str, str]] = []

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScriptedBackend":
        return cls(
            name=data.get("name", "scripted"),
            generate=data.get("generate", ()),
            option_logprobs=data.get("option_logprobs", ()),
            default_generate=data.get("default_generate"),
            default_logprobs=data.get("default_logprobs"),
        )

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        path = Path(path)
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"bad scripted backend file: {exc}", str(path)) from exc

    def count(self, kind: str) -> int:
        return sum(1 for k, _ in self.calls if k == kind)

    def generate(self, prompt: str) -> str:
        self.calls.append(("generate", prompt))
        for rule in self._gen:
            if rule.matches(prompt):
                return str(rule.next())
        if self.default_generate is not None:
            return self.default_generate
        raise ScriptMiss(f"{self.name}: no generate rule matches prompt starting {prompt[:80]!r}")

    def option_logprobs(self, prompt: str, options: Sequence[str]) -> list[float]:
        self.calls.append(("option_logprobs", prompt))
        value = None
        for rule in self._lp:
            if rule.matches(prompt):
                value = rule.next()
                break
        if value is None:
            value = self.default_logprobs
        if value is None:
            raise ScriptMiss(f"{self.name}: no option_logprobs rule matches")
        if isinstance(value, Mapping):
            return [float(value.get(o, -math.inf)) for o in options]
        if len(value) != len(options):
            raise ScriptMiss(f"{self.name}: scripted {len(value)} logprobs for {len(options)} options")
        return [float(v) for v in value]


class HTTPBackend:
    """OpenAI-style ``/chat/completions`` client.

    The bearer token is read from the environment variable named by
    ``api_key_env``; pass ``api_key_env=None`` for servers without auth.
    Transport errors and 5xx/429 responses are retried ``retries`` times with
    exponential backoff.
    """

    def __init__(self, base_url: str, model: str, *, api_key_env: str | None = DEFAULT_API_KEY_ENV,
                 temperature: float = DEFAULT_TEMPERATURE, top_p: float = DEFAULT_TOP_P,
                 max_tokens: int = 512, top_logprobs: int = 20, timeout: float = 60.0,
                 retries: int = 3, backoff: float = 0.5, seed: int | None = None,
                 name: str | None = None, transport: httpx.BaseTransport | None = None, sleep=time.sleep):
        headers = {"Content-Type": "application/json"}
        if api_key_env is not None:
            token = os.environ.get(api_key_env)
            if not token:
                raise ConfigError(
                    f"HTTP backend {name or model!r} needs an API token in environment variable {api_key_env}"
                )
            headers["Authorization"] = f"Bearer {token}"
        self.name = name or model
        self.model = model
        self.temperature = temperature
        self.top_p = top_p
        self.max_tokens = max_tokens
        self.top_logprobs = top_logprobs
        self.retries = retries
        self.backoff = backoff
        self.seed = seed
        self._sleep = sleep
        self._client = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout,
                                    transport=transport)

    def _payload(self, prompt: str, **extra) -> dict:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
        }
        if self.seed is not None:
            payload["seed"] = self.seed
        payload.update(extra)
        return payload

    def _post(self, payload: dict) -> dict:
        last = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post("/chat/completions", json=payload)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = f"HTTP {resp.status_code}"
                else:
                    resp.raise_for_status()
                    return resp.json()
            except httpx.HTTPStatusError as exc:
                raise BackendUnavailable(f"{self.name}: {exc}") from exc
            except (httpx.TransportError, json.JSONDecodeError) as exc:
                last = repr(exc)
            if attempt < self.retries:
                delay = self.backoff * 2**attempt
                log.warning("%s: %s, retrying in %.1fs", self.name, last, delay)
                self._sleep(delay)
        raise BackendUnavailable(f"{self.name}: giving up after {self.retries} retries ({last})")

    def generate(self, prompt: str) -> str:
        data = self._post(self._payload(prompt))
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"{self.name}: malformed completion {data!r}") from exc

    def option_logprobs(self, prompt: str, options: Sequence[str]) -> list[float]:
        data = self._post(self._payload(prompt, max_tokens=1, logprobs=True, top_logprobs=self.top_logprobs))
        try:
            top = data["choices"][0]["logprobs"]["content"][0]["top_logprobs"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"{self.name}: response carries no logprobs") from exc
        best = {o: -math.inf for o in options}
        for entry in top:
            tok = str(entry.get("token", "")).strip()
            if tok in best:
                best[tok] = max(best[tok], float(entry["logprob"]))
        return [best[o] for o in options]

    def close(self):
        self._client.close()


def make_backend(binding: Mapping, base_dir=None) -> ModelBackend:
    """Build a backend from a config binding (``kind`` = scripted | http)."""
    kind = binding.get("kind")
    if kind == "scripted":
        if "path" in binding:
            path = Path(binding["path"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            return ScriptedBackend.from_file(path)
        return ScriptedBackend.from_dict(binding)
    if kind == "http":
        try:
            return HTTPBackend(
                binding["base_url"],
                binding["model"],
                api_key_env=binding.get("api_key_env", DEFAULT_API_KEY_ENV),
                temperature=binding.get("temperature", DEFAULT_TEMPERATURE),
                top_p=binding.get("top_p", DEFAULT_TOP_P),
                max_tokens=binding.get("max_tokens", 512),
                seed=binding.get("seed"),
                name=binding.get("name"),
            )
        except KeyError as exc:
            raise ConfigError(f"http backend binding needs {exc.args[0]!r}") from None
    raise ConfigError(f"unknown backend kind {kind!r}")
