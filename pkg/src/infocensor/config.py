"""World config files (JSON).

Schema::

    {
      "answers": ["a*", "b"],
      "impermissible": ["a*"],
      "queries": ["x1", "x2"],
      "malicious_query": "q",
      "responses": ["yes", "no", ""],          # response alphabet
      "safe_set": [""],
      "response_model": {                       # query -> answer -> response -> p
        "x1": {"a*": {"yes": 0.9, "no": 0.1}, "b": {"yes": 0.2, "no": 0.8}}
      },
      "nuisance": {"z0": 0.5, "z1": 0.5},       # optional; then the model
                                                # goes query -> answer -> z -> response -> p
      "priors": {"flat": {"a*": 0.5, "b": 0.5}},
      "enumeration_cap": 1000000,
      "mechanism": {"kind": "randomized-response", "t": 0.3, "safe_set": [""]},
      "utility": {"x1": {"yes": 1.0, "no": 1.0}},
      "user": {
        "target_query": "x*",
        "prior": {"a*": 0.5, "b": 0.5},
        "coupling": {"adversary_prior": "flat", "joint": {"a*": {"a*": 0.5}, "b": {"b": 0.5}}}
      }
    }

``mechanism``, ``utility`` and ``user`` are optional.  Response entries with
zero probability may be omitted.  Coupling rows are user answers, columns
adversary answers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .belief import FiniteDistribution, ImpermissibleSet
from .censorship import Mechanism
from .errors import ConfigError, InfoCensorError
from .utility import BenignUser, Coupling, UtilityFunction
from .world import DEFAULT_ENUMERATION_CAP, World


@dataclass(frozen=True)
class WorldConfig:
    world: World
    mechanism: Mechanism | None = None
    utility: UtilityFunction | None = None
    user: BenignUser | None = None
    source: str | None = None


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    needle = json.dumps(key)
    for n, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return n
    return None


def world_from_dict(data: dict[str, Any], source=None, text=None) -> WorldConfig:
    def fail(msg, key):
        raise ConfigError(msg, source, _line_of(text, key))

    for key in ("answers", "impermissible", "queries", "response_model", "priors"):
        if key not in data:
            fail(f"missing required key {key!r}", key)
    try:
        answers = tuple(data["answers"])
        queries = tuple(data["queries"])
        model_src = data["response_model"]
        nuisance = None
        if data.get("nuisance"):
            nuisance = FiniteDistribution.from_mapping(data["nuisance"])
        responses = data.get("responses")
        if responses is None:
            seen = []
            for q in queries:
                for a in answers:
                    cells = model_src[q][a] if nuisance is None else {}
                    if nuisance is not None:
                        for z in nuisance.outcomes:
                            cells = {**cells, **model_src[q][a][z]}
                    for y in cells:
                        if y not in seen:
                            seen.append(y)
            responses = seen
        model = {}
        for q in queries:
            if q not in model_src:
                fail(f"response_model has no entry for query {q!r}", q)
            for a in answers:
                if a not in model_src[q]:
                    fail(f"response_model[{q!r}] has no entry for answer {a!r}", q)
                if nuisance is None:
                    model[(q, a)] = dict(model_src[q][a])
                else:
                    for z in nuisance.outcomes:
                        model[(q, a, z)] = dict(model_src[q][a][z])
        priors = {name: FiniteDistribution.from_mapping(p) for name, p in data["priors"].items()}
        world = World(
            answers=answers,
            imp=ImpermissibleSet(data["impermissible"]),
            queries=queries,
            responses=tuple(responses),
            response_model=model,
            priors=priors,
            malicious_query=data.get("malicious_query", "q"),
            safe_set=tuple(data.get("safe_set", ())),
            nuisance=nuisance,
            enumeration_cap=int(data.get("enumeration_cap", DEFAULT_ENUMERATION_CAP)),
        )
        mechanism = Mechanism.from_dict(data["mechanism"]) if data.get("mechanism") else None
        utility = None
        if "utility" in data:
            utility = UtilityFunction({(x, y): v for x, row in data["utility"].items() for y, v in row.items()})
        user = None
        if "user" in data:
            u = data["user"]
            prior = FiniteDistribution.from_mapping(u["prior"]).reorder(answers)
            coupling = None
            if u.get("coupling"):
                c = u["coupling"]
                joint = np.zeros((len(answers), len(answers)))
                for ua, row in c["joint"].items():
                    for va, p in row.items():
                        joint[answers.index(ua), answers.index(va)] = p
                coupling = Coupling(c["adversary_prior"], joint)
            user = BenignUser(u.get("target_query"), prior, coupling)
    except ConfigError:
        raise
    except (InfoCensorError, KeyError, TypeError, ValueError) as exc:
        key = exc.args[0] if isinstance(exc, KeyError) and exc.args else None
        msg = f"{type(exc).__name__}: {exc}"
        raise ConfigError(msg, source, _line_of(text, key) if isinstance(key, str) else None) from exc
    return WorldConfig(world, mechanism, utility, user, source)


def world_to_dict(cfg: WorldConfig) -> dict[str, Any]:
    w = cfg.world
    model: dict = {}
    for cell, dist in w.response_model.items():
        q, a = cell[0], cell[1]
        row = {y: p for y, p in zip(dist.outcomes, dist.probs) if p != 0.0}
        if w.nuisance is None:
            model.setdefault(q, {})[a] = row
        else:
            model.setdefault(q, {}).setdefault(a, {})[cell[2]] = row
    data: dict[str, Any] = {
        "answers": list(w.answers),
        "impermissible": sorted(w.imp.members, key=w.answers.index),
        "queries": list(w.queries),
        "malicious_query": w.malicious_query,
        "responses": list(w.responses),
        "safe_set": list(w.safe_set),
        "response_model": model,
        "priors": {name: p.as_dict() for name, p in w.priors.items()},
        "enumeration_cap": w.enumeration_cap,
    }
    if w.nuisance is not None:
        data["nuisance"] = w.nuisance.as_dict()
    if cfg.mechanism is not None:
        data["mechanism"] = cfg.mechanism.to_dict()
    if cfg.utility is not None:
        rows: dict = {}
        for (x, y), v in cfg.utility.table.items():
            rows.setdefault(x, {})[y] = v
        data["utility"] = rows
    if cfg.user is not None:
        u = {"target_query": cfg.user.target_query, "prior": cfg.user.prior.as_dict()}
        if cfg.user.coupling is not None:
            joint: dict = {}
            for (i, j), p in np.ndenumerate(cfg.user.coupling.joint):
                if p != 0.0:
                    joint.setdefault(w.answers[i], {})[w.answers[j]] = float(p)
            u["coupling"] = {"adversary_prior": cfg.user.coupling.adversary_prior, "joint": joint}
        data["user"] = u
    return data


def load_world_config(path) -> WorldConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read world config: {exc}", str(path)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, str(path), exc.lineno) from exc
    if not isinstance(data, dict):
        raise ConfigError("world config must be a JSON object", str(path), 1)
    return world_from_dict(data, str(path), text)


def dump_world_config(cfg: WorldConfig, path=None) -> str:
    text = json.dumps(world_to_dict(cfg), indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
