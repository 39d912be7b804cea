"""The decomposition attack loop.

For each of ``k`` rounds the adversary writes ``m`` subquestions from the
main query and the knowledge pile so far; each subquestion passes the input
filter, the victim and the output filter; every non-empty response is
reduced to a short extracted answer that joins the pile.  One final
aggregation call answers the main query from the pile.

Flagged inputs never reach the victim: the interaction yields the empty
string but still uses one unit of the interaction budget.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from ..errors import BackendUnavailable, BudgetExceeded, ConfigError, ParseFailure, ScriptMiss
from ..world import KnowledgePile, PileEntry
from .backends import ModelBackend, make_backend
from .filters import FLAG, AllowAll, FilterBackend, make_filter
from .prompts import ROLES, FewShotSet, default_fewshot, load_fewshot, parse_numbered, render_pile, template

log = logging.getLogger(__name__)

DEFAULT_K = 2
DEFAULT_M = 3
TRANSCRIPT_FORMAT = "infocensor.transcript/1"

_REPROMPT = (
    "\n\nYour previous reply did not contain {m} numbered subquestions. "
    "Reply again with exactly {m} lines of the form \"1. <subquestion>\"."
)


def generate_subquestions(adv: ModelBackend, fewshot: FewShotSet, pile: KnowledgePile, q: str, m: int,
                          on_output: Callable[[str, int], None] | None = None) -> list[str]:
    """Exactly ``m`` subquestions, with one reprompt if the first reply is short."""
    if m < 1:
        raise ValueError("m must be >= 1")
    prompt = template("generation.txt").substitute(
        examples=fewshot.render(), query=q, pile=render_pile(pile), m=m
    )
    for attempt in range(2):
        text = adv.generate(prompt if attempt == 0 else prompt + _REPROMPT.format(m=m))
        if on_output is not None:
            on_output(text, attempt)
        items = parse_numbered(text)
        if len(items) >= m:
            return items[:m]
    raise ParseFailure(f"adversary produced {len(items)} of {m} subquestions after a retry")


@dataclass(frozen=True)
class Interaction:
    subquestion: str
    response: str
    flags: int
    input_verdict: str
    output_verdict: str | None
    raw_response: str | None

    def to_dict(self) -> dict:
        return {
            "subquestion": self.subquestion,
            "input_verdict": self.input_verdict,
            "output_verdict": self.output_verdict,
            "raw_response": self.raw_response,
            "response": self.response,
            "flags": self.flags,
        }


def interact(vic: ModelBackend, m_in: FilterBackend, m_out: FilterBackend, q_s: str) -> Interaction:
    """One filtered victim call; a flag at either stage empties the response."""
    in_verdict = m_in.verdict(q_s)
    if in_verdict == FLAG:
        return Interaction(q_s, "", 1, in_verdict, None, None)
    raw = vic.generate(q_s)
    out_verdict = m_out.verdict(raw)
    if out_verdict == FLAG:
        return Interaction(q_s, "", 1, in_verdict, out_verdict, raw)
    return Interaction(q_s, raw, 0, in_verdict, out_verdict, raw)


def extract_answer(adv: ModelBackend, fewshot: FewShotSet, q: str, q_s: str, r: str) -> str:
    """Short answer to the main query pulled out of response ``r``; empty ``r`` is skipped."""
    if not r:
        return ""
    prompt = template("extraction.txt").substitute(
        examples=fewshot.render(), query=q, subquestion=q_s, response=r
    )
    return adv.generate(prompt).strip()


def aggregate(adv: ModelBackend, fewshot: FewShotSet, q: str, pile: KnowledgePile) -> str:
    prompt = template("aggregation.txt").substitute(examples=fewshot.render(), query=q, pile=render_pile(pile))
    return adv.generate(prompt).strip()


# ---------------------------------------------------------------------------
# transcript


@dataclass
class RoundRecord:
    index: int
    subquestions: list = field(default_factory=list)
    interactions: list = field(default_factory=list)  # of dicts
    completion_order: list | None = None

    def to_dict(self) -> dict:
        d = {"index": self.index, "subquestions": list(self.subquestions), "interactions": list(self.interactions)}
        if self.completion_order is not None:
            d["completion_order"] = list(self.completion_order)
        return d


@dataclass
class AttackTranscript:
    """Complete, re-scorable record of one attack run."""

    query: str
    k: int
    m: int
    seed: int | None = None
    rounds: list = field(default_factory=list)
    pile: KnowledgePile = field(default_factory=KnowledgePile)
    final_answer: str = ""
    flag_count: int = 0
    victim_calls: int = 0
    adversary_calls: dict = field(default_factory=lambda: {r: 0 for r in ROLES})
    status: str = "running"
    error: str | None = None
    events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    before: dict | None = None
    after: dict | None = None

    def event(self, kind: str, **data) -> None:
        self.events.append({"seq": len(self.events), "type": kind, **data})

    def to_dict(self) -> dict:
        return {
            "format": TRANSCRIPT_FORMAT,
            "query": self.query,
            "k": self.k,
            "m": self.m,
            "seed": self.seed,
            "status": self.status,
            "error": self.error,
            "rounds": [r.to_dict() for r in self.rounds],
            "pile": [{"query": e.query, "answer": e.response, "provenance": e.provenance} for e in self.pile],
            "final_answer": self.final_answer,
            "flag_count": self.flag_count,
            "victim_calls": self.victim_calls,
            "adversary_calls": dict(self.adversary_calls),
            "events": list(self.events),
            "meta": dict(self.meta),
            "before": self.before,
            "after": self.after,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: Mapping) -> "AttackTranscript":
        if data.get("format") != TRANSCRIPT_FORMAT:
            raise ConfigError(f"not a transcript (format={data.get('format')!r})")
        rounds = [RoundRecord(r["index"], r["subquestions"], r["interactions"], r.get("completion_order"))
                  for r in data["rounds"]]
        pile = KnowledgePile(tuple(PileEntry(e["query"], e["answer"], e.get("provenance", "extracted"))
                                   for e in data["pile"]))
        return cls(
            query=data["query"], k=data["k"], m=data["m"], seed=data.get("seed"), rounds=rounds, pile=pile,
            final_answer=data["final_answer"], flag_count=data["flag_count"],
            victim_calls=data["victim_calls"], adversary_calls=dict(data["adversary_calls"]),
            status=data["status"], error=data.get("error"), events=list(data["events"]),
            meta=dict(data.get("meta", {})), before=data.get("before"), after=data.get("after"),
        )

    @classmethod
    def from_json(cls, text: str) -> "AttackTranscript":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# config and driver


@dataclass
class AttackConfig:
    query: str
    adversary: ModelBackend
    victim: ModelBackend
    input_filter: FilterBackend = field(default_factory=AllowAll)
    output_filter: FilterBackend = field(default_factory=AllowAll)
    k: int = DEFAULT_K
    m: int = DEFAULT_M
    budget: int | None = None
    fewshot: dict = field(default_factory=dict)
    seed: int | None = None
    parallel: int = 0

    def fewshot_for(self, role: str) -> FewShotSet:
        return self.fewshot.get(role) or default_fewshot(role)


class _CountingAdversary:
    def __init__(self, backend, transcript: AttackTranscript, role: str):
        self.backend, self.transcript, self.role = backend, transcript, role
        self.name = backend.name

    def generate(self, prompt: str) -> str:
        self.transcript.adversary_calls[self.role] += 1
        return self.backend.generate(prompt)


def run_decomposition_attack(config: AttackConfig) -> AttackTranscript:
    """Run the attack; backend and parse failures end the run as ``failed``."""
    k, m = config.k, config.m
    budget = k * m if config.budget is None else config.budget
    if k < 1 or m < 1:
        raise ValueError("k and m must be >= 1")
    if k * m > budget:
        raise BudgetExceeded(f"k*m = {k * m} exceeds interaction budget {budget}")

    t = AttackTranscript(query=config.query, k=k, m=m, seed=config.seed)
    t.meta = {
        "adversary": config.adversary.name,
        "victim": config.victim.name,
        "input_filter": config.input_filter.name,
        "output_filter": config.output_filter.name,
        "budget": budget,
    }
    gen = _CountingAdversary(config.adversary, t, "generation")
    ext = _CountingAdversary(config.adversary, t, "extraction")
    agg = _CountingAdversary(config.adversary, t, "aggregation")
    pile = KnowledgePile()
    t.event("start", query=config.query, k=k, m=m, seed=config.seed)
    try:
        for j in range(k):
            rec = RoundRecord(j)
            t.rounds.append(rec)

            def on_output(text, attempt, j=j):
                t.event("generation-output", round=j, attempt=attempt, text=text)

            subs = generate_subquestions(gen, config.fewshot_for("generation"), pile, config.query, m, on_output)
            rec.subquestions = list(subs)
            t.event("subquestions", round=j, items=list(subs))

            if config.parallel and config.parallel > 1:
                results, order = _interact_parallel(config, subs)
                rec.completion_order = order
            else:
                results = None
            for i, q_s in enumerate(subs):
                res = results[i] if results is not None else interact(
                    config.victim, config.input_filter, config.output_filter, q_s)
                t.victim_calls += 1
                t.flag_count += res.flags
                t.event("interaction", round=j, index=i, **res.to_dict())
                row = res.to_dict()
                answer = extract_answer(ext, config.fewshot_for("extraction"), config.query, q_s, res.response)
                row["extracted"] = answer if res.response else None
                if res.response:
                    t.event("extraction", round=j, index=i, answer=answer)
                if answer:
                    pile = pile.append(PileEntry(q_s, answer, "extracted"))
                    t.event("pile-append", round=j, index=i, size=len(pile))
                rec.interactions.append(row)
        t.pile = pile
        t.final_answer = aggregate(agg, config.fewshot_for("aggregation"), config.query, pile)
        t.event("aggregation", answer=t.final_answer)
        t.status = "completed"
    except (ParseFailure, BackendUnavailable, ScriptMiss) as exc:
        t.pile = pile
        t.status = "failed"
        t.error = f"{type(exc).__name__}: {exc}"
        t.event("error", error=t.error)
        log.warning("attack failed: %s", t.error)
    t.event("end", status=t.status)
    return t


def _interact_parallel(config: AttackConfig, subs):
    results: dict[int, Interaction] = {}
    order = []
    with ThreadPoolExecutor(max_workers=config.parallel) as pool:
        futures = {pool.submit(interact, config.victim, config.input_filter, config.output_filter, q): i
                   for i, q in enumerate(subs)}
        for fut in as_completed(futures):
            i = futures[fut]
            results[i] = fut.result()
            order.append(i)
    return [results[i] for i in range(len(subs))], order


def _resolve(base_dir, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() or base_dir is None else Path(base_dir) / p


def attack_config_from_dict(data: Mapping[str, Any], base_dir=None, query: str | None = None) -> AttackConfig:
    """Bind backends, filters and few-shot files named in an attack config."""
    if query is None:
        if "query" in data:
            query = data["query"]
        elif "question_file" in data:
            from ..evaluation import format_query, load_questions

            questions = {q.id: q for q in load_questions(_resolve(base_dir, data["question_file"]))}
            qid = data.get("question_id")
            if qid not in questions:
                raise ConfigError(f"question id {qid!r} not in {data['question_file']}")
            query = format_query(questions[qid])
        else:
            raise ConfigError("attack config needs 'query' or 'question_file'")
    for key in ("adversary", "victim"):
        if key not in data:
            raise ConfigError(f"attack config needs a {key!r} backend binding")
    fewshot = {}
    for role, path in (data.get("fewshot") or {}).items():
        fs = load_fewshot(_resolve(base_dir, path))
        if fs.role != role:
            raise ConfigError(f"few-shot file for {role!r} declares role {fs.role!r}")
        fewshot[role] = fs
    return AttackConfig(
        query=query,
        adversary=make_backend(data["adversary"], base_dir),
        victim=make_backend(data["victim"], base_dir),
        input_filter=make_filter(data.get("input_filter"), base_dir),
        output_filter=make_filter(data.get("output_filter"), base_dir),
        k=int(data.get("k", DEFAULT_K)),
        m=int(data.get("m", DEFAULT_M)),
        budget=data.get("budget"),
        fewshot=fewshot,
        seed=data.get("seed"),
        parallel=int(data.get("parallel", 0)),
    )


def load_attack_config(path) -> AttackConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read attack config: {exc}", str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, str(path), exc.lineno) from exc
    return attack_config_from_dict(data, path.parent)
