"""``infocensor`` command line.

Exit codes: 0 success, 1 a check failed or a run did not complete,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .attack.decomposition import attack_config_from_dict, run_decomposition_attack
from .attack.filters import make_filter
from .attack.backends import make_backend
from .belief import ImpermissibleSet, iil
from .censorship import IDENTITY, Mechanism, calibrate, worst_case_exp_iil
from .config import load_world_config
from .errors import ConfigError, InfoCensorError
from .evaluation import (
    DEFAULT_RUNS,
    ENTROPY_THRESHOLD,
    DecompositionStrategy,
    ReplayStrategy,
    build_report,
    curate,
    evaluate_attack,
    load_questions,
    option_posterior,
    summary_table,
)
from .verify import run_verification, summarize
from .world import exp_iil

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2

DEFAULT_SEED = 0

log = logging.getLogger("infocensor")


@dataclass
class RunManifest:
    subcommand: str
    config_paths: list
    seed: int
    out: str | None
    version: str = __version__
    args: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)


class UsageError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


class Output:
    """Writes files into ``--out``; refuses to clobber existing files without ``--force``."""

    def __init__(self, manifest: RunManifest, out: str | None, force: bool):
        self.manifest = manifest
        self.dir = Path(out) if out else None
        self.force = force
        if self.dir is not None:
            if self.dir.exists() and not self.dir.is_dir():
                raise UsageError(f"--out {self.dir} exists and is not a directory")
            if self.dir.is_dir() and any(self.dir.iterdir()) and not force:
                raise UsageError(f"--out {self.dir} is not empty; pass --force to overwrite")
            self.dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        if self.dir is None:
            return
        path = self.dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.manifest.outputs.append(name)

    def finish(self) -> None:
        if self.dir is not None:
            self.manifest.outputs.sort()
            (self.dir / "manifest.json").write_text(_dump(asdict(self.manifest)))


def parse_mechanism(spec: str | None, cfg, eps: float | None, parallel=None) -> tuple[Mechanism, dict]:
    """``identity`` | ``rr:T`` | ``calibrated`` | ``config`` (default)."""
    if spec in (None, "config"):
        mech = cfg.mechanism or IDENTITY
        return mech, {"source": "config" if cfg.mechanism else "default-identity"}
    if spec == "identity":
        return IDENTITY, {"source": "flag"}
    if spec.startswith("rr:"):
        try:
            t = float(spec[3:])
        except ValueError:
            raise UsageError(f"bad --mechanism {spec!r}: expected rr:<t>") from None
        return Mechanism.randomized_response(t, cfg.world.safe_set), {"source": "flag"}
    if spec == "calibrated":
        if eps is None:
            raise UsageError("--mechanism calibrated needs --eps")
        cal = calibrate(cfg.world, eps, parallel)
        return cal.mechanism(cfg.world.safe_set), {"source": "calibrated", "calibration": cal.to_dict()}
    raise UsageError(f"unknown --mechanism {spec!r}")


def _read_json(path: Path) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, str(path), exc.lineno) from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", str(path), 1)
    return data


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, manifest: RunManifest) -> int:
    cfg = load_world_config(args.config)
    mech, mech_info = parse_mechanism(args.mechanism, cfg, args.eps, args.parallel)
    result = {"seed": manifest.seed, "mechanism": mech.to_dict(), "mechanism_info": mech_info}
    if args.queries:
        qs = tuple(args.queries.split(","))
        priors = [args.prior] if args.prior else list(cfg.world.priors)
        result["mode"] = "fixed-queries"
        result["queries"] = list(qs)
        result["exp_iil"] = {p: exp_iil(cfg.world, p, qs, mech) for p in priors}
    else:
        value, witness = worst_case_exp_iil(cfg.world, mech, args.k, args.parallel)
        result.update(mode="worst-case", k=args.k, worst_case_exp_iil=value, witness=witness.to_dict())
    out = Output(manifest, args.out, args.force)
    out.write("leakage.json", _dump(result))
    out.finish()
    print(_dump(result), end="")
    return EXIT_OK


def cmd_calibrate(args, manifest: RunManifest) -> int:
    if args.eps is None:
        raise UsageError("calibrate needs --eps")
    cfg = load_world_config(args.config)
    cal = calibrate(cfg.world, args.eps, args.parallel)
    result = {
        "seed": manifest.seed,
        **cal.to_dict(),
        "mechanism": cal.mechanism(cfg.world.safe_set).to_dict(),
        "audit": {
            "sup_identity_single_interaction": cal.sup,
            "sup_witness": cal.witness.to_dict(),
            "rule": "t = min(eps / sup, 1); t = 1 when sup = 0",
        },
    }
    out = Output(manifest, args.out, args.force)
    out.write("calibration.json", _dump(result))
    out.finish()
    print(_dump(result), end="")
    return EXIT_OK


def cmd_verify(args, manifest: RunManifest) -> int:
    cfg = load_world_config(args.config)
    eps = args.eps
    mech, mech_info = parse_mechanism(args.mechanism, cfg, eps, args.parallel)
    if eps is None:
        if mech.kind == "identity":
            raise UsageError("verify needs --eps unless the mechanism is calibrated from it")
        eps = worst_case_exp_iil(cfg.world, mech, 1, args.parallel)[0]
        mech_info["eps"] = "mechanism's own worst case"
    rows = run_verification(cfg, mech, eps, args.k, args.parallel)
    ok = summarize(rows)
    result = {
        "seed": manifest.seed,
        "eps": eps,
        "k": args.k,
        "mechanism": mech.to_dict(),
        "mechanism_info": mech_info,
        "passed": ok,
        "rows": [r.to_dict() for r in rows],
    }
    out = Output(manifest, args.out, args.force)
    out.write("verify.json", _dump(result))
    out.finish()
    for r in rows:
        lhs = "-" if r.lhs is None else f"{r.lhs:.6g}"
        rhs = "-" if r.rhs is None else f"{r.rhs:.6g}"
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  lhs={lhs}  rhs={rhs}  witness={json.dumps(r.witness)}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_attack(args, manifest: RunManifest) -> int:
    path = Path(args.config)
    data = _read_json(path)
    if args.k is not None:
        data["k"] = args.k
    if args.parallel:
        data["parallel"] = args.parallel
    data["seed"] = data.get("seed", manifest.seed) if args.seed is None else manifest.seed
    manifest.seed = data["seed"]
    config = attack_config_from_dict(data, path.parent)
    transcript = run_decomposition_attack(config)
    transcript.meta["seed"] = manifest.seed
    iil_value = None
    if data.get("scorer") and data.get("question_file"):
        iil_value = _score_transcript(data, path.parent, transcript)
    text = transcript.to_json()
    out = Output(manifest, args.out, args.force)
    out.write("transcript.json", text)
    manifest.args["transcript_sha256"] = transcript.digest()
    out.finish()
    summary = {
        "status": transcript.status,
        "error": transcript.error,
        "victim_calls": transcript.victim_calls,
        "flag_count": transcript.flag_count,
        "pile_size": len(transcript.pile),
        "final_answer": transcript.final_answer,
        "sha256": transcript.digest(),
        "seed": manifest.seed,
        "iil": iil_value,
    }
    print(_dump(summary), end="")
    return EXIT_OK if transcript.status == "completed" else EXIT_CHECK_FAILED


def _score_transcript(data: dict, base: Path, transcript) -> float:
    """Before/after option beliefs of the scorer for the config's question."""
    questions = {q.id: q for q in load_questions(base / data["question_file"])}
    question = questions[data["question_id"]]
    scorer = make_backend(data["scorer"], base)
    before = option_posterior(scorer, question)
    after = option_posterior(scorer, question, transcript.pile)
    transcript.before, transcript.after = before.as_dict(), after.as_dict()
    value = iil(before, after, ImpermissibleSet({question.correct_letter}))
    transcript.meta["iil"] = value
    return value


def cmd_evaluate(args, manifest: RunManifest) -> int:
    path = Path(args.config)
    base = path.parent
    data = _read_json(path)
    for key in ("question_file", "scorer", "attacks"):
        if key not in data:
            raise ConfigError(f"evaluation config needs {key!r}", str(path))
    questions = load_questions(base / data["question_file"])
    if data.get("curate_filter"):
        flt = make_filter(data["curate_filter"], base)
        questions = curate(questions, flt)
    runs = int(data.get("runs_per_question", DEFAULT_RUNS))
    threshold = float(data.get("entropy_threshold", ENTROPY_THRESHOLD))
    # per-attack run seeds come from one generator seeded on the command line
    rng = np.random.default_rng(manifest.seed)
    out = Output(manifest, args.out, args.force)
    results = {}
    for name in sorted(data["attacks"]):
        binding = dict(data["attacks"][name])
        kind = binding.pop("kind", "decomposition")
        if kind == "decomposition":
            binding.setdefault("seed", int(rng.integers(0, 2**31 - 1)))
            if args.parallel:
                binding.setdefault("parallel", args.parallel)
            strategy = DecompositionStrategy(binding, base)
        elif kind == "replay":
            strategy = ReplayStrategy(base / binding["directory"])
        else:
            raise ConfigError(f"unknown attack kind {kind!r} for {name!r}", str(path))
        scorer = make_backend(data["scorer"], base)
        skipped, transcripts = [], {}
        records = evaluate_attack(strategy, questions, runs, scorer=scorer, attack=name, skipped=skipped,
                                  transcripts=transcripts, threshold=threshold)
        for (qid, run), t in sorted(transcripts.items()):
            rel = f"transcripts/{name}/{qid}__run{run}.json"
            out.write(rel, t.to_json())
        for r in records:
            if (r.question_id, r.run) in transcripts:
                r.transcript = f"transcripts/{name}/{r.question_id}__run{r.run}.json#sha256:{r.transcript}"
        results[name] = {"records": records, "model": scorer.name, "skipped": skipped}
    comparisons = [tuple(c) for c in data.get("comparisons", [])]
    report = build_report(results, comparisons, seed=manifest.seed)
    table = summary_table(report)
    out.write("report.json", _dump(report))
    out.write("report.md", table)
    out.finish()
    print(table, end="")
    n_ok = sum(1 for res in results.values() for r in res["records"] if r.ok)
    return EXIT_OK if n_ok else EXIT_CHECK_FAILED


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "verify": cmd_verify,
    "attack": cmd_attack,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="config file (JSON)")
    common.add_argument("--seed", type=int, default=None, help=f"master seed (default {DEFAULT_SEED})")
    common.add_argument("--out", default=None, help="output directory; prints to stdout only when omitted")
    common.add_argument("--force", action="store_true", help="allow writing into a non-empty --out")
    common.add_argument("--parallel", type=int, default=None, help="worker count")
    common.add_argument("-v", "--verbose", action="store_true")

    world = argparse.ArgumentParser(add_help=False)
    world.add_argument("--mechanism", default=None, help="identity | rr:T | calibrated | config")
    world.add_argument("--eps", type=float, default=None)

    p = argparse.ArgumentParser(prog="infocensor", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, world], help="exact (worst-case) leakage of a world")
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--queries", default=None, help="comma-separated query tuple")
    s.add_argument("--prior", default=None, help="prior name (with --queries)")

    s = sub.add_parser("calibrate", parents=[common], help="passthrough probability for a target eps")
    s.add_argument("--eps", type=float, default=None)

    s = sub.add_parser("verify", parents=[common, world], help="theorem checks")
    s.add_argument("--k", type=int, default=2)

    s = sub.add_parser("attack", parents=[common], help="run one decomposition attack")
    s.add_argument("--k", type=int, default=None)

    sub.add_parser("evaluate", parents=[common], help="multiple-choice leakage evaluation")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    seed = DEFAULT_SEED if args.seed is None else args.seed
    manifest = RunManifest(args.command, [str(args.config)], seed, args.out,
                           args={k: v for k, v in sorted(vars(args).items())
                                 if k not in ("command", "config", "out", "verbose")})
    try:
        return COMMANDS[args.command](args, manifest)
    except UsageError as exc:
        print(f"infocensor: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfoCensorError as exc:
        print(f"infocensor: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError) as exc:
        print(f"infocensor: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
