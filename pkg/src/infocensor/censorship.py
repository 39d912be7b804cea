"""Censorship mechanisms and their leakage guarantees.

A mechanism rewrites the victim's response distribution before the
adversary samples from it.  The randomized-response mechanism passes the
victim through with probability ``t`` and otherwise emits a uniformly chosen
safe string.  Victim mass that already sits on a safe string is kept
(``t * resp(s) + (1 - t) / |S|``) so the output always normalises.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .belief import NORMALIZATION_TOL, FiniteDistribution
from .errors import EnumerationTooLarge, InvalidParams, SafetySetAssumptionViolated
from .world import (
    World,
    conditional_dependency_term,
    conditional_exp_iil,
    exp_iil,
)

KINDS = ("identity", "randomized-response", "custom-table")

# a safe string counts as uninformative when its likelihood varies by less
# than this across hidden answers
SAFE_STRING_TOL = 1e-12


@dataclass(frozen=True)
class Mechanism:
    kind: str = "identity"
    t: float = 1.0
    safe_set: tuple = ()
    table: Mapping | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParams(f"unknown mechanism kind {self.kind!r}")
        object.__setattr__(self, "safe_set", tuple(self.safe_set))
        if self.kind == "randomized-response":
            if not 0.0 <= self.t <= 1.0:
                raise InvalidParams(f"t={self.t!r} outside [0, 1]")
            if not self.safe_set:
                raise InvalidParams("randomized response needs a non-empty safe set")
            if len(set(self.safe_set)) != len(self.safe_set):
                raise InvalidParams("duplicate safe strings")
        if self.kind == "custom-table":
            if not self.table:
                raise InvalidParams("custom-table mechanism needs a table")
            rows = {}
            for src, row in dict(self.table).items():
                row = dict(row)
                if any(not p >= 0.0 for p in row.values()):
                    raise InvalidParams(f"negative entry in table row {src!r}")
                if abs(math.fsum(row.values()) - 1.0) > NORMALIZATION_TOL:
                    raise InvalidParams(f"table row {src!r} does not normalise")
                rows[src] = row
            object.__setattr__(self, "table", rows)

    @classmethod
    def identity(cls) -> "Mechanism":
        return cls()

    @classmethod
    def randomized_response(cls, t: float, safe_set: Sequence) -> "Mechanism":
        return cls("randomized-response", float(t), tuple(safe_set))

    @classmethod
    def custom_table(cls, table: Mapping) -> "Mechanism":
        return cls("custom-table", table=table)

    def transform(self, query, labels: Sequence, probs) -> np.ndarray:
        """Apply the mechanism along the last axis of ``probs``."""
        probs = np.asarray(probs, dtype=float)
        labels = tuple(labels)
        if self.kind == "identity":
            return probs
        if self.kind == "randomized-response":
            try:
                idx = [labels.index(s) for s in self.safe_set]
            except ValueError:
                raise InvalidParams(f"safe set {self.safe_set!r} not in alphabet {labels!r}") from None
            out = self.t * probs
            out[..., idx] += (1.0 - self.t) / len(idx)
            return out
        kernel = np.eye(len(labels))
        for src, row in self.table.items():
            if src not in labels:
                continue
            i = labels.index(src)
            kernel[i, :] = 0.0
            for dst, p in row.items():
                if dst not in labels:
                    raise InvalidParams(f"table output {dst!r} not in alphabet")
                kernel[i, labels.index(dst)] = p
        return probs @ kernel

    def to_dict(self) -> dict:
        if self.kind == "identity":
            return {"kind": "identity"}
        if self.kind == "randomized-response":
            return {"kind": self.kind, "t": self.t, "safe_set": list(self.safe_set)}
        return {"kind": self.kind, "table": {k: dict(v) for k, v in self.table.items()}}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Mechanism":
        kind = data.get("kind", "identity")
        if kind == "identity":
            return cls.identity()
        if kind == "randomized-response":
            if "t" not in data:
                raise InvalidParams("randomized-response mechanism needs 't'")
            return cls.randomized_response(data["t"], data.get("safe_set", ()))
        if kind == "custom-table":
            return cls.custom_table(data.get("table") or {})
        raise InvalidParams(f"unknown mechanism kind {kind!r}")


IDENTITY = Mechanism()


def apply(mech: Mechanism, q, resp: FiniteDistribution) -> FiniteDistribution:
    """Distribution returned to the user for query ``q``."""
    out = mech.transform(q, resp.outcomes, np.asarray(resp.probs))
    return FiniteDistribution(resp.outcomes, np.clip(out, 0.0, None).tolist())


# ---------------------------------------------------------------------------
# worst-case search


@dataclass(frozen=True)
class Witness:
    prior: str
    queries: tuple

    def to_dict(self) -> dict:
        return {"prior": self.prior, "queries": list(self.queries)}


def _cell_value(args):
    world, mech, prior, queries = args
    return exp_iil(world, prior, queries, mech)


def leakage_table(world: World, mech: Mechanism | None, k: int, parallel: int | None = None):
    """Exp-IIL of every (prior, k-tuple) cell in a fixed lexicographic order."""
    if k < 1:
        raise InvalidParams("k must be >= 1")
    n_tuples = len(world.queries) ** k
    if n_tuples > world.enumeration_cap:
        raise EnumerationTooLarge(n_tuples, world.enumeration_cap)
    cells = [
        (name, qs)
        for name in world.priors
        for qs in itertools.product(world.queries, repeat=k)
    ]
    jobs = [(world, mech, name, qs) for name, qs in cells]
    if parallel and parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            values = list(pool.map(_cell_value, jobs, chunksize=max(1, len(jobs) // (4 * parallel))))
    else:
        values = [_cell_value(job) for job in jobs]
    return [(Witness(name, qs), v) for (name, qs), v in zip(cells, values)]


def worst_case_exp_iil(world: World, mech: Mechanism | None, k: int, parallel: int | None = None):
    """Sup of Exp-IIL over adversary priors and k-tuples of queries.

    Returns ``(value, witness)``; ties go to the first cell in
    prior-then-lexicographic-tuple order.
    """
    best_w, best_v = None, -math.inf
    for w, v in leakage_table(world, mech, k, parallel):
        if v > best_v:
            best_w, best_v = w, v
    return best_v, best_w


# ---------------------------------------------------------------------------
# calibration


def check_safety_set(world: World, safe_set: Sequence | None = None) -> None:
    """Raise unless every safe string leaves every prior unchanged.

    A single safe response is uninformative exactly when its likelihood
    ``p(s | query, answer)`` does not depend on the answer.
    """
    safe_set = tuple(world.safe_set if safe_set is None else safe_set)
    if not safe_set:
        raise SafetySetAssumptionViolated("world declares no safe strings")
    for q in world.queries:
        marg = world.marginal_channel(q)
        for s in safe_set:
            if s not in world.responses:
                raise SafetySetAssumptionViolated(f"safe string {s!r} not a response label")
            col = marg[:, world.responses.index(s)]
            if col.max() - col.min() > SAFE_STRING_TOL:
                raise SafetySetAssumptionViolated(
                    f"safe string {s!r} is informative for query {q!r}: "
                    f"likelihoods {col.tolist()}"
                )


@dataclass(frozen=True)
class Calibration:
    eps: float
    t: float
    sup: float
    witness: Witness

    def mechanism(self, safe_set: Sequence) -> Mechanism:
        return Mechanism.randomized_response(self.t, safe_set)

    def to_dict(self) -> dict:
        return {"eps": self.eps, "t": self.t, "sup": self.sup, "witness": self.witness.to_dict()}


def calibrate(world: World, eps: float, parallel: int | None = None) -> Calibration:
    """Passthrough probability making randomized response an eps-ICM, with audit data."""
    if not eps > 0.0:
        raise InvalidParams("eps must be positive")
    check_safety_set(world)
    sup, witness = worst_case_exp_iil(world, IDENTITY, 1, parallel)
    t = 1.0 if sup <= 0.0 else min(eps / sup, 1.0)
    return Calibration(float(eps), float(t), float(sup), witness)


def calibrate_t_epsilon(world: World, eps: float) -> float:
    """``min(eps / sup_leakage, 1)``; 1 when nothing can leak."""
    return calibrate(world, eps).t


# ---------------------------------------------------------------------------
# composition


@dataclass(frozen=True)
class CompositionBound:
    """Both sides of the k-interaction composition bound for one cell.

    ``steps`` holds, per interaction j, the conditional leakage
    ``I_A(answer; y_j | piles so far)``; they sum to ``lhs``.  ``residuals``
    are ``single_j + dependency_j - step_j``: the bound holds cell-wise when
    each is non-negative.
    """

    eps1: float
    k: int
    lhs: float
    dependency_terms: tuple
    steps: tuple
    singles: tuple
    residuals: tuple

    @property
    def rhs(self) -> float:
        return self.k * self.eps1 + math.fsum(self.dependency_terms)

    def to_dict(self) -> dict:
        return {
            "eps1": self.eps1,
            "k": self.k,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "dependency_terms": list(self.dependency_terms),
            "steps": list(self.steps),
            "singles": list(self.singles),
            "residuals": list(self.residuals),
        }


def composition_bound(world: World, mech, queries: Sequence, prior, eps1: float | None = None) -> CompositionBound:
    queries = tuple(queries)
    if eps1 is None:
        eps1 = worst_case_exp_iil(world, mech, 1)[0]
    deps = tuple(conditional_dependency_term(world, prior, queries, mech, j) for j in range(2, len(queries) + 1))
    singles = tuple(exp_iil(world, prior, (q,), mech) for q in queries)
    steps = [singles[0]]
    for j in range(1, len(queries)):
        steps.append(conditional_exp_iil(world, prior, queries[:j], (queries[j],), mech))
    residuals = tuple(singles[j] + (deps[j - 1] if j else 0.0) - steps[j] for j in range(len(queries)))
    return CompositionBound(
        eps1=float(eps1),
        k=len(queries),
        lhs=exp_iil(world, prior, queries, mech),
        dependency_terms=deps,
        steps=tuple(steps),
        singles=singles,
        residuals=residuals,
    )


def composition_bound_rhs(world: World, mech, queries: Sequence, prior, eps1: float | None = None) -> float:
    """``k * eps1 + sum_j dependency_j``; eps1 is recomputed for ``mech`` unless given."""
    queries = tuple(queries)
    if eps1 is None:
        eps1 = worst_case_exp_iil(world, mech, 1)[0]
    deps = [conditional_dependency_term(world, prior, queries, mech, j) for j in range(2, len(queries) + 1)]
    return len(queries) * eps1 + math.fsum(deps)
