"""Exact finite-probability primitives.

Everything here works on small labelled probability vectors: priors,
posteriors, victim response distributions and mechanism outputs all share the
:class:`FiniteDistribution` type.  Logarithms are natural (nats); use
:func:`to_bits` at report time if bits are wanted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

from .errors import (
    DuplicateLabel,
    MismatchedSpaces,
    NegativeProb,
    NonNormalized,
    UnknownQuery,
    ZeroEvidence,
    ZeroPrior,
)

NORMALIZATION_TOL = 1e-9

Label = Hashable


def validate(dist):
    """Check the distribution invariants and return ``dist`` unchanged.

    Raises
    ------
    DuplicateLabel
        Two outcomes share a label.
    NegativeProb
        Some probability is below zero.
    NonNormalized
        The probabilities sum to something further than 1e-9 from 1.
    """
    outcomes = tuple(dist.outcomes)
    probs = tuple(dist.probs)
    if len(outcomes) != len(probs):
        raise MismatchedSpaces(
            f"{len(outcomes)} outcomes but {len(probs)} probabilities"
        )
    if len(set(outcomes)) != len(outcomes):
        raise DuplicateLabel(f"duplicate outcome labels in {outcomes!r}")
    for label, p in zip(outcomes, probs):
        if not p >= 0.0:
            raise NegativeProb(f"p({label!r}) = {p!r}")
    total = math.fsum(probs)
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise NonNormalized(f"probabilities sum to {total!r}")
    return dist


@dataclass(frozen=True)
class FiniteDistribution:
    """Probability vector over an ordered set of unique labels."""

    outcomes: tuple
    probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        validate(self)

    @classmethod
    def from_mapping(cls, mapping: Mapping[Label, float]) -> "FiniteDistribution":
        return cls(tuple(mapping), tuple(mapping.values()))

    @classmethod
    def uniform(cls, outcomes: Iterable[Label]) -> "FiniteDistribution":
        outcomes = tuple(outcomes)
        return cls(outcomes, [1.0 / len(outcomes)] * len(outcomes))

    @classmethod
    def point(cls, outcomes: Iterable[Label], at: Label) -> "FiniteDistribution":
        outcomes = tuple(outcomes)
        return cls(outcomes, [1.0 if o == at else 0.0 for o in outcomes])

    def __getitem__(self, label: Label) -> float:
        try:
            return self.probs[self.outcomes.index(label)]
        except ValueError:
            raise KeyError(label) from None

    def __len__(self) -> int:
        return len(self.outcomes)

    def as_dict(self) -> dict:
        return dict(zip(self.outcomes, self.probs))

    def reorder(self, outcomes: Sequence[Label]) -> "FiniteDistribution":
        """Same distribution with outcomes listed in the given order."""
        if set(outcomes) != set(self.outcomes) or len(outcomes) != len(self.outcomes):
            raise MismatchedSpaces(f"{tuple(outcomes)!r} vs {self.outcomes!r}")
        return FiniteDistribution(tuple(outcomes), [self[o] for o in outcomes])

    def is_strictly_positive(self) -> bool:
        return all(p > 0.0 for p in self.probs)


@dataclass(frozen=True)
class ImpermissibleSet:
    """Answers whose confident inference counts as leakage (never empty)."""

    members: frozenset

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(self.members))
        if not self.members:
            raise ValueError("impermissible set must be non-empty")

    def __contains__(self, label) -> bool:
        return label in self.members

    def __iter__(self):
        return iter(self.members)

    def check_within(self, outcomes: Iterable[Label]) -> None:
        missing = self.members - set(outcomes)
        if missing:
            raise MismatchedSpaces(f"impermissible labels {sorted(map(str, missing))} not in outcome set")

    def complement(self, outcomes: Iterable[Label]) -> frozenset:
        """Permissible labels; may be empty, hence a plain frozenset."""
        return frozenset(o for o in outcomes if o not in self.members)


@dataclass(frozen=True)
class SecurityTarget:
    """Forbidden outputs per query for the dichotomous security objective."""

    target_sets: Mapping[Label, frozenset]
    output_space: tuple | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(
            self, "target_sets", {q: frozenset(s) for q, s in dict(self.target_sets).items()}
        )
        if self.output_space is not None:
            space = set(self.output_space)
            for q, targets in self.target_sets.items():
                if not targets <= space:
                    raise MismatchedSpaces(f"targets of {q!r} outside output space")


def security_score(target: SecurityTarget, q: Label, a: Label) -> int:
    """1 iff ``a`` is one of the forbidden outputs for ``q``."""
    try:
        targets = target.target_sets[q]
    except KeyError:
        raise UnknownQuery(q) from None
    return int(a in targets)


def bayes_update(prior: FiniteDistribution, likelihood) -> FiniteDistribution:
    """Posterior proportional to ``prior(a) * likelihood(a)``.

    ``likelihood`` is either a mapping from label to value or a sequence
    aligned with ``prior.outcomes``.
    """
    if not prior.is_strictly_positive():
        raise ZeroPrior(f"prior has a zero entry: {prior.as_dict()!r}")
    if isinstance(likelihood, Mapping):
        try:
            lik = [float(likelihood[a]) for a in prior.outcomes]
        except KeyError as exc:
            raise MismatchedSpaces(f"likelihood missing label {exc.args[0]!r}") from None
    else:
        lik = [float(x) for x in likelihood]
        if len(lik) != len(prior):
            raise MismatchedSpaces("likelihood length does not match prior")
    for a, x in zip(prior.outcomes, lik):
        if not x >= 0.0:
            raise NegativeProb(f"likelihood({a!r}) = {x!r}")
    joint = [p * x for p, x in zip(prior.probs, lik)]
    evidence = math.fsum(joint)
    if evidence <= 0.0:
        raise ZeroEvidence("every prior * likelihood product is zero")
    return FiniteDistribution(prior.outcomes, [j / evidence for j in joint])


def _aligned(before: FiniteDistribution, after: FiniteDistribution):
    if set(before.outcomes) != set(after.outcomes) or len(before) != len(after):
        raise MismatchedSpaces(f"{before.outcomes!r} vs {after.outcomes!r}")
    if before.outcomes != after.outcomes:
        after = after.reorder(before.outcomes)
    return before, after


def restricted_gain(before: FiniteDistribution, after: FiniteDistribution, labels) -> float:
    """``sum_{a in labels} after(a) log(after(a)/before(a))`` with 0 log 0 = 0.

    Unlike :func:`iil` the label set may be empty (returns 0).
    """
    before, after = _aligned(before, after)
    labels = frozenset(labels)
    if not labels <= set(before.outcomes):
        raise MismatchedSpaces("label set not contained in outcome space")
    terms = []
    for a, p0, p1 in zip(before.outcomes, before.probs, after.probs):
        if a not in labels:
            continue
        if p0 <= 0.0:
            raise ZeroPrior(f"before({a!r}) = 0 on a scored label")
        if p1 > 0.0:
            terms.append(p1 * math.log(p1 / p0))
    return math.fsum(terms)


def iil(before: FiniteDistribution, after: FiniteDistribution, imp: ImpermissibleSet) -> float:
    """Impermissible information leakage of a single belief change.

    Can be negative for one realised history; only its expectation over
    histories is guaranteed non-negative.
    """
    imp.check_within(before.outcomes)
    return restricted_gain(before, after, imp.members)


def kl_gain(before: FiniteDistribution, after: FiniteDistribution) -> float:
    """The same sum taken over every outcome (KL(after || before))."""
    return restricted_gain(before, after, before.outcomes)


def impermissible_entropy(p: FiniteDistribution, imp) -> float:
    """``-sum_{a in imp} p(a) log p(a)``."""
    members = imp.members if isinstance(imp, ImpermissibleSet) else frozenset(imp)
    if not members <= set(p.outcomes):
        raise MismatchedSpaces("impermissible labels not in outcome set")
    return math.fsum(
        -x * math.log(x) for a, x in zip(p.outcomes, p.probs) if a in members and x > 0.0
    )


def entropy(p: FiniteDistribution) -> float:
    """Shannon entropy in nats."""
    return math.fsum(-x * math.log(x) for x in p.probs if x > 0.0)


def to_bits(nats: float) -> float:
    return nats / math.log(2.0)
