"""Exact knowledge-pile enumeration over small simulated worlds.

A :class:`World` fixes a hidden-answer space, a victim channel
``p(response | query, answer)`` and a finite family of adversary priors.  The
adversary is an exact Bayesian who knows the channel (and the censorship
mechanism in front of it), so every leakage quantity is computed by summing
over all ``|responses|**k`` knowledge piles.

Responses are conditionally independent given the hidden answer unless the
world declares a ``nuisance`` variable: a shared latent ``z`` drawn once per
pile, with the channel indexed by ``(query, answer, z)``.  That is the only
way to make interactions dependent given the answer.

Mechanisms are duck-typed: anything with a
``transform(query, labels, probs) -> probs`` method, where ``probs`` is an
array whose last axis runs over ``labels``.  ``None`` means no mechanism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .belief import FiniteDistribution, ImpermissibleSet, bayes_update
from .errors import (
    EnumerationTooLarge,
    InvalidParams,
    MismatchedSpaces,
    UnknownQuery,
    ZeroPrior,
)

DEFAULT_ENUMERATION_CAP = 10**6

PROVENANCES = ("raw", "mechanism-output", "extracted")


@dataclass(frozen=True)
class PileEntry:
    query: Hashable
    response: Hashable
    provenance: str = "mechanism-output"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")


@dataclass(frozen=True)
class KnowledgePile:
    """Ordered record of interactions; order is part of the identity."""

    entries: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @classmethod
    def of(cls, pairs: Iterable[tuple], provenance="mechanism-output") -> "KnowledgePile":
        return cls(tuple(PileEntry(q, r, provenance) for q, r in pairs))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def append(self, entry: PileEntry) -> "KnowledgePile":
        return KnowledgePile(self.entries + (entry,))

    def key(self) -> tuple:
        return tuple((e.query, e.response) for e in self.entries)


@dataclass(frozen=True)
class HistoryDistribution:
    """Positive-probability knowledge piles with their marginal probabilities."""

    piles: tuple
    probs: tuple
    # joint[i, a] = p(answer a, pile i); columns follow World.answers
    joint: np.ndarray = field(repr=False, compare=False)

    def as_distribution(self) -> FiniteDistribution:
        return FiniteDistribution(tuple(p.key() for p in self.piles), self.probs)

    def total(self) -> float:
        return math.fsum(self.probs)


@dataclass(frozen=True)
class World:
    answers: tuple
    imp: ImpermissibleSet
    queries: tuple
    responses: tuple
    response_model: Mapping
    priors: Mapping[str, FiniteDistribution]
    malicious_query: Hashable = "q"
    safe_set: tuple = ()
    nuisance: FiniteDistribution | None = None
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP

    def __post_init__(self):
        for name in ("answers", "queries", "responses", "safe_set"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for name in ("answers", "queries", "responses"):
            values = getattr(self, name)
            if not values or len(set(values)) != len(values):
                raise InvalidParams(f"{name} must be non-empty and unique")
        self.imp.check_within(self.answers)
        if not set(self.safe_set) <= set(self.responses):
            raise MismatchedSpaces("safe strings must be response labels")
        if not self.priors:
            raise InvalidParams("world needs at least one adversary prior")
        priors = {}
        for name, prior in dict(self.priors).items():
            prior = prior.reorder(self.answers)
            if not prior.is_strictly_positive():
                raise ZeroPrior(f"prior {name!r} has a zero entry")
            priors[name] = prior
        object.__setattr__(self, "priors", priors)
        if self.nuisance is not None and not self.nuisance.outcomes:
            raise InvalidParams("nuisance distribution is empty")

        latent = self.latent_labels()
        model, tensors = {}, {}
        for q in self.queries:
            t = np.zeros((len(latent), len(self.answers), len(self.responses)))
            for zi, z in enumerate(latent):
                for ai, a in enumerate(self.answers):
                    cell = (q, a) if self.nuisance is None else (q, a, z)
                    try:
                        dist = self.response_model[cell]
                    except KeyError:
                        raise InvalidParams(f"response model missing cell {cell!r}") from None
                    dist = _full_alphabet(dist, self.responses)
                    model[cell] = dist
                    t[zi, ai, :] = dist.probs
            t.setflags(write=False)
            tensors[q] = t
        object.__setattr__(self, "response_model", model)
        object.__setattr__(self, "_tensors", tensors)

    # ------------------------------------------------------------------

    def latent_labels(self) -> tuple:
        return (None,) if self.nuisance is None else self.nuisance.outcomes

    def latent_weights(self) -> np.ndarray:
        if self.nuisance is None:
            return np.ones(1)
        return np.asarray(self.nuisance.probs)

    def prior(self, prior) -> FiniteDistribution:
        """Resolve a prior given by name, or validate a supplied one."""
        if isinstance(prior, FiniteDistribution):
            prior = prior.reorder(self.answers)
            if not prior.is_strictly_positive():
                raise ZeroPrior("adversary prior has a zero entry")
            return prior
        try:
            return self.priors[prior]
        except KeyError:
            raise InvalidParams(f"unknown prior {prior!r}") from None

    def imp_mask(self, labels=None) -> np.ndarray:
        labels = self.imp.members if labels is None else frozenset(labels)
        return np.array([a in labels for a in self.answers])

    def channel(self, q, mech=None) -> np.ndarray:
        """``c[z, a, y] = p(mechanism output y | query q, answer a, latent z)``."""
        try:
            t = self._tensors[q]
        except KeyError:
            raise UnknownQuery(q) from None
        if mech is None:
            return t
        out = np.asarray(mech.transform(q, self.responses, t), dtype=float)
        if out.shape != t.shape:
            raise InvalidParams("mechanism changed the response alphabet")
        return out

    def marginal_channel(self, q, mech=None) -> np.ndarray:
        """``p(y | q, a)`` with the latent variable summed out, shape (A, R)."""
        return np.tensordot(self.latent_weights(), self.channel(q, mech), axes=1)


def _full_alphabet(dist, responses) -> FiniteDistribution:
    if isinstance(dist, Mapping):
        mapping = dict(dist)
    else:
        mapping = dist.as_dict()
    extra = set(mapping) - set(responses)
    if extra:
        raise MismatchedSpaces(f"response labels {sorted(map(str, extra))} not in alphabet")
    return FiniteDistribution(responses, [mapping.get(r, 0.0) for r in responses])


# ---------------------------------------------------------------------------
# enumeration


def _check_queries(world: World, queries: Sequence) -> tuple:
    queries = tuple(queries)
    if not queries:
        raise InvalidParams("need at least one query (k >= 1)")
    for q in queries:
        if q not in world._tensors:
            raise UnknownQuery(q)
    size = len(world.responses) ** len(queries)
    if size > world.enumeration_cap:
        raise EnumerationTooLarge(size, world.enumeration_cap)
    return queries


def pile_likelihoods(world: World, queries: Sequence, mech=None) -> np.ndarray:
    """``p(pile | answer)`` for every pile, shape (A, R**k).

    Piles are ordered lexicographically by response index with the first
    query most significant (the order of ``itertools.product``).
    """
    queries = _check_queries(world, queries)
    acc = None
    for q in queries:
        c = world.channel(q, mech)  # (Z, A, R)
        if acc is None:
            acc = c
        else:
            z, a, n = acc.shape
            acc = (acc[:, :, :, None] * c[:, :, None, :]).reshape(z, a, n * c.shape[2])
    return np.tensordot(world.latent_weights(), acc, axes=1)


def history_joint(world: World, prior, queries: Sequence, mech=None) -> np.ndarray:
    """``joint[a, i] = prior(a) * p(pile_i | a)``."""
    prior = world.prior(prior)
    return np.asarray(prior.probs)[:, None] * pile_likelihoods(world, queries, mech)


def _pile_at(world: World, queries: tuple, index: int) -> KnowledgePile:
    r = len(world.responses)
    labels = []
    for _ in queries:
        index, y = divmod(index, r)
        labels.append(world.responses[y])
    labels.reverse()
    return KnowledgePile.of(zip(queries, labels))


def enumerate_histories(world: World, prior, queries: Sequence, mech=None) -> HistoryDistribution:
    """Every positive-probability pile for the fixed query tuple."""
    queries = _check_queries(world, queries)
    joint = history_joint(world, prior, queries, mech)
    marg = joint.sum(axis=0)
    keep = np.flatnonzero(marg > 0.0)
    piles = tuple(_pile_at(world, queries, int(i)) for i in keep)
    return HistoryDistribution(piles, tuple(float(marg[i]) for i in keep), joint[:, keep].T.copy())


def posterior_given_history(world: World, prior, pile: KnowledgePile, mech=None) -> FiniteDistribution:
    """Exact adversary belief after observing ``pile``.

    One Bayes update on the joint pile likelihood (summing out the latent
    variable, if any), so intermediate zeros are harmless.
    """
    post = world.prior(prior)
    if not len(pile):
        return post
    resp_index = {r: i for i, r in enumerate(world.responses)}
    try:
        idx = [resp_index[e.response] for e in pile]
    except KeyError as exc:
        raise MismatchedSpaces(f"response {exc.args[0]!r} not in world alphabet") from None
    lik = np.ones((len(world.latent_labels()), len(world.answers)))
    for e, y in zip(pile, idx):
        lik = lik * world.channel(e.query, mech)[:, :, y]
    return bayes_update(post, world.latent_weights() @ lik)


# ---------------------------------------------------------------------------
# restricted information measures on explicit joint tables


def _fsum_xlogy(num: np.ndarray, den: np.ndarray) -> float:
    nz = num > 0.0
    return math.fsum((num[nz] * np.log(num[nz] / den[nz])).ravel().tolist())


def restricted_information(joint: np.ndarray, mask) -> float:
    """``sum_{c in mask} sum_h p(c,h) log(p(c,h) / (p(c) p(h)))``.

    ``joint`` has the scored variable on axis 0 and everything observed
    flattened behind it.
    """
    joint = np.asarray(joint, dtype=float).reshape(joint.shape[0], -1)
    mask = np.asarray(mask, dtype=bool)
    pc = joint.sum(axis=1)
    ph = joint.sum(axis=0)
    sel = joint[mask]
    return _fsum_xlogy(sel, pc[mask][:, None] * ph[None, :])


def restricted_conditional_information(joint: np.ndarray, mask) -> float:
    """``I_mask(C; B | A)`` for ``joint[c, a, b]``.

    ``sum_{c in mask} p(c,a,b) log(p(c,a,b) p(a) / (p(c,a) p(a,b)))``.
    """
    joint = np.asarray(joint, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    p_ca = joint.sum(axis=2)
    p_ab = joint.sum(axis=0)
    p_a = p_ab.sum(axis=1)
    sel = joint[mask]
    num = sel * p_a[None, :, None]
    den = p_ca[mask][:, :, None] * p_ab[None, :, :]
    nz = sel > 0.0
    return math.fsum((sel[nz] * np.log(num[nz] / den[nz])).ravel().tolist())


# ---------------------------------------------------------------------------
# leakage


def exp_iil(world: World, prior, queries: Sequence, mech=None) -> float:
    """Expected impermissible information leakage of the query tuple."""
    return restricted_information(history_joint(world, prior, queries, mech), world.imp_mask())


def mutual_information(world: World, prior, queries: Sequence, mech=None) -> float:
    """Same sum over every answer, i.e. ordinary mutual information."""
    joint = history_joint(world, prior, queries, mech)
    return restricted_information(joint, np.ones(len(world.answers), dtype=bool))


def permissible_information(world: World, prior, queries: Sequence, mech=None) -> float:
    """Information gained about answers outside the impermissible set."""
    joint = history_joint(world, prior, queries, mech)
    return restricted_information(joint, ~world.imp_mask())


def conditional_exp_iil(world: World, prior, given: Sequence, then: Sequence, mech=None) -> float:
    """``I_A(answer; piles of `then` | piles of `given`)``."""
    given, then = tuple(given), tuple(then)
    joint = history_joint(world, prior, given + then, mech)
    r = len(world.responses)
    joint3 = joint.reshape(len(world.answers), r ** len(given), r ** len(then))
    return restricted_conditional_information(joint3, world.imp_mask())


def conditional_dependency_term(world: World, prior, queries: Sequence, mech=None, j: int = 2) -> float:
    """Dependence of the ``j``-th response on the first ``j-1`` given the answer.

    ``sum_{a in A} p(a) sum p(y_1..y_j|a) log(p(y_1..y_j|a) / (p(y_1..y_{j-1}|a) p(y_j|a)))``
    with ``j`` counted from 1.  Zero whenever responses are conditionally
    independent given the answer.
    """
    queries = tuple(queries)
    if not 2 <= j <= len(queries):
        raise InvalidParams(f"dependency index j={j} outside 2..{len(queries)}")
    prior = world.prior(prior)
    r = len(world.responses)
    cond = pile_likelihoods(world, queries[:j], mech).reshape(len(world.answers), r ** (j - 1), r)
    mask = world.imp_mask()
    p_head = cond.sum(axis=2, keepdims=True)
    p_last = cond.sum(axis=1, keepdims=True)
    weighted = (np.asarray(prior.probs)[:, None, None] * cond)[mask]
    ratio_num, ratio_den = cond[mask], (p_head * p_last)[mask]
    nz = weighted > 0.0
    return math.fsum((weighted[nz] * np.log(ratio_num[nz] / ratio_den[nz])).ravel().tolist())


def exp_iil_processed(
    world: World,
    prior,
    queries: Sequence,
    process: Callable[[KnowledgePile], Hashable],
    mech=None,
) -> float:
    """Exp-IIL after deterministic post-processing of every pile.

    Piles mapping to the same key are merged before scoring.
    """
    queries = _check_queries(world, queries)
    joint = history_joint(world, prior, queries, mech)
    groups: dict = {}
    for i in range(joint.shape[1]):
        key = process(_pile_at(world, queries, i))
        groups.setdefault(key, []).append(i)
    merged = np.stack([joint[:, idx].sum(axis=1) for idx in groups.values()], axis=1)
    return restricted_information(merged, world.imp_mask())


def coarsen_labels(mapping: Mapping) -> Callable[[KnowledgePile], tuple]:
    """Post-processing that relabels every response through ``mapping``."""

    def process(pile: KnowledgePile) -> tuple:
        return tuple((e.query, mapping.get(e.response, e.response)) for e in pile)

    return process
