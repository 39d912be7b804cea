"""Benign-user utility under censorship.

Two notions of utility: an expected task utility ``E[u(x, y)]`` and, for
inferential users, the mutual information between the user's belief and one
response.

For the inferential-user bound the user and adversary beliefs need a joint
law.  A :class:`Coupling` declares it explicitly over (user answer,
adversary answer) pairs for one named adversary prior.  The victim channel
responds to the adversary-side answer and the user's answer depends on the
response only through it.  Priors without a declared coupling are treated
as independent of the user.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np

from .belief import NORMALIZATION_TOL, FiniteDistribution, entropy
from .censorship import IDENTITY, Mechanism, worst_case_exp_iil
from .errors import InvalidParams, MismatchedSpaces, NotAnICM, UnknownQuery, ZeroBaselineUtility
from .world import World, mutual_information, permissible_information, restricted_information

ICM_TOL = 1e-9


@dataclass(frozen=True)
class UtilityFunction:
    """Non-negative utility per (query, response); unlisted pairs are worth 0."""

    table: Mapping = field(default_factory=dict)

    def __post_init__(self):
        table = {tuple(k): float(v) for k, v in dict(self.table).items()}
        if any(not v >= 0.0 for v in table.values()):
            raise InvalidParams("utilities must be non-negative")
        object.__setattr__(self, "table", table)

    def __call__(self, x, y) -> float:
        return self.table.get((x, y), 0.0)

    def vanishes_on(self, safe_set) -> bool:
        return all(v == 0.0 for (x, y), v in self.table.items() if y in set(safe_set))


@dataclass(frozen=True)
class Coupling:
    """Joint law of (user answer, adversary answer) for one adversary prior."""

    adversary_prior: str
    joint: np.ndarray  # joint[u, v] over World.answers x World.answers

    def __post_init__(self):
        joint = np.asarray(self.joint, dtype=float)
        if joint.ndim != 2 or joint.shape[0] != joint.shape[1]:
            raise InvalidParams("coupling must be a square table over answers")
        if (joint < 0).any() or abs(math.fsum(joint.ravel().tolist()) - 1.0) > NORMALIZATION_TOL:
            raise InvalidParams("coupling must be a probability table")
        joint.setflags(write=False)
        object.__setattr__(self, "joint", joint)

    @classmethod
    def diagonal(cls, adversary_prior: str, prior: FiniteDistribution) -> "Coupling":
        """User and adversary hold the same belief about the same answer."""
        return cls(adversary_prior, np.diag(prior.probs))

    def user_marginal(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    def adversary_marginal(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    def conditional_entropy(self) -> float:
        """H(user answer | adversary answer) in nats."""
        pv = self.adversary_marginal()
        terms = [
            -p * math.log(p / pv[v])
            for (u, v), p in np.ndenumerate(self.joint)
            if p > 0.0
        ]
        return math.fsum(terms)


@dataclass(frozen=True)
class BenignUser:
    target_query: Hashable
    prior: FiniteDistribution
    coupling: Coupling | None = None

    def __post_init__(self):
        if not self.prior.is_strictly_positive():
            raise InvalidParams("user prior must be strictly positive")
        if self.coupling is not None:
            um = self.coupling.user_marginal()
            if um.shape[0] != len(self.prior) or np.abs(um - np.asarray(self.prior.probs)).max() > NORMALIZATION_TOL:
                raise MismatchedSpaces("coupling's user marginal differs from the user prior")


def _check_query(world: World, x):
    if x not in world.queries:
        raise UnknownQuery(x)


def response_distribution(world: World, x, mech=None, prior=None) -> np.ndarray:
    """Marginal ``p(y | x)`` under ``prior`` (default: the first prior in the world)."""
    _check_query(world, x)
    prior = world.prior(next(iter(world.priors)) if prior is None else prior)
    return np.asarray(prior.probs) @ world.marginal_channel(x, mech)


def expected_utility(world: World, u: UtilityFunction, x, mech=None, prior=None) -> float:
    py = response_distribution(world, x, mech, prior)
    return math.fsum(p * u(x, y) for p, y in zip(py.tolist(), world.responses))


def utility_ratio(world: World, u: UtilityFunction, x, t: float, safe_set=None, prior=None) -> float:
    """Censored over uncensored expected utility for randomized response at ``t``."""
    safe_set = tuple(world.safe_set if safe_set is None else safe_set)
    if not u.vanishes_on(safe_set):
        raise InvalidParams("utility must vanish on safe strings")
    base = expected_utility(world, u, x, IDENTITY, prior)
    if base <= 0.0:
        raise ZeroBaselineUtility(f"uncensored utility of {x!r} is {base!r}")
    censored = expected_utility(world, u, x, Mechanism.randomized_response(t, safe_set), prior)
    return censored / base


def user_utility(world: World, user: BenignUser, x, mech=None) -> float:
    """Information one response to ``x`` gives the inferential user."""
    _check_query(world, x)
    prior = user.prior.reorder(world.answers)
    if user.coupling is None:
        return mutual_information(world, prior, (x,), mech)
    channel = world.marginal_channel(x, mech)  # (V, Y)
    joint_uy = user.coupling.joint @ channel
    return restricted_information(joint_uy, np.ones(joint_uy.shape[0], dtype=bool))


@dataclass(frozen=True)
class UtilityBound:
    eps: float
    value: float
    terms: dict  # prior name -> (conditional entropy, permissible information)
    argmin: str

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "value": self.value,
            "argmin": self.argmin,
            "terms": {k: {"conditional_entropy": h, "permissible_information": i} for k, (h, i) in self.terms.items()},
        }


def utility_bound(world: World, user: BenignUser, x, mech: Mechanism | None, eps: float) -> UtilityBound:
    _check_query(world, x)
    worst, witness = worst_case_exp_iil(world, mech, 1)
    if worst > eps + ICM_TOL:
        raise NotAnICM(f"single-interaction leakage {worst!r} at {witness} exceeds eps={eps!r}")
    user_h = entropy(user.prior)
    terms = {}
    for name in world.priors:
        if user.coupling is not None and user.coupling.adversary_prior == name:
            adv = world.priors[name]
            if np.abs(user.coupling.adversary_marginal() - np.asarray(adv.probs)).max() > NORMALIZATION_TOL:
                raise MismatchedSpaces(f"coupling's adversary marginal differs from prior {name!r}")
            h = user.coupling.conditional_entropy()
        else:
            h = user_h
        terms[name] = (h, permissible_information(world, name, (x,), mech))
    argmin = min(terms, key=lambda n: terms[n][0] + terms[n][1])
    h, i = terms[argmin]
    return UtilityBound(float(eps), float(eps + h + i), terms, argmin)


def user_utility_bound(world: World, user: BenignUser, x, mech: Mechanism | None, eps: float) -> float:
    """``eps + min over priors of [H(user | adversary) + permissible information]``."""
    return utility_bound(world, user, x, mech, eps).value
