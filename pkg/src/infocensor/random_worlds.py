"""Seeded generators of small random worlds for property checks."""

from __future__ import annotations

import numpy as np

from .belief import FiniteDistribution, ImpermissibleSet
from .utility import BenignUser, Coupling, UtilityFunction
from .world import World

SAFE = ""


def _dirichlet(rng: np.random.Generator, n: int, alpha: float = 1.0) -> np.ndarray:
    p = rng.dirichlet(np.full(n, alpha))
    # keep priors away from exact zeros so strict positivity holds
    p = np.maximum(p, 1e-6)
    return p / p.sum()


def _channel_row(rng, n: int) -> np.ndarray:
    kind = rng.random()
    if kind < 0.15:
        row = np.zeros(n)
        row[rng.integers(n)] = 1.0
        return row
    if kind < 0.3:
        return np.full(n, 1.0 / n)
    row = rng.dirichlet(np.full(n, 0.7))
    return row / row.sum()


def random_world(
    rng: np.random.Generator,
    *,
    max_answers: int = 4,
    max_queries: int = 3,
    max_responses: int = 3,
    max_priors: int = 3,
    nuisance: bool = False,
    safe_mass: bool = False,
) -> World:
    """A random world with a safe string ``""`` that is never informative.

    ``safe_mass`` lets the victim itself emit the safe string with a
    per-query probability that does not depend on the answer.
    """
    n_a = int(rng.integers(2, max_answers + 1))
    n_q = int(rng.integers(1, max_queries + 1))
    n_r = int(rng.integers(2, max_responses + 1))
    answers = tuple(f"a{i}" for i in range(n_a))
    queries = tuple(f"x{i}" for i in range(n_q))
    responses = tuple(f"y{i}" for i in range(n_r)) + (SAFE,)
    n_imp = int(rng.integers(1, n_a + 1))
    imp = ImpermissibleSet(rng.choice(answers, size=n_imp, replace=False).tolist())
    latent = ("z0", "z1") if nuisance else (None,)
    model = {}
    for q in queries:
        s = float(rng.uniform(0.0, 0.4)) if safe_mass and rng.random() < 0.5 else 0.0
        for a in answers:
            for z in latent:
                row = np.append((1.0 - s) * _channel_row(rng, n_r), s)
                cell = (q, a) if z is None else (q, a, z)
                model[cell] = FiniteDistribution(responses, row.tolist())
    priors = {f"p{i}": FiniteDistribution(answers, _dirichlet(rng, n_a).tolist())
              for i in range(int(rng.integers(1, max_priors + 1)))}
    nz = None
    if nuisance:
        w = float(rng.uniform(0.2, 0.8))
        nz = FiniteDistribution(latent, [w, 1.0 - w])
    return World(
        answers=answers,
        imp=imp,
        queries=queries,
        responses=responses,
        response_model=model,
        priors=priors,
        safe_set=(SAFE,),
        nuisance=nz,
    )


def random_utility(rng: np.random.Generator, world: World) -> UtilityFunction:
    """Positive utility on every non-safe response, zero on safe strings."""
    table = {}
    for x in world.queries:
        for y in world.responses:
            if y not in world.safe_set:
                table[(x, y)] = float(rng.uniform(0.1, 2.0))
    return UtilityFunction(table)


def random_user(rng: np.random.Generator, world: World, coupled: bool = True) -> BenignUser:
    """A benign user whose belief is tied to one adversary prior by a random joint."""
    name = list(world.priors)[int(rng.integers(len(world.priors)))]
    adv = np.asarray(world.priors[name].probs)
    n = len(world.answers)
    # joint[u, v] = p_adv(v) * p(u | v) with random conditionals
    cond = np.stack([_dirichlet(rng, n, 0.5) for _ in range(n)], axis=1)
    if rng.random() < 0.2:
        cond = np.eye(n)
    joint = cond * adv[None, :]
    joint = joint / joint.sum()
    prior = FiniteDistribution(world.answers, np.maximum(joint.sum(axis=1), 0.0).tolist())
    if not prior.is_strictly_positive():
        joint = 0.9 * joint + 0.1 * np.outer(np.full(n, 1.0 / n), adv)
        prior = FiniteDistribution(world.answers, joint.sum(axis=1).tolist())
    x_star = world.queries[int(rng.integers(len(world.queries)))]
    return BenignUser(x_star, prior, Coupling(name, joint) if coupled else None)
