from pathlib import Path

import numpy as np
import pytest

from infocensor.belief import FiniteDistribution, ImpermissibleSet
from infocensor.world import World

DEMO = Path(__file__).resolve().parent.parent / "demo"


def make_world(model, answers=("a*", "b"), imp=("a*",), responses=None, priors=None, safe_set=("",), **kw):
    model = {cell: (row.as_dict() if hasattr(row, "as_dict") else dict(row)) for cell, row in model.items()}
    queries = tuple(dict.fromkeys(cell[0] for cell in model))
    if responses is None:
        responses = tuple(dict.fromkeys(y for row in model.values() for y in row)) + tuple(
            s for s in safe_set if not any(s in row for row in model.values())
        )
    if priors is None:
        priors = {"flat": FiniteDistribution.uniform(answers)}
    return World(answers=tuple(answers), imp=ImpermissibleSet(imp), queries=queries, responses=responses,
                 response_model=model, priors=priors, safe_set=safe_set, **kw)


@pytest.fixture
def revealing_world():
    """One query whose response names the hidden answer."""
    return make_world({("x", "a*"): {"A": 1.0}, ("x", "b"): {"B": 1.0}})


@pytest.fixture
def blind_world():
    """One query whose response ignores the hidden answer."""
    return make_world({("x", "a*"): {"A": 0.5, "B": 0.5}, ("x", "b"): {"A": 0.5, "B": 0.5}})


@pytest.fixture
def rng():
    return np.random.default_rng(20241014)
