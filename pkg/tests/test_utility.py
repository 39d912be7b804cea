import math

import numpy as np
import pytest

from conftest import make_world
from infocensor.belief import FiniteDistribution, entropy
from infocensor.censorship import IDENTITY, Mechanism, calibrate
from infocensor.errors import MismatchedSpaces, NotAnICM, UnknownQuery, ZeroBaselineUtility
from infocensor.random_worlds import random_user, random_utility, random_world
from infocensor.utility import (
    BenignUser,
    Coupling,
    UtilityFunction,
    expected_utility,
    user_utility,
    user_utility_bound,
    utility_bound,
    utility_ratio,
)

LN2 = math.log(2)


@pytest.fixture
def apply_world():
    row = {"y1": 0.8, "y2": 0.2, "s": 0.0}
    return make_world({("x", "a*"): row, ("x", "b"): row}, responses=("y1", "y2", "s"), safe_set=("s",))


U = UtilityFunction({("x", "y1"): 1.0, ("x", "y2"): 1.0, ("x", "s"): 0.0})


class TestExpectedUtility:
    def test_identity(self, apply_world):
        assert expected_utility(apply_world, U, "x", IDENTITY) == pytest.approx(1.0)

    def test_t_zero(self, apply_world):
        assert expected_utility(apply_world, U, "x", Mechanism.randomized_response(0.0, ("s",))) == 0.0

    def test_half(self, apply_world):
        assert expected_utility(apply_world, U, "x", Mechanism.randomized_response(0.5, ("s",))) == pytest.approx(0.5)

    def test_unknown_query(self, apply_world):
        with pytest.raises(UnknownQuery):
            expected_utility(apply_world, U, "nope")

    def test_negative_utility_rejected(self):
        with pytest.raises(ValueError):
            UtilityFunction({("x", "y"): -1.0})


class TestUtilityRatio:
    @pytest.mark.parametrize("t", [0.0, 1.0, 0.28853900817779])
    def test_equals_t(self, apply_world, t):
        assert utility_ratio(apply_world, U, "x", t) == pytest.approx(t, abs=1e-12)

    def test_zero_baseline(self, apply_world):
        u0 = UtilityFunction({})
        with pytest.raises(ZeroBaselineUtility):
            utility_ratio(apply_world, u0, "x", 0.5)

    def test_random_worlds_with_safe_mass(self, rng):
        for _ in range(50):
            w = random_world(rng, safe_mass=True)
            u = random_utility(rng, w)
            t = float(rng.uniform())
            for x in w.queries:
                assert utility_ratio(w, u, x, t) == pytest.approx(t, abs=1e-12)


class TestUserUtility:
    def test_uninformative(self, blind_world):
        user = BenignUser("x", blind_world.priors["flat"])
        assert user_utility(blind_world, user, "x") == pytest.approx(0.0, abs=1e-15)

    def test_revealing(self, revealing_world):
        user = BenignUser("x", revealing_world.priors["flat"])
        assert user_utility(revealing_world, user, "x") == pytest.approx(LN2, abs=1e-12)

    def test_t_zero(self, revealing_world):
        user = BenignUser("x", revealing_world.priors["flat"])
        assert user_utility(revealing_world, user, "x", Mechanism.randomized_response(0.0, ("",))) == 0.0

    def test_diagonal_coupling_matches_plain_mi(self, revealing_world):
        prior = revealing_world.priors["flat"]
        coupled = BenignUser("x", prior, Coupling.diagonal("flat", prior))
        assert user_utility(revealing_world, coupled, "x") == pytest.approx(LN2, abs=1e-12)

    def test_bounded_by_entropy(self, rng):
        for _ in range(100):
            w = random_world(rng)
            user = random_user(rng, w, coupled=bool(rng.random() < 0.5))
            for x in w.queries:
                value = user_utility(w, user, x)
                assert -1e-12 <= value <= entropy(user.prior) + 1e-9


class TestCoupling:
    def test_conditional_entropy_product(self):
        pu = np.array([0.3, 0.7])
        pv = np.array([0.5, 0.5])
        c = Coupling("p", np.outer(pu, pv))
        assert c.conditional_entropy() == pytest.approx(entropy(FiniteDistribution("ab", pu)), abs=1e-12)

    def test_user_marginal_checked(self):
        prior = FiniteDistribution(("a*", "b"), (0.5, 0.5))
        with pytest.raises(MismatchedSpaces):
            BenignUser("x", prior, Coupling("flat", np.array([[0.9, 0.0], [0.0, 0.1]])))

    def test_joint_normalized(self):
        with pytest.raises(ValueError):
            Coupling("p", np.array([[0.5, 0.0], [0.0, 0.6]]))


class TestBound:
    def test_aligned_full_set(self):
        w = make_world({("x", "a*"): {"A": 1.0}, ("x", "b"): {"B": 1.0}}, imp=("a*", "b"))
        prior = w.priors["flat"]
        mech = calibrate(w, 0.1).mechanism(("",))
        user = BenignUser("x", prior, Coupling.diagonal("flat", prior))
        assert user_utility_bound(w, user, "x", mech, 0.1) == pytest.approx(0.1, abs=1e-12)
        assert user_utility(w, user, "x", mech) <= 0.1 + 1e-9

    def test_nothing_impermissible_to_learn(self, revealing_world):
        # user only cares about b; permissible information is then the full gain about b
        user = BenignUser("x", revealing_world.priors["flat"])
        b = utility_bound(revealing_world, user, "x", IDENTITY, 0.5)
        assert b.value >= user_utility(revealing_world, user, "x") - 1e-9

    def test_half_impermissible_hand_value(self):
        w = make_world({("x", "a*"): {"A": 0.9, "B": 0.1}, ("x", "b"): {"A": 0.2, "B": 0.8}})
        prior = w.priors["flat"]
        user = BenignUser("x", prior, Coupling.diagonal("flat", prior))
        mech = calibrate(w, 0.05).mechanism(("",))
        b = utility_bound(w, user, "x", mech, 0.05)
        from infocensor.world import permissible_information

        assert b.value == pytest.approx(0.05 + permissible_information(w, "flat", ["x"], mech), abs=1e-12)
        assert user_utility(w, user, "x", mech) <= b.value + 1e-9

    def test_requires_icm(self, revealing_world):
        user = BenignUser("x", revealing_world.priors["flat"])
        with pytest.raises(NotAnICM):
            utility_bound(revealing_world, user, "x", IDENTITY, 0.01)

    def test_independent_coupling_uses_user_entropy(self, revealing_world):
        user = BenignUser("x", revealing_world.priors["flat"])
        b = utility_bound(revealing_world, user, "x", IDENTITY, 0.5)
        assert b.terms["flat"][0] == pytest.approx(LN2)

    def test_random_worlds(self, rng):
        for _ in range(100):
            w = random_world(rng)
            user = random_user(rng, w)
            eps = float(rng.choice([0.01, 0.1, 0.5]))
            mech = calibrate(w, eps).mechanism(w.safe_set)
            assert user_utility(w, user, user.target_query, mech) <= \
                user_utility_bound(w, user, user.target_query, mech, eps) + 1e-9
