import math

import numpy as np
import pytest

from conftest import make_world
import oracles
from infocensor.belief import FiniteDistribution
from infocensor.censorship import (
    IDENTITY,
    Mechanism,
    apply,
    calibrate,
    calibrate_t_epsilon,
    check_safety_set,
    composition_bound,
    composition_bound_rhs,
    leakage_table,
    worst_case_exp_iil,
)
from infocensor.errors import EnumerationTooLarge, InvalidParams, SafetySetAssumptionViolated
from infocensor.random_worlds import random_world
from infocensor.world import exp_iil

L_STAR = 0.5 * math.log(2)


def resp(*probs, labels=("y1", "y2", "s")):
    return FiniteDistribution(labels, probs)


class TestMechanism:
    def test_t_one_passthrough(self):
        r = resp(0.8, 0.2, 0.0)
        assert apply(Mechanism.randomized_response(1.0, ("s",)), "x", r).probs == r.probs

    def test_t_zero_point_mass(self):
        out = apply(Mechanism.randomized_response(0.0, ("s",)), "x", resp(0.8, 0.2, 0.0))
        assert out.probs == (0.0, 0.0, 1.0)

    def test_half(self):
        out = apply(Mechanism.randomized_response(0.5, ("s",)), "x", resp(0.8, 0.2, 0.0))
        assert out.probs == pytest.approx((0.4, 0.1, 0.5), abs=1e-15)

    def test_victim_mass_on_safe_kept(self):
        out = apply(Mechanism.randomized_response(0.5, ("s",)), "x", resp(0.6, 0.2, 0.2))
        assert out.probs == pytest.approx((0.3, 0.1, 0.6), abs=1e-15)

    def test_two_safe_strings(self):
        r = FiniteDistribution(("y", "s1", "s2"), (1.0, 0.0, 0.0))
        out = apply(Mechanism.randomized_response(0.4, ("s1", "s2")), "x", r)
        assert out.probs == pytest.approx((0.4, 0.3, 0.3))

    def test_invalid_t(self):
        with pytest.raises(InvalidParams):
            Mechanism.randomized_response(1.5, ("s",))

    def test_empty_safe_set(self):
        with pytest.raises(InvalidParams):
            Mechanism.randomized_response(0.5, ())

    def test_safe_label_missing(self):
        with pytest.raises(InvalidParams):
            apply(Mechanism.randomized_response(0.5, ("zz",)), "x", resp(0.8, 0.2, 0.0))

    def test_custom_table_rows_normalize(self):
        with pytest.raises(InvalidParams):
            Mechanism.custom_table({"y1": {"y1": 0.5}})

    def test_custom_table(self):
        mech = Mechanism.custom_table({"y1": {"y1": 0.5, "s": 0.5}})
        out = apply(mech, "x", resp(0.8, 0.2, 0.0))
        assert out.probs == pytest.approx((0.4, 0.2, 0.4))

    def test_dict_roundtrip(self):
        for m in (IDENTITY, Mechanism.randomized_response(0.3, ("s",)), Mechanism.custom_table({"a": {"b": 1.0}})):
            assert Mechanism.from_dict(m.to_dict()) == m

    def test_normalization(self, rng):
        for _ in range(200):
            p = rng.dirichlet(np.ones(3))
            out = apply(Mechanism.randomized_response(float(rng.uniform()), ("s",)), "x", resp(*p))
            assert abs(math.fsum(out.probs) - 1.0) <= 1e-12


class TestCalibration:
    def test_eps_above_sup(self, revealing_world):
        assert calibrate_t_epsilon(revealing_world, 1.0) == 1.0

    def test_uninformative(self, blind_world):
        assert calibrate_t_epsilon(blind_world, 0.1) == 1.0

    def test_revealing(self, revealing_world):
        assert calibrate_t_epsilon(revealing_world, 0.1) == pytest.approx(0.1 / L_STAR, abs=1e-12)
        assert calibrate_t_epsilon(revealing_world, 0.1) == pytest.approx(0.28853900817779, abs=1e-10)

    def test_audit(self, revealing_world):
        cal = calibrate(revealing_world, 0.1)
        assert cal.sup == pytest.approx(L_STAR)
        assert cal.witness.to_dict() == {"prior": "flat", "queries": ["x"]}

    def test_informative_safe_string(self):
        w = make_world({("x", "a*"): {"A": 0.9, "": 0.1}, ("x", "b"): {"B": 0.8, "": 0.2}})
        with pytest.raises(SafetySetAssumptionViolated):
            calibrate(w, 0.1)

    def test_constant_safe_mass_accepted(self):
        w = make_world({("x", "a*"): {"A": 0.8, "": 0.2}, ("x", "b"): {"B": 0.8, "": 0.2}})
        check_safety_set(w)

    def test_eps_must_be_positive(self, revealing_world):
        with pytest.raises(InvalidParams):
            calibrate(revealing_world, 0.0)


class TestWorstCase:
    def test_identity_matches_calibration(self, revealing_world):
        value, w = worst_case_exp_iil(revealing_world, IDENTITY, 1)
        assert value == pytest.approx(L_STAR)

    def test_calibrated(self, revealing_world):
        mech = calibrate(revealing_world, 0.1).mechanism(("",))
        assert worst_case_exp_iil(revealing_world, mech, 1)[0] <= 0.1 + 1e-9

    def test_t_zero(self, revealing_world):
        for k in (1, 2, 3):
            assert worst_case_exp_iil(revealing_world, Mechanism.randomized_response(0.0, ("",)), k)[0] == 0.0

    def test_ties_first_cell(self):
        world = make_world({("x1", "a*"): {"A": 1.0}, ("x1", "b"): {"B": 1.0},
                            ("x2", "a*"): {"A": 1.0}, ("x2", "b"): {"B": 1.0}})
        _, w = worst_case_exp_iil(world, IDENTITY, 1)
        assert w.queries == ("x1",)

    def test_cap(self, revealing_world):
        w = make_world(dict(revealing_world.response_model), enumeration_cap=2)
        with pytest.raises(EnumerationTooLarge):
            worst_case_exp_iil(w, IDENTITY, 2)

    def test_parallel_matches_serial(self, rng):
        w = random_world(rng, max_queries=3, max_priors=3)
        serial = leakage_table(w, IDENTITY, 2)
        par = leakage_table(w, IDENTITY, 2, parallel=2)
        assert [x.to_dict() for x, _ in serial] == [x.to_dict() for x, _ in par]
        assert [v for _, v in serial] == [v for _, v in par]

    def test_monotone_in_t(self, rng):
        for _ in range(30):
            w = random_world(rng)
            vals = [worst_case_exp_iil(w, Mechanism.randomized_response(t, w.safe_set), 1)[0]
                    for t in (0.0, 0.25, 0.5, 0.75, 1.0)]
            assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


class TestComposition:
    def test_k1(self, revealing_world):
        rhs = composition_bound_rhs(revealing_world, IDENTITY, ["x"], "flat")
        assert rhs == pytest.approx(L_STAR)

    def test_conditionally_independent(self, revealing_world):
        b = composition_bound(revealing_world, IDENTITY, ["x", "x"], "flat")
        assert b.dependency_terms == pytest.approx((0.0,), abs=1e-12)
        assert b.rhs == pytest.approx(2 * L_STAR)
        assert b.lhs <= b.rhs

    def test_correlated_adds_dependency(self):
        nz = FiniteDistribution(("z0", "z1"), (0.5, 0.5))
        w = make_world({("x", "a*", "z0"): {"A": 1.0}, ("x", "a*", "z1"): {"B": 1.0},
                        ("x", "b", "z0"): {"B": 1.0}, ("x", "b", "z1"): {"B": 1.0}},
                       responses=("A", "B", ""), nuisance=nz)
        b = composition_bound(w, IDENTITY, ["x", "x"], "flat")
        ref = oracles.dependency_term(w, w.priors["flat"], ("x", "x"), 2)
        assert b.dependency_terms[0] == pytest.approx(ref, abs=1e-12)
        assert b.rhs == pytest.approx(2 * b.eps1 + ref)

    def test_steps_sum_to_lhs(self, rng):
        for _ in range(20):
            w = random_world(rng)
            qs = tuple(rng.choice(w.queries, size=3))
            b = composition_bound(w, IDENTITY, qs, next(iter(w.priors)))
            assert math.fsum(b.steps) == pytest.approx(b.lhs, abs=1e-9)

    def test_restricted_variant_can_exceed_bound(self):
        """A two-answer world where repeated queries leak more than twice the per-query sup.

        Restricted to one answer, the second interaction's conditional gain
        exceeds its unconditional gain (the residual is negative), so the
        bound requires a dependency term this world does not have.
        """
        w = make_world({("x", "a*"): {"A": 0.434, "B": 0.566}, ("x", "b"): {"A": 0.272, "B": 0.728}},
                       priors={"p": FiniteDistribution(("a*", "b"), (0.777, 0.223))})
        b = composition_bound(w, IDENTITY, ["x", "x"], "p")
        assert b.dependency_terms == pytest.approx((0.0,), abs=1e-12)
        assert b.eps1 == pytest.approx(oracles.exp_iil(w, w.priors["p"], ("x",)), abs=1e-12)
        assert b.lhs == pytest.approx(oracles.exp_iil(w, w.priors["p"], ("x", "x")), abs=1e-12)
        assert b.lhs > b.rhs
        assert b.residuals[1] < 0
