"""Theorem checks over a configured world, as report rows."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any

from .censorship import (
    IDENTITY,
    Mechanism,
    calibrate,
    check_safety_set,
    composition_bound,
    worst_case_exp_iil,
)
from .config import WorldConfig
from .errors import InfoCensorError, SafetySetAssumptionViolated
from .utility import utility_bound, utility_ratio, user_utility

TOL = 1e-9
EXACT_TOL = 1e-12


@dataclass
class CheckRow:
    name: str
    lhs: float | None
    rhs: float | None
    passed: bool
    witness: Any = None
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "pass": self.passed,
            "witness": self.witness,
            "detail": self.detail,
        }


def safety_set_row(cfg: WorldConfig) -> CheckRow:
    try:
        check_safety_set(cfg.world)
    except SafetySetAssumptionViolated as exc:
        return CheckRow("safety-set-assumption", None, None, False, detail={"error": str(exc)})
    return CheckRow("safety-set-assumption", None, None, True, detail={"safe_set": list(cfg.world.safe_set)})


def theorem2_rows(cfg: WorldConfig, mech: Mechanism, eps: float, parallel=None) -> list[CheckRow]:
    """Calibrated randomized response is an eps-ICM, and so is ``mech`` (if claimed)."""
    rows = []
    value, witness = worst_case_exp_iil(cfg.world, mech, 1, parallel)
    rows.append(CheckRow("theorem2:mechanism-is-eps-icm", value, eps, value <= eps + TOL,
                         witness.to_dict(), {"mechanism": mech.to_dict()}))
    try:
        cal = calibrate(cfg.world, eps, parallel)
    except SafetySetAssumptionViolated as exc:
        rows.append(CheckRow("theorem2:calibrated-rr", None, eps, False, detail={"error": str(exc)}))
        return rows
    rr = cal.mechanism(cfg.world.safe_set)
    v_rr, w_rr = worst_case_exp_iil(cfg.world, rr, 1, parallel)
    rows.append(CheckRow("theorem2:calibrated-rr", v_rr, eps, v_rr <= eps + TOL, w_rr.to_dict(),
                         {"t_eps": cal.t, "sup_identity": cal.sup, "sup_witness": cal.witness.to_dict()}))
    return rows


def theorem1_row(cfg: WorldConfig, mech: Mechanism, k: int, parallel=None) -> CheckRow:
    """Composition bound on every (prior, k-tuple); reports the tightest cell."""
    world = cfg.world
    eps1, _ = worst_case_exp_iil(world, mech, 1, parallel)
    worst = None
    failures = 0
    max_dep = 0.0
    for name in world.priors:
        for qs in itertools.product(world.queries, repeat=k):
            b = composition_bound(world, mech, qs, name, eps1)
            margin = b.rhs - b.lhs
            if margin < -TOL:
                failures += 1
            max_dep = max(max_dep, max((abs(d) for d in b.dependency_terms), default=0.0))
            if worst is None or margin < worst[0]:
                worst = (margin, name, qs, b)
    margin, name, qs, b = worst
    return CheckRow(
        f"theorem1:composition(k={k})",
        b.lhs,
        b.rhs,
        failures == 0,
        {"prior": name, "queries": list(qs)},
        {**b.to_dict(), "failing_cells": failures, "max_abs_dependency_term": max_dep},
    )


def theorem3_rows(cfg: WorldConfig, mech: Mechanism) -> list[CheckRow]:
    if cfg.utility is None:
        return []
    t = mech.t if mech.kind == "randomized-response" else None
    if t is None:
        return [CheckRow("theorem3:utility-ratio", None, None, True,
                         detail={"skipped": "mechanism is not randomized response"})]
    rows = []
    for x in cfg.world.queries:
        try:
            r = utility_ratio(cfg.world, cfg.utility, x, t, mech.safe_set)
        except InfoCensorError as exc:
            rows.append(CheckRow(f"theorem3:utility-ratio[{x}]", None, t, False, detail={"error": str(exc)}))
            continue
        rows.append(CheckRow(f"theorem3:utility-ratio[{x}]", r, t, abs(r - t) <= EXACT_TOL, {"query": x}))
    return rows


def theorem4_row(cfg: WorldConfig, mech: Mechanism, eps: float) -> list[CheckRow]:
    if cfg.user is None:
        return []
    rows = []
    xs = [cfg.user.target_query] if cfg.user.target_query in cfg.world.queries else list(cfg.world.queries)
    for x in xs:
        name = f"theorem4:inferential-user[{x}]"
        try:
            bound = utility_bound(cfg.world, cfg.user, x, mech, eps)
        except InfoCensorError as exc:
            rows.append(CheckRow(name, None, None, False, detail={"error": str(exc)}))
            continue
        lhs = user_utility(cfg.world, cfg.user, x, mech)
        detail = bound.to_dict()
        detail["coupling"] = "declared" if cfg.user.coupling is not None else "independent"
        rows.append(CheckRow(name, lhs, bound.value, lhs <= bound.value + TOL, {"prior": bound.argmin}, detail))
    return rows


def run_verification(cfg: WorldConfig, mech: Mechanism | None, eps: float, k: int, parallel=None) -> list[CheckRow]:
    mech = mech or cfg.mechanism or IDENTITY
    rows = [safety_set_row(cfg)]
    rows += theorem2_rows(cfg, mech, eps, parallel)
    if k >= 2:
        rows.append(theorem1_row(cfg, mech, k, parallel))
    rows += theorem3_rows(cfg, mech)
    # theorem 4 needs an eps-ICM; check against the mechanism's own sup otherwise
    eps4 = eps
    if rows[1].lhs is not None and rows[1].lhs > eps + TOL:
        eps4 = rows[1].lhs
    rows += theorem4_row(cfg, mech, eps4)
    return rows


def summarize(rows) -> bool:
    return all(r.passed for r in rows)


