"""Rule-based safety cages for longitudinal vehicle following.

Two monitors watch the gap to the lead vehicle: one on time headway (TH)
and one on time-to-collision (TTC). Each maps its metric to a minimum
normalized braking demand in [0, 1]. The executed action is the hardest
braking request among the two cages and the learning agent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

TH_SENTINEL = 10.0
MIN_SPEED_FOR_TH = 0.1


class RiskLevel(str, Enum):
    LOW = "low"
    R1 = "r1"
    R2 = "r2"
    R3 = "r3"


class CageDomainError(ValueError):
    """Raised for a negative gap, i.e. the vehicles have already collided."""


def time_headway(x_rel: float, v: float) -> float:
    if x_rel < 0:
        raise CageDomainError(f"negative gap x_rel={x_rel!r}")
    if v <= MIN_SPEED_FOR_TH:
        return TH_SENTINEL
    return x_rel / v


def time_to_collision(x_rel: float, v_rel: float) -> float:
    """Gap over closing speed; ``inf`` when the gap is not closing (v_rel <= 0)."""
    if x_rel < 0:
        raise CageDomainError(f"negative gap x_rel={x_rel!r}")
    if v_rel <= 0:
        return math.inf
    return x_rel / v_rel


# Knots and branch coefficients, highest-risk branch last. Each row is
# (upper knot, slope, intercept) for knot_{k+1} < x <= knot_k.
_TH_BRANCHES = ((1.6, -0.5, 1.0), (1.0, -1.0, 1.5), (0.5, 0.0, 1.0))
_TTC_BRANCHES = ((2.5, -0.5, 1.25), (1.5, -1.0, 2.0), (1.0, 0.0, 1.0))
_LEVELS = (RiskLevel.R1, RiskLevel.R2, RiskLevel.R3)


def _branch(x: float, branches) -> int:
    """Index of the active braking branch, or -1 for the low-risk region."""
    if x > branches[0][0]:
        return -1
    if x > branches[1][0]:
        return 0
    if x > branches[2][0]:
        return 1
    return 2


def _braking(x: float, branches) -> float:
    k = _branch(x, branches)
    if k < 0:
        return 0.0
    if k == 2:
        return 1.0
    _, slope, icept = branches[k]
    return slope * x + icept


def cage_th_braking(th: float) -> float:
    return _braking(th, _TH_BRANCHES)


def cage_ttc_braking(ttc: float) -> float:
    return _braking(ttc, _TTC_BRANCHES)


def th_risk(th: float) -> RiskLevel:
    k = _branch(th, _TH_BRANCHES)
    return RiskLevel.LOW if k < 0 else _LEVELS[k]


def ttc_risk(ttc: float) -> RiskLevel:
    k = _branch(ttc, _TTC_BRANCHES)
    return RiskLevel.LOW if k < 0 else _LEVELS[k]


def cage_th_braking_array(th: np.ndarray) -> np.ndarray:
    """Vectorized TH braking map; same branch ownership as the scalar form."""
    th = np.asarray(th, dtype=float)
    return np.select(
        [th > 1.6, th > 1.0, th > 0.5],
        [0.0, -0.5 * th + 1.0, -1.0 * th + 1.5],
        default=1.0,
    )


def cage_ttc_braking_array(ttc: np.ndarray) -> np.ndarray:
    ttc = np.asarray(ttc, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.select(
            [ttc > 2.5, ttc > 1.5, ttc > 1.0],
            [0.0, -0.5 * ttc + 1.25, -1.0 * ttc + 2.0],
            default=1.0,
        )


@dataclass(frozen=True)
class CageVerdict:
    th: float
    ttc: float
    b_th: float
    b_ttc: float
    b_agent: float
    b_final: float
    executed_pedal: float
    breached: bool
    risk_th: RiskLevel
    risk_ttc: RiskLevel


def arbitrate(x_rel: float, v: float, v_rel: float, agent_pedal: float) -> CageVerdict:
    """Combine both cage demands with the agent's pedal.

    The cage intervenes (a breach) only when its demand exceeds the agent's
    own braking; the executed pedal is then the negated cage demand.
    Otherwise the agent's pedal passes through untouched.
    """
    th = time_headway(x_rel, v)
    ttc = time_to_collision(x_rel, v_rel)
    b_th = cage_th_braking(th)
    b_ttc = cage_ttc_braking(ttc)
    b_agent = max(-agent_pedal, 0.0)
    b_cage = max(b_th, b_ttc)
    breached = b_cage > b_agent
    return CageVerdict(
        th=th,
        ttc=ttc,
        b_th=b_th,
        b_ttc=b_ttc,
        b_agent=b_agent,
        b_final=max(b_cage, b_agent),
        executed_pedal=-b_cage if breached else agent_pedal,
        breached=breached,
        risk_th=th_risk(th),
        risk_ttc=ttc_risk(ttc),
    )


def sweep_table(values, metric: str = "th") -> list[tuple[float, float, str]]:
    """(value, braking, risk) rows for a sweep over TH or TTC values."""
    fn, risk = (cage_th_braking, th_risk) if metric == "th" else (cage_ttc_braking, ttc_risk)
    return [(float(x), fn(float(x)), risk(float(x)).value) for x in values]
