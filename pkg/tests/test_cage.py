import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safecage import cage
from safecage.cage import RiskLevel


def th_reference(th):
    # independent transcription of the headway braking map
    if th > 1.6:
        return 0.0
    if 1.0 < th <= 1.6:
        return -0.5 * th + 1.0
    if 0.5 < th <= 1.0:
        return -1.0 * th + 1.5
    return 1.0


def ttc_reference(ttc):
    if ttc > 2.5:
        return 0.0
    if 1.5 < ttc <= 2.5:
        return -0.5 * ttc + 1.25
    if 1.0 < ttc <= 1.5:
        return -1.0 * ttc + 2.0
    return 1.0


@pytest.mark.parametrize("x_rel,v,expected", [(40, 20, 2.0), (30, 0.05, 10.0), (0, 20, 0.0), (5, 0.1, 10.0)])
def test_time_headway_examples(x_rel, v, expected):
    assert cage.time_headway(x_rel, v) == expected


@pytest.mark.parametrize("x_rel,v_rel,expected", [(30, 10, 3.0), (30, -5, math.inf), (0, 10, 0.0), (30, 0, math.inf)])
def test_time_to_collision_examples(x_rel, v_rel, expected):
    assert cage.time_to_collision(x_rel, v_rel) == expected


def test_negative_gap_is_domain_error():
    with pytest.raises(cage.CageDomainError):
        cage.time_headway(-0.1, 20.0)
    with pytest.raises(cage.CageDomainError):
        cage.arbitrate(-1.0, 20.0, 1.0, 0.0)


@pytest.mark.parametrize("th,b", [(1.2, 0.4), (0.75, 0.75), (2.0, 0.0), (1.6, 0.2), (0.5, 1.0), (1.0, 0.5), (0.0, 1.0)])
def test_th_braking_examples(th, b):
    assert cage.cage_th_braking(th) == pytest.approx(b, abs=1e-15)


@pytest.mark.parametrize("ttc,b", [(2.0, 0.25), (1.2, 0.8), (math.inf, 0.0), (2.5, 0.0), (1.5, 0.5), (1.0, 1.0)])
def test_ttc_braking_examples(ttc, b):
    assert cage.cage_ttc_braking(ttc) == pytest.approx(b, abs=1e-15)


def test_vectorized_maps_agree_with_scalar():
    x = np.concatenate([np.random.default_rng(1).uniform(0, 4, 5000), [0.5, 1.0, 1.5, 1.6, 2.5, np.inf]])
    np.testing.assert_array_equal(cage.cage_th_braking_array(x), [cage.cage_th_braking(v) for v in x])
    np.testing.assert_array_equal(cage.cage_ttc_braking_array(x), [cage.cage_ttc_braking(v) for v in x])


@settings(max_examples=300)
@given(st.floats(0, 20, allow_nan=False))
def test_maps_match_reference(x):
    assert abs(cage.cage_th_braking(x) - th_reference(x)) <= 1e-12
    assert abs(cage.cage_ttc_braking(x) - ttc_reference(x)) <= 1e-12


@settings(max_examples=300)
@given(st.floats(0, 10, allow_nan=False), st.floats(0, 10, allow_nan=False))
def test_maps_monotone_non_increasing(a, b):
    lo, hi = min(a, b), max(a, b)
    assert cage.cage_th_braking(lo) >= cage.cage_th_braking(hi)
    assert cage.cage_ttc_braking(lo) >= cage.cage_ttc_braking(hi)


def test_risk_levels_follow_branches():
    assert cage.th_risk(2.0) is RiskLevel.LOW
    assert cage.th_risk(1.6) is RiskLevel.R1
    assert cage.th_risk(0.8) is RiskLevel.R2
    assert cage.th_risk(0.5) is RiskLevel.R3
    assert cage.ttc_risk(math.inf) is RiskLevel.LOW
    assert cage.ttc_risk(2.0) is RiskLevel.R1
    assert cage.ttc_risk(1.2) is RiskLevel.R2
    assert cage.ttc_risk(0.3) is RiskLevel.R3


def test_arbitrate_examples():
    # th = 3, opening gap: pass-through
    v = cage.arbitrate(60.0, 20.0, -1.0, 0.5)
    assert (v.b_final, v.executed_pedal, v.breached) == (0.0, 0.5, False)
    # th = 0.75, agent coasting: cage brakes
    v = cage.arbitrate(15.0, 20.0, 0.0, 0.0)
    assert v.b_final == pytest.approx(0.75) and v.executed_pedal == pytest.approx(-0.75) and v.breached
    # agent already brakes harder than the cage asks
    v = cage.arbitrate(15.0, 20.0, 0.0, -0.9)
    assert v.b_final == pytest.approx(0.9) and v.executed_pedal == -0.9 and not v.breached


pedal = st.floats(-1, 1, allow_nan=False)
gap = st.floats(0, 200, allow_nan=False)
speed = st.floats(0, 45, allow_nan=False)
closing = st.floats(-20, 20, allow_nan=False)


@settings(max_examples=500)
@given(gap, speed, closing, pedal)
def test_verdict_invariants(x_rel, v, v_rel, p):
    verdict = cage.arbitrate(x_rel, v, v_rel, p)
    assert verdict.b_final == max(verdict.b_th, verdict.b_ttc, verdict.b_agent)
    assert verdict.breached == (max(verdict.b_th, verdict.b_ttc) > verdict.b_agent)
    if verdict.breached:
        assert verdict.executed_pedal == -max(verdict.b_th, verdict.b_ttc)
    else:
        assert verdict.executed_pedal == p
    for b in (verdict.b_th, verdict.b_ttc, verdict.b_agent, verdict.b_final):
        assert 0.0 <= b <= 1.0
    if verdict.th > 1.6 and verdict.ttc > 2.5:
        assert not verdict.breached
    # arbitration is idempotent
    again = cage.arbitrate(x_rel, v, v_rel, verdict.executed_pedal)
    assert again.executed_pedal == verdict.executed_pedal
    assert not again.breached


def test_sweep_table_rows():
    rows = cage.sweep_table([1.2, 2.0], "th")
    assert rows == [(1.2, pytest.approx(0.4), "r1"), (2.0, 0.0, "low")]
