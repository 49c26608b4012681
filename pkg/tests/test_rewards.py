import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as hst

import qstab

distances = hst.floats(min_value=0, max_value=1, allow_nan=False)


def test_pnr_shape():
    spec = qstab.RewardSpec("PNR")
    assert spec.step_penalty
    # Zone edges map onto the zone's reward bounds
    assert qstab.evaluate(spec, 0.0, 0) == pytest.approx(100)
    assert qstab.evaluate(spec, 0.001, 0) == pytest.approx(0)
    assert qstab.evaluate(spec, 1.0, 0) == pytest.approx(-0.1)
    assert qstab.evaluate(spec, 0.0005, 0) == pytest.approx(17.5)
    assert qstab.pnr_core(0.0005, spec.proximity, 2, 10) == pytest.approx(17.5)


@pytest.mark.parametrize("variant, steeper_near_low", [("PNR", True), ("PNR1", False)])
def test_slope_asymmetry(variant, steeper_near_low):
    spec = qstab.default_specs()[variant]

    def slope(distance, h):
        up = qstab.evaluate(spec, distance + h, 7)
        down = qstab.evaluate(spec, distance - h, 7)
        return (up - down) / (2 * h)

    for zone in (spec.proximity, spec.exploration):
        width = zone.d_high - zone.d_low
        h = 1e-4 * width
        near_low = abs(slope(zone.d_low + 0.01 * width, h))
        near_high = abs(slope(zone.d_high - 0.01 * width, h))
        assert (near_low > near_high) == steeper_near_low
        # Edge-to-edge steepness ratio is (f / e) ** 2 or its inverse
        ratio = near_low / near_high if steeper_near_low else near_high / near_low
        assert ratio > 0.5 * (max(spec.e, spec.f) / min(spec.e, spec.f)) ** 2


def test_step_penalty():
    spec = qstab.RewardSpec("PNR")
    assert qstab.evaluate(spec, 1.0, 1000) == pytest.approx(-0.1 - 1e-3)
    no_penalty = spec.replace(step_penalty=False)
    assert qstab.evaluate(no_penalty, 1.0, 1000) == pytest.approx(-0.1)
    for name, spec in qstab.default_specs().items():
        assert spec.step_penalty == (name in ("PNR", "PNR1", "PLR"))


def test_fidelity_reward():
    spec = qstab.RewardSpec("FPR")
    assert qstab.evaluate(spec, 0.0, 10) == 5
    assert qstab.evaluate(spec, 0.5, 10) == pytest.approx(0.06250012, abs=1e-8)
    assert qstab.evaluate(spec, 1.0, 10) == 0


def test_sparse_reward():
    spec = qstab.RewardSpec("PSR")
    assert qstab.evaluate(spec, 0.0009, 3) == 1
    assert qstab.evaluate(spec, 0.001, 3) == 0
    assert qstab.evaluate(spec, 0.5, 3) == 0


def test_linear_variants():
    plr = qstab.RewardSpec("PLR", step_penalty=False)
    assert qstab.evaluate(plr, 0.0005, 0) == pytest.approx(50.5)
    assert qstab.evaluate(plr, 1.0, 0) == pytest.approx(-0.1)
    nplnr = qstab.RewardSpec("NPLNR")
    assert qstab.evaluate(nplnr, 0.25, 5) == pytest.approx(-0.25)
    nplpr = qstab.RewardSpec("NPLPR")
    assert qstab.evaluate(nplpr, 0.25, 5) == pytest.approx(75)


@settings(deadline=None)
@given(hst.sampled_from(qstab.VARIANTS), distances, distances)
def test_rewards_decrease_with_distance(variant, a, b):
    spec = qstab.RewardSpec(variant)
    near, far = min(a, b), max(a, b)
    assert qstab.evaluate(spec, near, 7) >= qstab.evaluate(spec, far, 7) - 1e-9
    assert qstab.evaluate(spec, far, 7) >= qstab.reward_floor(spec) - 7 * spec.step_penalty_unit


@settings(deadline=None)
@given(distances)
def test_pnr_zones_separated(distance):
    """Every proximity zone reward beats every exploration zone reward."""
    spec = qstab.RewardSpec("PNR", step_penalty=False)
    reward = qstab.evaluate(spec, distance, 0)
    if distance < spec.d:
        assert reward >= 1 - 1e-9
    else:
        assert reward <= 1e-9


def test_invalid_specs():
    with pytest.raises(qstab.InvalidConfiguration):
        qstab.RewardSpec("XYZ")
    with pytest.raises(qstab.InvalidConfiguration):
        qstab.RewardSpec("NPNR", e=3, f=3)
    with pytest.raises(qstab.InvalidConfiguration):
        qstab.RewardSpec("PNR", d=0)
    with pytest.raises(qstab.InvalidConfiguration):
        qstab.RewardSpec("PLR", proximity=(0.0, 0.001, 5.0, 1.0))
    with pytest.raises(qstab.InvalidConfiguration):
        qstab.RewardSpec.from_dict(dict(variant="PNR", slope=3))
    with pytest.raises(ValueError):
        qstab.evaluate(qstab.RewardSpec(), 1.5, 0)


def test_replace_moves_partition():
    spec = qstab.RewardSpec("PNR").replace(d=0.01)
    assert spec.proximity.d_high == spec.exploration.d_low == 0.01
    assert qstab.RewardSpec.from_dict(spec.to_dict()) == spec


def test_describe_reward():
    rows = {name: qstab.describe_reward(spec) for name, spec in qstab.default_specs().items()}
    assert len(rows) == 8
    assert rows["PNR"]["e/f"] == "2/10"
    assert rows["PNR1"]["e/f"] == "10/2"
    assert rows["PNR"]["proximity zone reward"] == "[1, 100]"
    assert rows["PNR"]["exploration zone reward"] == "[-0.1, 0]"
    assert rows["PSR"]["proximity zone reward"] == "1"
    assert rows["NPLPR"]["non-partitioned reward"] == "[0, 100]"
    assert rows["FPR"]["non-partitioned reward"] == "[0, 5]"
    assert rows["FPR"]["step penalty"] == 0


def test_reward_curve():
    curve = qstab.reward_curve(qstab.RewardSpec("NPNR"), n_points=11)
    assert list(curve.columns) == ["distance", "reward"]
    assert len(curve) == 11
    assert curve["reward"].iloc[0] == pytest.approx(0)
    assert curve["reward"].iloc[-1] == pytest.approx(-1)
    assert np.all(np.diff(curve["reward"]) <= 1e-12)
