import pytest
from hypothesis import given
from hypothesis import strategies as st

from climbnav.sim.load import LoadModel, required_spines


def test_single_robot_needs_28_spines():
    load = LoadModel()
    assert load.system_mass == pytest.approx(12.6)
    assert load.system_weight == pytest.approx(46.62, abs=1e-9)
    assert abs(load.system_weight - 47.0) <= 1.0
    assert required_spines(load, 1) == 28


def test_three_robots_need_10_spines_each():
    assert required_spines(LoadModel(), 3) == 10


def test_zero_gravity_needs_none():
    assert required_spines(LoadModel(g=0.0), 1) == 0


def test_bad_inputs():
    with pytest.raises(ValueError):
        required_spines(LoadModel(), 0)
    with pytest.raises(ValueError):
        LoadModel(spine_capacity=0)


@given(st.floats(0.0, 30.0), st.integers(1, 7), st.floats(0.5, 3.0))
def test_spines_monotone_in_sharing_and_gravity(g, sharing, capacity):
    load = LoadModel(g=g, spine_capacity=capacity)
    assert required_spines(load, sharing + 1) <= required_spines(load, sharing)
    heavier = LoadModel(g=g + 0.5, spine_capacity=capacity)
    assert required_spines(heavier, sharing) >= required_spines(load, sharing)
    # enough spines really do hold the share
    n = required_spines(load, sharing)
    assert n * capacity >= load.system_weight / sharing - 1e-6
