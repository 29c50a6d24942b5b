import math

import numpy as np
import pytest

from dld.model import (
    ParameterPoint,
    TrialDesign,
    TwoStageObservation,
    reduce,
    sample_observation,
    sample_observations,
    select_arm,
    standard_normal_block,
    stream_key,
)


def test_design_validation():
    for bad in [dict(n1=0, n2=1), dict(n1=1, n2=0), dict(n1=1.5, n2=1), dict(n1=1, n2=1, sigma=0),
                dict(n1=1, n2=1, sigma=-1), dict(n1=1, n2=1, sigma=math.inf)]:
        with pytest.raises(ValueError):
            TrialDesign(**bad)


def test_design_derived_quantities():
    d = TrialDesign(40, 26, 2.0)
    assert d.w == pytest.approx(40 / 66)
    assert d.kappa == pytest.approx(0.15268, abs=5e-6)
    assert d.sigma1 == pytest.approx(2 * math.sqrt(26 / (40 * 66)))


def test_parameter_point():
    p = ParameterPoint(3.0, -1.0)
    assert (p.theta1, p.theta2, p.theta) == (-1.0, 3.0, 4.0)
    assert ParameterPoint.from_gap(0.5, 2.0) == ParameterPoint(2.0, 2.5)
    with pytest.raises(ValueError):
        ParameterPoint.from_gap(-0.1)


def test_select_arm_examples():
    assert select_arm(3846.05, 3710.775) == 1
    assert select_arm(0.0, 0.0) == 1
    assert select_arm(-1.0, 5.0) == 2
    assert list(select_arm(np.array([1.0, 0.0]), np.array([1.0, 2.0]))) == [1, 2]
    with pytest.raises(ValueError):
        select_arm(math.nan, 0.0)


def test_reduce_table2_means():
    obs = TwoStageObservation.from_means(3846.05, 3710.775, 3925.846)
    st = reduce(TrialDesign(40, 26, 1.0), obs)
    assert st.d1 == pytest.approx(-135.275, abs=1e-9)
    assert st.d2 == pytest.approx(79.796, abs=1e-9)
    assert st.t1 == pytest.approx(3877.484, abs=1e-3)


def test_reduce_degenerate_equality():
    st = reduce(TrialDesign(3, 4, 1.0), TwoStageObservation.from_means(2.5, 2.5, 2.5))
    assert (st.d1, st.d2, st.t1, st.t2) == (0.0, 0.0, 2.5, 2.5)


def test_reduce_hand_example():
    st = reduce(TrialDesign(5, 5, 1.0), TwoStageObservation(1.0, 0.0, 1, 2.0))
    assert st.t1 == 1.5
    assert (st.d1, st.d2) == (-1.0, 1.0)
    assert st.q == pytest.approx(15 / math.sqrt(10), rel=1e-15)
    assert st.w + 5 / 10 == 1


def test_reduce_rejects_inconsistent_selection():
    with pytest.raises(ValueError):
        reduce(TrialDesign(5, 5), TwoStageObservation(1.0, 0.0, 2, 2.0))


def test_observation_helpers():
    obs = TwoStageObservation.from_means(1.0, 2.0, 3.0)
    assert obs.selected == 2
    assert obs.swapped() == TwoStageObservation(2.0, 1.0, 1, 3.0)
    moved = obs.shifted(10.0)
    assert (moved.xbar1, moved.xbar2, moved.ybar, moved.selected) == (11.0, 12.0, 13.0, 2)


def test_stream_replay_and_partitioning():
    key = stream_key(42, 3)
    d, truth = TrialDesign(5, 5), ParameterPoint(0.0, 0.5)
    assert sample_observation(d, truth, key, 17) == sample_observation(d, truth, key, 17)
    whole = standard_normal_block(key, 0, 100)
    parts = np.vstack([standard_normal_block(key, s, 25) for s in (0, 25, 50, 75)])
    assert np.array_equal(whole, parts)
    assert not np.array_equal(standard_normal_block(stream_key(42, 4), 0, 100), whole)


def test_vanishing_noise_limit():
    d = TrialDesign(5, 7, 1e-12)
    truth = ParameterPoint(0.3, 1.1)
    obs = sample_observation(d, truth, stream_key(1), 0)
    assert obs.selected == 2
    assert abs(obs.xbar1 - 0.3) < 1e-9 and abs(obs.xbar2 - 1.1) < 1e-9 and abs(obs.ybar - 1.1) < 1e-9
    tie = sample_observations(d, ParameterPoint(0.0, 0.0), stream_key(1), 0, 1000)
    # With equal means the winner is decided by noise even as sigma -> 0.
    assert set(np.unique(tie.selected)) <= {1, 2}


def test_equal_means_select_each_arm_half_the_time():
    obs = sample_observations(TrialDesign(5, 5), ParameterPoint(1.0, 1.0), stream_key(9), 0, 10**6)
    assert abs(np.mean(obs.selected == 1) - 0.5) < 0.002


def test_sampling_moments():
    d, truth = TrialDesign(4, 9, 2.0), ParameterPoint(0.0, 0.0)
    z = standard_normal_block(stream_key(5), 0, 200_000)
    assert abs(z.mean()) < 0.01 and abs(z.var() - 1) < 0.01
    obs = sample_observations(d, truth, stream_key(5), 0, 200_000)
    resid = np.asarray(obs.ybar)
    assert abs(resid.var() - 4 / 9) < 0.01
