import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sbps.core import (
    Event,
    MiniBatch,
    ParticleState,
    RngStreams,
    RunSummary,
    Trajectory,
    ZeroGradient,
    advance,
    make_rng,
    reflect,
    reflect_preconditioned,
    refresh_velocity,
)
from sbps.targets import LogisticRegressionTarget

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)


def test_reflect_orthogonal_unchanged():
    np.testing.assert_allclose(reflect(np.array([0.0, 1.0]), np.array([1.0, 0.0])), [0.0, 1.0])


def test_reflect_head_on():
    np.testing.assert_allclose(reflect(np.array([1.0, 0.0]), np.array([1.0, 0.0])), [-1.0, 0.0])


def test_reflect_oblique_value():
    v = np.array([0.6, 0.8])
    g = np.array([1.0, 1.0])
    vr = reflect(v, g)
    # v - 2 (7/5) / 2 (1, 1)
    np.testing.assert_allclose(vr, [-0.8, -0.6], atol=1e-12)
    assert vr @ g == pytest.approx(-1.4, abs=1e-12)
    np.testing.assert_allclose(reflect(vr, g), v, atol=1e-12)


def test_reflect_zero_gradient():
    with pytest.raises(ZeroGradient):
        reflect(np.array([1.0, 0.0]), np.zeros(2))


@settings(max_examples=200, deadline=None)
@given(vec3, vec3)
def test_reflect_properties(v, g):
    if np.linalg.norm(v) < 1e-3 or np.linalg.norm(g) < 1e-3:
        return
    v = v / np.linalg.norm(v)
    vr = reflect(v, g)
    assert np.linalg.norm(vr) == pytest.approx(1.0, abs=1e-9)
    assert vr @ g == pytest.approx(-(v @ g), abs=1e-9 * max(1.0, np.linalg.norm(g)))
    np.testing.assert_allclose(reflect(vr, g), v, atol=1e-9)


def test_reflect_preconditioned_identity_and_axis():
    v = np.array([0.6, 0.8])
    g = np.array([2.0, -1.0])
    np.testing.assert_allclose(reflect_preconditioned(v, g, np.ones(2)), reflect(v, g))
    np.testing.assert_allclose(reflect_preconditioned(np.array([1.0, 0.0]), np.array([1.0, 0.0]),
                                                      np.array([2.0, 1.0])), [-1.0, 0.0])


def test_reflect_preconditioned_sign_flip():
    v = np.array([1.0, 0.0])
    g = np.array([1.0, 1.0])
    A = np.array([2.0, 1.0])
    vr = reflect_preconditioned(v, g, A)
    assert vr @ (A * g) == pytest.approx(-(v @ (A * g)), abs=1e-12)
    with pytest.raises(ValueError):
        reflect_preconditioned(v, g, np.array([1.0, 0.0]))


def test_refresh_velocity_d1():
    rng = make_rng(0)
    draws = np.array([refresh_velocity(1, rng)[0] for _ in range(4000)])
    assert set(np.unique(draws)) == {-1.0, 1.0}
    assert abs(draws.mean()) < 0.05


def test_refresh_velocity_moments():
    rng = make_rng(1)
    V = np.array([refresh_velocity(3, rng) for _ in range(100_000)])
    np.testing.assert_allclose(np.linalg.norm(V, axis=1), 1.0, atol=1e-12)
    assert np.all(np.abs(V.mean(axis=0)) < 0.02)
    # isotropy: E[v_i^2] = 1/3
    np.testing.assert_allclose((V**2).mean(axis=0), 1 / 3, atol=0.01)


def test_refresh_velocity_replay():
    np.testing.assert_array_equal(refresh_velocity(5, make_rng(9, 2)), refresh_velocity(5, make_rng(9, 2)))
    with pytest.raises(ValueError):
        refresh_velocity(0, make_rng(0))


def test_streams_independent_and_replayable():
    a, b = RngStreams(4), RngStreams(4)
    assert a.flight.random() == b.flight.random()
    assert make_rng(4, 0).random() != make_rng(4, 1).random()
    with pytest.raises(ValueError):
        make_rng(-1)


def test_advance():
    s = ParticleState(np.zeros(2), np.array([1.0, 0.0]))
    s2 = advance(s, 2.0)
    np.testing.assert_allclose(s2.w, [2.0, 0.0])
    assert s2.t_global == 2.0
    np.testing.assert_array_equal(advance(s, 0.0).w, s.w)
    np.testing.assert_allclose(advance(advance(s, 0.35), 0.35).w, advance(s, 0.7).w, atol=1e-15)
    with pytest.raises(ValueError):
        advance(s, -1.0)


def test_trajectory_storage_and_continuity():
    traj = Trajectory(2, capacity=1)
    w = np.zeros(2)
    rng = make_rng(3)
    for i in range(50):
        v = refresh_velocity(2, rng)
        d = rng.random()
        traj.append(w, v, d, Event.BOUNCE if i % 2 else Event.REJECT, 10)
        w = w + v * d
    assert len(traj) == 50
    ends = traj.w_start[:-1] + traj.v[:-1] * traj.duration[:-1, None]
    np.testing.assert_allclose(ends, traj.w_start[1:], atol=1e-9)
    np.testing.assert_allclose(traj.end_point(), w)
    assert traj.total_time == pytest.approx(traj.duration.sum())
    np.testing.assert_allclose(traj.t_start[1:], np.cumsum(traj.duration)[:-1])
    assert traj.count(Event.BOUNCE) == 25
    assert traj[3].event is Event.BOUNCE
    with pytest.raises(ValueError):
        traj.append(w, v, -1.0, Event.END)
    with pytest.raises(IndexError):
        traj[50]
    copy = Trajectory.from_arrays(traj.w_start, traj.v, traj.duration, traj.event_codes, traj.minibatch_evals)
    np.testing.assert_array_equal(copy.w_start, traj.w_start)


def test_run_summary_bookkeeping():
    s = RunSummary(proposals=200, violations=5, data_evals=3000, n_data=1000)
    assert s.violation_rate == 0.025
    assert s.epochs == 3.0
    assert RunSummary().violation_rate == 0.0
    assert s.as_dict()["violation_rate"] == 0.025


def test_target_directional_consistency(rng):
    target = LogisticRegressionTarget(rng.standard_normal((40, 5)), rng.integers(0, 2, 40), prior_var=2.0)
    w = rng.standard_normal(5)
    v = refresh_velocity(5, rng)
    for n in (2, 7, 40):
        g, c2, batch = target.minibatch_directional(w, v, n, rng)
        assert v @ target.minibatch_gradient(batch, w) == pytest.approx(g, abs=1e-9)
        assert c2 >= 0
    g, c2, _ = target.minibatch_directional(w, v, 40, rng)
    assert c2 == 0.0
    assert g == pytest.approx(v @ target.full_gradient(w), abs=1e-9)
    A = np.array([0.5, 1.0, 2.0, 1.0, 0.5])
    g, _, batch = target.minibatch_directional(w, v, 9, rng, precond=A)
    assert (A * v) @ target.minibatch_gradient(batch, w) == pytest.approx(g, abs=1e-9)


def test_minibatch_without_replacement(rng):
    target = LogisticRegressionTarget(rng.standard_normal((12, 2)), rng.integers(0, 2, 12))
    for _ in range(50):
        idx = target.draw_batch(6, rng).indices
        assert len(set(idx.tolist())) == 6
    with pytest.raises(ValueError):
        target.draw_batch(13, rng)
    assert isinstance(target.draw_batch(12, rng), MiniBatch)
