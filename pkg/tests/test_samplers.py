import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sbps.analysis import discretize
from sbps.core import BoundViolation, Event, MissingBound, Target, ThinningBound
from sbps.samplers import (
    ConfigError,
    PreconditionerState,
    SbpsConfig,
    run_bps,
    run_lipsbps,
    run_msgnht,
    run_sbps,
    run_sgld,
    update_preconditioner,
)
from sbps.targets import GaussianTarget, HyperboloidTarget, LogisticRegressionTarget, generate_logistic_data


class LinearTarget(Target):
    """``U(w) = g . w``: constant gradient, exact bound."""

    def __init__(self, g):
        self.g = np.asarray(g, dtype=float)
        self.dim = len(self.g)
        self.n_data = 1

    def log_density(self, w):
        return -float(self.g @ w)

    def prior_gradient(self, w):
        return self.g.copy()

    def point_gradients(self, w, idx):
        return np.zeros((len(idx), self.dim))

    def thinning_bound(self, w, v):
        return ThinningBound(float(v @ self.g), 0.0, 0.0)


class LooseBoundTarget(GaussianTarget):
    """A deliberately invalid bound, to exercise the violation check."""

    def thinning_bound(self, w, v):
        return ThinningBound(0.0, 0.0, 1e-3)


@pytest.fixture(scope="module")
def small_logistic():
    return generate_logistic_data(5, 200, np.random.default_rng(1))


# -- BPS ---------------------------------------------------------------------------


def test_bps_standard_gaussian_ks():
    target = GaussianTarget([0.0], [1.0])
    traj, summary = run_bps(target, 0.1, seed=0, max_events=100_000)
    assert summary.violations == 0
    x = discretize(traj, 100_000)[:, 0]
    assert stats.kstest(x, "norm").statistic < 0.01


def test_bps_downhill_never_bounces():
    target = LinearTarget([1.0, 0.0])
    traj, summary = run_bps(target, 0.0, seed=0, max_time=50.0, v0=np.array([-1.0, 0.0]))
    assert summary.bounces == 0
    assert len(traj) == 1 and traj[0].event is Event.END
    assert traj.total_time == pytest.approx(50.0)


def test_bps_escape_without_time_budget():
    with pytest.raises(MissingBound):
        run_bps(LinearTarget([1.0]), 0.0, seed=0, max_events=5, v0=np.array([-1.0]))


def test_bps_replay_identical():
    target = GaussianTarget([0.0, 1.0], [1.0, 0.5], noise_sd=1.0)
    a, _ = run_bps(target, 0.5, seed=3, max_events=500)
    b, _ = run_bps(target, 0.5, seed=3, max_events=500)
    np.testing.assert_array_equal(a.w_start, b.w_start)
    np.testing.assert_array_equal(a.duration, b.duration)


def test_bps_requires_bound_and_budget():
    target = HyperboloidTarget.generate(10, np.random.default_rng(0))
    with pytest.raises(MissingBound):
        run_bps(target, 0.1, seed=0, max_events=10)
    with pytest.raises(ValueError):
        run_bps(GaussianTarget([0.0], [1.0]), 0.1)
    with pytest.raises(ValueError):
        run_bps(GaussianTarget([0.0], [1.0]), -1.0, max_events=1)


def test_bps_invalid_bound_is_fatal():
    with pytest.raises(BoundViolation):
        run_bps(LooseBoundTarget([0.0], [1.0]), 0.0, seed=0, max_events=100, w0=np.array([3.0]),
                v0=np.array([1.0]))


def test_bps_trajectory_continuity():
    target = GaussianTarget([0.0, 0.0], [0.04, 0.01], noise_sd=5.0, noise_radius=25.0)
    traj, summary = run_bps(target, 1.0, seed=1, max_time=20.0)
    ends = traj.w_start[:-1] + traj.v[:-1] * traj.duration[:-1, None]
    np.testing.assert_allclose(ends, traj.w_start[1:], atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(traj.v, axis=1), 1.0, atol=1e-9)
    assert traj.total_time == pytest.approx(20.0)
    assert summary.bounces == traj.count(Event.BOUNCE)


# -- lipSBPS ---------------------------------------------------------------------------


def test_lipsbps_no_violations(small_logistic):
    traj, summary = run_lipsbps(small_logistic, 1, epochs=20, seed=0)
    assert summary.violations == 0
    assert summary.epochs == pytest.approx(20.0)
    assert summary.bounces > 0


def test_lipsbps_zero_covariates_never_bounce():
    target = LogisticRegressionTarget(np.zeros((5, 2)), np.ones(5), prior_var=math.inf)
    assert target.lipschitz_bound() == 0.0
    traj, summary = run_bps(target, 0.0, seed=0, max_time=10.0, batch_size=1)
    assert summary.bounces == 0 and summary.proposals == 0
    # with no events and only a data budget the particle flies off
    with pytest.raises(MissingBound):
        run_lipsbps(target, 1, epochs=1, seed=0)


def test_lipsbps_needs_logistic():
    with pytest.raises(MissingBound):
        run_lipsbps(GaussianTarget([0.0], [1.0]), 1, epochs=1)


# -- SBPS ----------------------------------------------------------------------------


def test_sbps_config_validation(small_logistic):
    for bad in ({"n": 1}, {"n": 201}, {"k": -1.0}, {"dt": 0.0}, {"aux_p_max": 0}, {"epochs": 0.0},
                {"beta": 1.5}, {"sigma2_0": 0.0}, {"max_flight": 0.0}, {"refresh_rate": -1.0}):
        with pytest.raises(ConfigError):
            run_sbps(small_logistic, SbpsConfig(**bad))
    assert SbpsConfig().as_dict()["k"] == 3.0


def test_sbps_epoch_accounting(small_logistic):
    run = run_sbps(small_logistic, SbpsConfig(n=30, epochs=7.0, seed=2))
    s = run.summary
    assert s.epochs == s.data_evals / small_logistic.n_data
    assert run.trajectory.minibatch_evals.sum() == s.data_evals
    # the budget is honoured to within one mini-batch
    assert 7.0 * 200 <= s.data_evals < 7.0 * 200 + 30
    assert s.proposals == run.trajectory.count(Event.BOUNCE) + run.trajectory.count(Event.REJECT)
    assert run.trajectory[-1].event is Event.END


@pytest.mark.parametrize("precondition", [False, True])
def test_sbps_replay_identical(small_logistic, precondition):
    cfg = SbpsConfig(n=20, epochs=5.0, seed=4, precondition=precondition)
    a = run_sbps(small_logistic, cfg).trajectory
    b = run_sbps(small_logistic, cfg).trajectory
    np.testing.assert_array_equal(a.w_start, b.w_start)
    np.testing.assert_array_equal(a.v, b.v)
    np.testing.assert_array_equal(a.event_codes, b.event_codes)


@pytest.mark.parametrize("precondition", [False, True])
def test_sbps_trajectory_continuity(small_logistic, precondition):
    run = run_sbps(small_logistic, SbpsConfig(n=20, epochs=5.0, seed=1, precondition=precondition))
    traj = run.trajectory
    ends = traj.w_start[:-1] + traj.v[:-1] * traj.duration[:-1, None]
    np.testing.assert_allclose(ends, traj.w_start[1:], atol=1e-9)


def test_sbps_noiseless_gaussian_matches_target():
    # with exact gradients the regression envelope is exact after two observations
    target = GaussianTarget([0.5, -1.0], [1.0, 0.25])
    run = run_sbps(target, SbpsConfig(n=1, k=10.0, epochs=60_000, refresh_rate=1.0, seed=0))
    assert run.summary.violation_rate < 0.01
    x = discretize(run.trajectory, 50_000)
    for j in range(2):
        assert stats.kstest(x[:, j], lambda t, j=j: target.marginal_cdf(t, j)).statistic < 0.03


def test_sbps_records_hyperparameters(small_logistic):
    run = run_sbps(small_logistic, SbpsConfig(n=20, epochs=5.0, seed=0), record_hyper=True)
    assert len(run.hyper_trace) == run.summary.bounces
    assert all(s2 > 0 for _, s2 in run.hyper_trace)
    frozen = run_sbps(small_logistic, SbpsConfig(n=20, epochs=5.0, seed=0, hyper_lr=0.0), record_hyper=True)
    assert frozen.hyper_trace == []


def test_sbps_refresh_events(small_logistic):
    run = run_sbps(small_logistic, SbpsConfig(n=20, epochs=5.0, seed=0, refresh_rate=5.0))
    assert run.summary.refreshes == run.trajectory.count(Event.REFRESH) > 0


# -- preconditioner ------------------------------------------------------------------------


def test_preconditioner_equal_gradients_identity():
    st_ = update_preconditioner(PreconditionerState.init(3, 0.9, 0.0), np.array([2.0, -2.0, 2.0]))
    np.testing.assert_allclose(st_.diag, 1.0)


def test_preconditioner_single_update_value():
    # no memory: a = g^2, A = inv / mean(inv) with inv = 1 / |g|
    st_ = update_preconditioner(PreconditionerState.init(2, 0.0, 0.0), np.array([1.0, 2.0]))
    np.testing.assert_allclose(st_.a, [1.0, 4.0])
    assert st_.a_tilde == pytest.approx(0.75)
    np.testing.assert_allclose(st_.diag, [4 / 3, 2 / 3])


def test_preconditioner_before_update_is_identity():
    np.testing.assert_array_equal(PreconditionerState.init(4).diag, np.ones(4))


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(1, 6))
def test_preconditioner_scale_invariance(c, steps):
    rng = np.random.default_rng(steps)
    grads = rng.standard_normal((steps, 4)) + 0.1
    a = PreconditionerState.init(4, 0.99, 0.0)
    b = PreconditionerState.init(4, 0.99, 0.0)
    for g in grads:
        a = update_preconditioner(a, g)
        b = update_preconditioner(b, c * g)
    np.testing.assert_allclose(a.diag, b.diag, rtol=1e-9)
    assert a.diag.mean() == pytest.approx(1.0)


# -- baselines ---------------------------------------------------------------------------


def test_sgld_gaussian_variance():
    target = GaussianTarget([0.0], [1.0])
    res = run_sgld(target, 0.05, n=1, steps=200_000, seed=0)
    assert not res.diverged
    assert res.samples[1000:, 0].var() == pytest.approx(1.0, rel=0.1)
    assert res.epochs[-1] == pytest.approx(200_000)


def test_sgld_small_step_stays_near_mode():
    target = GaussianTarget([2.0], [1.0])
    res = run_sgld(target, 1e-8, n=1, steps=2000, seed=0, w0=[2.0])
    assert np.abs(res.samples - 2.0).max() < 1e-2


def test_sgld_replay_and_divergence():
    target = GaussianTarget([0.0], [1.0])
    a = run_sgld(target, 0.1, n=1, steps=100, seed=5)
    b = run_sgld(target, 0.1, n=1, steps=100, seed=5)
    np.testing.assert_array_equal(a.samples, b.samples)
    blown = run_sgld(target, 10.0, n=1, steps=5000, seed=0)
    assert blown.diverged
    with pytest.raises(ValueError):
        run_sgld(target, 0.0, n=1, steps=1)
    with pytest.raises(ValueError):
        run_sgld(target, 0.1)


def test_msgnht_gaussian_variance_and_temperature():
    target = GaussianTarget([0.0], [1.0])
    res = run_msgnht(target, 0.05, n=1, steps=200_000, seed=0)
    x = res.samples[2000:, 0]
    assert x.var() == pytest.approx(1.0, rel=0.1)
    # finite differences of w recover p, whose second moment is the kinetic temperature
    p = np.diff(res.samples[2000:, 0]) / 0.05
    assert (p * p).mean() == pytest.approx(1.0, abs=0.1)


def test_msgnht_free_dynamics():
    target = LinearTarget([0.0, 0.0])
    res = run_msgnht(target, 0.1, n=1, steps=50, seed=0, diffusion=0.0, p0=[1.0, -1.0])
    np.testing.assert_allclose(res.samples[-1], [5.0, -5.0], atol=1e-12)
    np.testing.assert_allclose(np.diff(res.samples, axis=0), [[0.1, -0.1]] * 50, atol=1e-12)


def test_msgnht_replay(small_logistic):
    a = run_msgnht(small_logistic, 1e-3, n=20, epochs=2, seed=1)
    b = run_msgnht(small_logistic, 1e-3, n=20, epochs=2, seed=1)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.epochs[-1] == pytest.approx(2.0)
