"""Adaptive thinning proposals built from a Bayesian linear fit of noisy
directional derivatives.

Between two bounces the noisy directional derivative observed at time
``t`` since the last bounce is modelled as ``g = beta0 + beta1 t + eps``
with ``eps ~ N(0, c2)``.  The upper predictive band of that fit, clipped at
zero and interpolated linearly on a grid, is the proposal intensity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .core import DegenerateBatch, SingularSystem

C2_FLOOR = 1e-12
INTERCEPT_PRIOR_VAR = 1e6
DEFAULT_DT = 0.01


def minibatch_variance(per_point_values, n_data: int, n: int) -> float:
    """Variance of the ``N/n``-scaled mini-batch sum, with finite population correction.

    ``(N^2 / n) (1 - n/N) * s^2`` where ``s^2`` is the unbiased sample
    variance of the ``n`` per-point values.
    """
    if n < 2:
        raise DegenerateBatch("need at least two points to estimate a variance")
    if n > n_data:
        raise ValueError("batch larger than the data set")
    vals = np.asarray(per_point_values, dtype=float)
    if len(vals) != n:
        raise ValueError("expected n per-point values")
    if n == n_data:
        return 0.0
    return float(n_data**2 / n * (1.0 - n / n_data) * vals.var(ddof=1))


class GradObservation(NamedTuple):
    t: float
    g_tilde: float
    c2: float


@dataclass(frozen=True)
class RegressionState:
    """Gaussian posterior over ``(beta0, beta1)`` given the current episode's observations.

    ``mu``/``sigma2`` are the prior mean and variance of the slope; the
    intercept gets a zero-mean prior of variance ``intercept_var``.
    ``decay_length`` switches on the local variant, in which observation
    precisions are multiplied by ``exp(-(t_m - t_i) / decay_length)``.
    """

    beta_hat: np.ndarray
    Sigma: np.ndarray
    mu: float = 0.0
    sigma2: float = 1.0
    observations: tuple = ()
    intercept_var: float = INTERCEPT_PRIOR_VAR
    decay_length: Optional[float] = None

    @classmethod
    def prior(cls, mu: float = 0.0, sigma2: float = 1.0, **kw) -> "RegressionState":
        return _fit((), mu, sigma2, kw.get("intercept_var", INTERCEPT_PRIOR_VAR),
                    kw.get("decay_length"))

    @property
    def last(self) -> Optional[GradObservation]:
        return self.observations[-1] if self.observations else None

    @property
    def t_last(self) -> float:
        return self.observations[-1].t if self.observations else 0.0

    @property
    def c2_last(self) -> float:
        return self.observations[-1].c2 if self.observations else 0.0


def _weights(obs: Sequence[GradObservation], decay_length):
    t = np.array([o.t for o in obs], dtype=float)
    g = np.array([o.g_tilde for o in obs], dtype=float)
    c2 = np.maximum(np.array([o.c2 for o in obs], dtype=float), C2_FLOOR)
    w = 1.0 / c2
    if decay_length is not None and len(t):
        w = w * np.exp(-(t[-1] - t) / decay_length)
    return t, g, w


def _fit(obs, mu, sigma2, intercept_var, decay_length) -> RegressionState:
    obs = tuple(obs)
    if sigma2 <= 0:
        raise ValueError("slope prior variance must be positive")
    a0 = 0.0 if math.isinf(intercept_var) else 1.0 / intercept_var
    b0 = 0.0 if math.isinf(sigma2) else 1.0 / sigma2
    p00, p11, p01 = a0, b0, 0.0
    h0, h1 = 0.0, mu * b0
    det = a0 * b0
    if obs:
        t, g, w = _weights(obs, decay_length)
        S = w.sum()
        tbar = float(w @ t) / S
        Q = float(w @ (t - tbar) ** 2)
        p00 = a0 + S
        p01 = S * tbar
        p11 = b0 + S * tbar * tbar + Q
        h0 += float(w @ g)
        h1 += float(w @ (t * g))
        # p00 p11 - p01^2 expanded into nonnegative terms (no cancellation)
        det = a0 * b0 + a0 * S * tbar * tbar + a0 * Q + S * b0 + S * Q
    if not det > 0 or not math.isfinite(det):
        raise SingularSystem("regression posterior precision is singular")
    Sigma = np.array([[p11, -p01], [-p01, p00]]) / det
    beta = Sigma @ np.array([h0, h1])
    return RegressionState(beta, Sigma, mu, sigma2, obs, intercept_var, decay_length)


def regression_update(state: RegressionState, obs: GradObservation) -> RegressionState:
    """Posterior after appending ``obs`` to the episode."""
    if obs.c2 < 0 or math.isnan(obs.c2):
        raise ValueError("observation variance must be nonnegative")
    return _fit(state.observations + (GradObservation(*obs),), state.mu, state.sigma2,
                state.intercept_var, state.decay_length)


def refit(state: RegressionState, mu: float = None, sigma2: float = None) -> RegressionState:
    return _fit(state.observations, state.mu if mu is None else mu,
                state.sigma2 if sigma2 is None else sigma2,
                state.intercept_var, state.decay_length)


def reset_after_bounce(g_tilde: float, c2: float, mu: float = 0.0, sigma2: float = 1.0,
                       **kw) -> RegressionState:
    """Fresh episode seeded with the post-bounce observation ``(0, -g_tilde, c2)``.

    Reflecting on the same mini-batch flips the sign of the directional
    derivative, so that value is known without touching new data.
    """
    return regression_update(RegressionState.prior(mu, sigma2, **kw),
                             GradObservation(0.0, -g_tilde, c2))


def predictive_band(state: RegressionState, t, c2_last: float):
    """Predictive mean and standard deviation of the next observation at ``t``."""
    t = np.asarray(t, dtype=float)
    b0, b1 = state.beta_hat
    S = state.Sigma
    mean = b1 * t + b0
    var = S[0, 0] + 2.0 * S[0, 1] * t + S[1, 1] * t * t + c2_last
    rho = np.sqrt(np.maximum(var, 0.0))
    if mean.ndim == 0:
        return float(mean), float(rho)
    return mean, rho


def clamp_slope(state: RegressionState) -> RegressionState:
    """Replace a negative fitted slope by zero, keeping the fit at the last observation."""
    b0, b1 = state.beta_hat
    if b1 >= 0:
        return state
    return replace(state, beta_hat=np.array([b0 + b1 * state.t_last, 0.0]))


def auxiliary_times(t_bar: float, p_max: int = 1):
    """Look-ahead times ``10 p t_bar`` for ``p = 1..p_max``."""
    if t_bar <= 0:
        raise ValueError("t_bar must be positive")
    return [10.0 * p * t_bar for p in range(1, p_max + 1)]


# ---------------------------------------------------------------------------
# Hyperparameter learning
# ---------------------------------------------------------------------------


def log_marginal_likelihood(state: RegressionState, mu: float = None, sigma2: float = None) -> float:
    """``log p(g_1..g_m | mu, sigma2)`` with ``beta`` integrated out (dense form)."""
    mu = state.mu if mu is None else mu
    sigma2 = state.sigma2 if sigma2 is None else sigma2
    t, g, w = _weights(state.observations, state.decay_length)
    X = np.column_stack([np.ones_like(t), t])
    K = X @ np.diag([state.intercept_var, sigma2]) @ X.T + np.diag(1.0 / w)
    r = g - X @ np.array([0.0, mu])
    L = np.linalg.cholesky(K)
    alpha = np.linalg.solve(L, r)
    return float(-0.5 * alpha @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(t) * math.log(2 * math.pi))


def marginal_likelihood_grad(state: RegressionState):
    """Gradient of the log marginal likelihood w.r.t. ``(mu, sigma2)``.

    Uses the posterior moments: for a Gaussian prior the score of a prior
    parameter is the posterior expectation of the prior's score.
    """
    d = state.beta_hat[1] - state.mu
    s2 = state.sigma2
    d_mu = d / s2
    d_sigma2 = 0.5 * ((d * d + state.Sigma[1, 1]) / s2**2 - 1.0 / s2)
    return float(d_mu), float(d_sigma2)


def hyperparameter_step(state: RegressionState, lr: float) -> RegressionState:
    """One ascent step on ``(mu, log sigma2)``.

    The step is scaled by the prior variance (``sigma2`` on ``mu``, and the
    chain rule factor on ``log sigma2``), which makes it invariant to the
    units of the directional derivative.
    """
    if not state.observations:
        raise ValueError("need at least one observation")
    if lr == 0:
        return state
    d_mu, d_s2 = marginal_likelihood_grad(state)
    s2 = state.sigma2
    mu = state.mu + lr * s2 * d_mu
    log_s2 = math.log(s2) + lr * s2 * d_s2
    return refit(state, mu=mu, sigma2=math.exp(log_s2))


# ---------------------------------------------------------------------------
# Piecewise linear proposal intensity
# ---------------------------------------------------------------------------


class PiecewiseLinearRate:
    """Nonnegative rate given by linear interpolation of ``(t_i, value_i)`` with ``t_0 = 0``."""

    def __init__(self, t, values):
        t = np.asarray(t, dtype=float)
        values = np.asarray(values, dtype=float)
        if t.ndim != 1 or t.shape != values.shape or len(t) < 1:
            raise ValueError("knot arrays must be 1-D and of equal length")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("knot times must start at 0 and increase strictly")
        if np.any(values < 0):
            raise ValueError("rate values must be nonnegative")
        self.t = t
        self.values = values
        seg = 0.5 * (values[1:] + values[:-1]) * np.diff(t)
        self.cum = np.concatenate(([0.0], np.cumsum(seg)))

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    @property
    def total(self) -> float:
        return float(self.cum[-1])

    def __call__(self, s):
        return np.interp(s, self.t, self.values)

    def cumulative(self, s):
        s = np.asarray(s, dtype=float)
        j = np.clip(np.searchsorted(self.t, s, side="right") - 1, 0, max(len(self.t) - 2, 0))
        if len(self.t) == 1:
            return np.zeros_like(s)
        ds = np.clip(s - self.t[j], 0.0, None)
        slope = (self.values[j + 1] - self.values[j]) / (self.t[j + 1] - self.t[j])
        return self.cum[j] + self.values[j] * ds + 0.5 * slope * ds * ds


class Exhausted(NamedTuple):
    """The hazard over the whole envelope fell short of the exponential draw."""

    horizon: float
    hazard: float


def _solve_segment(v0: float, slope: float, area: float) -> float:
    # smallest s >= 0 with v0 s + slope s^2 / 2 = area
    if area <= 0:
        return 0.0
    disc = v0 * v0 + 2.0 * slope * area
    return 2.0 * area / (v0 + math.sqrt(max(disc, 0.0)))


def sample_first_arrival(rate: PiecewiseLinearRate, rng: np.random.Generator = None,
                         e: float = None) -> Union[tuple, Exhausted]:
    """First arrival of a Poisson process with the given rate, by inverting the hazard.

    ``e`` is the unit exponential to invert; drawn from ``rng`` if omitted.
    Returns ``(tau, rate(tau))`` or :class:`Exhausted` when the hazard up to
    the horizon is smaller than ``e``.
    """
    if e is None:
        e = rng.standard_exponential()
    if e >= rate.total:
        return Exhausted(rate.horizon, rate.total)
    j = int(np.searchsorted(rate.cum, e, side="right") - 1)
    j = min(j, len(rate.t) - 2)
    v0 = rate.values[j]
    slope = (rate.values[j + 1] - v0) / (rate.t[j + 1] - rate.t[j])
    s = _solve_segment(v0, slope, e - rate.cum[j])
    s = min(s, rate.t[j + 1] - rate.t[j])
    tau = rate.t[j] + s
    return float(tau), float(v0 + slope * s)


def affine_first_arrival(a: float, b: float, c: float, e: float) -> float:
    """First arrival for the rate ``[a + b t]_+ + c`` (``c >= 0``); ``inf`` if none."""
    if c < 0:
        raise ValueError("c must be nonnegative")
    if b > 0:
        t0 = max(-a / b, 0.0)
    elif a > 0:
        t0 = 0.0
    else:
        t0 = math.inf
    # flat part [0, t0) at rate c
    if c * t0 >= e:
        return e / c
    if math.isinf(t0):
        return math.inf
    rem = e - c * t0
    v0 = max(a + b * t0, 0.0) + c
    if b < 0:
        # rate decays to c at t1 = a / -b
        t1 = -a / b
        area = 0.5 * (v0 + c) * t1 if t1 > 0 else 0.0
        if rem <= area:
            return t0 + _solve_segment(v0, b, rem)
        if c == 0:
            return math.inf
        return t0 + t1 + (rem - area) / c
    return t0 + _solve_segment(v0, b, rem)


def build_envelope(state: RegressionState, k: float, dt: float, horizon: float,
                   c2_last: float = None, start: float = None) -> PiecewiseLinearRate:
    """Proposal intensity on ``[0, horizon]`` measured from ``start``.

    Knots every ``dt`` (the last one at ``horizon``) carry
    ``[mean(start + s) + k rho(start + s)]_+``.  ``start`` defaults to the
    time of the last observation.
    """
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    if c2_last is None:
        c2_last = state.c2_last
    if start is None:
        start = state.t_last
    m = int(math.ceil(horizon / dt - 1e-9))
    s = np.arange(m + 1) * dt
    s[-1] = horizon
    if m >= 1 and s[-1] <= s[-2]:
        s = s[:-1]
        s[-1] = horizon
    mean, rho = predictive_band(state, start + s, max(c2_last, 0.0))
    return PiecewiseLinearRate(s, np.maximum(mean + k * rho, 0.0))


def accept_bounce(g_tilde: float, rate_at_tau: float, rng: np.random.Generator = None,
                  u: float = None):
    """Thinning decision: accept with probability ``min(1, [g]_+ / rate)``.

    Returns ``(accepted, violated)``; ``violated`` flags ``[g]_+ > rate``.
    A zero rate with a positive observation is a violation that is always
    accepted.
    """
    if rate_at_tau < 0:
        raise ValueError("rate must be nonnegative")
    gp = max(g_tilde, 0.0)
    if gp == 0.0:
        return False, False
    violated = gp > rate_at_tau
    if violated:
        return True, True
    if u is None:
        u = rng.random()
    return bool(u < gp / rate_at_tau), False
