"""Stochastic BPS: thinning with a regression-based, adaptively updated envelope."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..core import (
    Event,
    RngStreams,
    RunSummary,
    Target,
    Trajectory,
    ZeroGradient,
    reflect,
    reflect_preconditioned,
    refresh_velocity,
)
from ..thinning import (
    DEFAULT_DT,
    Exhausted,
    GradObservation,
    RegressionState,
    accept_bounce,
    build_envelope,
    clamp_slope,
    hyperparameter_step,
    regression_update,
    reset_after_bounce,
    sample_first_arrival,
)


class ConfigError(ValueError):
    pass


@dataclass
class SbpsConfig:
    k: float = 3.0
    n: int = 100
    refresh_rate: float = 0.0
    dt: float = DEFAULT_DT
    # look-ahead observations at 10 p t_bar, p = 1, 2, ...; aux_p_max caps p
    aux: bool = True
    aux_p_max: Optional[int] = None
    epochs: float = 100.0
    seed: int = 0
    precondition: bool = False
    beta: float = 0.99
    eps: float = 1e-4
    clamp: bool = True
    hyper_lr: float = 1e-3
    mu0: float = 0.0
    sigma2_0: float = 1e4
    decay_length: Optional[float] = None
    # flights longer than this are cut by a forced observation
    max_flight: float = 100.0

    def validate(self, n_data: int):
        if self.k < 0:
            raise ConfigError("k must be nonnegative")
        if not 2 <= self.n <= n_data and not (n_data == 1 and self.n == 1):
            raise ConfigError(f"mini-batch size n={self.n} must lie in [2, N={n_data}]")
        if self.refresh_rate < 0:
            raise ConfigError("refresh_rate must be nonnegative")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.aux_p_max is not None and self.aux_p_max < 1:
            raise ConfigError("aux_p_max must be a positive integer or None")
        if self.epochs <= 0:
            raise ConfigError("epochs must be positive")
        if not 0 <= self.beta <= 1 or self.eps < 0:
            raise ConfigError("need 0 <= beta <= 1 and eps >= 0")
        if self.sigma2_0 <= 0 or self.hyper_lr < 0:
            raise ConfigError("sigma2_0 must be positive and hyper_lr nonnegative")
        if self.max_flight <= 0:
            raise ConfigError("max_flight must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class PreconditionerState:
    """Diagonal preconditioner from an exponential second-moment accumulator.

    ``a_i <- beta a_i + (1 - beta) g_i^2`` and
    ``A = diag(1 / (a_tilde (sqrt(a_i) + eps)))`` with
    ``a_tilde = mean_i 1 / (sqrt(a_i) + eps)``.  ``beta`` is the weight of
    the running average, so ``beta`` close to one keeps ``A`` slowly
    varying.  The diagonal of ``A`` averages to one, hence a global
    rescaling of the gradients leaves ``A`` unchanged (for ``eps = 0``) and
    the scale of the directional derivative is preserved.
    """

    a: np.ndarray
    beta: float = 0.99
    eps: float = 1e-4
    a_tilde: float = math.nan
    updates: int = 0

    @classmethod
    def init(cls, dim: int, beta: float = 0.99, eps: float = 1e-4) -> "PreconditionerState":
        return cls(np.zeros(dim), beta, eps)

    @property
    def diag(self) -> np.ndarray:
        if self.updates == 0:
            return np.ones_like(self.a)
        inv = 1.0 / (np.sqrt(self.a) + self.eps)
        return inv / self.a_tilde


def update_preconditioner(state: PreconditionerState, g) -> PreconditionerState:
    g = np.asarray(g, dtype=float)
    a = state.beta * state.a + (1.0 - state.beta) * g * g
    inv = 1.0 / (np.sqrt(a) + state.eps)
    return PreconditionerState(a, state.beta, state.eps, float(inv.mean()), state.updates + 1)


@dataclass
class SbpsRun:
    trajectory: Trajectory
    summary: RunSummary
    config: SbpsConfig
    final_regression: Optional[RegressionState] = None
    hyper_trace: list = field(default_factory=list)


def run_sbps(target: Target, config: SbpsConfig = None, *, w0=None, v0=None,
             record_hyper: bool = False, **overrides) -> SbpsRun:
    """Run SBPS (or pSBPS when ``config.precondition``) until the epoch budget is spent.

    Each proposal draws a fresh mini-batch at the proposed point.  On a
    rejection the observation joins the regression; on an acceptance the
    velocity is reflected on that batch's gradient and the regression
    restarts from the sign-flipped observation.  When no proposal arrives
    within ``10 t_bar`` (``t_bar``: mean past proposal time) an auxiliary
    observation is made there and the envelope rebuilt.
    """
    cfg = SbpsConfig(**{**(config.as_dict() if config else {}), **overrides})
    cfg.validate(target.n_data)
    streams = RngStreams(cfg.seed)
    rng, rng_batch, rng_ref = streams.flight, streams.batch, streams.refresh
    D = target.dim
    budget = cfg.epochs * target.n_data

    w = np.zeros(D) if w0 is None else np.array(w0, dtype=float)
    v = refresh_velocity(D, streams.init) if v0 is None else np.array(v0, dtype=float)
    v = v / np.linalg.norm(v)

    summary = RunSummary(n_data=target.n_data)
    traj = Trajectory(D)
    precond = PreconditionerState.init(D, cfg.beta, cfg.eps) if cfg.precondition else None
    reg_kw = {"decay_length": cfg.decay_length}
    mu, sigma2 = cfg.mu0, cfg.sigma2_0
    hyper_trace = []

    def observe(w, v, precond):
        batch = target.draw_batch(cfg.n, rng_batch)
        grad = None
        A = None
        if precond is not None:
            grad = target.minibatch_gradient(batch, w)
            precond = update_preconditioner(precond, grad)
            A = precond.diag
        g, c2, _ = target.directional_on_batch(w, v, batch, A)
        summary.data_evals += batch.size
        return g, c2, batch, precond, grad

    def new_episode(w, v, precond):
        g, c2, _, precond, _ = observe(w, v, precond)
        reg = regression_update(RegressionState.prior(mu, sigma2, **reg_kw),
                                GradObservation(0.0, g, c2))
        return reg, precond

    reg, precond = new_episode(w, v, precond)
    # the opening observation is charged to the first segment
    seg_w, seg_evals = w.copy(), 0
    t_since = 0.0
    tau_sum, tau_count = 0.0, 0
    aux_used = 0

    while summary.data_evals < budget:
        A = precond.diag if precond is not None else None
        u = v if A is None else A * v
        if cfg.clamp:
            reg = clamp_slope(reg)
        t_bar = tau_sum / tau_count if tau_count else None
        cap, is_aux = cfg.max_flight, False
        aux_left = cfg.aux and (cfg.aux_p_max is None or aux_used < cfg.aux_p_max)
        if t_bar is not None and aux_left and 10.0 * t_bar < cap:
            cap, is_aux = 10.0 * t_bar, True

        e = rng.standard_exponential()
        horizon = min(16 * cfg.dt, cap)
        while True:
            env = build_envelope(reg, cfg.k, cfg.dt, horizon, reg.c2_last, start=t_since)
            res = sample_first_arrival(env, e=e)
            if not isinstance(res, Exhausted) or horizon >= cap:
                break
            horizon = min(2.0 * horizon, cap)
        exhausted = isinstance(res, Exhausted)
        tau = cap if exhausted else res[0]

        t_ref = rng_ref.standard_exponential() / cfg.refresh_rate if cfg.refresh_rate > 0 else math.inf
        if t_ref < tau:
            w = w + u * t_ref
            traj.append(seg_w, u, t_ref, Event.REFRESH, summary.data_evals - seg_evals)
            v = refresh_velocity(D, rng_ref)
            summary.refreshes += 1
            seg_w, seg_evals = w.copy(), summary.data_evals
            reg, precond = new_episode(w, v, precond)
            t_since, aux_used = 0.0, 0
            continue

        w = w + u * tau
        g, c2, batch, precond, grad = observe(w, v, precond)
        t_obs = t_since + tau
        obs = GradObservation(t_obs, g, c2)

        if exhausted:
            # nothing proposed inside the cap: look ahead and rebuild the envelope
            if is_aux:
                summary.aux_observations += 1
                aux_used += 1
            else:
                summary.long_flights += 1
            event = Event.AUX
            reg = regression_update(reg, obs)
            t_since = t_obs
        else:
            summary.proposals += 1
            if not cfg.aux and t_bar is not None and tau > 10.0 * t_bar:
                summary.long_flights += 1
            tau_sum += tau
            tau_count += 1
            aux_used = 0
            accepted, violated = accept_bounce(g, res[1], rng)
            summary.violations += violated
            if accepted:
                event = Event.BOUNCE
                summary.bounces += 1
                if grad is None:
                    grad = target.minibatch_gradient(batch, w)
                try:
                    v = reflect(v, grad) if A is None else reflect_preconditioned(v, grad, A)
                except ZeroGradient:
                    v = refresh_velocity(D, rng_ref)
                    summary.zero_gradient_refreshes += 1
                    reg = None
                if cfg.hyper_lr > 0:
                    stepped = hyperparameter_step(regression_update(
                        reg if reg is not None else RegressionState.prior(mu, sigma2, **reg_kw), obs),
                        cfg.hyper_lr)
                    mu, sigma2 = stepped.mu, stepped.sigma2
                    if record_hyper:
                        hyper_trace.append((mu, sigma2))
                if reg is None:
                    reg, precond = new_episode(w, v, precond)
                else:
                    reg = reset_after_bounce(g, c2, mu, sigma2, **reg_kw)
                t_since = 0.0
            else:
                event = Event.REJECT
                reg = regression_update(reg, obs)
                t_since = t_obs
        traj.append(seg_w, u, tau, event, summary.data_evals - seg_evals)
        seg_w, seg_evals = w.copy(), summary.data_evals

    A = precond.diag if precond is not None else None
    traj.append(seg_w, v if A is None else A * v, 0.0, Event.END, summary.data_evals - seg_evals)
    if summary.long_flights:
        summary.flags.append("long_flights")
    return SbpsRun(traj, summary, cfg, reg, hyper_trace)
