"""Bouncy Particle Sampler with exact event simulation or a valid thinning bound."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..core import (
    BoundViolation,
    Event,
    MissingBound,
    RngStreams,
    RunSummary,
    Target,
    Trajectory,
    ZeroGradient,
    reflect,
    refresh_velocity,
)
from ..thinning import affine_first_arrival

# slack for floating-point noise when checking a bound that must hold exactly
BOUND_RTOL = 1e-9
BOUND_ATOL = 1e-9


def run_bps(target: Target, refresh_rate: float = 0.1, *, seed: int = 0,
            max_events: Optional[int] = None, max_time: Optional[float] = None,
            max_epochs: Optional[float] = None, batch_size: Optional[int] = None,
            w0=None, v0=None):
    """Simulate BPS until one of the budgets is spent.

    Bounce times come from thinning the intensity bound returned by
    ``target.thinning_bound``; when the target's gradient is exact and the
    bound is tight (Gaussian targets) every proposal is accepted and the
    simulation is exact.  Gradients are queried through the target's
    mini-batch interface with ``batch_size`` points (all data by default),
    so injected or subsampling noise enters both the acceptance test and
    the reflection.

    Returns ``(trajectory, summary)``.  Rejected proposals do not split
    segments.
    """
    if refresh_rate < 0:
        raise ValueError("refresh_rate must be nonnegative")
    if max_events is None and max_time is None and max_epochs is None:
        raise ValueError("need a budget: max_events, max_time or max_epochs")
    n = target.n_data if batch_size is None else int(batch_size)
    # fail early when the target cannot be simulated
    streams = RngStreams(seed)
    w = np.zeros(target.dim) if w0 is None else np.array(w0, dtype=float)
    v = refresh_velocity(target.dim, streams.init) if v0 is None else np.array(v0, dtype=float)
    target.thinning_bound(w, v)

    max_events = math.inf if max_events is None else max_events
    max_time = math.inf if max_time is None else max_time
    max_evals = math.inf if max_epochs is None else max_epochs * target.n_data

    traj = Trajectory(target.dim)
    summary = RunSummary(n_data=target.n_data)
    rng, rng_batch, rng_ref = streams.flight, streams.batch, streams.refresh
    t = 0.0
    seg_w = w.copy()
    seg_dur = 0.0
    seg_evals = 0
    events = 0

    while True:
        bound = target.thinning_bound(w, v)
        tau = affine_first_arrival(bound.a, bound.b, bound.c, rng.standard_exponential())
        t_ref = rng_ref.standard_exponential() / refresh_rate if refresh_rate > 0 else math.inf
        step = min(tau, t_ref)
        if t + step >= max_time or math.isinf(step):
            if math.isinf(step) and math.isinf(max_time):
                raise MissingBound("no further events and no time budget: the particle escapes")
            rest = max_time - t
            traj.append(seg_w, v, seg_dur + rest, Event.END, seg_evals)
            w = w + v * rest
            t = max_time
            break
        w = w + v * step
        t += step
        seg_dur += step
        if t_ref < tau:
            traj.append(seg_w, v, seg_dur, Event.REFRESH, seg_evals)
            v = refresh_velocity(target.dim, rng_ref)
            summary.refreshes += 1
            seg_w, seg_dur, seg_evals = w.copy(), 0.0, 0
            events += 1
        else:
            g, _, batch = target.minibatch_directional(w, v, n, rng_batch)
            seg_evals += n
            summary.data_evals += n
            summary.proposals += 1
            lam = bound(tau)
            if g > lam * (1 + BOUND_RTOL) + BOUND_ATOL:
                summary.violations += 1
                raise BoundViolation(f"observed rate {g:.6g} exceeds bound {lam:.6g}")
            if g > 0 and rng.random() * lam < g:
                grad = target.minibatch_gradient(batch, w)
                traj.append(seg_w, v, seg_dur, Event.BOUNCE, seg_evals)
                try:
                    v = reflect(v, grad)
                except ZeroGradient:
                    v = refresh_velocity(target.dim, rng_ref)
                    summary.zero_gradient_refreshes += 1
                summary.bounces += 1
                seg_w, seg_dur, seg_evals = w.copy(), 0.0, 0
                events += 1
        if events >= max_events or summary.data_evals >= max_evals:
            traj.append(seg_w, v, seg_dur, Event.END, seg_evals)
            break
    return traj, summary


def run_lipsbps(target, n: int = 1, *, epochs: float = 100.0, seed: int = 0, w0=None, v0=None,
                refresh_rate: float = 0.0):
    """Unbiased subsampled BPS using the logistic-regression Lipschitz bound.

    The bound ``sqrt(d) N max|x_ij|`` (plus the affine prior term) holds
    for every mini-batch, so thinning is exact; an observed violation is a
    bug and raises :class:`BoundViolation`.
    """
    if not hasattr(target, "lipschitz_bound"):
        raise MissingBound("lipSBPS needs a target with a Lipschitz bound")
    return run_bps(target, refresh_rate, seed=seed, max_epochs=epochs, batch_size=n, w0=w0, v0=v0)
