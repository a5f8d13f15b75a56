"""Discrete-time stochastic-gradient MCMC baselines."""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

from ..core import RngStreams, Target


class ChainResult(NamedTuple):
    samples: np.ndarray  # (steps + 1, dim), starting point first
    epochs: np.ndarray   # data passes consumed before each sample
    diverged: bool


def _n_steps(target: Target, n: int, steps: Optional[int], epochs: Optional[float]) -> int:
    if steps is None:
        if epochs is None:
            raise ValueError("need steps or epochs")
        steps = int(math.ceil(epochs * target.n_data / n))
    return int(steps)


@np.errstate(over="ignore", invalid="ignore")
def run_sgld(target: Target, step_size: float, n: int = 100, *, steps: int = None,
             epochs: float = None, seed: int = 0, w0=None) -> ChainResult:
    """Stochastic gradient Langevin dynamics with a fixed step size.

    ``w <- w - (eta / 2) grad U~(w) + N(0, eta I)``.  Stops early (and
    reports ``diverged``) when the iterate stops being finite.
    """
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    streams = RngStreams(seed)
    T = _n_steps(target, n, steps, epochs)
    w = np.zeros(target.dim) if w0 is None else np.array(w0, dtype=float)
    out = np.empty((T + 1, target.dim))
    out[0] = w
    sd = math.sqrt(step_size)
    noise = streams.flight
    k = T
    for i in range(T):
        g = target.stochastic_gradient(w, n, streams.batch)
        w = w - 0.5 * step_size * g + sd * noise.standard_normal(target.dim)
        out[i + 1] = w
        if not np.all(np.isfinite(w)):
            k = i + 1
            break
    out = out[: k + 1]
    ep = np.arange(k + 1) * n / target.n_data
    return ChainResult(out, ep, k < T)


@np.errstate(over="ignore", invalid="ignore")
def run_msgnht(target: Target, step_size: float, n: int = 100, *, steps: int = None,
               epochs: float = None, seed: int = 0, w0=None, diffusion: float = 1.0,
               p0=None) -> ChainResult:
    """Multivariate stochastic gradient Nose-Hoover thermostat.

    Per step, with ``h = step_size`` and ``D = diffusion``::

        p  <- p - xi * p h - h grad U~(w) + sqrt(2 D h) N(0, I)
        w  <- w + h p
        xi <- xi + h (p * p - 1)

    The momentum starts from ``p0`` (a standard normal draw by default) and
    the thermostat from ``D``.
    """
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    streams = RngStreams(seed)
    T = _n_steps(target, n, steps, epochs)
    h = step_size
    w = np.zeros(target.dim) if w0 is None else np.array(w0, dtype=float)
    p = streams.init.standard_normal(target.dim) if p0 is None else np.array(p0, dtype=float)
    xi = np.full(target.dim, diffusion)
    out = np.empty((T + 1, target.dim))
    out[0] = w
    sd = math.sqrt(2.0 * diffusion * h)
    noise = streams.flight
    k = T
    for i in range(T):
        g = target.stochastic_gradient(w, n, streams.batch)
        p = p - xi * p * h - h * g + sd * noise.standard_normal(target.dim)
        w = w + h * p
        xi = xi + h * (p * p - 1.0)
        out[i + 1] = w
        if not np.all(np.isfinite(w)):
            k = i + 1
            break
    out = out[: k + 1]
    ep = np.arange(k + 1) * n / target.n_data
    return ChainResult(out, ep, k < T)
