"""Estimators and diagnostics for piecewise linear trajectories and discrete chains."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import stats

from .core import DegenerateSeries, Event, QuadratureFailure, RunSummary, Trajectory

# ---------------------------------------------------------------------------
# Test functions with closed-form segment integrals
# ---------------------------------------------------------------------------


class Affine:
    """``f(w) = a . w + c``."""

    def __init__(self, a, c: float = 0.0):
        self.a = np.asarray(a, dtype=float)
        self.c = float(c)

    def __call__(self, w):
        return np.asarray(w) @ self.a + self.c

    def segment_integrals(self, w0, v, dur):
        return dur * (w0 @ self.a + self.c) + 0.5 * dur**2 * (v @ self.a)


class Quadratic:
    """``f(w) = w^T Q w + a . w + c``."""

    def __init__(self, Q, a=None, c: float = 0.0):
        self.Q = np.asarray(Q, dtype=float)
        self.a = np.zeros(len(self.Q)) if a is None else np.asarray(a, dtype=float)
        self.c = float(c)

    def __call__(self, w):
        w = np.asarray(w)
        return np.einsum("...i,ij,...j->...", w, self.Q, w) + w @ self.a + self.c

    def segment_integrals(self, w0, v, dur):
        q0 = np.einsum("ni,ij,nj->n", w0, self.Q, w0) + w0 @ self.a + self.c
        q1 = np.einsum("ni,ij,nj->n", w0, self.Q + self.Q.T, v) + v @ self.a
        q2 = np.einsum("ni,ij,nj->n", v, self.Q, v)
        return q0 * dur + q1 * dur**2 / 2 + q2 * dur**3 / 3


class Sine:
    """``f(w) = sin((u . w - center) / r)``; ``r`` sets the length scale."""

    def __init__(self, u, center: float, r: float):
        self.u = np.asarray(u, dtype=float)
        self.center = float(center)
        if r <= 0:
            raise ValueError("r must be positive")
        self.r = float(r)

    def __call__(self, w):
        return np.sin((np.asarray(w) @ self.u - self.center) / self.r)

    def segment_integrals(self, w0, v, dur):
        phi = (w0 @ self.u - self.center) / self.r
        s = (v @ self.u) / self.r
        out = np.empty(len(dur))
        small = np.abs(s * dur) < 1e-8
        # sin(phi + s t) integrates to (cos phi - cos(phi + s T)) / s
        ss = s[~small]
        out[~small] = (np.cos(phi[~small]) - np.cos(phi[~small] + ss * dur[~small])) / ss
        d = dur[small]
        out[small] = d * np.sin(phi[small]) + 0.5 * s[small] * d * d * np.cos(phi[small])
        return out


def _adaptive_simpson(g: Callable[[float], float], a: float, b: float, tol: float,
                      max_depth: int = 50) -> float:
    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = g(lm), g(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        if depth >= max_depth:
            raise QuadratureFailure(f"tolerance {tol:g} not reached on [{a:g}, {b:g}]")
        return (rec(a, m, fa, flm, fm, left, tol / 2, depth + 1)
                + rec(m, b, fm, frm, fb, right, tol / 2, depth + 1))

    fa, fb, fm = g(a), g(b), g(0.5 * (a + b))
    return rec(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 0)


class ContinuousEstimate(NamedTuple):
    value: float
    total_time: float
    n_segments: int

    @property
    def mean_segment_length(self) -> float:
        return self.total_time / self.n_segments


def _nonempty(traj: Trajectory):
    keep = traj.duration > 0
    return traj.w_start[keep], traj.v[keep], traj.duration[keep]


def continuous_expectation(traj: Trajectory, f, tol: float = 1e-8) -> ContinuousEstimate:
    """Time average of ``f`` along the path: ``(1/T) sum_i int_0^{tau_i} f(w_i + v_i t) dt``.

    ``f`` may provide ``segment_integrals(w0, v, dur)`` (see :class:`Affine`,
    :class:`Quadratic`, :class:`Sine`); otherwise each segment is integrated
    by adaptive Simpson quadrature to absolute tolerance ``tol``.
    """
    T = traj.total_time
    if not T > 0:
        raise ValueError("trajectory has zero total time")
    w0, v, dur = _nonempty(traj)
    if hasattr(f, "segment_integrals"):
        total = float(np.sum(f.segment_integrals(w0, v, dur)))
    else:
        total = 0.0
        for wi, vi, di in zip(w0, v, dur):
            total += _adaptive_simpson(lambda t: float(f(wi + vi * t)), 0.0, float(di), tol)
    return ContinuousEstimate(total / T, T, len(traj))


def positions_at(traj: Trajectory, times) -> np.ndarray:
    """Positions on the path at the given times (clipped to ``[0, T]``)."""
    times = np.asarray(times, dtype=float)
    t0 = traj.t_start
    i = np.searchsorted(t0, times, side="right") - 1
    i = np.clip(i, 0, len(traj) - 1)
    return traj.w_start[i] + traj.v[i] * (times - t0[i])[:, None]


def discretize(traj: Trajectory, M: int) -> np.ndarray:
    """``M`` positions at the uniform times ``j T / M``, ``j = 0..M-1``."""
    if M < 1:
        raise ValueError("M must be at least 1")
    T = traj.total_time
    if not T > 0:
        raise ValueError("trajectory has zero total time")
    return positions_at(traj, np.arange(M) * (T / M))


def burn_in(traj: Trajectory, fraction: float = 0.1) -> Trajectory:
    """Drop the segments that end within the first ``fraction`` of the data budget."""
    evals = np.cumsum(traj.minibatch_evals)
    total = evals[-1] if len(evals) else 0
    if total == 0:
        k = int(len(traj) * fraction)
    else:
        k = int(np.searchsorted(evals, fraction * total, side="right"))
    return Trajectory.from_arrays(traj.w_start[k:], traj.v[k:], traj.duration[k:],
                                  traj.event_codes[k:], traj.minibatch_evals[k:])


# ---------------------------------------------------------------------------
# Autocorrelation
# ---------------------------------------------------------------------------


def acf(series, max_lag: int) -> np.ndarray:
    """Normalised autocovariance with the biased ``1/L`` estimator; ``acf[0] = 1``."""
    x = np.asarray(series, dtype=float)
    L = len(x)
    if L <= max_lag:
        raise ValueError(f"series of length {L} too short for max_lag={max_lag}")
    x = x - x.mean()
    var = float(x @ x) / L
    if not var > 1e-300:
        raise DegenerateSeries("series has zero variance")
    nfft = 1 << int(math.ceil(math.log2(2 * L)))
    fx = np.fft.rfft(x, nfft)
    cov = np.fft.irfft(fx * np.conj(fx), nfft)[: max_lag + 1] / L
    return cov / cov[0]


def integrated_time(series, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's automatic window."""
    x = np.asarray(series, dtype=float)
    rho = acf(x, len(x) - 1)
    taus = 2.0 * np.cumsum(rho) - 1.0
    m = np.arange(len(taus))
    ok = m >= c * taus
    window = int(np.argmax(ok)) if ok.any() else len(taus) - 1
    return float(max(taus[window], 1.0 / len(x)))


def ess(series, c: float = 5.0) -> float:
    """Effective sample size ``L / tau_int``."""
    return len(series) / integrated_time(series, c)


# ---------------------------------------------------------------------------
# NLL traces and the Laplace band
# ---------------------------------------------------------------------------


def nll_per_point(target, positions, chunk: int = 2000) -> np.ndarray:
    """``NLL(w) / N`` for each row of ``positions`` (likelihood only)."""
    P = np.atleast_2d(np.asarray(positions, dtype=float))
    out = np.concatenate([target.nll_batch(P[i:i + chunk]) for i in range(0, len(P), chunk)]) \
        if len(P) else np.empty(0)
    return out / target.n_data


def positions_at_epochs(traj: Trajectory, n_data: int, epochs) -> np.ndarray:
    """Particle position at the moment the data budget reaches each epoch count.

    Data are consumed by the observation at the end of a segment, so the
    position for epoch ``e`` is the end of the first segment whose
    cumulative cost reaches ``e N``.
    """
    cum = np.cumsum(traj.minibatch_evals)
    idx = np.searchsorted(cum, np.asarray(epochs, dtype=float) * n_data, side="left")
    idx = np.clip(idx, 0, len(traj) - 1)
    return traj.w_start[idx] + traj.v[idx] * traj.duration[idx][:, None]


def nll_trace(source, target, epochs=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-data-point NLL along a run; returns ``(epochs, nll / N)``.

    ``source`` is either a :class:`Trajectory` (positions taken at the
    requested epoch counts, default 1, 2, ... up to the budget) or a
    ``(positions, epochs)`` pair from a discrete chain.
    """
    if isinstance(source, Trajectory):
        total = source.minibatch_evals.sum() / target.n_data
        if epochs is None:
            epochs = np.arange(1, int(math.floor(total)) + 1, dtype=float)
        epochs = np.asarray(epochs, dtype=float)
        P = positions_at_epochs(source, target.n_data, epochs)
        return epochs, nll_per_point(target, P)
    positions, ep = source
    ep = np.asarray(ep, dtype=float)
    if epochs is not None:
        i = np.clip(np.searchsorted(ep, epochs), 0, len(ep) - 1)
        positions, ep = np.asarray(positions)[i], np.asarray(epochs, dtype=float)
    return ep, nll_per_point(target, positions)


def laplace_band(target, w_hat=None) -> tuple[float, float]:
    """Centre and spread of ``NLL / N`` under the Laplace approximation.

    ``NLL(w)/N ~ NLL(w_hat)/N + chi2(d) / 2N``, so the centre is
    ``NLL(w_hat)/N + d/(2N)`` and the spread ``sqrt(d/2)/N``.
    """
    if w_hat is None:
        from .targets import laplace_reference

        w_hat, _ = laplace_reference(target)
    N, d = target.n_data, target.dim
    return target.nll(w_hat) / N + d / (2.0 * N), math.sqrt(d / 2.0) / N


class BandEntry(NamedTuple):
    first_epoch: Optional[float]  # None when the trace never enters
    fraction_inside_after: float


def band_entry(epochs, values, center: float, spread: float, width: float = 3.0) -> BandEntry:
    """First epoch at which ``|value - center| <= width * spread``, and the share of later points inside."""
    z = np.abs((np.asarray(values) - center) / spread) <= width
    if not z.any():
        return BandEntry(None, 0.0)
    i = int(np.argmax(z))
    return BandEntry(float(np.asarray(epochs)[i]), float(z[i:].mean()))


# ---------------------------------------------------------------------------
# Distribution checks
# ---------------------------------------------------------------------------


def ks_distance(samples, cdf: Callable) -> float:
    """Sup distance between the empirical CDF of ``samples`` and ``cdf``."""
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < 100:
        raise ValueError("need at least 100 samples")
    return float(stats.kstest(x, cdf).statistic)


def qq_data(samples, ppf: Callable, n_quantiles: int = 99) -> tuple[np.ndarray, np.ndarray]:
    """``(theoretical, empirical)`` quantiles at probabilities ``1/(q+1) .. q/(q+1)``."""
    p = np.arange(1, n_quantiles + 1) / (n_quantiles + 1)
    return ppf(p), np.quantile(np.asarray(samples, dtype=float), p)


def violation_rate(summary: RunSummary) -> float:
    return summary.violation_rate


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class DiagnosticsReport:
    violation_rate: float
    epochs: float
    bounces: int
    proposals: int
    refreshes: int
    violations: int = 0
    total_time: float = 0.0
    mean_segment_length: float = math.nan
    nll_epochs: list = field(default_factory=list)
    nll_trace: list = field(default_factory=list)
    laplace_center: Optional[float] = None
    laplace_spread: Optional[float] = None
    acf: dict = field(default_factory=dict)
    ess: dict = field(default_factory=dict)
    ks: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def summary_from_trajectory(traj: Trajectory, n_data: int) -> RunSummary:
    """Rebuild event counts from a stored trajectory (violations are not recoverable)."""
    s = RunSummary(n_data=n_data)
    s.bounces = traj.count(Event.BOUNCE)
    s.refreshes = traj.count(Event.REFRESH)
    s.aux_observations = traj.count(Event.AUX)
    s.proposals = s.bounces + traj.count(Event.REJECT)
    s.data_evals = int(traj.minibatch_evals.sum())
    return s


def diagnose(traj: Trajectory, target=None, summary: RunSummary = None, *, max_lag: int = 200,
             n_points: int = 10_000, burn: float = 0.1, w_hat=None) -> DiagnosticsReport:
    """Collect the standard diagnostics for one continuous-time run."""
    n_data = target.n_data if target is not None else (summary.n_data if summary else 1)
    if summary is None:
        summary = summary_from_trajectory(traj, n_data)
    rep = DiagnosticsReport(
        violation_rate=summary.violation_rate, epochs=summary.epochs, bounces=summary.bounces,
        proposals=summary.proposals, refreshes=summary.refreshes, violations=summary.violations,
        total_time=traj.total_time,
    )
    post = burn_in(traj, burn) if burn > 0 else traj
    if post.total_time > 0:
        rep.mean_segment_length = post.total_time / max(len(post), 1)
        P = discretize(post, n_points)
        for j in range(P.shape[1]):
            lag = min(max_lag, len(P) - 1)
            try:
                rep.acf[f"w_{j}"] = acf(P[:, j], lag).tolist()
                rep.ess[f"w_{j}"] = ess(P[:, j])
            except DegenerateSeries:
                rep.acf[f"w_{j}"] = []
                rep.ess[f"w_{j}"] = 0.0
        if target is not None and hasattr(target, "marginal_cdf"):
            for j in range(P.shape[1]):
                rep.ks[f"w_{j}"] = ks_distance(P[:, j], lambda x, j=j: target.marginal_cdf(x, j))
    if target is not None and hasattr(target, "nll_batch") and summary.data_evals > 0:
        ep, vals = nll_trace(traj, target)
        rep.nll_epochs, rep.nll_trace = ep.tolist(), vals.tolist()
        if hasattr(target, "hessian"):
            rep.laplace_center, rep.laplace_spread = laplace_band(target, w_hat)
    return rep
