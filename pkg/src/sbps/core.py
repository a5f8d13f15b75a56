"""PDMP state, velocity geometry and the target-model contract."""

from __future__ import annotations

import enum
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

import numpy as np

# ||g|| below this is treated as a degenerate bounce
ZERO_GRADIENT_TOL = 1e-12


class SamplerError(Exception):
    """Base class for errors raised by this package."""


class ZeroGradient(SamplerError):
    pass


class MissingBound(SamplerError):
    pass


class BoundViolation(SamplerError):
    pass


class DegenerateBatch(SamplerError):
    pass


class SingularSystem(SamplerError):
    pass


class NoConvergence(SamplerError):
    pass


class QuadratureFailure(SamplerError):
    pass


class DegenerateSeries(SamplerError):
    pass


class Event(enum.Enum):
    """What terminated a linear flight."""

    BOUNCE = "bounce"
    REFRESH = "refresh"
    REJECT = "reject"
    AUX = "aux"
    END = "end"


EVENT_CODES = {e: i for i, e in enumerate(Event)}
EVENTS_BY_CODE = list(Event)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

# fixed stream ids per chain component
STREAM_FLIGHT = 0
STREAM_BATCH = 1
STREAM_REFRESH = 2
STREAM_INIT = 3
STREAM_DATA = 4


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent, replayable generator for ``(seed, stream)``.

    Streams are derived through ``SeedSequence`` so distinct stream ids
    give statistically independent generators.
    """
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


class RngStreams:
    """The per-component generators used by one chain."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.flight = make_rng(seed, STREAM_FLIGHT)
        self.batch = make_rng(seed, STREAM_BATCH)
        self.refresh = make_rng(seed, STREAM_REFRESH)
        self.init = make_rng(seed, STREAM_INIT)


# ---------------------------------------------------------------------------
# State and trajectory
# ---------------------------------------------------------------------------


@dataclass
class ParticleState:
    w: np.ndarray
    v: np.ndarray
    t_global: float = 0.0

    def copy(self) -> "ParticleState":
        return ParticleState(self.w.copy(), self.v.copy(), self.t_global)


def advance(state: ParticleState, tau: float) -> ParticleState:
    """Straight-line flow for time ``tau``; velocity is untouched."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return ParticleState(state.w + state.v * tau, state.v, state.t_global + tau)


class TrajectorySegment(NamedTuple):
    w_start: np.ndarray
    v: np.ndarray
    duration: float
    event: Event
    minibatch_evals: int

    @property
    def w_end(self) -> np.ndarray:
        return self.w_start + self.v * self.duration


class Trajectory:
    """Columnar, append-only storage for a piecewise linear path.

    Row ``i`` is the flight starting at ``w_start[i]`` with velocity ``v[i]``
    for ``duration[i]``, terminated by ``event[i]``.  ``v`` is the velocity
    in parameter space, so for preconditioned runs it already includes the
    preconditioner.
    """

    def __init__(self, dim: int, capacity: int = 1024):
        self.dim = dim
        self._n = 0
        self._w = np.empty((capacity, dim))
        self._v = np.empty((capacity, dim))
        self._dur = np.empty(capacity)
        self._ev = np.empty(capacity, dtype=np.int8)
        self._evals = np.empty(capacity, dtype=np.int64)

    def _grow(self):
        cap = 2 * len(self._dur)
        for name in ("_w", "_v"):
            old = getattr(self, name)
            new = np.empty((cap, self.dim))
            new[: self._n] = old[: self._n]
            setattr(self, name, new)
        for name in ("_dur", "_ev", "_evals"):
            old = getattr(self, name)
            new = np.empty(cap, dtype=old.dtype)
            new[: self._n] = old[: self._n]
            setattr(self, name, new)

    def append(self, w_start, v, duration: float, event: Event, minibatch_evals: int = 0):
        if duration < 0:
            raise ValueError("negative segment duration")
        if self._n == len(self._dur):
            self._grow()
        i = self._n
        self._w[i] = w_start
        self._v[i] = v
        self._dur[i] = duration
        self._ev[i] = EVENT_CODES[event]
        self._evals[i] = minibatch_evals
        self._n += 1

    @classmethod
    def from_arrays(cls, w_start, v, duration, events, minibatch_evals) -> "Trajectory":
        w_start = np.atleast_2d(np.asarray(w_start, dtype=float))
        traj = cls(w_start.shape[1], capacity=max(1, len(w_start)))
        n = len(w_start)
        traj._w[:n] = w_start
        traj._v[:n] = v
        traj._dur[:n] = duration
        traj._ev[:n] = [EVENT_CODES[e] if isinstance(e, Event) else int(e) for e in events]
        traj._evals[:n] = minibatch_evals
        traj._n = n
        return traj

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, i: int) -> TrajectorySegment:
        if i < 0:
            i += self._n
        if not 0 <= i < self._n:
            raise IndexError(i)
        return TrajectorySegment(
            self._w[i].copy(), self._v[i].copy(), float(self._dur[i]),
            EVENTS_BY_CODE[self._ev[i]], int(self._evals[i]),
        )

    def __iter__(self) -> Iterator[TrajectorySegment]:
        for i in range(self._n):
            yield self[i]

    @property
    def w_start(self) -> np.ndarray:
        return self._w[: self._n]

    @property
    def v(self) -> np.ndarray:
        return self._v[: self._n]

    @property
    def duration(self) -> np.ndarray:
        return self._dur[: self._n]

    @property
    def event_codes(self) -> np.ndarray:
        return self._ev[: self._n]

    @property
    def minibatch_evals(self) -> np.ndarray:
        return self._evals[: self._n]

    @property
    def t_start(self) -> np.ndarray:
        d = self.duration
        return np.concatenate(([0.0], np.cumsum(d)[:-1])) if len(d) else d

    @property
    def total_time(self) -> float:
        return float(self.duration.sum())

    def count(self, event: Event) -> int:
        return int(np.count_nonzero(self.event_codes == EVENT_CODES[event]))

    def end_point(self) -> np.ndarray:
        return self._w[self._n - 1] + self._v[self._n - 1] * self._dur[self._n - 1]

    def inter_bounce_times(self) -> np.ndarray:
        """Travel times between consecutive bounces (the first flight excluded)."""
        is_bounce = self.event_codes == EVENT_CODES[Event.BOUNCE]
        t_end = np.cumsum(self.duration)
        return np.diff(t_end[is_bounce])


# ---------------------------------------------------------------------------
# Velocity geometry
# ---------------------------------------------------------------------------


def reflect(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Reflect ``v`` off the hyperplane orthogonal to ``g``."""
    g2 = float(g @ g)
    if math.sqrt(g2) <= ZERO_GRADIENT_TOL:
        raise ZeroGradient("cannot reflect off a zero gradient")
    vr = v - (2.0 * float(v @ g) / g2) * g
    # absorb floating-point drift off the unit sphere
    return vr / math.sqrt(float(vr @ vr)) * math.sqrt(float(v @ v))


def reflect_preconditioned(v: np.ndarray, g: np.ndarray, a_diag: np.ndarray) -> np.ndarray:
    """Reflect ``v`` off the plane orthogonal to the preconditioned gradient ``A g``."""
    if np.any(a_diag <= 0):
        raise ValueError("preconditioner diagonal must be positive")
    return reflect(v, a_diag * g)


def refresh_velocity(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the unit sphere S^{dim-1}."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    while True:
        z = rng.standard_normal(dim)
        nz = math.sqrt(float(z @ z))
        if nz > 0:
            return z / nz


# ---------------------------------------------------------------------------
# Target contract
# ---------------------------------------------------------------------------


@dataclass
class MiniBatch:
    """Handle to the data used for one noisy gradient observation."""

    indices: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None
    size: int = 0


@dataclass
class ThinningBound:
    """Intensity bound ``[a + b t]_+ + c`` valid for every mini-batch along ``w + v t``."""

    a: float
    b: float
    c: float = 0.0

    def __call__(self, t: float) -> float:
        return max(self.a + self.b * t, 0.0) + self.c


class Target(ABC):
    """A potential ``U(w) = -log p(w)`` built from a prior and ``n_data`` likelihood terms.

    Subclasses supply per-data-point terms; the mini-batch estimators of the
    gradient and of the directional derivative are shared.  All potentials
    are negative log densities, so the bounce intensity is ``[v . grad U]_+``.
    """

    dim: int
    n_data: int

    # -- model-specific pieces ------------------------------------------------

    @abstractmethod
    def log_density(self, w: np.ndarray) -> float:
        """Unnormalised log posterior, ``-U(w)``."""

    def potential(self, w: np.ndarray) -> float:
        return -self.log_density(w)

    @abstractmethod
    def prior_gradient(self, w: np.ndarray) -> np.ndarray:
        """Gradient of ``-log prior``."""

    @abstractmethod
    def point_gradients(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Gradients of ``-log p(x_i | w)`` for ``i in idx``, shape ``(len(idx), dim)``."""

    def point_directional(self, w: np.ndarray, u: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """``u . grad(-log p(x_i | w))`` for ``i in idx``.

        Override where the projection is cheaper than forming the gradients.
        """
        return self.point_gradients(w, idx) @ u

    def thinning_bound(self, w: np.ndarray, v: np.ndarray) -> ThinningBound:
        raise MissingBound(f"{type(self).__name__} provides no thinning bound")

    # -- shared estimators -----------------------------------------------------

    def full_gradient(self, w: np.ndarray) -> np.ndarray:
        idx = np.arange(self.n_data)
        return self.prior_gradient(w) + self.point_gradients(w, idx).sum(axis=0)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if not 1 <= n <= self.n_data:
            raise ValueError(f"mini-batch size {n} outside [1, {self.n_data}]")
        if n == self.n_data:
            return np.arange(self.n_data)
        return rng.choice(self.n_data, n, replace=False)

    def draw_batch(self, n: int, rng: np.random.Generator) -> MiniBatch:
        return MiniBatch(indices=self.sample_indices(n, rng), size=n)

    def minibatch_directional(self, w, v, n: int, rng: np.random.Generator,
                              precond: Optional[np.ndarray] = None):
        """Noisy directional derivative on a fresh mini-batch.

        Returns ``(g_tilde, c2, batch)``: the estimate of ``v . A grad U(w)``,
        its variance estimate, and the batch handle.  ``A`` is the diagonal
        ``precond`` (identity when omitted).  ``c2`` is NaN for ``n = 1``.
        """
        return self.directional_on_batch(w, v, self.draw_batch(n, rng), precond)

    def directional_on_batch(self, w, v, batch: MiniBatch, precond=None):
        from .thinning import minibatch_variance

        u = v if precond is None else precond * v
        idx = batch.indices
        n = len(idx)
        terms = self.point_directional(w, u, idx)
        g_tilde = float(self.prior_gradient(w) @ u) + self.n_data / n * float(terms.sum())
        if n == self.n_data:
            c2 = 0.0
        elif n >= 2:
            c2 = minibatch_variance(terms, self.n_data, n)
        else:
            c2 = math.nan
        return g_tilde, c2, batch

    def minibatch_gradient(self, batch: MiniBatch, w: np.ndarray) -> np.ndarray:
        idx = batch.indices
        n = len(idx)
        return self.prior_gradient(w) + self.n_data / n * self.point_gradients(w, idx).sum(axis=0)

    def stochastic_gradient(self, w, n: int, rng: np.random.Generator) -> np.ndarray:
        """``grad U~`` on a fresh batch; used by the discrete-time baselines."""
        return self.minibatch_gradient(self.draw_batch(n, rng), w)


@dataclass
class RunSummary:
    bounces: int = 0
    proposals: int = 0
    violations: int = 0
    refreshes: int = 0
    aux_observations: int = 0
    long_flights: int = 0
    data_evals: int = 0
    n_data: int = 1
    zero_gradient_refreshes: int = 0
    flags: list = field(default_factory=list)

    @property
    def epochs(self) -> float:
        return self.data_evals / self.n_data

    @property
    def violation_rate(self) -> float:
        return self.violations / self.proposals if self.proposals else 0.0

    def as_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "bounces": self.bounces,
            "proposals": self.proposals,
            "violations": self.violations,
            "violation_rate": self.violation_rate,
            "refreshes": self.refreshes,
            "aux_observations": self.aux_observations,
            "long_flights": self.long_flights,
            "data_evals": self.data_evals,
            "zero_gradient_refreshes": self.zero_gradient_refreshes,
            "flags": list(self.flags),
        }
