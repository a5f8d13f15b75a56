"""Run configuration, target construction and sampler dispatch."""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import STREAM_DATA, Trajectory, make_rng
from .samplers import ConfigError, SbpsConfig, run_bps, run_lipsbps, run_msgnht, run_sbps, run_sgld
from .targets import (
    GaussianTarget,
    HyperboloidTarget,
    LogisticRegressionTarget,
    MultimodalTarget,
    generate_logistic_data,
    laplace_reference,
)

SAMPLERS = ("bps", "sbps", "psbps", "lipsbps", "sgld", "msgnht")
TARGETS = ("gaussian", "logistic", "hyperboloid", "multimodal")
STARTS = ("origin", "map")


@dataclass
class RunConfig:
    sampler: str = "sbps"
    target: str = "logistic"
    seed: int = 0
    out: Optional[str] = None
    epochs: float = 100.0
    start: str = "origin"
    # target
    dim: int = 20
    n_data: int = 1000
    data_seed: int = 0
    prior_var: float = 1e4
    gauss_var: list = field(default_factory=lambda: [0.04, 0.01])
    noise_sd: float = 0.0
    noise_radius: Optional[float] = None
    sigma_l: float = 0.25
    sigma_mu: float = 0.01
    hyp_sigma: float = 1.0
    hyp_ridge: float = 1e-4
    # continuous-time samplers
    n: int = 100
    k: float = 3.0
    refresh_rate: Optional[float] = None
    dt: float = 0.01
    aux: bool = True
    aux_p_max: Optional[int] = None
    max_flight: float = 100.0
    clamp: bool = True
    beta: float = 0.99
    eps: float = 1e-4
    hyper_lr: float = 1e-3
    mu0: float = 0.0
    sigma2_0: float = 1e4
    max_time: Optional[float] = None
    # discrete baselines
    step_size: float = 1e-3
    diffusion: float = 1.0

    def validate(self):
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"sampler must be one of {', '.join(SAMPLERS)}")
        if self.target not in TARGETS:
            raise ConfigError(f"target must be one of {', '.join(TARGETS)}")
        if self.start not in STARTS:
            raise ConfigError(f"start must be one of {', '.join(STARTS)}")
        if self.seed < 0 or self.data_seed < 0:
            raise ConfigError("seeds must be nonnegative")
        if not self.epochs > 0:
            raise ConfigError("epochs must be positive")
        if self.dim < 1 or self.n_data < 1:
            raise ConfigError("dim and n_data must be positive")
        if self.target == "gaussian" and any(v <= 0 for v in self.gauss_var):
            raise ConfigError("gauss_var entries must be positive")
        if self.sampler == "lipsbps" and self.target != "logistic":
            raise ConfigError("lipsbps needs the logistic target")
        if self.start == "map" and self.target != "logistic":
            raise ConfigError("start = map needs the logistic target")
        if self.sampler in ("sgld", "msgnht") and not self.step_size > 0:
            raise ConfigError("step_size must be positive")
        if self.refresh_rate is not None and self.refresh_rate < 0:
            raise ConfigError("refresh_rate must be nonnegative")
        N = self.data_size
        if self.sampler in ("sbps", "psbps"):
            self.sbps_config().validate(N)
        elif not 1 <= self.batch_size <= N:
            raise ConfigError(f"mini-batch size n={self.n} must lie in [1, N={N}]")

    @property
    def data_size(self) -> int:
        return 1 if self.target == "gaussian" else self.n_data

    @property
    def batch_size(self) -> int:
        # the Gaussian target has a single (noisy) gradient per query
        return 1 if self.target == "gaussian" else self.n

    def sbps_config(self) -> SbpsConfig:
        return SbpsConfig(
            k=self.k, n=self.batch_size, refresh_rate=self.refresh_rate or 0.0, dt=self.dt, aux=self.aux,
            aux_p_max=self.aux_p_max, epochs=self.epochs, seed=self.seed,
            precondition=self.sampler == "psbps", beta=self.beta, eps=self.eps, clamp=self.clamp,
            hyper_lr=self.hyper_lr, mu0=self.mu0, sigma2_0=self.sigma2_0, max_flight=self.max_flight,
        )

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_from_dict(d: dict) -> RunConfig:
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return RunConfig(**d)


def build_target(cfg: RunConfig):
    rng = make_rng(cfg.data_seed, STREAM_DATA)
    if cfg.target == "gaussian":
        var = list(cfg.gauss_var)
        return GaussianTarget(np.zeros(len(var)), var, noise_sd=cfg.noise_sd, noise_radius=cfg.noise_radius)
    if cfg.target == "logistic":
        return generate_logistic_data(cfg.dim, cfg.n_data, rng, prior_var=cfg.prior_var)
    if cfg.target == "hyperboloid":
        return HyperboloidTarget.generate(cfg.n_data, rng, sigma=cfg.hyp_sigma, c=cfg.hyp_ridge)
    return MultimodalTarget.generate(cfg.n_data, cfg.dim, rng, sigma_l=cfg.sigma_l, sigma_mu=cfg.sigma_mu)


@dataclass
class RunOutput:
    config: RunConfig
    target: object
    trajectory: Optional[Trajectory] = None
    samples: Optional[np.ndarray] = None
    sample_epochs: Optional[np.ndarray] = None
    summary: dict = field(default_factory=dict)
    w_hat: Optional[np.ndarray] = None

    @property
    def is_continuous(self) -> bool:
        return self.trajectory is not None


def run_experiment(cfg: RunConfig, target=None) -> RunOutput:
    """Validate ``cfg``, build the target (unless given) and run the sampler."""
    cfg.validate()
    if target is None:
        target = build_target(cfg)
    w_hat = None
    if isinstance(target, LogisticRegressionTarget) and cfg.start == "map":
        w_hat, _ = laplace_reference(target)
    w0 = w_hat if cfg.start == "map" else None
    t0 = time.perf_counter()
    out = RunOutput(cfg, target, w_hat=w_hat)
    if cfg.sampler in ("sbps", "psbps"):
        run = run_sbps(target, cfg.sbps_config(), w0=w0)
        out.trajectory, summary = run.trajectory, run.summary.as_dict()
    elif cfg.sampler in ("bps", "lipsbps"):
        refresh = cfg.refresh_rate if cfg.refresh_rate is not None else (0.1 if cfg.sampler == "bps" else 0.0)
        if cfg.sampler == "bps":
            batch = cfg.batch_size
            if cfg.max_time is not None:
                traj, s = run_bps(target, refresh, seed=cfg.seed, max_time=cfg.max_time, batch_size=batch, w0=w0)
            else:
                traj, s = run_bps(target, refresh, seed=cfg.seed, max_epochs=cfg.epochs, batch_size=batch, w0=w0)
        else:
            traj, s = run_lipsbps(target, cfg.batch_size, epochs=cfg.epochs, seed=cfg.seed, w0=w0,
                                  refresh_rate=refresh)
        out.trajectory, summary = traj, s.as_dict()
    else:
        fn = run_sgld if cfg.sampler == "sgld" else run_msgnht
        kw = {} if cfg.sampler == "sgld" else {"diffusion": cfg.diffusion}
        res = fn(target, cfg.step_size, cfg.batch_size, epochs=cfg.epochs, seed=cfg.seed, w0=w0, **kw)
        out.samples, out.sample_epochs = res.samples, res.epochs
        summary = {"epochs": float(res.epochs[-1]), "steps": len(res.samples) - 1,
                   "bounces": 0, "proposals": 0, "violations": 0, "violation_rate": 0.0,
                   "diverged": res.diverged, "flags": ["diverged"] if res.diverged else []}
    summary["wall_time_s"] = time.perf_counter() - t0
    summary["seed"] = cfg.seed
    out.summary = summary
    return out


def mean_inter_bounce_time(traj: Trajectory) -> float:
    gaps = traj.inter_bounce_times()
    return float(gaps.mean()) if len(gaps) else math.nan
