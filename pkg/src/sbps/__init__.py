"""Bouncy Particle Sampler and its stochastic mini-batch variants."""

from .core import (
    BoundViolation,
    DegenerateBatch,
    DegenerateSeries,
    Event,
    MissingBound,
    NoConvergence,
    QuadratureFailure,
    RunSummary,
    SamplerError,
    SingularSystem,
    Target,
    Trajectory,
    ZeroGradient,
)
from .samplers import (
    SbpsConfig,
    run_bps,
    run_lipsbps,
    run_msgnht,
    run_sbps,
    run_sgld,
)
from .targets import (
    GaussianTarget,
    HyperboloidTarget,
    LogisticRegressionTarget,
    MultimodalTarget,
    generate_logistic_data,
    laplace_reference,
)

__version__ = "0.1.0"
