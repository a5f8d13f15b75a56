from .baselines import ChainResult, run_msgnht, run_sgld
from .bps import run_bps, run_lipsbps
from .sbps import (
    ConfigError,
    PreconditionerState,
    SbpsConfig,
    SbpsRun,
    run_sbps,
    update_preconditioner,
)

__all__ = [
    "ChainResult",
    "ConfigError",
    "PreconditionerState",
    "SbpsConfig",
    "SbpsRun",
    "run_bps",
    "run_lipsbps",
    "run_msgnht",
    "run_sbps",
    "run_sgld",
    "update_preconditioner",
]
