"""Simulation and inference for superposed planar point processes."""

from .core import (
    UNIT_SQUARE,
    DppNoiseParams,
    InsufficientDataError,
    InvalidInputError,
    KCurve,
    ModelInvalidError,
    Partition,
    PointPattern,
    SncpParams,
    Window,
    canonicalize_partition,
    enumerate_partitions,
    make_rng,
)
from .mce import MceConfig, fit_noisy_dpp, fit_plain_dpp, mce_objective
from .simulate import (
    simulate_gaussian_dpp,
    simulate_noisy_dpp,
    simulate_poisson,
    simulate_thomas_gamma_sncp,
    superpose,
)
from .sncp import (
    McemConfig,
    gibbs_sweep,
    log_cluster_marginal,
    log_count_prob,
    log_eppf,
    log_janossy,
    log_janossy_marginal,
    mcem_fit,
)
from .summary import (
    k_gaussian_dpp,
    k_hat,
    k_noisy_dpp,
    k_poisson,
    k_superposition,
    k_superposition_multi,
)

__version__ = "0.1.0"
