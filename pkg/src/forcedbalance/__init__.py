"""Forced-balance two-arm experimental designs and their MSE criteria."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CRFB,
    PB,
    PM,
    AllocationCovariance,
    CriterionReport,
    DesignDistribution,
    DesignError,
    ResponseSpec,
    sigma_crfb_closed,
    sigma_exact,
    sigma_pb,
    sigma_pm,
    validate_design,
)
from .criteria import (  # noqa: E402
    beta_hat,
    c_constant,
    conditional_mse,
    efron_worst_case,
    mc_mse_quantile,
    mean_mse,
    normal_mixture,
    tail_Q,
    var_mse,
)
from .designs import (  # noqa: E402
    SearchConfig,
    brute_force_optimal,
    build_design,
    enumerate_balanced,
    greedy_optimize,
    imbalance,
    match_pairs,
    sample_crfb,
    sample_pm,
)
