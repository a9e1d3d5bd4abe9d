"""Rank-one tensor approximation by HOPM or ALS, with cyclic BCD for CP
factors and tools to diagnose how fast a run converged."""

from .als import AlsState, AuditReport, als_sweep, als_update, f_value, grad_f, run_als, verify_equivalence
from .cp_bcd import (
    Objective,
    bcd_block_update,
    cp_map,
    gamma_lower_bound,
    restricted_map_matrix,
    run_bcd,
    sigma_k_mu,
)
from .diagnostics import IterationTrace, RateFit, check_summability, estimate_lojasiewicz, fit_rate
from .errors import (
    BadStart,
    BadTensor,
    DegenerateBlock,
    DimsMismatch,
    DimsTooLarge,
    InsufficientData,
    NotConverged,
    NotMatrix,
    ParseError,
    SchemaError,
    StabilityWarning,
    ZeroContraction,
)
from .hopm import HopmState, StoppingRule, hopm_sweep, random_start, run_hopm
from .oracle import (
    OracleResult,
    make_test_tensor,
    matrix_svd_check,
    spectral_norm_grid,
    spectral_norm_multistart,
)
from .tensor_core import (
    as_factors,
    as_tensor,
    frobenius_inner,
    frobenius_norm,
    multilinear_form,
    outer_rank_one,
    partial_contraction,
    tuple_norm,
)

__version__ = "0.1.0"
