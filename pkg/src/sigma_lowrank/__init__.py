"""Low-rank compression of convolution and linear layers under a norm
weighted by the covariance of the layer's input patches."""

from .conv import ConvSpec, conv_direct, cp_forward, im2col, tucker2_forward
from .covariance import (
    SigmaAccumulator,
    SigmaRoot,
    estimate_sigma,
    identity_root,
    relative_recon_error,
    sigma_norm,
    sigma_root_from_matrix,
)
from .decomp import (
    AlsConfig,
    SvdFactors,
    cp_als,
    cp_als_sigma,
    greedy_deflation_sigma,
    svd_sigma,
    tucker2_als,
    tucker2_als_sigma,
    wals_tucker2,
)
from .errors import (
    CholeskyBreakdown,
    NumericalError,
    SigmaLowrankError,
    SingularRootError,
    ValidationError,
)
from .linalg import SymSolveConfig, minres_solve, pinv, solve_gram, sym_sqrt, truncated_svd
from .npyio import read_tensor, write_tensor
from .pipeline import (
    CompressConfig,
    CompressionError,
    ModelManifest,
    compress_model,
    evaluate_functional_error,
    load_manifest,
    verify_report,
)
from .rank_select import RankPlan, plan_ranks, r_alpha, vbmf_rank
from .tensor import (
    CpFactors,
    Tucker2Factors,
    cp_reconstruct,
    fold_mode,
    khatri_rao,
    kronecker,
    tucker2_reconstruct,
    unfold_mode,
)

__version__ = "0.1.0"
