"""Exact and random-feature approximations of the Tanimoto kernels T_MM and T_DP."""

from .core import (
    Dataset,
    FingerprintFormatError,
    SeedStream,
    SparseVec,
    as_dataset,
    load_fingerprints,
    mix64,
    parse_fingerprints,
    save_fingerprints,
    sqrt_transform,
    synth_clustered,
    synth_dataset,
)
from .gp import (
    GpHypers,
    GpPosterior,
    avg_log_prob,
    exact_gp_predict,
    exact_prior_sample,
    exact_subset_gp,
    exact_thompson_select,
    fit_hypers,
    mll_exact,
    r_squared,
    rf_prior_sample,
    rfgp_fit,
    rfgp_predict,
    thompson_select,
)
from .hashrf import CwsHash, MinMaxFeatureMap, bucket, cws_hash, minmax_features
from .kernels import cross_gram, d_dp, d_mm, gram, t_dp, t_dp_series, t_mm
from .maps import from_dict as feature_map_from_dict
from .polysketch import CountSketchSpec, TensorSketchSpec, count_sketch, tensor_sketch_pair, tensor_sketch_poly
from .prefactor import (
    PrefactorSpec,
    estimate_zeta,
    gamma_quantile,
    qmc_prefactor_features,
    scalar_prefactor_feature,
    tuned_params,
)
from .tdprf import TdpFeatureSpec, allocate, normalize_correction, residual_correction, tdp_features
from .trff import read_trff, write_trff

__version__ = "0.1.0"
