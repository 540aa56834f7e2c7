"""Normalized-cut segmentation solved with edge-preserving filters."""

from .affinity import (
    AffinityConfig,
    BruteBilateralOperator,
    DenseAffinity,
    DenseOperator,
    PatchConfig,
    brute_bilateral,
    brute_nlm,
    build_dense_affinity,
    dense_apply,
    dense_ncut_solve,
    patch_weight,
    pixel_weight,
    random_sparsify,
    rayleigh_quotient,
)
from .eigen import EigenResult, SolverConfig, lanczos, ncut_eigs, power_iterate, symmetric_apply
from .nlm import NlmOperator, nlm_apply, nlm_build, nlm_degree
from .grid import GridConfig, GridOperator, grid_apply, grid_dims, grid_filter
from .image import Image, LabelMap, load_image, resize_nearest, save_image, to_grayscale
from .operators import CutOperator, DegenerateGraphError, MaskedOperator, MatrixOperator

__version__ = "0.1.0"
