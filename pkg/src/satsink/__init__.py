"""satsink: one-time random convolutional image features, many ridge heads.

Featurize geo-located imagery once with a frozen bank of whitened random
patches, then fit cross-validated ridge regressions from the stored feature
table to any label set. Includes checkerboard spatial cross-validation with
a kernel-interpolation baseline, sub-image (super-resolution) prediction
maps, and two-sensor fusion with per-sensor penalties.
"""

from .features import (
    FeatureTable,
    PatchBank,
    activation_map,
    build_bank,
    compression_ratio,
    featurize_corpus,
    featurize_image,
    fit_whitening,
    sample_patches,
)
from .grid import (
    CellId,
    Grid,
    Image,
    SyntheticTask,
    build_grid,
    coarsen,
    sample_cells,
    synth_corpus,
)
from .multisensor import (
    BlockRidgeModel,
    fit_block_ridge,
    nightlights_features,
    tune_block,
)
from .ridge import (
    CvReport,
    RidgeModel,
    fit_ridge,
    holdout_split,
    kfold_assign,
    predict,
    r_squared,
    train_model,
    train_task,
    transform_labels,
    tune_lambda,
    weight_similarity,
)
from .spatial import (
    CheckerboardSplit,
    RbfInterpolator,
    checkerboard_assign,
    checkerboard_experiment,
    rbf_predict,
    tune_sigma,
)
from .superres import (
    SubgridPrediction,
    gaussian_smooth,
    pool_to_subgrid,
    superres_map,
    within_image_r2,
)

__version__ = "0.1.0"
