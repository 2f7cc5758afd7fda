"""Conditional generation of unobserved features.

One latent-variable model of every conditional p(unobserved | observed, mask),
a chain-rule marginal baseline, mask distributions, likelihood estimators,
checkpoints, and imputation/inpainting metrics. All heavy lifting happens in
the compiled extension; this package re-exports its public surface.
"""

from ._core import (  # noqa: F401
    MISSING,
    ConfigError,
    Dataset,
    Error,
    Feature,
    FeatureKind,
    FeatureSchema,
    ImputedRow,
    IoError,
    MarginalModel,
    MarginalTrainResult,
    MaskSpec,
    MetricRow,
    NumericError,
    Rng,
    ShapeError,
    SynthMixture,
    TrainConfig,
    TrainResult,
    VaeacModel,
    best_of_k_psnr,
    checkpoint_kind,
    combine_imputations,
    corrupt,
    denormalize_row,
    downstream_eval,
    impute_rows,
    is_missing,
    load_checkpoint,
    load_csv,
    load_csv_with_schema,
    load_idx_images,
    make_factor_table,
    make_stroke_images,
    mask_popcount,
    mean_impute_rows,
    missing_mask,
    mixture_log_density,
    naive_bayes_nll,
    normalize,
    nrmse,
    pfc,
    psnr,
    r2_score,
    sample_mask,
    save_checkpoint,
    save_csv,
    synth_mixture,
    train,
    train_marginalizer,
    train_test_split,
    um_mask_transform,
    write_idx_images,
    write_metric_report,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "1.0.0"
