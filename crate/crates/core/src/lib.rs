//! Continued-fraction networks: ladders of affine layers joined by a safe
//! reciprocal, with exact attribution through continuants, truncated power
//! series expansion, polynomial encoding and training.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod continuants;
pub mod data;
pub mod encoder;
pub mod error;
pub mod ladder;
pub mod model;
pub mod model_file;
pub mod optim;
pub mod series;
pub mod synthetic;
pub mod training;

pub use continuants::{
    cf_via_continuants, continuant, continuant_det_oracle, continuant_identity_check,
    continuant_suffix_table, ic_input_gradient, ic_model_attribution, layer_sensitivities,
    Attribution, InputGradient,
};
pub use data::{
    load_csv, load_csv_matching, read_csv, split, split_indices, Dataset, MatchedRows, Samples,
    Standardization, TargetSpec, Task,
};
pub use encoder::{
    encode_poly, eval_encoding, gcf_eval, verify_encoding, GeneralizedCF, SparsePoly,
};
pub use error::{Error, Result};
pub use ladder::{eval_fraction, safe_recip, FeatureMask, Ladder, DEFAULT_EPSILON};
pub use model::{formula_param_count, CoFrNetModel, ParamCount, Variant};
pub use model_file::{FeatureUnits, ModelFile};
pub use series::{ladder_to_series, model_to_series, series_report, MultiSeries, RankedTerm};
pub use synthetic::{
    mape, matched_mlp_width, run_benchmark, BenchConfig, BenchResult, SyntheticFn,
};
pub use training::{init_model, train, History, Loss, TrainConfig};
