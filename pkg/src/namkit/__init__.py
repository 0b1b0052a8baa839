"""Neural additive models: per-feature subnets trained jointly, with
exp-centered units, multitask subnet mixing, ensembling, and shape-function
export for inspection."""

from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    NamkitError,
    NumericError,
    UndefinedMetricError,
    UsageError,
)
from .tensor import Activation, child_seeds, make_rng, sigmoid
from .feature_net import (
    FeatureNet,
    FeatureNetConfig,
    GradCheckReport,
    build_feature_net,
    verify_gradients,
)
from .model import (
    FeatureMeta,
    LossBreakdown,
    NamEnsemble,
    NamModel,
    build_nam,
    center,
    ensemble_predict,
    feature_contributions,
    nam_backward,
    nam_forward,
    nam_loss,
    shape_table,
    zero_out_feature,
)
from .multitask import (
    MultitaskNam,
    ParamGenModel,
    build_multitask,
    build_paramgen,
    mt_backward,
    mt_center,
    mt_forward,
    mt_loss,
    mt_shape_table,
    paramgen_forward,
    paramgen_loss,
)
from .data import (
    Dataset,
    DensityHistogram,
    Preprocessor,
    bernoulli_entropy,
    density_histogram,
    gen_multitask_synthetic,
    gen_paramgen_synthetic,
    gen_toy_jump,
    kfold_split,
    load_csv,
    preprocess,
    train_val_split,
    write_csv,
)
from .training import (
    AdamState,
    CVReport,
    SearchResult,
    TrainConfig,
    TrainReport,
    adam_step,
    cross_validate,
    net_config_for,
    random_search,
    train,
    train_ensemble,
)
from .metrics import mse, pr_auc, rmse, roc_auc
from .baselines import LinearModel, MlpModel, build_mlp, fit_full_dnn, fit_linear
from .serialize import load_model, save_model
from .export import export_shapes, plot_shape_svg, read_shape_csv, write_shape_csv

__version__ = "0.1.0"
