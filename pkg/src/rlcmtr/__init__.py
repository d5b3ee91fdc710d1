"""Multi-target regression with random linear target combinations (RLC)."""

__version__ = "0.1.0"

from .coding import (CoefficientMatrix, Decoder, RankDeficiencyError, build_coefficient_matrix,
                     decode, encode)
from .dataset import (Dataset, Normalizer, SplitPlan, apply_normalizer, fit_normalizer,
                      impute_mean, invert_normalizer, load_dataset, make_kfold, parse_arff,
                      parse_csv)
from .evaluation import (CorrelationSummary, EvalReport, arrmse, correlation_summary,
                         evaluate_cv, evaluate_holdout, pairwise_target_correlations, rrmse)
from .gbtree import (GbmConfig, GbmModel, RegressionTree, fit_gbm, fit_regression_tree,
                     predict_gbm, predict_tree)
from .rlc import (RlcMethod, RlcModel, RlcParams, StMethod, StModel, predict_rlc, predict_st,
                  train_rlc, train_st)
from .stats import (ResultTable, friedman, nemenyi_cd, wilcoxon_signed_rank, wins_losses)
