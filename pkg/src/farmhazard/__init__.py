"""Factor-augmented regularized Cox regression.

Fit sparse proportional hazards models on covariates that share a few
latent factors, by regressing on estimated factors (unpenalized) and
idiosyncratic components (penalized) instead of the raw covariates.
"""
from .cox import CoxDerivatives, SortedDesign, cox_derivatives, irrepresentable_stat, partial_loglik_loss, score_at_truth
from .data import (DataError, FailureIndex, StandardizationRecord, SurvivalDataset, build_failure_index,
                   impute_median, load_csv, standardize)
from .factors import (FactorDecomposition, decompose, decorrelation_report, estimate_num_factors_act)
from .metrics import BinomialCI, c_index, model_size, screening_metrics, sign_consistency, wilson_interval
from .screening import ScreeningResult, marginal_augmented_fit, screen, sis_baseline
from .simulation import SimConfig, run_experiment
from .solver import (METHODS, FitResult, PenaltySpec, ProcedureFit, fit_procedure, fit_weighted_enet_cox,
                     scad_weight)
from .tuning import CVResult, LambdaGrid, cv_select_lambda, lambda_grid

__version__ = "0.1.0"
