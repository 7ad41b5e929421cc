"""SVM and random forest classifiers with grid search and threshold tuning."""
from .forest import ForestModel, rf_fit
from .selection import (ClassifierSpec, GridSpec, GridResult, fit_classifier, fit_tuned,
                        grid_cells, grid_search, oof_scores, predict, tune_threshold,
                        write_grid_table)
from .svm import ConvergenceWarning, SvmModel, svm_fit

__all__ = ["ClassifierSpec", "ConvergenceWarning", "ForestModel", "GridResult", "GridSpec",
           "SvmModel", "fit_classifier", "fit_tuned", "grid_cells", "grid_search", "oof_scores",
           "predict", "rf_fit", "svm_fit", "tune_threshold", "write_grid_table"]
