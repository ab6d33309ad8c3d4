"""smoothcal: exact smooth calibration metrics, kernel ridge and logistic
regression with an unregularized bias, and reproducible calibration sweeps."""

from .data import (Affine, LabeledDataset, RecalibrationSet, Temperature,
                   bayes_probability, build_recalibration_set,
                   gen_miscalibrated_scores, gen_toy, read_dataset,
                   read_scores, rng_for, stratified_subsample, write_dataset,
                   write_scores)
from .errors import InputError, NumericalError, OptimizerError, ParseError
from .kernels import (GAUSSIAN, LAPLACE, KernelSpec, RffMap, gram_matrix,
                      kernel_eval, kernel_matrix, make_rff_map,
                      median_heuristic, rff_features)
from .metrics import (LOGIT, PROBABILITY, LipschitzWitness, MetricReport,
                      PredictionSet, binned_ece, dual_smooth_ce,
                      metric_report, mmce, pgap_logistic, pgap_sq,
                      read_prediction_file, smooth_ce, witness_oracle,
                      write_prediction_file)
from .models import (KernelModel, OptimizerSettings, TrainReport, fit_klr,
                     fit_krr, load_model, objective, predict, predict_proba,
                     prediction_set, save_model, training_smce_bound)
from .sweep import (SweepConfig, SweepResult, aggregate, assert_trends,
                    parse_config, preset_configs, run_sweep)

__version__ = "0.1.0"
