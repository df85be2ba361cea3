"""Open-set recognition calibration and evaluation.

Fit OpenMax extreme-value models on classifier logits, apply Softmax, Softmax
Threshold and OpenMax decision rules, tune their rejection parameters and
report accuracy, macro/micro precision/recall/F1, MCC, AUROC and AUPR-OUT.
"""

__version__ = "0.1.0"

from .activations import (
    ActivationDataset,
    DatasetError,
    OpenSetView,
    apply_openset_protocol,
    load_dataset,
    split_dataset,
    write_dataset,
)
from .metrics import (
    ConfusionMatrix,
    EvaluationReport,
    aupr_out,
    auroc,
    confusion_matrix,
    evaluate_closed_set,
    evaluate_open_set,
    mcc,
    prf_scores,
)
from .openmax import (
    CalibrationError,
    OpenMaxModel,
    OpenSetPrediction,
    SoftmaxModel,
    calibrate_openmax,
    class_cdfs,
    compute_mavs,
    distance,
    predict_openmax,
    predict_softmax,
    predict_softmax_threshold,
    recalibrate_activations,
    softmax,
    unknownness_score,
)
from .search import SearchSpace, TrialResult, default_space, grid_search, random_search, tune_osr
from .toy import (
    MixtureSpec,
    ToyClassifier,
    TrainConfig,
    class_balanced_weights,
    extract_logits,
    generate_mixture,
    train_toy_classifier,
)
from .weibull import WeibullFitError, WeibullModel, fit_weibull_tail, sample_weibull, weibull_cdf, weibull_mle
