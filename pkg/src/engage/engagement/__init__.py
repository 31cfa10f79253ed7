from .metrics import (
    Metrics,
    Timeline,
    action_metrics,
    compute_metrics,
    mean_engagement_timeline,
    pearson,
)
from .svm import (
    SvmModel,
    encode_labels,
    kkt_residuals,
    load_svm,
    predict_engagement,
    save_svm,
    train_svm,
)

__all__ = [
    "Metrics", "SvmModel", "Timeline", "action_metrics", "compute_metrics",
    "encode_labels", "kkt_residuals", "load_svm", "mean_engagement_timeline",
    "pearson", "predict_engagement", "save_svm", "train_svm",
]
