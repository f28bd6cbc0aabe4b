from .metrics import (bidirectional_ranking_loss, classwise_msssim, cosine_similarity,
                      inception_score_from_probs, inception_style_score, ms_ssim, msssim_levels,
                      overall_msssim, sample_pairs, ssim)
from .models import (ClassifierConfig, EvalClassifier, LeakageError, VSConfig, VSModel,
                     train_eval_classifier, train_vs_model, vs_score)
from .report import METRICS, MetricReport, evaluate_images, format_table

__all__ = [
    "bidirectional_ranking_loss", "classwise_msssim", "cosine_similarity",
    "inception_score_from_probs", "inception_style_score", "ms_ssim", "msssim_levels",
    "overall_msssim", "sample_pairs", "ssim",
    "ClassifierConfig", "EvalClassifier", "LeakageError", "VSConfig", "VSModel",
    "train_eval_classifier", "train_vs_model", "vs_score",
    "METRICS", "MetricReport", "evaluate_images", "format_table",
]
