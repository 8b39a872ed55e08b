"""Sliding-window detection with spatially pooled channel features.

Pipeline: channel extraction (LUV, gradients, pooled covariance statistics,
pooled LBP histograms) -> boosted soft-cascade decision trees -> optional
partial-AUC score calibration -> multi-scale scan with greedy NMS ->
miss-rate / FPPI evaluation.
"""

__version__ = "0.1.0"

from .boost import (
    BoostedModel,
    DecisionTree,
    QuantTable,
    adaboost,
    bootstrap_train,
    fit_quantizer,
    load_model,
    quantize,
    save_model,
    score_window,
)
from .channels import ChannelStack, LbpCodeMap, LowLevelStack, acf_channels, lbp_codes, lowlevel9, uniform_mapping
from .detect import Detection, PyramidSpec, build_pyramid, nms_greedy, scan
from .errors import InvalidInput, OutOfBounds
from .evalkit import GtBox, LamrResult, RocCurve, filter_reasonable, lamr, match_frame, roc
from .imgcore import IntegralImage, RasterImage, Rect, aggregate, gradient, integral, luminance, rect_sum, resample, rgb_to_luv, second_derivative
from .pauc import PaucModel, calibrate_score, cross_validate, pauc_risk, train_pauc_svm, weak_responses
from .pooling import CovIntegrals, PatchStats, PoolConfig, assemble, cov_integrals, patch_stats, sp_cov_stack, sp_lbp_stack
