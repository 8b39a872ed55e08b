"""Benchmark-protocol evaluation: ignore-aware greedy matching, miss rate vs
false positives per image, and the log-average miss rate summary.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInput

REASONABLE_MIN_HEIGHT = 50.0
REASONABLE_MIN_VISIBLE = 0.65
MATCH_IOU = 0.5

TP, FP, MATCHED_IGNORE = "tp", "fp", "ignore"


@dataclass(frozen=True)
class GtBox:
    x: float
    y: float
    w: float
    h: float
    visible: float = 1.0
    ignore: bool = False
    label: str = "person"

    @property
    def height(self) -> float:
        return self.h


def filter_reasonable(gts) -> list:
    """Flag ground truth below 50 px height or 65% visibility as ignore.

    Nothing is removed: ignored boxes still absorb detections without
    counting as true or false positives.
    """
    out = []
    for g in gts:
        ign = g.h < REASONABLE_MIN_HEIGHT or g.visible < REASONABLE_MIN_VISIBLE
        out.append(replace(g, ignore=ign or g.ignore))
    return out


def iou(ax, ay, aw, ah, bx, by, bw, bh) -> float:
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


@dataclass
class FrameResult:
    """Per-frame matching outcome used to assemble curves."""

    det_scores: np.ndarray  # all detection scores, descending
    det_flags: list  # TP / FP / MATCHED_IGNORE per detection
    n_gt: int  # non-ignored ground truth count
    gt_match_scores: list  # per non-ignored GT: matched det score or None


def match_frame(dets, gts, iou_thresh: float = MATCH_IOU) -> FrameResult:
    """Greedy matching by descending score.

    Each detection takes the highest-IoU unmatched non-ignored GT at or above
    the threshold (true positive); failing that, the best ignored GT (neither
    true nor false positive, and the ignored GT is not consumed); otherwise
    it is a false positive.  Non-ignored GT match at most once.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    real = [i for i, g in enumerate(gts) if not g.ignore]
    ignored = [i for i, g in enumerate(gts) if g.ignore]
    matched = {}
    flags = [FP] * len(dets)
    for di in order:
        d = dets[di]
        best_iou, best_gt = 0.0, -1
        for gi in real:
            if gi in matched:
                continue
            g = gts[gi]
            v = iou(d.x, d.y, d.w, d.h, g.x, g.y, g.w, g.h)
            if v >= iou_thresh and v > best_iou:
                best_iou, best_gt = v, gi
        if best_gt >= 0:
            matched[best_gt] = d.score
            flags[di] = TP
            continue
        for gi in ignored:
            g = gts[gi]
            if iou(d.x, d.y, d.w, d.h, g.x, g.y, g.w, g.h) >= iou_thresh:
                flags[di] = MATCHED_IGNORE
                break
    scores = np.array(sorted((d.score for d in dets), reverse=True), dtype=np.float64)
    gt_scores = [matched.get(gi) for gi in real]
    return FrameResult(scores, [flags[i] for i in order], len(real), gt_scores)


@dataclass(frozen=True)
class RocCurve:
    """(threshold, FPPI, miss rate) operating points, threshold descending."""

    thresholds: np.ndarray
    fppi: np.ndarray
    miss_rate: np.ndarray
    n_images: int
    n_gt: int


def roc(frames) -> RocCurve:
    """Sweep thresholds over every detection score.

    Greedy matching is threshold-consistent (a detection's fate depends only
    on higher-scored detections), so matching once and thresholding the
    labels reproduces per-threshold re-matching exactly.
    """
    if not frames:
        raise InvalidInput("no frames to evaluate")
    n_images = len(frames)
    n_gt = sum(f.n_gt for f in frames)
    if n_gt == 0:
        raise InvalidInput("no non-ignored ground truth in any frame")

    scored = []
    for f in frames:
        for s, flag in zip(f.det_scores, f.det_flags):
            if flag == TP:
                scored.append((float(s), 1, 0))
            elif flag == FP:
                scored.append((float(s), 0, 1))
    scored.sort(key=lambda r: -r[0])
    if not scored:
        return RocCurve(
            np.empty(0), np.empty(0), np.empty(0), n_images=n_images, n_gt=n_gt
        )
    values = np.array([r[0] for r in scored])
    tp_cum = np.cumsum([r[1] for r in scored])
    fp_cum = np.cumsum([r[2] for r in scored])
    # keep the last entry of each distinct threshold
    last = np.flatnonzero(np.r_[values[1:] != values[:-1], True])
    thr = values[last]
    fppi = fp_cum[last] / n_images
    miss = (n_gt - tp_cum[last]) / n_gt
    return RocCurve(thr, fppi, miss, n_images=n_images, n_gt=n_gt)


@dataclass(frozen=True)
class LamrResult:
    value: float
    samples: tuple  # 9 (sample_fppi, miss_rate) pairs


LAMR_SAMPLES = tuple(10.0 ** (-2.0 + k / 4.0) for k in range(9))


def lamr(curve: RocCurve) -> LamrResult:
    """Geometric mean of miss rates at 9 log-spaced FPPI samples in [0.01, 1].

    At each sample, the miss rate of the operating point with the largest
    FPPI not exceeding the sample is used; if no point qualifies, the miss
    rate at the lowest achieved FPPI is reused.  Zero miss rates are clamped
    to 1/(n_gt + 1) before the log.
    """
    misses = []
    pairs = []
    for s in LAMR_SAMPLES:
        if curve.thresholds.size == 0:
            m = 1.0
        else:
            ok = curve.fppi <= s
            if ok.any():
                best_fppi = curve.fppi[ok].max()
                m = float(curve.miss_rate[ok & (curve.fppi == best_fppi)].min())
            else:
                lowest = curve.fppi.min()
                m = float(curve.miss_rate[curve.fppi == lowest].min())
        pairs.append((s, m))
        misses.append(max(m, 1.0 / (curve.n_gt + 1)))
    value = math.exp(sum(math.log(m) for m in misses) / len(misses))
    return LamrResult(value, tuple(pairs))


def miss_rate_at_fppi(curve: RocCurve, target: float) -> float:
    """Miss rate at the largest achieved FPPI <= target (1.0 if below reach)."""
    if curve.thresholds.size == 0:
        return 1.0
    ok = curve.fppi <= target
    if not ok.any():
        return float(curve.miss_rate[curve.fppi == curve.fppi.min()].min())
    best = curve.fppi[ok].max()
    return float(curve.miss_rate[ok & (curve.fppi == best)].min())


# ---------------------------------------------------------------------------
# File formats: annotations, ROC CSV and the LAMR report.
# ---------------------------------------------------------------------------


def parse_annotations(text: str) -> list:
    """Lines of "label x y w h visible_fraction"."""
    boxes = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise InvalidInput(f"bad annotation line: {line!r}")
        label = parts[0]
        x, y, w, h, vis = (float(v) for v in parts[1:])
        boxes.append(GtBox(x, y, w, h, visible=vis, label=label))
    return boxes


def roc_csv(curve: RocCurve) -> str:
    lines = ["threshold,fppi,miss_rate"]
    for t, f, m in zip(curve.thresholds, curve.fppi, curve.miss_rate):
        lines.append(f"{t!r},{f!r},{m!r}")
    return "\n".join(lines) + "\n"


def lamr_report(curve: RocCurve, result: LamrResult) -> str:
    lines = [
        "log-average miss rate report",
        f"images {curve.n_images}",
        f"ground_truth {curve.n_gt}",
        "samples (fppi miss_rate):",
    ]
    for s, m in result.samples:
        lines.append(f"  {s!r} {m!r}")
    lines.append(f"lamr {result.value!r}")
    return "\n".join(lines) + "\n"
