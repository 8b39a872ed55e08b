"""Multi-scale sliding-window inference.

Channels are computed exactly at every pyramid level; windows slide over the
quarter-resolution channel grid and are scored through the soft cascade,
with tree-node feature lookups gathered straight from the level stack.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .boost import BoostedModel, quantize_raw
from .channels import ChannelStack
from .errors import InvalidInput
from .imgcore import RasterImage, resample
from .pauc import PaucModel
from .pooling import assemble

CELL = 4


@dataclass(frozen=True)
class Detection:
    x: float
    y: float
    w: float
    h: float
    score: float
    scale_index: int = 0


@dataclass(frozen=True)
class PyramidSpec:
    scales_per_octave: int = 8
    max_upscale: float = 2.0

    def __post_init__(self):
        if self.scales_per_octave < 1:
            raise InvalidInput("scales_per_octave must be >= 1")
        if self.max_upscale <= 0:
            raise InvalidInput("max_upscale must be positive")


def pyramid_factors(img_w, img_h, win_w, win_h, spec: PyramidSpec):
    """Strictly decreasing scale factors; levels stop fitting the window."""
    factors = []
    k = 0
    while True:
        f = spec.max_upscale * 2.0 ** (-k / spec.scales_per_octave)
        if int(img_w * f) < win_w or int(img_h * f) < win_h:
            break
        factors.append(f)
        k += 1
    return factors


def build_pyramid(img: RasterImage, spec: PyramidSpec, win_w: int, win_h: int):
    """Sequence of (scaled image, factor); empty if the image is too small."""
    levels = []
    for f in pyramid_factors(img.width, img.height, win_w, win_h, spec):
        levels.append((resample(img, int(img.width * f), int(img.height * f)), f))
    return levels


def _node_lookup(model: BoostedModel):
    """Per-node (channel, dy, dx, lo, hi) arrays for stack-direct evaluation."""
    cache = getattr(model, "_node_lookup", None)
    if cache is not None:
        return cache
    feat, thr, leaf = model.packed_trees()
    cells = model.grid_h * model.grid_w
    ch = feat // cells
    rem = feat % cells
    dy = rem // model.grid_w
    dx = rem % model.grid_w
    lo = model.quant.lo[feat]
    hi = model.quant.hi[feat]
    cache = (ch, dy, dx, lo, hi, thr, leaf)
    model._node_lookup = cache
    return cache


def _window_grid(stack: ChannelStack, model: BoostedModel, stride_cells: int):
    if stack.grid_w < model.grid_w or stack.grid_h < model.grid_h:
        raise InvalidInput(
            f"stack grid {stack.grid_w}x{stack.grid_h} smaller than model grid "
            f"{model.grid_w}x{model.grid_h}"
        )
    xs = np.arange(0, stack.grid_w - model.grid_w + 1, stride_cells)
    ys = np.arange(0, stack.grid_h - model.grid_h + 1, stride_cells)
    cx, cy = np.meshgrid(xs, ys)
    return cx.ravel(), cy.ravel()


def _cascade_sweep(stack: ChannelStack, model: BoostedModel, cx, cy, use_cascade=True):
    """Soft-cascade scores for windows anchored at channel cells (cx, cy).

    Returns (scores, alive): alive windows ran every tree; scores of rejected
    windows hold the partial sum at rejection.
    """
    ch, dy, dx, lo, hi, thr, leaf = _node_lookup(model)
    thresholds = model.cascade_thresholds()
    data = stack.data
    n = cx.shape[0]
    scores = np.zeros(n, dtype=np.float64)
    alive = np.ones(n, dtype=bool)
    depth = model.depth
    n_internal = (1 << depth) - 1
    for t in range(model.n_trees):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        wy = cy[idx]
        wx = cx[idx]
        node = np.zeros(idx.size, dtype=np.intp)
        for _ in range(depth):
            v = data[ch[t, node], wy + dy[t, node], wx + dx[t, node]]
            bins = quantize_raw(v, lo[t, node], hi[t, node])
            node = 2 * node + 1 + (bins > thr[t, node])
        out = leaf[t, node - n_internal].astype(np.float64)
        scores[idx] += model.nu * model.omegas[t] * out
        if use_cascade:
            alive[idx] = scores[idx] >= thresholds[t]
    return scores, alive


def _window_responses(stack: ChannelStack, model: BoostedModel, cx, cy) -> np.ndarray:
    """Raw +-1 outputs of every tree for windows anchored at (cx, cy)."""
    ch, dy, dx, lo, hi, thr, leaf = _node_lookup(model)
    data = stack.data
    depth = model.depth
    n_internal = (1 << depth) - 1
    out = np.empty((cx.shape[0], model.n_trees), dtype=np.int8)
    for t in range(model.n_trees):
        node = np.zeros(cx.shape[0], dtype=np.intp)
        for _ in range(depth):
            v = data[ch[t, node], cy + dy[t, node], cx + dx[t, node]]
            bins = quantize_raw(v, lo[t, node], hi[t, node])
            node = 2 * node + 1 + (bins > thr[t, node])
        out[:, t] = leaf[t, node - n_internal]
    return out


def scan(
    stack: ChannelStack,
    model: BoostedModel,
    stride_cells: int = 1,
    pauc: PaucModel | None = None,
    score_threshold: float | None = None,
    use_cascade: bool = True,
):
    """Score every grid-aligned window of a level stack through the cascade.

    Survivors above the final-score threshold (default: the cascade reject
    threshold) are emitted in row-major window order, in level pixel
    coordinates.  With a calibrator attached, survivor scores are replaced by
    the calibrated dot product.
    """
    cx, cy = _window_grid(stack, model, stride_cells)
    scores, alive = _cascade_sweep(stack, model, cx, cy, use_cascade=use_cascade)
    threshold = model.cascade_const * model.nu if score_threshold is None else score_threshold
    keep = alive & (scores >= threshold)
    kx, ky = cx[keep], cy[keep]
    out_scores = scores[keep]
    if pauc is not None and kx.size:
        responses = _window_responses(stack, model, kx, ky)
        out_scores = responses.astype(np.float64) @ pauc.w
    win_w = float(model.window_w)
    win_h = float(model.window_h)
    return [
        Detection(float(x * CELL), float(y * CELL), win_w, win_h, float(s))
        for x, y, s in zip(kx, ky, out_scores)
    ]


def overlap_min_area(a: Detection, b: Detection) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return (iw * ih) / min(a.w * a.h, b.w * b.h)


def nms_greedy(dets, overlap: float = 0.65):
    """Greedy suppression under the intersection-over-min-area criterion.

    Boxes are visited by descending score; a box is kept iff its overlap with
    every previously kept box is <= the threshold.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: list[Detection] = []
    for i in order:
        d = dets[i]
        if all(overlap_min_area(d, k) <= overlap for k in kept):
            kept.append(d)
    return kept


def detect(
    img: RasterImage,
    model: BoostedModel,
    pauc: PaucModel | None = None,
    spec: PyramidSpec | None = None,
    stride_cells: int = 1,
    nms_overlap: float = 0.65,
    score_threshold: float | None = None,
    threads: int = 1,
):
    """Full pipeline: pyramid -> channels -> cascade scan -> NMS.

    Level detections are mapped back to original-image pixels by dividing by
    the level's scale factor.  Deterministic for fixed inputs.
    """
    spec = spec or PyramidSpec()
    factors = pyramid_factors(img.width, img.height, model.window_w, model.window_h, spec)

    def run_level(args):
        index, f = args
        level = resample(img, int(img.width * f), int(img.height * f))
        stack = assemble(level, model.config, model.pool)
        dets = scan(stack, model, stride_cells, pauc=pauc, score_threshold=score_threshold)
        return [
            Detection(d.x / f, d.y / f, d.w / f, d.h / f, d.score, scale_index=index)
            for d in dets
        ]

    jobs = list(enumerate(factors))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as tpe:
            per_level = list(tpe.map(run_level, jobs))
    else:
        per_level = [run_level(j) for j in jobs]
    merged = [d for dets in per_level for d in dets]
    return nms_greedy(merged, nms_overlap)


def mine_hard_negatives(
    model: BoostedModel,
    images,
    cap: int,
    spec: PyramidSpec | None = None,
    stride_cells: int = 1,
) -> np.ndarray:
    """Top-scoring cascade survivors on negative images, as raw feature rows.

    Scans every pyramid level of every image, ranks all surviving windows by
    score (ties broken by position for determinism), then re-extracts the raw
    level-stack features of the top `cap` windows.
    """
    spec = spec or PyramidSpec()
    candidates = []  # (-score, img_idx, level_idx, cy, cx)
    for i, img in enumerate(images):
        factors = pyramid_factors(img.width, img.height, model.window_w, model.window_h, spec)
        for li, f in enumerate(factors):
            level = resample(img, int(img.width * f), int(img.height * f))
            stack = assemble(level, model.config, model.pool)
            cx, cy = _window_grid(stack, model, stride_cells)
            scores, alive = _cascade_sweep(stack, model, cx, cy)
            keep = alive & (scores >= model.cascade_const * model.nu)
            for s, x, y in zip(scores[keep], cx[keep], cy[keep]):
                candidates.append((-float(s), i, li, int(y), int(x)))
    candidates.sort()
    chosen = candidates[:cap]
    if not chosen:
        return np.empty((0, model.n_features), dtype=np.float32)

    feats = np.empty((len(chosen), model.n_features), dtype=np.float32)
    by_level: dict = {}
    for row, (_, i, li, y, x) in enumerate(chosen):
        by_level.setdefault((i, li), []).append((row, y, x))
    for (i, li), wins in sorted(by_level.items()):
        img = images[i]
        factors = pyramid_factors(img.width, img.height, model.window_w, model.window_h, spec)
        f = factors[li]
        level = resample(img, int(img.width * f), int(img.height * f))
        stack = assemble(level, model.config, model.pool)
        for row, y, x in wins:
            crop = stack.data[:, y : y + model.grid_h, x : x + model.grid_w]
            feats[row] = crop.ravel()
    return feats
