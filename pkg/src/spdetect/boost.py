"""Boosted soft-cascade classifier: quantization, decision trees, AdaBoost
with shrinkage, cascade scoring, bootstrapped training and model file I/O.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import imgcore
from ._split import best_split_per_feature
from .errors import InvalidInput
from .pooling import CHANNEL_CONFIGS, PoolConfig, assemble

DEFAULT_CASCADE = -10.0
_EPS_CLAMP = 1e-6


@dataclass(frozen=True)
class QuantTable:
    """Per-feature (lo, hi) bounds for linear 256-bin quantization."""

    lo: np.ndarray  # (d,) float32
    hi: np.ndarray  # (d,) float32

    @property
    def n_features(self) -> int:
        return self.lo.shape[0]


def quantize_raw(values, lo, hi) -> np.ndarray:
    """Map values to bins floor(255 * clamp((v - lo)/(hi - lo), 0, 1)).

    Degenerate ranges (hi <= lo) map to bin 0.  Used identically by the
    training-matrix path and the per-node window-scan path so both produce
    the same bins bit for bit.
    """
    v = np.asarray(values, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    span = hi - lo
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(span > 0, np.clip((v - lo) / span, 0.0, 1.0), 0.0)
    return np.floor(255.0 * x).astype(np.uint8)


def fit_quantizer(features: np.ndarray) -> QuantTable:
    """Per-feature min/max bounds over a training matrix (samples x d)."""
    feats = np.asarray(features)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise InvalidInput("fit_quantizer needs a nonempty (samples, features) matrix")
    return QuantTable(
        feats.min(axis=0).astype(np.float32), feats.max(axis=0).astype(np.float32)
    )


def quantize(table: QuantTable, features: np.ndarray) -> np.ndarray:
    feats = np.asarray(features)
    if feats.shape[-1] != table.n_features:
        raise InvalidInput(
            f"feature length {feats.shape[-1]} != quantizer length {table.n_features}"
        )
    return quantize_raw(feats, table.lo, table.hi)


@dataclass(frozen=True)
class DecisionTree:
    """Complete binary decision tree over quantized features.

    Heap layout: internal node i has children 2i+1 and 2i+2; a sample goes
    left iff its bin is <= the node threshold.  Leaves hold +1/-1.
    """

    depth: int
    feature: np.ndarray  # (2^depth - 1,) int32
    threshold: np.ndarray  # (2^depth - 1,) uint8
    leaf: np.ndarray  # (2^depth,) int8

    @property
    def n_internal(self) -> int:
        return (1 << self.depth) - 1

    def predict(self, quant: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(quant)
        node = np.zeros(q.shape[0], dtype=np.intp)
        rows = np.arange(q.shape[0])
        for _ in range(self.depth):
            bins = q[rows, self.feature[node]]
            node = 2 * node + 1 + (bins > self.threshold[node])
        return self.leaf[node - self.n_internal].astype(np.int8)

    def predict_one(self, qvec: np.ndarray) -> int:
        node = 0
        for _ in range(self.depth):
            go_right = qvec[self.feature[node]] > self.threshold[node]
            node = 2 * node + 1 + int(go_right)
        return int(self.leaf[node - self.n_internal])


def train_tree(
    quant: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    depth: int,
    quant_t: np.ndarray | None = None,
) -> DecisionTree:
    """Greedy top-down tree on 256-bin weighted class histograms.

    Ties in the split search break toward the lowest feature index, then the
    lowest threshold.  Pure or unsplittable nodes become pass-through splits
    (feature 0, threshold 255) so the tree stays complete; empty leaves
    inherit the majority label of their parent (ties vote +1).
    """
    q = np.ascontiguousarray(quant, dtype=np.uint8)
    y = np.asarray(labels)
    w = np.asarray(weights, dtype=np.float64)
    if w.min() < 0 or w.sum() <= 0:
        raise InvalidInput("weights must be nonnegative with positive sum")
    if depth < 1:
        raise InvalidInput("depth must be >= 1")
    if quant_t is None:
        quant_t = np.ascontiguousarray(q.T)
    n, d = q.shape
    wpos = np.where(y > 0, w, 0.0)
    wneg = np.where(y > 0, 0.0, w)

    n_internal = (1 << depth) - 1
    n_nodes = 2 * n_internal + 1
    feature = np.zeros(n_internal, dtype=np.int32)
    threshold = np.full(n_internal, 255, dtype=np.uint8)
    members: list = [None] * n_nodes
    majority = np.ones(n_nodes, dtype=np.int8)
    members[0] = np.arange(n, dtype=np.int64)

    best_err = np.empty(d, dtype=np.float64)
    best_thr = np.empty(d, dtype=np.int64)

    for node in range(n_nodes):
        sidx = members[node]
        if sidx is None or sidx.size == 0:
            sidx = np.empty(0, dtype=np.int64)
            members[node] = sidx
            parent_maj = majority[(node - 1) // 2] if node > 0 else 1
            majority[node] = parent_maj
        else:
            tp = wpos[sidx].sum()
            tn = wneg[sidx].sum()
            majority[node] = 1 if tp >= tn else -1
        if node >= n_internal:
            continue
        tp = wpos[sidx].sum() if sidx.size else 0.0
        tn = wneg[sidx].sum() if sidx.size else 0.0
        if sidx.size == 0 or tp == 0.0 or tn == 0.0:
            # pure or empty: pass-through split, both children same label
            members[2 * node + 1] = sidx
            members[2 * node + 2] = np.empty(0, dtype=np.int64)
            continue
        best_split_per_feature(quant_t, sidx, wpos, wneg, tp, tn, best_err, best_thr)
        f = int(np.argmin(best_err))
        t = int(best_thr[f])
        feature[node] = f
        threshold[node] = t
        go_left = quant_t[f, sidx] <= t
        members[2 * node + 1] = sidx[go_left]
        members[2 * node + 2] = sidx[~go_left]

    leaf = majority[n_internal:].copy()
    return DecisionTree(depth, feature, threshold, leaf)


@dataclass
class TrainStats:
    """Per-round diagnostics from one AdaBoost run."""

    errors: np.ndarray  # weighted error per accepted round
    losses: np.ndarray  # exponential training loss after each round
    final_scores: np.ndarray  # streamed F_T per training sample
    stopped_early: bool = False


@dataclass
class BoostedModel:
    """Ordered trees with coefficients, shrinkage and soft-cascade thresholds."""

    window_w: int
    window_h: int
    config: str
    depth: int
    nu: float
    cascade_const: float
    quant: QuantTable
    trees: list
    omegas: np.ndarray  # (T,) float64
    pool: PoolConfig = field(default_factory=PoolConfig)
    luv_scale: dict = field(default_factory=lambda: dict(imgcore.LUV_SCALE))
    seed: int | None = None
    pauc_w: np.ndarray | None = None
    pauc_meta: tuple | None = None  # (alpha, beta, C) the weights were trained at
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return self.quant.n_features

    @property
    def grid_w(self) -> int:
        return self.window_w // 4

    @property
    def grid_h(self) -> int:
        return self.window_h // 4

    def cascade_thresholds(self) -> np.ndarray:
        return np.full(self.n_trees, self.cascade_const * self.nu, dtype=np.float64)

    def packed_trees(self):
        """(feature, threshold, leaf) stacked over trees, for batch evaluation."""
        if self._packed is None:
            feat = np.stack([t.feature for t in self.trees])
            thr = np.stack([t.threshold for t in self.trees])
            leaf = np.stack([t.leaf for t in self.trees])
            self._packed = (feat, thr, leaf)
        return self._packed


def score_window(model: BoostedModel, qfeat: np.ndarray):
    """Sequential soft-cascade scoring of one quantized window.

    Returns (score, passed, trees_evaluated); scoring stops at the first
    partial sum below the stage threshold.
    """
    if qfeat.shape[-1] != model.n_features:
        raise InvalidInput(f"expected {model.n_features} features, got {qfeat.shape[-1]}")
    thresholds = model.cascade_thresholds()
    score = 0.0
    for t, tree in enumerate(model.trees):
        score += model.nu * model.omegas[t] * tree.predict_one(qfeat)
        if score < thresholds[t]:
            return score, False, t + 1
    return score, True, model.n_trees


def decision_scores(model: BoostedModel, quant: np.ndarray) -> np.ndarray:
    """Cascade-free final scores F_T for a quantized sample matrix."""
    q = np.atleast_2d(quant)
    scores = np.zeros(q.shape[0], dtype=np.float64)
    for t, tree in enumerate(model.trees):
        scores += model.nu * model.omegas[t] * tree.predict(q).astype(np.float64)
    return scores


def adaboost(
    quant: np.ndarray,
    labels: np.ndarray,
    n_rounds: int,
    nu: float = 0.1,
    depth: int = 3,
    cascade_const: float = DEFAULT_CASCADE,
) -> tuple[BoostedModel, TrainStats]:
    """Discrete AdaBoost with shrinkage nu in both the score and the reweighting.

    Round t fits a depth-d tree on the current weights, sets
    omega_t = 0.5*ln((1-eps)/eps) with eps clamped to [1e-6, 0.5-1e-6], and
    updates w_i <- w_i * exp(-y_i * nu * omega_t * h_t(x_i)).  Training stops
    early (with a warning) if the weak learner cannot beat chance.
    """
    if n_rounds < 1:
        raise InvalidInput("n_rounds must be >= 1")
    if not 0.0 < nu <= 1.0:
        raise InvalidInput(f"shrinkage must be in (0, 1], got {nu}")
    q = np.ascontiguousarray(quant, dtype=np.uint8)
    y = np.asarray(labels, dtype=np.int8)
    n = q.shape[0]
    if not ((y > 0).any() and (y < 0).any()):
        raise InvalidInput("training set needs both classes")
    quant_t = np.ascontiguousarray(q.T)

    w = np.full(n, 1.0 / n, dtype=np.float64)
    yf = y.astype(np.float64)
    scores = np.zeros(n, dtype=np.float64)
    trees: list[DecisionTree] = []
    omegas: list[float] = []
    errors: list[float] = []
    losses: list[float] = []
    stopped = False

    for _ in range(n_rounds):
        tree = train_tree(q, y, w, depth, quant_t=quant_t)
        pred = tree.predict(q).astype(np.float64)
        eps_raw = float(w[pred != yf].sum())
        if eps_raw >= 0.5 - _EPS_CLAMP:
            warnings.warn(
                f"weak learner error {eps_raw:.6f} not better than chance; "
                f"stopping after {len(trees)} rounds",
                stacklevel=2,
            )
            stopped = True
            break
        eps = min(max(eps_raw, _EPS_CLAMP), 0.5 - _EPS_CLAMP)
        omega = 0.5 * np.log((1.0 - eps) / eps)
        trees.append(tree)
        omegas.append(omega)
        errors.append(eps_raw)
        scores += nu * omega * pred
        losses.append(float(np.mean(np.exp(-yf * scores))))
        w *= np.exp(-yf * nu * omega * pred)
        w /= w.sum()

    model = BoostedModel(
        window_w=0,
        window_h=0,
        config="",
        depth=depth,
        nu=nu,
        cascade_const=cascade_const,
        quant=QuantTable(np.zeros(q.shape[1], np.float32), np.zeros(q.shape[1], np.float32)),
        trees=trees,
        omegas=np.asarray(omegas, dtype=np.float64),
    )
    stats = TrainStats(
        np.asarray(errors), np.asarray(losses), scores, stopped_early=stopped
    )
    return model, stats


def window_features(img: imgcore.RasterImage, config: str, pool: PoolConfig) -> np.ndarray:
    """Raw (unquantized) plane-major feature vector of one window-sized image."""
    return assemble(img, config, pool).data.ravel().astype(np.float32)


def _random_negative_crops(neg_images, count, window_w, window_h, rng):
    crops = []
    attempts = 0
    while len(crops) < count and attempts < count * 4 + 16:
        attempts += 1
        img = neg_images[int(rng.integers(len(neg_images)))]
        if img.width < window_w or img.height < window_h:
            continue
        x = int(rng.integers(img.width - window_w + 1))
        y = int(rng.integers(img.height - window_h + 1))
        crops.append(imgcore.RasterImage(img.data[:, y : y + window_h, x : x + window_w]))
    return crops


@dataclass
class StageReport:
    stage: int
    n_pos: int
    n_neg: int
    mined: int
    final_loss: float


@dataclass
class BootstrapResult:
    model: BoostedModel
    hard_negatives: np.ndarray  # final-stage negative feature matrix (raw floats)
    reports: list


def bootstrap_train(
    pos_windows,
    neg_images,
    *,
    config: str,
    window_w: int = 64,
    window_h: int = 128,
    n_rounds: int = 2048,
    nu: float = 0.1,
    depth: int = 3,
    cascade_const: float = DEFAULT_CASCADE,
    stages: int = 3,
    neg_cap_initial: int = 5000,
    neg_cap_stage: int = 5000,
    seed: int = 0,
    pool: PoolConfig | None = None,
    pyramid=None,
    stride_cells: int = 1,
    progress=None,
) -> BootstrapResult:
    """Train with hard-negative bootstrapping.

    Stage 0 trains on uniform-random negative crops; each later stage scans
    the negative images with the current detector, adds the top-scoring false
    positives (up to the per-stage cap, accumulating) and retrains from
    scratch with a fresh quantizer.
    """
    if config not in CHANNEL_CONFIGS:
        raise InvalidInput(f"unknown channel config {config!r}")
    if window_w % 4 or window_h % 4 or window_w < 4 or window_h < 4:
        raise InvalidInput(
            f"window dims must be positive multiples of the 4 px channel cell, "
            f"got {window_w}x{window_h}"
        )
    if not pos_windows:
        raise InvalidInput("no positive windows")
    if not neg_images:
        raise InvalidInput("no negative images")
    for img in pos_windows:
        if img.width != window_w or img.height != window_h:
            raise InvalidInput(
                f"positive window {img.width}x{img.height} != model window "
                f"{window_w}x{window_h}"
            )
    pool = pool or PoolConfig()
    rng = np.random.default_rng(seed)
    say = progress or (lambda msg: None)

    say(f"extracting features for {len(pos_windows)} positives")
    pos_feats = np.stack([window_features(img, config, pool) for img in pos_windows])

    crops = _random_negative_crops(neg_images, neg_cap_initial, window_w, window_h, rng)
    if not crops:
        raise InvalidInput("negative images too small to crop the model window")
    say(f"extracting features for {len(crops)} random negative crops")
    neg_feats = np.stack([window_features(img, config, pool) for img in crops])

    model = None
    reports = []
    for stage in range(stages + 1):
        x = np.concatenate([pos_feats, neg_feats], axis=0)
        y = np.concatenate(
            [np.ones(len(pos_feats), np.int8), -np.ones(len(neg_feats), np.int8)]
        )
        table = fit_quantizer(x)
        q = quantize(table, x)
        say(
            f"stage {stage}: training {n_rounds} trees on {len(pos_feats)} pos / "
            f"{len(neg_feats)} neg"
        )
        model, stats = adaboost(q, y, n_rounds, nu=nu, depth=depth, cascade_const=cascade_const)
        model.window_w = window_w
        model.window_h = window_h
        model.config = config
        model.quant = table
        model.pool = pool
        model.seed = seed
        mined = 0
        if stage < stages:
            from .detect import mine_hard_negatives

            say(f"stage {stage}: mining hard negatives")
            new_feats = mine_hard_negatives(
                model, neg_images, cap=neg_cap_stage, spec=pyramid, stride_cells=stride_cells
            )
            mined = len(new_feats)
            if mined == 0:
                warnings.warn(f"bootstrap stage {stage + 1}: no false positives found")
            else:
                neg_feats = np.concatenate([neg_feats, new_feats], axis=0)
        loss = float(stats.losses[-1]) if len(stats.losses) else float("nan")
        reports.append(StageReport(stage, len(pos_feats), len(y) - len(pos_feats), mined, loss))
    return BootstrapResult(model, neg_feats, reports)


# ---------------------------------------------------------------------------
# Model file: versioned structured text.  Floats are written with repr() so
# a save/load round trip reproduces every score bit for bit.
# ---------------------------------------------------------------------------

_MODEL_MAGIC = "SPDETECT-MODEL 1"


def _fmt_floats(arr) -> str:
    return " ".join(repr(float(v)) for v in arr)


def save_model(model: BoostedModel, path) -> None:
    lines = [
        _MODEL_MAGIC,
        f"window {model.window_w} {model.window_h}",
        f"config {model.config}",
        f"depth {model.depth}",
        f"nu {float(model.nu)!r}",
        f"cascade {float(model.cascade_const)!r}",
        f"seed {'none' if model.seed is None else model.seed}",
        "luv " + _fmt_floats(model.luv_scale[k] for k in sorted(model.luv_scale)),
        "pool "
        + ",".join(str(s) for s in model.pool.cov_patch_sizes)
        + f" {model.pool.cov_patch_stride} {model.pool.cov_pool_region}"
        + f" {model.pool.cov_pool_stride} {model.pool.lbp_patch_size}"
        + f" {model.pool.lbp_patch_stride} {model.pool.lbp_pool_region}"
        + f" {model.pool.lbp_pool_stride}",
        f"ntrees {model.n_trees}",
        f"nfeatures {model.n_features}",
        "qlo " + _fmt_floats(model.quant.lo),
        "qhi " + _fmt_floats(model.quant.hi),
    ]
    for t, tree in enumerate(model.trees):
        nodes = " ".join(
            f"{int(f)}:{int(th)}" for f, th in zip(tree.feature, tree.threshold)
        )
        leaves = " ".join(str(int(v)) for v in tree.leaf)
        lines.append(f"tree {float(model.omegas[t])!r} | {nodes} | {leaves}")
    if model.pauc_w is not None:
        meta = model.pauc_meta or (0.0, 1.0, 16.0)
        lines.append("paucmeta " + _fmt_floats(meta))
        lines.append("pauc " + _fmt_floats(model.pauc_w))
    lines.append("end")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> BoostedModel:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _MODEL_MAGIC:
        raise InvalidInput(f"not a model file: {path}")
    fields = {}
    trees = []
    omegas = []
    pauc_w = None
    pauc_meta = None
    for line in lines[1:]:
        if line == "end":
            break
        key, _, rest = line.partition(" ")
        if key == "tree":
            om, nodes, leaves = (part.strip() for part in rest.split("|"))
            omegas.append(float(om))
            pairs = [tok.split(":") for tok in nodes.split()]
            trees.append(
                (
                    np.array([int(p[0]) for p in pairs], dtype=np.int32),
                    np.array([int(p[1]) for p in pairs], dtype=np.uint8),
                    np.array([int(v) for v in leaves.split()], dtype=np.int8),
                )
            )
        elif key == "pauc":
            pauc_w = np.array([float(v) for v in rest.split()], dtype=np.float64)
        elif key == "paucmeta":
            pauc_meta = tuple(float(v) for v in rest.split())
        else:
            fields[key] = rest
    depth = int(fields["depth"])
    win_w, win_h = (int(v) for v in fields["window"].split())
    luv_vals = [float(v) for v in fields["luv"].split()]
    luv_scale = dict(zip(sorted(imgcore.LUV_SCALE), luv_vals))
    pool_tok = fields["pool"].split()
    pool = PoolConfig(
        cov_patch_sizes=tuple(int(v) for v in pool_tok[0].split(",")),
        cov_patch_stride=int(pool_tok[1]),
        cov_pool_region=int(pool_tok[2]),
        cov_pool_stride=int(pool_tok[3]),
        lbp_patch_size=int(pool_tok[4]),
        lbp_patch_stride=int(pool_tok[5]),
        lbp_pool_region=int(pool_tok[6]),
        lbp_pool_stride=int(pool_tok[7]),
    )
    seed_tok = fields["seed"]
    model = BoostedModel(
        window_w=win_w,
        window_h=win_h,
        config=fields["config"],
        depth=depth,
        nu=float(fields["nu"]),
        cascade_const=float(fields["cascade"]),
        quant=QuantTable(
            np.array([float(v) for v in fields["qlo"].split()], dtype=np.float32),
            np.array([float(v) for v in fields["qhi"].split()], dtype=np.float32),
        ),
        trees=[DecisionTree(depth, f, t, l) for f, t, l in trees],
        omegas=np.asarray(omegas, dtype=np.float64),
        pool=pool,
        luv_scale=luv_scale,
        seed=None if seed_tok == "none" else int(seed_tok),
        pauc_w=pauc_w,
        pauc_meta=pauc_meta,
    )
    if model.n_trees != int(fields["ntrees"]) or model.n_features != int(fields["nfeatures"]):
        raise InvalidInput(f"inconsistent model file: {path}")
    return model
