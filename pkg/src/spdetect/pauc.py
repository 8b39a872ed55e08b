"""Partial-AUC score calibration.

After boosting, a linear scoring function over the raw weak-learner outputs
is trained to minimize the empirical partial-AUC risk in a false-positive
range [alpha, beta], via a cutting-plane structural SVM.  The learned weight
vector replaces the AdaBoost coefficients when re-scoring detections.
"""

import math
from dataclasses import dataclass

import numpy as np

from .boost import BoostedModel
from .errors import InvalidInput


@dataclass(frozen=True)
class PaucModel:
    """Linear re-scoring weights over weak-learner outputs."""

    w: np.ndarray  # (T,) float64
    alpha: float
    beta: float
    C: float
    eps_cp: float
    converged: bool = True
    iterations: int = 0
    xi: float = 0.0
    objective_trace: tuple = ()  # restricted dual optimum after each iteration


def weak_responses(model: BoostedModel, qfeat: np.ndarray) -> np.ndarray:
    """Raw +-1 outputs of every tree on one quantized window (no omega, no nu)."""
    if qfeat.shape[-1] != model.n_features:
        raise InvalidInput(f"expected {model.n_features} features, got {qfeat.shape[-1]}")
    return np.array([tree.predict_one(qfeat) for tree in model.trees], dtype=np.int8)


def weak_responses_matrix(model: BoostedModel, quant: np.ndarray) -> np.ndarray:
    """(samples, trees) matrix of raw tree outputs for a quantized matrix."""
    q = np.atleast_2d(quant)
    out = np.empty((q.shape[0], model.n_trees), dtype=np.int8)
    for t, tree in enumerate(model.trees):
        out[:, t] = tree.predict(q)
    return out


def _rank_bounds(n: int, alpha: float, beta: float) -> tuple[int, int]:
    j_alpha = math.floor(alpha * n)
    j_beta = math.ceil(beta * n)
    if not 0 <= j_alpha < j_beta <= n:
        raise InvalidInput(
            f"need 0 <= floor(alpha*n) < ceil(beta*n) <= n, got ({j_alpha}, {j_beta}) for n={n}"
        )
    return j_alpha, j_beta


def pauc_risk(pos_scores, neg_scores, alpha: float, beta: float) -> int:
    """Count of (positive, ranked-negative) pairs ordered the wrong way.

    Negatives are sorted by score descending; only ranks (floor(alpha*n),
    ceil(beta*n)] contribute.  Ties count zero (strict inequality).
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise InvalidInput("pauc_risk needs nonempty score sets")
    j_alpha, j_beta = _rank_bounds(neg.size, alpha, beta)
    sel = np.sort(neg)[::-1][j_alpha:j_beta]
    sel_asc = np.sort(sel)
    # negatives strictly above each positive
    higher = sel_asc.size - np.searchsorted(sel_asc, pos, side="right")
    return int(higher.sum())


def _most_violated(pos, neg, w, j_beta: int):
    """Most violated margin-rescaled ordering constraint at the current w.

    Scores the negatives with w, keeps the top-j_beta prefix, and marks every
    (positive, prefix-negative) pair whose margin is below 1.  Returns the
    constraint vector a (mean pair feature difference), its loss b (violated
    pair fraction) and the hinge violation value at w.
    """
    m = pos.shape[0]
    neg_scores = neg @ w
    order = np.argsort(-neg_scores, kind="stable")[:j_beta]
    prefix = neg[order]
    margins = (pos @ w)[:, None] - (prefix @ w)[None, :]
    viol = margins < 1.0
    scale = 1.0 / (m * j_beta)
    pos_counts = viol.sum(axis=1).astype(np.float64)
    neg_counts = viol.sum(axis=0).astype(np.float64)
    a = scale * (pos_counts @ pos - neg_counts @ prefix)
    b = scale * float(viol.sum())
    hinge = scale * float(np.where(viol, 1.0 - margins, 0.0).sum())
    return a, b, hinge


def _solve_restricted_qp(gram, b, alpha_vec, C, tol=1e-10, max_passes=100000):
    """Maximize sum(b*alpha) - 0.5*alpha'G*alpha over the simplex sum(alpha)=C.

    Coordinate 0 is the slack constraint (a=0, b=0), so the simplex encodes
    alpha_k >= 0, sum_k alpha_k <= C.  Pairwise (SMO-style) updates move mass
    between the best ascent coordinate and the worst occupied one.
    """
    k = len(b)
    galpha = gram @ alpha_vec
    for _ in range(max_passes):
        grad = b - galpha
        p = int(np.argmax(grad))
        occupied = alpha_vec > 0
        if not occupied.any():
            break
        qcands = np.where(occupied, grad, np.inf)
        q = int(np.argmin(qcands))
        gap = grad[p] - grad[q]
        if gap <= tol or p == q:
            break
        curv = gram[p, p] - 2.0 * gram[p, q] + gram[q, q]
        step = alpha_vec[q] if curv <= 0 else min(gap / curv, alpha_vec[q])
        if step <= 0:
            break
        alpha_vec[p] += step
        alpha_vec[q] -= step
        galpha += step * (gram[:, p] - gram[:, q])
    return alpha_vec


def train_pauc_svm(
    pos,
    neg,
    alpha: float = 0.0,
    beta: float = 1.0,
    C: float = 16.0,
    eps_cp: float = 1e-3,
    max_iter: int = 1000,
) -> PaucModel:
    """Cutting-plane structural SVM for the top-prefix pairwise ranking loss.

    Minimizes 0.5*||w||^2 + C*xi subject to one margin constraint per
    generated ordering; each iteration adds the currently most violated
    constraint and re-solves the restricted dual.  Stops when the violation
    is within eps_cp of the current slack.  Only alpha = 0 is supported: the
    top-prefix search that makes constraint generation exact assumes the
    false-positive range starts at zero.
    """
    pos = np.atleast_2d(np.asarray(pos, dtype=np.float64))
    neg = np.atleast_2d(np.asarray(neg, dtype=np.float64))
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise InvalidInput("both classes must be nonempty")
    if pos.shape[1] != neg.shape[1]:
        raise InvalidInput("positive/negative feature lengths differ")
    if alpha != 0.0:
        raise InvalidInput("only alpha = 0 is supported by the constraint search")
    if not 0.0 < beta <= 1.0:
        raise InvalidInput(f"beta must be in (0, 1], got {beta}")
    if C <= 0:
        raise InvalidInput(f"C must be positive, got {C}")
    _, j_beta = _rank_bounds(neg.shape[0], alpha, beta)

    dim = pos.shape[1]
    w = np.zeros(dim, dtype=np.float64)
    rows: list[np.ndarray] = []
    bs: list[float] = []
    alpha_vec = np.array([C], dtype=np.float64)  # slack coordinate
    gram = np.zeros((1, 1), dtype=np.float64)
    converged = False
    iterations = 0
    xi = 0.0
    trace = []

    for it in range(max_iter):
        iterations = it + 1
        a, b, hinge = _most_violated(pos, neg, w, j_beta)
        xi = max(0.0, max((bk - rows[k] @ w for k, bk in enumerate(bs)), default=0.0))
        if hinge - xi <= eps_cp:
            converged = True
            break
        rows.append(a)
        bs.append(b)
        k = len(rows)
        new_gram = np.zeros((k + 1, k + 1), dtype=np.float64)
        new_gram[:k, :k] = gram
        cross = np.array([0.0] + [rows[i] @ a for i in range(k - 1)] + [a @ a])
        new_gram[k, :] = cross
        new_gram[:, k] = cross
        gram = new_gram
        alpha_vec = np.append(alpha_vec, 0.0)
        bvec = np.array([0.0] + bs)
        alpha_vec = _solve_restricted_qp(gram, bvec, alpha_vec, C)
        w = np.asarray(rows).T @ alpha_vec[1:]
        trace.append(float(bvec @ alpha_vec - 0.5 * alpha_vec @ gram @ alpha_vec))

    return PaucModel(
        w=w, alpha=alpha, beta=beta, C=C, eps_cp=eps_cp, converged=converged,
        iterations=iterations, xi=xi, objective_trace=tuple(trace),
    )


def calibrate_score(pm: PaucModel, responses: np.ndarray) -> float:
    """Dot product of the learned weights with one window's weak outputs."""
    r = np.asarray(responses, dtype=np.float64)
    if r.shape != pm.w.shape:
        raise InvalidInput(f"response length {r.shape} != weights {pm.w.shape}")
    return float(pm.w @ r)


@dataclass(frozen=True)
class CrossValResult:
    best_C: float
    best_beta: float
    rows: tuple  # (C, beta, fold, lamr) per evaluation


def cross_validate(eval_fn, grid_C, grid_beta, folds: int) -> CrossValResult:
    """Pick (C, beta) minimizing the mean per-fold validation miss-rate metric.

    eval_fn(C, beta, fold) must return the fold's log-average miss rate.
    Ties break toward the smaller C, then the smaller beta.
    """
    grid_C = list(grid_C)
    grid_beta = list(grid_beta)
    if not grid_C or not grid_beta or folds < 1:
        raise InvalidInput("grids must be nonempty and folds >= 1")
    rows = []
    best = None
    for c in sorted(grid_C):
        for b in sorted(grid_beta):
            scores = []
            for fold in range(folds):
                v = float(eval_fn(c, b, fold))
                rows.append((c, b, fold, v))
                scores.append(v)
            mean = sum(scores) / len(scores)
            if best is None or mean < best[0]:
                best = (mean, c, b)
    return CrossValResult(best_C=best[1], best_beta=best[2], rows=tuple(rows))
