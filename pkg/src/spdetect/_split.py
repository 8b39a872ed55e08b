"""Numba kernel for the weighted 256-bin decision-stump search."""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def best_split_per_feature(quant_t, sidx, wpos, wneg, total_pos, total_neg, best_err, best_thr):
    """Scan every feature for its best threshold on one tree node.

    quant_t is the feature-major (d, n) quantized matrix, sidx the node's
    sample indices, wpos/wneg the per-sample class weights.  For each feature
    the minimal weighted error over thresholds 0..254 (go-left iff bin <=
    threshold, best leaf labeling on both sides) is written to best_err, and
    the lowest threshold attaining it to best_thr.
    """
    d = quant_t.shape[0]
    m = sidx.size
    for f in prange(d):
        hp = np.zeros(256, dtype=np.float64)
        hn = np.zeros(256, dtype=np.float64)
        row = quant_t[f]
        for k in range(m):
            s = sidx[k]
            b = row[s]
            hp[b] += wpos[s]
            hn[b] += wneg[s]
        cpl = 0.0
        cnl = 0.0
        be = np.inf
        bt = 0
        for t in range(255):
            cpl += hp[t]
            cnl += hn[t]
            left = cpl if cpl < cnl else cnl
            rp = total_pos - cpl
            rn = total_neg - cnl
            right = rp if rp < rn else rn
            err = left + right
            if err < be:
                be = err
                bt = t
        best_err[f] = be
        best_thr[f] = bt
