"""Compiled inner loop of the boosting rounds.

Scanning every candidate's sorted values against the current sample weights
is the hot path (candidates x scans per round); plain numpy passes are too
slow at production scale, so this lives in a numba kernel. Results are pure
functions of the inputs and independent of evaluation order.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, inline="always")
def _entropy2(w_pos, w_neg):
    total = w_pos + w_neg
    if total <= 0.0:
        return 0.0
    h = 0.0
    if w_pos > 0.0:
        p = w_pos / total
        h -= p * np.log2(p)
    if w_neg > 0.0:
        q = w_neg / total
        h -= q * np.log2(q)
    return h


@njit(cache=True, nogil=True)
def best_stumps_round(sort_idx, y_sorted, cut_ok, w, active, w_pos, w_neg,
                      use_gain, out_err, out_gain, out_cut, out_pol):
    """Best cut per candidate under the current sample weights.

    Per candidate row c: scan cuts in ascending threshold order starting at
    the sentinel below the minimum (cut index -1). With use_gain=False the
    winner minimizes weighted error (same-threshold ties prefer polarity +1,
    earlier thresholds win); with use_gain=True it maximizes cross-entropy
    gain, with polarity chosen by lower error at the winning cut. Inactive
    candidates report err=inf / gain=-inf.
    """
    n_cand, n = sort_idx.shape
    parent = _entropy2(w_pos, w_neg)
    total = w_pos + w_neg
    for c in range(n_cand):
        if not active[c]:
            out_err[c] = np.inf
            out_gain[c] = -np.inf
            out_cut[c] = -1
            out_pol[c] = 1
            continue
        # Sentinel: +1 predicts all POS (err w_neg), -1 all NEG (err w_pos).
        if w_neg <= w_pos:
            best_err = w_neg
            best_pol = 1
        else:
            best_err = w_pos
            best_pol = -1
        best_gain = 0.0  # one side empty: no impurity decrease
        best_cut = -1
        best_bpos = 0.0
        best_bneg = 0.0
        cpos = 0.0
        cneg = 0.0
        for i in range(n - 1):
            wi = w[sort_idx[c, i]]
            if y_sorted[c, i] == 1:
                cpos += wi
            else:
                cneg += wi
            if cut_ok[c, i]:
                e1 = cpos + (w_neg - cneg)  # +1: below cut -> NEG, above -> POS
                e2 = (w_pos - cpos) + cneg  # -1: below cut -> POS, above -> NEG
                if use_gain:
                    below = cpos + cneg
                    g = (parent
                         - (below / total) * _entropy2(cpos, cneg)
                         - ((total - below) / total) * _entropy2(w_pos - cpos, w_neg - cneg))
                    if g < 0.0:
                        g = 0.0
                    if g > best_gain:
                        best_gain = g
                        best_cut = i
                        best_bpos = cpos
                        best_bneg = cneg
                        if e1 <= e2:
                            best_err = e1
                            best_pol = 1
                        else:
                            best_err = e2
                            best_pol = -1
                else:
                    if e1 < best_err:
                        best_err = e1
                        best_pol = 1
                        best_cut = i
                        best_bpos = cpos
                        best_bneg = cneg
                    if e2 < best_err:
                        best_err = e2
                        best_pol = -1
                        best_cut = i
                        best_bpos = cpos
                        best_bneg = cneg
        if not use_gain:
            if best_cut < 0:
                best_gain = 0.0
            else:
                below = best_bpos + best_bneg
                g = (parent
                     - (below / total) * _entropy2(best_bpos, best_bneg)
                     - ((total - below) / total)
                     * _entropy2(w_pos - best_bpos, w_neg - best_bneg))
                best_gain = g if g > 0.0 else 0.0
        out_err[c] = best_err
        out_gain[c] = best_gain
        out_cut[c] = best_cut
        out_pol[c] = best_pol
