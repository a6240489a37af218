"""Pure-Python implementations of the hot kernels.

These mirror ``_kernels.pyx`` operation for operation so both backends agree
bit for bit.  They are used whenever the compiled extension is unavailable or
``DDGAN_PURE_PYTHON=1`` is set.
"""

import math

import numpy as np


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, step):
    """In-place Adam update of flat float64 arrays; ``step`` is 1-based."""
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def query_scores(relevance, n_relevant, e_cutoff):
    """Per-query retrieval scores.

    relevance : (q, n) uint8 array, row i is the relevance of query i's ranking.
    n_relevant : (q,) int64 array of relevant gallery sizes (>= 1).
    e_cutoff : rank cutoff for the E-measure (clipped to n).

    Returns ``(scores, pr)`` where ``scores[:, :]`` holds NN, FT, ST, E, DCG, AP
    and ``pr`` the 11-point interpolated precision per query.
    """
    relevance = np.asarray(relevance, dtype=np.uint8)
    q, n = relevance.shape
    scores = np.zeros((q, 6), dtype=np.float64)
    pr = np.zeros((q, 11), dtype=np.float64)
    cut = min(e_cutoff, n)
    for qi in range(q):
        rel = relevance[qi].tolist()
        r = int(n_relevant[qi])
        hits = 0
        ft_hits = st_hits = e_hits = 0
        dcg = 0.0
        ap_sum = 0.0
        precisions = []
        for i in range(n):
            k = i + 1
            if rel[i]:
                hits += 1
                p = hits / k
                ap_sum += p
                precisions.append(p)
                if k == 1:
                    dcg += 1.0
                else:
                    dcg += 1.0 / math.log2(k)
            if k == r:
                ft_hits = hits
            if k == 2 * r:
                st_hits = hits
            if k == cut:
                e_hits = hits
        if r > n:
            ft_hits = hits
        if 2 * r > n:
            st_hits = hits
        ideal = 0.0
        for k in range(1, r + 1):
            if k == 1:
                ideal += 1.0
            else:
                ideal += 1.0 / math.log2(k)
        row = scores[qi]
        row[0] = float(rel[0]) if n else 0.0
        row[1] = ft_hits / r
        row[2] = st_hits / r
        if e_hits:
            prec = e_hits / cut
            rec = e_hits / r
            row[3] = 2.0 / (1.0 / prec + 1.0 / rec)
        row[4] = dcg / ideal
        row[5] = ap_sum / hits if hits else 0.0
        # Suffix maxima of precision over relevant ranks.
        for h in range(hits - 2, -1, -1):
            if precisions[h + 1] > precisions[h]:
                precisions[h] = precisions[h + 1]
        for j in range(11):
            need = (j * r + 9) // 10  # smallest hit count with recall >= j/10
            if need < 1:
                need = 1
            if need <= hits:
                pr[qi, j] = precisions[need - 1]
    return scores, pr
