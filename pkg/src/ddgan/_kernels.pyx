# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log2, pow
from libc.stdlib cimport malloc, free

cnp.import_array()


def adam_update(double[::1] param, double[::1] grad, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps, long step):
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double bc1 = 1.0 - pow(beta1, <double>step)
    cdef double bc2 = 1.0 - pow(beta2, <double>step)
    cdef double g, mi, vi
    cdef double c1 = 1.0 - beta1
    cdef double c2 = 1.0 - beta2
    with nogil:
        for i in range(n):
            g = grad[i]
            mi = m[i] * beta1
            mi = mi + c1 * g
            vi = v[i] * beta2
            vi = vi + c2 * (g * g)
            m[i] = mi
            v[i] = vi
            param[i] = param[i] - lr * (mi / bc1) / (sqrt(vi / bc2) + eps)


def query_scores(relevance, n_relevant, long e_cutoff):
    cdef cnp.uint8_t[:, ::1] rel = np.ascontiguousarray(relevance, dtype=np.uint8)
    cdef cnp.int64_t[::1] nrel = np.ascontiguousarray(n_relevant, dtype=np.int64)
    cdef Py_ssize_t q = rel.shape[0], n = rel.shape[1]
    scores_arr = np.zeros((q, 6), dtype=np.float64)
    pr_arr = np.zeros((q, 11), dtype=np.float64)
    cdef double[:, ::1] scores = scores_arr
    cdef double[:, ::1] pr = pr_arr
    cdef Py_ssize_t cut = e_cutoff if e_cutoff < n else n
    cdef Py_ssize_t qi, i, k, h, j, need
    cdef long r, hits, ft_hits, st_hits, e_hits
    cdef double dcg, ap_sum, ideal, p, prec, rec
    cdef double *precisions = <double *> malloc((n + 1) * sizeof(double))
    if precisions == NULL:
        raise MemoryError()
    try:
        with nogil:
            for qi in range(q):
                r = nrel[qi]
                hits = 0
                ft_hits = 0
                st_hits = 0
                e_hits = 0
                dcg = 0.0
                ap_sum = 0.0
                for i in range(n):
                    k = i + 1
                    if rel[qi, i]:
                        hits += 1
                        p = <double>hits / <double>k
                        ap_sum += p
                        precisions[hits - 1] = p
                        if k == 1:
                            dcg += 1.0
                        else:
                            dcg += 1.0 / log2(<double>k)
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
                        ideal += 1.0 / log2(<double>k)
                if n > 0:
                    scores[qi, 0] = <double>rel[qi, 0]
                scores[qi, 1] = <double>ft_hits / <double>r
                scores[qi, 2] = <double>st_hits / <double>r
                if e_hits:
                    prec = <double>e_hits / <double>cut
                    rec = <double>e_hits / <double>r
                    scores[qi, 3] = 2.0 / (1.0 / prec + 1.0 / rec)
                scores[qi, 4] = dcg / ideal
                if hits:
                    scores[qi, 5] = ap_sum / <double>hits
                h = hits - 2
                while h >= 0:
                    if precisions[h + 1] > precisions[h]:
                        precisions[h] = precisions[h + 1]
                    h -= 1
                for j in range(11):
                    need = (j * r + 9) // 10
                    if need < 1:
                        need = 1
                    if need <= hits:
                        pr[qi, j] = precisions[need - 1]
    finally:
        free(precisions)
    return scores_arr, pr_arr
