# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: all-entity distance scoring and the TransE
margin-ranking batch update.  Both release the GIL so worker threads can run
them concurrently on shared parameter tables."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs
from libc.stdlib cimport malloc, free

cnp.import_array()

L1, L2, L2SQ, CMOD = 0, 1, 2, 3
SGD, ADAGRAD = 0, 1


cdef inline double _row_dist(const double* q, const double* e, Py_ssize_t d, int mode) noexcept nogil:
    cdef Py_ssize_t i, half
    cdef double acc = 0.0, x, y
    if mode == 0:
        for i in range(d):
            acc += fabs(q[i] - e[i])
        return acc
    if mode == 3:
        half = d // 2
        for i in range(half):
            x = q[i] - e[i]
            y = q[i + half] - e[i + half]
            acc += sqrt(x * x + y * y)
        return acc
    for i in range(d):
        x = q[i] - e[i]
        acc += x * x
    if mode == 1:
        return sqrt(acc)
    return acc


def distance_scores(Q, E, int mode):
    """Negated distances ``-dist(Q[b] - E[j])`` as a ``(len(Q), len(E))`` array."""
    if mode < 0 or mode > 3:
        raise ValueError(f"unknown distance mode {mode}")
    cdef double[:, ::1] q = np.ascontiguousarray(Q, dtype=np.float64)
    cdef double[:, ::1] e = np.ascontiguousarray(E, dtype=np.float64)
    if q.shape[1] != e.shape[1]:
        raise ValueError("dimension mismatch")
    out_arr = np.empty((q.shape[0], e.shape[0]), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t b, j, d = q.shape[1]
    with nogil:
        for b in range(q.shape[0]):
            for j in range(e.shape[0]):
                out[b, j] = -_row_dist(&q[b, 0], &e[j, 0], d, mode)
    return out_arr


cdef inline double _dist_grad(const double* v, double* g, Py_ssize_t d, int mode) noexcept nogil:
    """Writes d(-dist)/dv into g and returns -dist(v)."""
    cdef Py_ssize_t i
    cdef double acc = 0.0
    if mode == 0:
        for i in range(d):
            acc += fabs(v[i])
            g[i] = -1.0 if v[i] > 0 else (1.0 if v[i] < 0 else 0.0)
        return -acc
    for i in range(d):
        acc += v[i] * v[i]
    if mode == 2:
        for i in range(d):
            g[i] = -2.0 * v[i]
        return -acc
    acc = sqrt(acc)
    for i in range(d):
        g[i] = -v[i] / acc if acc > 0 else 0.0
    return -acc


def transe_batch_update(double[:, ::1] ent, double[:, ::1] rel,
                        double[:, ::1] ent_acc, double[:, ::1] rel_acc,
                        const cnp.int64_t[:, ::1] pos, const cnp.int64_t[:, ::1] neg,
                        int k, double margin, double lr, int mode, int optimizer, double eps):
    """One margin-ranking step of TransE on a batch, in place.

    Same contract as the numpy fallback: gradients at batch-start parameters,
    summed over violated pairs, then one SGD/Adagrad step on touched rows and
    unit-ball projection of touched entity rows.  Returns the summed hinge.
    """
    if mode == 3:
        raise ValueError("TransE kernel supports L1, L2 and squared L2 only")
    if optimizer != 0 and optimizer != 1:
        raise ValueError(f"unknown optimizer code {optimizer}")
    cdef Py_ssize_t B = pos.shape[0], d = ent.shape[1]
    cdef Py_ssize_t n_e = ent.shape[0], n_r = rel.shape[0]
    cdef Py_ssize_t max_e = min(4 * B * k, n_e), max_r = min(2 * B * k, n_r)
    cdef double loss = 0.0
    if B == 0:
        return 0.0
    cdef long long* slot_e = <long long*> malloc(n_e * sizeof(long long))
    cdef long long* slot_r = <long long*> malloc(n_r * sizeof(long long))
    cdef long long* rows_e = <long long*> malloc(max_e * sizeof(long long))
    cdef long long* rows_r = <long long*> malloc(max_r * sizeof(long long))
    cdef double* ge = <double*> malloc(max_e * d * sizeof(double))
    cdef double* gr = <double*> malloc(max_r * d * sizeof(double))
    cdef double* vp = <double*> malloc(d * sizeof(double))
    cdef double* vn = <double*> malloc(d * sizeof(double))
    cdef double* gp = <double*> malloc(d * sizeof(double))
    cdef double* gn = <double*> malloc(d * sizeof(double))
    if (slot_e == NULL or slot_r == NULL or rows_e == NULL or rows_r == NULL or ge == NULL
            or gr == NULL or vp == NULL or vn == NULL or gp == NULL or gn == NULL):
        free(slot_e); free(slot_r); free(rows_e); free(rows_r); free(ge); free(gr)
        free(vp); free(vn); free(gp); free(gn)
        raise MemoryError()
    cdef Py_ssize_t i, j, c, n_touch_e = 0, n_touch_r = 0, row
    cdef long long ph, pr, pt, nh, nr, nt
    cdef double sp, sn, hinge, x, norm
    cdef double* dst
    with nogil:
        for i in range(n_e):
            slot_e[i] = -1
        for i in range(n_r):
            slot_r[i] = -1
        for i in range(B):
            ph = pos[i, 0]; pr = pos[i, 1]; pt = pos[i, 2]
            for c in range(d):
                vp[c] = ent[ph, c] + rel[pr, c] - ent[pt, c]
            sp = _dist_grad(vp, gp, d, mode)
            for j in range(i * k, (i + 1) * k):
                nh = neg[j, 0]; nr = neg[j, 1]; nt = neg[j, 2]
                for c in range(d):
                    vn[c] = ent[nh, c] + rel[nr, c] - ent[nt, c]
                sn = _dist_grad(vn, gn, d, mode)
                hinge = margin - sp + sn
                if hinge <= 0:
                    continue
                loss += hinge
                # dL/dtheta: positive side -gp, negative side +gn
                n_touch_e = _touch(slot_e, rows_e, ge, n_touch_e, ph, d)
                dst = ge + slot_e[ph] * d
                for c in range(d):
                    dst[c] -= gp[c]
                n_touch_e = _touch(slot_e, rows_e, ge, n_touch_e, pt, d)
                dst = ge + slot_e[pt] * d
                for c in range(d):
                    dst[c] += gp[c]
                n_touch_r = _touch(slot_r, rows_r, gr, n_touch_r, pr, d)
                dst = gr + slot_r[pr] * d
                for c in range(d):
                    dst[c] -= gp[c]
                n_touch_e = _touch(slot_e, rows_e, ge, n_touch_e, nh, d)
                dst = ge + slot_e[nh] * d
                for c in range(d):
                    dst[c] += gn[c]
                n_touch_e = _touch(slot_e, rows_e, ge, n_touch_e, nt, d)
                dst = ge + slot_e[nt] * d
                for c in range(d):
                    dst[c] -= gn[c]
                n_touch_r = _touch(slot_r, rows_r, gr, n_touch_r, nr, d)
                dst = gr + slot_r[nr] * d
                for c in range(d):
                    dst[c] += gn[c]
        _step(ent, ent_acc, rows_e, ge, n_touch_e, d, lr, optimizer, eps)
        _step(rel, rel_acc, rows_r, gr, n_touch_r, d, lr, optimizer, eps)
        for i in range(n_touch_e):
            row = rows_e[i]
            norm = 0.0
            for c in range(d):
                norm += ent[row, c] * ent[row, c]
            norm = sqrt(norm)
            # slack keeps the projection idempotent under rounding
            if norm > 1.0 + 1e-12:
                for c in range(d):
                    ent[row, c] = ent[row, c] / norm
    free(slot_e); free(slot_r); free(rows_e); free(rows_r); free(ge); free(gr)
    free(vp); free(vn); free(gp); free(gn)
    return loss


cdef inline Py_ssize_t _touch(long long* slot, long long* rows, double* g, Py_ssize_t n,
                              long long row, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t c
    if slot[row] >= 0:
        return n
    slot[row] = n
    rows[n] = row
    for c in range(d):
        g[n * d + c] = 0.0
    return n + 1


cdef void _step(double[:, ::1] table, double[:, ::1] acc, long long* rows, double* g,
                Py_ssize_t n, Py_ssize_t d, double lr, int optimizer, double eps) noexcept nogil:
    cdef Py_ssize_t i, c
    cdef long long row
    cdef double x
    for i in range(n):
        row = rows[i]
        for c in range(d):
            x = g[i * d + c]
            if optimizer == 0:
                table[row, c] -= lr * x
            else:
                acc[row, c] += x * x
                table[row, c] -= lr * x / (sqrt(acc[row, c]) + eps)
