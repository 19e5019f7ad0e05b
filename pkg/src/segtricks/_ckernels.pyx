# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.  Signatures mirror ``_pykernels`` one to one."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY

cnp.import_array()


def box_sum(double[:, ::1] x, Py_ssize_t r):
    """Window sums over (2r+1)^2 windows clipped at the raster border."""
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1]
    cdef Py_ssize_t i, j, y0, y1, x0, x1
    integ_arr = np.zeros((h + 1, w + 1), dtype=np.float64)
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] s = integ_arr
    cdef double[:, ::1] out = out_arr
    cdef double row
    for i in range(h):
        row = 0.0
        for j in range(w):
            row += x[i, j]
            s[i + 1, j + 1] = s[i, j + 1] + row
    for i in range(h):
        y0 = i - r if i >= r else 0
        y1 = i + r + 1 if i + r + 1 <= h else h
        for j in range(w):
            x0 = j - r if j >= r else 0
            x1 = j + r + 1 if j + r + 1 <= w else w
            out[i, j] = s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0]
    return out_arr


cdef inline Py_ssize_t _find(Py_ssize_t[::1] parent, Py_ssize_t a) noexcept nogil:
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


cdef inline void _union(Py_ssize_t[::1] parent, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    if a < b:
        parent[b] = a
    elif b < a:
        parent[a] = b


def label8(cnp.uint8_t[:, ::1] m):
    """8-connected labelling; labels 1..n numbered by first pixel in raster order."""
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1]
    cdef Py_ssize_t i, j, k, lab, nxt = 1, final = 0
    prov_arr = np.zeros((h, w), dtype=np.intp)
    cdef Py_ssize_t[:, ::1] prov = prov_arr
    parent_arr = np.arange(h * w // 2 + 2, dtype=np.intp)
    cdef Py_ssize_t[::1] parent = parent_arr
    for i in range(h):
        for j in range(w):
            if not m[i, j]:
                continue
            lab = 0
            if i > 0:
                if j > 0 and prov[i - 1, j - 1]:
                    lab = prov[i - 1, j - 1]
                if prov[i - 1, j]:
                    if lab:
                        _union(parent, lab, prov[i - 1, j])
                    else:
                        lab = prov[i - 1, j]
                if j + 1 < w and prov[i - 1, j + 1]:
                    if lab:
                        _union(parent, lab, prov[i - 1, j + 1])
                    else:
                        lab = prov[i - 1, j + 1]
            if j > 0 and prov[i, j - 1]:
                if lab:
                    _union(parent, lab, prov[i, j - 1])
                else:
                    lab = prov[i, j - 1]
            if not lab:
                if nxt >= parent.shape[0]:
                    parent_arr = np.concatenate(
                        [parent_arr, np.arange(parent.shape[0], 2 * parent.shape[0], dtype=np.intp)]
                    )
                    parent = parent_arr
                lab = nxt
                nxt += 1
            prov[i, j] = lab
    remap_arr = np.zeros(nxt, dtype=np.intp)
    cdef Py_ssize_t[::1] remap = remap_arr
    out_arr = np.zeros((h, w), dtype=np.int32)
    cdef int[:, ::1] out = out_arr
    for i in range(h):
        for j in range(w):
            lab = prov[i, j]
            if not lab:
                continue
            k = _find(parent, lab)
            if remap[k] == 0:
                final += 1
                remap[k] = final
            out[i, j] = <int>remap[k]
    return out_arr, final


def brute_force_ncut(double[:, ::1] W):
    """Exhaustive Ncut minimum with node 0 pinned to side B.

    Codes enumerate assignments of nodes 1..n-1 with node 1 as the most
    significant bit, so increasing codes are lexicographically increasing
    assignments; the first strict minimum is kept.
    """
    cdef Py_ssize_t n = W.shape[0]
    cdef Py_ssize_t i, j, shift = n - 1
    cdef long long code, best_code = -1, ncodes = (<long long>1) << (n - 1)
    cdef double cut_ab, cut_ba, assoc_a, assoc_b, val, best = INFINITY
    deg_arr = np.asarray(W).sum(axis=1)
    cdef double[::1] deg = deg_arr
    side_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] side = side_arr
    for code in range(1, ncodes):
        for i in range(1, n):
            side[i] = (code >> (shift - i)) & 1
        cut_ab = 0.0
        cut_ba = 0.0
        assoc_a = 0.0
        assoc_b = 0.0
        for i in range(n):
            if side[i]:
                assoc_a += deg[i]
                for j in range(n):
                    if not side[j]:
                        cut_ab += W[i, j]
            else:
                assoc_b += deg[i]
                for j in range(n):
                    if side[j]:
                        cut_ba += W[i, j]
        if assoc_a <= 0.0 or assoc_b <= 0.0:
            continue
        val = cut_ab / assoc_a + cut_ba / assoc_b
        if best_code < 0 or val < best - 1e-12 * (best if best > 1.0 else 1.0):
            best = val
            best_code = code
    return best_code, best


def jacobi_eigh(double[:, ::1] a_in, double tol, Py_ssize_t max_sweeps):
    """Cyclic Jacobi eigensolver for symmetric matrices.

    Returns ``(eigenvalues, eigenvectors, sweeps, converged)``; eigenvectors
    are the columns of the second array, unsorted.
    """
    cdef Py_ssize_t n = a_in.shape[0]
    cdef Py_ssize_t p, q, k, sweep = 0
    a_arr = np.array(a_in, dtype=np.float64, copy=True)
    v_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] v = v_arr
    cdef double off, scale = 0.0, theta, t, c, s, apq, akp, akq
    cdef bint converged = False
    for p in range(n):
        for q in range(n):
            scale += a[p, q] * a[p, q]
    scale = sqrt(scale)
    if scale == 0.0:
        return np.zeros(n), v_arr, 0, True
    while True:
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if sqrt(2.0 * off) <= tol * scale:
            converged = True
            break
        if sweep >= max_sweeps:
            break
        sweep += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if fabs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    if k == p or k == q:
                        continue
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[p, k] = a[k, p]
                    a[k, q] = s * akp + c * akq
                    a[q, k] = a[k, q]
                a[p, p] = a[p, p] - t * apq
                a[q, q] = a[q, q] + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    akp = v[k, p]
                    akq = v[k, q]
                    v[k, p] = c * akp - s * akq
                    v[k, q] = s * akp + c * akq
    return np.diagonal(a_arr).copy(), v_arr, sweep, converged


def gtv_loss_grad(cnp.intp_t[::1] ei, cnp.intp_t[::1] ej, double[::1] aw, double[::1] s):
    cdef Py_ssize_t m = ei.shape[0], k
    cdef double d, loss = 0.0
    grad_arr = np.zeros(s.shape[0], dtype=np.float64)
    cdef double[::1] grad = grad_arr
    for k in range(m):
        d = s[ei[k]] - s[ej[k]]
        loss += aw[k] * d * d
        grad[ei[k]] += aw[k] * d
        grad[ej[k]] -= aw[k] * d
    return 0.5 * loss, grad_arr
