"""Pure numpy/scipy versions of the compiled kernels in ``_ckernels.pyx``."""
import numpy as np
from scipy import ndimage


def box_sum(x, r):
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape
    s = np.zeros((h + 1, w + 1))
    s[1:, 1:] = x.cumsum(0).cumsum(1)
    y0 = np.clip(np.arange(h) - r, 0, h)
    y1 = np.clip(np.arange(h) + r + 1, 0, h)
    x0 = np.clip(np.arange(w) - r, 0, w)
    x1 = np.clip(np.arange(w) + r + 1, 0, w)
    return (s[np.ix_(y1, x1)] - s[np.ix_(y0, x1)]) - (s[np.ix_(y1, x0)] - s[np.ix_(y0, x0)])


def label8(m):
    labels, count = ndimage.label(np.asarray(m, dtype=bool), structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return labels.astype(np.int32), 0
    flat = labels.ravel()
    fg = np.flatnonzero(flat)
    _, first = np.unique(flat[fg], return_index=True)
    # renumber by position of each component's first pixel in raster order
    order = np.argsort(fg[first], kind="stable")
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, count + 1, dtype=np.int32)
    return remap[labels].astype(np.int32), int(count)


def brute_force_ncut(W):
    W = np.asarray(W, dtype=np.float64)
    n = W.shape[0]
    codes = np.arange(1, 1 << (n - 1), dtype=np.int64)
    shifts = np.arange(n - 2, -1, -1, dtype=np.int64)
    side = np.zeros((codes.size, n))
    side[:, 1:] = (codes[:, None] >> shifts[None, :]) & 1
    other = 1.0 - side
    deg = W.sum(axis=1)
    cut_ab = np.einsum("ki,kj,ij->k", side, other, W, optimize=True)
    cut_ba = np.einsum("ki,kj,ij->k", other, side, W, optimize=True)
    assoc_a = side @ deg
    assoc_b = other @ deg
    best_code, best = -1, np.inf
    ok = (assoc_a > 0) & (assoc_b > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(ok, cut_ab / np.where(ok, assoc_a, 1) + cut_ba / np.where(ok, assoc_b, 1), np.inf)
    for code, val in zip(codes[ok], vals[ok]):
        if best_code < 0 or val < best - 1e-12 * max(best, 1.0):
            best, best_code = float(val), int(code)
    return best_code, best


def jacobi_eigh(a, tol, max_sweeps):
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v, 0, True
    sweep = 0
    iu = np.triu_indices(n, 1)
    while True:
        if np.sqrt(2.0 * np.sum(a[iu] ** 2)) <= tol * scale:
            return np.diagonal(a).copy(), v, sweep, True
        if sweep >= max_sweeps:
            return np.diagonal(a).copy(), v, sweep, False
        sweep += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                app, aqq = a[p, p], a[q, q]
                colp = a[:, p].copy()
                colq = a[:, q].copy()
                a[:, p] = c * colp - s * colq
                a[:, q] = s * colp + c * colq
                a[p, :] = a[:, p]
                a[q, :] = a[:, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq


def gtv_loss_grad(ei, ej, aw, s):
    d = s[ei] - s[ej]
    ad = aw * d
    n = s.shape[0]
    grad = np.bincount(ei, ad, n) - np.bincount(ej, ad, n)
    return 0.5 * float(np.dot(ad, d)), grad
