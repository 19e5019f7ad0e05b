"""Graph objectives on masks: normalized cuts, graph total variation, SR consistency.

Affinity matrices are dense symmetric ``(n, n)`` arrays.  Partitions are
boolean vectors with ``True`` marking set A.  Edge lists for the total
variation terms are :class:`EdgeList` triples over flattened (row-major)
node indices, one entry per undirected edge.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from ._backend import kernels
from .tensorio import as_image


class DegeneratePartitionError(ValueError):
    """A partition side is empty or has zero association."""


class EigenSolverError(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"Jacobi eigensolver did not converge after {iterations} sweeps "
                         f"(off-diagonal residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class LossWeights:
    lambda_sr: float = 1.0
    lambda_gtv_fine: float = 1.0
    lambda_gtv_coarse: float = 1.0
    lambda_eq: float = 1.0
    sigma: float = 0.1
    tau: float = 0.2
    epsilon_aff: float = 1e-5
    eps_div: float = 1e-8

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not self.eps_div > 0:
            raise ValueError(f"eps_div must be > 0, got {self.eps_div}")
        for name in ("lambda_sr", "lambda_gtv_fine", "lambda_gtv_coarse", "lambda_eq"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def as_dict(self) -> dict:
        return asdict(self)


class EdgeList(NamedTuple):
    i: np.ndarray
    j: np.ndarray
    weight: np.ndarray

    @property
    def size(self) -> int:
        return int(self.i.shape[0])


def grid_edges(h: int, w: int):
    """4-neighbour edges of an ``h x w`` grid as index arrays (right then down)."""
    idx = np.arange(h * w).reshape(h, w)
    i = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    j = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return i.astype(np.intp), j.astype(np.intp)


def _as_affinity(W) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"affinity must be square, got {W.shape}")
    return W


def _as_partition(P, n: int) -> np.ndarray:
    P = np.asarray(P, dtype=bool)
    if P.shape != (n,):
        raise ValueError(f"partition must have {n} entries, got shape {P.shape}")
    return P


# --------------------------------------------------------------------------
# discrete normalized cut


def discrete_cut(W, P) -> float:
    W = _as_affinity(W)
    P = _as_partition(P, W.shape[0])
    if P.all() or not P.any():
        raise DegeneratePartitionError("cut needs both sides of the partition non-empty")
    return float(W[np.ix_(P, ~P)].sum())


def discrete_assoc(W, P, side: bool = True) -> float:
    """Total weight from the chosen side (``True`` = A) to every node."""
    W = _as_affinity(W)
    P = _as_partition(P, W.shape[0])
    sel = P if side else ~P
    if not sel.any():
        raise DegeneratePartitionError("assoc of an empty side")
    return float(W[sel].sum())


def discrete_ncut(W, P) -> float:
    W = _as_affinity(W)
    P = _as_partition(P, W.shape[0])
    if P.all() or not P.any():
        raise DegeneratePartitionError("ncut needs both sides of the partition non-empty")
    assoc_a = float(W[P].sum())
    assoc_b = float(W[~P].sum())
    if assoc_a <= 0 or assoc_b <= 0:
        raise DegeneratePartitionError("ncut undefined: a side has zero association")
    return float(W[np.ix_(P, ~P)].sum()) / assoc_a + float(W[np.ix_(~P, P)].sum()) / assoc_b


# --------------------------------------------------------------------------
# TokenCut affinity


def tokencut_affinity(features, tau: float = 0.2, epsilon_aff: float = 1e-5) -> np.ndarray:
    """``w_ij = 1`` where the cosine similarity of patch features exceeds tau, else eps."""
    F = np.asarray(features, dtype=np.float64)
    F = F.reshape(-1, F.shape[-1])
    norms = np.linalg.norm(F, axis=1, keepdims=True)
    Fn = F / np.where(norms > 0, norms, 1.0)
    sim = Fn @ Fn.T
    # symmetrize before thresholding so rounding can never break w_ij == w_ji
    sim = np.maximum(sim, sim.T)
    return np.where(sim > tau, 1.0, float(epsilon_aff))


# --------------------------------------------------------------------------
# soft normalized cut


class NcutTerms(NamedTuple):
    value: float
    num_a: float
    den_a: float
    num_b: float
    den_b: float
    degenerate: bool


def soft_ncut_terms(W, S, eps_div: float = 1e-8) -> NcutTerms:
    """Relaxed Ncut with its numerators/denominators.

    ``degenerate`` flags masks whose either side carries (numerically) no
    association, where the stabilizer dominates the value.
    """
    W = _as_affinity(W)
    S = np.asarray(S, dtype=np.float64).ravel()
    T = 1.0 - S
    WS = W @ S
    WT = W @ T
    deg = WS + WT
    num_a = float(S @ WT)
    num_b = float(T @ WS)
    den_a = float(S @ deg) + eps_div
    den_b = float(T @ deg) + eps_div
    value = num_a / den_a + num_b / den_b
    total = float(deg.sum())
    degenerate = min(den_a, den_b) - eps_div <= 1e-12 * max(total, 1e-300)
    return NcutTerms(value, num_a, den_a, num_b, den_b, degenerate)


def soft_ncut_loss(W, S, eps_div: float = 1e-8) -> float:
    return soft_ncut_terms(W, S, eps_div).value


def soft_ncut_grad(W, S, eps_div: float = 1e-8) -> np.ndarray:
    """Gradient of :func:`soft_ncut_loss` w.r.t. ``S`` (quotient rule, no symmetry assumed)."""
    W = _as_affinity(W)
    S = np.asarray(S, dtype=np.float64).ravel()
    T = 1.0 - S
    WS, WT = W @ S, W @ T
    WtS, WtT = W.T @ S, W.T @ T
    deg = WS + WT
    num_a, num_b = S @ WT, T @ WS
    den_a, den_b = S @ deg + eps_div, T @ deg + eps_div
    # d/dS of S^T W T and T^T W S, and of the two denominators
    d_num_a = WT - WtS
    d_num_b = WtT - WS
    return (d_num_a * den_a - num_a * deg) / den_a**2 + (d_num_b * den_b + num_b * deg) / den_b**2


# --------------------------------------------------------------------------
# graph total variation


def gtv_fine_weights(img, sigma: float = 0.1) -> EdgeList:
    """``exp(-||x_i - x_j||^2 / sigma)`` on the 4-neighbour pixel grid."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    img = as_image(img)
    h, w, c = img.shape
    i, j = grid_edges(h, w)
    flat = img.reshape(h * w, c)
    d2 = np.sum((flat[i] - flat[j]) ** 2, axis=1)
    return EdgeList(i, j, np.exp(-d2 / sigma))


def gtv_coarse_weights(W, grid_hw) -> EdgeList:
    """Affinity entries restricted to 4-neighbour adjacency on the feature grid."""
    W = _as_affinity(W)
    h, w = grid_hw
    if h * w != W.shape[0]:
        raise ValueError(f"grid {h}x{w} does not match affinity of size {W.shape[0]}")
    i, j = grid_edges(h, w)
    return EdgeList(i, j, W[i, j].copy())


def gtv_loss_grad(edges: EdgeList, s):
    s = np.ascontiguousarray(s, dtype=np.float64).ravel()
    return kernels.gtv_loss_grad(
        np.ascontiguousarray(edges.i, dtype=np.intp),
        np.ascontiguousarray(edges.j, dtype=np.intp),
        np.ascontiguousarray(edges.weight, dtype=np.float64),
        s,
    )


def gtv_loss(edges: EdgeList, s) -> float:
    """``1/2 * sum a_ij (s_i - s_j)^2``, each undirected edge listed once."""
    return float(gtv_loss_grad(edges, s)[0])


def gtv_grad(edges: EdgeList, s) -> np.ndarray:
    return gtv_loss_grad(edges, s)[1]


# --------------------------------------------------------------------------
# SR consistency


def downsample_mean(s_fine, factor: int) -> np.ndarray:
    s = np.asarray(s_fine, dtype=np.float64)
    h, w = s.shape
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"mask {h}x{w} is not divisible by factor {factor}")
    return s.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def upsample_block(g, factor: int) -> np.ndarray:
    """Adjoint of :func:`downsample_mean`."""
    g = np.asarray(g, dtype=np.float64)
    return np.kron(g, np.ones((factor, factor))) / (factor * factor)


def sr_loss_grad(s_fine, s_coarse, factor: int):
    """``||down(S_fine) - S_coarse||^2`` (sum convention) and gradients w.r.t. both."""
    down = downsample_mean(s_fine, factor)
    s_coarse = np.asarray(s_coarse, dtype=np.float64)
    if s_coarse.size != down.size:
        raise ValueError(f"coarse mask of size {s_coarse.size} does not match "
                         f"downsampled shape {down.shape}")
    s_coarse = s_coarse.reshape(down.shape)
    diff = down - s_coarse
    return float(np.sum(diff * diff)), upsample_block(2.0 * diff, factor), -2.0 * diff


def sr_loss(s_fine, s_coarse, factor: int) -> float:
    return sr_loss_grad(s_fine, s_coarse, factor)[0]


# --------------------------------------------------------------------------
# combined objective


TERM_NAMES = ("ncut", "gtv_coarse", "gtv_fine", "sr")


def sempart_total_loss(W, s_coarse, s_fine, coarse_edges: EdgeList, fine_edges: EdgeList,
                       factor: int, weights: LossWeights, *, with_grad: bool = False):
    """Weighted sum of the Ncut, coarse/fine GTV and SR terms.

    Returns ``(total, breakdown)`` where the breakdown holds the unweighted
    terms; with ``with_grad`` a third item ``(grad_coarse, grad_fine)`` is
    appended, shaped like the inputs.
    """
    s_coarse = np.asarray(s_coarse, dtype=np.float64)
    s_fine = np.asarray(s_fine, dtype=np.float64)
    ncut = soft_ncut_loss(W, s_coarse, weights.eps_div)
    gc, g_gc = gtv_loss_grad(coarse_edges, s_coarse)
    gf, g_gf = gtv_loss_grad(fine_edges, s_fine)
    sr, g_sr_f, g_sr_c = sr_loss_grad(s_fine, s_coarse, factor)
    breakdown = {"ncut": ncut, "gtv_coarse": gc, "gtv_fine": gf, "sr": sr}
    total = (ncut + weights.lambda_gtv_coarse * gc + weights.lambda_gtv_fine * gf
             + weights.lambda_sr * sr)
    if not with_grad:
        return total, breakdown
    grad_c = (soft_ncut_grad(W, s_coarse, weights.eps_div)
              + weights.lambda_gtv_coarse * g_gc).reshape(s_coarse.shape) \
        + weights.lambda_sr * g_sr_c.reshape(s_coarse.shape)
    grad_f = (weights.lambda_gtv_fine * g_gf).reshape(s_fine.shape) + weights.lambda_sr * g_sr_f
    return total, breakdown, (grad_c, grad_f)


# --------------------------------------------------------------------------
# solvers


def _code_to_partition(code: int, n: int) -> np.ndarray:
    P = np.zeros(n, dtype=bool)
    for i in range(1, n):
        P[i] = bool((code >> (n - 1 - i)) & 1)
    return P


def brute_force_min_ncut(W):
    """Exact minimum over all bipartitions (2 <= n <= 16).

    Node 0 is kept on side B; among equal values the lexicographically
    smallest assignment wins.
    """
    W = _as_affinity(W)
    n = W.shape[0]
    if not 2 <= n <= 16:
        raise ValueError(f"brute force supports 2 <= n <= 16 nodes, got {n}")
    code, value = kernels.brute_force_ncut(np.ascontiguousarray(W))
    if code < 0:
        raise DegeneratePartitionError("every bipartition has a side with zero association")
    return _code_to_partition(int(code), n), float(value)


def symmetric_eigh(A, tol: float = 1e-12, max_sweeps: int = 100, solver: str = "jacobi"):
    """Ascending eigenpairs of a symmetric matrix."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    if solver == "lapack":
        return np.linalg.eigh(A)
    if solver != "jacobi":
        raise ValueError(f"unknown eigensolver {solver!r}")
    vals, vecs, sweeps, converged = kernels.jacobi_eigh(A, tol, max_sweeps)
    if not converged:
        residual = np.linalg.norm(A @ vecs - vecs * vals[None, :])
        raise EigenSolverError(sweeps, float(residual))
    order = np.argsort(vals, kind="stable")
    return vals[order], vecs[:, order]


def _canonical(P: np.ndarray) -> np.ndarray:
    return ~P if P[0] else P


def spectral_bipartition(W, *, solver: str = "jacobi", tol: float = 1e-12, max_sweeps: int = 100):
    """Shi-Malik relaxation followed by a threshold sweep on the Fiedler vector.

    Solves ``(D - W) y = lambda D y`` through ``D^-1/2 W D^-1/2`` and evaluates
    all ``n - 1`` splits of the sorted second eigenvector, returning the one
    with the smallest discrete Ncut.  The partition is reported with node 0
    on side B.
    """
    W = _as_affinity(W)
    n = W.shape[0]
    if n < 2:
        raise ValueError("spectral bipartition needs at least 2 nodes")
    d = W.sum(axis=1)
    if np.any(d <= 0):
        raise DegeneratePartitionError("affinity has a node with zero degree")
    inv_sqrt = 1.0 / np.sqrt(d)
    norm_aff = inv_sqrt[:, None] * W * inv_sqrt[None, :]
    norm_aff = 0.5 * (norm_aff + norm_aff.T)
    # smallest eigenpairs of I - N are the largest of N
    vals, vecs = symmetric_eigh(-norm_aff, tol=tol, max_sweeps=max_sweeps, solver=solver)
    y = inv_sqrt * vecs[:, 1]
    order = np.argsort(y, kind="stable")
    best_val, best_P = math.inf, None
    P = np.zeros(n, dtype=bool)
    for k in range(1, n):
        P[order[k - 1]] = True
        try:
            val = discrete_ncut(W, P)
        except DegeneratePartitionError:
            continue
        if val < best_val:
            best_val, best_P = val, P.copy()
    if best_P is None:
        raise DegeneratePartitionError("no sweep split has positive association on both sides")
    return _canonical(best_P), best_val
