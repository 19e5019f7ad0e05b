"""Box filtering over integral images and the gray-guided filter for masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .tensorio import as_image, as_mask, to_grayscale


@dataclass(frozen=True)
class GuidedFilterParams:
    radius: int = 4
    eps: float = 1e-4

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"guided filter radius must be an integer >= 1, got {self.radius}")
        if not self.eps > 0:
            raise ValueError(f"guided filter eps must be > 0, got {self.eps}")

    def as_dict(self) -> dict:
        return {"radius": int(self.radius), "eps": float(self.eps)}


def integral_image(x) -> np.ndarray:
    """Summed-area table ``S[i, j] = sum(x[:i+1, :j+1])`` in float64."""
    x = np.asarray(x, dtype=np.float64)
    return x.cumsum(axis=0).cumsum(axis=1)


def window_counts(shape, r: int) -> np.ndarray:
    h, w = shape
    ny = np.minimum(np.arange(h) + r, h - 1) - np.maximum(np.arange(h) - r, 0) + 1
    nx = np.minimum(np.arange(w) + r, w - 1) - np.maximum(np.arange(w) - r, 0) + 1
    return np.outer(ny, nx).astype(np.float64)


def box_sum(x, r: int) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    return kernels.box_sum(x, int(r))


def box_filter(x, r: int) -> np.ndarray:
    """Mean over the (2r+1)^2 window, clipped at the border and divided by its true area."""
    if r < 1:
        raise ValueError(f"box filter radius must be >= 1, got {r}")
    x = np.asarray(x, dtype=np.float64)
    # offset by one sample so that constant inputs reduce to exact zeros
    ref = x.flat[0]
    return box_sum(x - ref, r) / window_counts(x.shape, r) + ref


def box_filter_adjoint(g, r: int) -> np.ndarray:
    """Transpose of :func:`box_filter` viewed as a linear map."""
    g = np.asarray(g, dtype=np.float64)
    return box_sum(g / window_counts(g.shape, r), r)


def _coerce_params(params, radius, eps) -> GuidedFilterParams:
    if params is None:
        return GuidedFilterParams(
            radius=4 if radius is None else radius, eps=1e-4 if eps is None else eps
        )
    return params


def _guided_coefficients(p, guide, r, eps):
    gref = guide.flat[0]
    pref = p.flat[0]
    gc = guide - gref
    pc = p - pref
    mean_g = box_filter(gc, r)
    mean_p = box_filter(pc, r)
    var_g = box_filter(gc * gc, r) - mean_g * mean_g
    cov = box_filter(gc * pc, r) - mean_g * mean_p
    den = var_g + eps
    a = cov / den
    b = (mean_p + pref) - a * (mean_g + gref)
    return a, b, mean_g + gref, den


def _check_pair(p, guide):
    p = as_mask(p)
    guide = as_image(guide)
    if guide.shape[2] != 1:
        raise ValueError("guided filter guidance must be single-channel; convert with to_grayscale")
    guide = guide[:, :, 0]
    if guide.shape != p.shape:
        raise ValueError(f"mask {p.shape} and guide {guide.shape} differ in size")
    return p, guide


def guided_filter_raw(p, guide, params: GuidedFilterParams | None = None, *, radius=None, eps=None):
    """Guided filter output before clamping to [0, 1]."""
    params = _coerce_params(params, radius, eps)
    p, guide = _check_pair(p, guide)
    r = int(params.radius)
    a, b, _, _ = _guided_coefficients(p, guide, r, params.eps)
    return box_filter(a, r) * guide + box_filter(b, r)


def guided_filter(p, guide, params: GuidedFilterParams | None = None, *, radius=None, eps=None):
    """Filter mask ``p`` with a single-channel ``guide``; output clamped to [0, 1].

    Per window k: ``a_k = cov_k(I, p) / (var_k(I) + eps)``, ``b_k = mean_k(p) - a_k mean_k(I)``;
    the output at pixel i averages ``a_k I_i + b_k`` over all windows covering i.
    """
    return np.clip(guided_filter_raw(p, guide, params, radius=radius, eps=eps), 0.0, 1.0)


def guided_filter_vjp(p, guide, params: GuidedFilterParams, g) -> np.ndarray:
    """Gradient w.r.t. ``p`` of ``sum(g * guided_filter(p, guide))``.

    The filter is linear in ``p`` for a fixed guide; the clamp contributes a
    0/1 gate (zero where the unclamped output left [0, 1]).
    """
    p, guide = _check_pair(p, guide)
    r = int(params.radius)
    gref = guide.flat[0]
    gc = guide - gref
    mean_g = box_filter(gc, r)
    den = box_filter(gc * gc, r) - mean_g * mean_g + params.eps
    raw = guided_filter_raw(p, guide[:, :, None], params)
    g = np.asarray(g, dtype=np.float64) * ((raw > 0.0) & (raw < 1.0))
    grad_b = box_filter_adjoint(g, r)
    grad_a = box_filter_adjoint(g * guide, r) - grad_b * (mean_g + gref)
    grad_cov = grad_a / den
    # cov = B(gc * p) - B(gc) * B(p) (offsets of p cancel), b adds B(p)
    grad_mean_p = grad_b - grad_cov * mean_g
    return gc * box_filter_adjoint(grad_cov, r) + box_filter_adjoint(grad_mean_p, r)


def refine_mask(p, rgb, params: GuidedFilterParams | None = None) -> np.ndarray:
    """Guided filtering of a predicted mask with the image's grayscale as guidance."""
    return guided_filter(p, to_grayscale(rgb), params or GuidedFilterParams())
