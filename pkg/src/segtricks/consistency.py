"""Crop-zoom multi-scale consistency with a frozen, guided-filtered teacher target.

One step: crop the same rect from the image and its predicted mask and
enlarge both back to full size (student side), predict on the enlarged crop
and refine that prediction with the guided filter (teacher side), then take
the mean squared difference.  The teacher target is treated as data, so no
gradient ever reaches it.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .filtering import GuidedFilterParams, refine_mask
from .tensorio import CropRect, as_image, as_mask, crop_zoom


class CropSamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class CropPolicy:
    min_area_fraction: float = 0.3
    max_area_fraction: float = 1.0
    min_aspect: float = 3 / 4
    max_aspect: float = 4 / 3
    rng_seed: int = 0
    max_tries: int = 100

    def __post_init__(self):
        if not 0 < self.min_area_fraction <= self.max_area_fraction <= 1:
            raise ValueError("need 0 < min_area_fraction <= max_area_fraction <= 1")
        if not 0 < self.min_aspect <= self.max_aspect:
            raise ValueError("need 0 < min_aspect <= max_aspect")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConsistencyBatchResult:
    l_eq: float
    s_c: np.ndarray
    s_target: np.ndarray
    rect: CropRect


def sample_crop(policy: CropPolicy, height: int, width: int, rng: np.random.Generator) -> CropRect:
    """Random rect whose area fraction and aspect (w/h) respect the policy.

    Aspect is drawn log-uniformly; a sample is rejected if the rounded rect
    leaves the bounds, and ``CropSamplingError`` is raised after
    ``policy.max_tries`` rejections.
    """
    if height < 8 or width < 8:
        raise ValueError(f"raster {height}x{width} too small for crop sampling (need >= 8x8)")
    if policy.min_area_fraction == 1.0:
        return CropRect.full(height, width)
    total = height * width
    log_lo, log_hi = math.log(policy.min_aspect), math.log(policy.max_aspect)
    for _ in range(policy.max_tries):
        frac = rng.uniform(policy.min_area_fraction, policy.max_area_fraction)
        aspect = math.exp(rng.uniform(log_lo, log_hi))
        h = int(round(math.sqrt(frac * total / aspect)))
        w = int(round(math.sqrt(frac * total * aspect)))
        if not (1 <= h <= height and 1 <= w <= width):
            continue
        if not policy.min_area_fraction <= h * w / total <= policy.max_area_fraction:
            continue
        if not policy.min_aspect <= w / h <= policy.max_aspect:
            continue
        top = int(rng.integers(0, height - h + 1))
        left = int(rng.integers(0, width - w + 1))
        return CropRect(top, left, h, w)
    raise CropSamplingError(
        f"no crop satisfying {policy} found in a {height}x{width} raster after {policy.max_tries} tries"
    )


def equivariance_loss(s_c, s_target) -> float:
    """``(1 / hw) * ||s_c - s_target||^2``."""
    s_c = np.asarray(s_c, dtype=np.float64)
    s_target = np.asarray(s_target, dtype=np.float64)
    if s_c.shape != s_target.shape:
        raise ValueError(f"student {s_c.shape} and target {s_target.shape} differ in shape")
    d = s_c - s_target
    return float(np.sum(d * d)) / d.size


def equivariance_grad(s_c, s_target) -> np.ndarray:
    """Gradient w.r.t. the student mask only; the target is a constant."""
    s_c = np.asarray(s_c, dtype=np.float64)
    s_target = np.asarray(s_target, dtype=np.float64)
    if s_c.shape != s_target.shape:
        raise ValueError(f"student {s_c.shape} and target {s_target.shape} differ in shape")
    return 2.0 * (s_c - s_target) / s_c.size


def consistency_step(f: Callable[[np.ndarray], np.ndarray], image, s_hat, policy: CropPolicy,
                     gf_params: GuidedFilterParams | None, rng: np.random.Generator | None = None,
                     *, rect: CropRect | None = None, mode: str = "bilinear",
                     refine: bool = True) -> ConsistencyBatchResult:
    """Forward pass of the consistency criterion for a precomputed ``s_hat = f(image)``.

    ``rect`` overrides crop sampling.  ``refine=False`` drops the guided
    filter from the teacher branch.
    """
    image = as_image(image)
    s_hat = as_mask(s_hat)
    if rect is None:
        if rng is None:
            rng = np.random.default_rng(policy.rng_seed)
        rect = sample_crop(policy, s_hat.shape[0], s_hat.shape[1], rng)
    image_c, s_c = crop_zoom(image, s_hat, rect, mode)
    s_hat_c = as_mask(f(image_c))
    if refine:
        s_target = refine_mask(s_hat_c, image_c, gf_params or GuidedFilterParams())
    else:
        s_target = s_hat_c
    # stop-gradient: the target is detached data from here on
    s_target = np.array(s_target, dtype=np.float64, copy=True)
    s_target.setflags(write=False)
    return ConsistencyBatchResult(equivariance_loss(s_c, s_target), s_c, s_target, rect)
