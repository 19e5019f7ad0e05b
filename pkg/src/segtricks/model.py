"""Desk-scale segmentation head, its objective with analytic gradients, and a trainer.

The head is a per-pixel affine map followed by a logistic:

* coarse branch: patch features + 2 coordinate channels on the feature grid;
* fine branch: bilinearly upsampled features + 2 coordinate channels + RGB at
  pixel resolution.

The objective is the normalized-cut loss stack on both branches plus the
weighted crop-zoom consistency term.  Everything is linear up to the
logistic, so the backward pass is a handful of transposed products.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .consistency import CropPolicy, equivariance_grad, equivariance_loss, sample_crop
from .filtering import GuidedFilterParams, guided_filter, guided_filter_vjp
from .graph import (
    EdgeList,
    LossWeights,
    gtv_coarse_weights,
    gtv_fine_weights,
    sempart_total_loss,
    tokencut_affinity,
)
from .metrics import binarize, iou
from .tensorio import CropRect, apply_separable, crop, crop_zoom_operator, resize_bilinear, to_grayscale

N_COORDS = 2
N_COLORS = 3

# Sum-form GTV and SR terms outweigh the soft Ncut by the pixel count; these
# rebalance them for 64x64 rasters with 8x8 patches.
TOY_WEIGHTS = {"lambda_sr": 0.03, "lambda_gtv_coarse": 0.01, "lambda_gtv_fine": 0.001}


class TrainingDivergedError(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class ToyHead:
    w_coarse: np.ndarray
    b_coarse: float
    w_fine: np.ndarray
    b_fine: float

    @property
    def feature_dim(self) -> int:
        return self.w_coarse.shape[0] - N_COORDS

    @property
    def n_params(self) -> int:
        return self.w_coarse.size + self.w_fine.size + 2

    @classmethod
    def zeros(cls, feature_dim: int) -> "ToyHead":
        return cls(np.zeros(feature_dim + N_COORDS), 0.0,
                   np.zeros(feature_dim + N_COORDS + N_COLORS), 0.0)

    @classmethod
    def random(cls, feature_dim: int, rng: np.random.Generator, scale: float = 0.5) -> "ToyHead":
        head = cls.zeros(feature_dim)
        return cls.from_vector(scale * rng.standard_normal(head.n_params), feature_dim)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w_coarse, [self.b_coarse], self.w_fine, [self.b_fine]])

    @classmethod
    def from_vector(cls, vec, feature_dim: int) -> "ToyHead":
        vec = np.asarray(vec, dtype=np.float64)
        nc = feature_dim + N_COORDS
        nf = nc + N_COLORS
        if vec.size != nc + nf + 2:
            raise ValueError(f"parameter vector has {vec.size} entries, expected {nc + nf + 2}")
        return cls(vec[:nc].copy(), float(vec[nc]), vec[nc + 1:nc + 1 + nf].copy(), float(vec[-1]))

    def as_dict(self) -> dict:
        return {"w_coarse": self.w_coarse.tolist(), "b_coarse": self.b_coarse,
                "w_fine": self.w_fine.tolist(), "b_fine": self.b_fine}

    @classmethod
    def from_dict(cls, d: dict) -> "ToyHead":
        return cls(np.asarray(d["w_coarse"], dtype=np.float64), float(d["b_coarse"]),
                   np.asarray(d["w_fine"], dtype=np.float64), float(d["b_fine"]))


@dataclass
class Sample:
    """Patch features, image, optional ground truth and optional backbone field.

    ``field`` is a pixel-resolution latent whose patch means are ``features``;
    when present, crop views pool the enlarged field instead of resampling
    the coarse features, which is what re-running a backbone on the crop does.
    """

    features: np.ndarray
    image: np.ndarray
    gt: np.ndarray | None = None
    field: np.ndarray | None = None


@dataclass
class TrainConfig:
    steps: int = 500
    learning_rate: float = 5.0
    optimizer: str = "gd"
    seed: int = 0
    factor: int = 8
    weights: LossWeights = field(default_factory=lambda: replace(LossWeights(), **TOY_WEIGHTS))
    crop_policy: CropPolicy = field(default_factory=CropPolicy)
    gf: GuidedFilterParams = field(default_factory=GuidedFilterParams)
    crop: bool = True
    train_on_crop: bool = True
    teacher_gf: bool = True
    refine_eval: bool = True
    crop_mode: str = "bilinear"
    init_scale: float = 0.5
    threshold: float = 0.5

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.factor not in (8, 16):
            raise ValueError(f"patch factor must be 8 or 16, got {self.factor}")

    def as_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "crop_policy" in d:
            d["crop_policy"] = CropPolicy(**d["crop_policy"])
        if "gf" in d:
            d["gf"] = GuidedFilterParams(**d["gf"])
        unknown = set(d) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# --------------------------------------------------------------------------
# design matrices


def coord_channels(h: int, w: int) -> np.ndarray:
    ys = (np.arange(h) + 0.5) / h * 2.0 - 1.0
    xs = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    return np.stack(np.meshgrid(ys, xs, indexing="ij"), axis=-1)


def _rgb(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    return np.repeat(image, 3, axis=2) if image.shape[2] == 1 else image


@dataclass
class View:
    """One input (full image or enlarged crop) with everything the losses need."""

    features: np.ndarray
    image: np.ndarray
    xc: np.ndarray
    xf: np.ndarray
    affinity: np.ndarray | None = None
    coarse_edges: EdgeList | None = None
    fine_edges: EdgeList | None = None
    field: np.ndarray | None = None

    @property
    def grid(self):
        return self.features.shape[:2]

    @property
    def shape(self):
        return self.image.shape[:2]


def pool_patches(x, factor: int) -> np.ndarray:
    """Block means over ``factor x factor`` patches of an (H, W, C) array."""
    H, W = x.shape[:2]
    return x.reshape(H // factor, factor, W // factor, factor, -1).mean(axis=(1, 3))


def make_view(features, image, factor: int, weights: LossWeights | None = None,
              field=None) -> View:
    features = np.asarray(features, dtype=np.float64)
    image = _rgb(image)
    gh, gw, d = features.shape
    H, W = image.shape[:2]
    if (gh * factor, gw * factor) != (H, W):
        raise ValueError(f"feature grid {gh}x{gw} with factor {factor} does not match image {H}x{W}")
    xc = np.concatenate([features, coord_channels(gh, gw)], axis=-1).reshape(gh * gw, d + N_COORDS)
    up = resize_bilinear(features, H, W)
    xf = np.concatenate([up, coord_channels(H, W), image], axis=-1).reshape(H * W, d + N_COORDS + N_COLORS)
    view = View(features, image, xc, xf, field=field)
    if weights is not None:
        view.affinity = tokencut_affinity(features, weights.tau, weights.epsilon_aff)
        view.coarse_edges = gtv_coarse_weights(view.affinity, (gh, gw))
        view.fine_edges = gtv_fine_weights(image, weights.sigma)
    return view


def crop_view(view: View, rect: CropRect, factor: int, weights: LossWeights | None,
              mode: str = "bilinear") -> View:
    """The view a backbone would see on the enlarged crop.

    The image is crop-zoomed.  With a backbone field the field is enlarged
    the same way and pooled onto the patch grid, so each crop patch covers
    fewer source pixels; without one the coarse features are upsampled,
    cropped and pooled, which adds no detail.
    """
    H, W = view.shape
    ry, rx = crop_zoom_operator((H, W), rect, mode)
    image_c = np.clip(apply_separable(view.image, ry, rx), 0.0, 1.0)
    if view.field is not None:
        field_c = apply_separable(view.field, ry, rx)
        return make_view(pool_patches(field_c, factor), image_c, factor, weights, field_c)
    up = resize_bilinear(view.features, H, W)
    up_c = resize_bilinear(crop(up, rect), H, W)
    return make_view(pool_patches(up_c, factor), image_c, factor, weights)


# --------------------------------------------------------------------------
# forward / backward


def _branch(x, w, b):
    return sigmoid(x @ w + b)


def forward_view(head: ToyHead, view: View):
    gh, gw = view.grid
    H, W = view.shape
    s_coarse = _branch(view.xc, head.w_coarse, head.b_coarse).reshape(gh, gw)
    s_fine = _branch(view.xf, head.w_fine, head.b_fine).reshape(H, W)
    return s_coarse, s_fine


def forward(head: ToyHead, features, image, factor: int | None = None):
    """``(S_coarse, S_fine)`` for one image; ``factor`` defaults to H / h'."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3 or features.shape[2] != head.feature_dim:
        raise ValueError(f"features must be h x w x {head.feature_dim}, got {features.shape}")
    if factor is None:
        factor = np.asarray(image).shape[0] // features.shape[0]
    return forward_view(head, make_view(features, image, factor))


def _head_grad(view: View, s_coarse, s_fine, g_coarse, g_fine, n_coarse: int) -> np.ndarray:
    """Chain rule through the two logistic branches; returns a flat parameter gradient."""
    parts = []
    if g_coarse is None:
        parts.append(np.zeros(n_coarse + 1))
    else:
        dz = (np.asarray(g_coarse) * s_coarse * (1.0 - s_coarse)).ravel()
        parts.extend([view.xc.T @ dz, [dz.sum()]])
    if g_fine is None:
        parts.append(np.zeros(view.xf.shape[1] + 1))
    else:
        dz = (np.asarray(g_fine) * s_fine * (1.0 - s_fine)).ravel()
        parts.extend([view.xf.T @ dz, [dz.sum()]])
    return np.concatenate(parts)


@dataclass
class ObjectiveResult:
    total: float
    breakdown: dict
    grad: np.ndarray | None
    grad_parts: dict
    rect: CropRect | None
    s_c: np.ndarray | None = None
    s_target: np.ndarray | None = None


def objective(head: ToyHead, view: View, config: TrainConfig, *, rect: CropRect | None = None,
              rng: np.random.Generator | None = None, stop_gradient: bool = True,
              with_grad: bool = True, target: np.ndarray | None = None) -> ObjectiveResult:
    """Full training objective on one image, optionally with gradient.

    ``total = L_sempart(view) + [train_on_crop] L_sempart(crop) + lambda_eq L_eq``.
    ``stop_gradient=False`` lets the gradient leak into the teacher branch; it
    exists only as a negative control.  ``target`` replaces the teacher output
    with a fixed array (finite-difference checks of the stop-gradient path).
    """
    wts = config.weights
    n_coarse = head.w_coarse.size
    s_coarse, s_fine = forward_view(head, view)
    out = sempart_total_loss(view.affinity, s_coarse, s_fine, view.coarse_edges, view.fine_edges,
                             config.factor, wts, with_grad=with_grad)
    total, breakdown = out[0], dict(out[1])
    grad_parts = {}
    g_fine_main = None
    if with_grad:
        g_c, g_fine_main = out[2]
        grad_parts["sempart"] = _head_grad(view, s_coarse, s_fine, g_c, g_fine_main, n_coarse)
    breakdown["eq"] = 0.0
    s_c = s_target = None
    if config.crop:
        H, W = view.shape
        if rect is None:
            if rng is None:
                raise ValueError("crop enabled: pass rect or rng")
            rect = sample_crop(config.crop_policy, H, W, rng)
        ry, rx = crop_zoom_operator((H, W), rect, config.crop_mode)
        s_c = ry @ s_fine @ rx.T
        cview = crop_view(view, rect, config.factor, wts, config.crop_mode)
        sc_coarse, sc_fine = forward_view(head, cview)
        gray_c = to_grayscale(cview.image)
        if target is not None:
            s_target = np.asarray(target, dtype=np.float64)
        elif config.teacher_gf:
            s_target = guided_filter(sc_fine, gray_c, config.gf)
        else:
            s_target = sc_fine.copy()
        eq = equivariance_loss(s_c, s_target)
        breakdown["eq"] = eq
        total += wts.lambda_eq * eq
        g_c_crop = g_f_crop = None
        if config.train_on_crop:
            cout = sempart_total_loss(cview.affinity, sc_coarse, sc_fine, cview.coarse_edges,
                                      cview.fine_edges, config.factor, wts, with_grad=with_grad)
            breakdown["crop_sempart"] = cout[0]
            total += cout[0]
            if with_grad:
                g_c_crop, g_f_crop = cout[2]
        if with_grad:
            g_sc = equivariance_grad(s_c, s_target)
            grad_parts["eq"] = _head_grad(view, s_coarse, s_fine, None, ry.T @ g_sc @ rx, n_coarse)
            if config.train_on_crop:
                grad_parts["crop_sempart"] = _head_grad(cview, sc_coarse, sc_fine, g_c_crop,
                                                        g_f_crop, n_coarse)
            if not stop_gradient:
                g_target = -g_sc
                if config.teacher_gf:
                    g_target = guided_filter_vjp(sc_fine, gray_c, config.gf, g_target)
                grad_parts["eq_teacher"] = _head_grad(cview, sc_coarse, sc_fine, None, g_target,
                                                      n_coarse)
    grad = None
    if with_grad:
        grad = grad_parts["sempart"].copy()
        grad += grad_parts.get("crop_sempart", 0.0)
        grad += wts.lambda_eq * (grad_parts.get("eq", 0.0) + grad_parts.get("eq_teacher", 0.0))
    return ObjectiveResult(total, breakdown, grad, grad_parts, rect, s_c, s_target)


def _as_view(sample, config: TrainConfig) -> View:
    if isinstance(sample, View):
        return sample
    return make_view(sample.features, sample.image, config.factor, config.weights, sample.field)


def total_objective(head: ToyHead, sample: Sample | View, config: TrainConfig, rng=None, *,
                    rect: CropRect | None = None):
    """``(total, breakdown)`` of the training objective on one sample."""
    view = _as_view(sample, config)
    res = objective(head, view, config, rect=rect, rng=rng, with_grad=False)
    return res.total, res.breakdown


def backward(head: ToyHead, sample: Sample | View, config: TrainConfig, rng=None, *,
             rect: CropRect | None = None, stop_gradient: bool = True) -> np.ndarray:
    """Flat gradient of :func:`total_objective` w.r.t. the head parameters."""
    view = _as_view(sample, config)
    return objective(head, view, config, rect=rect, rng=rng, stop_gradient=stop_gradient).grad


def finite_difference_grad(fn, x, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn`` at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[k] += step
        xm.flat[k] -= step
        g.flat[k] = (fn(xp) - fn(xm)) / (2.0 * step)
    return g


@dataclass
class StopGradientReport:
    max_abs_deviation: float
    negative_control_deviation: float
    grad_trainer: np.ndarray
    grad_constant_target: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_abs_deviation == 0.0 and self.negative_control_deviation > 0.0


def stop_gradient_check(head: ToyHead, sample: Sample | View, config: TrainConfig,
                        rng=None, *, rect: CropRect | None = None) -> StopGradientReport:
    """Compare the trainer's consistency gradient with the constant-target gradient.

    The reference recomputes the teacher target, freezes a copy, and
    differentiates ``L_eq(CU(f(I)), target)`` as an ordinary data-fitting loss.
    The negative control runs the trainer with the stop-gradient disabled.
    """
    view = _as_view(sample, config)
    cfg = replace(config, crop=True)
    res = objective(head, view, cfg, rect=rect, rng=rng)
    rect = res.rect
    grad_trainer = res.grad_parts["eq"]

    H, W = view.shape
    cview = crop_view(view, rect, cfg.factor, None, cfg.crop_mode)
    _, teacher = forward_view(head, cview)
    if cfg.teacher_gf:
        teacher = guided_filter(teacher, to_grayscale(cview.image), cfg.gf)
    target = np.array(teacher, copy=True)
    s_coarse, s_fine = forward_view(head, view)
    ry, rx = crop_zoom_operator((H, W), rect, cfg.crop_mode)
    g = ry.T @ equivariance_grad(ry @ s_fine @ rx.T, target) @ rx
    grad_const = _head_grad(view, s_coarse, s_fine, None, g, head.w_coarse.size)

    leak = objective(head, view, cfg, rect=rect, stop_gradient=False)
    grad_leak = leak.grad_parts["eq"] + leak.grad_parts["eq_teacher"]
    return StopGradientReport(
        float(np.max(np.abs(grad_trainer - grad_const))),
        float(np.max(np.abs(grad_leak - grad_trainer))),
        grad_trainer,
        grad_const,
    )


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    head: ToyHead
    trace: list
    manifest: dict


def _adam():
    state = {"m": None, "v": None, "t": 0}

    def update(grad, lr, b1=0.9, b2=0.999, eps=1e-8):
        if state["m"] is None:
            state["m"] = np.zeros_like(grad)
            state["v"] = np.zeros_like(grad)
        state["t"] += 1
        state["m"] = b1 * state["m"] + (1 - b1) * grad
        state["v"] = b2 * state["v"] + (1 - b2) * grad * grad
        mhat = state["m"] / (1 - b1 ** state["t"])
        vhat = state["v"] / (1 - b2 ** state["t"])
        return lr * mhat / (np.sqrt(vhat) + eps)

    return update


def train(head: ToyHead, dataset: Sequence[Sample], config: TrainConfig) -> TrainResult:
    """Single-image-batch descent on the full objective; deterministic given ``config.seed``."""
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(config.seed)
    views = [make_view(s.features, s.image, config.factor, config.weights, s.field)
             for s in dataset]
    theta = head.to_vector()
    dim = head.feature_dim
    adam = _adam() if config.optimizer == "adam" else None
    trace = []
    order = []
    for step in range(config.steps):
        if not order:
            order = list(rng.permutation(len(views)))
        idx = int(order.pop(0))
        current = ToyHead.from_vector(theta, dim)
        res = objective(current, views[idx], config, rng=rng)
        if not math.isfinite(res.total) or not np.all(np.isfinite(res.grad)):
            raise TrainingDivergedError(step, res.total)
        row = {"step": step, "image": idx, "total": res.total}
        row.update(res.breakdown)
        trace.append(row)
        if adam is not None:
            theta = theta - adam(res.grad, config.learning_rate)
        else:
            theta = theta - config.learning_rate * res.grad
    trained = ToyHead.from_vector(theta, dim)
    manifest = {"config": config.as_dict(), "seed": config.seed, "steps": config.steps,
                "n_images": len(dataset), "initial_params": head.as_dict()}
    return TrainResult(trained, trace, manifest)


def orient_foreground(mask) -> np.ndarray:
    """Flip a mask whose border is mostly foreground.

    Every loss is symmetric under ``S -> 1 - S``, so the learned polarity is
    arbitrary; salient objects are taken to not cover the image border.
    """
    mask = np.asarray(mask, dtype=np.float64)
    border = np.concatenate([mask[0], mask[-1], mask[1:-1, 0], mask[1:-1, -1]])
    return 1.0 - mask if border.mean() > 0.5 else mask


def predict_mask(head: ToyHead, sample: Sample, config: TrainConfig, refine: bool | None = None):
    """Fine-branch mask, optionally guided-filtered, oriented foreground-positive."""
    refine = config.refine_eval if refine is None else refine
    _, s_fine = forward(head, sample.features, sample.image, config.factor)
    if refine:
        s_fine = guided_filter(s_fine, to_grayscale(_rgb(sample.image)), config.gf)
    return orient_foreground(s_fine)


def evaluate(head: ToyHead, dataset: Sequence[Sample], config: TrainConfig,
             refine: bool | None = None) -> list:
    return [iou(binarize(predict_mask(head, s, config, refine), config.threshold), s.gt)
            for s in dataset]


@dataclass
class ToyRun:
    result: TrainResult
    masks: list
    ious: list

    @property
    def mean_iou(self) -> float:
        return float(np.mean(self.ious))


def init_head(feature_dim: int, config: TrainConfig) -> ToyHead:
    """Random head drawn from a stream derived from, but distinct from, the trainer's."""
    return ToyHead.random(feature_dim, np.random.default_rng([config.seed, 1]), config.init_scale)


def run_toy(config: TrainConfig, dataset: Sequence[Sample]) -> ToyRun:
    """Initialize, train and evaluate on one dataset; what ``train-toy`` runs."""
    if any(s.gt is None for s in dataset):
        raise ValueError("run_toy needs ground-truth masks for evaluation")
    head0 = init_head(dataset[0].features.shape[2], config)
    result = train(head0, dataset, config)
    masks = [predict_mask(result.head, s, config) for s in dataset]
    ious = [iou(binarize(m, config.threshold), s.gt) for m, s in zip(masks, dataset)]
    return ToyRun(result, masks, ious)


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    height: int = 64
    width: int = 64
    factor: int = 8
    min_area: float = 0.08
    max_area: float = 0.3
    noise_channels: int = 2
    noise_level: float = 0.05
    feature_blur: float = 0.1
    texture: float = 0.12


def _gaussian_blur(x, sigma):
    from scipy.ndimage import gaussian_filter

    return gaussian_filter(x, sigma, mode="nearest")


def _blob_mask(spec: SyntheticSpec, rng) -> np.ndarray:
    H, W = spec.height, spec.width
    yy, xx = np.mgrid[0:H, 0:W] + 0.5
    for _ in range(1000):
        target = rng.uniform(spec.min_area, spec.max_area) * H * W
        n_blobs = int(rng.integers(1, 3))
        mask = np.zeros((H, W), dtype=bool)
        shares = rng.dirichlet(np.ones(n_blobs) * 4.0) if n_blobs > 1 else np.ones(1)
        for share in shares:
            area = target * share
            ratio = rng.uniform(0.6, 1.6)
            ry = math.sqrt(area / (math.pi * ratio))
            rx = ry * ratio
            cy = rng.uniform(ry + 3, H - ry - 3) if H - 2 * ry - 6 > 0 else H / 2
            cx = rng.uniform(rx + 3, W - rx - 3) if W - 2 * rx - 6 > 0 else W / 2
            ang = rng.uniform(0, math.pi)
            dy, dx = yy - cy, xx - cx
            u = dy * math.cos(ang) + dx * math.sin(ang)
            v = -dy * math.sin(ang) + dx * math.cos(ang)
            # low-frequency radial wobble keeps the outline smooth but not elliptic
            theta = np.arctan2(u, v)
            wobble = 1.0 + 0.12 * np.sin(3 * theta + rng.uniform(0, 2 * math.pi))
            mask |= (u / ry) ** 2 + (v / rx) ** 2 <= wobble**2
        frac = mask.mean()
        border = np.concatenate([mask[0], mask[-1], mask[:, 0], mask[:, -1]])
        if spec.min_area <= frac <= spec.max_area and not border.any():
            return mask
    raise RuntimeError("could not place blobs within the configured area bounds")


def make_synthetic_sample(spec: SyntheticSpec, rng) -> Sample:
    H, W, f = spec.height, spec.width, spec.factor
    gt = _blob_mask(spec, rng)
    bg_color = rng.uniform(0.15, 0.55, size=3)
    fg_color = np.clip(bg_color + rng.choice([-1, 1], size=3) * rng.uniform(0.2, 0.4, size=3), 0.05, 0.95)
    shade = _gaussian_blur(rng.standard_normal((H, W)), 6.0)
    shade = shade / (np.abs(shade).max() + 1e-12)
    texture = _gaussian_blur(rng.standard_normal((H, W, 3)), (1.0, 1.0, 0))
    texture = texture / (texture.std() + 1e-12)
    img = np.where(gt[:, :, None], fg_color, bg_color) + 0.08 * shade[:, :, None]
    img = img + spec.texture * texture * np.where(gt, 0.3, 1.0)[:, :, None]
    img = np.clip(img, 0.0, 1.0)
    gh, gw = H // f, W // f
    # backbone field: signed, slightly blurred indicator plus patch-constant noise
    fg_field = 2.0 * _gaussian_blur(gt.astype(np.float64), spec.feature_blur * f) - 1.0
    noise = spec.noise_level * rng.standard_normal((gh, gw, spec.noise_channels))
    noise = np.repeat(np.repeat(noise, f, axis=0), f, axis=1)
    field = np.concatenate([fg_field[:, :, None], noise], axis=-1)
    feats = pool_patches(field, f)
    return Sample(feats, img, gt, field)


def make_synthetic_dataset(n: int, height: int = 64, width: int = 64, seed: int = 0,
                           spec: SyntheticSpec | None = None) -> list:
    """Images with one or two smooth blobs on a textured background.

    Features on the patch grid are patch means of a pixel-resolution field:
    the blurred foreground indicator mapped to [-1, 1], followed by noise
    channels.  Ground truth is kept for evaluation.
    """
    spec = replace(spec or SyntheticSpec(), height=height, width=width)
    if height % spec.factor or width % spec.factor:
        raise ValueError(f"{height}x{width} not divisible by patch factor {spec.factor}")
    rng = np.random.default_rng(seed)
    return [make_synthetic_sample(spec, rng) for _ in range(n)]


def dataset_digest(dataset: Sequence[Sample]) -> str:
    h = hashlib.sha256()
    for s in dataset:
        for arr in (s.features, s.image, s.gt):
            if arr is not None:
                a = np.ascontiguousarray(arr)
                h.update(str(a.shape).encode())
                h.update(a.tobytes())
    return h.hexdigest()


def manifest_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")
