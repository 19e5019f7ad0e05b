"""Raster types, resampling, crop-zoom and file I/O.

Images are ``(H, W, C)`` float64 arrays with ``C`` in {1, 3}; masks are
``(H, W)`` float64 arrays; feature maps are ``(h, w, D)`` arrays.  All values
of images and masks live in [0, 1].

Resampling is expressed through small dense interpolation matrices so that
the same operator (and its transpose) can be used for forward passes and for
back-propagation through crop-zoom.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

TENSOR_MAGIC = b"STNS"

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class TensorFormatError(ValueError):
    """Raised for malformed STNS containers."""


class PngFormatError(OSError):
    """Raised when a PNG cannot be read as 8-bit gray or RGB."""


@dataclass(frozen=True)
class CropRect:
    top: int
    left: int
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"crop rect must be at least 1x1, got {self.height}x{self.width}")
        if self.top < 0 or self.left < 0:
            raise ValueError(f"crop rect origin must be non-negative, got ({self.top}, {self.left})")

    @property
    def bottom(self) -> int:
        return self.top + self.height

    @property
    def right(self) -> int:
        return self.left + self.width

    def fits(self, height: int, width: int) -> bool:
        return self.bottom <= height and self.right <= width

    def compose(self, inner: "CropRect") -> "CropRect":
        """Rect of ``inner`` (given relative to this rect) in host coordinates."""
        if not inner.fits(self.height, self.width):
            raise ValueError("inner rect does not lie inside the outer rect")
        return CropRect(self.top + inner.top, self.left + inner.left, inner.height, inner.width)

    @classmethod
    def full(cls, height: int, width: int) -> "CropRect":
        return cls(0, 0, height, width)

    def as_dict(self) -> dict:
        return {"top": self.top, "left": self.left, "height": self.height, "width": self.width}


def as_image(x) -> np.ndarray:
    """Validate and return an ``(H, W, C)`` float64 image."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[2] not in (1, 3):
        raise ValueError(f"image must be HxWx1 or HxWx3, got shape {x.shape}")
    _check_unit_range(x, "image")
    return x


def as_mask(x) -> np.ndarray:
    """Validate and return an ``(H, W)`` float64 mask."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[:, :, 0]
    if x.ndim != 2:
        raise ValueError(f"mask must be HxW, got shape {x.shape}")
    _check_unit_range(x, "mask")
    return x


def _check_unit_range(x: np.ndarray, what: str) -> None:
    if x.size == 0:
        raise ValueError(f"{what} is empty")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite values")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError(f"{what} values must lie in [0, 1]")


def to_grayscale(img) -> np.ndarray:
    """Rec.601 luma; 1-channel images pass through unchanged."""
    img = as_image(img)
    if img.shape[2] == 1:
        return img
    r, g, b = img[:, :, 0], img[:, :, 1], img[:, :, 2]
    # written relative to R so that gray inputs (r == g == b) map to themselves exactly
    gray = r + LUMA_WEIGHTS[1] * (g - r) + LUMA_WEIGHTS[2] * (b - r)
    return np.clip(gray, 0.0, 1.0)[:, :, None]


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` 1-D bilinear interpolation operator, half-pixel centers."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"resampling sizes must be >= 1, got {n_in} -> {n_out}")
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    if n_in < 1 or n_out < 1:
        raise ValueError(f"resampling sizes must be >= 1, got {n_in} -> {n_out}")
    idx = np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.int64)
    return np.minimum(idx, n_in - 1)


def nearest_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), nearest_indices(n_in, n_out)] = 1.0
    return m


def resample_matrices(in_hw, out_hw, mode: str = "bilinear"):
    """Row and column operators ``(Ry, Rx)`` with ``out = Ry @ x @ Rx.T``."""
    if mode == "bilinear":
        build = bilinear_matrix
    elif mode == "nearest":
        build = nearest_matrix
    else:
        raise ValueError(f"unknown resampling mode {mode!r}")
    return build(in_hw[0], out_hw[0]), build(in_hw[1], out_hw[1])


def apply_separable(x: np.ndarray, ry: np.ndarray, rx: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        return ry @ x @ rx.T
    # channel by channel, so an image channel and a mask come out bit-identical
    return np.stack([ry @ x[:, :, c] @ rx.T for c in range(x.shape[2])], axis=-1)


def resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a 2-D or channel-last 3-D raster."""
    src = np.asarray(src, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be >= 1x1, got {out_h}x{out_w}")
    if src.shape[:2] == (out_h, out_w):
        return src.copy()
    ry, rx = resample_matrices(src.shape[:2], (out_h, out_w), "bilinear")
    return apply_separable(src, ry, rx)


def resize_nearest(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    src = np.asarray(src)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be >= 1x1, got {out_h}x{out_w}")
    iy = nearest_indices(src.shape[0], out_h)
    ix = nearest_indices(src.shape[1], out_w)
    return src[iy][:, ix].copy()


def resize(src: np.ndarray, out_h: int, out_w: int, mode: str = "bilinear") -> np.ndarray:
    if mode == "bilinear":
        return resize_bilinear(src, out_h, out_w)
    if mode == "nearest":
        return resize_nearest(src, out_h, out_w)
    raise ValueError(f"unknown resampling mode {mode!r}")


def crop(src: np.ndarray, rect: CropRect) -> np.ndarray:
    src = np.asarray(src)
    if not rect.fits(src.shape[0], src.shape[1]):
        raise ValueError(f"crop rect {rect} exceeds raster of shape {src.shape[:2]}")
    return src[rect.top:rect.bottom, rect.left:rect.right].copy()


def crop_zoom(img, mask, rect: CropRect, mode: str = "bilinear"):
    """Crop image and mask with the same rect and enlarge both back to H x W."""
    img = as_image(img)
    mask = as_mask(mask)
    if img.shape[:2] != mask.shape:
        raise ValueError(f"image {img.shape[:2]} and mask {mask.shape} differ in size")
    # one operator for both, and the same one the trainer differentiates through
    ry, rx = crop_zoom_operator(mask.shape, rect, mode)
    # interpolation weights sum to one only up to rounding
    img_c = np.clip(apply_separable(img, ry, rx), 0.0, 1.0)
    mask_c = np.clip(apply_separable(mask, ry, rx), 0.0, 1.0)
    return img_c, mask_c


def crop_zoom_operator(shape, rect: CropRect, mode: str = "bilinear"):
    """``(Ry, Rx)`` acting on the full raster such that ``Ry @ x @ Rx.T`` is the crop-zoom.

    The crop is folded into the operators (columns outside the rect are zero),
    which makes the adjoint for back-propagation a plain ``Ry.T @ g @ Rx``.
    """
    h, w = shape
    if not rect.fits(h, w):
        raise ValueError(f"crop rect {rect} exceeds raster of shape {shape}")
    ry_c, rx_c = resample_matrices((rect.height, rect.width), (h, w), mode)
    ry = np.zeros((h, h))
    rx = np.zeros((w, w))
    ry[:, rect.top:rect.bottom] = ry_c
    rx[:, rect.left:rect.right] = rx_c
    return ry, rx


# --------------------------------------------------------------------------
# file I/O


def read_png(path) -> np.ndarray:
    """Read an 8-bit gray or RGB PNG as values ``v / 255``.

    Grayscale files come back as ``(H, W)`` masks, RGB files as ``(H, W, 3)``.
    """
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.format != "PNG":
                raise PngFormatError(f"{path}: not a PNG file (format {im.format})")
            if im.mode not in ("L", "RGB"):
                raise PngFormatError(f"{path}: unsupported PNG mode {im.mode!r}; need 8-bit gray or RGB")
            data = np.asarray(im, dtype=np.uint8)
    except PngFormatError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise PngFormatError(f"{path}: cannot read PNG ({exc})") from exc
    return data.astype(np.float64) / 255.0


def quantize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.round(x * 255.0), 0, 255).astype(np.uint8)


def write_png(path, x) -> None:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[:, :, 0]
    if x.ndim == 2:
        mode = "L"
    elif x.ndim == 3 and x.shape[2] == 3:
        mode = "RGB"
    else:
        raise ValueError(f"cannot write array of shape {x.shape} as PNG")
    PILImage.fromarray(quantize(x), mode=mode).save(Path(path), format="PNG")


def write_tensor(path, x) -> None:
    """Write ``x`` as an STNS container (f32 little-endian payload)."""
    x = np.ascontiguousarray(x, dtype="<f4")
    header = TENSOR_MAGIC + struct.pack("<I", x.ndim) + struct.pack(f"<{x.ndim}I", *x.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(x.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != TENSOR_MAGIC:
        raise TensorFormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 8:
        raise TensorFormatError(f"{path}: truncated header")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    offset = 8 + 4 * ndim
    if len(raw) < offset:
        raise TensorFormatError(f"{path}: truncated dims (ndim={ndim})")
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - offset != 4 * count:
        raise TensorFormatError(
            f"{path}: payload has {len(raw) - offset} bytes, dims {dims} need {4 * count}"
        )
    return np.frombuffer(raw, dtype="<f4", offset=offset).reshape(dims).copy()
