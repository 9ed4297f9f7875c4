"""Image loading, saving and resampling primitives.

Images are H x W x 3 float arrays with values in [0, 1] everywhere in this
package; networks see the same data remapped to [-1, 1]. PNG is the on-disk
format (8-bit, lossless).
"""

import numpy as np
from PIL import Image


class ImageFormatError(ValueError):
    """Raised when a file or array is not a decodable RGB image."""


def load_image(path) -> np.ndarray:
    """Load a PNG/JPEG file as an H x W x 3 float64 array in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("RGB", "RGBA", "L"):
                raise ImageFormatError(f"{path}: unsupported mode {im.mode!r}")
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"{path}: cannot decode ({exc})") from exc
    return arr


def save_image(image: np.ndarray, path) -> None:
    """Write a [0, 1] float array to an 8-bit RGB PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def quantize_unit(image: np.ndarray) -> np.ndarray:
    """Round a [0, 1] array to the 8-bit grid it would occupy on disk."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def to_net_range(image: np.ndarray) -> np.ndarray:
    """Map storage range [0, 1] to network range [-1, 1]."""
    return image * 2.0 - 1.0


def from_net_range(image: np.ndarray) -> np.ndarray:
    """Map network range [-1, 1] back to storage range [0, 1], clipped."""
    return np.clip((image + 1.0) / 2.0, 0.0, 1.0)


def rgb_to_luma(image: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma (0.299 R + 0.587 G + 0.114 B)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    return image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114


def _validate_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ImageFormatError(f"expected H x W x 3 RGB array, got shape {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ImageFormatError(f"degenerate image shape {image.shape}")
    return image


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize with bilinear interpolation (half-pixel-centre convention).

    Source coordinate for output pixel j is (j + 0.5) * in/out - 0.5, clamped
    to the image; equal sizes reproduce the input exactly.
    """
    image = np.asarray(image, dtype=np.float64)
    in_h, in_w = image.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return image.copy()

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        return lo, hi, frac

    y0, y1, fy = axis_coords(in_h, out_h)
    x0, x1, fx = axis_coords(in_w, out_w)
    fy = fy[:, None, None] if image.ndim == 3 else fy[:, None]
    fx = fx[None, :, None] if image.ndim == 3 else fx[None, :]

    top = image[y0][:, x0] * (1 - fx) + image[y0][:, x1] * fx
    bot = image[y1][:, x0] * (1 - fx) + image[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def center_crop_resize(image: np.ndarray, target: int) -> np.ndarray:
    """Crop the largest centred square, then resize to target x target.

    Raises ImageFormatError for non-RGB input.
    """
    image = _validate_rgb(image)
    h, w = image.shape[:2]
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    crop = image[top:top + side, left:left + side]
    return resize_bilinear(crop, target, target)
