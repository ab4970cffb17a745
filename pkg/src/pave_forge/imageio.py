"""8-bit image I/O (PNG, binary PPM/PGM) mapped to float images in [0, 1].

Images are ``(H, W)`` arrays for grayscale and ``(H, W, 3)`` for RGB.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from pave_forge.errors import DataError

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")

# ITU-R BT.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK", "YCbCr") else "L")
            data = np.asarray(im, dtype=np.float64)
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise DataError(f"cannot read image {os.fspath(path)}: {exc}") from exc
    return data / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantize with round-half-up."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def save_image(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if not (img.ndim == 2 or (img.ndim == 3 and img.shape[2] == 3)):
        raise ValueError(f"cannot save image of shape {img.shape}")
    Image.fromarray(to_uint8(img)).save(path)


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img @ _LUMA


def to_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img
    return np.repeat(img[:, :, None], 3, axis=2)


def list_images(directory) -> list[str]:
    """Sorted image paths directly inside ``directory``."""
    names = sorted(n for n in os.listdir(directory)
                   if os.path.splitext(n)[1].lower() in IMAGE_SUFFIXES)
    return [os.path.join(directory, n) for n in names]
