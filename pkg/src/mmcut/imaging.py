"""Grid containers, the exact signed Euclidean distance transform, and raster I/O.

Images are 2-D float arrays with intensities in [0, 1], masks are 2-D boolean
arrays (True = foreground) and distance fields are 2-D float arrays.  Points on
the grid are ``(row, col)`` pairs; pixel ``(i, j)`` sits at the point ``(i, j)``.
"""

from pathlib import Path

import numba
import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from ._validation import check_mask, check_nondegenerate
from .exceptions import UnsupportedFormat

__all__ = [
    "signed_distance",
    "sample_field",
    "pixel_coordinates",
    "centroid",
    "load_image",
    "load_mask",
    "save_mask",
    "save_image",
]

_RASTER_SUFFIXES = {".png", ".pgm"}


def signed_distance(mask):
    """Signed Euclidean distance between pixel centres of opposite labels.

    Foreground pixels get the (positive) distance to the nearest background
    pixel centre, background pixels the negated distance to the nearest
    foreground pixel centre, so every value has magnitude at least 1.

    Raises
    ------
    EmptyShape
        If the mask is all foreground or all background.
    """
    mask = check_nondegenerate(check_mask(mask))
    # distance_transform_edt measures each nonzero pixel to the nearest zero
    return np.where(mask, ndimage.distance_transform_edt(mask), -ndimage.distance_transform_edt(~mask))


@numba.njit(cache=True)
def _bilinear(field, pts, out):
    h, w = field.shape
    for n in range(pts.shape[0]):
        r = pts[n, 0]
        c = pts[n, 1]
        rc = min(max(r, 0.0), h - 1.0)
        cc = min(max(c, 0.0), w - 1.0)
        r0 = min(int(np.floor(rc)), max(h - 2, 0))
        c0 = min(int(np.floor(cc)), max(w - 2, 0))
        r1 = min(r0 + 1, h - 1)
        c1 = min(c0 + 1, w - 1)
        fr = rc - r0
        fc = cc - c0
        top = field[r0, c0] * (1.0 - fc) + field[r0, c1] * fc
        bottom = field[r1, c0] * (1.0 - fc) + field[r1, c1] * fc
        out[n] = top * (1.0 - fr) + bottom * fr - np.hypot(r - rc, c - cc)


def sample_field(field, points):
    """Bilinear interpolation of ``field`` at continuous ``(row, col)`` points.

    Points that fall outside the grid take the value at the nearest grid
    position minus the Euclidean distance to that position, so the field keeps
    falling off linearly away from the raster.
    """
    field = np.ascontiguousarray(field, dtype=float)
    pts = np.asarray(points, dtype=float)
    flat = np.ascontiguousarray(pts.reshape(-1, 2))
    out = np.empty(flat.shape[0])
    _bilinear(field, flat, out)
    return out.reshape(pts.shape[:-1])


def pixel_coordinates(shape):
    """``(h, w, 2)`` array of the ``(row, col)`` position of every pixel."""
    h, w = shape
    rows, cols = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    return np.stack([rows, cols], axis=-1)


def centroid(mask):
    """Mean ``(row, col)`` of the foreground pixels."""
    idx = np.argwhere(np.asarray(mask, dtype=bool))
    if idx.shape[0] == 0:
        raise ValueError("centroid of an empty mask is undefined")
    return idx.mean(axis=0)


def _read_gray(path):
    path = Path(path)
    if path.suffix.lower() not in _RASTER_SUFFIXES:
        raise UnsupportedFormat(f"{path}: only PNG and PGM rasters are supported")
    if not path.is_file():
        raise FileNotFoundError(f"no such raster file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "1":
                im = im.convert("L")
            if im.mode != "L":
                raise UnsupportedFormat(f"{path}: expected 8-bit grayscale, got mode {im.mode!r}")
            return np.array(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise UnsupportedFormat(f"{path}: not a readable raster") from exc


def load_image(path):
    """Read an 8-bit grayscale PNG/PGM and scale it to [0, 1]."""
    return _read_gray(path).astype(float) / 255.0


def load_mask(path):
    """Read a mask raster; pixels >= 128 are foreground."""
    return _read_gray(path) >= 128


def save_mask(mask, path):
    """Write a mask as an 8-bit raster with values {0, 255}."""
    mask = check_mask(mask)
    _write_gray(np.where(mask, 255, 0).astype(np.uint8), path)


def save_image(image, path):
    arr = np.clip(np.rint(np.asarray(image, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    _write_gray(arr, path)


def _write_gray(arr, path):
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in _RASTER_SUFFIXES:
        raise UnsupportedFormat(f"{path}: only PNG and PGM rasters are supported")
    img = Image.fromarray(arr, mode="L")
    if suffix == ".png":
        # no timestamps or text chunks, so identical arrays give identical bytes
        img.save(path, format="PNG", optimize=False)
    else:
        img.save(path, format="PPM")
