"""Deterministic synthetic benchmarks: blobs, L-shapes and lobed stars.

Shapes are defined analytically in a canonical frame centred on the origin
and rasterized by point membership at the pixel centres, so a template and an
object drawn under a rigid transform come from the same continuous shape.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imaging import save_image, save_mask

__all__ = [
    "CASES",
    "SyntheticCase",
    "make_case",
    "write_case",
    "rasterize",
    "star_shape",
    "blob_shape",
    "l_shape",
    "lobe_count",
    "dice",
]

CASES = ("blob", "lshape", "star3", "star5", "hybrid")

FG_LEVEL = 0.75
BG_LEVEL = 0.25


def star_shape(radius, lobes, amplitude=0.35, phase=0.0):
    """Polar star ``r(t) = radius * (1 + amplitude * cos(lobes * (t - phase)))``."""

    def inside(y, x):
        r = np.hypot(y, x)
        t = np.arctan2(y, x)
        return r <= radius * (1.0 + amplitude * np.cos(lobes * (t - phase)))

    return inside


def blob_shape(radius, coeffs):
    """Smooth star-convex blob; ``coeffs`` holds ``(order, amplitude, phase)`` triples."""

    def inside(y, x):
        r = np.hypot(y, x)
        t = np.arctan2(y, x)
        bound = np.ones_like(t)
        for k, a, p in coeffs:
            bound = bound + a * np.cos(k * t + p)
        return r <= radius * bound

    return inside


def l_shape(size):
    """L made of a vertical bar and a foot, ``size`` pixels tall, centred on its centroid."""
    s = float(size)
    bar, foot = 0.35 * s, 0.35 * s
    # areas of the two rectangles give the centroid offset
    a1, a2 = bar * s, (s - bar) * foot
    cy = (a1 * (s / 2) + a2 * (s - foot / 2)) / (a1 + a2)
    cx = (a1 * (bar / 2) + a2 * (bar + (s - bar) / 2)) / (a1 + a2)

    def inside(y, x):
        yy, xx = y + cy, x + cx
        vertical = (yy >= 0) & (yy <= s) & (xx >= 0) & (xx <= bar)
        bottom = (yy >= s - foot) & (yy <= s) & (xx >= 0) & (xx <= s)
        return vertical | bottom

    return inside


def rasterize(inside, shape, center=None, alpha=1.0, angle=0.0):
    """Rasterize a canonical shape placed at ``center``, scaled by ``alpha`` and rotated by ``angle``."""
    h, w = shape
    if center is None:
        center = ((h - 1) / 2.0, (w - 1) / 2.0)
    rows, cols = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    dy, dx = rows - center[0], cols - center[1]
    ca, sa = np.cos(angle), np.sin(angle)
    # inverse of the forward placement: rotate back, then unscale
    y = (ca * dy + sa * dx) / alpha
    x = (-sa * dy + ca * dx) / alpha
    return inside(y, x)


@dataclass
class SyntheticCase:
    name: str
    image: np.ndarray
    truth: np.ndarray
    templates: list
    template_weights: list
    template_labels: list = field(default_factory=list)
    placement: dict = field(default_factory=dict)


def _render(truth, rng, corruption, noise):
    image = np.where(truth, FG_LEVEL, BG_LEVEL).astype(float)
    if corruption > 0:
        idx = np.flatnonzero(truth)
        k = int(round(corruption * idx.size))
        hit = rng.choice(idx, size=k, replace=False)
        image.flat[hit] = BG_LEVEL
    if noise > 0:
        image = image + rng.normal(0.0, noise, image.shape)
    # quantize to 8 bits so the in-memory image equals its PNG
    return np.clip(np.rint(image * 255.0), 0, 255) / 255.0


def _placement(rng, size, max_shift, max_angle, scale_range):
    c = (size - 1) / 2.0
    return {
        "center": (c + rng.uniform(-max_shift, max_shift), c + rng.uniform(-max_shift, max_shift)),
        "angle": float(np.deg2rad(rng.uniform(-max_angle, max_angle))),
        "alpha": float(rng.uniform(*scale_range)),
    }


def make_case(case, seed, size=128, corruption=0.0, noise=0.0, template_size=None):
    """Generate one synthetic case deterministically from ``seed``.

    ``blob``, ``lshape``, ``star3`` and ``star5`` use the unplaced object
    shape as their single template; ``hybrid`` draws a five-lobe target and
    a prior of three three-lobe and three five-lobe stars.  ``corruption``
    is the fraction of object pixels given the background intensity and
    ``noise`` the standard deviation of additive Gaussian noise.
    """
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}; choose from {', '.join(CASES)}")
    if not 0.0 <= corruption <= 1.0:
        raise ValueError("corruption must be a fraction in [0, 1]")
    rng = np.random.default_rng(seed)
    radius = size / 5.0
    template_size = template_size or size // 2
    tshape = (template_size, template_size)
    place = _placement(rng, size, size / 16.0, 20.0, (0.9, 1.1))
    labels = []
    if case == "blob":
        coeffs = [(k, rng.uniform(0.05, 0.15), rng.uniform(0, 2 * np.pi)) for k in (2, 3)]
        shapes = [blob_shape(radius, coeffs)]
    elif case == "lshape":
        shapes = [l_shape(1.6 * radius)]
    elif case in ("star3", "star5"):
        lobes = 3 if case == "star3" else 5
        shapes = [star_shape(radius, lobes, rng.uniform(0.3, 0.4))]
        labels = [lobes]
    else:
        target = star_shape(radius, 5, rng.uniform(0.3, 0.4), rng.uniform(0, 2 * np.pi))
        truth = rasterize(target, (size, size), **place)
        shapes = []
        for lobes in (3, 3, 3, 5, 5, 5):
            shapes.append(star_shape(radius * rng.uniform(0.9, 1.1), lobes, rng.uniform(0.3, 0.4), rng.uniform(0, 2 * np.pi)))
            labels.append(lobes)
        templates = [rasterize(s, tshape) for s in shapes]
        image = _render(truth, rng, corruption, noise)
        return SyntheticCase(case, image, truth, templates, [1.0 / 6] * 6, labels, place)
    truth = rasterize(shapes[0], (size, size), **place)
    templates = [rasterize(shapes[0], tshape)]
    image = _render(truth, rng, corruption, noise)
    return SyntheticCase(case, image, truth, templates, [1.0], labels, place)


def write_case(synthetic, out, beta=None, config=None):
    """Write image, truth, templates and ready-to-run manifests under ``out``."""
    out = Path(out)
    (out / "templates").mkdir(parents=True, exist_ok=True)
    save_image(synthetic.image, out / "image.png")
    save_mask(synthetic.truth, out / "truth.png")
    entries = []
    for k, (m, w) in enumerate(zip(synthetic.templates, synthetic.template_weights)):
        name = f"templates/template_{k:02d}.png"
        save_mask(m, out / name)
        entries.append({"mask_path": name, "weight": w})
    doc = {"templates": entries}
    if beta is not None:
        doc["beta"] = beta
    with open(out / "templates.json", "w") as fh:
        json.dump(doc, fh, indent=2)
    manifest = {"image_path": "image.png", "templates": "templates.json", "output_dir": "result"}
    manifest.update(config or {})
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return out / "manifest.json"


def _disk(radius):
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return yy**2 + xx**2 <= radius**2


def lobe_count(mask, core_fraction=0.55, min_fraction=0.01, grow=2.0):
    """Number of lobes protruding from the morphological core of ``mask``.

    The core is the opening of the mask by a disk whose radius is
    ``core_fraction`` of the equivalent-disk radius, dilated by ``grow``
    pixels so one-pixel slivers along the valleys do not bridge adjacent
    lobes.  Lobes are the 8-connected components of mask minus core holding
    at least ``min_fraction`` of the mask area.
    """
    mask = np.asarray(mask, dtype=bool)
    area = mask.sum()
    if area == 0:
        return 0
    radius = core_fraction * np.sqrt(area / np.pi)
    core = ndimage.binary_opening(mask, structure=_disk(radius))
    if grow > 0:
        core = ndimage.binary_dilation(core, structure=_disk(grow))
    labels, n = ndimage.label(mask & ~core, structure=np.ones((3, 3)))
    if n == 0:
        return 0
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    return int(np.sum(sizes >= min_fraction * area))


def dice(a, b):
    """Dice overlap ``2 |A & B| / (|A| + |B|)`` of two masks."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / total)
