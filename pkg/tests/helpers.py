"""Brute-force oracles and synthetic fixtures shared by the test modules."""

import itertools
import math

import numpy as np

from mmcut.imaging import pixel_coordinates, sample_field
from mmcut.intensity import LaplaceParams
from mmcut.shape_prior import TemplateEntry, TemplateSet
from mmcut.transforms import RigidTransform

NEIGHBOURS = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]


def brute_signed_distance(mask):
    """O(N^2) nearest opposite-label pixel centre, signed positive inside."""
    mask = np.asarray(mask, dtype=bool)
    fg = np.argwhere(mask)
    bg = np.argwhere(~mask)
    out = np.empty(mask.shape)
    for i, j in itertools.product(range(mask.shape[0]), range(mask.shape[1])):
        other = bg if mask[i, j] else fg
        d = math.sqrt(float(np.min(np.sum((other - (i, j)) ** 2, axis=1))))
        out[i, j] = d if mask[i, j] else -d
    return out


def naive_shape_energy(omega, template_field, origin, transform, lam):
    """Pixel-by-pixel shape energy, every unordered 8-neighbour pair visited once."""
    h, w = omega.shape
    origin = np.asarray(origin, dtype=float)

    def mapped(p):
        return transform.apply(np.asarray(p, dtype=float)) + origin

    def weight(value):
        return 1.0 if lam == 0 else abs(value) ** lam

    mass = 0.0
    boundary = 0.0
    for i in range(h):
        for j in range(w):
            phi = float(sample_field(template_field, mapped((i, j))))
            if bool(omega[i, j]) != (phi > 0):
                mass += weight(phi)
            for di, dj in NEIGHBOURS:
                u = (i + di, j + dj)
                if not (0 <= u[0] < h and 0 <= u[1] < w) or u <= (i, j):
                    continue
                if omega[i, j] == omega[u]:
                    continue
                mid = 0.5 * (mapped((i, j)) + mapped(u))
                dist = math.hypot(di, dj)
                boundary += math.pi / (8.0 * dist) * weight(float(sample_field(template_field, mid)))
    return mass, boundary


def naive_intensity(omega, image, params):
    total = 0.0
    for i, j in itertools.product(range(image.shape[0]), range(image.shape[1])):
        if omega[i, j]:
            mu, b = params.mu_fg, params.b_fg
        else:
            mu, b = params.mu_bg, params.b_bg
        total += math.log(2 * b) + abs(image[i, j] - mu) / b
    return total


def naive_total_energy(omega, image, params, tset, lam):
    """Straight-line posterior energy, no log-space tricks."""
    prior = 0.0
    for entry in tset.entries:
        mass, bnd = naive_shape_energy(omega, entry.field, entry.origin, entry.transform, lam)
        prior += entry.weight * math.sqrt(tset.beta / (2 * math.pi)) * math.exp(-tset.beta * (mass + bnd))
    return naive_intensity(omega, image, params) - math.log(prior)


def random_mask(rng, shape, p=0.5):
    while True:
        m = rng.random(shape) < p
        if m.any() and not m.all():
            return m


def random_params(rng):
    return LaplaceParams(
        mu_fg=rng.uniform(0.5, 0.9), b_fg=rng.uniform(0.05, 0.6), mu_bg=rng.uniform(0.1, 0.5), b_bg=rng.uniform(0.05, 0.6)
    )


def random_small_prior(rng, shape, n_templates=2, beta=None):
    """Template set of random blobs placed over a small grid with random transforms."""
    h, w = shape
    masks = []
    for _ in range(n_templates):
        m = np.zeros((h + 2, w + 2), dtype=bool)
        m[1:-1, 1:-1] = random_mask(rng, shape, 0.6)
        masks.append(m)
    beta = rng.uniform(0.02, 0.3) if beta is None else beta
    tset = TemplateSet.from_masks(masks, weights=list(rng.uniform(0.2, 1.0, n_templates)), beta=beta, margin=2)
    transforms = []
    for e in tset.entries:
        c = (rng.uniform(0, h - 1), rng.uniform(0, w - 1))
        transforms.append(RigidTransform(alpha=rng.uniform(0.8, 1.25), angle=rng.uniform(-0.5, 0.5), c=c))
    return tset.with_transforms(transforms)


# 32x32 asymmetric L used for alignment checks; membership at pixel centres
def l_membership(points):
    r, c = points[..., 0], points[..., 1]
    bar = (r >= 3.5) & (r <= 27.5) & (c >= 3.5) & (c <= 13.5)
    foot = (r >= 19.5) & (r <= 27.5) & (c >= 3.5) & (c <= 27.5)
    return bar | foot


L_TEMPLATE = l_membership(pixel_coordinates((32, 32)))


def transformed_object(entry, membership, truth, canvas, pad):
    """Rasterize ``membership`` (template-raster coordinates) seen through ``truth``.

    A canvas pixel ``s`` is foreground when the template contains
    ``origin + truth(s)``; ``pad`` is the background margin the entry added
    around the template raster.
    """
    pts = truth.apply(pixel_coordinates(canvas)) + entry.origin
    return membership(pts - pad)


def recovery_trial(seed, canvas=(96, 96)):
    """One randomized alignment problem: (omega, template entry, true transform)."""
    rng = np.random.default_rng(seed)
    k = rng.uniform(0.7, 1.4)
    angle = np.deg2rad(rng.uniform(-20.0, 20.0))
    shift = rng.uniform(-10.0, 10.0, 2)
    entry = TemplateEntry.from_mask(L_TEMPLATE)
    pad = (entry.mask.shape[0] - 32) // 2
    centre = np.array(canvas, dtype=float) / 2.0 - 0.5 + shift
    truth = RigidTransform(alpha=1.0 / k, angle=angle, c=tuple(centre))
    omega = transformed_object(entry, l_membership, truth, canvas, pad)
    return omega, entry, truth
