"""Asymmetric shape energy between a labeling and a template, 8-connected form.

The energy has a mass term over pixels whose label disagrees with the
template sampled at the transformed position, and a boundary term over
8-neighbour pairs straddling the labeling's boundary, each pair weighted by
``pi / (8 |s - u|)``.  Both terms weight by ``|phi_template|**lam``.
"""

from typing import NamedTuple

import numba
import numpy as np

from ._validation import check_mask
from .imaging import _bilinear, centroid

__all__ = [
    "PAIRS",
    "TemplateSamples",
    "sample_template",
    "shape_energy",
    "decompose_energy",
    "energy_from_samples",
]

SQRT2 = np.sqrt(2.0)

# (first-pixel slice, second-pixel slice, pixel distance) for each of the four
# forward neighbour directions; together they enumerate every unordered
# 8-connected pair exactly once.
PAIRS = (
    ((slice(None), slice(None, -1)), (slice(None), slice(1, None)), 1.0),
    ((slice(None, -1), slice(None)), (slice(1, None), slice(None)), 1.0),
    ((slice(None, -1), slice(None, -1)), (slice(1, None), slice(1, None)), SQRT2),
    ((slice(None, -1), slice(1, None)), (slice(1, None), slice(None, -1)), SQRT2),
)


class TemplateSamples(NamedTuple):
    """A template evaluated on the pixels and pair midpoints of a grid."""

    inside: np.ndarray  # chi of the template at each transformed pixel
    pixel_weight: np.ndarray  # |phi|**lam at each transformed pixel
    pair_weight: tuple  # |phi|**lam at transformed midpoints, one array per PAIRS entry


def _power(mag, lam):
    if lam == 0:
        return np.ones_like(mag)
    return mag**lam


@numba.njit(cache=True)
def _sample_grid(field, h, w, vec, origin, phi, mids):
    # template field at every mapped pixel and at the mapped midpoints of the
    # east, south, south-east and south-west pairs
    alpha, c0, c1, ang = vec[0], vec[1], vec[2], vec[3]
    ca, sa = np.cos(ang), np.sin(ang)
    mapped = np.empty((h, w, 2))
    for i in range(h):
        for j in range(w):
            d0 = i - c0
            d1 = j - c1
            mapped[i, j, 0] = alpha * (ca * d0 - sa * d1) + origin[0]
            mapped[i, j, 1] = alpha * (sa * d0 + ca * d1) + origin[1]
    _bilinear(field, mapped.reshape(h * w, 2), phi)
    pt = np.empty((1, 2))
    val = np.empty(1)
    offsets = ((0, 0, 0, 1), (0, 0, 1, 0), (0, 0, 1, 1), (0, 1, 1, 0))
    for k in range(4):
        a0, b0, a1, b1 = offsets[k]
        out = mids[k]
        for i in range(out.shape[0]):
            for j in range(out.shape[1]):
                # T is affine, so the transformed midpoint is the midpoint of the images
                pt[0, 0] = 0.5 * (mapped[i + a0, j + b0, 0] + mapped[i + a1, j + b1, 0])
                pt[0, 1] = 0.5 * (mapped[i + a0, j + b0, 1] + mapped[i + a1, j + b1, 1])
                _bilinear(field, pt, val)
                out[i, j] = val[0]


def sample_template(shape, template_field, origin, transform, lam=2.0):
    """Sample a template field at ``origin + T(s)`` for every pixel ``s`` of ``shape``."""
    h, w = shape
    field = np.ascontiguousarray(template_field, dtype=float)
    phi = np.empty(h * w)
    mids = (np.empty((h, w - 1)), np.empty((h - 1, w)), np.empty((h - 1, w - 1)), np.empty((h - 1, w - 1)))
    _sample_grid(field, h, w, transform.as_vector(), np.asarray(origin, dtype=float), phi, mids)
    phi = phi.reshape(h, w)
    pair_weight = tuple(_power(np.abs(m), lam) for m in mids)
    return TemplateSamples(phi > 0, _power(np.abs(phi), lam), pair_weight)


def energy_from_samples(omega, samples):
    """``(mass, boundary)`` of a labeling against pre-sampled template values."""
    mass = float(np.sum(samples.pixel_weight[omega != samples.inside]))
    boundary = 0.0
    for (sa, sb, dist), weight in zip(PAIRS, samples.pair_weight):
        cut = omega[sa] != omega[sb]
        boundary += np.pi / (8.0 * dist) * float(np.sum(weight[cut]))
    return mass, boundary


def decompose_energy(omega, template_field, template_mask, transform, lam=2.0):
    """Mass-mismatch and boundary-mismatch parts of the shape energy.

    ``transform`` maps pixels of ``omega`` into the frame of the template,
    whose origin is the centroid of ``template_mask``.
    """
    omega = check_mask(omega)
    if lam < 0:
        raise ValueError("lam must be non-negative")
    origin = centroid(template_mask)
    samples = sample_template(omega.shape, template_field, origin, transform, lam)
    return energy_from_samples(omega, samples)


def shape_energy(omega, template_field, template_mask, transform, lam=2.0):
    mass, boundary = decompose_energy(omega, template_field, template_mask, transform, lam)
    return mass + boundary
