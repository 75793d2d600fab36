"""Kernel-density shape prior over a set of templates.

Each template contributes a kernel ``sqrt(beta / 2 pi) * exp(-beta * U)``
where ``U`` is the shape energy of the segmentation against that template.
The bandwidth ``beta`` follows the scale-normalized nearest-neighbour rule,
and the majorization weights are the normalized kernel responsibilities.
"""

import json
from dataclasses import dataclass, field as dc_field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from ._validation import check_mask, check_nondegenerate
from .alignment import CubicSplineField, align, inertial_scale, moment_init, subpixel_field
from .exceptions import InsufficientTemplates
from .imaging import centroid, load_mask, signed_distance
from .shape_energy import energy_from_samples, sample_template
from .transforms import RigidTransform

__all__ = [
    "DUPLICATE_FLOOR",
    "TemplateEntry",
    "TemplateSet",
    "kernel_value",
    "log_kernel",
    "compute_bandwidth",
    "pairwise_energies",
    "template_energies",
    "mm_weights",
    "weights_from_energies",
    "load_template_manifest",
]

DUPLICATE_FLOOR = 1e-6


def kernel_value(u_shape, beta):
    """``sqrt(beta / 2 pi) * exp(-beta * u_shape)``."""
    return np.sqrt(beta / (2.0 * np.pi)) * np.exp(-beta * np.asarray(u_shape, dtype=float))


def log_kernel(u_shape, beta):
    return 0.5 * np.log(beta / (2.0 * np.pi)) - beta * np.asarray(u_shape, dtype=float)


@dataclass(frozen=True, eq=False)
class TemplateEntry:
    """One template shape with its distance field and current alignment.

    The mask is stored padded with background so transformed points rarely
    leave the raster; ``origin`` (the foreground centroid) is the origin of
    the template frame that transforms map into.
    """

    mask: np.ndarray
    field: np.ndarray
    weight: float
    inertial_scale: float
    origin: np.ndarray
    transform: RigidTransform = dc_field(default_factory=RigidTransform)

    @classmethod
    def from_mask(cls, mask, weight=1.0, margin=None):
        mask = check_nondegenerate(check_mask(mask), "template")
        if margin is None:
            margin = max(mask.shape) // 2
        padded = np.pad(mask, margin, constant_values=False)
        return cls(
            mask=padded,
            field=signed_distance(padded),
            weight=float(weight),
            inertial_scale=inertial_scale(padded),
            origin=centroid(padded),
        )

    @cached_property
    def spline(self):
        return CubicSplineField(subpixel_field(self.field))

    def with_transform(self, transform):
        new = replace(self, transform=transform)
        if "spline" in self.__dict__:
            new.__dict__["spline"] = self.__dict__["spline"]
        return new

    def samples(self, shape, lam=2.0, transform=None):
        return sample_template(shape, self.field, self.origin, transform or self.transform, lam)

    def energy(self, omega, lam=2.0, transform=None):
        """Shape energy of ``omega`` against this template."""
        mass, boundary = energy_from_samples(omega, self.samples(omega.shape, lam, transform))
        return mass + boundary


@dataclass(frozen=True, eq=False)
class TemplateSet:
    entries: tuple
    beta: float

    def __post_init__(self):
        if len(self.entries) < 1:
            raise InsufficientTemplates("a template set needs at least one template")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be finite and positive, got {self.beta}")
        total = sum(e.weight for e in self.entries)
        if any(e.weight <= 0 for e in self.entries):
            raise ValueError("template weights must be positive")
        if abs(total - 1.0) > 1e-12:
            object.__setattr__(self, "entries", tuple(replace_weight(e, e.weight / total) for e in self.entries))

    @property
    def weights(self):
        return np.array([e.weight for e in self.entries])

    def __len__(self):
        return len(self.entries)

    def with_transforms(self, transforms):
        return TemplateSet(tuple(e.with_transform(t) for e, t in zip(self.entries, transforms)), self.beta)

    @classmethod
    def from_masks(cls, masks, weights=None, beta=None, lam=2.0, epsilon=None, margin=None):
        """Build a set from template masks, computing ``beta`` unless given."""
        masks = list(masks)
        if weights is None:
            weights = [1.0 / len(masks)] * len(masks)
        if len(weights) != len(masks):
            raise ValueError("one weight per template is required")
        entries = tuple(TemplateEntry.from_mask(m, w, margin) for m, w in zip(masks, weights))
        if beta is None:
            kwargs = {} if epsilon is None else {"epsilon": epsilon}
            beta = compute_bandwidth(entries, lam, **kwargs)
        return cls(entries, float(beta))


def replace_weight(entry, weight):
    new = replace(entry, weight=weight)
    if "spline" in entry.__dict__:
        new.__dict__["spline"] = entry.__dict__["spline"]
    return new


def _crop(mask, pad):
    rows, cols = np.nonzero(mask)
    r0, c0 = max(rows.min() - pad, 0), max(cols.min() - pad, 0)
    r1, c1 = min(rows.max() + pad + 1, mask.shape[0]), min(cols.max() + pad + 1, mask.shape[1])
    return mask[r0:r1, c0:c1], np.array([r0, c0], dtype=float)


def _align_pair(evolving, template, lam, **align_kwargs):
    """Align ``evolving`` onto ``template``; returns ``(cropped_mask, transform)``.

    The evolving template is cropped to its bounding box plus a margin,
    which leaves the energy of a padded-background raster unchanged while
    keeping the grid small.
    """
    rows, cols = np.nonzero(evolving.mask)
    extent = max(np.ptp(rows), np.ptp(cols)) + 1
    mask, _ = _crop(evolving.mask, int(0.25 * extent) + 4)
    init = moment_init(mask, template.mask, lam, template_field=template.field)
    report = align(mask, template, init, lam=lam, **align_kwargs)
    return mask, report.transform


def pairwise_energies(entries, lam=2.0, **align_kwargs):
    """Matrix ``E[k, j] = U_shape(template_k, template_j)`` after aligning k onto j."""
    entries = list(entries.entries if isinstance(entries, TemplateSet) else entries)
    n = len(entries)
    E = np.full((n, n), np.nan)
    for j, tj in enumerate(entries):
        for k, tk in enumerate(entries):
            if k == j:
                continue
            mask, t = _align_pair(tk, tj, lam, **align_kwargs)
            E[k, j] = tj.energy(mask, lam, t)
    return E


def compute_bandwidth(entries, lam=2.0, energies=None, **align_kwargs):
    """Scale-normalized nearest-neighbour bandwidth.

    ``beta = 1 / sum_j (w_j / s_j**lam) * min_{k != j} U_shape(k, j)``, each
    minimum floored at ``DUPLICATE_FLOOR`` so duplicate templates keep beta
    finite.  Weights are normalized to sum to one first.
    """
    entries = list(entries.entries if isinstance(entries, TemplateSet) else entries)
    if len(entries) < 2:
        raise InsufficientTemplates("bandwidth selection needs two or more templates; pass beta explicitly")
    if energies is None:
        energies = pairwise_energies(entries, lam, **align_kwargs)
    w = np.array([e.weight for e in entries], dtype=float)
    w = w / w.sum()
    s = np.array([e.inertial_scale for e in entries])
    nearest = np.maximum(np.nanmin(energies, axis=0), DUPLICATE_FLOOR)
    return float(1.0 / np.sum(w / s**lam * nearest))


def template_energies(omega, tset, lam=2.0):
    """``U_shape(omega, template_j)`` for every template at its current transform."""
    omega = check_mask(omega)
    return np.array([e.energy(omega, lam) for e in tset.entries])


def mm_weights(omega, tset, lam=2.0, energies=None):
    """Normalized responsibilities ``c_j ~ w_j K(omega, template_j)``.

    Computed in log space, so very unequal energies neither overflow nor
    underflow to an all-zero vector.
    """
    if energies is None:
        energies = template_energies(omega, tset, lam)
    return weights_from_energies(energies, tset.weights, tset.beta)


def weights_from_energies(energies, weights, beta):
    logits = np.log(np.asarray(weights, dtype=float)) - beta * np.asarray(energies, dtype=float)
    logits -= logits.max()
    c = np.exp(logits)
    return c / c.sum()


def load_template_manifest(path):
    """Read a template manifest.

    The JSON is either a list of entries or an object with a ``templates``
    list and an optional ``beta``.  Each entry is ``{"mask_path": ..., "weight": ...}``
    (weight optional, default uniform); relative paths are resolved against
    the manifest's directory.  Returns ``(masks, weights, beta)`` with the
    weights normalized to sum to one.
    """
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    beta = None
    if isinstance(doc, dict):
        beta = doc.get("beta")
        doc = doc.get("templates", [])
    if not doc:
        raise InsufficientTemplates(f"{path}: manifest lists no templates")
    masks, weights = [], []
    for item in doc:
        if isinstance(item, str):
            item = {"mask_path": item}
        p = Path(item["mask_path"])
        if not p.is_absolute():
            p = path.parent / p
        masks.append(load_mask(p))
        weights.append(item.get("weight"))
    if any(w is None for w in weights):
        if not all(w is None for w in weights):
            raise ValueError(f"{path}: give a weight for every template or for none")
        weights = [1.0] * len(masks)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights <= 0):
        raise ValueError(f"{path}: template weights must be positive")
    return masks, list(weights / weights.sum()), beta
