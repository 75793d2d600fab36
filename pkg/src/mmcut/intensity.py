"""Laplacian foreground/background intensity likelihoods."""

from dataclasses import dataclass

import numpy as np

from ._validation import check_image, check_mask
from .exceptions import EmptyRegion

__all__ = [
    "B_FLOOR",
    "LaplaceParams",
    "fit_laplace",
    "fit",
    "neg_log_likelihood",
    "two_means_threshold",
    "initial_params",
]

B_FLOOR = 1e-3


@dataclass(frozen=True)
class LaplaceParams:
    """Location and scale of the foreground and background Laplace models."""

    mu_fg: float
    b_fg: float
    mu_bg: float
    b_bg: float

    def __post_init__(self):
        if self.b_fg < B_FLOOR or self.b_bg < B_FLOOR:
            raise ValueError(f"Laplace scales must be at least {B_FLOOR}")

    def nll_fg(self, intensity):
        return neg_log_likelihood(intensity, self.mu_fg, self.b_fg)

    def nll_bg(self, intensity):
        return neg_log_likelihood(intensity, self.mu_bg, self.b_bg)

    def to_dict(self):
        return {"mu_fg": self.mu_fg, "b_fg": self.b_fg, "mu_bg": self.mu_bg, "b_bg": self.b_bg}


def neg_log_likelihood(intensity, mu, b):
    """``-log`` of the Laplace density: ``log(2 b) + |I - mu| / b``."""
    return np.log(2.0 * b) + np.abs(np.asarray(intensity, dtype=float) - mu) / b


def fit_laplace(values):
    """Maximum-likelihood Laplace fit: median and mean absolute deviation from it."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise EmptyRegion("cannot fit a Laplace model to an empty region")
    mu = float(np.median(values))
    b = float(np.mean(np.abs(values - mu)))
    return mu, max(b, B_FLOOR)


def fit(image, mask):
    """Fit foreground and background models to the regions of ``mask``."""
    image = check_image(image)
    mask = check_mask(mask, image.shape)
    if not mask.any() or mask.all():
        raise EmptyRegion("both foreground and background need at least one pixel")
    mu_fg, b_fg = fit_laplace(image[mask])
    mu_bg, b_bg = fit_laplace(image[~mask])
    return LaplaceParams(mu_fg, b_fg, mu_bg, b_bg)


def two_means_threshold(values, max_iter=100):
    """Threshold splitting ``values`` into two clusters by 1-D 2-means."""
    values = np.asarray(values, dtype=float).ravel()
    lo, hi = values.min(), values.max()
    if lo == hi:
        return lo
    thr = 0.5 * (lo + hi)
    for _ in range(max_iter):
        low = values[values <= thr]
        high = values[values > thr]
        if low.size == 0 or high.size == 0:
            break
        new = 0.5 * (low.mean() + high.mean())
        if new == thr:
            break
        thr = new
    return thr


def initial_params(image, foreground="auto"):
    """Provisional regions from a 2-means split of the intensities, then a fit.

    ``foreground`` selects which cluster is the object: ``"bright"``,
    ``"dark"``, or ``"auto"`` (the cluster occupying less of the image
    border, brighter on ties).  Returns ``(params, provisional_mask)``.
    """
    image = check_image(image)
    thr = two_means_threshold(image)
    bright = image > thr
    if not bright.any() or bright.all():
        raise EmptyRegion("image intensities do not separate into two clusters")
    if foreground == "bright":
        mask = bright
    elif foreground == "dark":
        mask = ~bright
    elif foreground == "auto":
        border = np.concatenate([bright[0], bright[-1], bright[1:-1, 0], bright[1:-1, -1]])
        mask = bright if border.mean() <= 0.5 else ~bright
    else:
        raise ValueError(f"foreground must be 'auto', 'bright' or 'dark', got {foreground!r}")
    return fit(image, mask), mask
