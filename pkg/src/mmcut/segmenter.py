"""Majorization-minimization graph-cut segmentation with a KDE shape prior.

Each iteration linearizes the log-sum of template kernels around the current
labeling (a weighted sum of shape energies), minimizes that surrogate
exactly with a min-cut, then optionally refits the intensity model and
realigns the templates.
"""

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator

from ._validation import check_image, check_mask
from .alignment import DEFAULT_EPSILON, align, moment_init
from .exceptions import EmptyShape
from .graphcut import build_network, max_flow
from .imaging import centroid, signed_distance
from .intensity import fit as fit_intensity
from .intensity import initial_params
from .shape_energy import energy_from_samples, shape_energy
from .shape_prior import TemplateSet, log_kernel, weights_from_energies
from .transforms import RigidTransform

__all__ = [
    "SegmenterConfig",
    "IterationRecord",
    "IterationTrace",
    "intensity_energy",
    "total_energy",
    "surrogate_energy",
    "stationarity_energy",
    "segment",
    "MMGraphCutSegmenter",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmenterConfig:
    """Knobs of the MM loop.

    ``refit_fraction`` and ``realign_fraction`` are the numbers of label
    changes since the last intensity fit or template alignment, relative to
    the foreground area at that time, above which it is redone.
    ``anneal_iters > 0`` ramps beta linearly over that many iterations.
    """

    lam: float = 2.0
    beta_override: float | None = None
    tol_shape: float = 1e-6
    max_mm_iters: int = 50
    refit_fraction: float = 0.02
    realign_fraction: float = 0.02
    shared_transform: bool = False
    epsilon_smooth: float = DEFAULT_EPSILON
    foreground: str = "auto"
    anneal_iters: int = 0
    align_max_iter: int = 50
    align_tol: float = 1e-4

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        for name in ("tol_shape", "refit_fraction", "realign_fraction", "epsilon_smooth"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_mm_iters < 1:
            raise ValueError("max_mm_iters must be at least 1")
        if self.beta_override is not None and not self.beta_override > 0:
            raise ValueError("beta_override must be positive")
        if self.foreground not in ("auto", "bright", "dark"):
            raise ValueError(f"unknown foreground polarity {self.foreground!r}")
        if self.anneal_iters < 0:
            raise ValueError("anneal_iters must be non-negative")

    @classmethod
    def from_dict(cls, values):
        """Build from a mapping; ``lambda`` is accepted as an alias of ``lam``."""
        values = dict(values)
        if "lambda" in values:
            values["lam"] = values.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown segmenter options: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self):
        return asdict(self)

    def beta_at(self, beta, iteration):
        if self.anneal_iters > 0:
            return beta * min(1.0, iteration / self.anneal_iters)
        return beta


@dataclass
class IterationRecord:
    iteration: int
    total_energy: float
    surrogate_energy: float
    labels_changed: int
    weights: np.ndarray
    transforms: list
    stationarity: float
    refit: bool = False
    realigned: bool = False


@dataclass
class IterationTrace:
    """Per-iteration diagnostics of one :func:`segment` call.

    ``initial_energy`` is the total energy of the shape-free initial
    labeling under the initial intensity model and alignment.
    """

    records: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = ""
    initial_energy: float = float("nan")
    initial_transforms: list = field(default_factory=list)
    params: object = None

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self):
        return len(self.records)

    @property
    def total_energies(self):
        return np.array([r.total_energy for r in self.records])

    @property
    def weights(self):
        return np.array([r.weights for r in self.records])

    @property
    def final_transforms(self):
        return self.records[-1].transforms if self.records else self.initial_transforms


def intensity_energy(omega, image, params):
    """Summed negative log-likelihood of the image under the labeling."""
    return float(np.sum(np.where(omega, params.nll_fg(image), params.nll_bg(image))))


def _shape_energies(omega, tset, lam, samples=None):
    if samples is None:
        samples = [e.samples(omega.shape, lam) for e in tset.entries]
    return np.array([sum(energy_from_samples(omega, s)) for s in samples])


def total_energy(omega, image, params, tset, lam=2.0, beta=None, energies=None):
    """Posterior energy up to a constant.

    Intensity negative log-likelihood minus the log of the weighted kernel
    sum, which is evaluated with log-sum-exp.  The uninformative prior on
    the intensity parameters contributes only a constant and is left out.
    """
    omega = check_mask(omega)
    beta = tset.beta if beta is None else beta
    if energies is None:
        energies = _shape_energies(omega, tset, lam)
    log_terms = np.log(tset.weights) + log_kernel(energies, beta)
    return intensity_energy(omega, image, params) - float(logsumexp(log_terms))


def surrogate_energy(omega, image, params, tset, weights, lam=2.0, beta=None, energies=None):
    """Linearized upper bound: intensity terms plus ``beta * sum_j c_j U_j``.

    ``weights`` are the MM weights computed at the anchor labeling.
    """
    omega = check_mask(omega)
    beta = tset.beta if beta is None else beta
    if energies is None:
        energies = _shape_energies(omega, tset, lam)
    return intensity_energy(omega, image, params) + beta * float(np.dot(weights, energies))


def stationarity_energy(new, old, lam=2.0):
    """Shape energy of ``new`` against ``old`` on the same grid, identity transform."""
    origin = centroid(old)
    t = RigidTransform(c=tuple(origin))
    return shape_energy(new, signed_distance(old), old, t, lam)


def _align_all(omega, tset, config, inits=None):
    field_omega = signed_distance(omega)
    entries = tset.entries
    kwargs = dict(
        lam=config.lam,
        epsilon=config.epsilon_smooth,
        max_iter=config.align_max_iter,
        tol=config.align_tol,
        omega_field=field_omega,
    )
    if inits is None:
        inits = [None] * len(entries)
    if config.shared_transform:
        lead = int(np.argmax(tset.weights))
        init = inits[lead] or moment_init(omega, entries[lead].mask, config.lam, entries[lead].field)
        t = align(omega, entries[lead], init, **kwargs).transform
        return [t] * len(entries)
    out = []
    for entry, init in zip(entries, inits):
        if init is None:
            init = moment_init(omega, entry.mask, config.lam, entry.field)
        out.append(align(omega, entry, init, **kwargs).transform)
    return out


def _check_labels(labels, iteration):
    if not labels.any() or labels.all():
        kind = "background" if not labels.any() else "foreground"
        raise EmptyShape(f"segmentation collapsed to all {kind} at iteration {iteration}")


def segment(image, tset, config=None, on_network=None):
    """Run the MM graph-cut loop.

    Returns ``(mask, trace)``.  The loop stops when the new labeling is
    stationary (identical, or shape energy against the previous iterate at
    most ``tol_shape``) and neither a refit nor a realignment fired, or after
    ``max_mm_iters`` iterations.  ``on_network(iteration, network)`` is
    called with every flow network before it is solved, the shape-free
    initial one as iteration 0.
    """
    config = config or SegmenterConfig()
    image = check_image(image)
    lam = config.lam
    beta = config.beta_override if config.beta_override is not None else tset.beta

    params, provisional = initial_params(image, config.foreground)
    network = build_network(image, params)
    if on_network is not None:
        on_network(0, network)
    omega = max_flow(network).labeling
    _check_labels(omega, 0)
    transforms = _align_all(omega, tset, config)
    tset = tset.with_transforms(transforms)
    fitted_on = provisional
    aligned_on = omega

    trace = IterationTrace(initial_transforms=list(transforms))
    trace.initial_energy = total_energy(omega, image, params, tset, lam, config.beta_at(beta, 1))
    for n in range(1, config.max_mm_iters + 1):
        beta_n = config.beta_at(beta, n)
        samples = [e.samples(image.shape, lam) for e in tset.entries]
        anchor = _shape_energies(omega, tset, lam, samples)
        c = weights_from_energies(anchor, tset.weights, beta_n)
        network = build_network(image, params, tset, c, lam, beta=beta_n, samples=samples)
        if on_network is not None:
            on_network(n, network)
        new = max_flow(network).labeling
        _check_labels(new, n)
        energies = _shape_energies(new, tset, lam, samples)
        surrogate = surrogate_energy(new, image, params, tset, c, lam, beta_n, energies)
        total = total_energy(new, image, params, tset, lam, beta_n, energies)
        changed = int(np.count_nonzero(new != omega))
        stationarity = 0.0 if changed == 0 else stationarity_energy(new, omega, lam)

        refit = np.count_nonzero(new != fitted_on) > config.refit_fraction * np.count_nonzero(fitted_on)
        if refit:
            params = fit_intensity(image, new)
            fitted_on = new
        realigned = np.count_nonzero(new != aligned_on) > config.realign_fraction * np.count_nonzero(aligned_on)
        if realigned:
            transforms = _align_all(new, tset, config, inits=list(transforms))
            tset = tset.with_transforms(transforms)
            aligned_on = new

        trace.records.append(
            IterationRecord(
                iteration=n,
                total_energy=total,
                surrogate_energy=surrogate,
                labels_changed=changed,
                weights=c,
                transforms=list(transforms),
                stationarity=stationarity,
                refit=bool(refit),
                realigned=bool(realigned),
            )
        )
        log.info(
            "iter %d  total %.6g  surrogate %.6g  changed %d  c %s",
            n, total, surrogate, changed, np.array2string(c, precision=3),
        )
        omega = new
        if stationarity <= config.tol_shape and not (refit or realigned):
            trace.converged = True
            trace.stop_reason = "stationary"
            break
    else:
        trace.stop_reason = "max_iters"
    trace.params = params
    return omega, trace


class MMGraphCutSegmenter(BaseEstimator):
    """Estimator wrapper around :func:`segment`.

    ``fit`` takes a list of template masks and builds the template set,
    selecting the bandwidth unless ``beta`` is given; ``predict`` segments
    one image.
    """

    def __init__(
        self,
        lam=2.0,
        beta=None,
        template_weights=None,
        tol_shape=1e-6,
        max_mm_iters=50,
        refit_fraction=0.02,
        realign_fraction=0.02,
        shared_transform=False,
        epsilon_smooth=DEFAULT_EPSILON,
        foreground="auto",
    ):
        self.lam = lam
        self.beta = beta
        self.template_weights = template_weights
        self.tol_shape = tol_shape
        self.max_mm_iters = max_mm_iters
        self.refit_fraction = refit_fraction
        self.realign_fraction = realign_fraction
        self.shared_transform = shared_transform
        self.epsilon_smooth = epsilon_smooth
        self.foreground = foreground

    def _config(self):
        return SegmenterConfig(
            lam=self.lam,
            tol_shape=self.tol_shape,
            max_mm_iters=self.max_mm_iters,
            refit_fraction=self.refit_fraction,
            realign_fraction=self.realign_fraction,
            shared_transform=self.shared_transform,
            epsilon_smooth=self.epsilon_smooth,
            foreground=self.foreground,
        )

    def fit(self, X, y=None):
        masks = [check_mask(m) for m in X]
        if not masks:
            raise ValueError("at least one template mask is required")
        self._config()
        self.templates_ = TemplateSet.from_masks(
            masks, weights=self.template_weights, beta=self.beta, lam=self.lam, epsilon=self.epsilon_smooth
        )
        self.beta_ = self.templates_.beta
        self.n_templates_ = len(masks)
        return self

    def _check_fitted(self):
        if not hasattr(self, "templates_"):
            raise AttributeError("call fit with template masks before predict")

    def segment(self, image):
        """Segment ``image``; returns ``(mask, trace)``."""
        self._check_fitted()
        return segment(image, self.templates_, self._config())

    def predict(self, X):
        mask, trace = self.segment(X)
        self.trace_ = trace
        return mask
