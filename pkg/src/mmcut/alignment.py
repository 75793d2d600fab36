"""Rigid alignment of a template to a segmentation.

A moment-based guess (centroid, radius of gyration, principal axes) seeds a
safeguarded Newton iteration on a smoothed version of the shape energy:

    U(T) = sum_s [ (chi_omega(s) - H_eps(g_s))**2 + delta_eps(phi_omega(s)) ] * |g_s|**lam

with ``g_s = phi_template(origin + T(s))``.  The template field is evaluated
through a cubic B-spline so the energy is twice continuously differentiable
and its analytic gradient and Hessian can be checked against finite
differences.
"""

from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from ._validation import check_mask, check_nondegenerate
from .exceptions import DegenerateShape, NonFiniteEnergy
from .imaging import centroid, pixel_coordinates, signed_distance
from .shape_energy import shape_energy
from .transforms import RigidTransform, rotation

__all__ = [
    "RigidTransform",
    "AlignmentReport",
    "AlignmentEnergy",
    "CubicSplineField",
    "subpixel_field",
    "heaviside",
    "dirac",
    "inertial_scale",
    "moment_init",
    "alignment_energy",
    "energy_gradient",
    "energy_hessian",
    "align",
]

ALPHA_BOUNDS = (0.05, 20.0)
DEFAULT_EPSILON = 0.5
# half-width (pixels, sub-pixel distance) of the band carrying the boundary term
BOUNDARY_BAND = 1.0


def heaviside(x, epsilon=DEFAULT_EPSILON):
    return 0.5 + np.arctan(x / epsilon) / np.pi


def dirac(x, epsilon=DEFAULT_EPSILON):
    return epsilon / (np.pi * (epsilon**2 + x**2))


def _dirac_prime(x, epsilon):
    return -2.0 * epsilon * x / (np.pi * (epsilon**2 + x**2) ** 2)


def _bspline_weights(t):
    # cubic B-spline weights, first and second derivatives for taps -1..2
    t2 = t * t
    t3 = t2 * t
    omt = 1.0 - t
    w = np.stack(
        [omt**3 / 6.0, (3 * t3 - 6 * t2 + 4) / 6.0, (-3 * t3 + 3 * t2 + 3 * t + 1) / 6.0, t3 / 6.0],
        axis=-1,
    )
    d = np.stack([-0.5 * omt**2, 0.5 * (3 * t2 - 4 * t), 0.5 * (-3 * t2 + 2 * t + 1), 0.5 * t2], axis=-1)
    s = np.stack([omt, 3 * t - 2, 1 - 3 * t, t], axis=-1)
    return w, d, s


class CubicSplineField:
    """C2 cubic B-spline interpolant of a 2-D field with value, gradient and Hessian.

    Points are clamped to the raster; in a clamped coordinate the derivatives
    are zero.
    """

    def __init__(self, field):
        field = np.asarray(field, dtype=float)
        self.shape = field.shape
        coeff = ndimage.spline_filter(field, order=3, mode="mirror")
        self._coeff = np.pad(coeff, 2, mode="reflect")

    def evaluate(self, points, derivatives=2):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        h, w = self.shape
        r = np.clip(pts[:, 0], 0.0, h - 1)
        c = np.clip(pts[:, 1], 0.0, w - 1)
        free_r = r == pts[:, 0]
        free_c = c == pts[:, 1]
        r0 = np.floor(r)
        c0 = np.floor(c)
        wr, dr, sr = _bspline_weights(r - r0)
        wc, dc, sc = _bspline_weights(c - c0)
        taps = np.arange(-1, 3)
        ri = (r0.astype(np.intp)[:, None] + taps + 2)[:, :, None]
        ci = (c0.astype(np.intp)[:, None] + taps + 2)[:, None, :]
        patch = self._coeff[ri, ci]
        value = np.einsum("na,nab,nb->n", wr, patch, wc)
        if derivatives == 0:
            return value
        grad = np.empty((pts.shape[0], 2))
        grad[:, 0] = np.einsum("na,nab,nb->n", dr, patch, wc) * free_r
        grad[:, 1] = np.einsum("na,nab,nb->n", wr, patch, dc) * free_c
        if derivatives == 1:
            return value, grad
        hess = np.empty((pts.shape[0], 2, 2))
        hess[:, 0, 0] = np.einsum("na,nab,nb->n", sr, patch, wc) * free_r
        hess[:, 1, 1] = np.einsum("na,nab,nb->n", wr, patch, sc) * free_c
        hess[:, 0, 1] = np.einsum("na,nab,nb->n", dr, patch, dc) * (free_r & free_c)
        hess[:, 1, 0] = hess[:, 0, 1]
        return value, grad, hess


def subpixel_field(field):
    """Shift a pixel-centre distance field so its zero level sits between pixels.

    Pixel-centre distances overstate the distance to the implicit boundary by
    half a pixel; the shifted values are what the alignment energy compares.
    """
    field = np.asarray(field, dtype=float)
    return field - 0.5 * np.sign(field)


def _safe_power(mag, p):
    # |g|**p with 0**p := 0 for p < 0 (measure-zero singular points)
    if p == 0:
        return np.ones_like(mag)
    with np.errstate(divide="ignore"):
        out = mag**p
    if p < 0:
        out[mag == 0] = 0.0
    return out



HESSIAN_TERMS = ("power_curvature", "heaviside_coupling", "heaviside_curvature", "field_hessian", "transform_hessian")


@numba.njit(cache=True, inline="always")
def _powm(mag, p):
    if p == 0.0:
        return 1.0
    if mag == 0.0:
        return 0.0
    return mag**p


@numba.njit(cache=True)
def _fused(coeff, h, w, pts, chi, boundary, origin, vec, lam, eps, order):
    # One pass over the pixels: energy, gradient and the five Hessian terms.
    alpha, c0, c1, ang = vec[0], vec[1], vec[2], vec[3]
    ca, sa = np.cos(ang), np.sin(ang)
    value = 0.0
    grad = np.zeros(4)
    terms = np.zeros((5, 4, 4))
    wr = np.empty(4)
    dr = np.empty(4)
    sr = np.empty(4)
    wc = np.empty(4)
    dc = np.empty(4)
    sc = np.empty(4)
    J = np.empty((2, 4))
    dg = np.empty(4)
    inv_pi = 1.0 / np.pi
    for n in range(pts.shape[0]):
        d0 = pts[n, 0] - c0
        d1 = pts[n, 1] - c1
        rd0 = ca * d0 - sa * d1
        rd1 = sa * d0 + ca * d1
        m0 = alpha * rd0 + origin[0]
        m1 = alpha * rd1 + origin[1]
        r = min(max(m0, 0.0), h - 1.0)
        c = min(max(m1, 0.0), w - 1.0)
        free_r = 1.0 if r == m0 else 0.0
        free_c = 1.0 if c == m1 else 0.0
        ir = int(np.floor(r))
        ic = int(np.floor(c))
        for axis in range(2):
            t = r - ir if axis == 0 else c - ic
            t2 = t * t
            t3 = t2 * t
            omt = 1.0 - t
            ww = wr if axis == 0 else wc
            dd = dr if axis == 0 else dc
            ss = sr if axis == 0 else sc
            ww[0] = omt**3 / 6.0
            ww[1] = (3 * t3 - 6 * t2 + 4) / 6.0
            ww[2] = (-3 * t3 + 3 * t2 + 3 * t + 1) / 6.0
            ww[3] = t3 / 6.0
            dd[0] = -0.5 * omt**2
            dd[1] = 0.5 * (3 * t2 - 4 * t)
            dd[2] = 0.5 * (-3 * t2 + 2 * t + 1)
            dd[3] = 0.5 * t2
            ss[0] = omt
            ss[1] = 3 * t - 2
            ss[2] = 1 - 3 * t
            ss[3] = t
        g = 0.0
        gr = 0.0
        gc = 0.0
        grr = 0.0
        gcc = 0.0
        grc = 0.0
        for a in range(4):
            for b in range(4):
                k = coeff[ir + a + 1, ic + b + 1]
                g += wr[a] * k * wc[b]
                if order > 0:
                    gr += dr[a] * k * wc[b]
                    gc += wr[a] * k * dc[b]
                if order > 1:
                    grr += sr[a] * k * wc[b]
                    gcc += wr[a] * k * sc[b]
                    grc += dr[a] * k * dc[b]
        resid = chi[n] - (0.5 + np.arctan(g / eps) * inv_pi)
        A = resid * resid + boundary[n]
        mag = abs(g)
        P = _powm(mag, lam)
        value += A * P
        if order == 0:
            continue
        gr *= free_r
        gc *= free_c
        Hp = eps * inv_pi / (eps * eps + g * g)
        dA = -2.0 * resid * Hp
        sgn = 1.0 if g > 0 else (-1.0 if g < 0 else 0.0)
        dP = lam * _powm(mag, lam - 1.0) * sgn
        df = dA * P + A * dP
        J[0, 0] = rd0
        J[1, 0] = rd1
        J[0, 1] = -alpha * ca
        J[1, 1] = -alpha * sa
        J[0, 2] = alpha * sa
        J[1, 2] = -alpha * ca
        J[0, 3] = alpha * (-sa * d0 - ca * d1)
        J[1, 3] = alpha * (ca * d0 - sa * d1)
        for p in range(4):
            dg[p] = gr * J[0, p] + gc * J[1, p]
            grad[p] += df * dg[p]
        if order == 1:
            continue
        grr *= free_r
        gcc *= free_c
        grc *= free_r * free_c
        dHp = -2.0 * eps * g * inv_pi / (eps * eps + g * g) ** 2
        d2A = 2.0 * Hp * Hp - 2.0 * resid * dHp
        d2P = lam * (lam - 1.0) * _powm(mag, lam - 2.0)
        k_pow = A * d2P
        k_cpl = 2.0 * dA * dP
        k_crv = d2A * P
        # second derivatives of T contracted with the field gradient
        drd0 = -sa * d0 - ca * d1
        drd1 = ca * d0 - sa * d1
        t01 = -(gr * ca + gc * sa)
        t02 = -(gr * -sa + gc * ca)
        t03 = gr * drd0 + gc * drd1
        t13 = -alpha * (gr * -sa + gc * ca)
        t23 = -alpha * (gr * -ca + gc * -sa)
        t33 = -alpha * (gr * rd0 + gc * rd1)
        for p in range(4):
            for q in range(4):
                o = dg[p] * dg[q]
                terms[0, p, q] += k_pow * o
                terms[1, p, q] += k_cpl * o
                terms[2, p, q] += k_crv * o
                fh = (
                    J[0, p] * grr * J[0, q]
                    + J[0, p] * grc * J[1, q]
                    + J[1, p] * grc * J[0, q]
                    + J[1, p] * gcc * J[1, q]
                )
                terms[3, p, q] += df * fh
        terms[4, 0, 1] += df * t01
        terms[4, 1, 0] += df * t01
        terms[4, 0, 2] += df * t02
        terms[4, 2, 0] += df * t02
        terms[4, 0, 3] += df * t03
        terms[4, 3, 0] += df * t03
        terms[4, 1, 3] += df * t13
        terms[4, 3, 1] += df * t13
        terms[4, 2, 3] += df * t23
        terms[4, 3, 2] += df * t23
        terms[4, 3, 3] += df * t33
    return value, grad, terms


class AlignmentEnergy:
    """Smoothed alignment energy of one (segmentation, template) pair.

    ``omega_field`` is the signed distance field of the segmentation and
    ``template_field`` the template's (or a prebuilt spline of its sub-pixel
    version); ``origin`` is the template-frame origin (the template centroid)
    in template raster coordinates.  Both fields are measured to the sub-pixel
    boundary.  The regularized delta only acts on pixels within ``band`` of
    the segmentation boundary: its Lorentzian tail times ``|g|**lam`` would
    otherwise add a scale-dependent term at every pixel of the grid.
    """

    def __init__(
        self, omega_field, template_field, origin=None, lam=2.0, epsilon=DEFAULT_EPSILON, band=BOUNDARY_BAND
    ):
        omega_field = np.asarray(omega_field, dtype=float)
        if isinstance(template_field, CubicSplineField):
            self.spline = template_field
        else:
            template_field = np.asarray(template_field, dtype=float)
            self.spline = CubicSplineField(subpixel_field(template_field))
            if origin is None:
                origin = centroid(template_field > 0)
        if origin is None:
            raise ValueError("origin is required when passing a prebuilt spline")
        self.lam = float(lam)
        self.epsilon = float(epsilon)
        self.origin = np.asarray(origin, dtype=float)
        self.points = pixel_coordinates(omega_field.shape).reshape(-1, 2)
        self.chi = (omega_field > 0).reshape(-1).astype(float)
        near = subpixel_field(omega_field).reshape(-1)
        self.boundary = np.where(np.abs(near) <= band, dirac(near, self.epsilon), 0.0)

    def _profile(self, g, order):
        # per-pixel f(g) = A(g) * |g|**lam and its first two derivatives in g
        lam, eps = self.lam, self.epsilon
        resid = self.chi - heaviside(g, eps)
        A = resid**2 + self.boundary
        mag = np.abs(g)
        P = _safe_power(mag, lam)
        if order == 0:
            return A * P
        Hp = dirac(g, eps)
        dA = -2.0 * resid * Hp
        dP = lam * _safe_power(mag, lam - 1) * np.sign(g)
        if order == 1:
            return A * P, dA * P + A * dP
        d2A = 2.0 * Hp**2 - 2.0 * resid * _dirac_prime(g, eps)
        d2P = lam * (lam - 1) * _safe_power(mag, lam - 2)
        return A, dA, d2A, P, dP, d2P

    def _mapped(self, vec):
        alpha, c, angle = vec[0], vec[1:3], vec[3]
        R = rotation(angle)
        diff = self.points - c
        return diff, R, alpha * diff @ R.T + self.origin

    def _run(self, vec, order):
        vec = np.asarray(vec, dtype=float)
        h, w = self.spline.shape
        return _fused(
            self.spline._coeff, h, w, self.points, self.chi, self.boundary,
            self.origin, vec, self.lam, self.epsilon, order,
        )

    def value(self, vec):
        return float(self._run(vec, 0)[0])

    def gradient(self, vec):
        return self._run(vec, 1)[1]

    def evaluate_all(self, vec):
        """``(value, gradient, hessian)`` from a single pass, Hessian symmetrized."""
        value, grad, terms = self._run(vec, 2)
        H = terms.sum(axis=0)
        return float(value), grad, 0.5 * (H + H.T)

    def hessian_terms(self, vec):
        """Hessian split into its named contributions (``p x p`` each).

        - ``power_curvature``: ``lam*(lam-1)*A*|g|**(lam-2)`` times the outer
          product of the field gradient pulled back through T;
        - ``heaviside_coupling``: cross term between the smoothed characteristic
          function and ``|g|**lam``;
        - ``heaviside_curvature``: second derivative of the smoothed
          characteristic mismatch;
        - ``field_hessian``: curvature of the template field;
        - ``transform_hessian``: second derivatives of T contracted with the
          field gradient.
        """
        terms = self._run(vec, 2)[2]
        return dict(zip(HESSIAN_TERMS, terms))

    def hessian(self, vec, symmetrize=True):
        H = sum(self.hessian_terms(vec).values())
        if symmetrize:
            H = 0.5 * (H + H.T)
        return H

    # Vectorized numpy evaluation of the same quantities, kept as an
    # independent route for cross-checking the compiled kernel.

    def reference_value(self, vec):
        vec = np.asarray(vec, dtype=float)
        _, _, mapped = self._mapped(vec)
        g = self.spline.evaluate(mapped, derivatives=0)
        return float(np.sum(self._profile(g, 0)))

    def _jacobians(self, vec, second):
        alpha, angle = vec[0], vec[3]
        diff, R, mapped = self._mapped(vec)
        ca, sa = np.cos(angle), np.sin(angle)
        dR = np.array([[-sa, -ca], [ca, -sa]])
        n = diff.shape[0]
        Rd = diff @ R.T
        dRd = diff @ dR.T
        J = np.empty((n, 2, 4))
        J[:, :, 0] = Rd
        J[:, :, 1:3] = -alpha * R
        J[:, :, 3] = alpha * dRd
        if not second:
            return mapped, J, None
        T2 = np.zeros((n, 2, 4, 4))
        T2[:, :, 0, 1:3] = -R
        T2[:, :, 1:3, 0] = -R
        T2[:, :, 0, 3] = dRd
        T2[:, :, 3, 0] = dRd
        T2[:, :, 1:3, 3] = -alpha * dR
        T2[:, :, 3, 1:3] = -alpha * dR
        T2[:, :, 3, 3] = -alpha * Rd
        return mapped, J, T2

    def reference_gradient(self, vec):
        vec = np.asarray(vec, dtype=float)
        mapped, J, _ = self._jacobians(vec, second=False)
        g, grad_phi = self.spline.evaluate(mapped, derivatives=1)
        _, df = self._profile(g, 1)
        dg = np.einsum("nk,nkp->np", grad_phi, J)
        return df @ dg

    def reference_hessian_terms(self, vec):
        vec = np.asarray(vec, dtype=float)
        mapped, J, T2 = self._jacobians(vec, second=True)
        g, grad_phi, hess_phi = self.spline.evaluate(mapped, derivatives=2)
        A, dA, d2A, P, dP, d2P = self._profile(g, 2)
        df = dA * P + A * dP
        dg = np.einsum("nk,nkp->np", grad_phi, J)
        outer = np.einsum("np,nq->npq", dg, dg)
        return {
            "power_curvature": np.einsum("n,npq->pq", A * d2P, outer),
            "heaviside_coupling": np.einsum("n,npq->pq", 2.0 * dA * dP, outer),
            "heaviside_curvature": np.einsum("n,npq->pq", d2A * P, outer),
            "field_hessian": np.einsum("n,nkp,nkl,nlq->pq", df, J, hess_phi, J, optimize=True),
            "transform_hessian": np.einsum("n,nk,nkpq->pq", df, grad_phi, T2, optimize=True),
        }



def _energy_for(omega_field, template_field, origin, lam, epsilon):
    return AlignmentEnergy(omega_field, template_field, origin=origin, lam=lam, epsilon=epsilon)


def alignment_energy(omega_field, template_field, transform, lam=2.0, epsilon=DEFAULT_EPSILON, origin=None):
    """Value of the smoothed alignment energy at ``transform``."""
    return _energy_for(omega_field, template_field, origin, lam, epsilon).value(transform.as_vector())


def energy_gradient(omega_field, template_field, transform, lam=2.0, epsilon=DEFAULT_EPSILON, origin=None):
    """Gradient over ``[alpha, c_row, c_col, angle]``."""
    if not lam > 0:
        raise ValueError("the alignment gradient needs lam > 0")
    return _energy_for(omega_field, template_field, origin, lam, epsilon).gradient(transform.as_vector())


def energy_hessian(omega_field, template_field, transform, lam=2.0, epsilon=DEFAULT_EPSILON, origin=None):
    """Symmetrized 4x4 Hessian over ``[alpha, c_row, c_col, angle]``."""
    if not lam > 0:
        raise ValueError("the alignment Hessian needs lam > 0")
    return _energy_for(omega_field, template_field, origin, lam, epsilon).hessian(transform.as_vector())


def _second_moments(mask):
    idx = np.argwhere(mask).astype(float)
    if idx.shape[0] < 3:
        raise DegenerateShape(f"need at least 3 foreground pixels for moments, got {idx.shape[0]}")
    center = idx.mean(axis=0)
    d = idx - center
    cov = d.T @ d / idx.shape[0]
    return center, cov


def inertial_scale(mask):
    """Radius of gyration of the foreground pixels about their centroid."""
    _, cov = _second_moments(check_mask(mask))
    return float(np.sqrt(np.trace(cov)))


def _orientation(cov):
    return 0.5 * np.arctan2(2.0 * cov[0, 1], cov[0, 0] - cov[1, 1])


def _anisotropy(cov):
    ev = np.linalg.eigvalsh(cov)
    return ev[0] / ev[1] if ev[1] > 0 else 1.0


ISOTROPY_RATIO = 0.8


def moment_init(omega, template_mask, lam=2.0, template_field=None):
    """Moment-based initial transform mapping ``omega`` onto the template.

    The centre is the centroid of ``omega``, the scale the ratio of the
    radii of gyration, and the angle the difference of principal-axis
    orientations.  The two axis directions ``{theta, theta + pi}`` are
    disambiguated by the lower shape energy.  When either shape is nearly
    isotropic its principal axis carries no information, so a sweep of 24
    angles is scored instead.
    """
    omega = check_nondegenerate(check_mask(omega), "segmentation")
    template_mask = check_nondegenerate(check_mask(template_mask), "template")
    c_o, cov_o = _second_moments(omega)
    _, cov_t = _second_moments(template_mask)
    alpha = np.sqrt(np.trace(cov_t) / np.trace(cov_o))
    base = _orientation(cov_t) - _orientation(cov_o)
    if min(_anisotropy(cov_o), _anisotropy(cov_t)) > ISOTROPY_RATIO:
        candidates = base + np.arange(24) * (np.pi / 12.0)
    else:
        candidates = (base, base + np.pi)
    if template_field is None:
        template_field = signed_distance(template_mask)
    best, best_energy = None, np.inf
    for angle in candidates:
        angle = float(np.angle(np.exp(1j * angle)))
        t = RigidTransform(alpha=alpha, angle=angle, c=tuple(c_o))
        e = shape_energy(omega, template_field, template_mask, t, lam)
        if e < best_energy:
            best, best_energy = t, e
    return best


@dataclass(frozen=True)
class AlignmentReport:
    transform: RigidTransform
    final_energy: float
    iterations: int
    converged: bool
    fallback_steps: int


def _clamp(vec):
    vec = vec.copy()
    vec[0] = np.clip(vec[0], *ALPHA_BOUNDS)
    return vec


def align(
    omega,
    template,
    init,
    max_iter=50,
    tol=1e-4,
    lam=2.0,
    epsilon=DEFAULT_EPSILON,
    energy_tol=1e-8,
    omega_field=None,
):
    """Newton–Raphson refinement of ``init`` on the smoothed alignment energy.

    ``template`` is anything with ``field`` and ``origin`` attributes (for
    instance a :class:`mmcut.shape_prior.TemplateEntry`).  A Newton step is
    taken when the Hessian is positive definite and the step lowers the
    energy; otherwise a diagonally scaled gradient step is halved until the
    energy decreases (at most 20 halvings).  The energy never increases.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if omega_field is None:
        omega_field = signed_distance(omega)
    spline = getattr(template, "spline", None) or CubicSplineField(subpixel_field(template.field))
    problem = AlignmentEnergy(omega_field, spline, origin=template.origin, lam=lam, epsilon=epsilon)

    def evaluate(v):
        e = problem.value(v)
        if not np.isfinite(e):
            raise NonFiniteEnergy(f"alignment energy is not finite at {v}")
        return e

    x = _clamp(init.as_vector())
    energy = evaluate(x)
    converged = False
    fallback = 0
    it = 0
    for it in range(1, max_iter + 1):
        _, grad, hess = problem.evaluate_all(x)
        if not np.all(np.isfinite(grad)) or not np.all(np.isfinite(hess)):
            raise NonFiniteEnergy(f"alignment derivatives are not finite at {x}")
        x_new, e_new = None, None
        try:
            np.linalg.cholesky(hess)
            cand = _clamp(x - np.linalg.solve(hess, grad))
            e_cand = evaluate(cand)
            if e_cand <= energy:
                x_new, e_new = cand, e_cand
        except np.linalg.LinAlgError:
            pass
        if x_new is None:
            fallback += 1
            scale = np.abs(np.diag(hess))
            scale = np.where(scale > 1e-12, scale, max(scale.max(), 1.0))
            direction = -grad / scale
            step = 1.0
            for _ in range(21):
                cand = _clamp(x + step * direction)
                e_cand = evaluate(cand)
                if e_cand < energy:
                    x_new, e_new = cand, e_cand
                    break
                step *= 0.5
        if x_new is None:
            converged = True
            break
        moved = np.max(np.abs(x_new - x))
        decrease = energy - e_new
        x, energy = x_new, e_new
        if moved < tol or decrease < energy_tol:
            converged = True
            break
    return AlignmentReport(
        transform=RigidTransform.from_vector(x),
        final_energy=energy,
        iterations=it,
        converged=converged,
        fallback_steps=fallback,
    )
