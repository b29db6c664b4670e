"""Displacement Jacobians, closed-form eigenvalues, and spectral NTDC measures.

The transformation Jacobian is J_f = I + J_u, where J_u is the Jacobian of the
displacement (the non-translational component; translations contribute
nothing).  Three scalar measures characterize a DVF per voxel:

  * det J_f          -- local invertibility / volume change
  * rho(J_u)         -- spectral radius of the displacement Jacobian;
                        >= 1 marks a non-small non-translational component
  * 1 - 2*gamma      -- algebraic control index, where
                        gamma = min_j Re(1/lambda_j(J_f));
                        gamma > 0 is the controllability condition, and the
                        index is a lower bound on feasible feedback values

Eigenvalues are computed in closed form: quadratic formula in 2-D, and the
depressed cubic (trigonometric for three real roots, Cardano for a conjugate
pair) in 3-D.  Real/complex classification uses a discriminant tolerance
scaled by the polynomial coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDomain, Uncontrollable
from .grid import DomainMask, GridGeometry, ScalarField, VectorField

__all__ = [
    "EPS_DISC",
    "EPS_SINGULAR",
    "JacobianSample",
    "SpectralMaps",
    "displacement_jacobian",
    "displacement_jacobian_field",
    "boundary_mask",
    "eigenvalues",
    "eigenvalue_field",
    "gamma_of",
    "characterize",
]

EPS_DISC = 1e-12      # discriminant tolerance (scaled) for real/complex split
EPS_SINGULAR = 1e-12  # |lambda| below this counts as a singular Jacobian


# ---------------------------------------------------------------------------
# closed-form eigenvalues


def _eig2_arrays(tr, det):
    """Eigenvalues of 2x2 matrices from trace and determinant.

    Returns (lam (2, ...) complex, is_complex bool).
    """
    tr = np.asarray(tr, dtype=np.float64)
    det = np.asarray(det, dtype=np.float64)
    disc = tr * tr - 4.0 * det
    scale = np.maximum(tr * tr, np.abs(4.0 * det))
    scale = np.maximum(scale, 1e-300)
    is_complex = disc < -EPS_DISC * scale
    sq_re = np.sqrt(np.maximum(disc, 0.0))
    sq_im = np.sqrt(np.maximum(-disc, 0.0))
    lam = np.empty((2,) + tr.shape, dtype=np.complex128)
    lam[0] = np.where(is_complex, (tr - 1j * sq_im) / 2.0, (tr - sq_re) / 2.0)
    lam[1] = np.where(is_complex, (tr + 1j * sq_im) / 2.0, (tr + sq_re) / 2.0)
    return lam, is_complex


def _eig3_arrays(c2, c1, c0):
    """Roots of lambda^3 - c2 lambda^2 + c1 lambda - c0 (real coefficients).

    Shift lambda = t + c2/3 to the depressed cubic t^3 + p t + q with
      p = c1 - c2^2/3,   q = -2 c2^3/27 + c1 c2/3 - c0.
    Discriminant D = -4 p^3 - 27 q^2: three real roots when D >= 0 (solved
    trigonometrically), one real root plus a conjugate pair when D < 0
    (Cardano for the real root; the pair follows from the root sums, which
    avoids any division by the real root).
    """
    c2 = np.asarray(c2, dtype=np.float64)
    c1 = np.asarray(c1, dtype=np.float64)
    c0 = np.asarray(c0, dtype=np.float64)
    p = c1 - c2 * c2 / 3.0
    q = -2.0 * c2**3 / 27.0 + c1 * c2 / 3.0 - c0
    disc = -4.0 * p**3 - 27.0 * q * q
    scale = np.maximum(np.abs(4.0 * p**3), 27.0 * q * q)
    scale = np.maximum(scale, 1e-300)
    is_complex = disc < -EPS_DISC * scale

    # three real roots: t_k = 2 sqrt(-p/3) cos((phi - 2 pi k)/3)
    with np.errstate(invalid="ignore", divide="ignore"):
        pm = np.minimum(p, 0.0)
        rad = 2.0 * np.sqrt(-pm / 3.0)
        cos_arg = np.where(pm < 0, 3.0 * q / (pm * rad + 1e-300), 0.0)
        phi = np.arccos(np.clip(cos_arg, -1.0, 1.0))
    t_real = np.stack([rad * np.cos((phi - 2.0 * np.pi * k) / 3.0) for k in range(3)])

    # one real root via Cardano
    with np.errstate(invalid="ignore"):
        sq = np.sqrt(np.maximum(q * q / 4.0 + p**3 / 27.0, 0.0))
    a3 = np.cbrt(-q / 2.0 + sq)
    b3 = np.cbrt(-q / 2.0 - sq)
    t_r = a3 + b3
    lam_r = t_r + c2 / 3.0
    # pair from sum and second symmetric function: re = (c2 - lam_r)/2,
    # |lam_c|^2 = c1 - lam_r (c2 - lam_r)
    re_c = (c2 - lam_r) / 2.0
    mod2 = c1 - lam_r * (c2 - lam_r)
    im_c = np.sqrt(np.maximum(mod2 - re_c * re_c, 0.0))

    lam = np.empty((3,) + c2.shape, dtype=np.complex128)
    shift = c2 / 3.0
    real_sorted = np.sort(t_real, axis=0) + shift
    for k in range(3):
        lam[k] = real_sorted[k]
    cplx = np.stack([re_c - 1j * im_c, re_c + 1j * im_c, lam_r.astype(np.complex128)])
    # sort the complex-branch triple by (Re, Im)
    order = np.lexsort((cplx.imag, cplx.real), axis=0)
    cplx_sorted = np.take_along_axis(cplx, order, axis=0)
    return np.where(is_complex, cplx_sorted, lam), is_complex


def _sort_eigs(lam: np.ndarray) -> np.ndarray:
    order = np.lexsort((lam.imag, lam.real), axis=0)
    return np.take_along_axis(lam, order, axis=0)


def eigenvalues(matrix: np.ndarray) -> tuple[complex, ...]:
    """Closed-form eigenvalues of a real 2x2 or 3x3 matrix.

    Sorted by (real part, imaginary part); non-real values come in exact
    conjugate pairs.  Classification as complex requires the discriminant to
    be negative beyond a coefficient-scaled tolerance.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape == (2, 2):
        tr = m[0, 0] + m[1, 1]
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        lam, _ = _eig2_arrays(np.float64(tr), np.float64(det))
    elif m.shape == (3, 3):
        c2 = np.trace(m)
        c1 = (
            m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
            + m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]
            + m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1]
        )
        c0 = np.linalg.det(m)
        lam, _ = _eig3_arrays(np.float64(c2), np.float64(c1), np.float64(c0))
    else:
        raise ValueError(f"expected a 2x2 or 3x3 matrix, got shape {m.shape}")
    lam = _sort_eigs(lam.reshape(len(lam), 1))[:, 0]
    return tuple(complex(v) for v in lam)


# ---------------------------------------------------------------------------
# finite-difference Jacobians


@dataclass(frozen=True)
class JacobianSample:
    """Displacement Jacobian at one voxel with the spectrum of I + J_u."""

    j_u: np.ndarray
    eigenvalues: tuple[complex, ...]

    @property
    def j_f(self) -> np.ndarray:
        return np.eye(self.j_u.shape[0]) + self.j_u


def displacement_jacobian_field(u: VectorField) -> np.ndarray:
    """Per-voxel displacement Jacobian, shape (dim, dim, *extent).

    Central differences in physical units on interior points, first-order
    one-sided differences on boundary faces.
    """
    d = u.dimension
    jac = np.empty((d, d, *u.geometry.extent), dtype=np.float64)
    for i in range(d):
        grads = np.gradient(u.components[i].astype(np.float64), *u.geometry.spacing)
        if d == 1:
            grads = [grads]
        for j in range(d):
            jac[i, j] = grads[j]
    return jac


def displacement_jacobian(u: VectorField, index) -> JacobianSample:
    """Jacobian sample at a single grid index (stencil identical to the field
    version: central inside, one-sided on faces)."""
    idx = tuple(int(i) for i in index)
    d = u.dimension
    if len(idx) != d:
        raise ValueError("index length must match dimension")
    for dd in range(d):
        if not 0 <= idx[dd] < u.geometry.extent[dd]:
            raise IndexError(f"index {idx} outside grid {u.geometry.extent}")
    j_u = np.empty((d, d), dtype=np.float64)
    for j in range(d):
        n = u.geometry.extent[j]
        h = u.geometry.spacing[j]
        k = idx[j]

        def at(kk, comp):
            sel = list(idx)
            sel[j] = kk
            return float(u.components[(comp, *sel)])

        for i in range(d):
            if k == 0:
                j_u[i, j] = (at(1, i) - at(0, i)) / h
            elif k == n - 1:
                j_u[i, j] = (at(n - 1, i) - at(n - 2, i)) / h
            else:
                j_u[i, j] = (at(k + 1, i) - at(k - 1, i)) / (2.0 * h)
    lam = eigenvalues(np.eye(d) + j_u)
    return JacobianSample(j_u=j_u, eigenvalues=lam)


def boundary_mask(geometry: GridGeometry) -> DomainMask:
    """Faces of the grid, where Jacobians fall back to one-sided stencils."""
    inside = np.zeros(geometry.extent, dtype=bool)
    for d in range(geometry.dimension):
        sl = [slice(None)] * geometry.dimension
        sl[d] = 0
        inside[tuple(sl)] = True
        sl[d] = geometry.extent[d] - 1
        inside[tuple(sl)] = True
    return DomainMask(geometry, inside)


def eigenvalue_field(u: VectorField, jac: np.ndarray | None = None):
    """Eigenvalues of I + J_u per voxel: (dim, *extent) complex, sorted,
    plus the per-voxel complex-pair flag."""
    if jac is None:
        jac = displacement_jacobian_field(u)
    d = u.dimension
    if d == 2:
        a11 = 1.0 + jac[0, 0]
        a22 = 1.0 + jac[1, 1]
        tr = a11 + a22
        det = a11 * a22 - jac[0, 1] * jac[1, 0]
        lam, is_complex = _eig2_arrays(tr, det)
    else:
        a = jac.copy()
        for i in range(3):
            a[i, i] += 1.0
        c2 = a[0, 0] + a[1, 1] + a[2, 2]
        c1 = (
            a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
            + a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]
            + a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
        )
        c0 = (
            a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
            - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
            + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])
        )
        lam, is_complex = _eig3_arrays(c2, c1, c0)
    return _sort_eigs(lam), is_complex


def _gamma_arrays(lam: np.ndarray):
    """gamma = min_j Re(1/lambda_j) and the controllability flag, vectorized."""
    mod2 = lam.real**2 + lam.imag**2
    singular = np.min(mod2, axis=0) < EPS_SINGULAR**2
    with np.errstate(divide="ignore", invalid="ignore"):
        re_inv = np.where(mod2 > 0, lam.real / mod2, -np.inf)
    gamma = np.min(re_inv, axis=0)
    controllable = ~singular & (gamma > 0.0) & np.isfinite(gamma)
    return gamma, controllable


def gamma_of(eigs) -> float:
    """min_j Re(1/lambda_j) for the spectrum of a transformation Jacobian.

    Raises Uncontrollable for singular Jacobians and whenever the minimum is
    not strictly positive (eigenvalue on the imaginary axis or in the left
    half-plane): no scalar feedback value can contract errors there.
    """
    lam = np.asarray(eigs, dtype=np.complex128).reshape(-1, 1)
    gamma, ok = _gamma_arrays(lam)
    if not bool(ok[0]):
        if np.min(np.abs(lam)) < EPS_SINGULAR:
            raise Uncontrollable("singular Jacobian (an eigenvalue is ~0)")
        raise Uncontrollable(f"min Re(1/lambda) = {float(gamma[0]):.3g} <= 0")
    return float(gamma[0])


# ---------------------------------------------------------------------------
# characterization


@dataclass(frozen=True)
class SpectralMaps:
    """Per-voxel spectral measures of a DVF.

    control_index stores 1 - 2*gamma; it and gamma are valid only on
    controllable voxels.  eigenvalues keeps the raw spectrum (dim, *extent)
    so downstream control-parameter construction needs no second eigen solve.
    """

    det_jf: ScalarField
    rho_ju: ScalarField
    gamma: ScalarField
    control_index: ScalarField
    controllable: DomainMask
    eigenvalues: np.ndarray
    complex_fraction: float
    boundary: DomainMask

    @property
    def geometry(self) -> GridGeometry:
        return self.det_jf.geometry


def characterize(u: VectorField, domain: DomainMask | None = None) -> SpectralMaps:
    """Compute det(J_f), rho(J_u), gamma, and the control index over a domain.

    Uncontrollable voxels are flagged invalid in gamma/control_index, never
    fatal; their fraction is visible via the validity masks.  Also reports
    the fraction of domain voxels whose spectrum has a conjugate pair.
    """
    geom = u.geometry
    if domain is None:
        inside = np.ones(geom.extent, dtype=bool)
    else:
        if domain.geometry != geom:
            raise EmptyDomain("domain geometry mismatch")
        inside = domain.inside
    if not inside.any():
        raise EmptyDomain("empty working domain")

    jac = displacement_jacobian_field(u)
    lam, is_complex = eigenvalue_field(u, jac)

    d = u.dimension
    if d == 2:
        a11 = 1.0 + jac[0, 0]
        a22 = 1.0 + jac[1, 1]
        det = a11 * a22 - jac[0, 1] * jac[1, 0]
    else:
        a = jac.copy()
        for i in range(3):
            a[i, i] += 1.0
        det = (
            a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
            - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
            + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])
        )

    # rho(J_u) from the J_f spectrum shifted by -1
    rho = np.max(np.abs(lam - 1.0), axis=0)
    gamma, controllable = _gamma_arrays(lam)
    ctrl = controllable & inside
    gamma_safe = np.where(ctrl, gamma, 0.0)

    return SpectralMaps(
        det_jf=ScalarField(geom, det, inside),
        rho_ju=ScalarField(geom, rho, inside),
        gamma=ScalarField(geom, gamma_safe, ctrl),
        control_index=ScalarField(geom, 1.0 - 2.0 * gamma_safe, ctrl),
        controllable=DomainMask(geom, ctrl),
        eigenvalues=lam,
        complex_fraction=float(is_complex[inside].mean()),
        boundary=boundary_mask(geom),
    )
