"""Feedback-control parameter selection.

The inversion iteration updates v_{k+1} = v_k - (1 - mu) r_k, and the local
error-contraction matrix is Q(mu) = I - (1 - mu) J_f.  Everything here is
about choosing mu:

  * feasible range     (max{-1, 1 - 2*gamma}, 1), non-empty iff gamma > 0
  * mid-range value    the midpoint of that range: 1 - gamma for gamma < 1,
                       0 once the range is the whole (-1, 1)
  * locally optimal    mu* minimizing rho(Q(mu)); three spectrum classes:
        R : all eigenvalues real (positive under controllability)
              mu* = 1 - 2/(lmax + lmin),  rho* = (lmax - lmin)/(lmax + lmin)
        C1: conjugate pair lc binding  (|1 - gc*lr| <= |1 - gc*lc|)
              mu* = 1 - gc,             gc = Re(lc)/|lc|^2
        C2: real eigenvalue sticks out; rescale until all three sit on one
            circle:  1 - mu* = 2 Re(lc - lr) / (|lc|^2 - lr^2)
      with rho* = |1 - (1 - mu*) lc| in both complex cases
  * alternating        two uniform values applied on alternating steps,
                       adaptively the 50th/98th-percentile mid-range values
  * spatially variant  a per-voxel mu* map with neighborhood mid-range
                       fallback where the optimum is undefined

The lower bound of -1 on every stored value avoids the severe cancellation
that over-relaxation below -1 invites.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ._stats import percentile_exact
from .errors import InfeasibleControl
from .grid import DomainMask, ScalarField, VectorField
from .spectral import SpectralMaps, _gamma_arrays

__all__ = [
    "FeasibleRange",
    "OptimalControl",
    "feasible_range",
    "midrange_mu",
    "neighborhood_gamma",
    "optimal_mu",
    "optimal_mu_arrays",
    "midrange_map",
    "build_mu_map",
    "alternating_from_percentiles",
    "Constant",
    "Alternating",
    "MidRange",
    "SpatiallyVariant",
    "Hybrid",
]

_MU_EPS = 1e-12  # keep returned values strictly inside (-1, 1)


@dataclass(frozen=True)
class FeasibleRange:
    """Open interval of feedback values with guaranteed contraction."""

    lower: float
    upper: float = 1.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise InfeasibleControl(f"empty range ({self.lower}, {self.upper})")

    def contains(self, mu: float) -> bool:
        return self.lower < mu < self.upper

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


def feasible_range(gamma: float) -> FeasibleRange:
    """Local feasible parameter range (max{-1, 1 - 2*gamma}, 1)."""
    if not gamma > 0.0:
        raise InfeasibleControl(f"controllability violated: gamma = {gamma} <= 0")
    return FeasibleRange(max(-1.0, 1.0 - 2.0 * float(gamma)))


def midrange_mu(gamma: float) -> float:
    """Midpoint of the feasible range: 1 - gamma when gamma < 1, else 0."""
    return feasible_range(gamma).midpoint


def neighborhood_gamma(gamma_map: ScalarField, radius: float) -> ScalarField:
    """Per-voxel minimum of gamma over an axis-aligned box of physical radius.

    Invalid voxels are ignored; output validity is false only where every
    voxel in the window is invalid.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    geom = gamma_map.geometry
    size = tuple(2 * int(np.floor(radius / s)) + 1 for s in geom.spacing)
    if all(k == 1 for k in size):
        return gamma_map
    work = np.where(gamma_map.validity, gamma_map.values, np.inf)
    mins = ndimage.minimum_filter(work, size=size, mode="nearest")
    valid = np.isfinite(mins)
    return ScalarField(geom, np.where(valid, mins, 0.0), valid)


@dataclass(frozen=True)
class OptimalControl:
    """Locally optimal feedback value with its attained contraction ratio."""

    mu: float
    rho: float
    case: str  # "R", "C1", or "C2"
    clamped: bool = False


def optimal_mu(eigs) -> OptimalControl:
    """Feedback value minimizing the contraction ratio for one spectrum.

    Input: eigenvalues of the transformation Jacobian J_f (2 or 3 of them).
    Raises InfeasibleControl when the controllability condition fails.
    Values falling outside (-1, 1) are clamped and flagged, with the ratio
    re-evaluated at the clamped value.
    """
    lam = np.asarray(eigs, dtype=np.complex128).reshape(-1, 1)
    gamma, ok = _gamma_arrays(lam)
    if not bool(ok[0]):
        raise InfeasibleControl(f"gamma = {float(gamma[0]):.3g} <= 0 (or singular)")
    mu, rho, case, clamped = (np.asarray(v).reshape(-1) for v in optimal_mu_arrays(lam))
    return OptimalControl(
        mu=float(mu[0]),
        rho=float(rho[0]),
        case={0: "R", 1: "C1", 2: "C2"}[int(case[0])],
        clamped=bool(clamped[0]),
    )


def optimal_mu_arrays(lam: np.ndarray):
    """Vectorized optimal control over spectra stacked as (dim, ...).

    Caller guarantees controllability.  Returns (mu, rho, case_code,
    clamped) with case codes 0=R, 1=C1, 2=C2.
    """
    dim = lam.shape[0]
    is_real = np.all(lam.imag == 0.0, axis=0)

    lmax = np.max(lam.real, axis=0)
    lmin = np.min(lam.real, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu_r = 1.0 - 2.0 / (lmax + lmin)
        rho_r = (lmax - lmin) / (lmax + lmin)

    if dim == 2:
        # a conjugate pair is the whole spectrum: case C1 with no real rival
        lc = np.where(lam[1].imag > 0, lam[1], lam[0])
        mod2 = lc.real**2 + lc.imag**2
        gc = lc.real / np.maximum(mod2, 1e-300)
        mu_c = 1.0 - gc
        rho_c = np.abs(1.0 - gc * lc)
        case = np.where(is_real, 0, 1)
        mu = np.where(is_real, mu_r, mu_c)
        rho = np.where(is_real, rho_r, rho_c)
    else:
        imag_pos = lam.imag > 0
        idx_c = np.argmax(imag_pos, axis=0)
        lc = np.take_along_axis(lam, idx_c[None], axis=0)[0]
        idx_r = np.argmin(np.abs(lam.imag), axis=0)
        lr = np.take_along_axis(lam.real, idx_r[None], axis=0)[0]
        mod2 = lc.real**2 + lc.imag**2
        gc = lc.real / np.maximum(mod2, 1e-300)
        c1_cond = np.abs(1.0 - gc * lr) <= np.abs(1.0 - gc * lc)
        mu_c1 = 1.0 - gc
        denom = mod2 - lr * lr
        # degenerate |lc| ~ lr can only brush the C1/C2 boundary; treat as C1
        degenerate = np.abs(denom) < 1e-14 * np.maximum(mod2, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_c2 = 2.0 * (lc.real - lr) / np.where(degenerate, 1.0, denom)
        mu_c2 = 1.0 - s_c2
        use_c1 = c1_cond | degenerate
        mu_c = np.where(use_c1, mu_c1, mu_c2)
        rho_c = np.abs(1.0 - (1.0 - mu_c) * lc)
        case = np.where(is_real, 0, np.where(use_c1, 1, 2))
        mu = np.where(is_real, mu_r, mu_c)
        rho = np.where(is_real, rho_r, rho_c)

    clamped = (mu <= -1.0) | (mu >= 1.0)
    mu = np.clip(mu, -1.0 + _MU_EPS, 1.0 - _MU_EPS)
    if np.any(clamped):
        s = 1.0 - mu
        rho_att = np.max(np.abs(1.0 - s[None] * lam), axis=0)
        rho = np.where(clamped, rho_att, rho)
    return mu, rho, case, clamped


def midrange_map(gamma_map: ScalarField) -> ScalarField:
    """Per-voxel mid-range value over the valid part of a gamma map."""
    g = gamma_map.values
    if np.any(gamma_map.validity & ~(g > 0.0)):
        raise InfeasibleControl("gamma map contains non-positive valid values")
    mu = np.where(g < 1.0, 1.0 - g, 0.0)
    mu = np.where(gamma_map.validity, mu, 0.0)
    return ScalarField(gamma_map.geometry, mu, gamma_map.validity)


def alternating_from_percentiles(gamma_map: ScalarField) -> tuple[float, float]:
    """Adaptive alternating values: mid-range at the 50th and 98th percentiles.

    Exploits the monotone map mu_m = 1 - gamma: the beta-th percentile of the
    per-voxel mid-range map equals the mid-range of the (100-beta)-th
    gamma percentile.
    """
    mid = midrange_map(gamma_map)
    vals = mid.valid_values
    if vals.size == 0:
        raise InfeasibleControl("controllability condition fails on every voxel")
    mu_o = percentile_exact(vals, 50.0)
    mu_e = percentile_exact(vals, 98.0)
    if not -1.0 < mu_e < 1.0:
        raise InfeasibleControl(f"98th-percentile mid-range {mu_e} outside (-1, 1)")
    return float(mu_o), float(mu_e)


def build_mu_map(
    u: VectorField,
    maps: SpectralMaps,
    fallback_radius: float | None = None,
    degenerate: DomainMask | None = None,
) -> ScalarField:
    """Spatially variant control map: per-voxel optimal mu with fallback.

    Where the voxel is uncontrollable or marked degenerate (e.g. the
    undefined angular coordinate at a radial field's center), the
    neighborhood mid-range value is substituted: mu_m over the box of the
    given physical radius (default: the 98th-percentile displacement
    magnitude, the scale a displaced lookup can reach), or the global
    mid-range when the window has no controllable voxel.

    The returned field carries the fallback values at voxels whose validity
    flag is false; validity therefore records exactly where the fallback was
    used.
    """
    geom = u.geometry
    ok = maps.controllable.inside.copy()
    if degenerate is not None:
        ok &= ~degenerate.inside
    if not ok.any():
        raise InfeasibleControl("no controllable voxel to build a control map from")

    mu = np.zeros(geom.extent, dtype=np.float64)
    mu_ok, _, _, _ = optimal_mu_arrays(maps.eigenvalues[:, ok])
    mu[ok] = mu_ok

    need = ~ok
    if need.any():
        if fallback_radius is None:
            fallback_radius = percentile_exact(u.magnitude()[ok], 98.0)
        gamma = np.where(ok, maps.gamma.values, np.inf)
        half = [int(np.floor(fallback_radius / s)) for s in geom.spacing]
        global_mid = midrange_mu(float(gamma[ok].min()))
        coords = np.argwhere(need)
        if len(coords) <= 4096:
            # few gaps: direct window minima beat a full-grid filter
            for c in coords:
                window = tuple(
                    slice(max(0, c[d] - half[d]), min(geom.extent[d], c[d] + half[d] + 1))
                    for d in range(geom.dimension)
                )
                g = gamma[window].min()
                mu[tuple(c)] = midrange_mu(float(g)) if np.isfinite(g) else global_mid
        else:
            size = tuple(2 * k + 1 for k in half)
            mins = ndimage.minimum_filter(gamma, size=size, mode="nearest")
            fill = np.where(np.isfinite(mins), np.where(mins < 1.0, 1.0 - mins, 0.0), global_mid)
            mu[need] = fill[need]
    return ScalarField(geom, np.clip(mu, -1.0 + _MU_EPS, 1.0 - _MU_EPS), ok)


# ---------------------------------------------------------------------------
# control schemes


def _check_mu(mu: float, what: str = "mu"):
    if not -1.0 < mu < 1.0:
        raise InfeasibleControl(f"{what} = {mu} outside the admissible range (-1, 1)")


@dataclass(frozen=True)
class Constant:
    """One uniform value for every voxel and step.

    mu = 0 is the plain fixed-point update; mu = 0.5 halves the residual
    feedback.
    """

    mu: float

    def __post_init__(self):
        _check_mu(self.mu)

    def mu_at(self, step: int) -> float:
        return self.mu


@dataclass(frozen=True)
class Alternating:
    """Two uniform values applied on alternating steps.

    mu_odd leads (steps 0, 2, 4, ...) unless lead="even".
    """

    mu_odd: float
    mu_even: float
    lead: str = "odd"

    def __post_init__(self):
        _check_mu(self.mu_odd, "mu_odd")
        _check_mu(self.mu_even, "mu_even")
        if self.lead not in ("odd", "even"):
            raise ValueError("lead must be 'odd' or 'even'")

    @classmethod
    def from_percentiles(cls, gamma_map: ScalarField) -> "Alternating":
        mu_o, mu_e = alternating_from_percentiles(gamma_map)
        return cls(mu_o, mu_e)

    def mu_at(self, step: int) -> float:
        first = self.mu_odd if self.lead == "odd" else self.mu_even
        second = self.mu_even if self.lead == "odd" else self.mu_odd
        return first if step % 2 == 0 else second


@dataclass(frozen=True)
class MidRange:
    """Per-voxel mid-range value over a neighborhood (None: global minimum)."""

    radius: float | None = None


@dataclass(frozen=True)
class SpatiallyVariant:
    """Locally optimal per-voxel values, looked up nearest-neighbor.

    lookup="displaced" samples the map at x + v_k(x) (the location whose
    Jacobian governs the next contraction); lookup="fixed" samples at x.
    """

    mu_map: ScalarField
    lookup: str = "displaced"

    def __post_init__(self):
        if self.lookup not in ("displaced", "fixed"):
            raise ValueError("lookup must be 'displaced' or 'fixed'")
        v = self.mu_map.values
        if np.any((v <= -1.0) | (v >= 1.0)):
            raise InfeasibleControl("mu map contains values outside (-1, 1)")


@dataclass(frozen=True)
class Hybrid:
    """Uniform control for the first steps, then spatially variant."""

    initial: "Constant | Alternating"
    variant: SpatiallyVariant
    switch_step: int = 2

    def __post_init__(self):
        if self.switch_step < 0:
            raise ValueError("switch_step must be >= 0")


ControlScheme = Constant | Alternating | MidRange | SpatiallyVariant | Hybrid
