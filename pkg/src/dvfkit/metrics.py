"""Evaluation: residuals, true errors, contraction maps, percentile summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._stats import percentile_exact, percentile_histogram
from .control import (
    Alternating,
    Constant,
    ControlScheme,
    Hybrid,
    MidRange,
    SpatiallyVariant,
    midrange_map,
    midrange_mu,
    neighborhood_gamma,
)
from .errors import EmptyField, GeometryMismatch
from .grid import DomainMask, ScalarField, VectorField, sample_vector_many
from .spectral import SpectralMaps, characterize

__all__ = [
    "DEFAULT_LEVELS",
    "PercentileSummary",
    "percentile",
    "summarize",
    "magnitude_field",
    "inversion_error",
    "residual_u",
    "contraction_map",
    "contraction_area",
]

DEFAULT_LEVELS = (2.0, 10.0, 50.0, 90.0, 95.0, 98.0)


@dataclass(frozen=True)
class PercentileSummary:
    """Upper-bound percentile values of a scalar measure over a domain."""

    levels: tuple[float, ...]
    values: tuple[float, ...]
    sample_count: int
    invalid_fraction: float

    def __post_init__(self):
        if any(not 0 < b < 100 for b in self.levels):
            raise ValueError("levels must lie in (0, 100)")
        if any(b2 <= b1 for b1, b2 in zip(self.levels, self.levels[1:])):
            raise ValueError("levels must be strictly increasing")

    def as_dict(self) -> dict[float, float]:
        return dict(zip(self.levels, self.values))


def _valid_values(f, domain: DomainMask | None):
    if isinstance(f, ScalarField):
        valid = f.validity
        vals = f.values
    else:
        vals = np.asarray(f, dtype=np.float64)
        valid = np.ones(vals.shape, dtype=bool)
    if domain is not None:
        if domain.inside.shape != vals.shape:
            raise GeometryMismatch("domain shape mismatch")
        valid = valid & domain.inside
    return vals[valid], float(1.0 - valid.mean())


def percentile(f, beta: float, mode: str = "histogram", bins: int = 4096,
               domain: DomainMask | None = None) -> float:
    """beta-th upper-bound percentile: smallest value with cumulative
    fraction > beta%.

    mode="histogram" bins the data (default 4096 bins over [min, max]) and is
    exact to within one bin width; mode="exact" sorts.  Invalid voxels are
    excluded.
    """
    vals, _ = _valid_values(f, domain)
    if vals.size == 0:
        raise EmptyField("no valid samples")
    if mode == "exact":
        return percentile_exact(vals, beta)
    if mode == "histogram":
        return percentile_histogram(vals, beta, bins=bins)
    raise ValueError(f"unknown percentile mode {mode!r}")


def summarize(f, levels=DEFAULT_LEVELS, mode: str = "exact",
              domain: DomainMask | None = None, lower_tail: bool = False) -> PercentileSummary:
    """Percentile table of a scalar field.

    lower_tail=True summarizes at the (100 - beta) levels instead, the
    convention for determinant maps where small values are the interesting
    tail.
    """
    vals, invalid = _valid_values(f, domain)
    if vals.size == 0:
        raise EmptyField("no valid samples")
    levels = tuple(float(b) for b in levels)
    query = tuple(100.0 - b for b in levels) if lower_tail else levels
    fn = percentile_exact if mode == "exact" else percentile_histogram
    values = tuple(fn(vals, b) for b in query)
    if lower_tail:
        order = np.argsort(query)
        levels = tuple(query[i] for i in order)
        values = tuple(values[i] for i in order)
    return PercentileSummary(levels=levels, values=values,
                             sample_count=int(vals.size), invalid_fraction=invalid)


def magnitude_field(v: VectorField, domain: DomainMask | None = None) -> ScalarField:
    """Euclidean magnitude per voxel."""
    valid = domain.inside if domain is not None else None
    return ScalarField(v.geometry, v.magnitude(), valid)


def inversion_error(v_hat: VectorField, v_true: VectorField,
                    domain: DomainMask | None = None) -> ScalarField:
    """Pixel-wise |v_hat - v_true| in physical units."""
    if v_hat.geometry != v_true.geometry:
        raise GeometryMismatch("estimate and truth must share a grid")
    err = np.sqrt(np.sum((v_hat.components - v_true.components) ** 2, axis=0))
    valid = domain.inside if domain is not None else None
    return ScalarField(v_hat.geometry, err, valid)


def residual_u(u: VectorField, v_hat: VectorField, domain: DomainMask | None = None):
    """Second inverse-consistency residual, reported at displaced locations.

    On the grid itself the residual is R(x') = u(x') + v_hat(x' + u(x')).
    The returned field carries R evaluated at x + v_hat(x) for every domain
    voxel x (nearest-cell association), which is where it relates to the
    estimation error.  Voxels whose displaced lookup leaves the grid, or
    lands on a cell whose own residual needed an out-of-bounds lookup, are
    flagged.

    Returns (field, valid mask).
    """
    if u.geometry != v_hat.geometry:
        raise GeometryMismatch("u and v_hat must share a grid")
    geom = u.geometry
    pts = geom.grid_points()

    # target-grid residual
    disp_u = u.components.reshape(u.dimension, -1).T
    vvals, ok_grid = sample_vector_many(v_hat, pts + disp_u, oob="mask")
    r_grid = (disp_u + vvals).T.reshape(u.dimension, *geom.extent)
    ok_grid = ok_grid.reshape(geom.extent)

    # gather at x + v_hat(x)
    disp_v = v_hat.components.reshape(u.dimension, -1).T
    look = pts + disp_v
    inside = geom.contains(look)
    nearest = geom.nearest_index(np.clip(look, geom.bounds_lo, geom.bounds_hi))
    gathered = r_grid[(slice(None), *nearest)].reshape(u.dimension, *geom.extent)
    valid = (inside.reshape(geom.extent)) & ok_grid[nearest].reshape(geom.extent)
    if domain is not None:
        if domain.geometry != geom:
            raise GeometryMismatch("domain must live on the field grid")
        valid &= domain.inside
    gathered = np.where(valid, gathered, 0.0)
    return VectorField(geom, gathered), valid


def _scheme_mu_maps(scheme: ControlScheme, maps: SpectralMaps):
    """Per-voxel mu value(s) a scheme would apply, for pre-inversion maps."""
    geom = maps.geometry
    if isinstance(scheme, Constant):
        return [np.full(geom.extent, scheme.mu)]
    if isinstance(scheme, Alternating):
        return [np.full(geom.extent, scheme.mu_odd), np.full(geom.extent, scheme.mu_even)]
    if isinstance(scheme, MidRange):
        if scheme.radius is None:
            g = maps.gamma.valid_values
            if g.size == 0:
                raise EmptyField("no controllable voxels")
            return [np.full(geom.extent, midrange_mu(float(g.min())))]
        mu_field = midrange_map(neighborhood_gamma(maps.gamma, scheme.radius))
        return [np.where(mu_field.validity, mu_field.values, 0.0)]
    if isinstance(scheme, SpatiallyVariant):
        return [scheme.mu_map.values]
    if isinstance(scheme, Hybrid):
        # the long-run behaviour is the variant map
        return [scheme.variant.mu_map.values]
    raise TypeError(f"unknown control scheme {scheme!r}")


def contraction_map(u: VectorField, scheme: ControlScheme,
                    maps: SpectralMaps | None = None,
                    domain: DomainMask | None = None) -> ScalarField:
    """Per-voxel error-contraction ratio rho(Q(x; mu(x))), Q = mu I - (1-mu) J_u.

    For alternating schemes the value is the two-step geometric mean
    sqrt(rho(P_o P_e)); the propagation factors share eigenvectors at a fixed
    point, so the product spectrum is the product of spectra.
    """
    if maps is None:
        maps = characterize(u, domain)
    lam = maps.eigenvalues  # spectrum of J_f
    mus = _scheme_mu_maps(scheme, maps)
    if len(mus) == 1:
        q = np.abs(1.0 - (1.0 - mus[0][None]) * lam)
        rho = np.max(q, axis=0)
    else:
        q = np.abs(
            (1.0 - (1.0 - mus[0][None]) * lam) * (1.0 - (1.0 - mus[1][None]) * lam)
        )
        rho = np.sqrt(np.max(q, axis=0))
    valid = domain.inside if domain is not None else None
    return ScalarField(u.geometry, rho, valid)


def contraction_area(rho_map: ScalarField, domain: DomainMask | None = None) -> float:
    """Fraction of (valid) voxels with contraction ratio below one."""
    vals, _ = _valid_values(rho_map, domain)
    if vals.size == 0:
        raise EmptyField("no valid samples")
    return float((vals < 1.0).mean())
