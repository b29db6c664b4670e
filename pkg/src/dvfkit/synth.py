"""Analytic displacement pairs with closed-form inverses and Jacobians.

The radial family (2-D) is

    forward   u(x) = (1 / (1 + b cos(m theta(x))) - 1) x
    inverse   v(x) = b cos(m theta(x)) x

with stretch b in (0, 1) and angular oscillation m; theta is the polar angle,
well-defined everywhere except x = 0, where both displacements are set to
zero and the voxel is flagged degenerate.  The pair is exactly
inverse-consistent away from the origin, which makes it a ground truth for
inversion-error studies.  Its forward transformation scales radially by
c(theta) = 1/(1 + b cos(m theta)), so the displacement Jacobian is

    J_u(x) = (c - 1) I + c'(theta) x grad(theta)^T,
    grad(theta) = (-y, x)/r^2,   c' = b m sin(m theta) c^2.

The affine families (translation, linear map, planar rotation) have exact
closed-form inverses and are mostly useful as trivial oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidSpec
from .grid import DomainMask, GridGeometry, ScalarField, VectorField

__all__ = [
    "AppendixRadial",
    "Translation",
    "LinearMap",
    "PlanarRotation",
    "AnalyticDvfSpec",
    "AnalyticPair",
    "generate",
    "ring_image",
    "origin_neighborhood",
    "default_radial_geometry",
]


@dataclass(frozen=True)
class AppendixRadial:
    """Radially stretched, angularly oscillating 2-D family."""

    b: float
    m: int

    def __post_init__(self):
        if not 0.0 < self.b < 1.0:
            raise InvalidSpec(f"stretch b must be in (0, 1), got {self.b}")
        if int(self.m) < 1 or self.m != int(self.m):
            raise InvalidSpec(f"oscillation m must be a positive integer, got {self.m}")
        object.__setattr__(self, "m", int(self.m))


@dataclass(frozen=True)
class Translation:
    vector: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "vector", tuple(float(c) for c in self.vector))


@dataclass(frozen=True)
class LinearMap:
    """u(x) = A x; requires I + A nonsingular so the inverse exists."""

    matrix: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] not in (2, 3):
            raise InvalidSpec(f"matrix must be 2x2 or 3x3, got {a.shape}")
        if abs(np.linalg.det(np.eye(a.shape[0]) + a)) < 1e-12:
            raise InvalidSpec("I + A is singular; the transformation has no inverse")
        a = a.copy()
        a.flags.writeable = False
        object.__setattr__(self, "matrix", a)


@dataclass(frozen=True)
class PlanarRotation:
    """Rotation by an angle, about the z-axis when the grid is 3-D."""

    angle: float


Family = AppendixRadial | Translation | LinearMap | PlanarRotation


@dataclass(frozen=True)
class AnalyticDvfSpec:
    family: Family
    geometry: GridGeometry


@dataclass(frozen=True)
class AnalyticPair:
    """Sampled forward/inverse fields plus closed-form point evaluators."""

    spec: AnalyticDvfSpec
    forward: VectorField
    inverse: VectorField
    displacement: Callable[[np.ndarray], np.ndarray]
    inverse_displacement: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]  # J_u of the forward field, (N, d, d)
    degenerate: DomainMask


def _rotation_matrix(angle: float, dim: int) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    r = np.eye(dim)
    r[0, 0], r[0, 1], r[1, 0], r[1, 1] = c, -s, s, c
    return r


def _radial_eval(b: float, m: int, forward: bool):
    def disp(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        theta = np.arctan2(pts[:, 1], pts[:, 0])
        if forward:
            scale = 1.0 / (1.0 + b * np.cos(m * theta)) - 1.0
        else:
            scale = b * np.cos(m * theta)
        out = scale[:, None] * pts
        origin = (pts[:, 0] == 0.0) & (pts[:, 1] == 0.0)
        out[origin] = 0.0
        return out

    return disp


def _radial_jacobian(b: float, m: int):
    def jac(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        x, y = pts[:, 0], pts[:, 1]
        r2 = x * x + y * y
        theta = np.arctan2(y, x)
        c = 1.0 / (1.0 + b * np.cos(m * theta))
        cp = b * m * np.sin(m * theta) * c * c
        out = np.zeros((len(pts), 2, 2))
        with np.errstate(divide="ignore", invalid="ignore"):
            gx = np.where(r2 > 0, -y / r2, 0.0)
            gy = np.where(r2 > 0, x / r2, 0.0)
        out[:, 0, 0] = (c - 1.0) + cp * x * gx
        out[:, 0, 1] = cp * x * gy
        out[:, 1, 0] = cp * y * gx
        out[:, 1, 1] = (c - 1.0) + cp * y * gy
        out[r2 == 0.0] = 0.0
        return out

    return jac


def default_radial_geometry(half: float = 34.0, spacing: float = 0.05) -> GridGeometry:
    """Square grid over [-half, half]^2, the usual carrier for the radial pair."""
    n = int(round(2 * half / spacing)) + 1
    return GridGeometry(extent=(n, n), spacing=(spacing, spacing), origin=(-half, -half))


def origin_neighborhood(geometry: GridGeometry, radius_samples: int = 5) -> DomainMask:
    """Voxels within a few samples of the physical origin (flagged degenerate
    for radial fields, whose angular coordinate is undefined there)."""
    mesh = geometry.meshgrid()
    d2 = np.zeros(geometry.extent)
    for d in range(geometry.dimension):
        d2 += (mesh[d] / geometry.spacing[d]) ** 2
    return DomainMask(geometry, d2 <= radius_samples**2)


def generate(spec: AnalyticDvfSpec) -> AnalyticPair:
    """Sample forward and inverse closed forms on the grid.

    The returned jacobian evaluator differentiates the forward displacement
    symbolically at arbitrary physical points.
    """
    fam = spec.family
    geom = spec.geometry
    dim = geom.dimension

    if isinstance(fam, AppendixRadial):
        if dim != 2:
            raise InvalidSpec("the radial family is 2-D")
        fwd_fn = _radial_eval(fam.b, fam.m, forward=True)
        inv_fn = _radial_eval(fam.b, fam.m, forward=False)
        jac_fn = _radial_jacobian(fam.b, fam.m)
        degenerate = np.zeros(geom.extent, dtype=bool)
        mesh = geom.meshgrid()
        degenerate[(mesh[0] == 0.0) & (mesh[1] == 0.0)] = True
    elif isinstance(fam, Translation):
        vec = np.asarray(fam.vector)
        if len(vec) != dim:
            raise InvalidSpec("translation vector length must match the grid dimension")
        fwd_fn = lambda pts: np.broadcast_to(vec, np.atleast_2d(pts).shape).copy()
        inv_fn = lambda pts: np.broadcast_to(-vec, np.atleast_2d(pts).shape).copy()
        jac_fn = lambda pts: np.zeros((len(np.atleast_2d(pts)), dim, dim))
        degenerate = np.zeros(geom.extent, dtype=bool)
    elif isinstance(fam, (LinearMap, PlanarRotation)):
        a = (
            _rotation_matrix(fam.angle, dim) - np.eye(dim)
            if isinstance(fam, PlanarRotation)
            else np.asarray(fam.matrix)
        )
        if a.shape[0] != dim:
            raise InvalidSpec("matrix size must match the grid dimension")
        binv = np.linalg.inv(np.eye(dim) + a) - np.eye(dim)
        fwd_fn = lambda pts: np.atleast_2d(pts) @ a.T
        inv_fn = lambda pts: np.atleast_2d(pts) @ binv.T
        jac_fn = lambda pts: np.broadcast_to(a, (len(np.atleast_2d(pts)), dim, dim)).copy()
        degenerate = np.zeros(geom.extent, dtype=bool)
    else:
        raise InvalidSpec(f"unknown family {fam!r}")

    return AnalyticPair(
        spec=spec,
        forward=VectorField.from_function(geom, fwd_fn),
        inverse=VectorField.from_function(geom, inv_fn),
        displacement=fwd_fn,
        inverse_displacement=inv_fn,
        jacobian=jac_fn,
        degenerate=DomainMask(geom, degenerate),
    )


def ring_image(geometry: GridGeometry, rings: int) -> ScalarField:
    """Concentric sinusoidal rings, for eyeballing a deformation.

    rings = 0 gives a constant image.  Values in [0, 1], radially symmetric
    about the physical origin.
    """
    if rings < 0:
        raise InvalidSpec("ring count must be >= 0")
    mesh = geometry.meshgrid()
    r = np.sqrt(sum(m**2 for m in mesh))
    rmax = max(float(r.max()), 1e-300)
    vals = 0.5 * (1.0 + np.cos(2.0 * np.pi * rings * r / rmax))
    return ScalarField(geometry, vals)
