"""Grid-sampled vector/scalar fields, multilinear sampling, and the valid domain.

All public APIs speak physical coordinates; integer grid indices only appear
internally.  Arrays are indexed ``[i_x, i_y(, i_z)]`` so axis order matches the
coordinate order, and vector fields store one array per component
(component-major).  Fields are immutable after construction; every operation
here is a pure function of its inputs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDomain, GeometryMismatch, OutOfBounds

__all__ = [
    "GridGeometry",
    "VectorField",
    "ScalarField",
    "DomainMask",
    "sample_vector",
    "sample_vector_many",
    "valid_domain",
]

# Fractional offsets this close to a node are snapped onto it, so sampling at
# a grid point reproduces the stored value bit-exactly despite the round trip
# through physical coordinates.
_NODE_SNAP = 1e-9


@dataclass(frozen=True)
class GridGeometry:
    """A uniform rectilinear grid in 2 or 3 dimensions.

    extent   -- samples per axis (each >= 2)
    spacing  -- physical length per sample step (each > 0)
    origin   -- physical coordinate of sample (0, ..., 0)
    """

    extent: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "extent", tuple(int(n) for n in self.extent))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        d = len(self.extent)
        if d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {d}")
        if len(self.spacing) != d or len(self.origin) != d:
            raise ValueError("extent, spacing, origin must have equal length")
        if any(n < 2 for n in self.extent):
            raise ValueError(f"every extent must be >= 2, got {self.extent}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"every spacing must be > 0, got {self.spacing}")

    @property
    def dimension(self) -> int:
        return len(self.extent)

    @property
    def num_points(self) -> int:
        return int(np.prod(self.extent))

    @property
    def bounds_lo(self) -> tuple[float, ...]:
        return self.origin

    @property
    def bounds_hi(self) -> tuple[float, ...]:
        return tuple(o + (n - 1) * s for o, s, n in zip(self.origin, self.spacing, self.extent))

    def axes(self) -> list[np.ndarray]:
        """Physical coordinates along each axis."""
        return [o + s * np.arange(n) for o, s, n in zip(self.origin, self.spacing, self.extent)]

    def meshgrid(self) -> list[np.ndarray]:
        return list(np.meshgrid(*self.axes(), indexing="ij"))

    def grid_points(self) -> np.ndarray:
        """All grid points as an (N, dim) array, x-index varying slowest."""
        mesh = self.meshgrid()
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean per point: inside the bounding box, faces inclusive."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.asarray(self.bounds_lo)
        hi = np.asarray(self.bounds_hi)
        return np.all((points >= lo) & (points <= hi), axis=-1)

    def nearest_index(self, points: np.ndarray) -> tuple[np.ndarray, ...]:
        """Nearest-node multi-index per point, clipped to the grid."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = []
        for d in range(self.dimension):
            i = np.round((points[..., d] - self.origin[d]) / self.spacing[d]).astype(np.intp)
            out.append(np.clip(i, 0, self.extent[d] - 1))
        return tuple(out)


def _check_same_geometry(a, b):
    if a.geometry != b.geometry:
        raise GeometryMismatch(f"grids differ: {a.geometry} vs {b.geometry}")


@dataclass(frozen=True)
class VectorField:
    """Displacement samples, one value per grid point per axis.

    ``components`` has shape (dim, *extent); dtype float32 or float64.
    """

    geometry: GridGeometry
    components: np.ndarray

    def __post_init__(self):
        comp = np.asarray(self.components)
        if comp.dtype not in (np.float32, np.float64):
            comp = comp.astype(np.float64)
        expected = (self.geometry.dimension, *self.geometry.extent)
        if comp.shape != expected:
            raise ValueError(f"components shape {comp.shape} != {expected}")
        if not np.all(np.isfinite(comp)):
            raise ValueError("vector field samples must be finite")
        comp = comp.copy()
        comp.flags.writeable = False
        object.__setattr__(self, "components", comp)

    @classmethod
    def zeros(cls, geometry: GridGeometry, dtype=np.float64) -> "VectorField":
        return cls(geometry, np.zeros((geometry.dimension, *geometry.extent), dtype=dtype))

    @classmethod
    def from_function(cls, geometry: GridGeometry, fn) -> "VectorField":
        """Sample ``fn(points) -> (N, dim)`` on every grid point."""
        vals = np.asarray(fn(geometry.grid_points()), dtype=np.float64)
        comp = vals.T.reshape(geometry.dimension, *geometry.extent)
        return cls(geometry, comp)

    @property
    def dimension(self) -> int:
        return self.geometry.dimension

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.components.astype(np.float64) ** 2, axis=0))

    def __add__(self, other: "VectorField") -> "VectorField":
        _check_same_geometry(self, other)
        return VectorField(self.geometry, self.components + other.components)

    def __sub__(self, other: "VectorField") -> "VectorField":
        _check_same_geometry(self, other)
        return VectorField(self.geometry, self.components - other.components)

    def __mul__(self, scalar: float) -> "VectorField":
        return VectorField(self.geometry, self.components * float(scalar))

    __rmul__ = __mul__


@dataclass(frozen=True)
class ScalarField:
    """One real sample per grid point, plus a validity flag per point."""

    geometry: GridGeometry
    values: np.ndarray
    validity: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.dtype not in (np.float32, np.float64):
            vals = vals.astype(np.float64)
        if vals.shape != self.geometry.extent:
            raise ValueError(f"values shape {vals.shape} != {self.geometry.extent}")
        if self.validity is None:
            valid = np.ones(self.geometry.extent, dtype=bool)
        else:
            valid = np.asarray(self.validity, dtype=bool)
            if valid.shape != self.geometry.extent:
                raise ValueError("validity shape mismatch")
        if not np.all(np.isfinite(vals[valid])):
            raise ValueError("scalar field must be finite wherever valid")
        vals = vals.copy()
        vals.flags.writeable = False
        valid = valid.copy()
        valid.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "validity", valid)

    @property
    def valid_values(self) -> np.ndarray:
        return self.values[self.validity]

    @property
    def invalid_fraction(self) -> float:
        return 1.0 - self.validity.mean()


@dataclass(frozen=True)
class DomainMask:
    """Boolean per grid point; true marks points inside the working domain."""

    geometry: GridGeometry
    inside: np.ndarray

    def __post_init__(self):
        inside = np.asarray(self.inside, dtype=bool)
        if inside.shape != self.geometry.extent:
            raise ValueError(f"mask shape {inside.shape} != {self.geometry.extent}")
        inside = inside.copy()
        inside.flags.writeable = False
        object.__setattr__(self, "inside", inside)

    @classmethod
    def full(cls, geometry: GridGeometry) -> "DomainMask":
        return cls(geometry, np.ones(geometry.extent, dtype=bool))

    @classmethod
    def from_box(cls, geometry: GridGeometry, lo, hi) -> "DomainMask":
        """Mask of grid points inside the physical box [lo, hi] (inclusive)."""
        mesh = geometry.meshgrid()
        inside = np.ones(geometry.extent, dtype=bool)
        for d in range(geometry.dimension):
            tol = _NODE_SNAP * geometry.spacing[d]
            inside &= (mesh[d] >= lo[d] - tol) & (mesh[d] <= hi[d] + tol)
        return cls(geometry, inside)

    def intersect(self, other: "DomainMask") -> "DomainMask":
        _check_same_geometry(self, other)
        return DomainMask(self.geometry, self.inside & other.inside)

    @property
    def count(self) -> int:
        return int(self.inside.sum())


def _fractional_index(geometry: GridGeometry, points: np.ndarray):
    """Cell index and intra-cell fraction per axis, with node snapping."""
    cells, fracs = [], []
    for d in range(geometry.dimension):
        t = (points[..., d] - geometry.origin[d]) / geometry.spacing[d]
        i0 = np.floor(t).astype(np.intp)
        i0 = np.clip(i0, 0, geometry.extent[d] - 2)
        f = t - i0
        f[np.abs(f) < _NODE_SNAP] = 0.0
        f[np.abs(f - 1.0) < _NODE_SNAP] = 1.0
        f = np.clip(f, 0.0, 1.0)
        cells.append(i0)
        fracs.append(f)
    return cells, fracs


def _multilinear(arrays: np.ndarray, geometry: GridGeometry, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of stacked arrays (k, *extent) at (N, dim) points.

    Points must already lie inside the bounding box (clamp before calling).
    Returns (k, N).
    """
    cells, fracs = _fractional_index(geometry, points)
    out = np.zeros((arrays.shape[0], points.shape[0]), dtype=np.result_type(arrays.dtype, np.float64))
    for corner in itertools.product((0, 1), repeat=geometry.dimension):
        w = np.ones(points.shape[0])
        for d, c in enumerate(corner):
            w = w * (fracs[d] if c else 1.0 - fracs[d])
        nz = w != 0.0
        if not nz.any():
            continue
        sel = tuple(cells[d][nz] + corner[d] for d in range(geometry.dimension))
        out[:, nz] += w[nz] * arrays[(slice(None), *sel)]
    return out


def sample_vector(field: VectorField, point) -> np.ndarray:
    """Multilinear (bilinear/trilinear) sample of a displacement at one point.

    Exact at grid points.  Raises OutOfBounds when the point exits the
    bounding box (faces inclusive); callers wanting clamp or freeze behaviour
    use :func:`sample_vector_many`.
    """
    pt = np.asarray(point, dtype=float).reshape(1, -1)
    if pt.shape[1] != field.dimension:
        raise ValueError(f"point has {pt.shape[1]} coordinates, field is {field.dimension}-D")
    if not field.geometry.contains(pt)[0]:
        raise OutOfBounds(f"point {point} outside grid bounding box")
    return _multilinear(field.components, field.geometry, pt)[:, 0]


def sample_vector_many(field: VectorField, points: np.ndarray, oob: str = "raise"):
    """Vectorized sampling at (N, dim) points.

    oob="raise"  -- any outside point raises OutOfBounds
    oob="clamp"  -- outside points are clamped onto the box before sampling
    oob="mask"   -- outside points sample the clamped location and are flagged

    Returns (values (N, dim), inside (N,) bool).
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != field.dimension:
        raise ValueError("points must be (N, dim)")
    inside = field.geometry.contains(points)
    if oob == "raise":
        if not inside.all():
            k = int(np.flatnonzero(~inside)[0])
            raise OutOfBounds(f"point {points[k]} outside grid bounding box")
        pts = points
    elif oob in ("clamp", "mask"):
        pts = np.clip(points, field.geometry.bounds_lo, field.geometry.bounds_hi)
    else:
        raise ValueError(f"unknown oob policy {oob!r}")
    vals = _multilinear(field.components, field.geometry, pts)
    return vals.T, inside


def _auto_refine(geometry: GridGeometry, mapped: list[np.ndarray]) -> int:
    """Coverage sampling factor: ceil of the largest mapped neighbor step, +1."""
    worst = 0.0
    for d in range(geometry.dimension):
        for m in mapped:
            step = np.abs(np.diff(m, axis=d)).max() / geometry.spacing[d]
            worst = max(worst, float(step))
    return int(np.clip(np.ceil(worst) + 1, 1, 8))


def valid_domain(u: VectorField, coverage: str = "nodes", refine: int | None = None) -> DomainMask:
    """Valid displacement domain: grid minus out-mapped and uncovered regions.

    A point x is excluded when x + u(x) leaves the bounding box, or when no
    forward-mapped point lands in its nearest-cell neighborhood (the grid
    cells not overlapped by the transformed domain).

    coverage="nodes"   -- rasterize the mapped grid nodes only (default)
    coverage="refined" -- sample the interpolated transform on a sub-cell
                          lattice before rasterizing; closes the spurious
                          coverage holes that node rasterization leaves where
                          the local expansion exceeds the grid spacing
    """
    geom = u.geometry
    mesh = geom.meshgrid()
    mapped = [mesh[d] + u.components[d] for d in range(geom.dimension)]

    lo = geom.bounds_lo
    hi = geom.bounds_hi
    in_bounds = np.ones(geom.extent, dtype=bool)
    for d in range(geom.dimension):
        in_bounds &= (mapped[d] >= lo[d]) & (mapped[d] <= hi[d])

    hit = np.zeros(geom.extent, dtype=bool)

    def scatter(arrays_1d, keep):
        idx = []
        for d in range(geom.dimension):
            i = np.round((arrays_1d[d][keep] - lo[d]) / geom.spacing[d]).astype(np.intp)
            idx.append(np.clip(i, 0, geom.extent[d] - 1))
        hit[tuple(idx)] = True

    if coverage == "nodes":
        scatter([m.ravel() for m in mapped], in_bounds.ravel())
    elif coverage == "refined":
        factor = refine if refine is not None else _auto_refine(geom, mapped)
        fine_axes = [
            o + (s / factor) * np.arange((n - 1) * factor + 1)
            for o, s, n in zip(geom.origin, geom.spacing, geom.extent)
        ]
        # chunk along the first axis to bound memory
        rows_per_chunk = max(1, int(4e6 / np.prod([len(a) for a in fine_axes[1:]])))
        for s in range(0, len(fine_axes[0]), rows_per_chunk):
            block = [fine_axes[0][s : s + rows_per_chunk]] + fine_axes[1:]
            pts = np.stack([m.ravel() for m in np.meshgrid(*block, indexing="ij")], axis=-1)
            disp, _ = sample_vector_many(u, pts, oob="clamp")
            mapped_pts = pts + disp
            keep = geom.contains(mapped_pts)
            scatter([mapped_pts[:, d] for d in range(geom.dimension)], keep)
    else:
        raise ValueError(f"unknown coverage mode {coverage!r}")

    mask = in_bounds & hit
    if not mask.any():
        raise EmptyDomain("valid displacement domain is empty")
    return DomainMask(geom, mask)
