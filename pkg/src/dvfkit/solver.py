"""Feedback-controlled fixed-point inversion of a deformation vector field.

Given a forward displacement u, the inverse-consistency residual of an
estimate v is r(x) = v(x) + u(x + v(x)); the iteration

    v_{k+1}(x) = v_k(x) - (1 - mu_k(x)) r_k(x)

drives it to zero wherever the local contraction ratio stays below one.
mu = 0 reproduces the plain fixed-point update, mu = 0.5 the half-residual
variant; adaptive schemes come from the control module.

Out-of-bounds handling: when a displaced lookup x + v_k(x) exits the grid,
the voxel is either frozen (default: it stops updating and is flagged) or
the lookup is clamped onto the box.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._stats import percentile_exact
from .control import (
    Alternating,
    Constant,
    ControlScheme,
    Hybrid,
    MidRange,
    SpatiallyVariant,
    build_mu_map,
    midrange_map,
    midrange_mu,
    neighborhood_gamma,
)
from .errors import EmptyDomain, GeometryMismatch, InfeasibleControl
from .grid import DomainMask, VectorField, sample_vector_many, valid_domain
from .spectral import SpectralMaps, characterize

__all__ = [
    "OobPolicy",
    "VoxelStatus",
    "InversionConfig",
    "StepRecord",
    "InversionRun",
    "residual_v",
    "iterate_step",
    "scaled98_initial",
    "invert",
]

PERCENTILE_LEVELS = (2.0, 10.0, 50.0, 90.0, 95.0, 98.0)


class OobPolicy(str, enum.Enum):
    FREEZE = "freeze"
    CLAMP = "clamp"


class VoxelStatus(enum.IntEnum):
    OUTSIDE = 0
    ACTIVE = 1
    CONVERGED = 2
    FROZEN_OOB = 3
    UNCONTROLLABLE = 4


@dataclass(frozen=True)
class InversionConfig:
    """Knobs of one inversion run.

    initialization: "zero", "scaled98" (v0 = (mu_m[98%] - 1) u, the effect of
    one mid-range step from zero), or a custom VectorField.
    """

    scheme: ControlScheme
    max_steps: int = 10
    residual_tolerance: float | None = None
    oob_policy: OobPolicy = OobPolicy.FREEZE
    initialization: "str | VectorField" = "scaled98"

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.residual_tolerance is not None and self.residual_tolerance < 0:
            raise ValueError("residual_tolerance must be >= 0")
        object.__setattr__(self, "oob_policy", OobPolicy(self.oob_policy))
        if isinstance(self.initialization, str) and self.initialization not in ("zero", "scaled98"):
            raise ValueError("initialization must be 'zero', 'scaled98', or a VectorField")


@dataclass(frozen=True)
class StepRecord:
    step: int
    mu_min: float
    mu_max: float
    residual_percentiles: dict[float, float]
    frozen_fraction: float


@dataclass(frozen=True)
class InversionRun:
    estimate: VectorField
    status: np.ndarray  # VoxelStatus codes, one per grid point
    step_log: tuple[StepRecord, ...]
    domain: DomainMask
    config: InversionConfig
    maps: SpectralMaps
    init_scale: float | None = None  # (mu_m[98%] - 1) when scaled98 was used

    def status_fractions(self) -> dict[str, float]:
        inside = self.domain.inside
        n = max(int(inside.sum()), 1)
        codes = self.status[inside]
        return {s.name.lower(): float((codes == s).sum()) / n for s in VoxelStatus if s != VoxelStatus.OUTSIDE}


def residual_v(
    u: VectorField,
    v_hat: VectorField,
    domain: DomainMask | None = None,
    oob_policy: OobPolicy | str = OobPolicy.FREEZE,
):
    """Inverse-consistency residual r(x) = v(x) + u(x + v(x)).

    Returns (residual field, oob mask).  Under the freeze policy the residual
    is zeroed at flagged voxels (they would not be updated); under clamp it
    is evaluated at the clamped lookup.
    """
    if u.geometry != v_hat.geometry:
        raise GeometryMismatch("u and v_hat must share a grid")
    policy = OobPolicy(oob_policy)
    geom = u.geometry
    inside = domain.inside if domain is not None else np.ones(geom.extent, dtype=bool)

    idx = np.flatnonzero(inside.ravel())
    pts = geom.grid_points()[idx]
    disp = v_hat.components.reshape(v_hat.dimension, -1)[:, idx].T
    lookup = pts + disp
    uvals, ok = sample_vector_many(u, lookup, oob="mask")
    r = disp + uvals
    if policy is OobPolicy.FREEZE:
        r[~ok] = 0.0

    comp = np.zeros_like(v_hat.components, dtype=np.float64)
    comp.reshape(geom.dimension, -1)[:, idx] = r.T
    oob = np.zeros(geom.extent, dtype=bool)
    oob.ravel()[idx[~ok]] = True
    return VectorField(geom, comp), oob


def iterate_step(v_k: VectorField, r_k: VectorField, mu_k, frozen: np.ndarray | None = None) -> VectorField:
    """One controlled update v_{k+1} = v_k - (1 - mu_k) r_k; frozen voxels keep v_k."""
    if v_k.geometry != r_k.geometry:
        raise GeometryMismatch("v and r must share a grid")
    mu = np.asarray(mu_k, dtype=np.float64)
    comp = v_k.components - (1.0 - mu) * r_k.components
    if frozen is not None:
        comp = np.where(frozen, v_k.components, comp)
    return VectorField(v_k.geometry, comp)


def scaled98_initial(u: VectorField, maps: SpectralMaps, domain: DomainMask) -> tuple[np.ndarray, float]:
    """Initial guess v0 = (mu_m[98%] - 1) u restricted to the domain.

    mu_m[98%] is the 98th percentile of the per-voxel mid-range map over
    controllable domain voxels; one mid-range-controlled step from zero.
    """
    sel = domain.inside & maps.controllable.inside
    if not sel.any():
        raise InfeasibleControl("no controllable voxels to derive the initial scale from")
    gam = maps.gamma.values[sel]
    mid = np.where(gam < 1.0, 1.0 - gam, 0.0)
    mu98 = percentile_exact(mid, 98.0)
    comp = np.where(domain.inside, (mu98 - 1.0) * u.components, 0.0)
    return comp, float(mu98)


def _mu_provider(
    scheme: ControlScheme,
    u: VectorField,
    maps: SpectralMaps,
    domain: DomainMask,
) -> Callable[[int, np.ndarray], "float | np.ndarray"]:
    """Turn a scheme into mu(step, lookup_points)."""
    geom = u.geometry

    if isinstance(scheme, (Constant, Alternating)):
        return lambda k, pts: scheme.mu_at(k)

    if isinstance(scheme, MidRange):
        if scheme.radius is None:
            sel = domain.inside & maps.controllable.inside
            if not sel.any():
                raise EmptyDomain("no controllable voxels for the mid-range value")
            mu_const = midrange_mu(float(maps.gamma.values[sel].min()))
            return lambda k, pts: mu_const
        mu_field = midrange_map(neighborhood_gamma(maps.gamma, scheme.radius))
        vals = np.where(mu_field.validity, mu_field.values, 0.0)

        # mid-range neighborhoods already cover the displacement scale; look up at x
        def midrange_lookup(k, pts, _vals=vals):
            return _vals[geom.nearest_index(pts)]

        midrange_lookup.lookup_at = "fixed"  # type: ignore[attr-defined]
        return midrange_lookup

    if isinstance(scheme, SpatiallyVariant):
        if scheme.mu_map.geometry != geom:
            raise GeometryMismatch("mu map must live on the field grid")
        vals = scheme.mu_map.values

        def variant_lookup(k, pts, _vals=vals):
            return _vals[geom.nearest_index(pts)]

        variant_lookup.lookup_at = scheme.lookup  # type: ignore[attr-defined]
        return variant_lookup

    if isinstance(scheme, Hybrid):
        first = _mu_provider(scheme.initial, u, maps, domain)
        second = _mu_provider(scheme.variant, u, maps, domain)

        def hybrid(k, pts):
            return first(k, pts) if k < scheme.switch_step else second(k, pts)

        hybrid.lookup_at = getattr(second, "lookup_at", "fixed")  # type: ignore[attr-defined]
        return hybrid

    raise TypeError(f"unknown control scheme {scheme!r}")


def invert(
    u: VectorField,
    config: InversionConfig,
    domain: DomainMask | None = None,
    maps: SpectralMaps | None = None,
    on_step: Callable[[int, VectorField], None] | None = None,
) -> InversionRun:
    """Run the controlled fixed-point inversion of a forward DVF.

    domain defaults to the valid displacement domain of u.  Each step's log
    records the percentiles of |r| for the *updated* estimate, so the last
    entry describes the returned field.  on_step, when given, receives
    (completed_steps, current_estimate) after every update.
    """
    geom = u.geometry
    if domain is None:
        domain = valid_domain(u)
    elif domain.geometry != geom:
        raise GeometryMismatch("domain must live on the field grid")
    if not domain.inside.any():
        raise EmptyDomain("empty inversion domain")
    if maps is None:
        maps = characterize(u)

    idx = np.flatnonzero(domain.inside.ravel())
    pts = geom.grid_points()[idx]
    u_flat = u.components.reshape(geom.dimension, -1)[:, idx].T

    init = config.initialization
    init_scale = None
    if isinstance(init, VectorField):
        if init.geometry != geom:
            raise GeometryMismatch("custom initialization must live on the field grid")
        v = init.components.reshape(geom.dimension, -1)[:, idx].T.astype(np.float64).copy()
    elif init == "zero":
        v = np.zeros_like(u_flat)
    else:
        comp, mu98 = scaled98_initial(u, maps, domain)
        init_scale = mu98 - 1.0
        v = comp.reshape(geom.dimension, -1)[:, idx].T.copy()

    provider = _mu_provider(config.scheme, u, maps, domain)
    lookup_at = getattr(provider, "lookup_at", "displaced")
    freeze = config.oob_policy is OobPolicy.FREEZE

    frozen = np.zeros(len(idx), dtype=bool)
    log: list[StepRecord] = []

    def materialize(flat: np.ndarray) -> VectorField:
        comp = np.zeros((geom.dimension, geom.num_points), dtype=np.float64)
        comp[:, idx] = flat.T
        return VectorField(geom, comp.reshape(geom.dimension, *geom.extent))

    def eval_residual(vcur: np.ndarray):
        look = pts + vcur
        uvals, ok = sample_vector_many(u, look, oob="mask")
        return vcur + uvals, ok, look

    r, ok, look = eval_residual(v)
    if freeze:
        frozen |= ~ok

    last_pct: dict[float, float] = {}
    for k in range(config.max_steps):
        act = ~frozen
        mu = provider(k, look if lookup_at == "displaced" else pts)
        mu_arr = np.asarray(mu, dtype=np.float64)
        mu_act = mu_arr[act] if mu_arr.ndim else mu_arr
        v[act] -= (1.0 - mu_act)[..., None] * r[act] if mu_arr.ndim else (1.0 - float(mu_arr)) * r[act]

        r, ok, look = eval_residual(v)
        if freeze:
            newly = ~ok & ~frozen
            frozen |= newly
            act = ~frozen
        rmag = np.linalg.norm(r[act], axis=1) if act.any() else np.zeros(0)
        if rmag.size:
            last_pct = {lv: percentile_exact(rmag, lv) for lv in PERCENTILE_LEVELS}
        else:
            last_pct = {lv: float("nan") for lv in PERCENTILE_LEVELS}
        log.append(
            StepRecord(
                step=k,
                mu_min=float(np.min(mu_arr)),
                mu_max=float(np.max(mu_arr)),
                residual_percentiles=last_pct,
                frozen_fraction=float(frozen.mean()),
            )
        )
        if on_step is not None:
            on_step(k + 1, materialize(v))
        if (
            config.residual_tolerance is not None
            and rmag.size
            and last_pct[98.0] <= config.residual_tolerance
        ):
            break

    status = np.full(geom.extent, int(VoxelStatus.OUTSIDE), dtype=np.uint8)
    flat_status = status.ravel()
    flat_status[idx] = int(VoxelStatus.ACTIVE)
    unctrl = ~maps.controllable.inside.ravel()[idx]
    flat_status[idx[unctrl]] = int(VoxelStatus.UNCONTROLLABLE)
    if config.residual_tolerance is not None:
        rmag_all = np.linalg.norm(r, axis=1)
        conv = (rmag_all <= config.residual_tolerance) & ~frozen & ~unctrl
        flat_status[idx[conv]] = int(VoxelStatus.CONVERGED)
    flat_status[idx[frozen]] = int(VoxelStatus.FROZEN_OOB)

    return InversionRun(
        estimate=materialize(v),
        status=status,
        step_log=tuple(log),
        domain=domain,
        config=config,
        maps=maps,
        init_scale=init_scale,
    )
