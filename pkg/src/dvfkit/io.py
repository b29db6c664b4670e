"""Bit-exact container I/O, slice images, and run reports.

Container format: a small ASCII header file next to a raw binary payload.

    container: dvfkit/1
    semantic: forward-dvf | inverse-dvf | scalar-map | mask
    dimension: 2
    extent: 681 681
    spacing: 0.05 0.05
    origin: -17.0 -17.0
    components: 2
    sample_type: float32 | float64 | uint8
    byte_order: little
    layout: component-major x-fastest
    payload: <filename relative to the header>

The payload holds the samples component-major with the x index varying
fastest, little-endian, and its byte length must equal
prod(extent) * components * itemsize exactly.  Scalar maps store NaN at
invalid voxels; reading reconstructs validity as isfinite.  Reads validate
every header invariant before touching the payload and never coerce.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    HeaderMismatch,
    IndexOutOfRange,
    TruncatedPayload,
    UnsupportedSampleType,
)
from .grid import DomainMask, GridGeometry, ScalarField, VectorField

__all__ = [
    "DvfContainer",
    "write_field",
    "read_field",
    "export_slice",
    "write_report",
    "read_report",
]

_MAGIC = "dvfkit/1"
_LAYOUT = "component-major x-fastest"
_SEMANTICS = ("forward-dvf", "inverse-dvf", "scalar-map", "mask")
_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8"), "uint8": np.dtype("u1")}


@dataclass(frozen=True)
class DvfContainer:
    """Parsed header of a field container."""

    semantic: str
    geometry: GridGeometry
    components: int
    sample_type: str
    payload: str


def _payload_name(path: str) -> str:
    return os.path.basename(path) + ".raw"


def write_field(field, path: str, semantic: str | None = None) -> str:
    """Serialize a VectorField, ScalarField, or DomainMask.

    The header goes to ``path`` and the payload to ``path + ".raw"``.
    Returns the header path.
    """
    if isinstance(field, VectorField):
        semantic = semantic or "forward-dvf"
        if semantic not in ("forward-dvf", "inverse-dvf"):
            raise ValueError(f"vector fields store as forward-dvf/inverse-dvf, not {semantic}")
        arrays = field.components
        sample_type = "float32" if arrays.dtype == np.float32 else "float64"
    elif isinstance(field, ScalarField):
        semantic = semantic or "scalar-map"
        if semantic != "scalar-map":
            raise ValueError("scalar fields store as scalar-map")
        vals = field.values.copy()
        vals[~field.validity] = np.nan
        arrays = vals[None]
        sample_type = "float32" if vals.dtype == np.float32 else "float64"
    elif isinstance(field, DomainMask):
        semantic = semantic or "mask"
        if semantic != "mask":
            raise ValueError("masks store as mask")
        arrays = field.inside.astype(np.uint8)[None]
        sample_type = "uint8"
    else:
        raise TypeError(f"cannot serialize {type(field).__name__}")

    geom = field.geometry
    payload = _payload_name(path)
    lines = [
        f"container: {_MAGIC}",
        f"semantic: {semantic}",
        f"dimension: {geom.dimension}",
        "extent: " + " ".join(str(n) for n in geom.extent),
        "spacing: " + " ".join(repr(s) for s in geom.spacing),
        "origin: " + " ".join(repr(o) for o in geom.origin),
        f"components: {arrays.shape[0]}",
        f"sample_type: {sample_type}",
        "byte_order: little",
        f"layout: {_LAYOUT}",
        f"payload: {payload}",
    ]
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")
    dtype = _DTYPES[sample_type]
    with open(os.path.join(os.path.dirname(path) or ".", payload), "wb") as f:
        for comp in arrays:
            f.write(np.ascontiguousarray(comp.ravel(order="F")).astype(dtype, copy=False).tobytes())
    return path


def _parse_header(path: str) -> DvfContainer:
    try:
        with open(path, "r", encoding="ascii") as f:
            text = f.read()
    except UnicodeDecodeError as e:
        raise HeaderMismatch(f"header is not ASCII text: {e}") from None
    fields: dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if ":" not in line:
            raise HeaderMismatch(f"malformed header line: {line!r}")
        key, _, val = line.partition(":")
        fields[key.strip()] = val.strip()

    def need(key):
        if key not in fields:
            raise HeaderMismatch(f"missing header field {key!r}")
        return fields[key]

    if need("container") != _MAGIC:
        raise HeaderMismatch(f"unknown container tag {fields['container']!r}")
    semantic = need("semantic")
    if semantic not in _SEMANTICS:
        raise HeaderMismatch(f"unknown semantic tag {semantic!r}")
    try:
        dim = int(need("dimension"))
        extent = tuple(int(t) for t in need("extent").split())
        spacing = tuple(float(t) for t in need("spacing").split())
        origin = tuple(float(t) for t in need("origin").split())
        components = int(need("components"))
    except ValueError as e:
        raise HeaderMismatch(f"unparsable header value: {e}") from None
    if dim not in (2, 3):
        raise HeaderMismatch(f"dimension must be 2 or 3, got {dim}")
    if len(extent) != dim or len(spacing) != dim or len(origin) != dim:
        raise HeaderMismatch("extent/spacing/origin length must equal dimension")
    if any(n < 2 for n in extent):
        raise HeaderMismatch(f"extents must be >= 2, got {extent}")
    if any(s <= 0 for s in spacing):
        raise HeaderMismatch(f"spacings must be > 0, got {spacing}")
    sample_type = need("sample_type")
    if sample_type not in _DTYPES:
        raise UnsupportedSampleType(f"sample_type {sample_type!r} not supported")
    if need("byte_order") != "little":
        raise HeaderMismatch(f"byte_order must be little, got {fields['byte_order']!r}")
    if need("layout") != _LAYOUT:
        raise HeaderMismatch(f"layout must be {_LAYOUT!r}")
    if semantic in ("forward-dvf", "inverse-dvf"):
        if components != dim:
            raise HeaderMismatch(f"{semantic} needs {dim} components, header says {components}")
        if sample_type == "uint8":
            raise UnsupportedSampleType("displacement payloads must be float32/float64")
    else:
        if components != 1:
            raise HeaderMismatch(f"{semantic} needs 1 component, header says {components}")
        if semantic == "mask" and sample_type != "uint8":
            raise UnsupportedSampleType("mask payloads must be uint8")
        if semantic == "scalar-map" and sample_type == "uint8":
            raise UnsupportedSampleType("scalar-map payloads must be float32/float64")
    geom = GridGeometry(extent=extent, spacing=spacing, origin=origin)
    return DvfContainer(semantic=semantic, geometry=geom, components=components,
                        sample_type=sample_type, payload=need("payload"))


def read_field(path: str):
    """Read a container back into the matching field type (bit-exact)."""
    hdr = _parse_header(path)
    geom = hdr.geometry
    dtype = _DTYPES[hdr.sample_type]
    expected = geom.num_points * hdr.components * dtype.itemsize
    payload_path = os.path.join(os.path.dirname(path) or ".", hdr.payload)
    try:
        size = os.path.getsize(payload_path)
    except OSError as e:
        raise TruncatedPayload(f"payload missing: {e}") from None
    if size < expected:
        raise TruncatedPayload(f"payload holds {size} bytes, header implies {expected}")
    if size > expected:
        raise HeaderMismatch(f"payload holds {size} bytes, header implies {expected}")
    raw = np.fromfile(payload_path, dtype=dtype)
    comps = raw.reshape(hdr.components, geom.num_points)
    arrays = np.stack([c.reshape(geom.extent, order="F") for c in comps])

    if hdr.semantic in ("forward-dvf", "inverse-dvf"):
        return VectorField(geom, arrays)
    if hdr.semantic == "scalar-map":
        vals = arrays[0]
        valid = np.isfinite(vals)
        return ScalarField(geom, np.where(valid, vals, 0.0).astype(vals.dtype), valid)
    return DomainMask(geom, arrays[0] != 0)


# ---------------------------------------------------------------------------
# slice export


def _heat_rgb(t: np.ndarray) -> np.ndarray:
    """Blue -> cyan -> yellow -> red ramp on t in [0, 1]."""
    t = np.clip(t, 0.0, 1.0)
    r = np.clip(2.0 * t - 0.5, 0.0, 1.0)
    g = np.clip(1.5 - np.abs(2.0 * t - 1.0) * 1.5, 0.0, 1.0)
    b = np.clip(1.0 - 2.0 * t, 0.0, 1.0)
    return np.stack([r, g, b], axis=-1)


def export_slice(
    field,
    path: str,
    axis: int | None = None,
    index: int | None = None,
    vmin: float | None = None,
    vmax: float | None = None,
    cmap: str = "gray",
) -> str:
    """Write one slice of a scalar field or mask as a portable pixmap.

    cmap="gray" emits binary PGM, cmap="heat" a color PPM.  Values clamp to
    [vmin, vmax]; invalid voxels render white (the out-of-bounds convention).
    For 2-D fields axis/index may be omitted.
    """
    if isinstance(field, DomainMask):
        values = field.inside.astype(np.float64)
        valid = np.ones(field.inside.shape, dtype=bool)
    elif isinstance(field, ScalarField):
        values = field.values.astype(np.float64)
        valid = field.validity
    else:
        raise TypeError("export_slice takes a ScalarField or DomainMask")

    geom = field.geometry
    if geom.dimension == 3:
        if axis is None or index is None:
            raise IndexOutOfRange("3-D fields need axis and index")
        if not 0 <= axis < 3:
            raise IndexOutOfRange(f"axis {axis} out of range")
        if not 0 <= index < geom.extent[axis]:
            raise IndexOutOfRange(f"index {index} outside extent {geom.extent[axis]}")
        sl = [slice(None)] * 3
        sl[axis] = index
        plane = values[tuple(sl)]
        pvalid = valid[tuple(sl)]
    else:
        if index is not None and axis is not None:
            if not 0 <= axis < 2:
                raise IndexOutOfRange(f"axis {axis} out of range")
            if not 0 <= index < geom.extent[axis]:
                raise IndexOutOfRange(f"index {index} outside extent {geom.extent[axis]}")
        plane = values
        pvalid = valid

    finite = plane[pvalid]
    lo = float(vmin) if vmin is not None else (float(finite.min()) if finite.size else 0.0)
    hi = float(vmax) if vmax is not None else (float(finite.max()) if finite.size else 1.0)
    span = hi - lo if hi > lo else 1.0
    t = np.clip((plane - lo) / span, 0.0, 1.0)

    if cmap == "gray":
        img = np.rint(t * 254.0).astype(np.uint8)
        img[~pvalid] = 255
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
        body = img.tobytes()
    elif cmap == "heat":
        rgb = np.rint(_heat_rgb(t) * 255.0).astype(np.uint8)
        rgb[~pvalid] = 255
        header = f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode("ascii")
        body = rgb.tobytes()
    else:
        raise ValueError(f"unknown colormap {cmap!r}")
    with open(path, "wb") as f:
        f.write(header + body)
    return path


# ---------------------------------------------------------------------------
# run reports


def describe_scheme(scheme) -> dict:
    """JSON-friendly description of a control scheme."""
    from . import control

    if isinstance(scheme, control.Constant):
        return {"kind": "constant", "mu": scheme.mu}
    if isinstance(scheme, control.Alternating):
        return {"kind": "alternating", "mu_odd": scheme.mu_odd, "mu_even": scheme.mu_even,
                "lead": scheme.lead}
    if isinstance(scheme, control.MidRange):
        return {"kind": "midrange", "radius": scheme.radius}
    if isinstance(scheme, control.SpatiallyVariant):
        return {"kind": "variant", "lookup": scheme.lookup}
    if isinstance(scheme, control.Hybrid):
        return {"kind": "hybrid", "switch_step": scheme.switch_step,
                "initial": describe_scheme(scheme.initial)}
    return {"kind": type(scheme).__name__}


def write_report(run, path: str, table_path: str | None = None, summaries: dict | None = None) -> str:
    """Machine-readable inversion report (JSON) plus a tabular export (CSV).

    The table holds one row per (step, percentile level).  Extra summaries
    (e.g. residual/error percentile tables) are embedded as given.
    """
    doc = {
        "config": {
            "scheme": describe_scheme(run.config.scheme),
            "max_steps": run.config.max_steps,
            "residual_tolerance": run.config.residual_tolerance,
            "oob_policy": str(run.config.oob_policy.value),
            "initialization": (
                "custom" if not isinstance(run.config.initialization, str) else run.config.initialization
            ),
            "init_scale": run.init_scale,
        },
        "domain_voxels": run.domain.count,
        "status_fractions": run.status_fractions(),
        "steps": [
            {
                "step": rec.step,
                "mu_min": rec.mu_min,
                "mu_max": rec.mu_max,
                "frozen_fraction": rec.frozen_fraction,
                "residual_percentiles": {str(k): v for k, v in rec.residual_percentiles.items()},
            }
            for rec in run.step_log
        ],
        "summaries": summaries or {},
    }
    with open(path, "w", encoding="ascii") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    if table_path is not None:
        with open(table_path, "w", newline="", encoding="ascii") as f:
            w = csv.writer(f)
            w.writerow(["step", "percentile", "residual"])
            for rec in run.step_log:
                for level, value in sorted(rec.residual_percentiles.items()):
                    w.writerow([rec.step, level, repr(value)])
    return path


def read_report(path: str) -> dict:
    with open(path, "r", encoding="ascii") as f:
        return json.load(f)
