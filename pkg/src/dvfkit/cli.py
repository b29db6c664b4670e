"""Command-line workflow: synthesize, characterize, invert, evaluate, export.

Exit codes: 0 success, 2 usage, 3 data/format, 4 infeasible control.
Every run writes a manifest (subcommand, resolved parameters, paths,
version, wall-clock duration) next to its outputs.  Results are
deterministic; --threads (or DVFKIT_THREADS) is recorded but never changes
numerics.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, control, io, metrics, solver, spectral, synth
from .errors import (
    EmptyDomain,
    EmptyField,
    GeometryMismatch,
    HeaderMismatch,
    InfeasibleControl,
    InvalidSpec,
    OutOfBounds,
    TruncatedPayload,
    Uncontrollable,
    UnsupportedSampleType,
)
from .grid import DomainMask, VectorField, valid_domain

_USAGE, _DATA, _INFEASIBLE = 2, 3, 4


class _UsageError(Exception):
    pass


def _parse_scheme(text: str, forward: VectorField, domain: DomainMask,
                  maps: spectral.SpectralMaps):
    """constant:MU | alternating:MUO,MUE | alternating:auto | midrange[:R] |
    variant | hybrid:K"""
    kind, _, arg = text.partition(":")

    def user_mu(token: str) -> float:
        try:
            x = float(token)
        except ValueError:
            raise _UsageError(f"bad scheme argument {text!r}") from None
        if not -1.0 < x < 1.0:
            raise _UsageError(f"mu = {x} outside the admissible range (-1, 1)")
        return x

    def user_num(token: str, cast):
        try:
            return cast(token)
        except ValueError:
            raise _UsageError(f"bad scheme argument {text!r}") from None

    if kind == "constant":
        return control.Constant(user_mu(arg))
    if kind == "alternating":
        if arg == "auto":
            return control.Alternating.from_percentiles(_domain_gamma(maps, domain))
        o, _, e = arg.partition(",")
        return control.Alternating(user_mu(o), user_mu(e))
    if kind == "midrange":
        return control.MidRange(user_num(arg, float) if arg else None)
    if kind == "variant":
        return control.SpatiallyVariant(control.build_mu_map(forward, maps))
    if kind == "hybrid":
        scheme = control.SpatiallyVariant(control.build_mu_map(forward, maps))
        switch = user_num(arg, int) if arg else 2
        return control.Hybrid(control.Constant(_global_midrange(maps, domain)), scheme, switch)
    raise _UsageError(f"unknown scheme {text!r}")


def _domain_gamma(maps: spectral.SpectralMaps, domain: DomainMask):
    from .grid import ScalarField

    valid = maps.gamma.validity & domain.inside
    return ScalarField(maps.geometry, maps.gamma.values, valid)


def _global_midrange(maps: spectral.SpectralMaps, domain: DomainMask) -> float:
    g = _domain_gamma(maps, domain)
    vals = g.valid_values
    if vals.size == 0:
        raise InfeasibleControl("no controllable voxels in the domain")
    return control.midrange_mu(float(vals.min()))


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t != ""]


def _write_manifest(out_path: str, subcommand: str, params: dict,
                    inputs: list[str], outputs: list[str], t0: float):
    doc = {
        "subcommand": subcommand,
        "parameters": params,
        "inputs": inputs,
        "outputs": outputs,
        "toolkit_version": __version__,
        "duration_seconds": time.time() - t0,
    }
    with open(out_path, "w", encoding="ascii") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def _summary_dict(s: metrics.PercentileSummary) -> dict:
    return {
        "levels": list(s.levels),
        "values": list(s.values),
        "sample_count": s.sample_count,
        "invalid_fraction": s.invalid_fraction,
    }


def _roi_mask(forward: VectorField, roi: list[float] | None) -> DomainMask:
    dom = valid_domain(forward)
    if roi is None:
        return dom
    d = forward.dimension
    if len(roi) == 2:
        lo = [roi[0]] * d
        hi = [roi[1]] * d
    elif len(roi) == 2 * d:
        lo = roi[0::2]
        hi = roi[1::2]
    else:
        raise _UsageError("--roi needs lo,hi or one lo,hi pair per axis")
    return dom.intersect(DomainMask.from_box(forward.geometry, lo, hi))


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    t0 = time.time()
    if args.family == "appendix":
        if args.b is None or args.m is None:
            raise _UsageError("appendix family needs --b and --m")
        family = synth.AppendixRadial(b=args.b, m=args.m)
    elif args.family == "translation":
        if not args.vector:
            raise _UsageError("translation family needs --vector")
        family = synth.Translation(tuple(_floats(args.vector)))
    elif args.family == "linear":
        if not args.matrix:
            raise _UsageError("linear family needs --matrix (row-major, comma-separated)")
        vals = _floats(args.matrix)
        n = int(round(len(vals) ** 0.5))
        if n * n != len(vals):
            raise _UsageError("--matrix must hold a square matrix")
        family = synth.LinearMap(np.array(vals).reshape(n, n))
    elif args.family == "rotation":
        if args.angle is None:
            raise _UsageError("rotation family needs --angle (radians)")
        family = synth.PlanarRotation(args.angle)
    else:
        raise _UsageError(f"unknown family {args.family!r}")

    spacing = _floats(args.spacing)
    if args.extent:
        extent = [int(v) for v in _floats(args.extent)]
        origin = _floats(args.origin) if args.origin else [0.0] * len(extent)
        d = len(extent)
        geom = synth.GridGeometry(tuple(extent), tuple(spacing * d if len(spacing) == 1 else spacing),
                                  tuple(origin))
    else:
        geom = synth.default_radial_geometry(half=args.half, spacing=spacing[0])

    pair = synth.generate(synth.AnalyticDvfSpec(family, geom))
    outputs = []
    io.write_field(pair.forward, args.out_forward, semantic="forward-dvf")
    outputs.append(args.out_forward)
    if args.out_inverse:
        io.write_field(pair.inverse, args.out_inverse, semantic="inverse-dvf")
        outputs.append(args.out_inverse)
    _write_manifest(args.out_forward + ".manifest.json", "synth",
                    {k: v for k, v in vars(args).items() if k != "func"},
                    [], outputs, t0)
    return 0


def _cmd_characterize(args) -> int:
    t0 = time.time()
    u = io.read_field(args.input)
    if not isinstance(u, VectorField):
        raise HeaderMismatch(f"{args.input} is not a displacement container")
    dom = valid_domain(u)
    maps = spectral.characterize(u, dom)
    os.makedirs(args.out_dir, exist_ok=True)
    out = lambda name: os.path.join(args.out_dir, name)
    io.write_field(maps.det_jf, out("det_jf.dvf"))
    io.write_field(maps.rho_ju, out("rho_ju.dvf"))
    io.write_field(maps.gamma, out("gamma.dvf"))
    io.write_field(maps.control_index, out("control_index.dvf"))
    io.write_field(maps.controllable, out("controllable.dvf"))
    summary = {
        "complex_eigenvalue_fraction": maps.complex_fraction,
        "uncontrollable_fraction": float(
            1.0 - maps.controllable.inside[dom.inside].mean()),
        "displacement_magnitude": _summary_dict(metrics.summarize(
            metrics.magnitude_field(u, dom))),
        "det_jf": _summary_dict(metrics.summarize(maps.det_jf, lower_tail=True)),
        "rho_ju": _summary_dict(metrics.summarize(maps.rho_ju)),
        "control_index": _summary_dict(metrics.summarize(maps.control_index)),
    }
    with open(out("summary.json"), "w", encoding="ascii") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
        f.write("\n")
    _write_manifest(out("manifest.json"), "characterize", {"input": args.input},
                    [args.input], [args.out_dir], t0)
    return 0


def _cmd_invert(args) -> int:
    t0 = time.time()
    u = io.read_field(args.input)
    if not isinstance(u, VectorField):
        raise HeaderMismatch(f"{args.input} is not a displacement container")
    dom = _roi_mask(u, _floats(args.roi) if args.roi else None)
    maps = spectral.characterize(u)
    scheme = _parse_scheme(args.scheme, u, dom, maps)
    config = solver.InversionConfig(
        scheme=scheme,
        max_steps=args.steps,
        residual_tolerance=args.tolerance,
        oob_policy=args.oob,
        initialization=args.init,
    )
    run = solver.invert(u, config, domain=dom, maps=maps)
    io.write_field(run.estimate, args.out, semantic="inverse-dvf")
    status = DomainMask(u.geometry, run.status == int(solver.VoxelStatus.FROZEN_OOB))
    io.write_field(status, args.out + ".oob.dvf")
    outputs = [args.out, args.out + ".oob.dvf"]
    if args.report:
        io.write_report(run, args.report, table_path=args.report + ".csv")
        outputs += [args.report, args.report + ".csv"]
    _write_manifest(args.out + ".manifest.json", "invert",
                    {k: v for k, v in vars(args).items() if k != "func"},
                    [args.input], outputs, t0)
    return 0


def _cmd_evaluate(args) -> int:
    t0 = time.time()
    u = io.read_field(args.forward)
    est = io.read_field(args.estimate)
    if not isinstance(u, VectorField) or not isinstance(est, VectorField):
        raise HeaderMismatch("evaluate needs two displacement containers")
    if u.geometry != est.geometry:
        raise GeometryMismatch("forward and estimate grids differ")
    dom = _roi_mask(u, _floats(args.roi) if args.roi else None)
    os.makedirs(args.out_dir, exist_ok=True)
    out = lambda name: os.path.join(args.out_dir, name)

    rv, rv_oob = solver.residual_v(u, est, domain=dom)
    rv_mag = metrics.magnitude_field(rv, DomainMask(u.geometry, dom.inside & ~rv_oob))
    io.write_field(rv_mag, out("residual_v_mag.dvf"))
    ru, ru_valid = metrics.residual_u(u, est, domain=dom)
    ru_mag = metrics.magnitude_field(ru, DomainMask(u.geometry, ru_valid))
    io.write_field(ru_mag, out("residual_u_mag.dvf"))
    summary = {
        "residual_v": _summary_dict(metrics.summarize(rv_mag)),
        "residual_u": _summary_dict(metrics.summarize(ru_mag)),
    }
    outputs = [out("residual_v_mag.dvf"), out("residual_u_mag.dvf")]
    if args.truth:
        truth = io.read_field(args.truth)
        if not isinstance(truth, VectorField):
            raise HeaderMismatch(f"{args.truth} is not a displacement container")
        err = metrics.inversion_error(est, truth, dom)
        io.write_field(err, out("error_mag.dvf"))
        summary["true_error"] = _summary_dict(metrics.summarize(err))
        outputs.append(out("error_mag.dvf"))
    with open(out("summary.json"), "w", encoding="ascii") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
        f.write("\n")
    _write_manifest(out("manifest.json"), "evaluate",
                    {k: v for k, v in vars(args).items() if k != "func"},
                    [args.forward, args.estimate] + ([args.truth] if args.truth else []),
                    outputs, t0)
    return 0


def _cmd_contraction(args) -> int:
    t0 = time.time()
    u = io.read_field(args.forward)
    if not isinstance(u, VectorField):
        raise HeaderMismatch(f"{args.forward} is not a displacement container")
    dom = _roi_mask(u, _floats(args.roi) if args.roi else None)
    maps = spectral.characterize(u)
    scheme = _parse_scheme(args.scheme, u, dom, maps)
    rho = metrics.contraction_map(u, scheme, maps=maps, domain=dom)
    io.write_field(rho, args.out)
    report = {
        "contraction_area_fraction": metrics.contraction_area(rho),
        "contraction_ratio": _summary_dict(metrics.summarize(rho)),
        "scheme": io.describe_scheme(scheme),
    }
    with open(args.out + ".summary.json", "w", encoding="ascii") as f:
        json.dump(report, f, indent=1, sort_keys=True)
        f.write("\n")
    _write_manifest(args.out + ".manifest.json", "contraction",
                    {k: v for k, v in vars(args).items() if k != "func"},
                    [args.forward], [args.out, args.out + ".summary.json"], t0)
    return 0


def _cmd_slice(args) -> int:
    t0 = time.time()
    vol = io.read_field(args.volume)
    if isinstance(vol, VectorField):
        vol = metrics.magnitude_field(vol)
    rng = _floats(args.range) if args.range else [None, None]
    if len(rng) != 2:
        raise _UsageError("--range needs LO,HI")
    io.export_slice(vol, args.out, axis=args.axis, index=args.index,
                    vmin=rng[0], vmax=rng[1], cmap=args.cmap)
    _write_manifest(args.out + ".manifest.json", "slice",
                    {k: v for k, v in vars(args).items() if k != "func"},
                    [args.volume], [args.out], t0)
    return 0


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dvfkit",
                                description="Deformation-field inversion toolkit")
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("DVFKIT_THREADS", "0")),
                   help="worker cap, recorded in the manifest (results never depend on it)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="sample an analytic displacement pair")
    s.add_argument("--family", required=True,
                   choices=["appendix", "translation", "linear", "rotation"])
    s.add_argument("--b", type=float)
    s.add_argument("--m", type=int)
    s.add_argument("--vector")
    s.add_argument("--matrix")
    s.add_argument("--angle", type=float)
    s.add_argument("--half", type=float, default=34.0)
    s.add_argument("--extent")
    s.add_argument("--origin")
    s.add_argument("--spacing", default="0.05")
    s.add_argument("--out-forward", required=True)
    s.add_argument("--out-inverse")
    s.set_defaults(func=_cmd_synth)

    c = sub.add_parser("characterize", help="spectral measures of a DVF")
    c.add_argument("input")
    c.add_argument("--out-dir", required=True)
    c.set_defaults(func=_cmd_characterize)

    i = sub.add_parser("invert", help="feedback-controlled inversion")
    i.add_argument("input")
    i.add_argument("--scheme", default="variant")
    i.add_argument("--steps", type=int, default=10)
    i.add_argument("--tolerance", type=float, default=None)
    i.add_argument("--init", choices=["zero", "scaled98"], default="scaled98")
    i.add_argument("--oob", choices=["freeze", "clamp"], default="freeze")
    i.add_argument("--roi", help="lo,hi (all axes) or per-axis pairs")
    i.add_argument("--out", required=True)
    i.add_argument("--report")
    i.set_defaults(func=_cmd_invert)

    e = sub.add_parser("evaluate", help="inverse-consistency residuals and true error")
    e.add_argument("forward")
    e.add_argument("estimate")
    e.add_argument("--truth")
    e.add_argument("--roi")
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=_cmd_evaluate)

    k = sub.add_parser("contraction", help="pre-inversion contraction ratio map")
    k.add_argument("forward")
    k.add_argument("--scheme", default="constant:0")
    k.add_argument("--roi")
    k.add_argument("--out", required=True)
    k.set_defaults(func=_cmd_contraction)

    m = sub.add_parser("slice", help="export a slice as PGM/PPM")
    m.add_argument("volume")
    m.add_argument("--axis", type=int, default=None)
    m.add_argument("--index", type=int, default=None)
    m.add_argument("--range")
    m.add_argument("--cmap", choices=["gray", "heat"], default="gray")
    m.add_argument("--out", required=True)
    m.set_defaults(func=_cmd_slice)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return _USAGE
    except InvalidSpec as e:
        print(f"error: invalid field specification: {e}", file=sys.stderr)
        return _USAGE
    except (InfeasibleControl, Uncontrollable) as e:
        print(f"error: infeasible control (controllability condition violated): {e}",
              file=sys.stderr)
        return _INFEASIBLE
    except (HeaderMismatch, TruncatedPayload, UnsupportedSampleType, GeometryMismatch,
            EmptyDomain, EmptyField, OutOfBounds, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return _DATA


if __name__ == "__main__":
    raise SystemExit(main())
