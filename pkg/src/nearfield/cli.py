"""Command-line front end: nearfield <subcommand> ..."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import __version__
from .errors import DataError, FormatError, NearfieldError, NumericalError
from .fit import BASE_NAMES, FitProblem, fit_parameters
from .grid import (DEFAULT_HALFWIDTH_UM, DEFAULT_ORDER, DEFAULT_SPACING_UM, FIELD_HEADER,
                   extract_quadrupole, grid_axes, grid_from_params, grid_from_wires, load_grid,
                   save_grid, write_atomic)
from .hyperfine import (BE9, DEFAULT_B0_MT, DEFAULT_TILT_DEG, TRANSITIONS, all_transitions,
                        diagonalize_ground_state, load_transition_map, parse_transition)
from .model import QuadrupoleParams
from .render import render_pgm
from .shiftmap import (SHIFT_HEADER, add_noise, forward_shift_map, load_shift_map,
                       save_shift_map)
from .wires import DEFAULT_FREQ_MHZ, PRESET_CENTERS, PRESETS, WireSet, preset_scenario

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

SHIFTMAP_HALFWIDTH_UM = 15.0
SHIFTMAP_SPACING_UM = 1.0
# amplitude factor for preset wire currents so peak shifts land at tens of kHz
PRESET_SHIFT_SCALE = 0.2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers -----------------------------------------------------------------

def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})") from None


def _dump_json(obj, path):
    text = json.dumps(obj, indent=2) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        write_atomic(path, text)


def _check_inputs(*paths):
    for p in paths:
        if p is not None and p != "-" and not os.path.isfile(p):
            raise UsageError(f"input file not found: {p}")


def _check_output(path):
    if path is None or path == "-":
        return
    d = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(d):
        raise UsageError(f"output directory does not exist: {d}")


def _field_source(args):
    """Params, WireSet or preset named on the command line."""
    chosen = [a for a in (args.params, args.wires, args.preset) if a is not None]
    if len(chosen) != 1:
        raise UsageError("give exactly one of --params, --wires, --preset")
    if args.params is not None:
        return QuadrupoleParams.from_json(_read_json(args.params))
    if args.wires is not None:
        return WireSet.from_json(_read_json(args.wires))
    freq = DEFAULT_FREQ_MHZ if args.freq is None else args.freq
    return preset_scenario(args.preset, freq=freq)


def _default_center(args, source):
    if args.center is not None:
        return tuple(args.center)
    if isinstance(source, QuadrupoleParams):
        return (source.x0, source.z0)
    if args.preset is not None:
        return PRESET_CENTERS[args.preset]
    raise UsageError("--center is required for --wires input")


def _transition_map(args):
    if args.transition_map is None:
        return TRANSITIONS
    return load_transition_map(args.transition_map)


def _add_source_args(p):
    p.add_argument("--params", help="QuadrupoleParams JSON")
    p.add_argument("--wires", help="WireSet JSON")
    p.add_argument("--preset", choices=PRESETS, help="built-in wire geometry")
    p.add_argument("--freq", type=float, default=None,
                   help="drive frequency for presets in MHz (default 1092.547)")
    p.add_argument("--center", type=float, nargs=2, metavar=("X", "Z"),
                   help="grid center in μm")


# -- subcommands -------------------------------------------------------------

def cmd_gen_field(args):
    _check_inputs(args.params, args.wires)
    _check_output(args.output)
    source = _field_source(args)
    cx, cz = _default_center(args, source)
    xs = grid_axes(cx, args.halfwidth, args.spacing)
    zs = grid_axes(cz, args.halfwidth, args.spacing)
    if isinstance(source, QuadrupoleParams):
        g = grid_from_params(source, xs, zs)
    else:
        g = grid_from_wires(source, xs, zs)
    save_grid(g, args.output)
    if args.wires_out is not None:
        if isinstance(source, QuadrupoleParams):
            raise UsageError("--wires-out needs a wire source")
        _dump_json(source.to_json(), args.wires_out)
    return EXIT_OK


def cmd_extract(args):
    _check_inputs(args.input)
    _check_output(args.output)
    _check_output(args.diagnostics)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        g = load_grid(sys.stdin if args.input == "-" else args.input)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    params, diag = extract_quadrupole(g, args.halfwidth, args.order, args.tol)
    _dump_json(params.to_json(), args.output)
    if args.diagnostics is not None:
        _dump_json(diag.to_json(), args.diagnostics)
    if not diag.consistent:
        print("warning: canonical form residuals exceed tolerance "
              "(see diagnostics)", file=sys.stderr)
    return EXIT_OK


def levels_report(B0, c=BE9, mapping=None):
    """Energies and ``|dm| <= 1`` transitions at ``B0`` (mT) as a JSON object."""
    mapping = TRANSITIONS if mapping is None else mapping
    ls = diagonalize_ground_state(c, B0)
    letters = {(t.lower, t.upper): name for name, t in mapping.items()}
    levels = [{"F": lv.F, "mF": lv.mF, "energy_MHz": lv.energy} for lv in ls.levels]
    upper = [lv.energy for lv in ls.levels if lv.F == 2]
    lower = [lv.energy for lv in ls.levels if lv.F == 1]
    transitions = []
    for t, f in all_transitions(ls):
        key = (t.lower, t.upper)
        rev = (t.upper, t.lower)
        transitions.append({
            "lower": list(t.lower), "upper": list(t.upper),
            "label": letters.get(key, letters.get(rev)),
            "freq_MHz": f,
        })
    return {
        "B0_mT": B0,
        "levels": levels,
        # centroid difference of the two F manifolds; 2|A| at zero field
        "F_splitting_MHz": abs(float(np.mean(lower)) - float(np.mean(upper))),
        "transitions": transitions,
    }


def cmd_levels(args):
    _check_inputs(args.transition_map)
    _check_output(args.output)
    if not (math.isfinite(args.B0) and args.B0 >= 0):
        raise UsageError("--B0 must be a non-negative number")
    _dump_json(levels_report(args.B0, mapping=_transition_map(args)), args.output)
    return EXIT_OK


def cmd_shiftmap(args):
    _check_inputs(args.params, args.wires, args.transition_map)
    _check_output(args.output)
    if args.noise < 0:
        raise UsageError("--noise must be non-negative")
    if args.noise > 0 and args.seed is None:
        raise UsageError("--noise needs an explicit --seed")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise UsageError("--seed must be an unsigned 64-bit integer")
    source = _field_source(args)
    scale = args.scale
    if scale is None:
        scale = PRESET_SHIFT_SCALE if args.preset is not None else 1.0
    if scale != 1.0:
        if isinstance(source, QuadrupoleParams):
            source = replace(source, B=source.B * scale, Bp=source.Bp * scale)
        else:
            source = source.scaled(scale)
    t = parse_transition(args.transition, _transition_map(args))
    cx, cz = _default_center(args, source)
    xs = grid_axes(cx, args.halfwidth, args.spacing)
    zs = grid_axes(cz, args.halfwidth, args.spacing)
    m = forward_shift_map(source, t, xs, zs, f_drive=args.f_drive, B0=args.B0,
                          tilt_deg=args.tilt, power_dB=args.power_dB, rwa=args.rwa)
    if args.noise > 0:
        m = add_noise(m, args.noise, np.random.default_rng(args.seed))
    if args.header_power_dB is not None:
        m = replace(m, power_dB=args.header_power_dB)
    save_shift_map(m, args.output)
    return EXIT_OK


def cmd_fit(args):
    _check_inputs(*args.inputs, args.initial, args.transition_map)
    _check_output(args.output)
    mapping = _transition_map(args)
    maps = [load_shift_map(p, mapping) for p in args.inputs]
    fixed = set(args.fix or ())
    unknown = fixed - set(BASE_NAMES)
    if unknown:
        raise UsageError(f"unknown parameter(s) to fix: {', '.join(sorted(unknown))}")
    initial = None
    if args.initial is not None:
        initial = QuadrupoleParams.from_json(_read_json(args.initial))
    elif fixed:
        raise UsageError("--fix needs --initial to supply the fixed values")
    names = BASE_NAMES + tuple(f"power_dB_{i}" for i in range(1, len(maps)))
    free = tuple(n for n in names if n not in fixed)
    prob = FitProblem(maps, initial=initial, free=free, B0=args.B0, tilt_deg=args.tilt)
    result = fit_parameters(prob, strict=args.strict)
    _dump_json(result.to_json(), args.output)
    if not result.converged:
        print("warning: fit did not converge; reporting best-so-far", file=sys.stderr)
    return EXIT_OK


def _sniff_header(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            s = line.strip()
            if s and not s.startswith("#"):
                return tuple(f.strip() for f in s.split(","))
    raise FormatError(f"{path}: no header line")


def cmd_render(args):
    _check_inputs(args.input)
    _check_output(args.output)
    header = _sniff_header(args.input)
    if header[:len(SHIFT_HEADER)] == SHIFT_HEADER:
        m = load_shift_map(args.input)
        values, xs, zs, units = m.shift, m.xs, m.zs, "kHz"
    elif header[:len(FIELD_HEADER)] == FIELD_HEADER:
        g = load_grid(args.input)
        values, xs, zs, units = g.magnitude(), g.xs, g.zs, "uT"
    else:
        raise FormatError(f"{args.input}: neither a shift nor a field CSV")
    render_pgm(values, xs, zs, args.output, units)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="nearfield",
                     description="2D microwave near-field quadrupole toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-field", help="sample a field (params, wires or preset) to CSV")
    _add_source_args(p)
    p.add_argument("--halfwidth", type=float, default=DEFAULT_HALFWIDTH_UM, help="μm")
    p.add_argument("--spacing", type=float, default=DEFAULT_SPACING_UM, help="μm")
    p.add_argument("--wires-out", help="also write the WireSet JSON")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_field)

    p = sub.add_parser("extract", help="field CSV -> quadrupole params JSON")
    p.add_argument("input", help="field CSV ('-' for stdin)")
    p.add_argument("--halfwidth", type=float, default=DEFAULT_HALFWIDTH_UM,
                   help="half-width of the fit window in μm")
    p.add_argument("--order", type=int, default=DEFAULT_ORDER)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--diagnostics", help="write diagnostics JSON here")
    p.add_argument("-o", "--output", help="params JSON (default stdout)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("levels", help="hyperfine levels and transitions at B0")
    p.add_argument("--B0", type=float, default=DEFAULT_B0_MT, help="static field in mT")
    p.add_argument("--transition-map", help="JSON overriding the letter labels")
    p.add_argument("-o", "--output", help="JSON (default stdout)")
    p.set_defaults(func=cmd_levels)

    p = sub.add_parser("shiftmap", help="forward AC Zeeman shift map to CSV")
    _add_source_args(p)
    p.add_argument("--transition", default="B", help="letter or '(F,m)-(F,m)'")
    p.add_argument("--transition-map")
    p.add_argument("--f-drive", type=float, default=None,
                   help="drive frequency in MHz (default: the field's)")
    p.add_argument("--B0", type=float, default=DEFAULT_B0_MT)
    p.add_argument("--tilt", type=float, default=DEFAULT_TILT_DEG,
                   help="bias tilt from z toward y in degrees")
    p.add_argument("--power-dB", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=None,
                   help=f"field amplitude factor (default {PRESET_SHIFT_SCALE} for presets, else 1)")
    p.add_argument("--header-power-dB", type=float, default=None,
                   help="power recorded in the CSV header (default: --power-dB)")
    p.add_argument("--halfwidth", type=float, default=SHIFTMAP_HALFWIDTH_UM)
    p.add_argument("--spacing", type=float, default=SHIFTMAP_SPACING_UM)
    p.add_argument("--noise", type=float, default=0.0, help="relative Gaussian noise")
    p.add_argument("--seed", type=int, default=None, help="noise RNG seed (u64)")
    p.add_argument("--rwa", action="store_true", help="drop counter-rotating terms")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_shiftmap)

    p = sub.add_parser("fit", help="fit quadrupole params to one or more shift CSVs")
    p.add_argument("inputs", nargs="+", help="shift CSVs; the first is the power reference")
    p.add_argument("--initial", help="params JSON start (skips the multi-start grid)")
    p.add_argument("--fix", nargs="+", choices=BASE_NAMES, help="hold parameters at --initial")
    p.add_argument("--transition-map")
    p.add_argument("--B0", type=float, default=DEFAULT_B0_MT)
    p.add_argument("--tilt", type=float, default=DEFAULT_TILT_DEG)
    p.add_argument("--strict", action="store_true", help="fail if not converged")
    p.add_argument("-o", "--output", help="report JSON (default stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", help="shift or field CSV -> 16-bit PGM heatmap")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NearfieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


run = main


if __name__ == "__main__":
    sys.exit(main())
