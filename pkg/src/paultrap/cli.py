"""Command-line front end.

Exit codes: 0 success, 1 physics failure (unstable equilibrium, failed
search, infeasible waveform, degenerate fit), 2 usage or parse error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import warnings

import numpy as np

from . import __version__
from .core import CONSTANTS, DomainError, PaultrapError, ValidationError, species as lookup_species
from .io import BUNDLED, GeometryFile, bundled_geometry, csv_text, load_geometry, write_csv

EXIT_OK, EXIT_PHYSICS, EXIT_USAGE = 0, 1, 2

LENGTH = {"m": 1.0, "mm": 1e-3, "um": 1e-6, "nm": 1e-9}
FREQ = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6}
ENERGY = {"eV": 1.0, "meV": 1e-3}


class UsageError(ValidationError):
    pass


# --- reports --------------------------------------------------------------------


class Report:
    """Flat list of ``(key, value, unit)`` rows rendered as text, JSON or CSV."""

    def __init__(self, title):
        self.title = title
        self.rows = []
        self.messages = []

    def add(self, key, value, unit=""):
        if isinstance(value, (np.floating, np.integer)):
            value = value.item()
        self.rows.append((key, value, unit))

    def note(self, msg):
        self.messages.append(msg)

    def render(self, fmt) -> str:
        if fmt == "json":
            doc = {"report": self.title,
                   "values": {k: {"value": _jsonable(v), "unit": u} for k, v, u in self.rows},
                   "messages": list(self.messages)}
            return json.dumps(doc, indent=2) + "\n"
        if fmt == "csv":
            rows = [(k, _fmt(v), u) for k, v, u in self.rows]
            rows += [("message", m, "") for m in self.messages]
            return csv_text(["key", "value", "unit"], rows)
        width = max((len(k) for k, _, _ in self.rows), default=0)
        lines = [self.title, "=" * len(self.title)]
        lines += [f"{k:<{width}}  {_fmt(v)} {u}".rstrip() for k, v, u in self.rows]
        lines += [f"warning: {m}" for m in self.messages]
        return "\n".join(lines) + "\n"


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _fmt(v):
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return str(v)
    if isinstance(v, int):
        return str(v)
    return format(float(v), ".8g")


# --- argument helpers -----------------------------------------------------------


def _vector(text, n=3):
    try:
        v = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    if v.size != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    return v


def _range(text):
    """``lo:hi:n`` grid specification."""
    parts = text.split(":")
    if len(parts) not in (1, 3):
        raise argparse.ArgumentTypeError(f"expected lo:hi:n or a single value, got {text!r}")
    try:
        if len(parts) == 1:
            return float(parts[0]), float(parts[0]), 1
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse grid range {text!r}")
    if n < 1:
        raise argparse.ArgumentTypeError("grid resolution must be >= 1")
    return lo, hi, n


def _axis(spec, unit):
    lo, hi, n = spec
    return np.linspace(lo, hi, n) * unit if n > 1 else np.array([lo * unit])


def _load(arg) -> GeometryFile:
    if arg.startswith("builtin:"):
        try:
            return bundled_geometry(arg.split(":", 1)[1])
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from None
    return load_geometry(arg)


def _species(args, gf=None):
    if getattr(args, "species", None):
        try:
            return lookup_species(args.species)
        except KeyError as exc:
            raise UsageError(f"unknown species {args.species!r}") from exc
    if gf is not None and gf.species is not None:
        return gf.species
    raise UsageError("no species given (use --species or set it in the geometry file)")


def _drive(args, gf):
    amp = args.amplitude if args.amplitude is not None else gf.amplitude
    omega = (2 * math.pi * args.frequency_mhz * 1e6 if args.frequency_mhz is not None
             else gf.omega_rf)
    if amp is None or omega is None:
        raise UsageError("rf drive incomplete (use --amplitude and --frequency-mhz)")
    return amp, omega


def _emit(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        from .io import atomic_write_text
        atomic_write_text(path, text)


def _units(args):
    return LENGTH[args.length_unit], FREQ[args.freq_unit], ENERGY[args.energy_unit]


def _trap_model(gf, args):
    from .pseudo import PseudoModel, RfDrive
    sp = _species(args, gf)
    amp, omega = _drive(args, gf)
    return PseudoModel(gf.geometry, RfDrive(amp, omega), sp, gf.static_biases)


def _null(model):
    from .pseudo import find_rf_null, guess_null
    return find_rf_null(model, guess_null(model))


# --- subcommands ----------------------------------------------------------------


def cmd_analyze(args) -> int:
    from . import diagnostics as dg
    from .pseudo import (cooling_geometry_check, find_equilibrium, intrinsic_axes,
                         secular_modes, trap_depth)

    gf = _load(args.geometry)
    model = _trap_model(gf, args)
    lu, fu, eu = _units(args)
    lname, fname, ename = args.length_unit, args.freq_unit, args.energy_unit
    rep = Report(f"analysis of {gf.geometry.name or args.geometry}")
    rep.add("electrodes", len(gf.geometry))
    rep.add("species", model.species.name or f"{model.species.mass_u} u")
    rep.add("rf_amplitude", model.drive.amplitude, "V")
    rep.add("rf_frequency", model.drive.omega_rf / (2 * math.pi) / fu, fname)

    null = _null(model)
    for c, v in zip("xyz", null):
        rep.add(f"null_{c}", v / lu, lname)
    rf_only = model.with_static_biases(None) if np.any(gf.static_biases) else model
    modes = secular_modes(rf_only, null)
    for i, f in enumerate(modes.frequencies_hz):
        rep.add(f"radial_frequency_{i + 1}", f / fu, fname)
    rep.add("radial_degenerate", bool(modes.has_degeneracy))

    eq = null
    if np.any(gf.static_biases):
        eq = find_equilibrium(model, null)
        modes = secular_modes(model, eq)
        rep.add("equilibrium_offset", float(np.linalg.norm(eq - null)) / lu, lname)
        e_rf = float(np.sqrt(model.rf_field_sq(eq)))
        rep.add("rf_field_at_equilibrium", e_rf, "V/m")
        for i, f in enumerate(modes.frequencies_hz):
            rep.add(f"frequency_{i + 1}", f / fu, fname)
    offset = args.control_offset if args.control_offset is not None else gf.control_offset
    if offset:
        modes = intrinsic_axes(rf_only, offset, null)
        rep.add("control_offset", offset, "V")
        for i, f in enumerate(modes.frequencies_hz):
            rep.add(f"offset_frequency_{i + 1}", f / fu, fname)
    for i, f in enumerate(modes.frequencies):
        if not f > 0:
            rep.note(f"mode {i + 1} is unconfined by the rf alone; set static biases for it")
    for i, a in enumerate(modes.axis_angles):
        rep.add(f"axis_angle_{i + 1}", math.degrees(a), "deg")

    depth = trap_depth(rf_only, null)
    rep.add("trap_depth", depth.depth / eu, ename)
    for c, v in zip("xyz", depth.saddle):
        rep.add(f"saddle_{c}", v / lu, lname)
    rep.add("depth_method", depth.method)

    beam = args.beam if args.beam is not None else gf.beam
    if beam is None:
        beam = np.array([1.0, 0.0, 1.0]) / math.sqrt(2)
    beam = np.asarray(beam, float) / np.linalg.norm(beam)
    cool = cooling_geometry_check(modes, beam)
    for i, o in enumerate(cool.overlaps):
        rep.add(f"beam_overlap_{i + 1}", float(o))
    rep.add("cooling_ok", bool(cool.ok))
    for m in cool.messages:
        rep.note(m)

    height = float(eq[1])
    if args.gap_width is not None:
        gap = dg.DielectricGap(args.gap_width * lu, (args.gap_thickness or 0.0) * lu,
                               args.gap_potential, height)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            e = dg.stray_field(gap, override=True)
        rep.add("stray_field", e, "V/m")
        for w in caught:
            rep.note(str(w.message))
    if args.heating_anchor is not None:
        rate, r_um, f_mhz = args.heating_anchor
        hm = dg.HeatingModel.from_heating_rate(rate, model.species, r_um * 1e-6,
                                               2 * math.pi * f_mhz * 1e6)
        w_sec = float(min(modes.frequencies))
        s_e = float(dg.heating_spectral_density(hm, height, w_sec))
        rep.add("field_noise_S_E", s_e, "(V/m)^2/Hz")
        rep.add("heating_rate", float(dg.heating_rate(s_e, model.species, w_sec)), "quanta/s")
    _emit(rep.render(args.format), args.output)
    return EXIT_OK


def cmd_grid(args) -> int:
    from .pseudo import trap_depth

    gf = _load(args.geometry)
    model = _trap_model(gf, args)
    lu, _, eu = _units(args)
    xs, ys, zs = _axis(args.x, lu), _axis(args.y, lu), _axis(args.z, lu)
    if np.any(ys <= 0):
        raise UsageError("grid region must lie above the electrode plane (y > 0)")
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)
    pp = model.species.charge_number * model.pseudopotential(pts) / eu
    total = model.energy(pts) / eu
    comments = []
    if not args.no_annotate:
        try:
            null = _null(model)
            comments.append("null," + ",".join(format(v / lu, ".10g") for v in null))
            d = trap_depth(model.with_static_biases(None), null)
            comments.append("saddle," + ",".join(format(v / lu, ".10g") for v in d.saddle)
                            + f",depth={d.depth / eu:.10g}")
        except PaultrapError as exc:
            comments.append(f"annotation unavailable: {exc}")
    ln, en = args.length_unit, args.energy_unit
    header = [f"x_{ln}", f"y_{ln}", f"z_{ln}", f"pseudo_{en}", f"total_{en}"]
    rows = [(p[0] / lu, p[1] / lu, p[2] / lu, a, b) for p, a, b in zip(pts, pp, total)]
    _emit(csv_text(header, rows, comments, args.timestamp), args.output)
    return EXIT_OK


def cmd_dynamics(args) -> int:
    from .dynamics import DriveConfig, FieldModel, integrate, spectral_decompose

    sp = _species(args)
    omega = 2 * math.pi * args.frequency_mhz * 1e6
    lu, fu, _ = _units(args)
    rep = Report(f"dynamics ({args.scenario})")
    if args.scenario == "uniform":
        fm = FieldModel.uniform(np.array([args.field, 0.0, 0.0]), omega)
        start = np.zeros(6)
        expected = abs(sp.charge * args.field / (sp.mass * omega ** 2))
    elif args.scenario == "quadrupole":
        fm = FieldModel.quadrupole(args.v0, args.radius * lu, omega,
                                   stray_field=(args.stray_field, 0.0, 0.0))
        start = np.zeros(6)
        start[:3] = (args.offset if args.offset is not None else np.zeros(3)) * lu
        expected = None
    else:
        if not args.geometry:
            raise UsageError("the geometry scenario needs --geometry")
        gf = _load(args.geometry)
        amp = args.amplitude if args.amplitude is not None else gf.amplitude
        if amp is None:
            raise UsageError("rf amplitude missing")
        model_args = argparse.Namespace(species=args.species, amplitude=amp,
                                        frequency_mhz=args.frequency_mhz)
        null = _null(_trap_model(gf, model_args))
        drive = DriveConfig.from_geometry(gf.geometry, amp, omega, static_biases=gf.static_biases)
        fm = FieldModel.planar(gf.geometry, drive)
        start = np.zeros(6)
        start[:3] = null + (args.offset if args.offset is not None else np.zeros(3)) * lu
        expected = None
    period = 2 * math.pi / omega
    traj = integrate(fm, None, sp, start, args.cycles * period,
                     steps_per_cycle=args.steps_per_cycle, backend=args.backend)
    rep.add("cycles", args.cycles)
    rep.add("escaped", traj.escaped)
    if traj.escaped:
        rep.note(f"ion left the region at t = {traj.escape_time:.6g} s")
    spec = spectral_decompose(traj, min_cycles=args.min_secular_cycles)
    rep.add("micromotion_amplitude", spec.micromotion_amplitude / lu, args.length_unit)
    if expected is not None:
        rep.add("expected_micromotion", expected / lu, args.length_unit)
    for i, w in enumerate(spec.secular_frequencies):
        rep.add(f"secular_frequency_{i + 1}", w / (2 * math.pi) / fu, args.freq_unit)
    if args.trajectory:
        write_csv(args.trajectory, ["t_s", "x_m", "y_m", "z_m", "vx_m_s", "vy_m_s", "vz_m_s"],
                  traj.to_rows(), timestamp=args.timestamp)
    if args.spectrum:
        write_csv(args.spectrum, ["frequency_hz", "amplitude_x_m", "amplitude_y_m", "amplitude_z_m"],
                  np.column_stack([spec.frequencies, spec.amplitudes]), timestamp=args.timestamp)
    _emit(rep.render(args.format), args.output)
    return EXIT_OK if not traj.escaped else EXIT_PHYSICS


def cmd_waveform(args) -> int:
    from .waveform import axial_basis, separation_ramp, transport_sequence

    gf = _load(args.geometry)
    model = _trap_model(gf, args)
    sp = model.species
    lu, fu, eu = _units(args)
    null = _null(model)
    zs = [z for e in gf.geometry.patches for z in e.z_extent]
    if not zs:
        raise UsageError("waveforms need segmented (rectangular) control electrodes")
    basis0 = axial_basis(gf.geometry, np.linspace(min(zs), max(zs), 41), null[1], null[0])
    step = basis0.pitch / args.grid_per_pitch
    grid = np.arange(min(zs), max(zs) + 0.5 * step, step)
    basis = axial_basis(gf.geometry, grid, null[1], null[0])
    omega_z = 2 * math.pi * args.omega_mhz * 1e6
    duration = args.duration_us * 1e-6 if args.duration_us is not None else None
    rep = Report(f"waveform ({args.mode})")
    if args.mode == "transport":
        seq = transport_sequence(basis, args.start * lu, args.end * lu, args.steps, omega_z, sp,
                                 duration=duration, rails=args.rails)
        rep.add("steps", seq.n_steps)
        rep.add("max_omega_deviation", seq.max_omega_deviation)
        if seq.adiabaticity is not None:
            rep.add("adiabaticity", seq.adiabaticity, "rad")
            rep.add("step_adiabaticity", seq.step_adiabaticity, "rad")
    else:
        seq = separation_ramp(basis, args.z0 * lu, args.stages, omega_z, sp, rails=args.rails,
                              duration=duration)
        rep.add("stages", seq.n_steps)
        mid = seq.diagnostics[seq.n_steps // 2]
        rep.add("middle_stage_c2", mid.c2, "V/m^2")
        rep.add("middle_stage_kappa4", mid.kappa4, "V/m^4")
        last = seq.diagnostics[-1]
        for i, zm in enumerate(last.minima):
            rep.add(f"final_minimum_{i + 1}", zm / lu, args.length_unit)
        rep.add("final_barrier", last.barrier_ev / eu, args.energy_unit)
    rep.add("max_voltage", float(np.max(np.abs(seq.voltages))), "V")
    if not basis.null_verified:
        rep.note("axial line is off the rf null")
    text = csv_text(seq.header(), seq.to_rows(), timestamp=args.timestamp)
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        from .io import atomic_write_text
        atomic_write_text(args.output, text)
        sys.stdout.write(rep.render(args.format))
    return EXIT_OK


def _laser(args):
    from .recool import LaserParams
    gamma = 2 * math.pi * args.gamma_mhz * 1e6
    return LaserParams.from_wavelength(gamma, args.wavelength_nm * 1e-9, args.detuning * gamma,
                                       args.s0, args.cos_theta)


def cmd_recool_fit(args) -> int:
    from .recool import fit_temperature, read_curve

    sp = _species(args)
    curve = read_curve(args.curve)
    laser = _laser(args)
    fit = fit_temperature(curve, 2 * math.pi * args.omega_mhz * 1e6, sp, laser)
    rep = Report("recooling fit")
    rep.add("bins", len(curve))
    rep.add("T0", fit.T0, "K")
    rep.add("T0_low", fit.ci[0], "K")
    rep.add("T0_high", fit.ci[1], "K")
    rep.add("doppler_temperature", fit.doppler_temperature, "K")
    rep.add("chi2", fit.chi2)
    rep.add("low_sensitivity", fit.low_sensitivity)
    if fit.low_sensitivity:
        rep.note("curve is within 2% of flat; the temperature is barely constrained")
    _emit(rep.render(args.format), args.output)
    return EXIT_OK


def cmd_recool_simulate(args) -> int:
    from .recool import ensemble_curve

    sp = _species(args)
    laser = _laser(args)
    curve = ensemble_curve(args.temperature, 2 * math.pi * args.omega_mhz * 1e6, sp, laser,
                           args.duration_us * 1e-6, args.bins)
    counts = curve.normalized * args.counts_per_bin
    starts = curve.times - 0.5 * curve.bin_width
    rows = [(t, c, curve.bin_width) for t, c in zip(starts, counts)]
    _emit(csv_text(["t_seconds", "counts", "bin_width"], rows, timestamp=args.timestamp),
          args.output)
    return EXIT_OK


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-o", "--output", help="output file (default: stdout)")
    common.add_argument("--format", choices=("text", "json", "csv"), default="text")
    common.add_argument("--length-unit", choices=tuple(LENGTH), default="um")
    common.add_argument("--freq-unit", choices=tuple(FREQ), default="MHz")
    common.add_argument("--energy-unit", choices=tuple(ENERGY), default="meV")
    common.add_argument("--timestamp", action="store_true",
                        help="add a generation time to CSV provenance headers")
    common.add_argument("--species", help="ion species label, e.g. 24Mg+")

    trap = argparse.ArgumentParser(add_help=False)
    trap.add_argument("geometry", help=f"geometry file or builtin:{{{','.join(BUNDLED)}}}")
    trap.add_argument("--amplitude", type=float, help="rf amplitude (V)")
    trap.add_argument("--frequency-mhz", type=float, help="rf drive frequency (MHz)")

    p = argparse.ArgumentParser(prog="paultrap", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"paultrap {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common, trap], help="null, modes, depth, cooling check")
    a.add_argument("--beam", type=_vector, help="cooling beam direction x,y,z")
    a.add_argument("--control-offset", type=float, help="offset of all non-rf surface (V)")
    a.add_argument("--gap-width", type=float, help="exposed dielectric gap width (length unit)")
    a.add_argument("--gap-thickness", type=float, help="electrode thickness (length unit)")
    a.add_argument("--gap-potential", type=float, default=1.0, help="dielectric charge potential (V)")
    a.add_argument("--heating-anchor", type=_vector,
                   help="measured heating rate,R_um,f_MHz used to calibrate field noise")
    a.set_defaults(func=cmd_analyze)

    g = sub.add_parser("grid", parents=[common, trap], help="pseudopotential grid CSV")
    g.add_argument("--x", type=_range, default=(0.0, 0.0, 1), help="lo:hi:n (length unit)")
    g.add_argument("--y", type=_range, required=True, help="lo:hi:n (length unit)")
    g.add_argument("--z", type=_range, default=(0.0, 0.0, 1), help="lo:hi:n (length unit)")
    g.add_argument("--no-annotate", action="store_true", help="skip null/saddle comment rows")
    g.set_defaults(func=cmd_grid)

    d = sub.add_parser("dynamics", parents=[common], help="integrate an ion trajectory")
    d.add_argument("--scenario", choices=("uniform", "quadrupole", "geometry"), required=True)
    d.add_argument("--geometry", help="geometry file for the geometry scenario")
    d.add_argument("--amplitude", type=float, help="rf amplitude (V), geometry scenario")
    d.add_argument("--frequency-mhz", type=float, required=True)
    d.add_argument("--field", type=float, default=100.0, help="uniform rf field amplitude (V/m)")
    d.add_argument("--v0", type=float, default=50.0, help="quadrupole rf amplitude (V)")
    d.add_argument("--radius", type=float, default=50.0, help="quadrupole R (length unit)")
    d.add_argument("--stray-field", type=float, default=0.0, help="static field along x (V/m)")
    d.add_argument("--offset", type=_vector, help="start offset x,y,z (length unit)")
    d.add_argument("--cycles", type=int, default=400)
    d.add_argument("--steps-per-cycle", type=int, default=200)
    d.add_argument("--min-secular-cycles", type=float, default=10.0)
    d.add_argument("--backend", choices=("cython", "python"))
    d.add_argument("--trajectory", help="trajectory CSV path")
    d.add_argument("--spectrum", help="spectrum CSV path")
    d.set_defaults(func=cmd_dynamics, species_default="24Mg+")

    w = sub.add_parser("waveform", parents=[common, trap], help="transport or separation waveforms")
    w.add_argument("--mode", choices=("transport", "separate"), default="transport")
    w.add_argument("--start", type=float, default=0.0, help="transport start z (length unit)")
    w.add_argument("--end", type=float, default=0.0, help="transport end z (length unit)")
    w.add_argument("--steps", type=int, default=11)
    w.add_argument("--z0", type=float, default=0.0, help="separation centre (length unit)")
    w.add_argument("--stages", type=int, default=5)
    w.add_argument("--omega-mhz", type=float, default=1.0, help="axial frequency (MHz)")
    w.add_argument("--duration-us", type=float, help="sequence duration (us)")
    w.add_argument("--rails", type=float, default=10.0, help="voltage limit (V)")
    w.add_argument("--grid-per-pitch", type=int, default=40)
    w.set_defaults(func=cmd_waveform)

    laser = argparse.ArgumentParser(add_help=False)
    laser.add_argument("--gamma-mhz", type=float, default=41.4, help="linewidth Gamma/2pi (MHz)")
    laser.add_argument("--wavelength-nm", type=float, default=280.0)
    laser.add_argument("--detuning", type=float, default=-0.5, help="detuning in units of Gamma")
    laser.add_argument("--s0", type=float, default=1.0)
    laser.add_argument("--cos-theta", type=float, default=1.0)
    laser.add_argument("--omega-mhz", type=float, default=1.0, help="heated mode frequency (MHz)")

    r = sub.add_parser("recool-fit", parents=[common, laser], help="fit a recooling curve")
    r.add_argument("curve", help="CSV with t_seconds,counts,bin_width")
    r.set_defaults(func=cmd_recool_fit, species_default="24Mg+")

    s = sub.add_parser("recool-simulate", parents=[common, laser],
                       help="synthesise a noise-free recooling curve")
    s.add_argument("--temperature", type=float, required=True, help="initial temperature (K)")
    s.add_argument("--duration-us", type=float, default=2000.0)
    s.add_argument("--bins", type=int, default=200)
    s.add_argument("--counts-per-bin", type=float, default=1000.0,
                   help="steady-state counts per bin")
    s.set_defaults(func=cmd_recool_simulate, species_default="24Mg+")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "species", None) is None and hasattr(args, "species_default"):
        args.species = args.species_default
    try:
        return args.func(args)
    except (ValidationError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PaultrapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS


if __name__ == "__main__":
    sys.exit(main())
