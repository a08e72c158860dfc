"""
Command-line front end.

    eltrap run CONFIG...      zero-span sequence -> trace files + summary
    eltrap sweep CONFIG...    swept sequence -> spectrum + Gaussian fit
    eltrap budget CONFIG      filter-chain report
    eltrap fit TRACE          exponential or Gaussian fit report
    eltrap potential MAP      even-polynomial fit of a field map

Exit codes: 0 ok, 1 usage, 2 config, 3 physics or fit failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .analysis import fit_exponential_decay, fit_gaussian, snr
from .cavity import watts_to_dbm
from .config import load_config
from .errors import ConfigError, EltrapError, ProgramError
from .potential import fit_even_polynomial, load_potential_samples
from .sequence import run_sequence, spectrum_from_zero_span
from .traceio import read_trace, write_trace

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_PHYSICS = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _formats(value):
    return ("csv", "json") if value == "both" else (value,)


def _outdir(args, cfg_path):
    d = Path(args.out) if args.out else Path(cfg_path).parent
    d.mkdir(parents=True, exist_ok=True)
    return d


def _json(doc):
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def _run_one(path, args):
    cfg = load_config(path, seed=args.seed)
    if cfg.program is None:
        raise ConfigError("config has no [sequence] section", None, str(path))
    trace = run_sequence(cfg.program, cfg.drive, cfg.cavity, cfg.coupling, cfg.chain,
                         cfg.seed, **cfg.engine_kwargs())
    stem = _outdir(args, path) / Path(path).stem
    written = write_trace(trace, Path(str(stem) + ".trace"), _formats(args.format))
    floor = trace.metadata["noise_floor_W"]
    peak = float(trace.y.max())
    parts = [f"{Path(path).name}: {len(trace.x)} samples",
             f"peak {peak:.4g} W ({float(watts_to_dbm(peak)):.2f} dBm)",
             f"snr {snr(trace, floor, cfg.thermal_share):.3g}"]
    if cfg.fit_window is not None:
        fit = fit_exponential_decay(trace, cfg.fit_window)
        doc = {"config_digest": cfg.digest, "seed": cfg.seed, "fit": fit.to_dict()}
        fpath = Path(str(stem) + ".fit.json")
        fpath.write_text(_json(doc))
        written.append(fpath)
        parts.append(f"tau {fit.time_constant:.4g} s")
    return ", ".join(parts), [str(w) for w in written], []


def _sweep_one(path, args):
    cfg = load_config(path, seed=args.seed)
    if cfg.program is None:
        raise ConfigError("config has no [sequence] section", None, str(path))
    kw = cfg.engine_kwargs()
    trace = run_sequence(cfg.program, cfg.drive, cfg.cavity, cfg.coupling, cfg.chain,
                         cfg.seed, **kw)
    spectrum = spectrum_from_zero_span(trace, cfg.program, cfg.drive, cfg.cavity,
                                   potential=kw["potential"],
                                   broadening_temperature=kw["broadening_temperature"],
                                   broadening_bins=kw["broadening_bins"])
    stem = _outdir(args, path) / Path(path).stem
    fmts = _formats(args.format)
    written = write_trace(trace, Path(str(stem) + ".trace"), fmts)
    written += write_trace(spectrum, Path(str(stem) + ".spectrum"), fmts)
    warns = list(spectrum.metadata.get("warnings", []))
    try:
        fit = fit_gaussian(spectrum)
    except EltrapError as exc:
        exc.warnings = warns
        raise
    doc = {"config_digest": cfg.digest, "seed": cfg.seed, "frequency_axis": "commanded",
           "fit": fit.to_dict()}
    fpath = Path(str(stem) + ".fit.json")
    fpath.write_text(_json(doc))
    written.append(fpath)
    summary = (f"{Path(path).name}: center {fit.center / 1e6:.4f} MHz, "
               f"FWHM {fit.fwhm / 1e6:.4g} MHz, sigma {fit.sigma / 1e6:.4g} MHz")
    return summary, [str(w) for w in written], warns


def _guard(func, path, args):
    """Run in a worker; returns (status, summary, files, warnings)."""
    try:
        summary, files, warns = func(path, args)
        return EXIT_OK, summary, files, warns
    except (ConfigError, ProgramError) as exc:
        return EXIT_CONFIG, str(exc), [], []
    except EltrapError as exc:
        return EXIT_PHYSICS, str(exc), [], getattr(exc, "warnings", [])


def _batch(func, args):
    paths = args.configs
    if args.jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_guard, [func] * len(paths), paths, [args] * len(paths)))
    else:
        results = [_guard(func, p, args) for p in paths]
    status = EXIT_OK
    for code, summary, files, warns in results:
        for w in warns:
            print(f"warning: {w}", file=sys.stderr)
        if code == EXIT_OK:
            print(summary)
        else:
            print(f"error: {summary}", file=sys.stderr)
            status = max(status, code)
    return status


def cmd_run(args):
    return _batch(_run_one, args)


def cmd_sweep(args):
    return _batch(_sweep_one, args)


def cmd_budget(args):
    cfg = load_config(args.config)
    sys.stdout.write(cfg.chain.report())
    return EXIT_OK


def cmd_fit(args):
    trace = read_trace(args.trace)
    if args.model == "exp":
        window = tuple(args.window) if args.window else None
        fit = fit_exponential_decay(trace, window)
    else:
        fit = fit_gaussian(trace)
    doc = {"source": str(args.trace), "fit": fit.to_dict(),
           "seed": trace.metadata.get("seed"),
           "config_digest": trace.metadata.get("config_digest")}
    text = _json(doc)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_potential(args):
    samples = load_potential_samples(args.field_map, args.axis)
    fit = fit_even_polynomial(samples, window=args.window, fit_c6=not args.no_c6)
    sys.stdout.write(fit.report())
    return EXIT_OK


def build_parser():
    p = _Parser(prog="eltrap", description="Electron Paul trap with image-current readout.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def batch(name, helptext, func):
        sp = sub.add_parser(name, help=helptext, description=helptext)
        sp.add_argument("configs", nargs="+", metavar="CONFIG")
        sp.add_argument("--out", help="output directory (default: next to the config)")
        sp.add_argument("--seed", type=int, help="override [run] seed")
        sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        sp.add_argument("--format", choices=("csv", "json", "both"), default="both")
        sp.set_defaults(func=func)

    batch("run", "run zero-span sequences", cmd_run)
    batch("sweep", "run swept sequences and fit the spectrum", cmd_sweep)

    sp = sub.add_parser("budget", help="filter-chain report", description="filter-chain report")
    sp.add_argument("config")
    sp.set_defaults(func=cmd_budget)

    sp = sub.add_parser("fit", help="fit a saved trace", description="fit a saved trace")
    sp.add_argument("trace")
    sp.add_argument("--model", choices=("exp", "gauss"), default="exp")
    sp.add_argument("--window", type=float, nargs=2, metavar=("START", "END"),
                    help="fit window in seconds (exp model)")
    sp.add_argument("--out", help="also write the report here")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("potential", help="fit an axial field map",
                        description="fit an axial field map")
    sp.add_argument("field_map")
    sp.add_argument("--axis", default="z")
    sp.add_argument("--window", type=float, help="half-width of the fit window (um)")
    sp.add_argument("--no-c6", action="store_true", help="fit the quartic term only")
    sp.set_defaults(func=cmd_potential)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, ProgramError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EltrapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS


if __name__ == "__main__":
    sys.exit(main())
