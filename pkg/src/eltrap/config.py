"""
Run configuration: sectioned ``key = value`` files with mandatory units.

Example::

    [cavity]
    f0 = 619 MHz
    q_internal = 1300

Frequencies are written as ordinary frequencies (Hz) and converted to
angular units on load.  Keys that may repeat (``stage``, ``segment``) keep
every occurrence in order.
"""
from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .cavity import CavityMode, CouplingParams, FilterChain, FilterStage
from .errors import ConfigError, EltrapError
from .mathieu import TrapDrive
from .potential import PotentialModel, fit_even_polynomial, load_potential_samples
from .sequence import Acquisition, LoadingEvent, Segment, SequenceProgram

__all__ = ["RunConfig", "load_config", "parse_config", "parse_quantity"]

TWO_PI = 2.0 * math.pi

# unit -> (dimension, factor to SI)
UNITS = {
    "mHz": ("frequency", 1e-3), "Hz": ("frequency", 1.0), "kHz": ("frequency", 1e3),
    "MHz": ("frequency", 1e6), "GHz": ("frequency", 1e9),
    "s": ("time", 1.0), "ms": ("time", 1e-3), "us": ("time", 1e-6),
    "V": ("voltage", 1.0), "mV": ("voltage", 1e-3),
    "K": ("temperature", 1.0),
    "um": ("length", 1e-6), "mm": ("length", 1e-3),
    "dB": ("decibel", 1.0),
    "%": ("percent", 0.01),
    "1/s": ("rate", 1.0), "/s": ("rate", 1.0),
    "um^-2": ("inverse_area", 1.0),
    "um^-4": ("inverse_quartic", 1.0),
    "eV": ("energy", 1.0),
}

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QTY = re.compile(rf"^\s*({_NUM})\s*(\S*)\s*$")

# section -> key -> dimension ("count", "number", "text", "flag", or a unit dimension)
SCHEMA = {
    "trap": {
        "drive_frequency": "frequency",
        "reference_voltage": "voltage",
        "q_reference": "number",
        "secular_frequency": "frequency",
    },
    "potential": {
        "field_map": "text",
        "axis": "text",
        "fit_window": "length",
        "omega_z": "frequency",
        "c4": "inverse_area",
        "c6": "inverse_quartic",
        "broadening": "flag",
        "bins": "count",
        "temperature": "temperature",
    },
    "cavity": {
        "f0": "frequency",
        "q_internal": "number",
        "q_external": "number",
        "kappa": "frequency",
        "temperature": "temperature",
    },
    "coupling": {
        "g": "frequency",
        "intrinsic_damping": "rate",
        "heating_rate": "rate",
    },
    "chain": {"stage": "stage", "gain": "decibel"},
    "readout": {
        "rbw": "frequency",
        "thermal_share": "percent_or_number",
        "degradation": "percent_or_number",
    },
    "sequence": {
        "segment": "segment",
        "loading": "loading",
        "sample_interval": "time",
        "substeps": "count",
        "noise": "flag",
    },
    "analysis": {"fit_window": "window"},
    "run": {"seed": "count"},
}
REPEATABLE = {("chain", "stage"), ("sequence", "segment")}


def parse_quantity(text, dimension, where=None):
    """``'619 MHz'`` -> 619e6 (SI).  Raises ConfigError on missing or
    mismatched units."""
    line, path = where if where else (None, None)
    m = _QTY.match(text)
    if not m:
        raise ConfigError(f"cannot parse quantity {text.strip()!r}", line, path)
    value, unit = float(m.group(1)), m.group(2)
    if dimension == "number":
        if unit:
            raise ConfigError(f"dimensionless value takes no unit, got {unit!r}", line, path)
        return value
    if dimension == "percent_or_number":
        if not unit:
            return value
        if unit != "%":
            raise ConfigError(f"expected a fraction or %, got {unit!r}", line, path)
        return value * 0.01
    if not unit:
        raise ConfigError(f"missing unit (expected {dimension})", line, path)
    if unit not in UNITS:
        raise ConfigError(f"unknown unit {unit!r}", line, path)
    dim, factor = UNITS[unit]
    if dim != dimension:
        raise ConfigError(f"unit {unit!r} is a {dim}, expected {dimension}", line, path)
    return value * factor


def _count(text, where):
    t = text.strip()
    if not re.fullmatch(r"\d+", t):
        raise ConfigError(f"expected a non-negative integer, got {t!r}", *where)
    return int(t)


def _flag(text, where):
    t = text.strip().lower()
    if t in ("on", "true", "yes"):
        return True
    if t in ("off", "false", "no"):
        return False
    raise ConfigError(f"expected on/off, got {text.strip()!r}", *where)


def parse_config(text, path=None):
    """Parse config text into {section: {key: [(value, line), ...]}}."""
    out = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("malformed section header", lineno, path)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno, path)
            out.setdefault(section, {})
            continue
        if section is None:
            raise ConfigError("key outside of any section", lineno, path)
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, path)
        entries = out[section].setdefault(key, [])
        if entries and (section, key) not in REPEATABLE:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno, path)
        entries.append((value, lineno))
    return out


@dataclass
class RunConfig:
    drive: TrapDrive
    cavity: CavityMode
    coupling: CouplingParams
    chain: FilterChain
    program: Optional[SequenceProgram]
    seed: int
    potential: Optional[PotentialModel] = None
    broadening: bool = False
    broadening_bins: int = 64
    broadening_temperature: Optional[float] = None
    intrinsic_damping: float = 0.0
    heating_rate: float = 0.0
    thermal_share: float = 0.87
    degradation: float = 1.0
    substeps: int = 8
    noise: bool = True
    fit_window: Optional[tuple] = None
    digest: str = ""
    path: Optional[str] = None
    report: dict = field(default_factory=dict)

    def engine_kwargs(self):
        return dict(
            potential=self.potential if self.broadening else None,
            broadening_bins=self.broadening_bins,
            broadening_temperature=self.broadening_temperature,
            intrinsic_damping=self.intrinsic_damping,
            heating_rate=self.heating_rate,
            degradation=self.degradation,
            thermal_share=self.thermal_share,
            substeps=self.substeps,
            noise=self.noise,
            config_digest=self.digest,
        )


class _Section:
    def __init__(self, name, entries, path):
        self.name, self.entries, self.path = name, entries, path

    def where(self, key):
        return (self.entries[key][0][1], self.path)

    def has(self, key):
        return key in self.entries

    def raw(self, key):
        return self.entries[key][0][0]

    def get(self, key, default=None, required=False):
        if key not in self.entries:
            if required:
                raise ConfigError(f"[{self.name}] requires {key!r}", None, self.path)
            return default
        dim = SCHEMA[self.name][key]
        text, line = self.entries[key][0]
        where = (line, self.path)
        if dim == "count":
            return _count(text, where)
        if dim == "flag":
            return _flag(text, where)
        if dim == "text":
            return text
        if dim == "window":
            parts = [p for p in text.split(",")]
            if len(parts) != 2:
                raise ConfigError("window needs two times 'a s, b s'", *where)
            return tuple(parse_quantity(p, "time", where) for p in parts)
        return parse_quantity(text, dim, where)


def _amplitude(text, v_ref, where):
    m = _QTY.match(text)
    if m and m.group(2) == "%":
        return parse_quantity(text, "percent", where) * v_ref
    return parse_quantity(text, "voltage", where)


def _program(sec, v_ref, path):
    segs = []
    for text, line in sec.entries.get("segment", []):
        where = (line, path)
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ConfigError("segment needs 'start, end, amplitude[ -> target]'", *where)
        start = parse_quantity(parts[0], "time", where)
        end = parse_quantity(parts[1], "time", where)
        if "->" in parts[2]:
            a, b = parts[2].split("->", 1)
            amp, target = _amplitude(a, v_ref, where), _amplitude(b, v_ref, where)
        else:
            amp, target = _amplitude(parts[2], v_ref, where), None
        segs.append(Segment(start, end, amp, target))
    loading = None
    if sec.has("loading"):
        text = sec.raw("loading")
        where = sec.where("loading")
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise ConfigError("loading needs 'time, duration, count, temperature'", *where)
        loading = LoadingEvent(parse_quantity(parts[0], "time", where),
                               parse_quantity(parts[1], "time", where),
                               _count(parts[2], where),
                               parse_quantity(parts[3], "temperature", where))
    interval = sec.get("sample_interval", required=True)
    return segs, loading, interval


def load_config(path, seed: Optional[int] = None) -> RunConfig:
    """Read and validate a run config.  ``seed`` overrides ``[run] seed``."""
    p = Path(path)
    try:
        raw = p.read_bytes()
    except FileNotFoundError:
        raise ConfigError("file not found", None, str(p)) from None
    except OSError as exc:
        raise ConfigError(f"cannot read file: {exc.strerror}", None, str(p)) from None
    text = raw.decode("utf-8")
    ps = str(p)
    tree = parse_config(text, ps)
    sec = {name: _Section(name, tree.get(name, {}), ps) for name in SCHEMA}

    trap = sec["trap"]
    omega_drive = TWO_PI * trap.get("drive_frequency", required=True)
    v_ref = trap.get("reference_voltage", required=True)
    q_ref = trap.get("q_reference", required=True)
    f_sec = trap.get("secular_frequency")
    try:
        drive = TrapDrive.calibrated(omega_drive, v_ref, q_ref,
                                     None if f_sec is None else TWO_PI * f_sec)
    except EltrapError as exc:
        raise ConfigError(str(exc), trap.where("q_reference")[0], ps) from None

    cav = sec["cavity"]
    kappa = cav.get("kappa")
    try:
        cavity = CavityMode(TWO_PI * cav.get("f0", required=True),
                            cav.get("q_internal", required=True),
                            cav.get("q_external", math.inf),
                            cav.get("temperature", 300.0),
                            None if kappa is None else TWO_PI * kappa)
    except ValueError as exc:
        raise ConfigError(str(exc), None, ps) from None

    cp = sec["coupling"]
    coupling = CouplingParams(TWO_PI * cp.get("g", required=True))

    ch = sec["chain"]
    stages = []
    for text, line in ch.entries.get("stage", []):
        parts = [s.strip() for s in text.split(",")]
        if len(parts) not in (2, 3):
            raise ConfigError("stage needs 'name, suppression dB[, transmission dB]'", line, ps)
        supp = parse_quantity(parts[1], "decibel", (line, ps))
        trans = parse_quantity(parts[2], "decibel", (line, ps)) if len(parts) == 3 else 0.0
        stages.append(FilterStage(parts[0], supp, trans))
    chain = FilterChain(tuple(stages), ch.get("gain", 0.0))

    pot = sec["potential"]
    potential, report = None, {}
    if pot.has("field_map"):
        fmap = Path(pot.get("field_map"))
        if not fmap.is_absolute():
            fmap = p.parent / fmap
        samples = load_potential_samples(fmap, pot.get("axis", "z"))
        win = pot.get("fit_window")
        fit = fit_even_polynomial(samples, window=None if win is None else win * 1e6)
        potential = fit.model
        report["potential_fit"] = fit.to_dict()
    elif pot.has("omega_z") or pot.has("c4") or pot.has("c6"):
        w = pot.get("omega_z")
        potential = PotentialModel(drive.reference_secular_frequency if w is None else TWO_PI * w,
                                   pot.get("c4", 0.0), pot.get("c6", 0.0))

    rd = sec["readout"]
    sq = sec["sequence"]
    program = None
    if sq.entries:
        segs, loading, interval = _program(sq, v_ref, ps)
        rbw = rd.get("rbw", required=True)
        try:
            program = SequenceProgram(segs, Acquisition(interval, rbw), loading)
        except EltrapError as exc:
            raise ConfigError(str(exc).split("] ", 1)[-1], sq.where("sample_interval")[0], ps) from None

    an = sec["analysis"]
    run = sec["run"]
    cfg_seed = run.get("seed", 0)
    return RunConfig(
        drive=drive, cavity=cavity, coupling=coupling, chain=chain, program=program,
        seed=cfg_seed if seed is None else int(seed),
        potential=potential,
        broadening=pot.get("broadening", False),
        broadening_bins=pot.get("bins", 64),
        broadening_temperature=pot.get("temperature"),
        intrinsic_damping=cp.get("intrinsic_damping", 0.0),
        heating_rate=cp.get("heating_rate", 0.0),
        thermal_share=rd.get("thermal_share", 0.87),
        degradation=rd.get("degradation", 1.0),
        substeps=sq.get("substeps", 8),
        noise=sq.get("noise", True),
        fit_window=an.get("fit_window"),
        digest=hashlib.sha256(raw).hexdigest(),
        path=ps,
        report=report,
    )
