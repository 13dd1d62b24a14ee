"""Command-line front end.

    ioncrystal spectrum --n 6 --impurity 2 --alpha 0.1 --scan mass_ratio 0.3 1.6 200
    ioncrystal observables --n 15 --impurity 8 --mass-ratio 1.075 --ll-phonons 2
    ioncrystal sweep --n 6 --impurity 2 --mass-ratio 1.075 --alpha 0.1 --omega-s-max 0.8

Every command writes one table (CSV, or JSON with ``meta`` and ``data``) to
``--output`` or stdout.  Settings may also come from an INI file given with
``--config`` (sections ``[run]``, ``[trap]``, ``[schedule]``, ``[scan]``,
``[output]``) or from the ``meta`` block of an earlier JSON output; flags
override file values.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .crystal import TrapConfig, solve_equilibrium
from .exceptions import NumericalError
from .modes import asymptotic_freqs, spectrum
from .oracle import exact_observables
from .phonons import observables
from .sweep import (
    ADIABATIC_THRESHOLD, REFERENCE_OMEGA_X0, SweepSchedule, effective_mass_ratio,
    microseconds_to_time, observables_along_sweep, run_sweep,
)

log = logging.getLogger("ioncrystal")

COMMANDS = ("equilibrium", "spectrum", "observables", "sweep", "phase-diagram", "oracle-check")
SCAN_PARAMS = {"mass_ratio": "mu", "alpha": "alpha", "dipole_beta": "beta"}
TRAP_DEFAULTS = dict(n_ions=6, impurity_site=2, mass_ratio=1.0, alpha=0.1, dipole_beta=0.0, ll_phonons=0)
SCHEDULE_DEFAULTS = dict(omega_s_max=0.8, duration=None, duration_us=60.0, steps=2001, law="sqrt",
                         threshold=ADIABATIC_THRESHOLD)
ORACLE_TOL = 1e-6

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_ADIABATIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    trap: dict = field(default_factory=lambda: dict(TRAP_DEFAULTS))
    schedule: dict = field(default_factory=lambda: dict(SCHEDULE_DEFAULTS))
    scan: list = field(default_factory=list)
    output: str | None = None
    format: str = "csv"
    strict: bool = False
    cutoff: int | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        for s in self.scan:
            if s["param"] not in SCAN_PARAMS:
                raise UsageError(
                    f"scan parameter must be one of {sorted(SCAN_PARAMS)}, got {s['param']!r}"
                )
            if int(s["count"]) < 1:
                raise UsageError("scan count must be positive")
        if self.format not in ("csv", "json"):
            raise UsageError(f"unknown format {self.format!r}")

    def trap_config(self, **override) -> TrapConfig:
        try:
            return TrapConfig(**{**self.trap, **override})
        except (TypeError, ValueError) as exc:
            raise UsageError(str(exc)) from exc

    def sweep_schedule(self) -> SweepSchedule:
        sch = self.schedule
        duration = sch["duration"] if sch.get("duration") is not None else microseconds_to_time(sch["duration_us"])
        try:
            if sch.get("omega_s0") is not None:
                return SweepSchedule(float(sch["omega_s0"]), duration, int(sch["steps"]), sch["law"])
            return SweepSchedule.to_max(float(sch["omega_s_max"]), duration, int(sch["steps"]), sch["law"])
        except ValueError as exc:
            raise UsageError(str(exc)) from exc


# --- configuration ---------------------------------------------------------

_TRAP_TYPES = dict(n_ions=int, impurity_site=int, mass_ratio=float, alpha=float,
                   dipole_beta=float, ll_phonons=int)
_SCHEDULE_TYPES = dict(omega_s_max=float, omega_s0=float, duration=float, duration_us=float,
                       steps=int, law=str, threshold=float)


def _typed(section, types, where):
    out = {}
    for key, value in section.items():
        if key not in types:
            raise UsageError(f"unknown key {key!r} in [{where}]")
        try:
            out[key] = types[key](value) if value is not None else None
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {where}.{key}: {value!r}") from exc
    return out


def _parse_scan(items) -> list:
    """Scan axes from ``[scan]`` entries.

    Either ``param = min max count`` or any key holding one or more
    ``param min max count`` lines.
    """
    scans = []
    for key, text in items:
        for line in text.replace(";", "\n").splitlines():
            parts = line.split()
            if not parts:
                continue
            if len(parts) == 3:
                parts = [key] + parts
            if len(parts) != 4:
                raise UsageError(f"scan entries need 'param min max count', got {line!r}")
            try:
                scans.append(dict(param=parts[0], min=float(parts[1]), max=float(parts[2]),
                                  count=int(parts[3])))
            except ValueError as exc:
                raise UsageError(f"bad scan entry {line!r}") from exc
    return scans


def load_config_file(path: str) -> dict:
    """Read an INI run file or the ``meta`` block of a previous JSON output."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc

    if text.lstrip().startswith("{"):
        try:
            meta = json.loads(text)["meta"]["config"]
        except (ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"{path} is not an ioncrystal JSON output") from exc
        return {
            "command": meta.get("command"),
            "trap": _typed(meta.get("trap", {}), _TRAP_TYPES, "trap"),
            "schedule": _typed(meta.get("schedule", {}), _SCHEDULE_TYPES, "schedule"),
            "scan": list(meta.get("scan", [])),
            "format": meta.get("format"),
            "strict": meta.get("strict"),
            "cutoff": meta.get("cutoff"),
        }

    parser = configparser.ConfigParser()
    try:
        parser.read_string(text, source=str(p))
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config file {path}: {exc}") from exc
    out: dict = {}
    if parser.has_section("run"):
        run = dict(parser["run"])
        out["command"] = run.pop("command", None)
        if "strict" in run:
            out["strict"] = parser.getboolean("run", "strict")
            run.pop("strict")
        if "cutoff" in run:
            out["cutoff"] = int(run.pop("cutoff"))
        if run:
            raise UsageError(f"unknown keys in [run]: {sorted(run)}")
    if parser.has_section("trap"):
        out["trap"] = _typed(dict(parser["trap"]), _TRAP_TYPES, "trap")
    if parser.has_section("schedule"):
        out["schedule"] = _typed(dict(parser["schedule"]), _SCHEDULE_TYPES, "schedule")
    if parser.has_section("scan"):
        out["scan"] = _parse_scan(parser["scan"].items())
    if parser.has_section("output"):
        sec = parser["output"]
        out["output"] = sec.get("path")
        out["format"] = sec.get("format")
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ioncrystal", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run file or previous JSON output")
    g = common.add_argument_group("crystal")
    g.add_argument("--n", dest="n_ions", type=int, help="number of ions")
    g.add_argument("--impurity", dest="impurity_site", type=int, help="impurity position (1-based)")
    g.add_argument("--mass-ratio", dest="mass_ratio", type=float)
    g.add_argument("--alpha", type=float, help="axial / transverse trap frequency")
    g.add_argument("--beta", dest="dipole_beta", type=float, help="dipole trap frequency / transverse")
    g.add_argument("--ll-phonons", dest="ll_phonons", type=int)
    common.add_argument("--scan", action="append", nargs=4, metavar=("PARAM", "MIN", "MAX", "COUNT"),
                        help="grid over mass_ratio, alpha or dipole_beta (repeat for 2-D phase diagrams)")
    common.add_argument("--output", "-o", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--jobs", type=int, default=None, help="worker threads for scans")
    common.add_argument("-v", "--verbose", action="store_true")

    helps = {
        "equilibrium": "axial equilibrium positions",
        "spectrum": "transverse mode frequencies (and eigenvectors)",
        "observables": "local phonon mean / variance / correlation",
        "sweep": "optical dipole sweep through the transition",
        "phase-diagram": "phase labels and impurity observables on a grid",
        "oracle-check": "compare closed forms with the Fock-space oracle (N <= 4)",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "sweep":
            s = p.add_argument_group("schedule")
            s.add_argument("--omega-s-max", dest="omega_s_max", type=float)
            s.add_argument("--omega-s0", dest="omega_s0", type=float)
            s.add_argument("--duration", type=float, help="sweep time in 1/omega_x0")
            s.add_argument("--duration-us", dest="duration_us", type=float,
                           help="sweep time in microseconds (reference omega_x0)")
            s.add_argument("--steps", type=int)
            s.add_argument("--law", choices=("sqrt", "linear", "constant"))
            s.add_argument("--threshold", type=float, help="max allowed |S|/gap")
            s.add_argument("--strict", action="store_true", default=None,
                           help="exit 4 if the adiabatic check fails")
        if name == "oracle-check":
            p.add_argument("--cutoff", type=int)
    return ap


def resolve(args: argparse.Namespace) -> RunConfig:
    base = load_config_file(args.config) if args.config else {}
    if base.get("command") and base["command"] != args.command:
        log.info("config file command %s overridden by %s", base["command"], args.command)
    trap = {**TRAP_DEFAULTS, **base.get("trap", {})}
    for key in TRAP_DEFAULTS:
        if getattr(args, key, None) is not None:
            trap[key] = getattr(args, key)
    schedule = {**SCHEDULE_DEFAULTS, **base.get("schedule", {})}
    for key in list(SCHEDULE_DEFAULTS) + ["omega_s0"]:
        if getattr(args, key, None) is not None:
            schedule[key] = getattr(args, key)
    if getattr(args, "duration_us", None) is not None and getattr(args, "duration", None) is None:
        schedule["duration"] = None
    if getattr(args, "omega_s_max", None) is not None and getattr(args, "omega_s0", None) is None:
        schedule.pop("omega_s0", None)

    if args.scan:
        try:
            scan = [dict(param=p, min=float(a), max=float(b), count=int(c)) for p, a, b, c in args.scan]
        except ValueError as exc:
            raise UsageError(f"bad --scan values: {exc}") from exc
    else:
        scan = base.get("scan", [])
    return RunConfig(
        command=args.command,
        trap=trap,
        schedule=schedule,
        scan=scan,
        output=args.output if args.output is not None else base.get("output"),
        format=args.format or base.get("format") or "csv",
        strict=bool(args.strict if getattr(args, "strict", None) is not None else base.get("strict") or False),
        cutoff=getattr(args, "cutoff", None) if getattr(args, "cutoff", None) is not None else base.get("cutoff"),
    )


# --- table assembly --------------------------------------------------------

def _grid(scans: list) -> tuple[list, list]:
    axes = [np.linspace(s["min"], s["max"], int(s["count"])) for s in scans]
    names = [s["param"] for s in scans]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = [dict(zip(names, map(float, vals))) for vals in zip(*(m.ravel() for m in mesh))]
    return names, points


def _map(fn, items, jobs):
    if jobs is None or jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def cmd_equilibrium(cfg: RunConfig, jobs):
    eq = solve_equilibrium(cfg.trap_config().n_ions)
    cols = {"site": list(range(1, eq.n_ions + 1)), "u": eq.u.tolist()}
    return cols, {"residual": eq.residual, "iterations": eq.iterations}


def cmd_spectrum(cfg: RunConfig, jobs):
    base = cfg.trap_config()
    n = base.n_ions
    if not cfg.scan:
        sp = spectrum(base)
        cols = {"mode": list(range(1, n + 1)), "lambda": sp.lambdas.tolist(),
                "omega": sp.freqs.tolist(), "omega_asymptotic": asymptotic_freqs(base).tolist()}
        for j in range(n):
            cols[f"b_{j + 1}"] = sp.vectors[j].tolist()
        return cols, {}
    if len(cfg.scan) != 1:
        raise UsageError("spectrum takes a single --scan")
    names, points = _grid(cfg.scan)
    freqs = _map(lambda pt: spectrum(cfg.trap_config(**pt)).freqs, points, jobs)
    cols = {SCAN_PARAMS[names[0]]: [pt[names[0]] for pt in points]}
    for k in range(n):
        cols[f"omega_{k + 1}"] = [float(f[k]) for f in freqs]
    return cols, {}


def _obs_row(cfg, pt):
    c = cfg.trap_config(**pt)
    return c, observables(c)


def cmd_observables(cfg: RunConfig, jobs):
    base = cfg.trap_config()
    n = base.n_ions
    if not cfg.scan:
        obs = observables(base)
        cols = {"site": list(range(1, n + 1)), "mean": obs.mean.tolist(), "variance": obs.variance.tolist()}
        for j in range(n):
            cols[f"corr_{j + 1}"] = obs.correlation[:, j].tolist()
        meta = {"phase": obs.phase_label.value,
                "mu_eff": effective_mass_ratio(base.mass_ratio, base.dipole_beta),
                "total_mean": float(obs.mean.sum())}
        return cols, meta
    if len(cfg.scan) != 1:
        raise UsageError("observables takes a single --scan")
    names, points = _grid(cfg.scan)
    rows = _map(lambda pt: _obs_row(cfg, pt), points, jobs)
    cols = {SCAN_PARAMS[names[0]]: [pt[names[0]] for pt in points],
            "mu_eff": [effective_mass_ratio(c.mass_ratio, c.dipole_beta) for c, _ in rows],
            "phase": [o.phase_label.value for _, o in rows]}
    for j in range(n):
        cols[f"mean_{j + 1}"] = [float(o.mean[j]) for _, o in rows]
    for j in range(n):
        cols[f"variance_{j + 1}"] = [float(o.variance[j]) for _, o in rows]
    return cols, {}


def cmd_phase_diagram(cfg: RunConfig, jobs):
    scans = cfg.scan or [dict(param="mass_ratio", min=0.5, max=2.0, count=31)]
    if len(scans) > 2:
        raise UsageError("phase-diagram takes at most two --scan axes")
    names, points = _grid(scans)
    rows = _map(lambda pt: _obs_row(cfg, pt), points, jobs)
    cols = {SCAN_PARAMS[nm]: [pt[nm] for pt in points] for nm in names}
    cols["mu_eff"] = [effective_mass_ratio(c.mass_ratio, c.dipole_beta) for c, _ in rows]
    cols["phase"] = [o.phase_label.value for _, o in rows]
    cols["mean_impurity"] = [float(o.mean[c.impurity_index]) for c, o in rows]
    cols["variance_impurity"] = [float(o.variance[c.impurity_index]) for c, o in rows]
    cols["total_mean"] = [float(o.mean.sum()) for _, o in rows]
    cols["max_abs_offdiag_corr"] = [
        float(np.max(np.abs(o.correlation - np.diag(np.diag(o.correlation))))) for _, o in rows
    ]
    return cols, {}


def cmd_sweep(cfg: RunConfig, jobs):
    base = cfg.trap_config()
    schedule = cfg.sweep_schedule()
    result = run_sweep(base, schedule)
    along = observables_along_sweep(base, schedule, result, threshold=cfg.schedule["threshold"])
    n = base.n_ions
    freqs = result.freqs
    off = ~np.eye(n, dtype=bool)
    cols = {"t": result.times.tolist(), "omega_s": result.omega_s.tolist(), "mu_eff": result.mu_eff.tolist()}
    for k in range(n):
        cols[f"omega_{k + 1}"] = freqs[:, k].tolist()
    mean = along.mean
    for j in range(n):
        cols[f"mean_{j + 1}"] = mean[:, j].tolist()
    cols["max_abs_s"] = np.max(result.s_coupling[:, off], axis=1).tolist()
    cols["max_abs_r"] = np.max(result.r_coupling.reshape(len(result.times), -1), axis=1).tolist()
    cols["adiabatic_margin"] = result.adiabatic_margin.tolist()
    meta = {
        "transition_omega_s": result.transition_omega_s,
        "schedule_resolved": asdict(schedule),
        "time_unit": "1/omega_x0",
        "reference_omega_x0_rad_per_s": REFERENCE_OMEGA_X0,
        "duration_us": schedule.duration / (REFERENCE_OMEGA_X0 * 1e-6),
        "adiabatic": along.report.as_dict(),
        "warning": along.warning,
    }
    status = EXIT_ADIABATIC if (cfg.strict and not along.report.passed) else EXIT_OK
    return cols, meta, status


def cmd_oracle_check(cfg: RunConfig, jobs):
    base = cfg.trap_config()
    sp = spectrum(base)
    fast = observables(base, sp)
    exact = exact_observables(base, sp, cutoff=cfg.cutoff)
    n = base.n_ions
    diff = max(np.max(np.abs(fast.mean - exact.mean)), np.max(np.abs(fast.variance - exact.variance)),
               np.max(np.abs(fast.correlation - exact.correlation)))
    cols = {"site": list(range(1, n + 1)),
            "mean": fast.mean.tolist(), "mean_oracle": exact.mean.tolist(),
            "variance": fast.variance.tolist(), "variance_oracle": exact.variance.tolist(),
            "max_corr_diff": np.max(np.abs(fast.correlation - exact.correlation), axis=1).tolist()}
    meta = {"max_abs_diff": float(diff), "tolerance": ORACLE_TOL, "agree": bool(diff <= ORACLE_TOL)}
    return cols, meta, (EXIT_OK if diff <= ORACLE_TOL else EXIT_NUMERICAL)


HANDLERS = {
    "equilibrium": cmd_equilibrium,
    "spectrum": cmd_spectrum,
    "observables": cmd_observables,
    "sweep": cmd_sweep,
    "phase-diagram": cmd_phase_diagram,
    "oracle-check": cmd_oracle_check,
}


# --- writers ---------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def render_csv(columns: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns.keys())
    for row in zip(*columns.values()):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def render_json(meta: dict, columns: dict) -> str:
    return json.dumps(_jsonable({"meta": meta, "data": columns}), indent=1) + "\n"


def run(cfg: RunConfig, jobs: int | None = None) -> int:
    """Execute one resolved command and write its table."""
    out = HANDLERS[cfg.command](cfg, jobs)
    columns, extra = out[0], out[1]
    status = out[2] if len(out) > 2 else EXIT_OK
    config_dict = asdict(cfg)
    config_dict.pop("output")
    meta = {"tool": "ioncrystal", "version": __version__, "config": config_dict, **extra}
    text = render_json(meta, columns) if cfg.format == "json" else render_csv(columns)
    if cfg.output:
        Path(cfg.output).parent.mkdir(parents=True, exist_ok=True)
        with open(cfg.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for key in ("transition_omega_s", "phase", "max_abs_diff"):
        if extra.get(key) is not None:
            print(f"{key}: {extra[key]}", file=sys.stderr)
    return status


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return run(cfg, args.jobs)
    except UsageError as exc:
        print(f"ioncrystal {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"ioncrystal {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"ioncrystal {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
