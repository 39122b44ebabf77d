"""Command-line front end.

Configuration is a flat INI file::

    [run]
    case = bending_cantilever
    resolution = 6
    seed = 42
    threads = 1
    end_time = 1.5

    [damping]
    scheme = particle_split     ; explicit | particle_split | pairwise_split | none
    alpha = 0.2
    beta = 0.4                  ; or give eta directly

    [output]
    dir = out
    interval = 0.005
    snapshot_interval = 0.1

Command-line flags override values from the file.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, replace

from .cases import BUILTIN_CASES, CaseSpec, make_case
from .damping import EXPLICIT, NONE, PAIRWISE_SPLIT, PARTICLE_SPLIT, artificial_viscosity

log = logging.getLogger("sphrelax")

SCHEMA = {
    "run": {"case": str, "resolution": int, "seed": int, "threads": int, "end_time": float},
    "damping": {"scheme": str, "alpha": float, "beta": float, "eta": float},
    "output": {"dir": str, "interval": float, "snapshot_interval": float},
}

SCHEME_ALIASES = {
    "explicit": EXPLICIT,
    "particle": PARTICLE_SPLIT,
    "particle_split": PARTICLE_SPLIT,
    "pairwise": PAIRWISE_SPLIT,
    "pairwise_split": PAIRWISE_SPLIT,
    "none": NONE,
    "off": NONE,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    spec: CaseSpec
    threads: int = 1
    output_dir: str | None = None
    snapshot_interval: float | None = None
    end_time: float | None = None


def _line_of(path, section, key):
    """Best-effort line number of ``key`` inside ``[section]``."""
    current = None
    try:
        with open(path) as fh:
            for no, raw in enumerate(fh, 1):
                line = raw.strip()
                if line.startswith("[") and line.endswith("]"):
                    current = line[1:-1].strip()
                elif current == section and line.split("=", 1)[0].split(":", 1)[0].strip() == key:
                    return no
    except OSError:
        pass
    return None


def _convert(kind, raw, where):
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def read_config_file(path) -> dict:
    """Parse an INI file into ``{(section, key): value}`` with schema checks."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in cp.items(section):
            line = _line_of(path, section, key)
            where = f"{path}:{line}" if line else f"{path} [{section}]"
            if key not in SCHEMA[section]:
                raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
            out[(section, key)] = _convert(SCHEMA[section][key], raw, f"{where} ({section}.{key})")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sphrelax", description="TLSPH solid solver with random-choice damping")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a benchmark case")
    r.add_argument("--config", help="INI configuration file")
    r.add_argument("--case", choices=sorted(BUILTIN_CASES))
    r.add_argument("--resolution", type=int)
    r.add_argument("--damping", dest="scheme", help="damping scheme")
    r.add_argument("--alpha", type=float)
    r.add_argument("--beta", type=float)
    r.add_argument("--eta", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--end-time", dest="end_time", type=float)
    r.add_argument("--output-dir", dest="dir")
    r.add_argument("--output-interval", dest="interval", type=float)
    r.add_argument("--snapshot-interval", dest="snapshot_interval", type=float)
    r.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("list-cases", help="list built-in cases")
    return p


def _flag_values(args) -> dict:
    out = {}
    for section, keys in SCHEMA.items():
        for key in keys:
            val = getattr(args, key, None)
            if val is not None:
                out[(section, key)] = val
    return out


def resolve(values: dict) -> RunConfig:
    """Turn merged ``{(section, key): value}`` into a runnable configuration."""
    case = values.get(("run", "case"))
    if not case:
        raise ConfigError("missing case name (run.case / --case)")
    if case not in BUILTIN_CASES:
        raise ConfigError(f"unknown case {case!r}; available: {', '.join(sorted(BUILTIN_CASES))}")
    damping = {}
    if ("damping", "scheme") in values:
        name = values[("damping", "scheme")].strip().lower()
        if name not in SCHEME_ALIASES:
            raise ConfigError(f"damping.scheme: unknown scheme {name!r}; choose from {sorted(SCHEME_ALIASES)}")
        damping["scheme"] = SCHEME_ALIASES[name]
    if ("damping", "alpha") in values:
        alpha = values[("damping", "alpha")]
        if not (0.0 < alpha <= 1.0) or math.isnan(alpha):
            raise ConfigError(f"damping.alpha must lie in (0, 1], got {alpha}")
        damping["alpha"] = alpha
    if ("run", "seed") in values:
        damping["seed"] = values[("run", "seed")]
    resolution = values.get(("run", "resolution"))
    if resolution is not None and resolution < 1:
        raise ConfigError(f"run.resolution must be a positive integer, got {resolution}")
    try:
        spec = make_case(case, resolution, **damping)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if ("damping", "eta") in values and ("damping", "beta") in values:
        raise ConfigError("give either damping.eta or damping.beta, not both")
    if ("damping", "eta") in values:
        eta = values[("damping", "eta")]
        if eta < 0.0:
            raise ConfigError(f"damping.eta must be non-negative, got {eta}")
        spec = spec.with_damping(eta=eta)
    elif ("damping", "beta") in values:
        beta = values[("damping", "beta")]
        if beta < 0.0:
            raise ConfigError(f"damping.beta must be non-negative, got {beta}")
        L = spec.damping.L
        spec = spec.with_damping(beta=beta, eta=artificial_viscosity(beta, spec.material.rho0, spec.material.E, L))
    interval = values.get(("output", "interval"))
    if interval is not None:
        if not interval > 0.0:
            raise ConfigError(f"output.interval must be positive, got {interval}")
        spec = replace(spec, output_interval=interval)
    end_time = values.get(("run", "end_time"))
    if end_time is not None and end_time < 0.0:
        raise ConfigError(f"run.end_time must be non-negative, got {end_time}")
    threads = values.get(("run", "threads"), 1)
    if threads < 1:
        raise ConfigError(f"run.threads must be >= 1, got {threads}")
    return RunConfig(
        spec=spec,
        threads=threads,
        output_dir=values.get(("output", "dir")),
        snapshot_interval=values.get(("output", "snapshot_interval")),
        end_time=end_time,
    )


def parse_config(path=None, argv=None) -> RunConfig:
    """Merge an optional config file with ``run`` flags; flags win."""
    values = {}
    args = None
    if argv is not None:
        args = build_parser().parse_args(["run", *argv])
        path = args.config if args.config else path
    if path is not None:
        values.update(read_config_file(path))
    if args is not None:
        values.update(_flag_values(args))
    return resolve(values)


def _set_threads(n):
    import numba

    avail = numba.config.NUMBA_NUM_THREADS
    if n > avail:
        log.warning("requested %d threads but only %d available (set NUMBA_NUM_THREADS)", n, avail)
        n = avail
    numba.set_num_threads(n)
    return n


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "list-cases":
        for name in sorted(BUILTIN_CASES):
            print(name)
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        values = read_config_file(args.config) if args.config else {}
        values.update(_flag_values(args))
        cfg = resolve(values)
    except ConfigError as exc:
        print(f"sphrelax: configuration error: {exc}", file=sys.stderr)
        return 2

    from .simulation import SolverFailure, run

    threads = _set_threads(cfg.threads)
    try:
        sim, report = run(
            cfg.spec,
            output_dir=cfg.output_dir,
            parallel=threads > 1,
            snapshot_interval=cfg.snapshot_interval,
            end_time=cfg.end_time,
        )
    except SolverFailure as exc:
        print(f"sphrelax: solver failure at step {exc.step}, particle {exc.particle}: {exc}", file=sys.stderr)
        return 3
    report.threads = threads
    summary = report.as_dict()
    if cfg.output_dir:
        with open(os.path.join(cfg.output_dir, "report.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
