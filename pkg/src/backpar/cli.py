"""Command-line interface: ``backpar {forward,invert,mise,illposed,validate}``.

Runs are described by an INI file, for example::

    [case]
    preset = gl3
    T = 1.0

    [method]
    name = truncation, qr-clipped

    [noise]
    deltas = 1e-2, 1e-3, 1e-4
    trials = 200
    seed = 20240601

Every key is validated before any computation; unknown sections or keys are
rejected with the offending name.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (METHODS, MethodSettings, emit_illposed, emit_report, illposed_demo,
                          manufacture, run_mise, MISEReport, _Method, resolve_threads)
from .sources import cube_root, fisher_kpp, ginzburg_landau, linear, zero

SOURCES = {
    "zero": zero,
    "linear": linear,
    "ginzburg-landau": ginzburg_landau,
    "fisher-kpp": fisher_kpp,
    "cube-root": cube_root,
}

PRESETS = {
    "gl3": {"source": "ginzburg-landau", "u0": [0.5, 0.1, 0.025]},
    "cube-root3": {"source": "cube-root", "u0": [2.0, 0.2, 0.05]},
    "heat": {"source": "zero", "u0": [1.0]},
}


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_SETTINGS_TYPES = {f.name: f.type for f in fields(MethodSettings)}


def _setting_parser(name):
    kind = _SETTINGS_TYPES[name]
    if "bool" in str(kind):
        return _bool
    if "int" in str(kind):
        return int
    return float


SCHEMA: dict[str, dict[str, tuple]] = {
    "domain": {"d": (int, 1), "n": (int, 128), "modes": (int, 32), "lengths": (_floats, None)},
    "case": {"preset": (str, None), "name": (str, None), "source": (str, None), "u0": (_floats, None),
             "a": (float, 1.0), "T": (float, None), "steps": (int, 4000), "gamma": (float, 1.0)},
    "method": {"name": (str, "truncation"),
               **{k: (_setting_parser(k), None) for k in _SETTINGS_TYPES}},
    "noise": {"deltas": (_floats, [1e-2, 1e-3, 1e-4]), "delta": (float, None),
              "trials": (int, 200), "seed": (int, 0), "t_list": (_floats, None)},
    "illposed": {"deltas": (_floats, [1e-1, 1e-2, 1e-3]), "trials": (int, 1000)},
    "output": {"dir": (str, "backpar-out")},
}


@dataclass
class RunConfig:
    values: dict[str, dict]
    source_path: str | None = None

    def get(self, section, key):
        return self.values[section][key]


def load_config(path: str | None) -> RunConfig:
    """Parse and validate; missing keys take the defaults in :data:`SCHEMA`."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    values = {s: {k: default for k, (_, default) in keys.items()} for s, keys in SCHEMA.items()}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]; expected one of {', '.join(SCHEMA)}")
        for key, raw in cp[section].items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
            parse = SCHEMA[section][key][0]
            try:
                values[section][key] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"invalid value for '{key}' in [{section}]: {raw!r} ({exc})") from exc
    return RunConfig(values, path)


def _validate(cfg: RunConfig, need_T: bool = True) -> None:
    case = cfg.values["case"]
    if need_T and case["T"] is None:
        raise ConfigError("missing required key 'T' in [case]")
    if case["T"] is not None and not case["T"] > 0:
        raise ConfigError(f"'T' in [case] must be positive, got {case['T']}")
    preset = case["preset"]
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset '{preset}' in [case]; valid presets: {', '.join(PRESETS)}")
    source = case["source"] or (PRESETS[preset]["source"] if preset else None)
    if source is None:
        raise ConfigError("missing key 'source' in [case] (or set 'preset')")
    if source not in SOURCES:
        raise ConfigError(f"unknown source '{source}' in [case]; valid sources: {', '.join(SOURCES)}")
    if case["u0"] is None and preset is None:
        raise ConfigError("missing key 'u0' in [case] (or set 'preset')")
    for m in _methods(cfg):
        if m not in METHODS:
            raise ConfigError(f"unknown method '{m}'; valid methods: {', '.join(METHODS)}")
    noise = cfg.values["noise"]
    if noise["trials"] < 1:
        raise ConfigError(f"'trials' must be >= 1, got {noise['trials']}")
    if cfg.values["illposed"]["trials"] < 2:
        raise ConfigError("'trials' in [illposed] must be >= 2")
    for d in noise["deltas"]:
        if not 0 < d < 1:
            raise ConfigError(f"'deltas' entries must lie in (0, 1), got {d}")
    if cfg.values["domain"]["d"] not in (1, 2):
        raise ConfigError(f"'d' in [domain] must be 1 or 2, got {cfg.values['domain']['d']}")


def _methods(cfg: RunConfig) -> list[str]:
    return [m.strip() for m in cfg.values["method"]["name"].split(",") if m.strip()]


def _settings(cfg: RunConfig) -> MethodSettings:
    over = {k: v for k, v in cfg.values["method"].items() if k != "name" and v is not None}
    return replace(MethodSettings(), **over)


def _case(cfg: RunConfig):
    c = cfg.values["case"]
    dom = cfg.values["domain"]
    preset = PRESETS.get(c["preset"], {})
    source = SOURCES[c["source"] or preset["source"]]()
    u0 = c["u0"] if c["u0"] is not None else preset["u0"]
    name = c["name"] or c["preset"] or "custom"
    if dom["lengths"] is not None:
        raise ConfigError("'lengths' in [domain] other than pi are not supported by manufactured cases")
    return manufacture(name, u0, source, T=c["T"], a=c["a"], d=dom["d"], modes=dom["modes"],
                       n=dom["n"], steps=c["steps"], gamma=c["gamma"])


def _t_list(cfg: RunConfig) -> list[float]:
    T = cfg.values["case"]["T"]
    tl = cfg.values["noise"]["t_list"]
    return [T / 4, T / 2, 3 * T / 4] if tl is None else tl


def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(args.out or cfg.values["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _header_lines(cfg: RunConfig, args) -> list[str]:
    lines = [f"# backpar {__version__} {args.command}"]
    for section, vals in cfg.values.items():
        for k, v in vals.items():
            lines.append(f"# [{section}] {k} = {v}")
    return lines


def _write_trajectory(path: Path, times, coeffs, header: list[str]) -> None:
    buf = io.StringIO()
    buf.write("\n".join(header) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"c{j + 1}" for j in range(coeffs.shape[1])])
    for t, row in zip(times, coeffs):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    path.write_text(buf.getvalue())


# -- commands --------------------------------------------------------------

def cmd_forward(cfg: RunConfig, args) -> int:
    _validate(cfg)
    case = _case(cfg)
    out = _out_dir(cfg, args)
    header = _header_lines(cfg, args)
    lam = case.basis.eigenvalues
    buf = io.StringIO()
    buf.write("\n".join(header) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "lambda", "g"])
    for j, (l, v) in enumerate(zip(lam, case.g.coeffs), 1):
        w.writerow([j, repr(float(l)), repr(float(v))])
    (out / "g.csv").write_text(buf.getvalue())
    _write_trajectory(out / "trajectory.csv", case.reference.times, case.reference.coeffs, header)
    print(f"forward: wrote {out / 'g.csv'} and {out / 'trajectory.csv'}")
    print(f"  |g| = {float(np.linalg.norm(case.g.coeffs)):.6e}")
    return 0


def cmd_invert(cfg: RunConfig, args) -> int:
    _validate(cfg)
    methods = _methods(cfg)
    if len(methods) != 1:
        raise ConfigError("'name' in [method] must name exactly one method for invert")
    method = methods[0]
    noise = cfg.values["noise"]
    delta = noise["delta"] if noise["delta"] is not None else noise["deltas"][0]
    if not 0 < delta < 1:
        raise ConfigError(f"'delta' in [noise] must lie in (0, 1), got {delta}")
    case = _case(cfg)
    m = _Method(case, method, delta, _settings(cfg))
    t_list = _t_list(cfg)
    errs = m.run(0, args.seed if args.seed is not None else noise["seed"], t_list)
    out = _out_dir(cfg, args)
    lines = _header_lines(cfg, args)
    lines.append(f"method = {method}")
    lines.append(f"delta = {delta!r}")
    for k, v in m.params.items():
        lines.append(f"{k} = {v!r}")
    for t, e in zip(t_list, errs):
        lines.append(f"error_sq(t={t!r}) = {e!r}")
    (out / "invert.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines[len(_header_lines(cfg, args)):]))
    return 0


def cmd_mise(cfg: RunConfig, args) -> int:
    _validate(cfg)
    noise = cfg.values["noise"]
    trials = noise["trials"]
    seed = args.seed if args.seed is not None else noise["seed"]
    case = _case(cfg)
    settings = _settings(cfg)
    report = MISEReport()
    for method in _methods(cfg):
        report.extend(run_mise(case, method, noise["deltas"], _t_list(cfg), trials, seed,
                               settings, threads=args.threads))
    report.header["config"] = cfg.source_path or "(defaults)"
    csv_path, txt_path = emit_report(report, _out_dir(cfg, args) / "mise.csv")
    print(txt_path.read_text(), end="")
    flagged = report.flagged()
    if flagged:
        print(f"mise: {len(flagged)} group(s) had more than 10% failed trials", file=sys.stderr)
        return 1
    return 0


def cmd_illposed(cfg: RunConfig, args) -> int:
    _validate(cfg)
    ill = cfg.values["illposed"]
    T = cfg.values["case"]["T"]
    seed = args.seed if args.seed is not None else cfg.values["noise"]["seed"]
    rows = illposed_demo(T, ill["deltas"], ill["trials"], seed, threads=args.threads)
    path = emit_illposed(rows, _out_dir(cfg, args) / "illposed.csv")
    print(f"{'delta':>8} {'N':>3} {'E|G|^2':>11} {'d^2 N':>11} {'E sup|V|^2':>12} "
          f"{'(2/5)/d':>9} {'(2/5)d^2e^(2TN^2)':>18}")
    for r in rows:
        if r.note:
            print(f"{r.delta:>8.1e}  {r.note}")
            continue
        print(f"{r.delta:>8.1e} {r.N:>3d} {r.data_mean:>11.4e} {r.data_pred:>11.4e} "
              f"{r.energy_mean:>12.4e} {r.energy_target:>9.3g} {r.energy_bound:>18.4e}")
    print(f"illposed: wrote {path}")
    return 0


def cmd_validate(cfg: RunConfig, args) -> int:
    from .validation import run_all
    checks = run_all()
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    return 0 if all(c.passed for c in checks) else 1


COMMANDS = {"forward": cmd_forward, "invert": cmd_invert, "mise": cmd_mise,
            "illposed": cmd_illposed, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="backpar", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"backpar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="INI run description")
        p.add_argument("--seed", type=int, help="overrides [noise] seed")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--trials", type=int, help="overrides [noise] trials")
        p.add_argument("--threads", type=int, help="worker threads (default: $BACKPAR_THREADS or 1)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.trials is not None:
            cfg.values["noise"]["trials"] = args.trials
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError(f"--seed must be an unsigned 64-bit value, got {args.seed}")
        args.threads = resolve_threads(args.threads)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"backpar: config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"backpar: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
