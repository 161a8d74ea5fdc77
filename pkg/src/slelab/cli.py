"""Command-line entry point.

``slelab <command> [--config FILE] [--seed N] [--threads N] [--out DIR] ...``

The config file is TOML: global keys ``seed``, ``threads``, ``output_dir``
at the top level and one table per command holding that command's keys.
Every key is checked against the command schema before anything runs;
unknown keys and wrong types are usage errors (exit 2).  Command-line
flags override config values.  Each command prints one summary line per
check, writes a JSON report to the output directory and exits 0 iff all
checks pass.  Numerical failures exit 1 after writing ``error.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import loewner as lw
from . import observables as ob
from . import verify as vf
from .charges import Divisor
from .driver import DriftMode, DrivingConfig, ForcePointSwallowed, generate_path, simulate_batch
from .partition import Geometry, SleParams, bpz_cardy_residual, null_vector_residual

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

COMMANDS = (
    "check-coulomb",
    "check-nullvector",
    "check-bpz-cardy",
    "simulate",
    "verify-martingale",
    "verify-exponent",
    "verify-restriction",
    "virasoro-recursion",
    "export",
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    """Malformed configuration; reported as a usage error."""


# ---------------------------------------------------------------------------
# schema


def _float(v: Any) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _int(v: Any) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return int(v)


def _str(v: Any) -> str:
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _bool(v: Any) -> bool:
    if not isinstance(v, bool):
        raise TypeError("expected true or false")
    return v


def _floats(v: Any) -> list[float]:
    if not isinstance(v, list):
        raise TypeError("expected a list of numbers")
    return [_float(x) for x in v]


def _complex(v: Any) -> complex:
    if isinstance(v, dict):
        extra = set(v) - {"re", "im"}
        if extra:
            raise TypeError(f"unknown keys {sorted(extra)} in complex record")
        return complex(_float(v.get("re", 0.0)), _float(v.get("im", 0.0)))
    if isinstance(v, list) and len(v) == 2:
        return complex(_float(v[0]), _float(v[1]))
    return complex(_float(v))


def _complexes(v: Any) -> list[complex]:
    if not isinstance(v, list):
        raise TypeError("expected a list of points")
    return [_complex(x) for x in v]


_DIVISOR_ENTRY_KEYS = {"re", "im", "at_infinity", "side", "charge_re", "charge_im"}


def _divisor(v: Any) -> Divisor:
    if not isinstance(v, dict):
        raise TypeError("expected a divisor record {b, entries}")
    extra = set(v) - {"b", "entries"}
    if extra:
        raise TypeError(f"unknown keys {sorted(extra)} in divisor record")
    for e in v.get("entries", []):
        if not isinstance(e, dict) or set(e) - _DIVISOR_ENTRY_KEYS:
            raise TypeError("divisor entries take re, im, at_infinity, side, charge_re, charge_im")
    return Divisor.from_record(v)


_OBS_KEYS = {"kind", "point", "kappa", "h", "tau_plus", "tau_minus", "tauq_plus", "tauq_minus"}


def _observables(v: Any) -> list[dict[str, Any]]:
    if not isinstance(v, list):
        raise TypeError("expected a list of observable records")
    out = []
    for rec in v:
        if not isinstance(rec, dict) or "kind" not in rec:
            raise TypeError("each observable record needs a kind")
        extra = set(rec) - _OBS_KEYS
        if extra:
            raise TypeError(f"unknown keys {sorted(extra)} in observable record")
        if rec["kind"] not in ob.ObservableSpec.KINDS:
            raise TypeError(f"unknown observable kind {rec['kind']!r}")
        out.append(dict(rec))
    return out


REQUIRED = object()


@dataclass(frozen=True)
class Key:
    parse: Callable[[Any], Any]
    default: Any = None
    help: str = ""


SCHEMAS: dict[str, dict[str, Key]] = {
    "check-coulomb": {
        "random": Key(_int, 500, "number of random divisor/Moebius pairs"),
        "tol": Key(_float, 1e-9),
    },
    "check-nullvector": {
        "n": Key(_int, 200, "random configurations per kappa cycle"),
        "kappas": Key(_floats, [2.0, 8 / 3, 4.0, 6.0]),
        "tol": Key(_float, 1e-7),
        "control_tol": Key(_float, 1e-3),
        "background": Key(_divisor, None, "explicit background (seed excluded)"),
        "x": Key(_float, 0.0, "seed position for an explicit background"),
        "kappa": Key(_float, 4.0),
        "geometry": Key(_str, "chordal"),
        "direction": Key(_str, "forward"),
    },
    "check-bpz-cardy": {
        "n": Key(_int, 200),
        "kappas": Key(_floats, [2.0, 8 / 3, 4.0, 6.0]),
        "tol": Key(_float, 1e-7),
        "control_tol": Key(_float, 1e-3),
        "background": Key(_divisor, None),
        "tau": Key(_divisor, None, "explicit neutral insertion divisor"),
        "x": Key(_float, 0.0),
        "kappa": Key(_float, 4.0),
        "geometry": Key(_str, "chordal"),
        "direction": Key(_str, "forward"),
    },
    "simulate": {
        "kappa": Key(_float, 4.0),
        "geometry": Key(_str, "chordal"),
        "direction": Key(_str, "forward"),
        "drift_mode": Key(_str, "standard"),
        "force_points": Key(_floats, []),
        "rho": Key(_floats, []),
        "eta": Key(_float, 0.0),
        "beta": Key(_divisor, None, "background charge for partition_gradient mode"),
        "dt": Key(_float, 1e-3),
        "t_end": Key(_float, 1.0),
        "n_paths": Key(_int, 1),
        "points": Key(_complexes, [complex(0.5, 1.0)]),
        "observables": Key(_observables, []),
        "refine": Key(_bool, None, "bridge refinement (default on except for partition_gradient)"),
    },
    "verify-martingale": {
        "observable": Key(_str, "schramm_sheffield"),
        "kappa": Key(_float, None, "kappa inside the observable"),
        "process_kappa": Key(_float, None, "kappa of the simulated process (defaults to kappa)"),
        "z": Key(_complex, None),
        "checkpoints": Key(_floats, list(vf.DEFAULT_CHECKPOINTS)),
        "n_paths": Key(_int, vf.DEFAULT_PATHS),
        "dt": Key(_float, 1e-4),
        "rel_tol": Key(_float, vf.DEFAULT_REL_TOL),
        "r_stop": Key(_float, None),
        "h": Key(_float, 0.0),
        "tau_plus": Key(_complex, None),
        "tau_minus": Key(_complex, None),
        "tauq_plus": Key(_complex, None),
        "tauq_minus": Key(_complex, None),
    },
    "verify-exponent": {
        "kappa": Key(_float, 6.0),
        "h": Key(_float, 0.0),
        "theta": Key(_float, math.pi / 2),
        "t_grid": Key(_floats, [1.0, 2.0, 3.0, 4.0]),
        "n_paths": Key(_int, 100_000),
        "dt": Key(_float, 1e-2),
        "rel_tol": Key(_float, 0.1),
    },
    "verify-restriction": {
        "kappa": Key(_float, 8 / 3),
        "x0": Key(_float, 1.0),
        "h": Key(_float, 0.3),
        "n_paths": Key(_int, 200_000),
        "dt": Key(_float, 1e-3),
        "t_end": Key(_float, 1.0),
        "rel_tol": Key(_float, 0.05),
    },
    "virasoro-recursion": {
        "angles": Key(_floats, REQUIRED),
        "kappa": Key(_float, 8 / 3),
        "tol": Key(_float, 1e-12),
    },
    "export": {
        "report": Key(_str, REQUIRED, "JSON report to flatten"),
        "csv": Key(_str, None, "output CSV (default: report path with .csv)"),
    },
}

GLOBAL_SCHEMA: dict[str, Key] = {
    "seed": Key(_int, 0),
    "threads": Key(_int, 1),
    "output_dir": Key(_str, "slelab-out"),
}


@dataclass
class RunConfig:
    """Validated parameters of one command plus the global settings."""

    command: str
    params: dict[str, Any]
    seed: int = 0
    threads: int = 1
    output_dir: Path = field(default_factory=lambda: Path("slelab-out"))

    def record(self) -> dict[str, Any]:
        return {"command": self.command, "seed": self.seed, "threads": self.threads,
                "params": _jsonable(self.params)}


def _parse_table(table: dict[str, Any], schema: dict[str, Key], where: str) -> dict[str, Any]:
    out = {}
    for k, v in table.items():
        if k not in schema:
            raise ConfigError(f"unknown key {k!r} in {where}")
        try:
            out[k] = schema[k].parse(v)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{where}.{k}: {e}") from None
    return out


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Parse and validate a config file; returns ``{global key: value, command: {...}}``."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"malformed config: {e}") from None
    out: dict[str, Any] = {}
    for k, v in raw.items():
        if k in GLOBAL_SCHEMA:
            out.update(_parse_table({k: v}, GLOBAL_SCHEMA, "config"))
        elif k in SCHEMAS:
            if not isinstance(v, dict):
                raise ConfigError(f"[{k}] must be a table")
            out[k] = _parse_table(v, SCHEMAS[k], f"[{k}]")
        else:
            raise ConfigError(f"unknown key {k!r} in config")
    return out


def build_run_config(command: str, file_cfg: dict[str, Any], overrides: dict[str, Any],
                     global_overrides: dict[str, Any]) -> RunConfig:
    schema = SCHEMAS[command]
    params = {k: key.default for k, key in schema.items()}
    params.update(file_cfg.get(command, {}))
    params.update(_parse_table({k: v for k, v in overrides.items() if v is not None}, schema, "flags"))
    missing = [k for k, v in params.items() if v is REQUIRED]
    if missing:
        raise ConfigError(f"{command} needs {', '.join(missing)}")
    g = {k: key.default for k, key in GLOBAL_SCHEMA.items()}
    g.update({k: file_cfg[k] for k in GLOBAL_SCHEMA if k in file_cfg})
    g.update({k: v for k, v in global_overrides.items() if v is not None})
    if g["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    return RunConfig(command, params, g["seed"], g["threads"], Path(g["output_dir"]))


# ---------------------------------------------------------------------------
# helpers


def _jsonable(x: Any) -> Any:
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    if isinstance(x, Divisor):
        return x.to_record()
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def write_json(path: Path, payload: dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _params(kappa: float, direction: str) -> SleParams:
    if direction == "forward":
        return SleParams.forward(kappa)
    if direction == "backward":
        return SleParams.backward(kappa)
    raise ConfigError(f"direction must be forward or backward, got {direction!r}")


def _geometry(name: str) -> Geometry:
    try:
        return Geometry(name)
    except ValueError:
        raise ConfigError(f"geometry must be chordal or radial, got {name!r}") from None


def _finish(cfg: RunConfig, lines: Sequence[str], passed: bool, payload: dict[str, Any]) -> int:
    for line in lines:
        print(line)
    write_json(cfg.output_dir / f"{cfg.command}.json", {"config": cfg.record(), "pass": passed, **payload})
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# commands


def cmd_check_coulomb(cfg: RunConfig) -> int:
    p = cfg.params
    res = vf.moebius_suite(p["random"], cfg.seed, p["tol"])
    return _finish(cfg, [res.line()], res.passed, {"result": res.to_record()})


def _explicit_residual(cfg: RunConfig, fn: Callable[..., float], *divs: Divisor) -> int:
    p = cfg.params
    params = _params(p["kappa"], p["direction"])
    geom = _geometry(p["geometry"])
    r = float(fn(*divs, p["x"], params, geom))
    ok = r < p["tol"]
    line = f"{'PASS' if ok else 'FAIL'} {cfg.command}: residual={r:.3e} (tol {p['tol']:g})"
    return _finish(cfg, [line], ok, {"residual": r})


def cmd_check_nullvector(cfg: RunConfig) -> int:
    p = cfg.params
    if p["background"] is not None:
        return _explicit_residual(cfg, null_vector_residual, p["background"])
    res = vf.nullvector_suite(p["n"], cfg.seed, p["kappas"], p["tol"], p["control_tol"])
    return _finish(cfg, [res.line()], res.passed, {"result": res.to_record()})


def cmd_check_bpz_cardy(cfg: RunConfig) -> int:
    p = cfg.params
    if (p["background"] is None) != (p["tau"] is None):
        raise ConfigError("an explicit BPZ check needs both background and tau")
    if p["background"] is not None:
        return _explicit_residual(cfg, bpz_cardy_residual, p["background"], p["tau"])
    res = vf.bpz_suite(p["n"], cfg.seed, p["kappas"], p["tol"], p["control_tol"])
    return _finish(cfg, [res.line()], res.passed, {"result": res.to_record()})


def _spec_from_record(rec: dict[str, Any], default_kappa: float, direction: str) -> ob.ObservableSpec:
    kappa = float(rec.get("kappa", default_kappa))
    params = _params(kappa, "backward" if rec["kind"] == "sheffield_neumann" else direction)
    opts: dict[str, Any] = {}
    if "h" in rec:
        opts["h"] = float(rec["h"])
    if rec["kind"] == "vertex_1pt":
        try:
            opts.update({k: _complex(rec[k]) for k in ("tau_plus", "tau_minus", "tauq_plus", "tauq_minus")})
        except KeyError as e:
            raise ConfigError(f"vertex_1pt needs {e.args[0]}") from None
    return ob.ObservableSpec(rec["kind"], params, opts)


def cmd_simulate(cfg: RunConfig) -> int:
    p = cfg.params
    params = _params(p["kappa"], p["direction"])
    geom = _geometry(p["geometry"])
    try:
        mode = DriftMode(p["drift_mode"])
    except ValueError:
        raise ConfigError(f"unknown drift_mode {p['drift_mode']!r}") from None
    refine = p["refine"] if p["refine"] is not None else mode is not DriftMode.PARTITION_GRADIENT
    try:
        dcfg = DrivingConfig(params, geom, mode, seed=cfg.seed, dt=p["dt"], t_end=p["t_end"],
                             force_points=p["force_points"], rho=p["rho"], eta=p["eta"], beta=p["beta"],
                             refine=refine)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    specs = []
    for rec in p["observables"]:
        idx = int(rec.get("point", 0))
        if not 0 <= idx < len(p["points"]):
            raise ConfigError(f"observable point index {idx} out of range")
        specs.append((f"{rec['kind']}_p{idx}", idx, _spec_from_record(rec, p["kappa"], p["direction"])))
    geo_code = lw.RADIAL if geom is Geometry.RADIAL else lw.CHORDAL
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for k in range(p["n_paths"]):
        path = generate_path(dcfg, p["points"], k)
        nf = path.n_force
        ob.check_phase_continuity(path.y[:, :, lw.Y_LOG_G1])
        if geom is Geometry.RADIAL:
            ob.check_phase_continuity(path.y[:, nf:, lw.Y_LOG_G])
        extra = {}
        for name, idx, spec in specs:
            y = path.y[:, nf + idx]
            pd = ob.PointData.from_batch(geo_code, y, path.driving, path.times)
            with np.errstate(all="ignore"):
                vals = np.asarray(spec(pd), dtype=complex)
            vals = np.where(path.alive[:, nf + idx], vals, np.nan)
            extra[name] = vals if np.any(vals.imag != 0) else vals.real
        labels = [f"f{i}" for i in range(nf)] + [f"p{i}" for i in range(len(p["points"]))]
        out = cfg.output_dir / f"path_{k:05d}.csv"
        lw.write_path_csv(out, path.times, path.driving, path.y, path.alive, labels, extra)
        files.append(str(out))
    line = f"PASS simulate: {p['n_paths']} path(s), {dcfg.n_steps} steps each -> {cfg.output_dir}"
    return _finish(cfg, [line], True, {"files": files})


_MARTINGALE_DEFAULTS: dict[str, dict[str, Any]] = {
    "schramm_sheffield": {"geometry": Geometry.CHORDAL, "kappa": 4.0, "z": complex(0.5, 1.0), "r_stop": 0.0},
    "poisson": {"geometry": Geometry.RADIAL, "kappa": 2.0, "z": complex(0.2, 0.3), "r_stop": 0.1},
    "vertex_1pt": {"geometry": Geometry.RADIAL, "kappa": 2.0, "z": complex(0.2, 0.3), "r_stop": 0.1},
    "lsw_kappa6": {"geometry": Geometry.RADIAL, "kappa": 6.0, "z": complex(0.2, 0.3), "r_stop": 0.0},
    "lsw_boundary_exponent": {"geometry": Geometry.RADIAL, "kappa": 6.0, "z": 1j, "r_stop": 0.0},
    "sheffield_neumann": {"geometry": Geometry.CHORDAL, "kappa": 4.0, "z": complex(0.5, 1.0), "r_stop": 0.0},
    "zero": {"geometry": Geometry.CHORDAL, "kappa": 4.0, "z": complex(0.5, 1.0), "r_stop": 0.0},
}


def cmd_verify_martingale(cfg: RunConfig) -> int:
    p = cfg.params
    kind = p["observable"]
    if kind not in _MARTINGALE_DEFAULTS:
        raise ConfigError(f"unknown observable {kind!r}; choose from {sorted(_MARTINGALE_DEFAULTS)}")
    d = _MARTINGALE_DEFAULTS[kind]
    kappa = p["kappa"] if p["kappa"] is not None else d["kappa"]
    process_kappa = p["process_kappa"] if p["process_kappa"] is not None else kappa
    direction = "backward" if kind == "sheffield_neumann" else "forward"
    rec: dict[str, Any] = {"kind": kind, "kappa": kappa, "h": p["h"]}
    if kind == "vertex_1pt":
        for k in ("tau_plus", "tau_minus", "tauq_plus", "tauq_minus"):
            if p[k] is not None:
                rec[k] = p[k]
    spec = _spec_from_record(rec, kappa, direction)
    z = p["z"] if p["z"] is not None else d["z"]
    r_stop = p["r_stop"] if p["r_stop"] is not None else d["r_stop"]
    dcfg = DrivingConfig(_params(process_kappa, direction), d["geometry"], seed=cfg.seed, dt=p["dt"],
                         t_end=max(p["checkpoints"]))
    name = kind if process_kappa == kappa else f"{kind}[kappa={kappa:g}]@{process_kappa:g}"
    rep = vf.martingale_test(spec, dcfg, p["checkpoints"], p["n_paths"], z=z, name=name,
                             rel_tol=p["rel_tol"], r_stop=r_stop, threads=cfg.threads)
    return _finish(cfg, [rep.line()], rep.passed, {"report": rep.to_record()})


def cmd_verify_exponent(cfg: RunConfig) -> int:
    p = cfg.params
    dcfg = DrivingConfig(SleParams.forward(p["kappa"]), Geometry.RADIAL, seed=cfg.seed, dt=p["dt"],
                         t_end=max(p["t_grid"]))
    res = vf.exponent_regression(dcfg, p["t_grid"], p["n_paths"], theta=p["theta"], h=p["h"],
                                 threads=cfg.threads)
    ok = res.passed(p["rel_tol"])
    line = (f"{'PASS' if ok else 'FAIL'} exponent: slope={res.slope:.4f} expected={res.expected_slope:.4f} "
            f"rel_error={res.rel_error:.3f} (tol {p['rel_tol']:g}) N={res.paths}")
    return _finish(cfg, [line], ok, {"result": res.to_record()})


def cmd_verify_restriction(cfg: RunConfig) -> int:
    p = cfg.params
    hull = ob.VerticalSlit(p["x0"], p["h"])
    res = vf.restriction_probability_test(hull, p["n_paths"], kappa=p["kappa"], seed=cfg.seed, dt=p["dt"],
                                          t_end=p["t_end"], threads=cfg.threads)
    ok = res.passed(p["rel_tol"])
    line = (f"{'PASS' if ok else 'FAIL'} restriction: p_mc={res.p_mc:.5f} p_formula={res.p_formula:.5f} "
            f"rel_error={res.rel_error:.4f} (tol {p['rel_tol']:g}) SE={res.std_err:.2e} "
            f"tail={res.truncation_bias:.2e} N={res.paths}")
    return _finish(cfg, [line], ok, {"result": res.to_record()})


def cmd_virasoro_recursion(cfg: RunConfig) -> int:
    p = cfg.params
    angles = p["angles"]
    val = ob.virasoro_npoint_recursion(angles, p["kappa"])
    payload: dict[str, Any] = {"angles": angles, "kappa": p["kappa"], "R": val}
    ok = True
    line = f"R = {val.real:.15g}{val.imag:+.15g}j"
    if len(angles) == 1:
        ref = ob.one_point_virasoro_closed_form(complex(math.cos(angles[0]), math.sin(angles[0])), p["kappa"])
        err = abs(val - ref) / abs(ref)
        ok = err < p["tol"]
        payload.update(closed_form=ref, rel_error=err)
        line = f"{'PASS' if ok else 'FAIL'} virasoro-recursion: {line} closed form rel_error={err:.2e}"
    else:
        line = f"PASS virasoro-recursion: {line}"
    return _finish(cfg, [line], ok, payload)


def _flatten(prefix: str, x: Any, out: dict[str, Any]) -> None:
    if isinstance(x, dict):
        for k, v in x.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(x, list) and x and all(not isinstance(v, (dict, list)) for v in x):
        out[prefix] = " ".join(str(v) for v in x)
    elif isinstance(x, list):
        for i, v in enumerate(x):
            _flatten(f"{prefix}.{i}", v, out)
    else:
        out[prefix] = x


def report_rows(report: dict[str, Any]) -> list[dict[str, Any]]:
    """Flatten a JSON report into CSV rows.

    Martingale reports give one row per checkpoint (report-level scalars
    repeated on each row); other reports give a single row.
    """
    body = report.get("report")
    if isinstance(body, dict) and isinstance(body.get("checkpoints"), list):
        head: dict[str, Any] = {}
        _flatten("", {k: v for k, v in body.items() if k not in ("checkpoints", "t_checkpoints")}, head)
        rows = []
        for cp in body["checkpoints"]:
            row = dict(head)
            _flatten("", cp, row)
            rows.append(row)
        return rows
    row: dict[str, Any] = {}
    _flatten("", {k: v for k, v in report.items() if k != "config"}, row)
    return [row]


def cmd_export(cfg: RunConfig) -> int:
    p = cfg.params
    src = Path(p["report"])
    try:
        report = json.loads(src.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read report {src}: {e}") from None
    rows = report_rows(report)
    dst = Path(p["csv"]) if p["csv"] else src.with_suffix(".csv")
    cols: list[str] = []
    for r in rows:
        cols += [c for c in r if c not in cols]
    dst.parent.mkdir(parents=True, exist_ok=True)
    with open(dst, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols)
        wr.writeheader()
        wr.writerows(rows)
    print(f"PASS export: {len(rows)} row(s) -> {dst}")
    return EXIT_OK


HANDLERS: dict[str, Callable[[RunConfig], int]] = {
    "check-coulomb": cmd_check_coulomb,
    "check-nullvector": cmd_check_nullvector,
    "check-bpz-cardy": cmd_check_bpz_cardy,
    "simulate": cmd_simulate,
    "verify-martingale": cmd_verify_martingale,
    "verify-exponent": cmd_verify_exponent,
    "verify-restriction": cmd_verify_restriction,
    "virasoro-recursion": cmd_virasoro_recursion,
    "export": cmd_export,
}


# ---------------------------------------------------------------------------
# argument parsing


def _csv_floats(s: str) -> list[float]:
    return [float(x) for x in s.replace(",", " ").split()]


def _point(s: str) -> list[float]:
    z = complex(s.replace(" ", "").replace("i", "j"))
    return [z.real, z.imag]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--threads", type=int, help="worker threads (default 1)")
    common.add_argument("--out", help="output directory (default slelab-out)")

    parser = argparse.ArgumentParser(prog="slelab", description="SLE martingale-observable toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help_)

    a = add("check-coulomb", "Moebius invariance of random Coulomb gas correlations")
    a.add_argument("--random", type=int, help="number of random configurations")
    a.add_argument("--tol", type=float)

    for name, help_ in (("check-nullvector", "null-vector residuals of partition functions"),
                        ("check-bpz-cardy", "BPZ-Cardy residuals of vertex expectations")):
        a = add(name, help_)
        a.add_argument("--n", type=int, help="number of random configurations")
        a.add_argument("--kappas", type=_csv_floats)
        a.add_argument("--tol", type=float)

    a = add("simulate", "simulate paths and write path CSV files")
    a.add_argument("--kappa", type=float)
    a.add_argument("--geometry", choices=["chordal", "radial"])
    a.add_argument("--direction", choices=["forward", "backward"])
    a.add_argument("--dt", type=float)
    a.add_argument("--t-end", dest="t_end", type=float)
    a.add_argument("--n-paths", dest="n_paths", type=int)
    a.add_argument("--point", dest="points", type=_point, action="append",
                   help="tracked point such as 0.5+1j (repeatable)")

    a = add("verify-martingale", "Monte Carlo martingale test of a catalog observable")
    a.add_argument("--observable", choices=sorted(_MARTINGALE_DEFAULTS))
    a.add_argument("--kappa", type=float)
    a.add_argument("--process-kappa", dest="process_kappa", type=float)
    a.add_argument("--z", type=_point)
    a.add_argument("--checkpoints", type=_csv_floats)
    a.add_argument("--n-paths", dest="n_paths", type=int)
    a.add_argument("--dt", type=float)
    a.add_argument("--rel-tol", dest="rel_tol", type=float)
    a.add_argument("--r-stop", dest="r_stop", type=float)

    a = add("verify-exponent", "regression of the boundary survival exponent")
    a.add_argument("--kappa", type=float)
    a.add_argument("--h", type=float)
    a.add_argument("--theta", type=float)
    a.add_argument("--t-grid", dest="t_grid", type=_csv_floats)
    a.add_argument("--n-paths", dest="n_paths", type=int)
    a.add_argument("--dt", type=float)

    a = add("verify-restriction", "avoidance probability of a vertical slit")
    a.add_argument("--kappa", type=float)
    a.add_argument("--x0", type=float)
    a.add_argument("--h", type=float)
    a.add_argument("--n-paths", dest="n_paths", type=int)
    a.add_argument("--dt", type=float)
    a.add_argument("--t-end", dest="t_end", type=float)

    a = add("virasoro-recursion", "evaluate the n-point recursion at e^{i theta_j}")
    a.add_argument("--angles", type=float, nargs="+")
    a.add_argument("--kappa", type=float)

    a = add("export", "flatten a JSON report into CSV")
    a.add_argument("--report")
    a.add_argument("--csv")
    return parser


_GLOBAL_FLAGS = ("config", "seed", "threads", "out")


def run(argv: Sequence[str] | None = None) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    ns = vars(args)
    command = ns.pop("command")
    glob = {k: ns.pop(k) for k in _GLOBAL_FLAGS}
    try:
        file_cfg = load_config_file(glob["config"]) if glob["config"] else {}
        cfg = build_run_config(command, file_cfg, ns, {"seed": glob["seed"], "threads": glob["threads"],
                                                        "output_dir": glob["out"]})
    except ConfigError as e:
        print(f"slelab {command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return HANDLERS[command](cfg)
    except ConfigError as e:
        print(f"slelab {command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, ValueError, RuntimeError, ForcePointSwallowed, lw.LoewnerError) as e:
        record = {"command": command, "error": type(e).__name__, "message": str(e), "config": cfg.record()}
        write_json(cfg.output_dir / "error.json", record)
        print(f"FAIL {command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL


def main() -> None:
    sys.exit(run())
