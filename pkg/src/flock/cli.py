"""Command-line entry point: ``flock simulate|distance|converge|verify``.

Run configurations are flat JSON objects. The keys are listed in
``CONFIG_KEYS`` and described in the README. Exactly one initial-datum
source (``atoms``, ``samples_file``, ``density`` or ``random_cloud``) must
be given.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import acceptance, fixtures, kernel
from .diagnostics import SparseGrid, report
from .dynamics import SimOptions, simulate, write_trajectory
from .ensemble import (
    AtomicMeasure,
    Ensemble,
    SampleSource,
    cosine_bump,
    empirical_measure,
    fmt_float,
    quantize,
    support_radius,
    uniform_box,
)
from .flat_metric import bl_distance
from .meanfield import cap_consistency, convergence_study, max_cap_deviation, worker_count

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

SOURCES = ("atoms", "samples_file", "density", "random_cloud")
DENSITIES = {"uniform": uniform_box, "cosine_bump": cosine_bump}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    options: SimOptions
    source_kind: str
    source: object
    output_dir: Path
    h: float | None = None
    R0: float | None = None
    p: float = 1.05
    h_list: list[float] = field(default_factory=list)
    sample_times: list[float] = field(default_factory=list)
    caps: list[float] = field(default_factory=list)
    cap_rel_tols: list[float] = field(default_factory=list)

    def initial_ensemble(self, h: float | None = None) -> Ensemble:
        if self.source_kind in ("atoms", "random_cloud"):
            return self.source
        h = self.h if h is None else h
        if h is None:
            raise ConfigError("field 'h': required to quantize a density or sample source")
        return quantize(self.source, h)


OPTION_KEYS = {f.name for f in fields(SimOptions)} - {"weight"}
WEIGHT_KEYS = {"weight", "alpha", "cap", "K", "beta"}
CONFIG_KEYS = OPTION_KEYS | WEIGHT_KEYS | set(SOURCES) | {
    "output_dir", "h", "R0", "p", "h_list", "sample_times", "caps", "cap_rel_tols",
    "box_lo", "box_hi", "radius", "dim", "cloud_radius", "kind",
}


def _parse_json(text: str, origin: str) -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{origin}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{origin}: top level must be a JSON object")
    return raw


def _float_list(raw, key):
    try:
        return [float(a) for a in raw[key]]
    except (TypeError, ValueError):
        raise ConfigError(f"field '{key}': expected a list of numbers") from None


def _atoms(value, dim_hint=None) -> Ensemble:
    """``[{"m": .., "x": [..], "v": [..]}, ...]``; masses are normalised to 1."""
    if not isinstance(value, list) or not value:
        raise ConfigError("field 'atoms': expected a non-empty list of {m, x, v} objects")
    try:
        m = np.array([float(a["m"]) for a in value])
        x = np.array([[float(c) for c in a["x"]] for a in value])
        v = np.array([[float(c) for c in a["v"]] for a in value])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"field 'atoms': each atom needs numeric m, x, v ({exc})") from None
    if x.shape != v.shape:
        raise ConfigError("field 'atoms': x and v must have the same length")
    if np.any(m <= 0):
        raise ConfigError("field 'atoms': masses must be positive")
    return Ensemble(m / m.sum(), x, v)


def _samples(path: Path, radius) -> SampleSource:
    """CSV with one phase point per row (``x.., v..``), optional weight column ``w``."""
    if not path.is_file():
        raise ConfigError(f"field 'samples_file': cannot read {path}")
    with path.open() as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ConfigError(f"field 'samples_file': {path} has no data rows")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(a) for a in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"field 'samples_file': {path}: {exc}") from None
    weights = None
    if "w" in header:
        k = header.index("w")
        weights = data[:, k]
        data = np.delete(data, k, axis=1)
    if data.shape[1] % 2:
        raise ConfigError(f"field 'samples_file': {path} needs an even number of phase coordinates")
    return SampleSource(data, weights, radius)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    raw = _parse_json(text, str(path))
    raw.update(overrides or {})
    return config_from_dict(raw, base=path.parent)


def config_from_dict(raw: dict, base: Path = Path(".")) -> RunConfig:
    unknown = sorted(set(raw) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(repr(k) for k in unknown)}")
    given = [k for k in SOURCES if k in raw]
    if len(given) != 1:
        raise ConfigError(f"exactly one initial-datum source required among {SOURCES}, got {given or 'none'}")
    if "t_end" not in raw:
        raise ConfigError("field 't_end': required")

    try:
        weight = kernel.from_dict({"weight": raw.get("weight", "singular"),
                                   **{k: raw[k] for k in WEIGHT_KEYS - {"weight"} if k in raw}})
    except KeyError as exc:
        raise ConfigError(f"field {exc}: required by weight {raw.get('weight', 'singular')!r}") from None
    except ValueError as exc:
        raise ConfigError(f"field 'weight': {exc}") from None
    try:
        opts = SimOptions(weight=weight, **{k: raw[k] for k in OPTION_KEYS if k in raw})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"simulation options: {exc}") from None

    kind = given[0]
    radius = raw.get("radius")
    if kind == "atoms":
        source = _atoms(raw["atoms"])
    elif kind == "samples_file":
        source = _samples((base / raw["samples_file"]).resolve(), radius)
    elif kind == "density":
        name = raw["density"]
        if name not in DENSITIES:
            raise ConfigError(f"field 'density': expected one of {sorted(DENSITIES)}, got {name!r}")
        for k in ("box_lo", "box_hi"):
            if k not in raw:
                raise ConfigError(f"field '{k}': required with 'density'")
        lo, hi = _float_list(raw, "box_lo"), _float_list(raw, "box_hi")
        if len(lo) != len(hi) or len(lo) % 2 or any(b <= a for a, b in zip(lo, hi)):
            raise ConfigError("fields 'box_lo'/'box_hi': need equal even lengths with lo < hi")
        source = DENSITIES[name](lo, hi, radius=radius)
    else:
        try:
            n = int(raw["random_cloud"])
        except (TypeError, ValueError):
            raise ConfigError("field 'random_cloud': expected a particle count") from None
        if n < 1:
            raise ConfigError("field 'random_cloud': particle count must be positive")
        source = fixtures.random_cloud(n, int(raw.get("dim", 2)), seed=opts.seed,
                                       radius=float(raw.get("cloud_radius", 1.0)))

    cfg = RunConfig(
        options=opts, source_kind=kind, source=source,
        output_dir=(base / raw.get("output_dir", "flock_out")).resolve(),
        h=float(raw["h"]) if "h" in raw else None,
        R0=float(raw["R0"]) if "R0" in raw else None,
        p=float(raw.get("p", 1.05)),
    )
    for key in ("h_list", "sample_times", "caps", "cap_rel_tols"):
        if key in raw:
            setattr(cfg, key, _float_list(raw, key))
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def _mark_failed(out_dir: Path, kind: str, message: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{kind}.failed").write_text(message + "\n")


def _clear_marker(out_dir: Path, kind: str) -> None:
    (out_dir / f"{kind}.failed").unlink(missing_ok=True)


def _json_safe(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, dict):
        return {k: _json_safe(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_json_safe(v) for v in o]
    return o


def cmd_simulate(cfg: RunConfig) -> int:
    out = cfg.output_dir
    _clear_marker(out, "simulate")
    e0 = cfg.initial_ensemble()
    traj = simulate(e0, cfg.options)
    write_trajectory(traj, out)
    R0 = cfg.R0 if cfg.R0 is not None else support_radius(e0)
    try:
        body = json.loads(report(traj, R0, cfg.p).to_json())
    except SparseGrid as exc:
        body = {"error": str(exc)}
        print(f"diagnostics skipped: {exc}", file=sys.stderr)
    (out / "diagnostics.json").write_text(json.dumps(body, indent=1))
    print(f"wrote {len(traj.snapshots)} snapshots, {len(traj.events)} merge events to {out}")
    return EXIT_OK


def _read_measure(path: Path) -> AtomicMeasure:
    raw = _parse_json(path.read_text(), str(path))
    try:
        if "points" in raw:
            return AtomicMeasure.from_dict(raw)
        return empirical_measure(Ensemble.from_dict(raw))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: not a measure ({{points, weights}}) or ensemble file: {exc}") from None


def cmd_distance(mu_path: Path, nu_path: Path) -> int:
    for p in (mu_path, nu_path):
        if not p.is_file():
            raise ConfigError(f"{p}: cannot read")
    d = bl_distance(_read_measure(mu_path), _read_measure(nu_path))
    print(f"{d:.12f}")
    return EXIT_OK


def cmd_converge(cfg: RunConfig) -> int:
    out = cfg.output_dir
    _clear_marker(out, "converge")
    if cfg.source_kind in ("atoms", "random_cloud"):
        raise ConfigError("field 'density' or 'samples_file': converge needs a quantizable source")
    if len(cfg.h_list) < 2:
        raise ConfigError("field 'h_list': at least two cell sizes required")
    times = cfg.sample_times or [0.0, cfg.options.t_end]
    rows = convergence_study(cfg.source, cfg.h_list, cfg.options, times, worker_count())
    out.mkdir(parents=True, exist_ok=True)
    with (out / "convergence.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["h", "N", "D"])
        for r in rows:
            w.writerow([fmt_float(r.h), r.N, fmt_float(r.D)])

    checks = {}
    D = [r.D for r in rows if not math.isnan(r.D)]
    checks["no_simulation_errors"] = all(r.error is None for r in rows)
    checks["D_decreasing"] = len(D) == len(rows) - 1 and all(b < a for a, b in zip(D, D[1:]))
    if times[0] == 0.0:
        checks["initial_quantization_bound"] = all(r.per_time[0] <= r.h / 2 for r in rows if r.per_time)

    cap_rows = []
    if cfg.caps:
        e0 = cfg.initial_ensemble(cfg.h_list[0])
        cap_rows = cap_consistency(e0, cfg.caps, cfg.options, cfg.cap_rel_tols or None, worker_count())
        with (out / "caps.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cap_a", "cap_b", "deviation", "window_end"])
            for r in cap_rows:
                w.writerow([fmt_float(r.cap_a), fmt_float(r.cap_b), fmt_float(r.deviation), fmt_float(r.window_end)])
        dev = max_cap_deviation(cap_rows)
        tol = 10.0 * max([cfg.options.rel_tol] + cfg.cap_rel_tols)
        checks["cap_deviation_within_tolerance"] = bool(math.isnan(dev) or dev < tol)

    summary = {
        "rows": [{"h": r.h, "N": r.N, "D": r.D, "per_time": r.per_time, "error": r.error} for r in rows],
        "sample_times": times,
        "caps": [vars(r) for r in cap_rows],
        "checks": checks,
        "all_passed": all(checks.values()),
    }
    (out / "summary.json").write_text(json.dumps(_json_safe(summary), indent=1))
    for r in rows:
        print(f"h={r.h:<8g} N={r.N:<6d} D={r.D:.6g}" + (f"  error: {r.error}" if r.error else ""))
    for k, v in checks.items():
        print(f"[{'PASS' if v else 'FAIL'}] {k}")
    return EXIT_OK if summary["all_passed"] else EXIT_FAILED


def cmd_verify(fast: bool, out_path: Path) -> int:
    results = acceptance.run_all(fast=fast, echo=print)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(acceptance.to_json(results))
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed; report in {out_path}")
    return EXIT_OK if passed == len(results) else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flock", description="Singular Cucker-Smale flocking engine and checks.")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="integrate a configuration and write trajectory and diagnostics")
    s.add_argument("config", type=Path)
    s.add_argument("--output-dir", type=Path)
    d = sub.add_parser("distance", help="flat distance between two measure or ensemble JSON files")
    d.add_argument("mu", type=Path)
    d.add_argument("nu", type=Path)
    c = sub.add_parser("converge", help="Cauchy study over cell sizes, optional cap table")
    c.add_argument("config", type=Path)
    c.add_argument("--output-dir", type=Path)
    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--fast", action="store_true", help="looser tolerance for the convergence study")
    v.add_argument("--output", type=Path, default=Path("verify.json"))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "distance":
        try:
            return cmd_distance(args.mu, args.nu)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if args.command == "verify":
        return cmd_verify(args.fast, args.output)

    try:
        overrides = {"output_dir": str(args.output_dir.resolve())} if args.output_dir else None
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = cmd_simulate if args.command == "simulate" else cmd_converge
    try:
        return run(cfg)
    except ConfigError as exc:
        _mark_failed(cfg.output_dir, args.command, f"config error: {exc}")
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        _mark_failed(cfg.output_dir, args.command, f"{type(exc).__name__}: {exc}")
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
