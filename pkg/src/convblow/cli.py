"""Command-line entry point: ``convblow {run,sweep,converge,verify}``.

Exit codes: 0 success, 1 verification failure, 2 config error,
3 runtime or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, config_to_dict, load_config, parse_config  # noqa: F401  (re-exported)
from .diagnostics import DiagnosticsError, fit_dissipative, kdv_energy_flux_residual
from .experiments import (
    StudyFailure,
    absorbing_set_check,
    classify_run,
    convergence_study,
    predicted_regime,
    sweep,
    temporal_study,
)
from .stepper import Scheme, integrate

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("convblow")


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path: Path, doc: dict):
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _f17(v) -> str:
    return "" if v is None else f"{v:.17g}"


def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    if getattr(args, "n_cells", None) is not None:
        changes["n_cells"] = args.n_cells
    if getattr(args, "t_max", None) is not None:
        changes["t_max"] = args.t_max
    return cfg.with_(**changes) if changes else cfg


def cmd_run(cfg: RunConfig, args) -> int:
    out_dir = _out_dir(cfg, args)
    spec, grid = cfg.equation(), cfg.grid()
    outcome = integrate(spec, grid, cfg.initial(grid), cfg.controls(), cfg.diagnostics(),
                        keep_snapshots=cfg.flux_residual)
    outcome.series.write_csv(out_dir / "series.csv")
    doc = {"run": outcome.summary(), "regime": classify_run(outcome).value,
           "config": config_to_dict(cfg), "warnings": list(cfg.warnings)}
    pred = predicted_regime(spec.model, spec.p, spec.q) if cfg.q is not None else None
    doc["predicted_regime"] = pred.value if pred else None
    try:
        fit = fit_dissipative(outcome.series)
        doc["fit"] = {"decay_rate": fit.decay_rate, "asymptotic_bound": fit.asymptotic_bound,
                      "residual": fit.residual}
    except DiagnosticsError as exc:
        doc["fit"] = None
        doc["fit_note"] = str(exc)
    if cfg.flux_residual:
        r = kdv_energy_flux_residual(grid, outcome.series["t"], outcome.snapshots, spec)
        t = outcome.series["t"]
        with open(out_dir / "flux_residual.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "flux_residual"])
            for tm, v in zip(0.5 * (t[1:] + t[:-1]), r):
                w.writerow([_f17(tm), _f17(v)])
        doc["flux_residual_max"] = float(np.max(np.abs(r)))
    write_json(out_dir / "summary.json", doc)
    print(f"{doc['regime']}: t_final={outcome.t_final:.6g}"
          + (f" t_detect={outcome.t_detect:.6g} ({outcome.reason})" if outcome.t_detect else ""))
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    if not (cfg.p_values and cfg.q_values):
        raise ConfigError("sweep.p_values/q_values: both axes are required for a sweep")
    amps = cfg.amplitudes or (cfg.amplitude,)
    out_dir = _out_dir(cfg, args)
    rmap = sweep(cfg.equation(), cfg.p_values, cfg.q_values, amps, cfg.controls(),
                 cfg.n_cells, cfg.diagnostics(), profile=cfg.profile, jobs=args.jobs)
    rmap.write_csv(out_dir / "regime_map.csv")
    doc = rmap.summary()
    doc["config"] = config_to_dict(cfg)
    write_json(out_dir / "sweep_summary.json", doc)
    for c in rmap.cells:
        print(f"p={c.p:g} q={c.q:g} amplitude={c.amplitude:g}: {c.regime.value}")
    return EXIT_OK


def cmd_absorb(cfg: RunConfig, args) -> int:
    amps = cfg.amplitudes or (cfg.amplitude,)
    out_dir = _out_dir(cfg, args)
    rep = absorbing_set_check(cfg.equation(), amps, cfg.t_max, cfg.controls(),
                              n_cells=cfg.n_cells, bound=cfg.absorbing_bound,
                              profile=cfg.profile, diag=cfg.diagnostics())
    write_json(out_dir / "absorbing.json", {
        "amplitudes": list(rep.amplitudes), "tail_max": list(rep.tail_max),
        "spread": rep.spread, "bound": rep.bound, "passed": rep.passed,
        "regimes": [r.value for r in rep.regimes], "failed_amplitude": rep.failed_amplitude,
        "note": rep.note,
    })
    print(f"absorbing-set check {'passed' if rep.passed else 'failed'}"
          + (f": {rep.note}" if rep.note else f" (spread {rep.spread:.4g})"))
    return EXIT_OK if rep.passed else EXIT_VERIFY


def cmd_converge(cfg: RunConfig, args) -> int:
    if cfg.exact is None:
        raise ConfigError("converge.exact: an exact solution expression is required")
    out_dir = _out_dir(cfg, args)
    spec = cfg.equation()
    reports = [convergence_study(spec, cfg.exact, cfg.resolutions, cfg.controls(),
                                 dt=cfg.fixed_dt)]
    if cfg.temporal_dts:
        for sch in (Scheme.EULER1, Scheme.CNAB2):
            reports.append(temporal_study(spec, cfg.exact, cfg.temporal_n_cells,
                                          cfg.temporal_dts, cfg.t_max, sch))
    with open(out_dir / "orders.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "scheme", "kind", "resolution", "error", "order"])
        for rep in reports:
            for row in rep.rows():
                w.writerow([row["model"], row["scheme"], row["kind"], row["resolution"],
                            _f17(row["error"]), _f17(row["order"])])
    for rep in reports:
        order = "skipped" if rep.order is None else f"{rep.order:.4f}"
        print(f"{rep.kind} {rep.scheme.value}: order {order}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .acceptance import run_all

    numbers = set(args.only) if args.only else None
    results = run_all(numbers, echo=print)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "acceptance.json", {"criteria": [
            {"number": r.number, "name": r.name, "passed": r.passed, "detail": r.detail}
            for r in results]})
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convblow",
        description="Simulate convective Burgers / KS / CH / KdV equations and classify "
                    "dissipative versus blow-up behaviour.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="TOML config file")
        p.add_argument("--out", help="output directory (overrides output.out_dir)")
        p.add_argument("--n-cells", type=int, dest="n_cells", help="override grid.n_cells")
        p.add_argument("--t-max", type=float, dest="t_max", help="override controls.t_max")
        p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers (default 1)")
        return p

    common(sub.add_parser("run", help="integrate one configuration"))
    common(sub.add_parser("sweep", help="regime map over sweep.p_values x q_values x amplitudes"))
    common(sub.add_parser("absorb", help="amplitude-independence check over sweep.amplitudes"))
    common(sub.add_parser("converge", help="manufactured-solution convergence orders"))
    v = sub.add_parser("verify", help="run the acceptance suite on the shipped scenarios")
    v.add_argument("--out", help="directory for acceptance.json")
    v.add_argument("--only", type=int, nargs="+", help="criterion numbers to run")
    return parser


_COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "absorb": cmd_absorb, "converge": cmd_converge}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.command == "verify":
        return cmd_verify(args)
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, StudyFailure, RuntimeError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
