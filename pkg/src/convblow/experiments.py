"""Regime sweeps, convergence studies and absorbing-set checks.

Everything here is orchestration on top of :func:`convblow.stepper.integrate`:
runs are classified as Dissipative / BlowUp / Inconclusive, tabulated over
(p, q, amplitude) lattices, and compared across amplitudes or resolutions.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .diagnostics import DiagnosticsConfig, lebesgue_norm
from .grid_ops import Grid, make_grid
from .models import (
    EquationSpec,
    FKind,
    FSpec,
    ManufacturedSolution,
    Model,
    OverflowDetected,
    mms_forcing,
)
from .stepper import OutcomeKind, RunOutcome, Scheme, StepControls, integrate, integrate_fixed

log = logging.getLogger(__name__)


class Regime(enum.Enum):
    DISSIPATIVE = "Dissipative"
    BLOWUP = "BlowUp"
    INCONCLUSIVE = "Inconclusive"


_REGIME_OF = {
    OutcomeKind.COMPLETED: Regime.DISSIPATIVE,
    OutcomeKind.BLOWUP: Regime.BLOWUP,
    OutcomeKind.INCONCLUSIVE: Regime.INCONCLUSIVE,
}


def classify_run(outcome: RunOutcome | OutcomeKind) -> Regime:
    kind = outcome if isinstance(outcome, OutcomeKind) else outcome.kind
    return _REGIME_OF[kind]


def predicted_regime(model: Model, p: float, q: float) -> Optional[Regime]:
    """Regime asserted by the known global-existence / blow-up results.

    Returns None where theory is silent (those cells are exploratory).
    """
    if p < q and not (model is Model.CH and p >= q - 1):
        return Regime.BLOWUP
    if model is Model.BURGERS:
        return Regime.DISSIPATIVE if q <= p else None
    if model is Model.KS:
        return Regime.DISSIPATIVE if q <= p <= 6 else None
    if model is Model.CH:
        return Regime.DISSIPATIVE if p >= 2 * q else None
    return Regime.DISSIPATIVE if q <= p <= 2 else None


# -- initial data -------------------------------------------------------------

INITIAL_PROFILES = ("sine", "bump", "rough", "zero")


def rough_profile(grid: Grid, seed: int, n_modes: int = 16) -> np.ndarray:
    """Seeded random sine series sum_k xi_k / k * sin(k pi (x+1)/2).

    ``xi_k`` are standard normals drawn from ``numpy.random.default_rng(seed)``
    (PCG64). The k^-1 decay leaves the data in L2 but not in H1 uniformly
    in the number of modes. The result is not normalised.
    """
    rng = np.random.default_rng(np.uint64(seed))
    xi = rng.standard_normal(n_modes)
    x = grid.nodes
    k = np.arange(1, n_modes + 1)
    return (xi / k) @ np.sin(np.outer(k, np.pi * (x + 1) / 2))


def initial_data(grid: Grid, model: Model, profile: str = "sine", amplitude: float = 1.0,
                 seed: int = 0, n_modes: int = 16) -> np.ndarray:
    """Initial field compatible with the model's boundary conditions.

    ``sine``  amplitude * sin(pi (x+1)/2)
    ``bump``  amplitude * (1 - x^2)^5
    ``rough`` seeded random series rescaled to L2 norm ``amplitude``
    ``zero``  identically zero

    For KdV the sine and rough profiles are multiplied by (1 - x) so that
    u_x(1) = 0 holds exactly.
    """
    x = grid.nodes
    if profile == "zero":
        return np.zeros(grid.size)
    if profile == "bump":
        return amplitude * (1 - x**2) ** 5
    if profile == "sine":
        u = np.sin(np.pi * (x + 1) / 2)
    elif profile == "rough":
        u = rough_profile(grid, seed, n_modes)
    else:
        raise ValueError(f"unknown initial profile {profile!r}; expected one of {INITIAL_PROFILES}")
    if model is Model.KDV:
        u = u * (1 - x)
    u[0] = u[-1] = 0.0
    if profile == "rough":
        norm = lebesgue_norm(grid, u)
        return amplitude * u / norm if norm > 0 else u
    return amplitude * u


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class RegimeCell:
    p: float
    q: float
    amplitude: float
    regime: Regime
    t_detect_or_bound: float
    n_cells: int
    note: str = ""


@dataclass
class RegimeMap:
    model: Model
    p_values: tuple
    q_values: tuple
    amplitude_values: tuple
    cells: list = field(default_factory=list)

    def __post_init__(self):
        expected = len(self.p_values) * len(self.q_values) * len(self.amplitude_values)
        if self.cells and len(self.cells) != expected:
            raise ValueError(f"regime map needs {expected} cells, got {len(self.cells)}")

    def cell(self, p, q, amplitude) -> RegimeCell:
        for c in self.cells:
            if c.p == p and c.q == q and c.amplitude == amplitude:
                return c
        raise KeyError((p, q, amplitude))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p", "q", "amplitude", "regime", "t_detect_or_bound", "n_cells"])
            for c in self.cells:
                w.writerow([f"{c.p:.17g}", f"{c.q:.17g}", f"{c.amplitude:.17g}", c.regime.value,
                            f"{c.t_detect_or_bound:.17g}", c.n_cells])

    def summary(self) -> dict:
        counts = {r.value: 0 for r in Regime}
        rows = []
        for c in self.cells:
            counts[c.regime.value] += 1
            pred = predicted_regime(self.model, c.p, c.q)
            rows.append({
                "p": c.p, "q": c.q, "amplitude": c.amplitude, "regime": c.regime.value,
                "t_detect_or_bound": c.t_detect_or_bound, "n_cells": c.n_cells,
                "predicted": pred.value if pred else None, "note": c.note,
            })
        return {
            "model": self.model.value,
            "p_values": list(self.p_values),
            "q_values": list(self.q_values),
            "amplitude_values": list(self.amplitude_values),
            "counts": counts,
            "cells": rows,
        }


def regime_violations(rmap: RegimeMap) -> list[tuple[RegimeCell, RegimeCell]]:
    """Pairs (dissipative, blowup) where the dissipative cell has strictly larger
    q and strictly smaller p than the blow-up cell at the same amplitude."""
    bad = []
    for d in rmap.cells:
        if d.regime is not Regime.DISSIPATIVE:
            continue
        for b in rmap.cells:
            if (b.regime is Regime.BLOWUP and b.amplitude == d.amplitude
                    and d.q > b.q and d.p < b.p):
                bad.append((d, b))
    return bad


def _cell_spec(template: EquationSpec, p: float, q: float) -> EquationSpec:
    f = template.f
    if f.kind in (FKind.SIGNED_POWER, FKind.ABS_POWER):
        f = FSpec(f.kind, f.coef, q)
    else:
        # q is only meaningful for the power families; blow-up sweeps use |u|^{q+1}
        f = FSpec.abs_power(q)
    return template.with_(p=p, f=f)


def _tail_bound(series, key="L2") -> float:
    v = series[key]
    m = len(v)
    return float(np.max(v[m - max(1, m // 4):]))


def _run_cell(args) -> RegimeCell:
    template, p, q, amp, controls, n_cells, diag, profile = args
    try:
        spec = _cell_spec(template, p, q)
        grid = make_grid(n_cells)
        u0 = initial_data(grid, spec.model, profile, amp)
        out = integrate(spec, grid, u0, controls, diag)
    except Exception as exc:  # a broken cell must never abort the sweep
        log.warning("cell p=%s q=%s amplitude=%s failed: %s", p, q, amp, exc)
        return RegimeCell(p, q, amp, Regime.INCONCLUSIVE, math.nan, n_cells,
                          note=f"cell failed: {type(exc).__name__}: {exc}")
    regime = classify_run(out)
    val = out.t_detect if regime is Regime.BLOWUP else _tail_bound(out.series)
    return RegimeCell(p, q, amp, regime, float(val), n_cells, note=out.note)


def sweep(template: EquationSpec, p_values: Sequence[float], q_values: Sequence[float],
          amplitude_values: Sequence[float], controls: StepControls, n_cells: int = 256,
          diag: DiagnosticsConfig = DiagnosticsConfig(), *, profile: str = "sine",
          jobs: int = 1) -> RegimeMap:
    """Integrate every (p, q, amplitude) cell and tabulate the regimes.

    Cell order is p-major, then q, then amplitude, regardless of ``jobs``.
    """
    if not (p_values and q_values and amplitude_values):
        raise ValueError("sweep axes must be non-empty")
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    tasks = [(template, float(p), float(q), float(a), controls, n_cells, diag, profile)
             for p in p_values for q in q_values for a in amplitude_values]
    if jobs == 1 or len(tasks) == 1:
        cells = [_run_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_run_cell, tasks))
    return RegimeMap(template.model, tuple(float(p) for p in p_values),
                     tuple(float(q) for q in q_values),
                     tuple(float(a) for a in amplitude_values), cells)


# -- convergence studies ------------------------------------------------------

class StudyFailure(RuntimeError):
    """A manufactured-solution run blew up or overflowed."""


def observed_order(steps: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(step size)."""
    steps, errors = np.asarray(steps, float), np.asarray(errors, float)
    if steps.size < 2 or np.any(errors <= 0):
        raise ValueError("need two or more positive errors to fit an order")
    return float(np.polyfit(np.log(steps), np.log(errors), 1)[0])


@dataclass(frozen=True)
class ConvergenceReport:
    """Errors against an exact solution at increasing resolution.

    ``resolutions`` are cell counts for spatial studies and step counts for
    temporal studies. ``order`` is None when the fit was skipped.
    """

    model: Model
    scheme: Scheme
    kind: str
    resolutions: tuple
    errors: tuple
    order: Optional[float]
    skipped: bool = False
    note: str = ""

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.resolutions, self.resolutions[1:])):
            raise ValueError("resolutions must be strictly increasing")
        if not self.skipped and any(e <= 0 for e in self.errors):
            raise ValueError("errors must be strictly positive")

    def rows(self) -> list[dict]:
        return [{"model": self.model.value, "scheme": self.scheme.value, "kind": self.kind,
                 "resolution": r, "error": e, "order": self.order}
                for r, e in zip(self.resolutions, self.errors)]


ROUNDOFF = 1e-13


def _as_exact(exact) -> ManufacturedSolution:
    return exact if isinstance(exact, ManufacturedSolution) else ManufacturedSolution(exact)


def _report(spec, scheme, kind, resolutions, errors, steps) -> ConvergenceReport:
    errors = tuple(float(e) for e in errors)
    if max(errors) < ROUNDOFF:
        return ConvergenceReport(spec.model, scheme, kind, tuple(resolutions), errors, None,
                                 skipped=True, note="errors at roundoff; order fit skipped")
    return ConvergenceReport(spec.model, scheme, kind, tuple(resolutions), errors,
                             observed_order(steps, errors))


def convergence_study(spec: EquationSpec, exact, resolutions: Sequence[int],
                      controls: StepControls, *, dt: Optional[float] = None) -> ConvergenceReport:
    """Spatial order from manufactured solutions, run to ``controls.t_max``.

    With ``dt`` given, constant steps of that size replace the adaptive
    controller (cheaper when the tolerance needed to hide the time error is
    very tight).
    """
    ms = _as_exact(exact)
    forced = spec.with_(g=mms_forcing(spec, ms))
    T = controls.t_max
    errors = []
    for n in resolutions:
        grid = make_grid(n)
        u0 = ms("u", 0.0, grid.nodes)
        try:
            if dt is None:
                out = integrate(forced, grid, u0, replace(controls, record_every=T))
                if out.kind is not OutcomeKind.COMPLETED:
                    raise StudyFailure(f"MMS run at n_cells={n} ended {out.kind.value}: {out.reason}")
                u = out.final
            else:
                u = integrate_fixed(forced, grid, u0, dt, T, controls.scheme)
        except OverflowDetected as exc:
            raise StudyFailure(f"MMS run at n_cells={n} overflowed") from exc
        if not np.all(np.isfinite(u)):
            raise StudyFailure(f"MMS run at n_cells={n} produced non-finite values")
        errors.append(lebesgue_norm(grid, u - ms("u", T, grid.nodes)))
    return _report(spec, controls.scheme, "spatial", resolutions, errors,
                   [2.0 / n for n in resolutions])


def temporal_study(spec: EquationSpec, exact, n_cells: int, dts: Sequence[float], T: float,
                   scheme: Scheme, refine: int = 32) -> ConvergenceReport:
    """Temporal order at fixed resolution from constant-step runs.

    Errors are measured against a constant-step run with ``min(dts)/refine``
    on the same grid, which isolates the time-discretisation error.
    """
    ms = _as_exact(exact)
    forced = spec.with_(g=mms_forcing(spec, ms))
    grid = make_grid(n_cells)
    u0 = ms("u", 0.0, grid.nodes)
    dts = sorted((float(d) for d in dts), reverse=True)
    try:
        ref = integrate_fixed(forced, grid, u0, dts[-1] / refine, T, scheme)
        errors = [lebesgue_norm(grid, integrate_fixed(forced, grid, u0, d, T, scheme) - ref)
                  for d in dts]
    except OverflowDetected as exc:
        raise StudyFailure("temporal MMS run overflowed") from exc
    steps = [int(round(T / d)) for d in dts]
    return _report(spec, scheme, "temporal", steps, errors, dts)


# -- absorbing set ------------------------------------------------------------

@dataclass(frozen=True)
class AbsorbingReport:
    amplitudes: tuple
    tail_max: tuple
    spread: float
    bound: float
    passed: bool
    regimes: tuple
    failed_amplitude: Optional[float] = None
    note: str = ""


def absorbing_set_check(spec: EquationSpec, amplitudes: Sequence[float], T: float,
                        controls: StepControls, *, n_cells: int = 256, bound: float = 1e-6,
                        profile: str = "sine",
                        diag: DiagnosticsConfig = DiagnosticsConfig()) -> AbsorbingReport:
    """Check that long-time L2 norms do not depend on the initial amplitude.

    Passes when the relative spread of the final-quarter maxima is at most 5%,
    or when every maximum lies below ``bound`` (a trivial attractor). Any
    blow-up, or a run still growing at T, fails the check.
    """
    if not amplitudes:
        raise ValueError("need at least one amplitude")
    grid = make_grid(n_cells)
    controls = replace(controls, t_max=T)
    tails, regimes = [], []
    for amp in amplitudes:
        out = integrate(spec, grid, initial_data(grid, spec.model, profile, amp), controls, diag)
        regime = classify_run(out)
        regimes.append(regime)
        if regime is not Regime.DISSIPATIVE:
            return AbsorbingReport(tuple(amplitudes), tuple(tails), math.nan, bound, False,
                                   tuple(regimes), failed_amplitude=float(amp),
                                   note=f"amplitude {amp:g} ended {regime.value}")
        tails.append(_tail_bound(out.series))
    top = max(tails)
    spread = (top - min(tails)) / top if top > 0 else 0.0
    passed = spread <= 0.05 or top < bound
    return AbsorbingReport(tuple(amplitudes), tuple(tails), spread, bound, passed, tuple(regimes))
