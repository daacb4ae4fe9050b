"""The acceptance suite: ten numbered checks run on shipped scenario configs.

Used by ``convblow verify`` and by ``tests/test_acceptance.py``. Each check
returns a :class:`CriterionResult`; nothing here raises on a failed check.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Optional

import numpy as np

from .config import RunConfig, parse_config
from .diagnostics import (
    kdv_energy_flux_residual,
    lebesgue_norm,
    tail_increasing_convex,
)
from .experiments import (
    Regime,
    absorbing_set_check,
    classify_run,
    convergence_study,
    observed_order,
    temporal_study,
)
from .grid_ops import BcScheme, diff_operator, make_grid, quad_trapz
from .models import weighted_flux_residual
from .stepper import FitFailed, Scheme, estimate_blowup_time, integrate

STABILITY_RESOLUTIONS = (128, 256)


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return (f"[{'PASS' if self.passed else 'FAIL'}] {self.number:>2} {self.name}: "
                f"{self.detail} ({self.seconds:.1f}s)")


def scenario_names() -> list[str]:
    root = resources.files("convblow") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_scenario(name: str) -> RunConfig:
    text = (resources.files("convblow") / "scenarios" / f"{name}.toml").read_text()
    return parse_config(text)


def run_config(cfg: RunConfig, n_cells: Optional[int] = None, *, keep_snapshots=False):
    if n_cells is not None:
        cfg = cfg.with_(n_cells=n_cells)
    grid = cfg.grid()
    out = integrate(cfg.equation(), grid, cfg.initial(grid), cfg.controls(), cfg.diagnostics(),
                    keep_snapshots=keep_snapshots)
    return out, grid


def _runs(name: str, resolutions=STABILITY_RESOLUTIONS) -> dict:
    cfg = load_scenario(name)
    return {n: run_config(cfg, n)[0] for n in resolutions}


def _regimes(runs: dict) -> dict:
    return {n: classify_run(o) for n, o in runs.items()}


def _expect(name: str, runs: dict, expected: Regime) -> tuple[bool, str]:
    regs = _regimes(runs)
    ok = all(r is expected for r in regs.values())
    txt = ", ".join(f"n={n}:{r.value}" for n, r in regs.items())
    return ok, f"{name} [{txt}]"


# -- individual criteria ------------------------------------------------------

def _c1_operators() -> tuple[bool, str]:
    func = lambda x: np.sin(2 * x + 0.3)  # noqa: E731
    derivs = {
        1: lambda x: 2 * np.cos(2 * x + 0.3),
        2: lambda x: -4 * np.sin(2 * x + 0.3),
        3: lambda x: -8 * np.cos(2 * x + 0.3),
        4: lambda x: 16 * np.sin(2 * x + 0.3),
    }
    bcs = {1: BcScheme.DIRICHLET_PAIR, 2: BcScheme.DIRICHLET_PAIR,
           3: BcScheme.KDV_MIXED, 4: BcScheme.SIMPLY_SUPPORTED}
    orders = {}
    for k in derivs:
        errs = []
        for n in (128, 256):
            g = make_grid(n)
            d = diff_operator(g, k, bcs[k])(func(g.nodes))
            errs.append(np.max(np.abs(d - derivs[k](g.nodes))[2:-2]))
        orders[k] = math.log2(errs[0] / errs[1])
    g = make_grid(256)
    qerr = abs(quad_trapz(g, np.exp(-g.nodes)) - (math.e - 1 / math.e))
    ok = all(o >= 1.8 for o in orders.values()) and qerr <= 1e-4
    txt = ", ".join(f"D{k} {o:.3f}" for k, o in orders.items())
    return ok, f"orders {txt}; quadrature error {qerr:.2e}"


def _c2_heat() -> tuple[bool, str]:
    cfg = load_scenario("heat_decay")
    out, grid = run_config(cfg)
    T = out.t_final
    exact = math.exp(-(math.pi / 2) ** 2 * T) * cfg.initial(grid)
    rel = lebesgue_norm(grid, out.final - exact) / lebesgue_norm(grid, exact)
    return rel <= 1e-3 and out.kind.value == "completed", f"relative L2 error {rel:.2e} at T={T:g}"


def _c3_mms() -> tuple[bool, str]:
    ok, parts = True, []
    for m in ("burgers", "ks", "ch", "kdv"):
        cfg = load_scenario(f"mms_{m}")
        spec = cfg.equation()
        rep = convergence_study(spec, cfg.exact, cfg.resolutions, cfg.controls(),
                                dt=cfg.fixed_dt)
        s_ok = rep.order is not None and 1.8 <= rep.order <= 2.2
        t_orders = []
        for sch in (Scheme.EULER1, Scheme.CNAB2):
            tr = temporal_study(spec, cfg.exact, cfg.temporal_n_cells, cfg.temporal_dts,
                                cfg.t_max, sch)
            t_orders.append(tr.order)
            s_ok = s_ok and tr.order is not None and abs(tr.order - sch.order) <= 0.3
        ok = ok and s_ok
        parts.append(f"{m} x:{rep.order:.2f} t:{t_orders[0]:.2f}/{t_orders[1]:.2f}")
    return ok, "; ".join(parts)


def _c4_burgers() -> tuple[bool, str]:
    cfg = load_scenario("burgers_absorbing")
    rep = absorbing_set_check(cfg.equation(), cfg.amplitudes, cfg.t_max, cfg.controls(),
                              n_cells=cfg.n_cells, bound=cfg.absorbing_bound)
    fcfg = load_scenario("burgers_absorbing_forced")
    forced = absorbing_set_check(fcfg.equation(), fcfg.amplitudes, fcfg.t_max, fcfg.controls(),
                                 n_cells=fcfg.n_cells, bound=0.0)
    low = {}
    for amp in cfg.amplitudes:
        out, _ = run_config(cfg.with_(amplitude=amp), 128)
        low[amp] = classify_run(out)
    stable = all(r is Regime.DISSIPATIVE for r in low.values())
    runs = _runs("burgers_blowup")
    b_ok, b_txt = _expect("p=1,q=2", runs, Regime.BLOWUP)
    t_det = max((o.t_detect or math.inf) for o in runs.values())
    ok = rep.passed and forced.passed and stable and b_ok and t_det < 5
    tails = ", ".join(f"{t:.2e}" for t in rep.tail_max)
    return ok, (f"absorbing g=0 {'pass' if rep.passed else 'fail'} (tail max {tails}, below "
                f"bound {rep.bound:g}); forced g=5sin spread {forced.spread:.2e} "
                f"{'pass' if forced.passed else 'fail'}; 128-cell regimes all Dissipative: "
                f"{stable}; "
                f"{b_txt} t_detect {t_det:.4g}")


def _c5_ablation() -> tuple[bool, str]:
    a0 = _expect("a=0", _runs("heat_quadratic_a0"), Regime.BLOWUP)
    a1 = _expect("a=1", _runs("burgers_quadratic_a1"), Regime.DISSIPATIVE)
    return a0[0] and a1[0], f"{a0[1]}; {a1[1]}"


def _bounded_h1(out) -> tuple[bool, float]:
    h1 = out.series["H1"]
    if not np.all(np.isfinite(h1)):
        return False, math.inf
    half = len(h1) // 2
    return bool(np.max(h1[half:]) <= 1.05 * np.max(h1[: half + 1])), float(np.max(h1))


def _c6_ks() -> tuple[bool, str]:
    diss = _runs("ks_dissipative")
    d_ok, d_txt = _expect("p=2,q=1", diss, Regime.DISSIPATIVE)
    reached = all(o.t_final >= 50 for o in diss.values())
    bounded = [_bounded_h1(o) for o in diss.values()]
    h_ok = all(b for b, _ in bounded)
    blow = _runs("ks_blowup")
    b_ok, b_txt = _expect("p=1,q=2", blow, Regime.BLOWUP)
    return d_ok and reached and h_ok and b_ok, (
        f"{d_txt} through T=50: {reached}, H1 max {max(v for _, v in bounded):.3f} "
        f"bounded: {h_ok}; {b_txt}")


def _c7_ch() -> tuple[bool, str]:
    d_ok, d_txt = _expect("p=2,q=1", _runs("ch_dissipative"), Regime.DISSIPATIVE)
    blow = _runs("ch_blowup")
    b_ok, b_txt = _expect("p=1,q=3", blow, Regime.BLOWUP)
    convex = {n: tail_increasing_convex(o.series["t"], o.series["ch_moment"])
              for n, o in blow.items()}
    c_ok = all(convex.values())
    return d_ok and b_ok and c_ok, f"{d_txt}; {b_txt}; moment tail increasing+convex {convex}"


def flux_residual_study(cfg: RunConfig) -> tuple[list, list]:
    """max |energy-flux residual| for each configured resolution."""
    spec = cfg.equation()
    maxima = []
    for n in cfg.resolutions:
        out, grid = run_config(cfg, n, keep_snapshots=True)
        r = kdv_energy_flux_residual(grid, out.series["t"], out.snapshots, spec)
        maxima.append(float(np.max(np.abs(r))))
    return list(cfg.resolutions), maxima


def _c8_kdv() -> tuple[bool, str]:
    smooth = _runs("kdv_smoothing")
    d_ok, d_txt = _expect("p=2,q=1 rough data", smooth, Regime.DISSIPATIVE)
    h3 = {n: float(o.series["H3"][-1]) for n, o in smooth.items()}
    vals = list(h3.values())
    h_ok = all(math.isfinite(v) for v in vals) and abs(vals[0] - vals[1]) <= 0.2 * abs(vals[1])
    b_ok, b_txt = _expect("p=1,q=2", _runs("kdv_blowup"), Regime.BLOWUP)
    res, maxima = flux_residual_study(load_scenario("kdv_energy_flux"))
    order = observed_order([2.0 / n for n in res], maxima)
    ok = d_ok and h_ok and b_ok and order >= 1
    h3_txt = ", ".join(f"n={n}:{v:.4g}" for n, v in h3.items())
    return ok, (f"{d_txt} H3(t=1) {h3_txt}; {b_txt}; flux residual max "
                f"{', '.join(f'{m:.2e}' for m in maxima)} order {order:.2f}")


def _c9_estimator() -> tuple[bool, str]:
    t = np.linspace(0.5, 0.95, 20)
    T_exact = estimate_blowup_time(t, 1 / (1 - t), 1.0)
    rng = np.random.default_rng(20240607)
    noisy = (1 / (1 - t)) * (1 + 0.01 * rng.uniform(-1, 1, t.size))
    try:
        T_noisy = estimate_blowup_time(t, noisy, 1.0)
    except FitFailed as exc:
        return False, f"noisy fit failed: {exc}"
    ok = abs(T_exact - 1.0) <= 1e-12 and abs(T_noisy - 1.0) <= 0.02
    return ok, f"exact T_est {T_exact:.15f}; 1% noise T_est {T_noisy:.4f}"


def _c10_weighted_identity() -> tuple[bool, str]:
    parts, ok = [], True
    for p in (1.0, 2.0):
        res, ns = [], (64, 128, 256)
        for n in ns:
            g = make_grid(n)
            x = g.nodes
            u = np.sin(np.pi * (x + 1) / 2) * (1 + 0.3 * x)
            res.append(abs(weighted_flux_residual(g, u, p, 1.0)))
        order = observed_order([2.0 / n for n in ns], res)
        ok = ok and order >= 1.8
        parts.append(f"p={p:g} order {order:.3f}")
    return ok, "; ".join(parts)


CRITERIA: list[tuple[int, str, Callable[[], tuple[bool, str]]]] = [
    (1, "operator and quadrature accuracy", _c1_operators),
    (2, "linear decay oracle", _c2_heat),
    (3, "manufactured-solution convergence", _c3_mms),
    (4, "Burgers dichotomy", _c4_burgers),
    (5, "convection ablation", _c5_ablation),
    (6, "KS dichotomy", _c6_ks),
    (7, "CH dichotomy", _c7_ch),
    (8, "KdV dichotomy and smoothing", _c8_kdv),
    (9, "blow-up time estimator", _c9_estimator),
    (10, "weighted flux identity", _c10_weighted_identity),
]


def run_criterion(number: int) -> CriterionResult:
    for num, name, fn in CRITERIA:
        if num == number:
            t0 = time.perf_counter()
            try:
                ok, detail = fn()
            except Exception as exc:  # report, never crash the suite
                ok, detail = False, f"error: {type(exc).__name__}: {exc}"
            return CriterionResult(num, name, bool(ok), detail, time.perf_counter() - t0)
    raise KeyError(f"no acceptance criterion {number}")


def run_all(numbers=None, echo: Optional[Callable[[str], None]] = None) -> list[CriterionResult]:
    results = []
    for num, _, _ in CRITERIA:
        if numbers is not None and num not in numbers:
            continue
        r = run_criterion(num)
        if echo is not None:
            echo(r.line())
        results.append(r)
    return results
