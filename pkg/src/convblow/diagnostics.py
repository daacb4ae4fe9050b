"""Norms and functionals recorded along trajectories.

Diagnostic ids are stable strings used as CSV headers: ``t, L2, Linf,
Ls_<s>, WL2p, WL2m, moment, ch_moment, H1, H2, H3, kdv_energy,
flux_residual``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grid_ops import BcScheme, Grid, boundary_derivative, check_field, derivative_field, quad_trapz
from .models import EquationSpec, FKind, FluxForm, GKind, Model


class DiagnosticsError(ValueError):
    pass


# -- basic norms --------------------------------------------------------------

def lebesgue_norm(grid: Grid, u, s: float = 2.0) -> float:
    if s < 1:
        raise DiagnosticsError("Lebesgue exponent must be >= 1")
    u = check_field(grid, u)
    return quad_trapz(grid, np.abs(u) ** s) ** (1.0 / s)


def sup_norm(u) -> float:
    return float(np.max(np.abs(u)))


def weighted_norm(grid: Grid, u, s: float, L: float, sign: str = "+") -> float:
    """L^s norm with weight exp(-L x) (sign '+') or exp(+L x) (sign '-')."""
    if s < 1:
        raise DiagnosticsError("Lebesgue exponent must be >= 1")
    if sign not in ("+", "-"):
        raise DiagnosticsError("sign must be '+' or '-'")
    u = check_field(grid, u)
    w = np.exp((-L if sign == "+" else L) * grid.nodes)
    return quad_trapz(grid, np.abs(u) ** s * w) ** (1.0 / s)


def split_weighted_norm(grid: Grid, u, s: float, L: float) -> tuple[float, float]:
    """Norms of the positive part (weight e^{-Lx}) and negative part (weight e^{Lx})."""
    u = check_field(grid, u)
    up = np.maximum(u, 0.0)
    return weighted_norm(grid, up, s, L, "+"), weighted_norm(grid, u - up, s, L, "-")


# -- moment functionals -------------------------------------------------------

@dataclass(frozen=True)
class PowerWeight:
    """phi(x) = (eps^2 - x^2)^n on (-eps, eps), zero outside."""

    epsilon: float = 1.0
    n: int = 2

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise DiagnosticsError("PowerWeight epsilon must lie in (0, 1]")
        if int(self.n) != self.n or self.n < 1:
            raise DiagnosticsError("PowerWeight n must be a positive integer")

    diag_id = "moment"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) < self.epsilon, (self.epsilon**2 - x**2) ** self.n, 0.0)


@dataclass(frozen=True)
class ChWeight:
    """phi(x) = (1 - x^2)(x^4 - 14 x^2 + 61), the Cahn-Hilliard blow-up weight."""

    diag_id = "ch_moment"

    # coefficients of -x^6 + 15 x^4 - 75 x^2 + 61, highest degree first
    coeffs = (-1.0, 0.0, 15.0, 0.0, -75.0, 0.0, 61.0)

    def __call__(self, x):
        return np.polyval(self.coeffs, np.asarray(x, dtype=float))

    def derivative(self, x, k: int):
        return np.polyval(np.polyder(self.coeffs, k), np.asarray(x, dtype=float))


MomentSpec = PowerWeight | ChWeight


def moment(grid: Grid, u, spec: MomentSpec) -> float:
    u = check_field(grid, u)
    return quad_trapz(grid, u * spec(grid.nodes))


def _ceil(x: float) -> int:
    return math.ceil(x - 1e-12)


def min_moment_order(kind: str, p: float, q: float) -> int:
    """Smallest power n for the blow-up weight (eps^2 - x^2)^n.

    ``kind`` is ``"second_order"`` (Burgers) or ``"fourth_order"`` (KS, and
    KdV which reuses the same argument).
    """
    if not q > 0:
        raise DiagnosticsError("q must be positive")
    if not q > p:
        raise DiagnosticsError(f"q > p required for a blow-up weight (p={p}, q={q})")
    n = max(_ceil((q + 1) / (q - p)), _ceil(2 * (q + 1) / q))
    if kind == "fourth_order":
        n = max(n, math.floor(4 * (q + 1) / q + 1e-12) + 1)
    elif kind != "second_order":
        raise DiagnosticsError(f"unknown model kind {kind!r}")
    return n


def tail_increasing_convex(times, values, k: int = 5) -> bool:
    """True when the last ``k`` samples have positive, increasing slopes.

    Uses divided differences so unevenly spaced final samples (e.g. the one
    recorded at blow-up detection) are handled correctly.
    """
    if k < 3:
        raise DiagnosticsError("need at least 3 samples to test convexity")
    t = np.asarray(times, dtype=float)[-k:]
    v = np.asarray(values, dtype=float)[-k:]
    if t.size < k or not np.all(np.isfinite(v)):
        return False
    slopes = np.diff(v) / np.diff(t)
    return bool(np.all(slopes > 0) and np.all(np.diff(slopes) > 0))


# -- derivatives and energies -------------------------------------------------

def sobolev_seminorm(grid: Grid, u, k: int, bc: BcScheme = BcScheme.DIRICHLET_PAIR) -> float:
    """L2 norm of the k-th discrete derivative."""
    if k not in (1, 2, 3):
        raise DiagnosticsError("Sobolev order must be 1, 2 or 3")
    d = derivative_field(grid, u, k, bc)
    return math.sqrt(quad_trapz(grid, d * d))


def kdv_energy(grid: Grid, u, p: float, a: float = 1.0) -> float:
    """Integral of |u_x|^2 / 2 + a |u|^(p+2) / (p+2)."""
    if p < 0:
        raise DiagnosticsError("p must be non-negative")
    u = check_field(grid, u)
    ux = derivative_field(grid, u, 1, BcScheme.KDV_MIXED)
    return quad_trapz(grid, 0.5 * ux**2 + a * np.abs(u) ** (p + 2) / (p + 2))


def kdv_energy_flux_residual(grid: Grid, times, snapshots, spec: EquationSpec) -> np.ndarray:
    """Residual of the integrated energy-flux law over each recorded interval.

    For u_t + u_xxx = a (u|u|^p)_x with u(+-1) = 0 the energy obeys
    dE/dt = (u_xx(1)^2 - u_xx(-1)^2) / 2. Boundary terms use one-sided second
    derivatives averaged over the interval endpoints.
    """
    if spec.model is not Model.KDV:
        raise DiagnosticsError("energy-flux residual is defined for the KdV model only")
    if spec.f.kind is not FKind.ZERO or spec.g.kind is not GKind.ZERO:
        raise DiagnosticsError("energy-flux law needs f = 0 and g = 0")
    if spec.flux_form is not FluxForm.SIGNED:
        raise DiagnosticsError("energy-flux law needs the signed flux u|u|^p")
    times = np.asarray(times, dtype=float)
    if times.size < 2 or len(snapshots) != times.size:
        raise DiagnosticsError("need at least two aligned snapshots")
    energy = np.array([kdv_energy(grid, u, spec.p, spec.a) for u in snapshots])
    bflux = np.array(
        [0.5 * (r**2 - l**2) for l, r in (boundary_derivative(grid, u, 2) for u in snapshots)]
    )
    return np.diff(energy) / np.diff(times) - 0.5 * (bflux[1:] + bflux[:-1])


# -- series and fits ----------------------------------------------------------

@dataclass
class NormSeries:
    times: list = field(default_factory=list)
    values: dict = field(default_factory=dict)
    blowup_tail: bool = False

    def append(self, t: float, row: dict):
        if self.times and not t > self.times[-1]:
            raise DiagnosticsError("series times must be strictly increasing")
        if not self.values:
            self.values = {k: [] for k in row}
        elif set(row) != set(self.values):
            raise DiagnosticsError("diagnostic keys changed mid-series")
        self.times.append(float(t))
        for k, v in row.items():
            self.values[k].append(float(v))

    def __len__(self):
        return len(self.times)

    def __getitem__(self, key) -> np.ndarray:
        if key == "t":
            return np.asarray(self.times)
        return np.asarray(self.values[key])

    @property
    def keys(self) -> list:
        return ["t", *self.values]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.keys)
            cols = [self.times] + [self.values[k] for k in self.values]
            for row in zip(*cols):
                w.writerow([f"{v:.17g}" for v in row])


@dataclass(frozen=True)
class FitReport:
    """Empirical surrogates for the decay rate and the absorbing bound."""

    decay_rate: float
    asymptotic_bound: float
    residual: float


def fit_dissipative(series: NormSeries, key: str = "L2") -> FitReport:
    """Tail-max bound plus transient log-slope; deliberately crude."""
    if series.blowup_tail:
        raise DiagnosticsError("series ends in blow-up; fit only completed runs")
    if len(series) < 10:
        raise DiagnosticsError("need at least 10 samples to fit")
    t, v = series["t"], series[key]
    if not np.all(np.isfinite(v)):
        raise DiagnosticsError("series contains non-finite values")
    m = len(v)
    bound = float(np.max(v[m - max(1, m // 4):]))
    excess = v[: m // 2] - 0.99 * bound
    ok = excess > 0
    rate, resid = 0.0, 0.0
    if ok.sum() >= 2:
        tt, ly = t[: m // 2][ok], np.log(excess[ok])
        slope, icpt = np.polyfit(tt, ly, 1)
        resid = float(np.sqrt(np.mean((ly - (slope * tt + icpt)) ** 2)))
        rate = max(0.0, -float(slope))
    return FitReport(decay_rate=rate, asymptotic_bound=max(bound, 0.0), residual=resid)


# -- recording along a run ----------------------------------------------------

@dataclass(frozen=True)
class DiagnosticsConfig:
    L_weight: Optional[float] = None
    s_list: Sequence[float] = ()
    moment: Optional[MomentSpec] = None
    kdv_energy: bool = False
    sobolev: Sequence[int] = ()

    def __post_init__(self):
        if any(s < 1 for s in self.s_list):
            raise DiagnosticsError("every Lebesgue exponent must be >= 1")
        if self.L_weight is not None and not math.isfinite(self.L_weight):
            raise DiagnosticsError("L_weight must be finite")
        if any(k not in (1, 2, 3) for k in self.sobolev):
            raise DiagnosticsError("Sobolev orders must be drawn from {1, 2, 3}")

    def resolved_L(self, spec: EquationSpec) -> float:
        if self.L_weight is not None:
            return self.L_weight
        if spec.model is Model.BURGERS and spec.f.kind is FKind.QUADRATIC_K:
            return spec.f.coef + 1.0
        return 1.0


def _s_label(s: float) -> str:
    return f"Ls_{s:g}"


class Recorder:
    """Evaluates the configured diagnostics on a field."""

    def __init__(self, spec: EquationSpec, grid: Grid, config: DiagnosticsConfig):
        if 3 in config.sobolev and spec.bc is not BcScheme.KDV_MIXED:
            raise DiagnosticsError("H3 seminorm is only available for the KdV model")
        self.spec, self.grid, self.config = spec, grid, config
        self.L = config.resolved_L(spec)

    def __call__(self, u: np.ndarray) -> dict:
        g, c = self.grid, self.config
        row = {"L2": lebesgue_norm(g, u, 2.0), "Linf": sup_norm(u)}
        for s in c.s_list:
            row[_s_label(s)] = lebesgue_norm(g, u, s)
        row["WL2p"], row["WL2m"] = split_weighted_norm(g, u, 2.0, self.L)
        if c.moment is not None:
            row[c.moment.diag_id] = moment(g, u, c.moment)
        for k in sorted(set(c.sobolev)):
            row[f"H{k}"] = sobolev_seminorm(g, u, k, self.spec.bc)
        if c.kdv_energy:
            row["kdv_energy"] = kdv_energy(g, u, self.spec.p, self.spec.a)
        return row
