"""IMEX time stepping with step-doubling error control and blow-up detection."""

from __future__ import annotations

import enum
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg.lapack import dgbtrf, dgbtrs

from .diagnostics import DiagnosticsConfig, NormSeries, Recorder, sup_norm
from .grid_ops import PIVOT_TOL, Grid, LinearSolveError, check_field
from .models import EquationSpec, NonlinearPart, OverflowDetected, linear_operator

log = logging.getLogger(__name__)


class Scheme(enum.Enum):
    EULER1 = "euler1"
    CNAB2 = "cnab2"

    @property
    def order(self) -> int:
        return 1 if self is Scheme.EULER1 else 2


@dataclass(frozen=True)
class StepControls:
    dt_init: float = 1e-4
    dt_min: float = 1e-12
    dt_max: float = 0.05
    tol: float = 1e-6
    safety: float = 0.9
    t_max: float = 20.0
    blowup_threshold: float = 1e8
    record_every: float = 0.1
    scheme: Scheme = Scheme.CNAB2
    max_steps: int = 2_000_000

    def __post_init__(self):
        if isinstance(self.scheme, str):
            object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if not self.tol > 0 or not self.blowup_threshold > 0:
            raise ValueError("tol and blowup_threshold must be positive")
        if not 0 < self.safety <= 1:
            raise ValueError("safety factor must lie in (0, 1]")
        if not self.t_max > 0 or not self.record_every > 0:
            raise ValueError("t_max and record_every must be positive")


class OutcomeKind(enum.Enum):
    COMPLETED = "completed"
    BLOWUP = "blowup"
    INCONCLUSIVE = "inconclusive"


@dataclass
class RunOutcome:
    kind: OutcomeKind
    series: NormSeries
    t_final: float
    final: Optional[np.ndarray] = None
    t_detect: Optional[float] = None
    T_est: Optional[float] = None
    reason: Optional[str] = None
    note: str = ""
    n_steps: int = 0
    n_rejected: int = 0
    snapshots: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "outcome": self.kind.value,
            "t_final": self.t_final,
            "t_detect": self.t_detect,
            "T_est": self.T_est,
            "reason": self.reason,
            "note": self.note,
            "n_steps": self.n_steps,
            "n_rejected": self.n_rejected,
        }


class ImexStepper:
    """One-step IMEX maps for a fixed equation and grid.

    Factorizations of ``I - c L`` are cached for the few most recent ``c``.
    """

    _CACHE_SIZE = 6

    def __init__(self, spec: EquationSpec, grid: Grid):
        self.spec, self.grid = spec, grid
        self.L = linear_operator(spec, grid)
        self.N = NonlinearPart(spec, grid)
        self._Lfull = self.L.full
        kl, ku = self.L.bandwidths
        self.kl, self.ku = kl, ku
        a = self.L.interior.tocoo()
        n = grid.n_cells - 1
        band = np.zeros((2 * kl + ku + 1, n))
        band[kl + ku + a.row - a.col, a.col] = a.data
        self._band = band
        self._cache: dict[float, tuple] = {}

    def _factor(self, c: float):
        hit = self._cache.get(c)
        if hit is not None:
            return hit
        ab = -c * self._band
        ab[self.kl + self.ku, :] += 1.0
        lu, piv, info = dgbtrf(ab, self.kl, self.ku, overwrite_ab=1)
        if info > 0 or np.min(np.abs(lu[self.kl + self.ku, :])) < PIVOT_TOL:
            raise LinearSolveError(f"near-singular implicit system for c={c:.3e}")
        if len(self._cache) >= self._CACHE_SIZE:
            self._cache.pop(next(iter(self._cache)))
        self._cache[c] = (lu, piv)
        return lu, piv

    def _solve(self, c: float, rhs_int: np.ndarray) -> np.ndarray:
        lu, piv = self._factor(c)
        x, info = dgbtrs(lu, self.kl, self.ku, rhs_int, piv)
        if info != 0:
            raise LinearSolveError(f"banded solve failed (info={info})")
        out = np.zeros(self.grid.size)
        out[1:-1] = x
        if not np.all(np.isfinite(x)):
            raise OverflowDetected("non-finite value after implicit solve")
        return out

    def euler(self, u, dt, n_u):
        return self._solve(dt, u[1:-1] + dt * n_u[1:-1])

    def cnab(self, u, dt, n_u, n_prev, dt_prev):
        w = dt / dt_prev
        expl = (1 + 0.5 * w) * n_u[1:-1] - 0.5 * w * n_prev[1:-1]
        rhs = u[1:-1] + 0.5 * dt * (self._Lfull @ u) + dt * expl
        return self._solve(0.5 * dt, rhs)

    def step(self, u, t, dt, scheme: Scheme, history=None, n_u=None):
        """Advance one step; ``history`` is ``(N_prev, dt_prev)`` for CNAB2."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        if n_u is None:
            n_u = self.N(u, t)
        if scheme is Scheme.EULER1 or history is None:
            return self.euler(u, dt, n_u)
        return self.cnab(u, dt, n_u, history[0], history[1])


def step_imex(spec: EquationSpec, grid: Grid, u, t: float, dt: float,
              scheme: Scheme = Scheme.EULER1, history=None) -> np.ndarray:
    u = check_field(grid, u)
    return ImexStepper(spec, grid).step(u, t, dt, Scheme(scheme), history)


def adapt_dt(err_rel: float, dt: float, controls: StepControls, order: Optional[int] = None) -> float:
    """Step-size proposal from a relative error estimate, clamped to [dt_min, dt_max]."""
    if err_rel < 0:
        raise ValueError("error estimate must be non-negative")
    if err_rel == 0:
        return controls.dt_max
    k = controls.scheme.order if order is None else order
    dt_new = controls.safety * dt * (controls.tol / err_rel) ** (1.0 / (k + 1))
    return min(max(dt_new, controls.dt_min), controls.dt_max)


def detect_blowup(u, dt_proposed: float, controls: StepControls) -> Optional[str]:
    if not np.all(np.isfinite(u)):
        return "overflow"
    if sup_norm(u) > controls.blowup_threshold:
        return "threshold"
    if dt_proposed < controls.dt_min:
        return "dt-collapse"
    return None


class FitFailed(ValueError):
    pass


def estimate_blowup_time(times, sups, q_eff: float) -> float:
    """Blow-up time from a fit of sup|u| ~ (q alpha (T - t))^(-1/q).

    ``sup^-q`` is regressed linearly on ``t``; the zero crossing is returned.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(sups, dtype=float)
    if not q_eff > 0:
        raise FitFailed("q_eff must be positive")
    if t.size < 4:
        raise FitFailed("need at least 4 samples")
    if np.any(np.diff(y) <= 0) or np.any(np.diff(t) <= 0) or np.any(y <= 0):
        raise FitFailed("tail is not monotonically increasing")
    z = y ** (-q_eff)
    slope, icpt = np.polyfit(t, z, 1)
    if not slope < 0:
        raise FitFailed("fitted decay of sup^-q is not negative")
    return float(-icpt / slope)


def _monotone_tail(buf, max_len=40):
    ts, ys = zip(*buf)
    k = len(ys) - 1
    while k > 0 and ys[k - 1] < ys[k] and len(ys) - k < max_len:
        k -= 1
    return ts[k:], ys[k:]


def _growth_flag(series: NormSeries, t_max: float) -> bool:
    """True when sup|u| grew more than tenfold over the last 10% of the run."""
    t = series["t"]
    y = series["Linf"]
    mask = t <= 0.9 * t_max + 1e-12
    if not mask.any():
        return False
    ref = y[mask][-1]
    return bool(y[-1] > 10.0 * max(ref, np.finfo(float).tiny))


def integrate(spec: EquationSpec, grid: Grid, u0, controls: StepControls,
              diag: DiagnosticsConfig = DiagnosticsConfig(), *,
              keep_snapshots: bool = False) -> RunOutcome:
    """Adaptive IMEX integration from ``u0`` until ``t_max`` or blow-up.

    Each attempt compares one step of size dt with two steps of dt/2; the
    two-half-step result is kept on acceptance. Diagnostics are recorded at
    exact multiples of ``record_every`` (steps are shortened to land on them).
    """
    c = controls
    u = check_field(grid, u0).copy()
    u[0] = u[-1] = 0.0
    stepper = ImexStepper(spec, grid)
    recorder = Recorder(spec, grid, diag)
    series = NormSeries()
    snaps = []
    q_eff = spec.q

    t = 0.0
    series.append(t, recorder(u))
    if keep_snapshots:
        snaps.append(u.copy())
    k_rec = 1
    dt = c.dt_init
    history = None  # (N(u_n), dt of last accepted step)
    tail = deque(maxlen=64)
    tail.append((t, sup_norm(u)))
    n_steps = n_rej = 0
    scheme = c.scheme

    def finish(kind, **kw):
        series.blowup_tail = kind is OutcomeKind.BLOWUP
        return RunOutcome(kind, series, t, final=u.copy(), n_steps=n_steps,
                          n_rejected=n_rej, snapshots=snaps, **kw)

    def blowup(reason, t_detect, note=""):
        T_est = None
        try:
            ts, ys = _monotone_tail(tail)
            T_est = estimate_blowup_time(ts, ys, q_eff)
            if T_est < t_detect:
                T_est, note = None, (note + " blow-up time fit fell before detection").strip()
        except FitFailed as exc:
            note = (note + f" blow-up time fit failed: {exc}").strip()
        return finish(OutcomeKind.BLOWUP, t_detect=t_detect, T_est=T_est, reason=reason, note=note)

    reason = detect_blowup(u, dt, c)
    if reason is not None:
        return blowup(reason, t)

    while True:
        t_rec = min(k_rec * c.record_every, c.t_max)
        if n_steps >= c.max_steps:
            return finish(OutcomeKind.INCONCLUSIVE, note="step budget exhausted")
        h = min(dt, t_rec - t)
        landing = h < dt
        try:
            n_u = stepper.N(u, t)
            order = scheme.order if history is not None else 1
            big = stepper.step(u, t, h, scheme, history, n_u)
            half = stepper.step(u, t, 0.5 * h, scheme, history, n_u)
            n_half = stepper.N(half, t + 0.5 * h)
            small = stepper.step(half, t + 0.5 * h, 0.5 * h, scheme, (n_u, 0.5 * h), n_half)
        except OverflowDetected:
            return blowup("overflow", t)
        except LinearSolveError as exc:
            return finish(OutcomeKind.INCONCLUSIVE, note=f"linear solve failed: {exc}")

        scale = max(sup_norm(small), 1.0)
        err = sup_norm(small - big) / scale
        if not math.isfinite(err):
            return blowup("overflow", t)
        dt_new = adapt_dt(err, h, c, order)
        raw = c.safety * h * (c.tol / err) ** (1.0 / (order + 1)) if err > 0 else c.dt_max
        if err > c.tol:
            n_rej += 1
            if raw < c.dt_min:
                return blowup("dt-collapse", t)
            dt = dt_new
            continue

        # accept
        t_new = t_rec if landing or abs(t + h - t_rec) <= 1e-12 * max(1.0, t_rec) else t + h
        history = (n_u, h)
        u, t = small, t_new
        n_steps += 1
        tail.append((t, sup_norm(u)))
        dt = max(dt, dt_new) if landing and dt_new >= h else dt_new

        if t >= t_rec:
            series.append(t, recorder(u))
            if keep_snapshots:
                snaps.append(u.copy())
            k_rec += 1

        reason = detect_blowup(u, raw, c)
        if reason is not None:
            return blowup(reason, t)
        if t >= c.t_max:
            if _growth_flag(series, c.t_max):
                return finish(OutcomeKind.INCONCLUSIVE,
                              note="sup-norm grew more than 10x over the final 10% of the run")
            return finish(OutcomeKind.COMPLETED)


def integrate_fixed(spec: EquationSpec, grid: Grid, u0, dt: float, t_final: float,
                    scheme: Scheme = Scheme.CNAB2) -> np.ndarray:
    """Constant-step integration to ``t_final`` (used for temporal order studies)."""
    n = int(round(t_final / dt))
    if not math.isclose(n * dt, t_final, rel_tol=1e-9):
        raise ValueError("t_final must be an integer multiple of dt")
    stepper = ImexStepper(spec, grid)
    u = check_field(grid, u0).copy()
    u[0] = u[-1] = 0.0
    history = None
    for k in range(n):
        t = k * dt
        n_u = stepper.N(u, t)
        u_next = stepper.step(u, t, dt, scheme, history, n_u)
        history = (n_u, dt)
        u = u_next
    return u
