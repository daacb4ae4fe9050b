"""The four model equations written as ``u_t = L u + N(u, t)``.

``L`` is the constant-coefficient derivative part (treated implicitly) and
``N`` collects the convective flux, the reaction ``f`` and the forcing ``g``
(treated explicitly):

=========  ===========================  =====================================
model      L                            N(u)
=========  ===========================  =====================================
burgers    D2                           -a D1 flux(u) + f(u) + g
ks         -D4 - lambda D2              -a D1 flux(u) + f(u) + g
ch         -D4                          -D2 f(u) - a D1 flux(u) + g
kdv        -D3                          +a D1 flux(u) + f(u) + g
=========  ===========================  =====================================
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .grid_ops import (
    BandedOperator,
    BcScheme,
    Grid,
    check_field,
    diff_operator,
)


class SpecError(ValueError):
    pass


class OverflowDetected(ArithmeticError):
    """Non-finite values appeared while evaluating the nonlinear part."""


class Model(enum.Enum):
    BURGERS = "burgers"
    KS = "ks"
    CH = "ch"
    KDV = "kdv"

    @property
    def bc(self) -> BcScheme:
        return {
            "burgers": BcScheme.DIRICHLET_PAIR,
            "ks": BcScheme.SIMPLY_SUPPORTED,
            "ch": BcScheme.SIMPLY_SUPPORTED,
            "kdv": BcScheme.KDV_MIXED,
        }[self.value]


class FluxForm(enum.Enum):
    SIGNED = "signed"  # u |u|^p
    UNSIGNED = "unsigned"  # |u|^(p+1)


def flux(u, p: float, form: FluxForm = FluxForm.SIGNED):
    """Pointwise convective flux; works on scalars and arrays."""
    if p <= 0:
        raise SpecError("convective exponent p must be positive")
    au = np.abs(u)
    if form is FluxForm.SIGNED:
        return u * au**p
    return au ** (p + 1)


def flux_derivative(u, p: float, form: FluxForm = FluxForm.SIGNED):
    au = np.abs(u)
    if form is FluxForm.SIGNED:
        return (p + 1) * au**p
    return (p + 1) * au**p * np.sign(u)


class FKind(enum.Enum):
    ZERO = "zero"
    SIGNED_POWER = "signed_power"  # c u |u|^q
    ABS_POWER = "abs_power"  # c |u|^(q+1)
    QUADRATIC_K = "quadratic_k"  # k u^2


@dataclass(frozen=True)
class FSpec:
    kind: FKind = FKind.ZERO
    coef: float = 1.0
    q: float = 1.0

    def __post_init__(self):
        if self.kind in (FKind.SIGNED_POWER, FKind.ABS_POWER) and not self.q > 0:
            raise SpecError("reaction exponent q must be positive")

    @property
    def growth_exponent(self) -> float:
        """Exponent q in the growth bound |f(u)| <= C (1 + |u|^(q+1))."""
        if self.kind is FKind.QUADRATIC_K:
            return 1.0
        return self.q

    @classmethod
    def zero(cls):
        return cls(FKind.ZERO)

    @classmethod
    def signed_power(cls, q, c=1.0):
        return cls(FKind.SIGNED_POWER, c, q)

    @classmethod
    def abs_power(cls, q, c=1.0):
        return cls(FKind.ABS_POWER, c, q)

    @classmethod
    def quadratic(cls, k):
        return cls(FKind.QUADRATIC_K, k, 1.0)


def nonlinearity_eval(f: FSpec, u):
    if f.kind is FKind.ZERO:
        return 0.0 * u
    if f.kind is FKind.SIGNED_POWER:
        return f.coef * u * np.abs(u) ** f.q
    if f.kind is FKind.ABS_POWER:
        return f.coef * np.abs(u) ** (f.q + 1)
    return f.coef * u * u


def _f_prime(f: FSpec, u):
    if f.kind is FKind.ZERO:
        return 0.0 * u
    if f.kind is FKind.SIGNED_POWER:
        return f.coef * (f.q + 1) * np.abs(u) ** f.q
    if f.kind is FKind.ABS_POWER:
        return f.coef * (f.q + 1) * np.abs(u) ** f.q * np.sign(u)
    return 2 * f.coef * u


def _f_second(f: FSpec, u):
    if f.kind is FKind.ZERO:
        return 0.0 * u
    q = f.q
    if f.kind is FKind.SIGNED_POWER:
        return f.coef * (q + 1) * q * np.abs(u) ** (q - 1) * np.sign(u)
    if f.kind is FKind.ABS_POWER:
        return f.coef * (q + 1) * q * np.abs(u) ** (q - 1)
    return 2 * f.coef + 0.0 * u


class GKind(enum.Enum):
    ZERO = "zero"
    NODAL = "nodal"
    ANALYTIC = "analytic"


# Built-in time-independent forcing profiles, selectable by name from configs.
# Module-level functions (not lambdas) so specs pickle into worker processes.
def _g_sine(t, x):
    return np.sin(np.pi * (np.asarray(x, dtype=float) + 1) / 2)


def _g_one(t, x):
    return np.ones_like(np.asarray(x, dtype=float))


def _g_x(t, x):
    return np.asarray(x, dtype=float).copy()


G_PROFILES: dict[str, Callable[[float, np.ndarray], np.ndarray]] = {
    "sine": _g_sine,
    "one": _g_one,
    "x": _g_x,
}


@dataclass(frozen=True, eq=False)
class GSpec:
    kind: GKind = GKind.ZERO
    values: Optional[np.ndarray] = None
    func: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    name: str = "zero"
    scale: float = 1.0

    @classmethod
    def zero(cls):
        return cls()

    @classmethod
    def nodal(cls, values):
        v = np.array(values, dtype=float)
        v.flags.writeable = False
        return cls(GKind.NODAL, values=v, name="nodal")

    @classmethod
    def analytic(cls, func, name="analytic", scale=1.0):
        if isinstance(func, str):
            if func not in G_PROFILES:
                raise SpecError(f"unknown forcing profile {func!r}")
            name, func = func, G_PROFILES[func]
        return cls(GKind.ANALYTIC, func=func, name=name, scale=scale)

    def sample(self, grid: Grid, t: float) -> np.ndarray:
        if self.kind is GKind.ZERO:
            return np.zeros(grid.size)
        if self.kind is GKind.NODAL:
            return check_field(grid, self.values)
        return self.scale * np.asarray(self.func(t, grid.nodes), dtype=float)

    def l2_norm(self, grid: Grid, t: float = 0.0) -> float:
        from .grid_ops import quad_trapz

        return float(np.sqrt(quad_trapz(grid, self.sample(grid, t) ** 2)))


@dataclass(frozen=True)
class EquationSpec:
    model: Model
    p: float = 1.0
    a: float = 1.0
    flux_form: FluxForm = FluxForm.SIGNED
    lam: float = 0.0
    f: FSpec = field(default_factory=FSpec)
    g: GSpec = field(default_factory=GSpec)

    def __post_init__(self):
        if isinstance(self.model, str):
            object.__setattr__(self, "model", Model(self.model))
        if not self.p > 0:
            raise SpecError("convective exponent p must be positive")
        if self.a < 0:
            raise SpecError("convection strength a must be non-negative")
        if self.lam != 0.0 and self.model is not Model.KS:
            raise SpecError("lambda is only meaningful for the KS model")

    @property
    def bc(self) -> BcScheme:
        return self.model.bc

    @property
    def q(self) -> float:
        return self.f.growth_exponent

    def with_(self, **changes) -> "EquationSpec":
        return replace(self, **changes)


def linear_operator(spec: EquationSpec, grid: Grid) -> BandedOperator:
    bc = spec.bc
    if spec.model is Model.BURGERS:
        return diff_operator(grid, 2, bc)
    if spec.model is Model.KS:
        op = -diff_operator(grid, 4, bc)
        if spec.lam != 0.0:
            op = op - spec.lam * diff_operator(grid, 2, bc)
        return op
    if spec.model is Model.CH:
        return -diff_operator(grid, 4, bc)
    return -diff_operator(grid, 3, bc)


class NonlinearPart:
    """Callable ``N(u, t)`` with the first-derivative operators prebuilt."""

    def __init__(self, spec: EquationSpec, grid: Grid):
        self.spec, self.grid = spec, grid
        self.d1 = diff_operator(grid, 1, spec.bc)
        self.d2 = diff_operator(grid, 2, spec.bc) if spec.model is Model.CH else None

    def __call__(self, u: np.ndarray, t: float, include_g: bool = True) -> np.ndarray:
        spec = self.spec
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.zeros_like(u)
            if spec.a != 0.0:
                conv = spec.a * (self.d1.full @ flux(u, spec.p, spec.flux_form))
                out[1:-1] += conv if spec.model is Model.KDV else -conv
            fu = nonlinearity_eval(spec.f, u)
            if spec.model is Model.CH:
                if spec.f.kind is not FKind.ZERO:
                    out[1:-1] -= self.d2.full @ fu
            else:
                out[1:-1] += fu[1:-1]
            if include_g and spec.g.kind is not GKind.ZERO:
                out[1:-1] += spec.g.sample(self.grid, t)[1:-1]
        if not np.all(np.isfinite(out)):
            raise OverflowDetected("non-finite value in nonlinear right-hand side")
        return out


def nonlinear_rhs(spec: EquationSpec, grid: Grid, u, t: float = 0.0) -> np.ndarray:
    u = check_field(grid, u)
    return NonlinearPart(spec, grid)(u, t)


@dataclass(frozen=True, eq=False)
class ManufacturedSolution:
    """Exact space-time solution given as a sympy expression in ``t`` and ``x``.

    Derivatives up to fourth order in ``x`` and first order in ``t`` are
    generated symbolically and lambdified for nodal evaluation.
    """

    expr: str
    _funcs: dict = field(init=False, repr=False)

    def __post_init__(self):
        import sympy

        t, x = sympy.symbols("t x", real=True)
        e = sympy.sympify(self.expr, locals={"t": t, "x": x})
        funcs = {"u": e, "u_t": sympy.diff(e, t)}
        for k in range(1, 5):
            funcs[f"u_{'x' * k}"] = sympy.diff(e, x, k)
        lam = {k: sympy.lambdify((t, x), v, "numpy") for k, v in funcs.items()}
        object.__setattr__(self, "_funcs", lam)

    def __call__(self, which: str, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self._funcs[which](t, x), dtype=float), x.shape).copy()

    def check_bc(self, bc: BcScheme, times=(0.0, 0.37, 1.0), atol: float = 1e-10):
        ends = np.array([-1.0, 1.0])
        for t in times:
            checks = [("u", self("u", t, ends))]
            if bc is BcScheme.SIMPLY_SUPPORTED:
                checks.append(("u_xx", self("u_xx", t, ends)))
            elif bc is BcScheme.KDV_MIXED:
                checks.append(("u_x", self("u_x", t, ends[1:])))
            for name, vals in checks:
                if np.max(np.abs(vals)) > atol:
                    raise SpecError(
                        f"exact solution violates {bc.name}: {name}={vals} at t={t}"
                    )


def _continuous_linear(spec: EquationSpec, ms: ManufacturedSolution, t, x):
    m = spec.model
    if m is Model.BURGERS:
        return ms("u_xx", t, x)
    if m is Model.KS:
        return -ms("u_xxxx", t, x) - spec.lam * ms("u_xx", t, x)
    if m is Model.CH:
        return -ms("u_xxxx", t, x)
    return -ms("u_xxx", t, x)


def _continuous_nonlinear(spec: EquationSpec, ms: ManufacturedSolution, t, x):
    u, ux = ms("u", t, x), ms("u_x", t, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        conv = spec.a * flux_derivative(u, spec.p, spec.flux_form) * ux
        if spec.model is Model.CH:
            uxx = ms("u_xx", t, x)
            react = -(_f_second(spec.f, u) * ux**2 + _f_prime(spec.f, u) * uxx)
        else:
            react = nonlinearity_eval(spec.f, u)
    conv = conv if spec.model is Model.KDV else -conv
    return conv + react


def mms_forcing(spec: EquationSpec, exact) -> GSpec:
    """Forcing that makes ``exact`` solve the continuous equation."""
    ms = exact if isinstance(exact, ManufacturedSolution) else ManufacturedSolution(exact)
    ms.check_bc(spec.bc)

    def g(t, x):
        val = (
            ms("u_t", t, x)
            - _continuous_linear(spec, ms, t, x)
            - _continuous_nonlinear(spec, ms, t, x)
        )
        return np.where(np.isfinite(val), val, 0.0)

    return GSpec.analytic(g, name=f"mms[{ms.expr}]")


def weighted_flux_residual(grid: Grid, u, p: float, L: float,
                           form: FluxForm = FluxForm.SIGNED) -> float:
    """Discrete defect of the weighted convective cancellation.

    For smooth u vanishing at +-1, integration by parts gives
    int d/dx(u|u|^p) u e^{-Lx} = (p+1)/(p+2) L int |u|^{p+2} e^{-Lx}.
    Returns the difference of the two sides computed with D1 and the
    trapezoid rule; it should vanish at O(h^2).
    """
    from .grid_ops import diff_operator, quad_trapz

    u = check_field(grid, u)
    w = np.exp(-L * grid.nodes)
    d1 = diff_operator(grid, 1, BcScheme.DIRICHLET_PAIR)
    lhs = quad_trapz(grid, d1(flux(u, p, form)) * u * w)
    rhs = (p + 1) / (p + 2) * L * quad_trapz(grid, np.abs(u) ** (p + 2) * w)
    return float(lhs - rhs)
