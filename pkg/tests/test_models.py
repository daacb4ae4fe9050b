import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convblow.grid_ops import BcScheme, diff_operator, make_grid
from convblow.models import (
    EquationSpec,
    FluxForm,
    FSpec,
    GKind,
    GSpec,
    ManufacturedSolution,
    Model,
    OverflowDetected,
    SpecError,
    flux,
    linear_operator,
    mms_forcing,
    nonlinear_rhs,
    nonlinearity_eval,
    weighted_flux_residual,
)
from convblow.stepper import Scheme, step_imex

SINE = "exp(-t)*sin(pi*(x+1)/2)"


# -- pointwise pieces ---------------------------------------------------------

@pytest.mark.parametrize("u,form,expected", [
    (2.0, FluxForm.SIGNED, 4.0), (2.0, FluxForm.UNSIGNED, 4.0),
    (-2.0, FluxForm.SIGNED, -4.0), (-2.0, FluxForm.UNSIGNED, 4.0),
])
def test_flux_examples(u, form, expected):
    assert flux(u, 1.0, form) == expected


@pytest.mark.parametrize("p", [0.1, 1.0, 2.5])
def test_flux_vanishes_at_zero(p):
    assert flux(0.0, p, FluxForm.SIGNED) == 0.0
    assert flux(0.0, p, FluxForm.UNSIGNED) == 0.0


def test_flux_rejects_nonpositive_p():
    with pytest.raises(SpecError):
        flux(1.0, 0.0)


@given(st.floats(-1e3, 1e3), st.floats(0.1, 4))
def test_flux_parity(u, p):
    assert flux(-u, p, FluxForm.SIGNED) == -flux(u, p, FluxForm.SIGNED)
    assert flux(-u, p, FluxForm.UNSIGNED) == flux(u, p, FluxForm.UNSIGNED)


@pytest.mark.parametrize("f,u,expected", [
    (FSpec.abs_power(2, 1.0), -2.0, 8.0),
    (FSpec.signed_power(2, 1.0), -2.0, -8.0),
    (FSpec.quadratic(3.0), 2.0, 12.0),
    (FSpec.zero(), 5.0, 0.0),
])
def test_nonlinearity_examples(f, u, expected):
    assert nonlinearity_eval(f, u) == expected


@given(st.sampled_from(["signed", "abs"]), st.floats(0.1, 4), st.floats(-3, 3), st.floats(-1e3, 1e3))
def test_growth_bound(kind, q, c, u):
    f = FSpec.signed_power(q, c) if kind == "signed" else FSpec.abs_power(q, c)
    assert abs(nonlinearity_eval(f, u)) <= (abs(c) + 1e-12) * (1 + abs(u) ** (q + 1)) * (1 + 1e-12)


def test_quadratic_growth_exponent():
    assert FSpec.quadratic(2.0).growth_exponent == 1
    assert FSpec.abs_power(3.0).growth_exponent == 3.0


# -- equation spec ------------------------------------------------------------

def test_model_fixes_boundary_conditions():
    assert EquationSpec(Model.BURGERS).bc is BcScheme.DIRICHLET_PAIR
    assert EquationSpec(Model.KS).bc is BcScheme.SIMPLY_SUPPORTED
    assert EquationSpec(Model.CH).bc is BcScheme.SIMPLY_SUPPORTED
    assert EquationSpec(Model.KDV).bc is BcScheme.KDV_MIXED


def test_spec_validation():
    with pytest.raises(SpecError):
        EquationSpec(Model.BURGERS, p=0.0)
    with pytest.raises(SpecError):
        EquationSpec(Model.BURGERS, a=-1.0)
    with pytest.raises(SpecError):
        EquationSpec(Model.KDV, lam=2.0)
    EquationSpec(Model.KS, lam=-3.0)  # signed lambda allowed for KS


def test_linear_operators():
    g = make_grid(16)
    ss = BcScheme.SIMPLY_SUPPORTED
    d2 = lambda bc: diff_operator(g, 2, bc).dense()  # noqa: E731
    np.testing.assert_array_equal(linear_operator(EquationSpec(Model.BURGERS), g).dense(),
                                  d2(BcScheme.DIRICHLET_PAIR))
    np.testing.assert_allclose(linear_operator(EquationSpec(Model.KS, lam=2.0), g).dense(),
                               -diff_operator(g, 4, ss).dense() - 2 * d2(ss))
    np.testing.assert_array_equal(linear_operator(EquationSpec(Model.CH), g).dense(),
                                  -diff_operator(g, 4, ss).dense())
    np.testing.assert_array_equal(linear_operator(EquationSpec(Model.KDV), g).dense(),
                                  -diff_operator(g, 3, BcScheme.KDV_MIXED).dense())


# -- nonlinear part -----------------------------------------------------------

@pytest.mark.parametrize("model", list(Model))
def test_nonlinear_part_vanishes_at_zero(model):
    g = make_grid(32)
    assert np.all(nonlinear_rhs(EquationSpec(model), g, np.zeros(g.size), 0.0) == 0)


def test_burgers_convection_matches_analytic():
    # sin(pi x) crosses zero at x = 0 where u|u| loses its second derivative,
    # so the central difference is first order there and second order elsewhere
    spec = EquationSpec(Model.BURGERS, p=1.0)
    glob, away = [], []
    for n in (64, 128, 256):
        g = make_grid(n)
        x = g.nodes
        u = np.sin(np.pi * x)
        exact = -2 * np.abs(u) * np.pi * np.cos(np.pi * x)
        err = np.abs(nonlinear_rhs(spec, g, u, 0.0) - exact)[1:-1]
        glob.append(err.max())
        away.append(err[np.abs(x[1:-1]) > 0.1].max())
    assert math.log2(away[1] / away[2]) >= 1.8
    assert math.log2(glob[1] / glob[2]) >= 0.9


def test_ch_nonlinearity_matches_analytic():
    spec = EquationSpec(Model.CH, p=1.0, a=0.0, f=FSpec.signed_power(1, 1.0))
    errs = []
    for n in (64, 128, 256):
        g = make_grid(n)
        x = g.nodes
        u = x * (1 - x**2)
        up, upp = 1 - 3 * x**2, -6 * x
        exact = -2 * (np.sign(u) * up**2 + np.abs(u) * upp)  # -(u|u|)''
        errs.append(np.max(np.abs(nonlinear_rhs(spec, g, u, 0.0) - exact)[1:-1]))
    assert math.log2(errs[1] / errs[2]) >= 1.8


def test_kdv_convection_sign():
    g = make_grid(64)
    u = np.sin(np.pi * (g.nodes + 1) / 2) * (1 - g.nodes)
    burg = nonlinear_rhs(EquationSpec(Model.BURGERS, p=1.0), g, u, 0.0)
    kdv = nonlinear_rhs(EquationSpec(Model.KDV, p=1.0), g, u, 0.0)
    np.testing.assert_allclose(kdv, -burg)


def test_overflow_reported():
    g = make_grid(16)
    u = np.full(g.size, 1e200)
    u[0] = u[-1] = 0
    with pytest.raises(OverflowDetected):
        nonlinear_rhs(EquationSpec(Model.BURGERS, p=2.0), g, u, 0.0)


def test_forcing_added():
    g = make_grid(16)
    spec = EquationSpec(Model.BURGERS, a=0.0, g=GSpec.analytic("one", scale=3.0))
    np.testing.assert_allclose(nonlinear_rhs(spec, g, np.zeros(g.size), 0.0)[1:-1], 3.0)


def test_nodal_forcing_length_checked():
    g = make_grid(16)
    spec = EquationSpec(Model.BURGERS, g=GSpec.nodal(np.ones(10)))
    with pytest.raises(ValueError):
        nonlinear_rhs(spec, g, np.zeros(g.size), 0.0)


def test_builtin_forcing_pickles():
    gs = GSpec.analytic("sine")
    clone = pickle.loads(pickle.dumps(EquationSpec(Model.KS, g=gs)))
    assert clone.g.kind is GKind.ANALYTIC
    g = make_grid(8)
    np.testing.assert_array_equal(clone.g.sample(g, 0.0), gs.sample(g, 0.0))


# -- invariants ---------------------------------------------------------------

def _ks_field(coeffs, x):
    return sum(c * np.sin((k + 1) * np.pi * (x + 1) / 2) for k, c in enumerate(coeffs))


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.sampled_from([Scheme.EULER1, Scheme.CNAB2]))
def test_ks_reflection_equivariance_even_flux(coeffs, scheme):
    # u(x) -> -u(-x) maps solutions to solutions when the flux is even in u
    g = make_grid(64)
    u = _ks_field(coeffs, g.nodes)
    spec = EquationSpec(Model.KS, p=1.0, lam=4.0, flux_form=FluxForm.UNSIGNED)
    a = step_imex(spec, g, u, 0.0, 1e-3, scheme)
    b = step_imex(spec, g, -u[::-1], 0.0, 1e-3, scheme)
    np.testing.assert_allclose(b, -a[::-1], atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.sampled_from([Scheme.EULER1, Scheme.CNAB2]))
def test_ks_sign_equivariance_odd_flux(coeffs, scheme):
    # with the odd flux u|u|^p the symmetry is u -> -u; the discrete step keeps it
    g = make_grid(64)
    u = _ks_field(coeffs, g.nodes)
    spec = EquationSpec(Model.KS, p=1.0, lam=4.0)
    a = step_imex(spec, g, u, 0.0, 1e-3, scheme)
    b = step_imex(spec, g, -u, 0.0, 1e-3, scheme)
    np.testing.assert_allclose(b, -a, atol=1e-8)


def test_odd_flux_breaks_reflection_symmetry():
    g = make_grid(64)
    u = _ks_field([0, 0, 0, 1.0], g.nodes)
    spec = EquationSpec(Model.KS, p=1.0, lam=4.0)
    a = step_imex(spec, g, u, 0.0, 1e-3, Scheme.EULER1)
    b = step_imex(spec, g, -u[::-1], 0.0, 1e-3, Scheme.EULER1)
    assert np.max(np.abs(b + a[::-1])) > 1e-4


def test_pure_linear_burgers_decays_monotonically():
    g = make_grid(64)
    spec = EquationSpec(Model.BURGERS, a=0.0)
    u = np.random.default_rng(3).standard_normal(g.size)
    u[0] = u[-1] = 0
    norms = []
    for k in range(30):
        u = step_imex(spec, g, u, 0.0, 1e-3, Scheme.EULER1)
        norms.append(np.sqrt(g.h * np.sum(u**2)))
    assert np.all(np.diff(norms) < 0)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
def test_weighted_flux_identity_converges(p):
    res = []
    for n in (64, 128, 256):
        g = make_grid(n)
        x = g.nodes
        u = np.sin(np.pi * (x + 1) / 2) * (1 + 0.3 * x)
        res.append(abs(weighted_flux_residual(g, u, p, 1.0)))
    assert math.log2(res[1] / res[2]) >= 1.8


# -- manufactured solutions ---------------------------------------------------

def test_manufactured_derivatives():
    ms = ManufacturedSolution(SINE)
    x = np.linspace(-1, 1, 7)
    k = np.pi / 2
    np.testing.assert_allclose(ms("u_t", 0.3, x), -np.exp(-0.3) * np.sin(k * (x + 1)))
    np.testing.assert_allclose(ms("u_xx", 0.3, x), -k**2 * np.exp(-0.3) * np.sin(k * (x + 1)))


def test_mms_forcing_heat():
    spec = EquationSpec(Model.BURGERS, a=0.0)
    g = mms_forcing(spec, SINE)
    x = np.linspace(-1, 1, 9)
    expected = (-1 + np.pi**2 / 4) * np.exp(-0.7) * np.sin(np.pi * (x + 1) / 2)
    np.testing.assert_allclose(g.func(0.7, x), expected, atol=1e-13)


@pytest.mark.parametrize("model", list(Model))
def test_mms_forcing_zero_exact(model):
    g = mms_forcing(EquationSpec(model, f=FSpec.signed_power(1)), "0*x + 0*t")
    assert np.all(g.func(0.5, np.linspace(-1, 1, 5)) == 0)


def test_mms_forcing_adds_convection():
    spec = EquationSpec(Model.BURGERS, a=1.0, p=1.0)
    heat = mms_forcing(spec.with_(a=0.0), SINE)
    full = mms_forcing(spec, SINE)
    x = np.linspace(-0.9, 0.9, 7)
    u = np.exp(-0.2) * np.sin(np.pi * (x + 1) / 2)
    ux = np.exp(-0.2) * np.pi / 2 * np.cos(np.pi * (x + 1) / 2)
    np.testing.assert_allclose(full.func(0.2, x) - heat.func(0.2, x), 2 * np.abs(u) * ux, atol=1e-12)


@pytest.mark.parametrize("model,expr", [
    (Model.BURGERS, "exp(-t)*cos(x)"),
    (Model.KS, "exp(-t)*(1-x**2)"),
    (Model.KDV, "exp(-t)*sin(pi*(x+1)/2)"),
])
def test_mms_rejects_bc_violation(model, expr):
    with pytest.raises(SpecError):
        mms_forcing(EquationSpec(model), expr)
