import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from convblow.diagnostics import (
    ChWeight,
    DiagnosticsConfig,
    DiagnosticsError,
    NormSeries,
    PowerWeight,
    Recorder,
    fit_dissipative,
    kdv_energy,
    kdv_energy_flux_residual,
    lebesgue_norm,
    min_moment_order,
    moment,
    sobolev_seminorm,
    split_weighted_norm,
    sup_norm,
    tail_increasing_convex,
    weighted_norm,
)
from convblow.experiments import initial_data
from convblow.grid_ops import BcScheme, make_grid
from convblow.models import EquationSpec, FluxForm, FSpec, Model
from convblow.stepper import OutcomeKind, StepControls, integrate

G = make_grid(256)
X = G.nodes
fields = arrays(float, G.size, elements=st.floats(-100, 100))


# -- norms ----------------------------------------------------------------------

def test_lebesgue_examples():
    assert lebesgue_norm(G, np.ones(G.size)) == pytest.approx(math.sqrt(2), rel=1e-14)
    assert lebesgue_norm(G, np.zeros(G.size)) == 0.0
    assert lebesgue_norm(G, np.sin(np.pi * (X + 1) / 2)) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(DiagnosticsError):
        lebesgue_norm(G, X, 0.5)
    assert sup_norm(np.array([1.0, -3.0, 2.0])) == 3.0


def test_weighted_examples():
    # trapezoid error for e^{-x} at h = 1/128 is ~1e-5 relative
    assert weighted_norm(G, np.ones(G.size), 2, 1.0, "+") == pytest.approx(
        math.sqrt(math.e - 1 / math.e), rel=1e-5)
    assert weighted_norm(G, X, 3, 0.0) == lebesgue_norm(G, X, 3)
    with pytest.raises(DiagnosticsError):
        weighted_norm(G, X, 2, 1.0, "*")


@settings(max_examples=40, deadline=None)
@given(fields, st.floats(1, 6), st.floats(0, 5))
def test_weight_equivalence(u, s, L):
    base = lebesgue_norm(G, u, s)
    w = weighted_norm(G, u, s, L, "+")
    assert math.exp(-L / s) * base * (1 - 1e-12) <= w <= math.exp(L / s) * base * (1 + 1e-12)


def test_split_examples():
    plus, minus = split_weighted_norm(G, X, 2, 0.0)
    # trapezoid on x^2 over (0, 1) has error h^2/6
    assert plus == pytest.approx(math.sqrt(1 / 3 + G.h**2 / 6), rel=1e-12)
    assert minus == pytest.approx(plus, rel=1e-12)
    assert split_weighted_norm(G, X**2, 2, 1.0)[1] == 0.0


@settings(max_examples=40, deadline=None)
@given(fields, st.floats(1, 6))
def test_split_consistency(u, s):
    plus, minus = split_weighted_norm(G, u, s, 0.0)
    assert plus**s + minus**s == pytest.approx(lebesgue_norm(G, u, s) ** s, rel=1e-10, abs=1e-300)


# -- moments ----------------------------------------------------------------------

def test_power_weight():
    w = PowerWeight(0.5, 3)
    assert w(np.array([-0.5, 0.5, 0.7]))[0] == 0 and w(np.array([0.5]))[0] == 0
    assert w(np.array([0.7]))[0] == 0
    assert np.all(w(np.linspace(-0.49, 0.49, 11)) > 0)
    with pytest.raises(DiagnosticsError):
        PowerWeight(1.5, 2)
    with pytest.raises(DiagnosticsError):
        PowerWeight(1.0, 0)


def test_moment_examples():
    assert moment(G, np.ones(G.size), PowerWeight(1.0, 2)) == pytest.approx(16 / 15, rel=1e-4)
    # exact polynomial integral of -x^6 + 15x^4 - 75x^2 + 61 over (-1, 1)
    exact = 2 * (Fraction(-1, 7) + Fraction(15, 5) - Fraction(75, 3) + 61)
    assert exact == Fraction(544, 7)
    assert moment(G, np.ones(G.size), ChWeight()) == pytest.approx(float(exact), rel=1e-4)
    assert moment(G, np.zeros(G.size), ChWeight()) == 0.0


def test_ch_weight_identities():
    w = ChWeight()
    assert w(np.array([-1.0, 1.0])) == pytest.approx([0, 0], abs=1e-13)
    assert w(np.array([0.0]))[0] == 61
    assert w.derivative(0.0, 2) == -150 and w.derivative(0.0, 4) == 360
    np.testing.assert_allclose(w.derivative(X, 2), -30 * (1 - X**2) * (5 - X**2), atol=1e-12)
    np.testing.assert_allclose(w.derivative(X, 4), 360 * (1 - X**2), atol=1e-12)


@pytest.mark.parametrize("kind,p,q,n", [
    ("second_order", 1, 2, 3), ("fourth_order", 1, 2, 7), ("second_order", 1, 3, 3),
    ("second_order", 2, 2.5, 7),
])
def test_min_moment_order(kind, p, q, n):
    assert min_moment_order(kind, p, q) == n


def test_min_moment_order_errors():
    with pytest.raises(DiagnosticsError):
        min_moment_order("second_order", 1, 1)
    with pytest.raises(DiagnosticsError):
        min_moment_order("third_order", 1, 2)


@pytest.mark.parametrize("model,kind,lam", [(Model.BURGERS, "second_order", 0.0),
                                           (Model.KS, "fourth_order", 4.0)])
def test_moment_tail_convex_on_blowup(model, kind, lam):
    g = make_grid(256)
    n = min_moment_order(kind, 1, 2)
    spec = EquationSpec(model, p=1.0, lam=lam, f=FSpec.abs_power(2))
    out = integrate(spec, g, initial_data(g, model, "sine", 20.0), StepControls(record_every=1e-4),
                    DiagnosticsConfig(moment=PowerWeight(1.0, n)))
    assert out.kind is OutcomeKind.BLOWUP
    assert tail_increasing_convex(out.series["t"], out.series["moment"], 5)


def test_tail_convexity_helper():
    t = np.array([0.0, 1.0, 2.0, 3.0, 3.5])
    assert tail_increasing_convex(t, t**2 + 1)
    assert not tail_increasing_convex(t, np.sqrt(t + 1))
    assert not tail_increasing_convex(t[:3], t[:3] ** 2)
    with pytest.raises(DiagnosticsError):
        tail_increasing_convex(t, t, 2)


# -- Sobolev and energy -----------------------------------------------------------

def test_sobolev_examples():
    assert sobolev_seminorm(G, np.zeros(G.size), 1) == 0.0
    u = np.sin(np.pi * (X + 1) / 2)
    assert sobolev_seminorm(G, u, 1) == pytest.approx(math.pi / 2, rel=1e-4)
    with pytest.raises(DiagnosticsError):
        sobolev_seminorm(G, u, 4)


def _half_sine(x):
    return np.sin(np.pi * (x + 1) / 2)


def _kdv_profile(x):
    # meets u(+-1) = 0 and u_x(1) = 0
    return np.sin(np.pi * (x + 1) / 2) * (1 - x)


@pytest.mark.parametrize("k,bc,profile,exact", [
    (1, BcScheme.DIRICHLET_PAIR, _half_sine, math.pi / 2),
    (2, BcScheme.SIMPLY_SUPPORTED, _half_sine, (math.pi / 2) ** 2),
    # symbolic integration of the third derivative, frozen
    (3, BcScheme.KDV_MIXED, _kdv_profile, 7.720193311399808),
])
def test_sobolev_refinement(k, bc, profile, exact):
    errs = []
    for n in (64, 128, 256):
        g = make_grid(n)
        errs.append(abs(sobolev_seminorm(g, profile(g.nodes), k, bc) - exact))
    assert np.polyfit(np.log([64, 128, 256]), np.log(errs), 1)[0] <= -1.8


def test_kdv_energy_examples():
    assert kdv_energy(G, np.zeros(G.size), 1.0) == 0.0
    u = np.sin(np.pi * X)
    # second-order discretisation error at h = 1/128 is ~2e-4 relative
    assert kdv_energy(G, u, 0.0) == pytest.approx(math.pi**2 / 2 + 0.5, rel=1e-3)
    assert kdv_energy(G, 2 * u, 0.0) == pytest.approx(4 * kdv_energy(G, u, 0.0), rel=1e-13)
    with pytest.raises(DiagnosticsError):
        kdv_energy(G, u, -1.0)


def test_flux_residual_preconditions():
    spec = EquationSpec(Model.KDV, p=1.0)
    z = np.zeros(G.size)
    np.testing.assert_array_equal(kdv_energy_flux_residual(G, [0, 1, 2], [z, z, z], spec), 0)
    with pytest.raises(DiagnosticsError):
        kdv_energy_flux_residual(G, [0.0], [z], spec)
    with pytest.raises(DiagnosticsError):
        kdv_energy_flux_residual(G, [0, 1], [z, z], EquationSpec(Model.BURGERS))
    with pytest.raises(DiagnosticsError):
        kdv_energy_flux_residual(G, [0, 1], [z, z], spec.with_(f=FSpec.abs_power(2)))
    with pytest.raises(DiagnosticsError):
        kdv_energy_flux_residual(G, [0, 1], [z, z], spec.with_(flux_form=FluxForm.UNSIGNED))


def test_flux_residual_shrinks_under_refinement():
    spec = EquationSpec(Model.KDV, p=1.0)
    c = StepControls(t_max=0.02, record_every=1e-4, tol=1e-10)
    maxima = []
    for n in (64, 128):
        g = make_grid(n)
        out = integrate(spec, g, initial_data(g, Model.KDV, "bump", 1.0), c, keep_snapshots=True)
        r = kdv_energy_flux_residual(g, out.series["t"], out.snapshots, spec)
        maxima.append(np.max(np.abs(r)))
    assert math.log2(maxima[0] / maxima[1]) >= 1


# -- series and fits --------------------------------------------------------------

def test_norm_series(tmp_path):
    s = NormSeries()
    s.append(0.0, {"L2": 1.0, "Linf": 2.0})
    s.append(0.1, {"L2": 1 / 3, "Linf": 2.0})
    with pytest.raises(DiagnosticsError):
        s.append(0.1, {"L2": 1.0, "Linf": 2.0})
    with pytest.raises(DiagnosticsError):
        s.append(0.2, {"L2": 1.0})
    assert s.keys == ["t", "L2", "Linf"] and len(s) == 2
    s.write_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t,L2,Linf"
    assert lines[2].split(",")[1] == "0.33333333333333331"
    assert float(lines[2].split(",")[1]) == 1 / 3


def _series(t, v):
    s = NormSeries()
    for a, b in zip(t, v):
        s.append(a, {"L2": b})
    return s


def test_fit_constant_and_exponential():
    t = np.linspace(0, 10, 101)
    rep = fit_dissipative(_series(t, np.full(t.size, 3.0)))
    assert rep.asymptotic_bound == 3.0 and rep.decay_rate == pytest.approx(0.0, abs=1e-12)
    rep = fit_dissipative(_series(t, np.exp(-t)))
    assert rep.decay_rate == pytest.approx(1.0, abs=0.05)
    assert rep.asymptotic_bound >= 0


def test_fit_preconditions():
    t = np.linspace(0, 1, 5)
    with pytest.raises(DiagnosticsError):
        fit_dissipative(_series(t, t))
    s = _series(np.linspace(0, 1, 20), np.ones(20))
    s.blowup_tail = True
    with pytest.raises(DiagnosticsError):
        fit_dissipative(s)


def test_heat_bound_independent_of_amplitude():
    g = make_grid(128)
    spec = EquationSpec(Model.BURGERS, a=0.0)
    bounds = []
    for amp in (1.0, 10.0):
        out = integrate(spec, g, initial_data(g, Model.BURGERS, "sine", amp), StepControls(t_max=20.0))
        bounds.append(fit_dissipative(out.series).asymptotic_bound)
    assert max(bounds) < 1e-6


# -- configuration and recorder ---------------------------------------------------

def test_diagnostics_config_validation():
    with pytest.raises(DiagnosticsError):
        DiagnosticsConfig(s_list=(0.5,))
    with pytest.raises(DiagnosticsError):
        DiagnosticsConfig(L_weight=math.inf)
    with pytest.raises(DiagnosticsError):
        DiagnosticsConfig(sobolev=(4,))


def test_default_weight_rate():
    c = DiagnosticsConfig()
    assert c.resolved_L(EquationSpec(Model.BURGERS, f=FSpec.quadratic(2.0))) == 3.0
    assert c.resolved_L(EquationSpec(Model.KS)) == 1.0
    assert DiagnosticsConfig(L_weight=0.5).resolved_L(EquationSpec(Model.KS)) == 0.5


def test_recorder_row():
    spec = EquationSpec(Model.KDV, p=1.0)
    rec = Recorder(spec, G, DiagnosticsConfig(s_list=(3,), moment=ChWeight(), sobolev=(3, 1),
                                              kdv_energy=True))
    row = rec(np.sin(np.pi * (X + 1) / 2) * (1 - X))
    assert list(row) == ["L2", "Linf", "Ls_3", "WL2p", "WL2m", "ch_moment", "H1", "H3", "kdv_energy"]
    with pytest.raises(DiagnosticsError):
        Recorder(EquationSpec(Model.KS), G, DiagnosticsConfig(sobolev=(3,)))
