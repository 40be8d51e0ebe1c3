import math

import numpy as np
import pytest

from drlsolve import residuals as R
from drlsolve.oracles import (ColeSeriesError, IntegrationError, bouc_wen_reference,
                              burgers_fd, cole_field, cole_series, cole_series_jet,
                              couette_analytic, field_mass, lorenz_rhs, mechanical_energy,
                              periodic_interp, rk4_fixed, rk45, schrodinger_mol)


# --------------------------------------------------------------------------- rk45

def test_rk45_exponential():
    traj = rk45(lambda t, y: -y, [1.0], (0.0, 1.0), rtol=1e-10, atol=1e-12, t_eval=[1.0])
    assert abs(traj.y[-1, 0] - math.exp(-1.0)) <= 1e-8


def test_rk45_constant():
    traj = rk45(lambda t, y: np.zeros(2), [1.5, -2.0], (0.0, 3.0))
    assert np.all(traj.y == np.array([1.5, -2.0]))


def test_rk45_dense_output_matches_polynomial():
    # cubic solution: the 4th-order continuous extension reproduces it
    f = lambda t, y: np.array([3 * t * t])  # noqa: E731
    ts = np.linspace(0, 2, 17)
    traj = rk45(f, [0.0], (0.0, 2.0), t_eval=ts)
    assert np.max(np.abs(traj.y[:, 0] - ts ** 3)) <= 1e-12


def test_rk45_lorenz_vs_fixed_step_rk4():
    f = lorenz_rhs(rho=15.0)
    y0 = [0.0, 2.0, 0.0]
    ref = rk4_fixed(f, y0, (0.0, 5.0), 2e-4)
    traj = rk45(f, y0, (0.0, 5.0), rtol=1e-11, atol=1e-13, t_eval=[5.0])
    assert np.max(np.abs(traj.y[-1] - ref)) <= 1e-5


def test_rk45_tolerance_halving():
    f = lorenz_rhs(rho=15.0)
    for tol in (1e-6, 1e-8):
        a = rk45(f, [0.0, 2.0, 0.0], (0, 2), rtol=tol, atol=tol, t_eval=[2.0]).y[-1]
        b = rk45(f, [0.0, 2.0, 0.0], (0, 2), rtol=tol / 2, atol=tol / 2, t_eval=[2.0]).y[-1]
        assert np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))) < tol * 100


def test_rk45_step_underflow_reports_time():
    # finite-time blow-up of y' = y^2 at t = 1
    with pytest.raises(IntegrationError) as err:
        rk45(lambda t, y: y * y, [1.0], (0.0, 2.0))
    assert 0.99 < err.value.t < 1.0 + 1e-6


def test_rk45_rejects_bad_span():
    with pytest.raises(ValueError):
        rk45(lambda t, y: y, [1.0], (1.0, 0.0))


# --------------------------------------------------------------------------- Cole series

def test_cole_initial_condition():
    x = np.linspace(-1, 1, 11)
    assert np.array_equal(cole_series(x, 0.0, 0.1), -np.sin(np.pi * x))


def test_cole_odd_symmetry():
    for t in (0.1, 0.5, 1.0):
        assert abs(cole_series(0.0, t, 0.05)) <= 1e-15
        x = np.array([0.2, 0.7])
        assert np.allclose(cole_series(x, t, 0.05), -cole_series(-x, t, 0.05), atol=1e-14)


def test_cole_matches_fine_finite_volume():
    ref = burgers_fd(0.1, 801, (0.0, 0.5), t_eval=[0.5], rtol=1e-9, atol=1e-12)[0]
    i = int(np.argmin(np.abs(ref.x - 0.3)))
    assert abs(ref.x[i] - 0.3) < 1e-12
    assert abs(cole_series(0.3, 0.5, 0.1) - ref.values["u"][i]) <= 1e-4


@pytest.mark.parametrize("nu", [0.01, 0.02, 0.05, 0.1])
def test_cole_term_count_stability(nu):
    x = np.linspace(-1, 1, 41)
    for t in (0.1, 0.4, 1.0):
        a = cole_series(x, t, nu, n_terms=50)
        b = cole_series(x, t, nu, n_terms=80)
        assert np.max(np.abs(a - b)) < 1e-10


def test_cole_jet_derivatives_vs_finite_differences():
    x, t, nu, h = np.array([0.3, -0.6]), 0.4, 0.05, 1e-5
    u, ut, ux, uxx = cole_series_jet(x, t, nu)
    f = lambda xx, tt: cole_series(xx, tt, nu)  # noqa: E731
    assert np.allclose(ux, (f(x + h, t) - f(x - h, t)) / (2 * h), rtol=1e-6)
    assert np.allclose(ut, (f(x, t + h) - f(x, t - h)) / (2 * h), rtol=1e-6)
    assert np.allclose(uxx, (f(x + 1e-4, t) - 2 * u + f(x - 1e-4, t)) / 1e-8, rtol=1e-5)


@pytest.mark.parametrize("scaled", [True, False])
def test_cole_fails_for_tiny_viscosity(scaled):
    with pytest.raises(ColeSeriesError):
        cole_series(np.linspace(-1, 1, 51), 0.5, 0.002, scaled=scaled)


def test_cole_field_snapshots():
    snaps = cole_field(np.linspace(-1, 1, 5), [0.25, 0.5], 0.1)
    assert [s.t for s in snaps] == [0.25, 0.5]


# --------------------------------------------------------------------------- burgers_fd

def test_burgers_fd_diffusion_dominated_decay():
    snaps = burgers_fd(10.0, 101, (0.0, 0.05), t_eval=np.linspace(0, 0.05, 6))
    peaks = [np.max(np.abs(s.values["u"])) for s in snaps]
    assert all(b < a for a, b in zip(peaks, peaks[1:]))
    assert peaks[-1] < 1e-2


def test_burgers_fd_vs_cole():
    snap = burgers_fd(0.1, 256, (0.0, 0.5), t_eval=[0.5])[0]
    assert np.max(np.abs(snap.values["u"] - cole_series(snap.x, 0.5, 0.1))) <= 1e-3


def test_burgers_fd_shock_regime():
    snap = burgers_fd(0.002, 300, (0.0, 0.55), t_eval=[0.55])[0]
    u, x = snap.values["u"], snap.x
    grad = np.abs(np.diff(u) / np.diff(x))
    k = int(np.argmax(grad))
    assert abs(0.5 * (x[k] + x[k + 1])) < 0.02
    assert grad[k] > 50.0
    assert np.all(np.abs(u) <= 1.0 + 1e-9)


def test_burgers_fd_rejects_tiny_grid():
    with pytest.raises(ValueError):
        burgers_fd(0.1, 2)


# --------------------------------------------------------------------------- Schrodinger

def test_schrodinger_initial_snapshot_exact():
    snap = schrodinger_mol(64, (0.0, 0.01), t_eval=[0.0])[0]
    assert np.array_equal(snap.values["re"], 2.0 / np.cosh(snap.x))
    assert np.all(snap.values["im"] == 0)


def test_schrodinger_mass_conserved():
    snaps = schrodinger_mol(256, (0.0, math.pi / 2), t_eval=[0.0, math.pi / 4, math.pi / 2],
                            rtol=1e-8, atol=1e-10)
    m0 = field_mass(snaps[0])
    for s in snaps[1:]:
        assert abs(field_mass(s) - m0) / m0 <= 1e-4


def test_schrodinger_grid_refinement():
    t = math.pi / 4
    a = schrodinger_mol(256, (0.0, t), t_eval=[t], rtol=1e-8, atol=1e-10)[0]
    b = schrodinger_mol(512, (0.0, t), t_eval=[t], rtol=1e-8, atol=1e-10)[0]
    for comp in ("re", "im"):
        assert np.max(np.abs(a.values[comp] - b.values[comp][::2])) <= 1e-3


def test_periodic_interp_reproduces_nodes():
    snap = schrodinger_mol(64, (0.0, 0.01), t_eval=[0.0])[0]
    assert np.allclose(periodic_interp(snap, snap.x, "re"), snap.values["re"], atol=1e-14)
    assert periodic_interp(snap, [5.0], "re")[0] == pytest.approx(snap.values["re"][0])


# --------------------------------------------------------------------------- Couette

def test_couette_analytic_values():
    assert couette_analytic(0.005) == (1.0, 0.0, 0.0)
    assert couette_analytic(-0.005) == (0.0, 0.0, 0.0)
    assert couette_analytic(0.0)[0] == 0.5
    with pytest.raises(ValueError):
        couette_analytic(0.006)


# --------------------------------------------------------------------------- Bouc-Wen

def test_bouc_wen_zero_input_zero_response():
    traj = bouc_wen_reference(None, None, (0.0, 2.0), t_eval=np.linspace(0, 2, 11))
    assert np.all(traj.y == 0)


def test_bouc_wen_energy_decays_after_pulse():
    t = np.linspace(0.0, 6.0, 601)
    acc = np.where(t < 0.1, 20.0, 0.0)
    exc = R.Excitation(t, acc)
    ts = np.linspace(0.2, 6.0, 59)
    traj = bouc_wen_reference(R.ShearBuilding(), exc, (0.0, 6.0), t_eval=ts)
    e = mechanical_energy(R.ShearBuilding(), traj.y)
    assert e[0] > 0
    assert e[-1] < e[0]
    # damped: the envelope over successive one-second windows shrinks
    windows = [np.max(e[(ts >= a) & (ts < a + 1)]) for a in np.arange(0.2, 5.2, 1.0)]
    assert all(b < a for a, b in zip(windows, windows[1:]))


def test_bouc_wen_rejects_short_record():
    exc = R.synthetic_excitation(duration=1.0)
    with pytest.raises(ValueError):
        bouc_wen_reference(R.ShearBuilding(), exc, (0.0, 2.0))
