"""Classical reference solvers used as ground truth."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .residuals import (COUETTE_Y, Excitation, ShearBuilding, bouc_wen_rate,
                        schrodinger_initial)


class IntegrationError(RuntimeError):
    def __init__(self, t: float, message: str):
        super().__init__(f"integration failed at t={t!r}: {message}")
        self.t = t


class ColeSeriesError(ArithmeticError):
    """The truncated Cole series lost all significant digits."""


@dataclass
class OdeTrajectory:
    t: np.ndarray
    y: np.ndarray  # (len(t), dim)
    rtol: float
    atol: float
    n_steps: int = 0

    def __post_init__(self):
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory time grid must be strictly increasing")

    def at(self, t):
        """Linear interpolation between stored samples, column-wise."""
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.t, self.y[:, k]) for k in range(self.y.shape[1])],
                        axis=-1)


@dataclass
class FieldSnapshot:
    x: np.ndarray
    t: float
    values: dict  # component name -> array over x


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4)

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension, 4th order (Hairer, Norsett & Wanner)
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408,
     701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


def rk45(rhs, y0, t_span, rtol=1e-6, atol=1e-9, t_eval=None, max_step=np.inf,
         first_step=None) -> OdeTrajectory:
    """Adaptive Dormand-Prince integration of ``y' = rhs(t, y)``.

    Values at ``t_eval`` come from the 4th-order continuous extension; when
    ``t_eval`` is omitted every accepted step is returned.
    """
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    y = np.array(y0, dtype=float).ravel()
    f = np.asarray(rhs(t0, y), dtype=float)
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if np.any(t_eval < t0) or np.any(t_eval > t1) or np.any(np.diff(t_eval) <= 0):
            raise ValueError("t_eval must be increasing and inside t_span")
    h = _initial_step(rhs, t0, y, f, rtol, atol) if first_step is None else first_step
    h = min(h, max_step, t1 - t0)
    ts, ys = [t0], [y.copy()]
    out_t, out_y = [], []
    k_eval = 0
    if t_eval is not None:
        while k_eval < len(t_eval) and t_eval[k_eval] <= t0:
            out_t.append(t_eval[k_eval])
            out_y.append(y.copy())
            k_eval += 1
    t = t0
    n_steps = 0
    K = np.empty((7, y.size))
    while t < t1:
        min_step = 10.0 * np.spacing(t)
        if h < min_step:
            raise IntegrationError(t, "step size underflow")
        if t + h > t1 - min_step:
            h = t1 - t
        K[0] = f
        for s in range(1, 7):
            ys_ = y + h * (np.asarray(_A[s]) @ K[:s])
            K[s] = rhs(t + _C[s] * h, ys_)
        y_new = y + h * (_B[:6] @ K[:6])
        K[6] = rhs(t + h, y_new)
        err = h * (_E @ K)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = np.sqrt(np.mean((err / scale) ** 2))
        if not np.all(np.isfinite(y_new)) or not np.isfinite(err_norm):
            h *= 0.2
            continue
        if err_norm <= 1.0:
            t_new = t + h
            if t_eval is not None:
                while k_eval < len(t_eval) and t_eval[k_eval] <= t_new:
                    theta = (t_eval[k_eval] - t) / h
                    powers = theta ** np.arange(1, 5)
                    out_t.append(t_eval[k_eval])
                    out_y.append(y + h * (K.T @ (_P @ powers)))
                    k_eval += 1
            t, y, f = t_new, y_new, K[6].copy()
            n_steps += 1
            if t_eval is None:
                ts.append(t)
                ys.append(y.copy())
            factor = 5.0 if err_norm == 0 else min(5.0, 0.9 * err_norm ** -0.2)
            h = min(h * factor, max_step)
        else:
            h *= max(0.2, 0.9 * err_norm ** -0.2)
    if t_eval is None:
        return OdeTrajectory(np.array(ts), np.array(ys), rtol, atol, n_steps)
    return OdeTrajectory(np.array(out_t), np.array(out_y), rtol, atol, n_steps)


def _initial_step(rhs, t0, y0, f0, rtol, atol):
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = np.asarray(rhs(t0 + h0, y1), dtype=float)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def rk4_fixed(rhs, y0, t_span, h):
    """Classical fixed-step RK4; returns the terminal state."""
    t0, t1 = t_span
    n = int(round((t1 - t0) / h))
    h = (t1 - t0) / n
    y = np.array(y0, dtype=float)
    t = t0
    for i in range(n):
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + (i + 1) * h
    return y


# ---------------------------------------------------------------------------
# right-hand sides


def van_der_pol_rhs(alpha=1.0, beta=1.0, omega=1.0):
    def rhs(t, s):
        x, y = s
        return np.array([y, alpha * (1 - x * x) * y - x + beta * math.cos(omega * t)])
    return rhs


def lorenz_rhs(sigma=10.0, rho=15.0, beta=8.0 / 3.0):
    def rhs(t, s):
        x, y, z = s
        return np.array([sigma * (y - x), rho * x - y - x * z, -beta * z + x * y])
    return rhs


def shear_building_rhs(building: ShearBuilding, excitation=None):
    """First-order state ``(X, X', Z)`` of the hysteretic building."""
    b = building
    M_inv = np.linalg.inv(b.M)
    C, K1, K2, D = b.C, b.K1, b.K2, b.drift
    ones = np.ones(3)

    def rhs(t, s):
        X, V, Z = s[:3], s[3:6], s[6:]
        ug = 0.0 if excitation is None else float(excitation(t))
        P = -b.M @ ones * ug
        acc = M_inv @ (P - C @ V - b.alpha * K1 @ X - (1 - b.alpha) * K2 @ Z)
        zdot = bouc_wen_rate(Z, D @ V, b)
        return np.concatenate([V, acc, zdot])

    return rhs


def bouc_wen_reference(building: ShearBuilding | None = None,
                       excitation: Excitation | None = None, t_span=(0.0, 10.0),
                       t_eval=None, y0=None, rtol=1e-9, atol=1e-12) -> OdeTrajectory:
    """9-state reference trajectory (X, X', Z) of the building."""
    building = building or ShearBuilding()
    if excitation is not None:
        lo, hi = excitation.span
        if t_span[0] < lo or t_span[1] > hi:
            raise ValueError(f"excitation covers [{lo}, {hi}] but span is {t_span}")
    rhs = shear_building_rhs(building, excitation)
    y0 = np.zeros(9) if y0 is None else y0
    # break steps at record samples so the piecewise-linear forcing is integrated cleanly
    max_step = np.inf if excitation is None else float(np.min(np.diff(excitation.time)))
    return rk45(rhs, y0, t_span, rtol=rtol, atol=atol, t_eval=t_eval, max_step=max_step)


def mechanical_energy(building: ShearBuilding, state: np.ndarray) -> np.ndarray:
    """Kinetic plus elastic (linear part) energy for states (..., 9)."""
    X, V, Z = state[..., :3], state[..., 3:6], state[..., 6:]
    kin = 0.5 * np.einsum("...i,ij,...j->...", V, building.M, V)
    pot = 0.5 * building.alpha * np.einsum("...i,ij,...j->...", X, building.K1, X)
    hyst = 0.5 * (1 - building.alpha) * np.sum(np.asarray(building.stiffness) * Z * Z, axis=-1)
    return kin + pot + hyst


# ---------------------------------------------------------------------------
# Burgers: Cole series


def _cole_terms(x, t, nu, n_terms, scaled):
    z = 1.0 / (2.0 * math.pi * nu)
    n = np.arange(1, n_terms + 1)
    bessel = special.ive if scaled else special.iv
    with np.errstate(over="ignore", invalid="ignore"):
        a0 = bessel(0, z)
        an = (-1.0) ** n * bessel(n, z) * np.exp(-(n * math.pi) ** 2 * nu * t)
    return a0, an, n * math.pi


def cole_series_jet(x, t, nu, n_terms=50, scaled=True, max_condition=1e14):
    """Cole-Hopf series for ``u(x,0) = -sin(pi x)``, ``u(+-1,t) = 0``.

    Returns ``(u, u_t, u_x, u_xx)`` as arrays broadcast over ``x``. The series
    is the heat-equation solution ``phi`` written with modified Bessel
    coefficients; ``u = -2 nu phi_x / phi``. Raises :class:`ColeSeriesError`
    when the alternating denominator cancels beyond double precision.
    """
    if n_terms < 1:
        raise ValueError("need at least one series term")
    x = np.asarray(x, dtype=float)
    if t <= 0:
        s, c = np.sin(math.pi * x), np.cos(math.pi * x)
        p = math.pi
        return -s, -p * s * c + nu * p * p * s, -p * c, p * p * s
    a0, an, k = _cole_terms(x, t, nu, n_terms, scaled)
    if not (np.isfinite(a0) and np.all(np.isfinite(an))):
        raise ColeSeriesError(f"Bessel coefficients overflow for nu={nu}")
    kx = np.multiply.outer(x, k)
    cos_, sin_ = np.cos(kx), np.sin(kx)
    phi = a0 + 2.0 * cos_ @ an
    phi_x = -2.0 * sin_ @ (an * k)
    phi_xx = -2.0 * cos_ @ (an * k ** 2)
    phi_xxx = 2.0 * sin_ @ (an * k ** 3)
    magnitude = abs(a0) + 2.0 * np.sum(np.abs(an))
    with np.errstate(divide="ignore"):
        cond = magnitude / np.abs(phi)
    if np.any(~np.isfinite(cond)) or np.max(cond) > max_condition:
        raise ColeSeriesError(
            f"series denominator cancels (condition {np.max(cond):.3g}) at nu={nu}, t={t}: "
            "double precision cannot resolve the solution")
    q1, q2, q3 = phi_x / phi, phi_xx / phi, phi_xxx / phi
    u = -2.0 * nu * q1
    u_x = -2.0 * nu * (q2 - q1 * q1)
    u_xx = -2.0 * nu * (q3 - 3.0 * q1 * q2 + 2.0 * q1 ** 3)
    u_t = -2.0 * nu * nu * (q3 - q1 * q2)
    return u, u_t, u_x, u_xx


def cole_series(x, t, nu, n_terms=50, scaled=True):
    u = cole_series_jet(x, t, nu, n_terms, scaled)[0]
    return float(u) if np.ndim(u) == 0 else u


def cole_field(x, times, nu, n_terms=50, scaled=True) -> list[FieldSnapshot]:
    return [FieldSnapshot(np.asarray(x, float), float(t),
                          {"u": np.atleast_1d(cole_series(x, t, nu, n_terms, scaled))})
            for t in times]


# ---------------------------------------------------------------------------
# Burgers: method of lines


def _van_leer(r):
    return (r + np.abs(r)) / (1.0 + np.abs(r))


def burgers_fd(nu, n_grid, t_span=(0.0, 1.0), t_eval=None, rtol=1e-7, atol=1e-10,
               scheme="muscl") -> list[FieldSnapshot]:
    """Viscous Burgers on [-1, 1] with zero Dirichlet ends and ``-sin(pi x)`` start.

    Convection uses a conservative upwind-biased flux (``"muscl"``: van Leer
    limited reconstruction with local Lax-Friedrichs splitting;
    ``"upwind"``: first order); diffusion is central. The semi-discrete system
    is integrated with :func:`rk45`.
    """
    if n_grid < 3:
        raise ValueError("need at least 3 grid points")
    x = np.linspace(-1.0, 1.0, n_grid)
    dx = x[1] - x[0]
    u0 = -np.sin(math.pi * x)
    u0[0] = u0[-1] = 0.0

    def rhs(t, ui):
        u = np.concatenate([[0.0], ui, [0.0]])
        if scheme == "muscl":
            # ghost cells by odd reflection keep the limiter defined at the walls
            ug = np.concatenate([[-u[1]], u, [-u[-2]]])
            du_l = ug[1:-1] - ug[:-2]
            du_r = ug[2:] - ug[1:-1]
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(du_r != 0, du_l / np.where(du_r == 0, 1, du_r), 0.0)
            slope = _van_leer(r) * du_r
            left = u[:-1] + 0.5 * slope[:-1]
            right = u[1:] - 0.5 * slope[1:]
        else:
            left, right = u[:-1], u[1:]
        a = np.maximum(np.abs(left), np.abs(right))
        flux = 0.25 * (left ** 2 + right ** 2) - 0.5 * a * (right - left)
        conv = (flux[1:] - flux[:-1]) / dx
        diff = nu * (u[2:] - 2 * u[1:-1] + u[:-2]) / dx ** 2
        return diff - conv

    traj = rk45(rhs, u0[1:-1], t_span, rtol=rtol, atol=atol, t_eval=t_eval)
    out = []
    for t, ui in zip(traj.t, traj.y):
        out.append(FieldSnapshot(x, float(t), {"u": np.concatenate([[0.0], ui, [0.0]])}))
    return out


# ---------------------------------------------------------------------------
# nonlinear Schroedinger: periodic method of lines

_D2 = {
    2: (np.array([1.0, -2.0, 1.0]), 1.0),
    4: (np.array([-1.0, 16.0, -30.0, 16.0, -1.0]), 12.0),
    6: (np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]), 180.0),
}


def periodic_second_derivative(u, dx, order=6):
    w, denom = _D2[order]
    half = len(w) // 2
    out = np.zeros_like(u)
    for k, c in enumerate(w):
        out += c * np.roll(u, half - k)
    return out / (denom * dx * dx)


def schrodinger_mol(n_grid=512, t_span=(0.0, math.pi / 2), t_eval=None, order=6,
                    rtol=1e-9, atol=1e-11, half_width=5.0) -> list[FieldSnapshot]:
    """``u_t = 0.5i u_xx + i|u|^2 u`` on the periodic interval [-5, 5).

    The complex field is carried as coupled real and imaginary parts; space
    uses central differences of the given order.
    """
    x = np.linspace(-half_width, half_width, n_grid, endpoint=False)
    dx = x[1] - x[0]
    re0 = schrodinger_initial(x)

    def rhs(t, s):
        a, b = s[:n_grid], s[n_grid:]
        m = a * a + b * b
        a_xx = periodic_second_derivative(a, dx, order)
        b_xx = periodic_second_derivative(b, dx, order)
        return np.concatenate([-(0.5 * b_xx + m * b), 0.5 * a_xx + m * a])

    traj = rk45(rhs, np.concatenate([re0, np.zeros(n_grid)]), t_span, rtol=rtol, atol=atol,
                t_eval=t_eval)
    return [FieldSnapshot(x, float(t), {"re": s[:n_grid], "im": s[n_grid:]})
            for t, s in zip(traj.t, traj.y)]


def field_mass(snap: FieldSnapshot) -> float:
    """``integral |u|^2 dx`` on the periodic grid (rectangle rule)."""
    dx = snap.x[1] - snap.x[0]
    return float(np.sum(snap.values["re"] ** 2 + snap.values["im"] ** 2) * dx)


def periodic_interp(snap: FieldSnapshot, xq, component, period=10.0):
    """Periodic cubic-spline interpolation of one snapshot component."""
    from scipy.interpolate import CubicSpline
    xs = np.append(snap.x, snap.x[0] + period)
    vs = np.append(snap.values[component], snap.values[component][0])
    cs = CubicSpline(xs, vs, bc_type="periodic")
    lo = snap.x[0]
    return cs((np.asarray(xq) - lo) % period + lo)


# ---------------------------------------------------------------------------
# Couette


def couette_analytic(y):
    """Exact plane Couette solution: linear u, zero v and p."""
    y = np.asarray(y, dtype=float)
    lo, hi = COUETTE_Y
    if np.any(y < lo - 1e-15) or np.any(y > hi + 1e-15):
        raise ValueError(f"y outside the channel [{lo}, {hi}]")
    u = (y - lo) / (hi - lo)
    zero = np.zeros_like(u)
    if u.ndim == 0:
        return float(u), 0.0, 0.0
    return u, zero, zero.copy()
