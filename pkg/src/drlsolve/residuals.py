"""Rule-based critics for the benchmark equations.

Every critic returns a reward ``r <= 0`` (a negated sum of squared
imbalances). Arguments named ``*_b`` are derivative bundles: anything with
``.value``, ``.d(i)`` and ``.dd(i)`` -- a :class:`~drlsolve.diffcore.Jet` during
training or a :class:`~drlsolve.diffcore.DerivativeBundle` when checking
hand-built states. Coordinate order is ``(t,)`` for ODEs, ``(x, t)`` for the
time-dependent PDEs and ``(x, y)`` for Couette flow.

The critics are written with operator syntax and the ``diffcore`` elementary
functions, so the same code evaluates plain floats and differentiable nodes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc

# ---------------------------------------------------------------------------
# trial transforms


def burgers_trial(point, f):
    """Hard-constrained Burgers field ``t (x+1)(x-1) f - sin(pi x)``.

    ``point`` is a pair ``(x, t)`` of floats/arrays or of coordinate Jets; the
    result satisfies ``u(x, 0) = -sin(pi x)`` and ``u(+-1, t) = 0`` for any f.
    """
    x, t = point
    return t * (x + 1.0) * (x - 1.0) * f - dc.jsin(math.pi * x)


def local_step_trial(tau, u_prev, mu):
    """First-order local-step form ``u_prev + tau * mu``; equals u_prev at tau=0."""
    return tau * mu + u_prev


def local_step_trial2(tau, u_prev, v_prev, mu):
    """Second-order form ``u_prev + tau v_prev + tau^2 mu``; fixes value and rate."""
    return tau * tau * mu + tau * v_prev + u_prev


# ---------------------------------------------------------------------------
# ODE critics


def van_der_pol(t, x_b, y_b, alpha=1.0, beta=1.0, omega=1.0):
    """Forced Van der Pol oscillator in first-order form; time is input 0."""
    r1 = x_b.d(0) - y_b.value
    r2 = (y_b.d(0) - alpha * (1.0 - x_b.value * x_b.value) * y_b.value + x_b.value
          - beta * np.cos(omega * np.asarray(t, dtype=float)))
    return -(r1 * r1) - r2 * r2


def lorenz(t, x_b, y_b, z_b, sigma=10.0, rho=15.0, beta=8.0 / 3.0):
    x, y, z = x_b.value, y_b.value, z_b.value
    r1 = x_b.d(0) - sigma * (y - x)
    r2 = y_b.d(0) - rho * x + y + x * z
    r3 = z_b.d(0) + beta * z - x * y
    return -(r1 * r1) - r2 * r2 - r3 * r3


@dataclass(frozen=True)
class ShearBuilding:
    """Three-storey shear building with Bouc-Wen storey springs."""

    masses: tuple = (1.0, 1.0, 1.0)
    damping: tuple = (2.0, 2.0, 2.0)
    stiffness: tuple = (100.0, 100.0, 100.0)
    alpha: float = 0.1
    A: float = 1.0
    beta: float = 0.5
    gamma: float = 0.05
    n: float = 1.0

    @property
    def M(self) -> np.ndarray:
        return np.diag(self.masses)

    @property
    def C(self) -> np.ndarray:
        return _chain_matrix(self.damping)

    @property
    def K1(self) -> np.ndarray:
        return _chain_matrix(self.stiffness)

    @property
    def K2(self) -> np.ndarray:
        k = self.stiffness
        out = np.zeros((3, 3))
        for j in range(3):
            out[j, j] = k[j]
            if j + 1 < 3:
                out[j, j + 1] = -k[j + 1]
        return out

    @property
    def drift(self) -> np.ndarray:
        """Maps storey displacements to inter-storey drifts."""
        return np.eye(3) - np.eye(3, k=-1)


def _chain_matrix(c):
    c1, c2, c3 = c
    return np.array([[c1 + c2, -c2, 0.0], [-c2, c2 + c3, -c3], [0.0, -c3, c3]])


def bouc_wen_rate(z, ydot, b: ShearBuilding):
    """``A y' - beta z |y'| |z|^(n-1) - gamma y' |z|^n``."""
    return (b.A * ydot - b.beta * z * dc.absolute(ydot) * dc.abs_power(z, b.n - 1.0)
            - b.gamma * ydot * dc.abs_power(z, b.n))


def equation_of_motion(t, x_bs, y_bs, z_bs, building: ShearBuilding | None = None,
                       excitation=None):
    """Reward of the 3-DOF hysteretic building at time(s) ``t``.

    Imbalances: the three equilibrium rows, the three Bouc-Wen evolution rows
    and the compatibility of the inter-storey outputs with the storey
    displacements (value and rate).
    """
    b = building or ShearBuilding()
    if excitation is None:
        ug = 0.0
    elif callable(excitation):
        ug = excitation(t)
    else:
        ug = excitation
    M, C, K1, K2 = b.M, b.C, b.K1, b.K2
    a = b.alpha
    r = 0.0
    for i in range(3):
        # P = -M (1,1,1) ug moved to the left-hand side
        row = M[i, i] * x_bs[i].dd(0) + M[i, i] * ug
        for j in range(3):
            if C[i, j]:
                row = row + C[i, j] * x_bs[j].d(0)
            if K1[i, j]:
                row = row + a * K1[i, j] * x_bs[j].value
            if K2[i, j]:
                row = row + (1.0 - a) * K2[i, j] * z_bs[j].value
        r = r - row * row
    for j in range(3):
        drift = x_bs[j].value - (x_bs[j - 1].value if j else 0.0)
        drift_rate = x_bs[j].d(0) - (x_bs[j - 1].d(0) if j else 0.0)
        c0 = y_bs[j].value - drift
        c1 = y_bs[j].d(0) - drift_rate
        hz = z_bs[j].d(0) - bouc_wen_rate(z_bs[j].value, y_bs[j].d(0), b)
        r = r - c0 * c0 - c1 * c1 - hz * hz
    return r


# ---------------------------------------------------------------------------
# PDE critics (per point; batch means are taken by the caller)


def burgers(point, u_b, nu):
    res = u_b.d(1) + u_b.value * u_b.d(0) - nu * u_b.dd(0)
    return -(res * res)


def schrodinger_residual(re_b, im_b):
    """Real and imaginary parts of ``u_t - 0.5i u_xx - i|u|^2 u``."""
    a, b = re_b.value, im_b.value
    mod2 = a * a + b * b
    res_re = re_b.d(1) + 0.5 * im_b.dd(0) + mod2 * b
    res_im = im_b.d(1) - 0.5 * re_b.dd(0) - mod2 * a
    return res_re, res_im


def schrodinger_initial(x):
    return 2.0 / np.cosh(x)


def schrodinger_critic(boundary, initial, interior, x_initial, match_slope=True):
    """Batch critic terms ``(r_B, r_I, r_Eq)``.

    ``boundary`` is a pair of ``(re_b, im_b)`` evaluated at x=+5 and x=-5 for
    the same times; ``initial`` is ``(re_b, im_b)`` at t=0 for ``x_initial``;
    ``interior`` is ``(re_b, im_b)`` at the equation points.
    """
    (rp, ip), (rm, im_) = boundary
    n_b = _length(rp.value)
    if _length(rm.value) != n_b:
        raise ValueError("boundary batches at x=+5 and x=-5 differ in size")
    dv_r, dv_i = rp.value - rm.value, ip.value - im_.value
    pen_b = dv_r * dv_r + dv_i * dv_i
    if match_slope:
        ds_r, ds_i = rp.d(0) - rm.d(0), ip.d(0) - im_.d(0)
        pen_b = pen_b + ds_r * ds_r + ds_i * ds_i
    re0, im0 = initial
    if _length(re0.value) != len(np.atleast_1d(x_initial)):
        raise ValueError("initial batch does not match its coordinates")
    e_r = re0.value - schrodinger_initial(np.asarray(x_initial, dtype=float))
    e_i = im0.value
    pen_i = e_r * e_r + e_i * e_i
    res_re, res_im = schrodinger_residual(*interior)
    pen_eq = res_re * res_re + res_im * res_im
    return -_mean(pen_b), -_mean(pen_i), -_mean(pen_eq)


def _length(v):
    return np.size(dc._val(v))


def _mean(v):
    return v.mean() if isinstance(v, dc.Var) else float(np.mean(v))


COUETTE_X = (0.0, 0.5)
COUETTE_Y = (-0.005, 0.005)


def couette_momentum(u_b, v_b, p_b, rho=1.0, mu=0.01):
    """Steady momentum and continuity imbalances; inputs are (x, y)."""
    nu = mu / rho
    u, v = u_b.value, v_b.value
    mx = u * u_b.d(0) + v * u_b.d(1) + p_b.d(0) / rho - nu * (u_b.dd(0) + u_b.dd(1))
    my = u * v_b.d(0) + v * v_b.d(1) + p_b.d(1) / rho - nu * (v_b.dd(0) + v_b.dd(1))
    cont = u_b.d(0) + v_b.d(1)
    return mx, my, cont


def couette_boundary_penalties(walls, ports):
    """Squared boundary mismatches.

    ``walls`` = ``((u, v) at y=+0.005, (u, v) at y=-0.005)``;
    ``ports`` = ``((v, p) at x=0, p at x=0.5)``. Entries are value arrays or
    nodes. Returns (wall penalty per point, port penalty per point).
    """
    (u_top, v_top), (u_bot, v_bot) = walls
    (v_in, p_in), p_out = ports
    wall = _cat([(u_top - 1.0) * (u_top - 1.0) + v_top * v_top,
                 u_bot * u_bot + v_bot * v_bot])
    port = _cat([v_in * v_in + p_in * p_in, p_out * p_out])
    return wall, port


def _cat(parts):
    if any(isinstance(p, dc.Var) for p in parts):
        return concat(parts)
    return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])


def concat(parts) -> dc.Var:
    vals = [np.atleast_1d(dc._val(p)) for p in parts]
    bounds = np.cumsum([0] + [v.size for v in vals])
    pairs = [(p, (lambda lo, hi: lambda g: g[lo:hi])(bounds[k], bounds[k + 1]))
             for k, p in enumerate(parts)]
    return dc._node(np.concatenate(vals), pairs)


def couette_critic(walls, ports, interior, wall_weight=50.0, port_weight=1.0,
                   rho=1.0, mu=0.01):
    """``(weighted r_B, r_Eq)`` for the steady Couette channel.

    ``interior`` is ``(u_b, v_b, p_b)`` at the equation points.
    """
    wall, port = couette_boundary_penalties(walls, ports)
    n_b = _length(wall) + _length(port)
    r_b = -(wall_weight * _sum(wall) + port_weight * _sum(port)) / n_b
    mx, my, cont = couette_momentum(*interior, rho=rho, mu=mu)
    r_eq = -_mean(mx * mx + my * my) - _mean(cont * cont)
    return r_b, r_eq


def _sum(v):
    return v.sum() if isinstance(v, dc.Var) else float(np.sum(v))


# ---------------------------------------------------------------------------
# ground excitation


@dataclass
class Excitation:
    """Ground acceleration record with linear interpolation."""

    time: np.ndarray
    accel: np.ndarray
    name: str = "record"

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.accel = np.asarray(self.accel, dtype=float)
        if self.time.ndim != 1 or self.time.shape != self.accel.shape:
            raise ValueError("excitation time and acceleration must be equal-length vectors")
        if np.any(np.diff(self.time) <= 0):
            raise ValueError("excitation time must be strictly increasing")

    @property
    def span(self):
        return float(self.time[0]), float(self.time[-1])

    def __call__(self, t):
        t = np.asarray(dc._val(t), dtype=float)
        lo, hi = self.span
        if np.any(t < lo - 1e-12) or np.any(t > hi + 1e-12):
            raise ValueError(f"excitation requested outside [{lo}, {hi}]")
        out = np.interp(t, self.time, self.accel)
        return float(out) if out.ndim == 0 else out


def read_excitation_csv(path) -> Excitation:
    """Two columns ``time_s, accel_ms2``; a header row is optional."""
    times, accels = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                t, a = float(row[0]), float(row[1])
            except ValueError:
                if not times:
                    continue
                raise
            times.append(t)
            accels.append(a)
    return Excitation(np.array(times), np.array(accels), name=Path(path).stem)


def write_excitation_csv(exc: Excitation, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "accel_ms2"])
        for t, a in zip(exc.time, exc.accel):
            w.writerow([repr(float(t)), repr(float(a))])


def synthetic_excitation(duration=10.0, dt=0.01, band=(0.5, 5.0), peak=3.0, seed=0,
                         n_modes=40) -> Excitation:
    """Banded random ground motion: random-phase sinusoids under a smooth envelope."""
    rng = np.random.default_rng(seed)
    t = np.arange(0.0, duration + 0.5 * dt, dt)
    freqs = rng.uniform(*band, size=n_modes)
    phases = rng.uniform(0, 2 * np.pi, size=n_modes)
    sig = np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None]).sum(axis=0)
    ramp = min(1.0, duration / 4)
    env = np.clip(t / ramp, 0, 1) ** 2 * np.exp(-np.maximum(t - 2 * ramp, 0) / duration)
    sig = sig * env
    sig *= peak / np.max(np.abs(sig))
    return Excitation(t, sig, name=f"synthetic{seed}")
