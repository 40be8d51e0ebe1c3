"""Equation specs: domains, sampling sets, trial transforms and critic terms.

An equation spec turns a set of policies into candidate solution fields and
scores them with the critics in :mod:`drlsolve.residuals`. Three march kinds
exist:

``ode``
    Each time step owns a fresh local clock ``tau`` in ``[0, dt]`` and a hard
    initial condition ``u_prev + tau * mu``; the terminal state seeds the next
    step.
``pde``
    The network sees global ``(x, t)``; each step trains on the current slab
    plus an accumulating sample of earlier slabs.
``steady``
    A single training stage on a fixed domain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import residuals as R
from .optim import DecaySchedule, constant, value_at


@dataclass
class Term:
    """One critic component on one point set.

    ``penalty`` holds the per-point squared imbalance (``-r``); ``lam`` is the
    critic weight and ``sigma`` the policy deviations used for the likelihood
    weight. ``monitor`` names the convergence quantity the term feeds.
    """

    name: str
    penalty: dc.Var
    sigma: np.ndarray
    lam: float | np.ndarray = 1.0
    monitor: str | None = None


def _coord(jet: dc.Jet, i: int) -> dc.Jet:
    return jet.col(i)


def _uniform(rng, lo, hi, n):
    return rng.uniform(lo, hi, size=n)


class EquationSpec:
    name = "equation"
    kind = "ode"
    components: tuple = ()
    coords: tuple = ("t",)
    monitors: tuple = ("eq",)
    second_dims: tuple | None = None
    policy_dims: tuple | None = None

    @property
    def input_dim(self) -> int:
        return len(self.coords)

    @property
    def dim(self) -> int:
        return len(self.components)

    def policy_shapes(self):
        return self.policy_dims or (self.dim,)

    @property
    def order(self) -> int:
        return 1 if self.second_dims is None else 2

    def seed(self, points):
        return dc.seed_inputs(points, self.order, self.second_dims)

    def input_bounds(self, cfg):
        raise NotImplementedError

    def domain_check(self, points, cfg):
        lo, hi = self.domain(cfg)
        pts = np.atleast_2d(points)
        if np.any(pts < np.asarray(lo) - 1e-12) or np.any(pts > np.asarray(hi) + 1e-12):
            raise ValueError(f"{self.name}: evaluation point outside the domain")

    def policy_sigma(self, policies, thetas, points):
        return np.concatenate([p.sigma_values(points, th) for p, th in zip(policies, thetas)],
                              axis=1)


# ---------------------------------------------------------------------------
# ODE family


class OdeSpec(EquationSpec):
    kind = "ode"
    coords = ("t",)
    u0: np.ndarray = np.zeros(0)

    def input_bounds(self, cfg):
        return (0.0,), (cfg.dt,)

    def domain(self, cfg):
        return (0.0,), (cfg.dt * cfg.n_steps,)

    def initial_context(self, cfg):
        return {"t0": 0.0, "u_prev": np.array(self.u0, dtype=float)}

    def sample(self, step, cfg, rng):
        return {"eq": rng.uniform(0.0, cfg.dt, size=(cfg.n_current, 1))}

    def trial(self, tau: dc.Jet, mu: dc.Jet, ctx) -> list:
        return [R.local_step_trial(tau, ctx["u_prev"][k], mu.col(k)) for k in range(self.dim)]

    def field(self, points, policies, thetas, ctx):
        x = self.seed(points)
        mu = policies[0].mu_jet(x, thetas[0])
        return self.trial(_coord(x, 0), mu, ctx)

    def terms(self, batch, policies, thetas, ctx, iteration):
        pts = batch["eq"]
        comps = self.field(pts, policies, thetas, ctx)
        reward = self.reward(ctx["t0"] + pts[:, 0], comps)
        return [Term("eq", -reward, self.policy_sigma(policies, thetas, pts), monitor="eq")]

    def reward(self, t, comps):
        raise NotImplementedError

    def advance(self, policies, thetas, ctx, cfg):
        """Context for the next step: state at the end of this one."""
        end = np.array([[cfg.dt]])
        comps = self.field(end, policies, thetas, ctx)
        new = dict(ctx)
        new["t0"] = ctx["t0"] + cfg.dt
        new["u_prev"] = np.array([float(c.value.value[0]) for c in comps])
        return new

    def values(self, points, policies, thetas, ctx):
        comps = self.field(points, policies, thetas, ctx)
        return np.stack([c.value.value for c in comps], axis=-1)


@dataclass
class VanDerPol(OdeSpec):
    alpha: float = 1.0
    beta: float = 1.0
    omega: float = 1.0
    x0: float = 1.0
    y0: float = 0.0
    name = "van_der_pol"
    components = ("x", "y")

    @property
    def u0(self):
        return np.array([self.x0, self.y0])

    def reward(self, t, comps):
        return R.van_der_pol(t, comps[0], comps[1], self.alpha, self.beta, self.omega)

    def rhs(self):
        from .oracles import van_der_pol_rhs
        return van_der_pol_rhs(self.alpha, self.beta, self.omega)


@dataclass
class Lorenz(OdeSpec):
    sigma: float = 10.0
    rho: float = 15.0
    beta: float = 8.0 / 3.0
    init: tuple = (0.0, 2.0, 0.0)
    name = "lorenz"
    components = ("x", "y", "z")

    @property
    def u0(self):
        return np.array(self.init, dtype=float)

    def reward(self, t, comps):
        return R.lorenz(t, *comps, sigma=self.sigma, rho=self.rho, beta=self.beta)

    def rhs(self):
        from .oracles import lorenz_rhs
        return lorenz_rhs(self.sigma, self.rho, self.beta)


@dataclass
class EquationOfMotion(OdeSpec):
    """3-DOF Bouc-Wen building; outputs storey displacements, drifts, hysteretic parts.

    Storey displacements use the second-order local form so both the
    displacement and the velocity carry over between steps.
    """

    building: R.ShearBuilding = field(default_factory=R.ShearBuilding)
    excitation: R.Excitation | None = None
    name = "equation_of_motion"
    components = ("x1", "x2", "x3", "y1", "y2", "y3", "z1", "z2", "z3")
    second_dims = (0,)

    @property
    def u0(self):
        return np.zeros(9)

    def initial_context(self, cfg):
        ctx = super().initial_context(cfg)
        ctx["v_prev"] = np.zeros(3)
        return ctx

    def trial(self, tau, mu, ctx):
        u, v = ctx["u_prev"], ctx["v_prev"]
        out = [R.local_step_trial2(tau, u[k], v[k], mu.col(k)) for k in range(3)]
        out += [R.local_step_trial(tau, u[k], mu.col(k)) for k in range(3, 9)]
        return out

    def reward(self, t, comps):
        return R.equation_of_motion(t, comps[:3], comps[3:6], comps[6:], self.building,
                                    self.excitation)

    def advance(self, policies, thetas, ctx, cfg):
        end = np.array([[cfg.dt]])
        comps = self.field(end, policies, thetas, ctx)
        new = dict(ctx)
        new["t0"] = ctx["t0"] + cfg.dt
        new["u_prev"] = np.array([float(c.value.value[0]) for c in comps])
        new["v_prev"] = np.array([float(c.d(0).value[0]) for c in comps[:3]])
        return new

    def rhs(self):
        from .oracles import shear_building_rhs
        return shear_building_rhs(self.building, self.excitation)


# ---------------------------------------------------------------------------
# time-dependent PDEs


class PdeSpec(EquationSpec):
    kind = "pde"
    coords = ("x", "t")
    x_range = (-1.0, 1.0)
    second_dims = (0,)

    def input_bounds(self, cfg):
        return (self.x_range[0], 0.0), (self.x_range[1], cfg.dt * cfg.n_steps)

    def domain(self, cfg):
        return self.input_bounds(cfg)

    def initial_context(self, cfg):
        return {"t0": 0.0}

    def advance(self, policies, thetas, ctx, cfg):
        return {"t0": ctx["t0"] + cfg.dt}

    def slab_points(self, step, cfg, rng):
        lo_t, hi_t = (step - 1) * cfg.dt, step * cfg.dt
        x = _uniform(rng, *self.x_range, cfg.n_current)
        # current slab (t_{i-1}, t_i]
        t = hi_t - rng.uniform(0.0, cfg.dt, size=cfg.n_current)
        cur = np.column_stack([x, t])
        n_prev = min(cfg.prev_per_step * (step - 1), cfg.prev_cap)
        if n_prev > 0 and lo_t > 0:
            xp = _uniform(rng, *self.x_range, n_prev)
            tp = lo_t - rng.uniform(0.0, lo_t, size=n_prev)
            cur = np.vstack([cur, np.column_stack([xp, tp])])
        return cur

    def sample(self, step, cfg, rng):
        return {"eq": self.slab_points(step, cfg, rng)}

    def values(self, points, policies, thetas, ctx):
        comps = self.field(points, policies, thetas, ctx)
        return np.stack([c.value.value for c in comps], axis=-1)


@dataclass
class Burgers(PdeSpec):
    nu: float = 0.1
    name = "burgers"
    components = ("u",)

    def field(self, points, policies, thetas, ctx):
        x = self.seed(points)
        f = policies[0].mu_jet(x, thetas[0]).col(0)
        return [R.burgers_trial((_coord(x, 0), _coord(x, 1)), f)]

    def terms(self, batch, policies, thetas, ctx, iteration):
        pts = batch["eq"]
        (u,) = self.field(pts, policies, thetas, ctx)
        reward = R.burgers(None, u, self.nu)
        return [Term("eq", -reward, self.policy_sigma(policies, thetas, pts), monitor="eq")]


@dataclass
class Schrodinger(PdeSpec):
    match_slope: bool = True
    name = "schrodinger"
    components = ("re", "im")
    monitors = ("boundary", "initial", "eq")
    x_range = (-5.0, 5.0)

    def field(self, points, policies, thetas, ctx):
        x = self.seed(points)
        mu = policies[0].mu_jet(x, thetas[0])
        return [mu.col(0), mu.col(1)]

    def sample(self, step, cfg, rng):
        hi_t = step * cfg.dt
        tb = rng.uniform(0.0, hi_t, size=cfg.n_boundary)
        xi = _uniform(rng, *self.x_range, cfg.n_initial)
        return {
            "eq": self.slab_points(step, cfg, rng),
            "bplus": np.column_stack([np.full_like(tb, self.x_range[1]), tb]),
            "bminus": np.column_stack([np.full_like(tb, self.x_range[0]), tb]),
            "initial": np.column_stack([xi, np.zeros_like(xi)]),
        }

    def terms(self, batch, policies, thetas, ctx, iteration):
        # one network pass over all sets, split afterwards
        names = ("eq", "bplus", "bminus", "initial")
        sizes = [len(batch[k]) for k in names]
        pts = np.vstack([batch[k] for k in names])
        re, im = self.field(pts, policies, thetas, ctx)
        cuts = np.cumsum([0] + sizes)
        parts = {k: (_rows(re, cuts[j], cuts[j + 1]), _rows(im, cuts[j], cuts[j + 1]))
                 for j, k in enumerate(names)}
        sig = self.policy_sigma(policies, thetas, pts)
        sigs = {k: sig[cuts[j]:cuts[j + 1]] for j, k in enumerate(names)}
        res_re, res_im = R.schrodinger_residual(*parts["eq"])
        eq = res_re * res_re + res_im * res_im
        (rp, ip), (rm, im_) = parts["bplus"], parts["bminus"]
        dr, di = rp.value - rm.value, ip.value - im_.value
        bnd = dr * dr + di * di
        if self.match_slope:
            sr, si = rp.d(0) - rm.d(0), ip.d(0) - im_.d(0)
            bnd = bnd + sr * sr + si * si
        r0, i0 = parts["initial"]
        e0 = r0.value - R.schrodinger_initial(batch["initial"][:, 0])
        ini = e0 * e0 + i0.value * i0.value
        return [Term("eq", eq, sigs["eq"], monitor="eq"),
                Term("boundary", bnd, np.sqrt(sigs["bplus"] * sigs["bminus"]),
                     monitor="boundary"),
                Term("initial", ini, sigs["initial"], monitor="initial")]


def _rows(jet: dc.Jet, lo: int, hi: int) -> dc.Jet:
    sl = slice(int(lo), int(hi))
    return dc.Jet(jet.value[sl], [f[sl] for f in jet.first],
                  {k: s[sl] for k, s in jet.second.items()})


# ---------------------------------------------------------------------------
# steady Couette channel


@dataclass
class Couette(EquationSpec):
    rho: float = 1.0
    mu: float = 0.01
    wall_lambda: DecaySchedule = field(
        default_factory=lambda: DecaySchedule(50.0, 0.995, 15, 1.0))
    port_lambda: DecaySchedule = field(default_factory=lambda: constant(1.0))
    name = "couette"
    kind = "steady"
    coords = ("x", "y")
    components = ("u", "v", "p")
    monitors = ("boundary", "eq")
    second_dims = (0, 1)
    policy_dims = (1, 1, 1)

    def input_bounds(self, cfg):
        return (R.COUETTE_X[0], R.COUETTE_Y[0]), (R.COUETTE_X[1], R.COUETTE_Y[1])

    def domain(self, cfg):
        return self.input_bounds(cfg)

    def initial_context(self, cfg):
        return {}

    def advance(self, policies, thetas, ctx, cfg):
        return ctx

    def field(self, points, policies, thetas, ctx):
        x = self.seed(points)
        return [p.mu_jet(x, th).col(0) for p, th in zip(policies, thetas)]

    def sample(self, step, cfg, rng):
        (x0, x1), (y0, y1) = R.COUETTE_X, R.COUETTE_Y
        nb = cfg.n_boundary // 4
        xs = lambda: rng.uniform(x0, x1, nb)  # noqa: E731
        ys = lambda: rng.uniform(y0, y1, nb)  # noqa: E731
        return {
            "top": np.column_stack([xs(), np.full(nb, y1)]),
            "bottom": np.column_stack([xs(), np.full(nb, y0)]),
            "inlet": np.column_stack([np.full(nb, x0), ys()]),
            "outlet": np.column_stack([np.full(nb, x1), ys()]),
            "eq": np.column_stack([rng.uniform(x0, x1, cfg.n_current),
                                   rng.uniform(y0, y1, cfg.n_current)]),
        }

    def terms(self, batch, policies, thetas, ctx, iteration):
        names = ("eq", "top", "bottom", "inlet", "outlet")
        sizes = [len(batch[k]) for k in names]
        pts = np.vstack([batch[k] for k in names])
        u, v, p = self.field(pts, policies, thetas, ctx)
        cuts = np.cumsum([0] + sizes)
        get = {k: [_rows(c, cuts[j], cuts[j + 1]) for c in (u, v, p)]
               for j, k in enumerate(names)}
        sig = self.policy_sigma(policies, thetas, pts)
        mx, my, cont = R.couette_momentum(*get["eq"], rho=self.rho, mu=self.mu)
        eq = mx * mx + my * my + cont * cont
        wall, port = R.couette_boundary_penalties(
            ((get["top"][0].value, get["top"][1].value),
             (get["bottom"][0].value, get["bottom"][1].value)),
            ((get["inlet"][1].value, get["inlet"][2].value), get["outlet"][2].value))
        bnd = R.concat([wall, port])
        n_wall = sizes[1] + sizes[2]
        lam = np.concatenate([np.full(n_wall, value_at(self.wall_lambda, iteration)),
                              np.full(sizes[3] + sizes[4], value_at(self.port_lambda,
                                                                    iteration))])
        return [Term("eq", eq, sig[:sizes[0]], monitor="eq"),
                Term("boundary", bnd, sig[sizes[0]:], lam=lam, monitor="boundary")]

    def values(self, points, policies, thetas, ctx):
        comps = self.field(points, policies, thetas, ctx)
        return np.stack([c.value.value for c in comps], axis=-1)


REGISTRY = {
    "van_der_pol": VanDerPol,
    "lorenz": Lorenz,
    "equation_of_motion": EquationOfMotion,
    "burgers": Burgers,
    "schrodinger": Schrodinger,
    "couette": Couette,
}
