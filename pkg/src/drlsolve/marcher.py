"""Time marching: train one policy per step until every critic term converges."""
from __future__ import annotations

import contextlib
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .equations import EquationSpec
from .optim import AdamState, DecaySchedule, constant, value_at, adam_step
from .policy import MlpPolicy, init_policy, likelihood_weight


class NonFiniteLossError(FloatingPointError):
    """Loss or critic turned non-finite; carries the offending points."""

    def __init__(self, step, iteration, term, points):
        super().__init__(f"non-finite {term} critic at step {step}, iteration {iteration} "
                         f"({len(points)} bad points, first {points[:1].tolist()})")
        self.step = step
        self.iteration = iteration
        self.term = term
        self.points = points


@dataclass
class MarchConfig:
    dt: float
    n_steps: int
    hidden: tuple = (32, 32, 32)
    n_current: int = 100
    prev_per_step: int = 0
    prev_cap: int = 20000
    n_boundary: int = 0
    n_initial: int = 0
    threshold: float | dict = 1e-4
    max_iterations: int = 50000
    lr: DecaySchedule = field(default_factory=lambda: constant(1e-3))
    sigma_mode: str = "fixed"
    sigma0: float = 0.1
    likelihood_weighting: bool = True
    seed: int = 0
    reset_adam: bool = False
    fail_fast: bool = False
    # keep one draw of collocation points per step, or redraw every iteration
    resample: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.n_current < 1:
            raise ValueError("n_current must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for v in (self.threshold.values() if isinstance(self.threshold, dict)
                  else [self.threshold]):
            if not v > 0:
                raise ValueError("convergence thresholds must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)

    def threshold_for(self, name: str) -> float:
        if isinstance(self.threshold, dict):
            return float(self.threshold.get(name, self.threshold.get("default", 1e-4)))
        return float(self.threshold)


@dataclass
class StepRecord:
    step: int
    t_start: float
    t_end: float
    iterations: int
    converged: bool
    losses: dict
    params: list
    context: dict
    seconds: float
    lr: float
    jump: float = 0.0


@dataclass
class SolutionRecord:
    points: np.ndarray
    values: np.ndarray
    reference: np.ndarray | None = None
    components: tuple = ()

    @property
    def error(self):
        return None if self.reference is None else self.values - self.reference

    def max_abs_error(self) -> float:
        return float(np.max(np.abs(self.error)))

    def rms_error(self) -> float:
        return float(np.sqrt(np.mean(self.error ** 2)))


def sample_states(equation: EquationSpec, step: int, config: MarchConfig, rng):
    """Collocation sets for a step: current slab, earlier slabs, condition sets."""
    if step < 1:
        raise ValueError("step index starts at 1")
    return equation.sample(step, config, rng)


def _flat(policies):
    return np.concatenate([p.params for p in policies])


def _split(vec, policies):
    out, o = [], 0
    for p in policies:
        out.append(vec[o:o + p.params.size])
        o += p.params.size
    return out


def step_loss(equation, policies, thetas, batch, ctx, iteration, config):
    """Scalar loss node and the per-monitor mean penalty (unweighted)."""
    terms = equation.terms(batch, policies, thetas, ctx, iteration)
    loss = None
    monitored = {}
    counts = {}
    for term in terms:
        pen = term.penalty
        w = np.asarray(term.lam, dtype=float)
        if config.likelihood_weighting:
            w = w * likelihood_weight(term.sigma)
        part = (pen * w).mean() if np.ndim(w) else pen.mean() * float(w)
        loss = part if loss is None else loss + part
        key = term.monitor or term.name
        monitored[key] = monitored.get(key, 0.0) + float(np.sum(pen.value))
        counts[key] = counts.get(key, 0) + pen.value.size
        bad = ~np.isfinite(pen.value)
        if bad.any():
            pts = batch.get(term.name, next(iter(batch.values())))
            idx = np.flatnonzero(bad)
            raise NonFiniteLossError(ctx.get("step", 0), iteration, term.name,
                                     np.asarray(pts)[idx[idx < len(pts)]])
    return loss, {k: monitored[k] / counts[k] for k in monitored}


class Marcher:
    """Stateful march over a time-stepped (or steady) problem."""

    def __init__(self, equation: EquationSpec, config: MarchConfig, policies=None,
                 log=None):
        self.equation = equation
        self.config = config
        lo, hi = equation.input_bounds(config)
        if policies is None:
            policies = [init_policy(equation.input_dim, config.hidden, d, config.seed + j,
                                    sigma_mode=config.sigma_mode, sigma0=config.sigma0,
                                    input_lo=lo, input_hi=hi)
                        for j, d in enumerate(equation.policy_shapes())]
        self.policies = policies
        self.rng = np.random.default_rng(config.seed)
        self.ctx = equation.initial_context(config)
        self.adam = AdamState.fresh(_flat(policies).size)
        self.iteration = 0
        self.records: list[StepRecord] = []
        self.log = log

    @property
    def n_total(self):
        return 1 if self.equation.kind == "steady" else self.config.n_steps

    def train_step(self, step: int) -> StepRecord:
        cfg, eq = self.config, self.equation
        if cfg.reset_adam:
            self.adam = AdamState.fresh(self.adam.m.size)
        ctx = dict(self.ctx, step=step)
        flat = _flat(self.policies)
        start = time.perf_counter()
        batch = None
        converged = False
        losses = {}
        lr = value_at(cfg.lr, self.iteration)
        n_iter = 0
        while True:
            if batch is None or cfg.resample:
                batch = sample_states(eq, step, cfg, self.rng)
            thetas = [dc.Var(p, trainable=True) for p in _split(flat, self.policies)]
            lr = value_at(cfg.lr, self.iteration)
            loss, losses = step_loss(eq, self.policies, thetas, batch, ctx, self.iteration, cfg)
            if self.log is not None:
                self.log(step, self.iteration, lr, float(loss.value), losses)
            if all(v <= cfg.threshold_for(k) for k, v in losses.items()):
                converged = True
                break
            if n_iter >= cfg.max_iterations:
                break
            adj = dc.backward(loss)
            grads = np.concatenate([adj.get(id(th), np.zeros_like(th.value)) for th in thetas])
            flat, self.adam = adam_step(flat, grads, self.adam, lr)
            self.iteration += 1
            n_iter += 1
        for p, v in zip(self.policies, _split(flat, self.policies)):
            p.params = v.copy()
        if not converged and cfg.fail_fast:
            raise RuntimeError(f"step {step} did not converge in {cfg.max_iterations} "
                               f"iterations: {losses}")
        params = [p.params.copy() for p in self.policies]
        thetas = [p.params for p in self.policies]
        t0 = self.ctx.get("t0", 0.0)
        rec = StepRecord(step=step, t_start=t0, t_end=t0 + (cfg.dt if eq.kind != "steady" else 0.0),
                         iterations=n_iter, converged=converged, losses=losses,
                         params=params, context={k: np.copy(v) for k, v in self.ctx.items()},
                         seconds=time.perf_counter() - start, lr=lr)
        if eq.kind == "pde" and self.records:
            rec.jump = self._slab_jump(self.records[-1], rec)
        self.ctx = eq.advance(self.policies, thetas, self.ctx, cfg)
        self.records.append(rec)
        return rec

    def _slab_jump(self, prev: StepRecord, cur: StepRecord) -> float:
        eq = self.equation
        xs = np.linspace(*eq.x_range, 201)
        pts = np.column_stack([xs, np.full_like(xs, cur.t_start)])
        a = eq.values(pts, self.policies, prev.params, prev.context)
        b = eq.values(pts, self.policies, cur.params, cur.context)
        return float(np.max(np.abs(a - b)))

    def run(self, on_step=None) -> "ChainedSolution":
        for step in range(len(self.records) + 1, self.n_total + 1):
            rec = self.train_step(step)
            if on_step is not None:
                on_step(rec)
        return self.solution()

    def solution(self) -> "ChainedSolution":
        return ChainedSolution(self.equation, self.config, self.policies, list(self.records))


def train_step_until_converged(marcher: Marcher, step: int | None = None) -> StepRecord:
    return marcher.train_step(len(marcher.records) + 1 if step is None else step)


def march(equation: EquationSpec, config: MarchConfig, deterministic: bool = False,
          on_step=None, log=None) -> "ChainedSolution":
    """Train every step in order; returns the chained evaluator."""
    with deterministic_threads(deterministic):
        return Marcher(equation, config, log=log).run(on_step)


@contextlib.contextmanager
def deterministic_threads(enabled: bool):
    """Pin BLAS to one thread so reductions run in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


class ChainedSolution:
    """Piecewise evaluator: each time maps to the step that owns it."""

    def __init__(self, equation, config, policies, records):
        self.equation = equation
        self.config = config
        self.policies = [p.copy() for p in policies]
        self.records = records

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.records)

    @property
    def total_iterations(self) -> int:
        return sum(r.iterations for r in self.records)

    def _owner(self, t):
        k = np.ceil(np.asarray(t) / self.config.dt - 1e-9).astype(int)
        return np.clip(k, 1, len(self.records))

    def __call__(self, points) -> np.ndarray:
        eq = self.equation
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        eq.domain_check(pts, self.config)
        out = np.empty((len(pts), eq.dim))
        if eq.kind == "steady":
            rec = self.records[-1]
            return eq.values(pts, self.policies, rec.params, rec.context)
        tcol = 0 if eq.kind == "ode" else 1
        owner = self._owner(pts[:, tcol])
        for k in np.unique(owner):
            rec = self.records[k - 1]
            sel = owner == k
            local = pts[sel].copy()
            if eq.kind == "ode":
                local[:, 0] -= rec.t_start
            out[sel] = eq.values(local, self.policies, rec.params, rec.context)
        return out

    def step_states(self) -> np.ndarray:
        """Solution at each step boundary (ODE)."""
        ts = np.array([0.0] + [r.t_end for r in self.records])
        return ts, self(ts[:, None])


def evaluate_solution(solution: ChainedSolution, grid, oracle=None) -> SolutionRecord:
    pts = np.asarray(grid, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    vals = solution(pts)
    ref = None
    if oracle is not None:
        ref = np.asarray(oracle(pts) if callable(oracle) else oracle, dtype=float)
        ref = ref.reshape(vals.shape)
    return SolutionRecord(pts, vals, ref, solution.equation.components)
