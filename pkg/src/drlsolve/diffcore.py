"""Differentiation engine.

Two layers work together here:

* :class:`Var` is a reverse-mode node over numpy arrays. Every arithmetic
  operation records its parents and a closure that maps the output adjoint
  to each parent's adjoint.
* :class:`Jet` carries a value together with its first and (diagonal) second
  derivatives with respect to the network inputs. Jets are propagated
  forward through a network, but every entry of a Jet is itself a
  :class:`Var`, so a loss built from input-derivatives can be
  back-propagated to the parameters (forward-over-reverse).

The supported elementary set is deliberately small: affine maps, tanh, sin,
cos, exp, constant powers, products, sums, ``abs`` and the two signed-power
composites needed by the Bouc-Wen hysteresis law.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Input or parameter vector does not match an expression's slots."""


class SingularDerivativeError(ArithmeticError):
    """A requested derivative does not exist at the evaluation point."""

    def __init__(self, node: str, message: str):
        super().__init__(f"{node}: {message}")
        self.node = node


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """Array-valued node of a reverse-mode computation graph."""

    __slots__ = ("value", "parents", "trainable", "name")
    __array_ufunc__ = None

    def __init__(self, value, parents=(), trainable=False, name=None):
        self.value = np.asarray(value, dtype=float)
        self.parents = parents
        self.trainable = trainable
        self.name = name

    @property
    def tracked(self) -> bool:
        return self.trainable or bool(self.parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, tracked={self.tracked})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return mul(power(self, -1.0), other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return vsum(self, axis)

    def mean(self, axis=None):
        return vmean(self, axis)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _node(value, pairs) -> Var:
    parents = tuple((p, fn) for p, fn in pairs if isinstance(p, Var) and p.tracked)
    return Var(value, parents)


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def add(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _node(av + bv, [(a, lambda g: _unbroadcast(g, av.shape)),
                           (b, lambda g: _unbroadcast(g, bv.shape))])


def neg(a):
    if not isinstance(a, Var):
        return -np.asarray(a, dtype=float)
    return _node(-a.value, [(a, lambda g: -g)])


def mul(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _node(av * bv, [(a, lambda g: _unbroadcast(g * bv, av.shape)),
                           (b, lambda g: _unbroadcast(g * av, bv.shape))])


def power(a, exponent: float) -> Var:
    """``a ** exponent`` for a constant exponent."""
    av = _val(a)
    n = float(exponent)
    out = av ** n
    return _node(out, [(a, lambda g: g * n * av ** (n - 1.0))])


def matmul(a, w) -> Var:
    """``a @ w`` with ``w`` two-dimensional; ``a`` may carry leading batch axes."""
    av, wv = _val(a), _val(w)
    out = av @ wv

    def grad_w(g):
        return av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])

    return _node(out, [(a, lambda g: g @ wv.T), (w, grad_w)])


def take(a: Var, index) -> Var:
    av = a.value

    def back(g):
        full = np.zeros_like(av)
        full[index] = g
        return full

    return _node(av[index], [(a, back)])


def stack_columns(cols: Sequence) -> Var:
    """Stack 1-D nodes of equal length into an (N, k) node."""
    vals = [_val(c) for c in cols]
    pairs = [(c, (lambda j: lambda g: g[:, j])(j)) for j, c in enumerate(cols)]
    return _node(np.stack(vals, axis=-1), pairs)


def vsum(a: Var, axis=None) -> Var:
    av = a.value

    def back(g):
        if axis is None:
            return np.broadcast_to(g, av.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), av.shape).copy()

    return _node(av.sum(axis=axis), [(a, back)])


def vmean(a: Var, axis=None) -> Var:
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(vsum(a, axis), 1.0 / n)


def _unary(a, f, df):
    if not isinstance(a, Var):
        return f(np.asarray(a, dtype=float))
    av = a.value
    return _node(f(av), [(a, lambda g: g * df(av))])


def tanh(a):
    if not isinstance(a, Var):
        return np.tanh(a)
    y = np.tanh(a.value)
    return _node(y, [(a, lambda g: g * (1.0 - y * y))])


def sin(a):
    return _unary(a, np.sin, np.cos)


def cos(a):
    return _unary(a, np.cos, lambda v: -np.sin(v))


def exp(a):
    if not isinstance(a, Var):
        return np.exp(a)
    y = np.exp(a.value)
    return _node(y, [(a, lambda g: g * y)])


def absolute(a):
    # subgradient 0 at the kink
    return _unary(a, np.abs, np.sign)


def sign(a):
    """Piecewise-constant sign; carries no gradient."""
    return np.sign(_val(a))


def abs_power(a, n: float):
    """``|a| ** n``; derivative ``n |a|^(n-1) sign(a)``, zero at a=0."""
    n = float(n)

    def f(v):
        return np.abs(v) ** n

    def df(v):
        s = np.sign(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = n * np.abs(v) ** (n - 1.0) * s
        return np.where(v == 0.0, 0.0, d)

    return _unary(a, f, df)


def square(a):
    return a * a if isinstance(a, Var) else np.square(a)


def backward(root: Var) -> dict:
    """Reverse sweep from a scalar root; returns adjoints keyed by ``id``."""
    if root.value.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.value.shape}")
    order: list[Var] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, fn in node.parents:
            contrib = fn(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
    return grads


# ---------------------------------------------------------------------------
# Jets: value + first derivatives + diagonal second derivatives


class Jet:
    """Truncated Taylor data with respect to the network inputs.

    ``first[i]`` is the derivative along input ``i``. ``second`` maps an input
    index to the pure second derivative along it; only the indices present in
    ``second`` are tracked.
    """

    __slots__ = ("value", "first", "second")

    def __init__(self, value, first, second=None):
        self.value = as_var(value)
        self.first = [as_var(f) for f in first]
        self.second = {} if second is None else {k: as_var(v) for k, v in second.items()}

    @property
    def order(self) -> int:
        return 2 if self.second else 1

    def d(self, i: int) -> Var:
        return self.first[i]

    def dd(self, i: int) -> Var:
        return self.second[i]

    # structure ------------------------------------------------------------
    def col(self, j: int) -> "Jet":
        return Jet(self.value[:, j], [f[:, j] for f in self.first],
                   {k: s[:, j] for k, s in self.second.items()})

    def linear(self, w, b=None) -> "Jet":
        value = self.value @ w
        if b is not None:
            value = value + b
        return Jet(value, [f @ w for f in self.first],
                   {k: s @ w for k, s in self.second.items()})

    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        zero = np.zeros(())
        return Jet(other, [zero] * len(self.first), {k: zero for k in self.second})

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.value + other, self.first, self.second)
        return Jet(self.value + other.value,
                   [a + b for a, b in zip(self.first, other.first)],
                   {k: self.second[k] + other.second[k] for k in self.second})

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.value, [-f for f in self.first],
                   {k: -s for k, s in self.second.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.value * other, [f * other for f in self.first],
                       {k: s * other for k, s in self.second.items()})
        a, b = self, other
        second = {k: a.second[k] * b.value + 2.0 * a.first[k] * b.first[k]
                  + a.value * b.second[k] for k in a.second}
        return Jet(a.value * b.value,
                   [fa * b.value + a.value * fb for fa, fb in zip(a.first, b.first)],
                   second)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.pow(-1.0)
        return self * (1.0 / np.asarray(other, dtype=float))

    def __pow__(self, n):
        return self.pow(n)

    def chain(self, f0, f1, f2) -> "Jet":
        """Apply a scalar function given its value and first two derivatives."""
        first = [f1 * f for f in self.first]
        second = {k: f2 * (self.first[k] * self.first[k]) + f1 * s
                  for k, s in self.second.items()}
        return Jet(f0, first, second)

    def tanh(self) -> "Jet":
        y = tanh(self.value)
        d = 1.0 - y * y
        return self.chain(y, d, -2.0 * y * d)

    def sin(self) -> "Jet":
        s, c = sin(self.value), cos(self.value)
        return self.chain(s, c, -s)

    def cos(self) -> "Jet":
        s, c = sin(self.value), cos(self.value)
        return self.chain(c, -s, -c)

    def exp(self) -> "Jet":
        e = exp(self.value)
        return self.chain(e, e, e)

    def pow(self, n: float) -> "Jet":
        n = float(n)
        v = self.value
        if self.second and n < 2.0 and n != 1.0 and n != 0.0 and np.any(v.value == 0.0):
            raise SingularDerivativeError(f"pow({n:g})", "second derivative undefined at 0")
        if n == 0.0:
            return self._lift(np.ones_like(v.value))
        return self.chain(power(v, n), n * power(v, n - 1.0),
                          n * (n - 1.0) * power(v, n - 2.0) if n != 1.0 else 0.0)

    def abs(self) -> "Jet":
        if self.second and np.any(self.value.value == 0.0):
            raise SingularDerivativeError("abs", "second derivative undefined at 0")
        s = sign(self.value)
        return self.chain(absolute(self.value), s, 0.0)

    def abs_power(self, n: float) -> "Jet":
        n = float(n)
        v = self.value
        if self.second and n < 2.0 and np.any(v.value == 0.0):
            raise SingularDerivativeError(f"abs_power({n:g})", "second derivative undefined at 0")
        s = sign(v)
        f1 = n * abs_power(v, n - 1.0) * s
        f2 = n * (n - 1.0) * abs_power(v, n - 2.0) if self.second else 0.0
        return self.chain(abs_power(v, n), f1, f2)


def stacked_linear(h, w, b) -> Var:
    """Affine layer on a channel-stacked jet: ``h @ w`` with ``b`` on channel 0."""
    hv, wv, bv = _val(h), _val(w), _val(b)
    out = hv @ wv
    out[0] += bv

    def grad_w(g):
        return hv.reshape(-1, hv.shape[-1]).T @ g.reshape(-1, g.shape[-1])

    return _node(out, [(h, lambda g: g @ wv.T), (w, grad_w), (b, lambda g: g[0].sum(axis=0))])


def stacked_tanh(z, n_first: int, second_of) -> Var:
    """tanh applied to a channel-stacked jet.

    Channel 0 is the value, channels ``1..n_first`` the first derivatives and
    the remaining channels the second derivatives along the input indices
    ``second_of``.
    """
    zv = _val(z)
    k = n_first
    idx = np.asarray(second_of, dtype=int)
    y0 = np.tanh(zv[0])
    d = 1.0 - y0 * y0
    f2 = -2.0 * y0 * d
    out = np.empty_like(zv)
    out[0] = y0
    out[1:] = zv[1:] * d
    z1 = zv[1:1 + k]
    if idx.size:
        out[1 + k:] += f2 * z1[idx] ** 2

    def back(g):
        gz = g * d
        g1, g2 = g[1:1 + k], g[1 + k:]
        acc = (g1 * z1).sum(axis=0)
        if idx.size:
            z2 = zv[1 + k:]
            acc += (g2 * z2).sum(axis=0)
            f3 = -2.0 * d * (1.0 - 3.0 * y0 * y0)
            gz[0] += f3 * (g2 * z1[idx] ** 2).sum(axis=0)
            for j, i in enumerate(idx):
                gz[1 + i] += 2.0 * f2 * g2[j] * z1[i]
        gz[0] += f2 * acc
        return gz

    return _node(out, [(z, back)])


def stack_jet(jet: "Jet"):
    """Constant jet -> (array (C, N, d), n_first, second_of)."""
    second_of = sorted(jet.second)
    chans = [jet.value.value] + [f.value for f in jet.first] + [jet.second[i].value
                                                               for i in second_of]
    shape = jet.value.value.shape
    return np.stack([np.broadcast_to(c, shape) for c in chans]), len(jet.first), second_of


def unstack_jet(z: Var, n_first: int, second_of) -> "Jet":
    return Jet(z[0], [z[1 + i] for i in range(n_first)],
               {i: z[1 + n_first + j] for j, i in enumerate(second_of)})


def jsin(u):
    return u.sin() if isinstance(u, Jet) else sin(u)


def jcos(u):
    return u.cos() if isinstance(u, Jet) else cos(u)


def jtanh(u):
    return u.tanh() if isinstance(u, Jet) else tanh(u)


def jexp(u):
    return u.exp() if isinstance(u, Jet) else exp(u)


def seed_inputs(points, order: int = 1, second_dims=None) -> Jet:
    """Input jet for an (N, d) point batch: identity first derivatives."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = x.shape
    first = []
    for i in range(d):
        e = np.zeros((n, d))
        e[:, i] = 1.0
        first.append(e)
    second = None
    if order >= 2:
        dims = range(d) if second_dims is None else second_dims
        second = {i: np.zeros((n, d)) for i in dims}
    return Jet(x, first, second)


# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class DerivativeBundle:
    value: float
    first: np.ndarray
    second_diag: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def d(self, i: int) -> float:
        return self.first[i]

    def dd(self, i: int) -> float:
        return self.second_diag[i]


@dataclass(frozen=True)
class Expression:
    """A differentiable map ``(inputs, params) -> outputs``.

    ``fn`` receives the input :class:`Jet` of shape (N, n_inputs) and the
    parameter vector as a :class:`Var`; it returns either a Jet of shape
    (N, n_outputs) or a scalar Var (for loss expressions). ``order`` and
    ``second_dims`` say which input derivatives the expression needs seeded
    when used as a loss.
    """

    fn: Callable
    n_inputs: int
    n_params: int
    order: int = 1
    second_dims: tuple | None = None
    name: str = "expr"


def _check(expr: Expression, inputs, params):
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    p = np.asarray(params, dtype=float).ravel()
    if x.shape[-1] != expr.n_inputs:
        raise ShapeError(f"{expr.name}: expected {expr.n_inputs} inputs, got {x.shape[-1]}")
    if p.size != expr.n_params:
        raise ShapeError(f"{expr.name}: expected {expr.n_params} params, got {p.size}")
    return x, p


def _as_output(out) -> Jet:
    if isinstance(out, Var):
        return Jet(out.value.reshape(-1, 1) if out.value.ndim < 2 else out, [])
    return out


def evaluate(expr: Expression, inputs, params) -> np.ndarray:
    """Output values of ``expr``; a single point gives a 1-D vector."""
    x, p = _check(expr, inputs, params)
    out = expr.fn(seed_inputs(x, 1), Var(p))
    val = out.value.value if isinstance(out, Jet) else out.value
    val = np.array(val, dtype=float)
    if np.ndim(inputs) <= 1 and val.ndim >= 1 and val.shape[0] == 1:
        val = val[0]
    return val


def input_derivatives(expr: Expression, inputs, params, order: int = 1):
    """Exact input derivatives of every output at one point.

    Returns one :class:`DerivativeBundle` per output component (a single
    bundle for a scalar-output expression).
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    x, p = _check(expr, inputs, params)
    if x.shape[0] != 1:
        raise ShapeError("input_derivatives takes a single point")
    jet = expr.fn(seed_inputs(x, order), Var(p))
    value = np.atleast_2d(jet.value.value)
    firsts = np.stack([np.atleast_2d(f.value) for f in jet.first], axis=-1)
    if order == 2:
        seconds = np.stack([np.atleast_2d(jet.second[i].value) for i in range(expr.n_inputs)],
                           axis=-1)
    bundles = []
    for j in range(value.shape[-1]):
        second = seconds[0, j].copy() if order == 2 else np.zeros(0)
        bundles.append(DerivativeBundle(float(value[0, j]), firsts[0, j].copy(), second))
    return bundles[0] if len(bundles) == 1 else bundles


def param_gradient(loss_expr: Expression, inputs_batch, params) -> np.ndarray:
    """Gradient of a scalar loss expression with respect to the parameters."""
    x, p = _check(loss_expr, inputs_batch, params)
    theta = Var(p, trainable=True)
    loss = loss_expr.fn(seed_inputs(x, loss_expr.order, loss_expr.second_dims), theta)
    if isinstance(loss, Jet) or loss.value.size != 1:
        raise ShapeError(f"{loss_expr.name}: loss must be a scalar")
    return value_and_grad(loss, theta)[1]


def value_and_grad(loss: Var, *wrt: Var):
    """Scalar loss value and its gradients with respect to ``wrt`` leaves."""
    if loss.value.size != 1:
        raise ShapeError("loss must be a scalar")
    grads = backward(loss) if loss.tracked else {}
    out = [np.array(grads.get(id(w), np.zeros_like(w.value)), dtype=float) for w in wrt]
    return float(loss.value), (out[0] if len(out) == 1 else out)
