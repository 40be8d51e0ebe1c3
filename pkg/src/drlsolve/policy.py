"""Actor network: a tanh MLP emitting a Gaussian policy (mu, sigma) per point."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diffcore as dc

SIGMA_FLOOR = 1e-3
CHECKPOINT_MAGIC = b"DRLPOLCY"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PolicyOutput:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class MlpPolicy:
    input_dim: int
    hidden: tuple
    output_dim: int
    params: np.ndarray
    sigma_mode: str = "fixed"
    sigma0: float = 0.1
    # optional affine map of each input onto [-1, 1]
    input_lo: tuple | None = None
    input_hi: tuple | None = None
    _layout: list = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.hidden = tuple(int(w) for w in self.hidden)
        self.params = np.asarray(self.params, dtype=float)
        if self.params.size != param_count(self.layer_widths):
            raise dc.ShapeError("parameter vector does not match architecture")

    @property
    def head_dim(self) -> int:
        return self.output_dim * (2 if self.sigma_mode == "trainable" else 1)

    @property
    def layer_widths(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.head_dim]

    def layout(self):
        if self._layout is None:
            self._layout = _layout(self.layer_widths)
        return self._layout

    def copy(self) -> "MlpPolicy":
        return replace(self, params=self.params.copy())

    # differentiable evaluation ------------------------------------------------
    def head_jet(self, x: dc.Jet, theta) -> dc.Jet:
        """Raw network head as a Jet; ``theta`` may be a Var or an array.

        ``x`` must be a constant input jet (as built by ``seed_inputs``).
        """
        z, k, second_of = dc.stack_jet(x)
        if self.input_lo is not None:
            lo = np.asarray(self.input_lo, dtype=float)
            hi = np.asarray(self.input_hi, dtype=float)
            z = z * (2.0 / (hi - lo))
            z[0] -= (hi + lo) / (hi - lo)
        theta = dc.as_var(theta)
        h = z
        layers = self.layout()
        for n, (w_sl, w_shape, b_sl) in enumerate(layers):
            w = _reshape(theta[w_sl], w_shape)
            h = dc.stacked_linear(h, w, theta[b_sl])
            if n < len(layers) - 1:
                h = dc.stacked_tanh(h, k, second_of)
        return dc.unstack_jet(h, k, second_of)

    def mu_jet(self, x: dc.Jet, theta) -> dc.Jet:
        head = self.head_jet(x, theta)
        if self.sigma_mode == "trainable":
            return _slice_cols(head, slice(0, self.output_dim))
        return head

    def sigma_values(self, points, theta=None) -> np.ndarray:
        """Standard deviations at the points, detached from any gradient path."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.sigma_mode == "fixed":
            return np.full((pts.shape[0], self.output_dim), float(self.sigma0))
        theta = self.params if theta is None else dc._val(theta)
        raw = self.head_jet(dc.seed_inputs(pts, 1), np.asarray(theta)).value.value
        return softplus_sigma(raw[:, self.output_dim:])

    def expression(self) -> dc.Expression:
        return dc.Expression(fn=self.mu_jet, n_inputs=self.input_dim,
                             n_params=self.params.size, name="policy")


def _reshape(w: dc.Var, shape) -> dc.Var:
    val = w.value.reshape(shape)
    return dc._node(val, [(w, lambda g: g.reshape(-1))])


def _slice_cols(jet: dc.Jet, sl: slice) -> dc.Jet:
    return dc.Jet(jet.value[:, sl], [f[:, sl] for f in jet.first],
                  {k: s[:, sl] for k, s in jet.second.items()})


def softplus_sigma(raw: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, raw) + SIGMA_FLOOR


def _layout(widths):
    layers, offset = [], 0
    for a, b in zip(widths[:-1], widths[1:]):
        w_sl = slice(offset, offset + a * b)
        offset += a * b
        b_sl = slice(offset, offset + b)
        offset += b
        layers.append((w_sl, (a, b), b_sl))
    return layers


def param_count(widths) -> int:
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def init_policy(input_dim: int, hidden_widths, output_dim: int, seed: int,
                sigma_mode: str = "fixed", sigma0: float = 0.1,
                input_lo=None, input_hi=None) -> MlpPolicy:
    """Glorot-uniform weights, zero biases, drawn from a seeded generator."""
    widths = [input_dim, *hidden_widths, output_dim]
    if any(int(w) < 1 for w in widths):
        raise ValueError(f"all layer widths must be >= 1, got {widths}")
    if sigma_mode not in ("fixed", "trainable"):
        raise ValueError(f"unknown sigma mode {sigma_mode!r}")
    if sigma_mode == "trainable":
        widths[-1] = 2 * output_dim
    rng = np.random.default_rng(seed)
    chunks = []
    for a, b in zip(widths[:-1], widths[1:]):
        limit = math.sqrt(6.0 / (a + b))
        chunks.append(rng.uniform(-limit, limit, size=a * b))
        chunks.append(np.zeros(b))
    return MlpPolicy(input_dim, tuple(hidden_widths), output_dim, np.concatenate(chunks),
                     sigma_mode=sigma_mode, sigma0=sigma0,
                     input_lo=None if input_lo is None else tuple(map(float, input_lo)),
                     input_hi=None if input_hi is None else tuple(map(float, input_hi)))


def forward(policy: MlpPolicy, point) -> PolicyOutput:
    pts = np.asarray(point, dtype=float)
    single = pts.ndim <= 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != policy.input_dim:
        raise dc.ShapeError(f"point has {pts.shape[-1]} coordinates, policy expects "
                            f"{policy.input_dim}")
    mu = policy.mu_jet(dc.seed_inputs(pts, 1), policy.params).value.value
    sigma = policy.sigma_values(pts)
    if single:
        return PolicyOutput(mu[0].copy(), sigma[0].copy())
    return PolicyOutput(mu.copy(), sigma)


def act(policy: MlpPolicy, point) -> np.ndarray:
    """Deterministic action: the policy mean."""
    return forward(policy, point).mu


def likelihood_weight(output) -> float | np.ndarray:
    """Gaussian density evaluated at its own mean, product over components."""
    sigma = np.asarray(output.sigma if isinstance(output, PolicyOutput) else output,
                       dtype=float)
    if np.any(~(sigma > 0)):
        raise ValueError("sigma must be strictly positive")
    w = np.prod(1.0 / (math.sqrt(2.0 * math.pi) * sigma), axis=-1)
    return float(w) if np.ndim(w) == 0 else w


# ---------------------------------------------------------------------------
# checkpoints: magic, u32 version, u32 header length, JSON header,
# u64 parameter count, float64 little-endian parameters


def save_checkpoint(policy: MlpPolicy, path) -> None:
    header = json.dumps({
        "input_dim": policy.input_dim,
        "hidden": list(policy.hidden),
        "output_dim": policy.output_dim,
        "sigma_mode": policy.sigma_mode,
        "sigma0": repr(float(policy.sigma0)),
        "input_lo": None if policy.input_lo is None else [repr(v) for v in policy.input_lo],
        "input_hi": None if policy.input_hi is None else [repr(v) for v in policy.input_hi],
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", policy.params.size))
        fh.write(policy.params.astype("<f8").tobytes())


def load_checkpoint(path) -> MlpPolicy:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a policy checkpoint")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen])
    (count,) = struct.unpack_from("<Q", data, 16 + hlen)
    start = 24 + hlen
    params = np.frombuffer(data[start:start + 8 * count], dtype="<f8").astype(float)

    def floats(v):
        return None if v is None else tuple(float(x) for x in v)

    return MlpPolicy(header["input_dim"], tuple(header["hidden"]), header["output_dim"],
                     params, sigma_mode=header["sigma_mode"],
                     sigma0=float(header["sigma0"]),
                     input_lo=floats(header["input_lo"]), input_hi=floats(header["input_hi"]))
