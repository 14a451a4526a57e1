"""Small fully connected networks for nonlinear dimension reduction.

A :class:`CombinedNet` shares one encoder between two heads: a regressor
that predicts the calibration loss from the latent code, and a decoder
that reconstructs the parameter vector. The encoder's last layer is
bounded (``tanh`` or ``bounded_relu``) so the latent space is a known box
that Bayesian optimization can search.

Everything is plain numpy with hand-written backpropagation; inputs are
row-major batches ``(n, features)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "bounded_relu", "tanh", "identity")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class Layer:
    width: int
    activation: str = "relu"
    bounds: tuple[float, float] = (-1.0, 1.0)  # only used by bounded_relu

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("layer width must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "bounded_relu" and not self.bounds[0] < self.bounds[1]:
            raise ValueError("bounded_relu needs lb < ub")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    layers: tuple[Layer, ...]

    def __post_init__(self):
        if self.input_dim < 1 or len(self.layers) == 0:
            raise ValueError("a network needs a positive input dimension and at least one layer")

    @property
    def output_dim(self) -> int:
        return self.layers[-1].width

    @classmethod
    def mlp(cls, input_dim: int, hidden: Sequence[int], output_dim: int,
            hidden_activation: str = "relu", output_activation: str = "identity",
            output_bounds: tuple[float, float] = (-1.0, 1.0)) -> "NetworkSpec":
        layers = [Layer(w, hidden_activation) for w in hidden]
        layers.append(Layer(output_dim, output_activation, output_bounds))
        return cls(input_dim, tuple(layers))


def _activate(a: np.ndarray, layer: Layer) -> np.ndarray:
    if layer.activation == "relu":
        return np.maximum(a, 0.0)
    if layer.activation == "bounded_relu":
        return np.clip(a, *layer.bounds)
    if layer.activation == "tanh":
        return np.tanh(a)
    return a


def _activate_grad(a: np.ndarray, z: np.ndarray, layer: Layer) -> np.ndarray:
    """Derivative of the activation, given pre-activation ``a`` and output ``z``."""
    if layer.activation == "relu":
        return (a > 0).astype(float)
    if layer.activation == "bounded_relu":
        lb, ub = layer.bounds
        return ((a > lb) & (a < ub)).astype(float)
    if layer.activation == "tanh":
        return 1.0 - z * z
    return np.ones_like(a)


@dataclass
class MLP:
    spec: NetworkSpec
    weights: list[np.ndarray]  # W[l] has shape (out, in)
    biases: list[np.ndarray]

    @classmethod
    def init(cls, spec: NetworkSpec, rng: np.random.Generator) -> "MLP":
        """Uniform fan-in scaled weights, zero biases."""
        Ws, bs = [], []
        fan_in = spec.input_dim
        for layer in spec.layers:
            lim = 1.0 / math.sqrt(fan_in)
            Ws.append(rng.uniform(-lim, lim, size=(layer.width, fan_in)))
            bs.append(np.zeros(layer.width))
            fan_in = layer.width
        return cls(spec, Ws, bs)

    def copy(self) -> "MLP":
        return MLP(self.spec, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def forward(self, X) -> np.ndarray:
        return self._forward(X)[0]

    __call__ = forward

    def _forward(self, X):
        Z = np.atleast_2d(np.asarray(X, dtype=float))
        if Z.shape[1] != self.spec.input_dim:
            raise ValueError(f"input has {Z.shape[1]} features, network expects {self.spec.input_dim}")
        cache = [Z]
        for W, b, layer in zip(self.weights, self.biases, self.spec.layers):
            A = Z @ W.T + b
            Z = _activate(A, layer)
            cache.append((A, Z))
        return Z, cache

    def _backward(self, cache, dout):
        """Gradients of a scalar objective given ``dout = d obj / d output``."""
        gW = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        dZ = dout
        for l in range(len(self.weights) - 1, -1, -1):
            A, Z = cache[l + 1]
            dA = dZ * _activate_grad(A, Z, self.spec.layers[l])
            Zin = cache[0] if l == 0 else cache[l][1]
            gW[l] = dA.T @ Zin
            gb[l] = dA.sum(axis=0)
            dZ = dA @ self.weights[l]
        grads = [g for pair in zip(gW, gb) for g in pair]
        return grads, dZ


# -- combined encoder / regressor / decoder ----------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 0.03
    lam: float = 0.005  # weight on the loss-regression term
    penalty: float = 200.0  # weight on reconstructions leaving the box
    batch: int = 0  # 0 or >= N means full batch
    seed: int = 0
    plateau: int = 50
    standardize_targets: bool = True
    target_sd: float = 1.0  # spread of the standardized targets

    def __post_init__(self):
        if (self.epochs < 1 or not self.learning_rate > 0 or self.lam < 0 or self.penalty < 0
                or not self.target_sd > 0):
            raise ValueError(f"invalid training configuration {self}")


@dataclass
class CombinedNet:
    encoder: MLP
    regressor: MLP
    decoder: MLP
    bounds: tuple[float, float] = (0.0, 1.0)
    target_shift: float = 0.0
    target_scale: float = 1.0

    @property
    def nets(self) -> tuple[MLP, MLP, MLP]:
        return self.encoder, self.regressor, self.decoder

    @property
    def latent_dim(self) -> int:
        return self.encoder.spec.output_dim

    @property
    def input_dim(self) -> int:
        return self.encoder.spec.input_dim

    def latent_box(self) -> tuple[np.ndarray, np.ndarray]:
        last = self.encoder.spec.layers[-1]
        lb, ub = (-1.0, 1.0) if last.activation == "tanh" else last.bounds
        q = self.latent_dim
        return np.full(q, lb), np.full(q, ub)

    def params(self) -> list[np.ndarray]:
        return [p for net in self.nets for p in net.params()]

    def copy(self) -> "CombinedNet":
        return replace(self, encoder=self.encoder.copy(), regressor=self.regressor.copy(),
                       decoder=self.decoder.copy())

    # The networks see the box rescaled to [-1, 1]; callers see box units.
    @property
    def _mid(self) -> float:
        return 0.5 * (self.bounds[0] + self.bounds[1])

    @property
    def _half(self) -> float:
        return 0.5 * (self.bounds[1] - self.bounds[0])

    def encode(self, theta) -> np.ndarray:
        return self.encoder((np.atleast_2d(np.asarray(theta, dtype=float)) - self._mid) / self._half)

    def decode(self, psi, clip: bool = True) -> np.ndarray:
        """Reconstruct parameters; clipped into the box for simulator dispatch."""
        out = self._mid + self._half * self.decoder(psi)
        return np.clip(out, *self.bounds) if clip else out

    def predict_loss(self, theta) -> np.ndarray:
        raw = self.regressor(self.encode(theta))[:, 0]
        return raw * self.target_scale + self.target_shift


def combined_spec(d: int, q: int, hidden: int = 8, latent_activation: str = "tanh",
                  latent_bounds: tuple[float, float] = (-1.0, 1.0)):
    """Default encoder ``d -> h -> q``, regressor ``q -> h -> 1``, decoder ``q -> h -> d``."""
    enc = NetworkSpec.mlp(d, [hidden], q, output_activation=latent_activation,
                          output_bounds=latent_bounds)
    reg = NetworkSpec.mlp(q, [hidden], 1)
    dec = NetworkSpec.mlp(q, [hidden], d)
    return enc, reg, dec


def init_combined(specs, seed: int, bounds=(0.0, 1.0)) -> CombinedNet:
    enc, reg, dec = specs
    if enc.layers[-1].activation not in ("tanh", "bounded_relu"):
        raise ValueError("the encoder output layer must be bounded (tanh or bounded_relu)")
    if reg.input_dim != enc.output_dim or dec.input_dim != enc.output_dim:
        raise ValueError("regressor and decoder must consume the encoder output")
    if reg.output_dim != 1 or dec.output_dim != enc.input_dim:
        raise ValueError("regressor must output a scalar and decoder must reconstruct the input")
    rng = np.random.default_rng(seed)
    return CombinedNet(MLP.init(enc, rng), MLP.init(reg, rng), MLP.init(dec, rng), tuple(bounds))


def _loss_terms(theta, L, L_hat, theta_hat, lam, penalty, bounds):
    lo, hi = bounds
    over = np.maximum(0.0, theta_hat - hi)
    under = np.maximum(0.0, lo - theta_hat)
    value = (lam * np.sum((L - L_hat) ** 2) + np.sum((theta - theta_hat) ** 2)
             + penalty * np.sum(over ** 2 + under ** 2))
    dL_hat = -2.0 * lam * (L - L_hat)
    dtheta_hat = -2.0 * (theta - theta_hat) + 2.0 * penalty * (over - under)
    return value, dL_hat, dtheta_hat


def combined_loss(net: CombinedNet, theta, L, lam: float = 0.005, penalty: float = 200.0,
                  bounds=None) -> float:
    """Weighted squared prediction error plus reconstruction error plus box penalty.

    ``L`` is compared with the raw regressor output, i.e. in whatever units
    the network was trained on.
    """
    return combined_loss_and_grad(net, theta, L, lam, penalty, bounds)[0]


def combined_loss_and_grad(net: CombinedNet, theta, L, lam=0.005, penalty=200.0, bounds=None):
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    L = np.asarray(L, dtype=float).reshape(-1)
    if len(theta) == 0 or len(theta) != len(L):
        raise ValueError("need a non-empty batch with one loss per parameter vector")
    bounds = net.bounds if bounds is None else bounds
    psi, c_enc = net.encoder._forward((theta - net._mid) / net._half)
    L_hat, c_reg = net.regressor._forward(psi)
    out, c_dec = net.decoder._forward(psi)
    theta_hat = net._mid + net._half * out
    value, dL_hat, dtheta_hat = _loss_terms(theta, L, L_hat[:, 0], theta_hat, lam, penalty, bounds)
    g_reg, dpsi_r = net.regressor._backward(c_reg, dL_hat[:, None])
    g_dec, dpsi_d = net.decoder._backward(c_dec, net._half * dtheta_hat)
    g_enc, _ = net.encoder._backward(c_enc, dpsi_r + dpsi_d)
    return float(value), g_enc + g_reg + g_dec


def _gd(params: list[np.ndarray], objective, cfg: TrainConfig, n: int, rng):
    """Gradient descent with learning-rate halving.

    ``objective(idx)`` returns ``(value, grads)`` on the rows ``idx``. A step
    that raises the full-batch loss is undone and the rate halved; the rate
    is also halved when the best loss has not improved for ``cfg.plateau``
    epochs. Parameters are updated in place and end at the best iterate.
    Returns the full-batch loss after every epoch (index 0 is the initial
    loss).
    """
    full = np.arange(n)
    lr = cfg.learning_rate
    f, g = objective(full)
    if not np.isfinite(f):
        raise TrainingDiverged("initial loss is not finite")
    history = [f]
    best_f, best = f, [p.copy() for p in params]
    prev = [p.copy() for p in params]
    since_best = 0
    bsize = n if cfg.batch <= 0 or cfg.batch >= n else cfg.batch
    for epoch in range(cfg.epochs):
        for q, p in zip(prev, params):
            q[...] = p
        if bsize == n:
            for p, gp in zip(params, g):
                p -= lr * gp
        else:
            perm = rng.permutation(n)
            for start in range(0, n, bsize):
                _, gb = objective(perm[start:start + bsize])
                for p, gp in zip(params, gb):
                    p -= lr * gp
        f_new, g_new = objective(full)
        if not np.isfinite(f_new) or f_new > f:
            for q, p in zip(prev, params):
                p[...] = q
            lr *= 0.5
            if lr < 1e-12 * cfg.learning_rate:
                if not np.isfinite(f_new):
                    raise TrainingDiverged(f"loss is non-finite for every step size at epoch "
                                           f"{epoch + 1} (last finite loss {f:.6g})")
                history.append(f)
                break
        else:
            f, g = f_new, g_new
        history.append(f)
        if f < best_f:
            best_f, since_best = f, 0
            for b, p in zip(best, params):
                b[...] = p
        else:
            since_best += 1
            if since_best >= cfg.plateau:
                lr *= 0.5
                since_best = 0
                log.debug("epoch %d: no improvement for %d epochs, lr -> %.3g", epoch + 1, cfg.plateau, lr)
    for b, p in zip(best, params):
        p[...] = b
    return history


def train_combined(theta, L, specs=None, cfg: TrainConfig = TrainConfig(), q: int | None = None,
                   bounds=(0.0, 1.0)) -> tuple[CombinedNet, list[float]]:
    """Jointly train encoder, regressor and decoder on ``(theta, L)`` pairs.

    Returns the trained network (best full-batch iterate) and the loss
    history, one entry per epoch plus the initial loss.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    L = np.asarray(L, dtype=float).reshape(-1)
    if len(theta) < 2 or len(theta) != len(L):
        raise ValueError("need at least two (theta, loss) pairs")
    if specs is None:
        specs = combined_spec(theta.shape[1], q if q is not None else min(3, theta.shape[1]))
    net = init_combined(specs, cfg.seed, bounds)
    if cfg.standardize_targets:
        sd = float(L.std())
        net.target_shift = float(L.mean())
        net.target_scale = (sd if sd > 0 else 1.0) / cfg.target_sd
    Lt = (L - net.target_shift) / net.target_scale
    # start both heads at the constant predictor
    net.decoder.biases[-1][:] = (theta.mean(axis=0) - net._mid) / net._half
    net.regressor.biases[-1][:] = Lt.mean()
    params = net.params()

    def objective(idx):
        return combined_loss_and_grad(net, theta[idx], Lt[idx], cfg.lam, cfg.penalty, bounds)

    history = _gd(params, objective, cfg, len(L), np.random.default_rng(cfg.seed + 1))
    return net, history


# -- regression network used as GP mean --------------------------------------

@dataclass
class RegressionNet:
    """``x -> y`` network with internal target standardization."""

    net: MLP
    target_shift: float = 0.0
    target_scale: float = 1.0

    def __call__(self, X) -> np.ndarray:
        return self.net(X)[:, 0] * self.target_scale + self.target_shift


MEAN_NET_DEFAULTS = TrainConfig(epochs=800, learning_rate=0.01, lam=1.0, penalty=0.0)


def mean_net_spec(d: int, hidden: Sequence[int] = (8, 8)) -> NetworkSpec:
    return NetworkSpec.mlp(d, hidden, 1)


def mse_and_grad(net: MLP, X, y):
    out, cache = net._forward(X)
    r = out[:, 0] - y
    n = len(y)
    grads, _ = net._backward(cache, (2.0 / n) * r[:, None])
    return float(np.mean(r * r)), grads


def train_mean_net(X, y, spec: NetworkSpec | None = None,
                   cfg: TrainConfig = MEAN_NET_DEFAULTS) -> tuple[RegressionNet, list[float]]:
    """Plain mean-squared-error regression, all-ReLU hidden layers."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(X) < 2 or len(X) != len(y):
        raise ValueError("need at least two training pairs")
    spec = spec or mean_net_spec(X.shape[1])
    net = MLP.init(spec, np.random.default_rng(cfg.seed))
    shift, scale = 0.0, 1.0
    if cfg.standardize_targets:
        sd = float(y.std())
        shift, scale = float(y.mean()), sd if sd > 0 else 1.0
    yt = (y - shift) / scale
    history = _gd(net.params(), lambda idx: mse_and_grad(net, X[idx], yt[idx]), cfg, len(y),
                  np.random.default_rng(cfg.seed + 1))
    return RegressionNet(net, shift, scale), history


# -- serialization ------------------------------------------------------------
#
# Text layout, one record per line, comma separated:
#   abmcal-net,1,<kind>            kind is "mlp", "regression" or "combined"
#   meta,<key>,<value>             zero or more scalar attributes
#   net,<name>,<input_dim>,<n_layers>
#   layer,<width>,<activation>,<lb>,<ub>     one per layer
#   W,<row values...>              one line per row of each weight matrix
#   b,<values...>                  bias vector, after its matrix
# Floats are written with repr() so files round-trip bit-exactly.

def _write_mlp(lines: list[str], name: str, net: MLP):
    lines.append(f"net,{name},{net.spec.input_dim},{len(net.spec.layers)}")
    for layer in net.spec.layers:
        lines.append(f"layer,{layer.width},{layer.activation},{layer.bounds[0]!r},{layer.bounds[1]!r}")
    for W, b in zip(net.weights, net.biases):
        for row in W:
            lines.append("W," + ",".join(repr(float(v)) for v in row))
        lines.append("b," + ",".join(repr(float(v)) for v in b))


def _read_mlp(rows, i):
    _, name, in_dim, n_layers = rows[i]
    i += 1
    layers = []
    for _ in range(int(n_layers)):
        _, w, act, lb, ub = rows[i]
        layers.append(Layer(int(w), act, (float(lb), float(ub))))
        i += 1
    spec = NetworkSpec(int(in_dim), tuple(layers))
    Ws, bs = [], []
    for layer in layers:
        W = np.array([[float(v) for v in rows[i + k][1:]] for k in range(layer.width)])
        i += layer.width
        bs.append(np.array([float(v) for v in rows[i][1:]]))
        i += 1
        Ws.append(W)
    return name, MLP(spec, Ws, bs), i


def save_network(net, path) -> None:
    lines: list[str] = []
    if isinstance(net, CombinedNet):
        lines.append("abmcal-net,1,combined")
        lines.append(f"meta,bounds_lo,{net.bounds[0]!r}")
        lines.append(f"meta,bounds_hi,{net.bounds[1]!r}")
        lines.append(f"meta,target_shift,{net.target_shift!r}")
        lines.append(f"meta,target_scale,{net.target_scale!r}")
        for name, m in zip(("encoder", "regressor", "decoder"), net.nets):
            _write_mlp(lines, name, m)
    elif isinstance(net, RegressionNet):
        lines.append("abmcal-net,1,regression")
        lines.append(f"meta,target_shift,{net.target_shift!r}")
        lines.append(f"meta,target_scale,{net.target_scale!r}")
        _write_mlp(lines, "net", net.net)
    else:
        lines.append("abmcal-net,1,mlp")
        _write_mlp(lines, "net", net)
    Path(path).write_text("\n".join(lines) + "\n")


def load_network(path):
    rows = [line.split(",") for line in Path(path).read_text().splitlines() if line]
    if not rows or rows[0][0] != "abmcal-net":
        raise ValueError(f"{path} is not a serialized network")
    kind = rows[0][2]
    meta, nets = {}, {}
    i = 1
    while i < len(rows):
        if rows[i][0] == "meta":
            meta[rows[i][1]] = float(rows[i][2])
            i += 1
        elif rows[i][0] == "net":
            name, m, i = _read_mlp(rows, i)
            nets[name] = m
        else:
            raise ValueError(f"unexpected record {rows[i][0]!r} on line {i + 1}")
    if kind == "combined":
        return CombinedNet(nets["encoder"], nets["regressor"], nets["decoder"],
                           (meta["bounds_lo"], meta["bounds_hi"]), meta["target_shift"],
                           meta["target_scale"])
    if kind == "regression":
        return RegressionNet(nets["net"], meta["target_shift"], meta["target_scale"])
    return nets["net"]
