"""Small fully connected networks with hand-written backpropagation.

Parameters live in a flat ``dict[str, ndarray]`` so gradient checks and
optimizer state can treat every network the same way. A network is a set
of named dense stacks; hidden layers use ReLU, the last layer of a stack is
linear.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import TrainingError

Params = dict[str, np.ndarray]


# ------------------------------------------------------------------ layers


def init_stack(rng: np.random.Generator, params: Params, name: str, dims: list[int]) -> list[str]:
    """Add dense layers ``name_0 .. name_{L-1}`` mapping dims[0] -> dims[-1]; He-normal weights."""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        layer = f"{name}_{i}"
        params[f"{layer}.W"] = rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_in, n_out))
        params[f"{layer}.b"] = np.zeros(n_out)
        layers.append(layer)
    return layers


def stack_forward(params: Params, layers: list[str], x: np.ndarray, relu_last: bool = False):
    cache = []
    a = x
    for i, layer in enumerate(layers):
        z = a @ params[f"{layer}.W"] + params[f"{layer}.b"]
        cache.append((a, z))
        last = i == len(layers) - 1
        a = np.maximum(z, 0.0) if (relu_last or not last) else z
    return a, cache


def stack_backward(params: Params, layers: list[str], cache, dout, grads: Params, relu_last: bool = False,
                   input_grad: bool = True):
    """Accumulate parameter gradients into ``grads``; return the input gradient (None if not wanted)."""
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        a_in, z = cache[i]
        last = i == len(layers) - 1
        dz = dout * (z > 0) if (relu_last or not last) else dout
        grads[f"{layer}.W"] = grads.get(f"{layer}.W", 0.0) + a_in.T @ dz
        grads[f"{layer}.b"] = grads.get(f"{layer}.b", 0.0) + dz.sum(axis=0)
        if i == 0 and not input_grad:
            return None
        dout = dz @ params[f"{layer}.W"].T
    return dout


# --------------------------------------------------------------- optimizer


class Adam:
    def __init__(self, params: Params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, params: Params, grads: Params) -> None:
        self.step_count += 1
        c1 = 1 - self.beta1 ** self.step_count
        c2 = 1 - self.beta2 ** self.step_count
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            denom = np.sqrt(v)
            denom *= 1.0 / math.sqrt(c2)
            denom += self.eps
            step = np.divide(m, denom, out=denom)
            step *= self.lr / c1
            params[k] = params[k] - step


@dataclass
class TrainResult:
    params: Params
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0


def train(
    params: Params,
    loss_grad: Callable[[Params, tuple], tuple[float, Params]],
    data: tuple,
    val: tuple | None,
    lr: float,
    batch_size: int,
    max_epochs: int,
    patience: int,
    seed: int,
    frozen: frozenset[str] = frozenset(),
) -> TrainResult:
    """Mini-batch Adam with early stopping on the holdout loss.

    ``data`` and ``val`` are tuples of equal-length arrays passed to
    ``loss_grad`` batch-wise. The best-epoch parameters are restored when a
    holdout is given. Recorded train losses are batch-size-weighted means.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    n = len(data[0])
    batch_size = max(1, min(batch_size, n))
    opt = Adam(params, lr)
    result = TrainResult(params={k: v.copy() for k, v in params.items()})
    best = math.inf
    stale = 0
    if val is not None:
        best = loss_grad(params, val, need_grad=False)[0]
        result.val_loss.append(best)
    for epoch in range(1, max_epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            loss, grads = loss_grad(params, tuple(a[idx] for a in data))
            if not math.isfinite(loss):
                raise TrainingError("training loss became non-finite", epoch)
            for k in frozen:
                grads.pop(k, None)
            opt.step(params, grads)
            total += loss * len(idx)
        result.train_loss.append(total / n)
        if val is None:
            continue
        v = loss_grad(params, val, need_grad=False)[0]
        if not math.isfinite(v):
            raise TrainingError("holdout loss became non-finite", epoch)
        result.val_loss.append(v)
        if v < best:
            best, stale = v, 0
            result.params = {k: a.copy() for k, a in params.items()}
            result.best_epoch = epoch
        else:
            stale += 1
            if stale >= patience:
                break
    if val is None:
        result.params = {k: v.copy() for k, v in params.items()}
        result.best_epoch = max_epochs
    return result


# ---------------------------------------------------------------- plain MLP


@dataclass(frozen=True)
class MLPConfig:
    hidden_dims: tuple[int, ...] = (100,)
    learning_rate: float = 1e-3
    batch_size: int = 200
    max_epochs: int = 300
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if any(h <= 0 for h in self.hidden_dims):
            raise ValueError("hidden widths must be positive")


@dataclass
class MLPModel:
    params: Params
    layers: list[str]
    feature_dim: int
    history: TrainResult | None = None
    kind: str = "mlp"

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.feature_dim:
            raise ValueError(f"expected {self.feature_dim} features, got shape {x.shape}")
        return stack_forward(self.params, self.layers, x)[0][:, 0]


def mlp_loss_grad(layers):
    def fn(params, batch, need_grad=True):
        x, y = batch
        out, cache = stack_forward(params, layers, x)
        r = out[:, 0] - y
        loss = float(np.mean(r * r))
        if not need_grad:
            return loss, None
        grads: Params = {}
        stack_backward(params, layers, cache, (2.0 * r / len(y))[:, None], grads)
        return loss, grads
    return fn


def fit_mlp(x, y, config: MLPConfig = MLPConfig(), val: tuple | None = None) -> MLPModel:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    params: Params = {}
    layers = init_stack(rng, params, "mlp", [x.shape[1], *config.hidden_dims, 1])
    if val is not None:
        val = (np.asarray(val[0], dtype=np.float64), np.asarray(val[1], dtype=np.float64))
    res = train(
        params, mlp_loss_grad(layers), (x, y), val, config.learning_rate,
        config.batch_size, config.max_epochs, config.patience, config.seed,
    )
    return MLPModel(res.params, layers, x.shape[1], res)


# ------------------------------------------------------- two-headed networks


@dataclass(frozen=True)
class NetConfig:
    """Architecture and training settings shared by TARNet and Dragonnet.

    ``trunk_layers`` ReLU layers of width ``hidden_layer`` form the shared
    representation (0 means identity); each outcome head has ``head_layers``
    ReLU layers of width ``outcome_layer`` before its linear output.
    """

    hidden_layer: int = 200
    outcome_layer: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 200
    max_epochs: int = 300
    patience: int = 10
    seed: int = 0
    trunk_layers: int = 2
    head_layers: int = 1
    tie_heads: bool = False


@dataclass
class TwoHeadNet:
    params: Params
    trunk: list[str]
    head0: list[str]
    head1: list[str]
    prop: list[str] = field(default_factory=list)

    def representation(self, x):
        if not self.trunk:
            return x, []
        return stack_forward(self.params, self.trunk, x, relu_last=True)

    def heads(self, x):
        phi, _ = self.representation(x)
        q0 = stack_forward(self.params, self.head0, phi)[0][:, 0]
        q1 = stack_forward(self.params, self.head1, phi)[0][:, 0]
        return q0, q1

    def propensity(self, x):
        phi, _ = self.representation(x)
        return expit(stack_forward(self.params, self.prop, phi)[0][:, 0])


def init_two_head(d: int, cfg: NetConfig, with_propensity: bool) -> TwoHeadNet:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    params: Params = {}
    trunk = init_stack(rng, params, "trunk", [d] + [cfg.hidden_layer] * cfg.trunk_layers)
    rep_dim = cfg.hidden_layer if cfg.trunk_layers else d
    head_dims = [rep_dim] + [cfg.outcome_layer] * cfg.head_layers + [1]
    head0 = init_stack(rng, params, "head0", head_dims)
    head1 = init_stack(rng, params, "head1", head_dims)
    if cfg.tie_heads:
        for a, b in zip(head0, head1):
            params[f"{b}.W"] = params[f"{a}.W"].copy()
            params[f"{b}.b"] = params[f"{a}.b"].copy()
    prop = []
    if with_propensity:
        prop = init_stack(rng, params, "prop", [rep_dim, 1])
        params["epsilon"] = np.zeros(1)
    return TwoHeadNet(params, trunk, head0, head1, prop)


PROP_CLIP = (0.01, 0.99)


def two_head_loss_grad(net: TwoHeadNet, alpha: float = 0.0, beta: float = 0.0):
    """Loss/gradient closure for TARNet (no propensity head) or Dragonnet.

    Dragonnet loss = factual MSE + alpha * BCE(g, t) + beta * mean((y - q_t - eps*h)^2),
    with h = t/g - (1-t)/(1-g) and g clipped to PROP_CLIP inside h.
    """
    trunk, head0, head1, prop = net.trunk, net.head0, net.head1, net.prop

    def fn(params, batch, need_grad=True):
        x, t, y = batch
        n = len(y)
        if trunk:
            phi, trunk_cache = stack_forward(params, trunk, x, relu_last=True)
        else:
            phi, trunk_cache = x, []
        # each head only sees its own arm; the other arm contributes no gradient
        arm1 = t > 0.5
        arm0 = ~arm1
        q0, c0 = stack_forward(params, head0, phi[arm0])
        q1, c1 = stack_forward(params, head1, phi[arm1])
        yhat = np.empty(n)
        yhat[arm0] = q0[:, 0]
        yhat[arm1] = q1[:, 0]
        r = yhat - y
        loss = float(np.mean(r * r))
        d_yhat = 2.0 * r / n
        if prop:
            logit, cp = stack_forward(params, prop, phi)
            logit = logit[:, 0]
            g = expit(logit)
            bce = float(np.mean(np.logaddexp(0.0, logit) - t * logit))
            lo, hi = PROP_CLIP
            gc = np.clip(g, lo, hi)
            h = t / gc - (1 - t) / (1 - gc)
            eps = params["epsilon"][0]
            s = y - yhat - eps * h
            tr = float(np.mean(s * s))
            loss = loss + alpha * bce + beta * tr
        if not need_grad:
            return loss, None
        grads: Params = {}
        if prop:
            d_yhat = d_yhat + beta * (-2.0 * s / n)
            d_h = beta * (-2.0 * s * eps / n)
            d_gc = d_h * (-t / gc**2 - (1 - t) / (1 - gc) ** 2)
            d_g = d_gc * ((g > lo) & (g < hi))
            d_logit = alpha * (g - t) / n + d_g * g * (1 - g)
            grads["epsilon"] = np.array([float(np.sum(beta * (-2.0 * s * h / n)))])
        d_phi = np.empty_like(phi)
        d_phi[arm0] = stack_backward(params, head0, c0, d_yhat[arm0][:, None], grads)
        d_phi[arm1] = stack_backward(params, head1, c1, d_yhat[arm1][:, None], grads)
        if prop:
            d_phi += stack_backward(params, prop, cp, d_logit[:, None], grads)
        if trunk:
            stack_backward(params, trunk, trunk_cache, d_phi, grads, relu_last=True, input_grad=False)
        return loss, grads

    return fn


def fit_two_head(x, t, y, cfg: NetConfig, val: tuple | None = None, alpha: float = 0.0,
                 beta: float = 0.0, with_propensity: bool = False, freeze_trunk: bool = False):
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    net = init_two_head(x.shape[1], cfg, with_propensity)
    if val is not None:
        val = tuple(np.asarray(a, dtype=np.float64) for a in val)
    frozen = frozenset(k for k in net.params if k.startswith("trunk")) if freeze_trunk else frozenset()
    res = train(
        net.params, two_head_loss_grad(net, alpha, beta), (x, t, y), val,
        cfg.learning_rate, cfg.batch_size, cfg.max_epochs, cfg.patience, cfg.seed, frozen,
    )
    net.params = res.params
    return net, res
