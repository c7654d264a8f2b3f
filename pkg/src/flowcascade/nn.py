"""Minimal dense feedforward engine: forward, exact backprop, AdaMax, training.

Everything runs in float64 numpy. Losses are defined per sample (MSE is the
mean over output components of squared error, with no 1/2 factor) and
averaged over the mini-batch; gradients are exact for that definition, which
is what the finite-difference checks pin down.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805

ACTIVATIONS = ("relu", "selu", "sigmoid", "softmax", "identity")
LOSSES = ("mean-squared-error", "categorical-cross-entropy", "binary-cross-entropy")

_EPS = 1e-12  # keeps log() finite; used identically in loss values and grads


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "selu":
        return np.where(z > 0, SELU_LAMBDA * z, SELU_LAMBDA * SELU_ALPHA * np.expm1(z))
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "softmax":
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, z, a, grad_a):
    """dL/dz from dL/da (exact Jacobian-vector products, softmax included)."""
    if name == "relu":
        return grad_a * (z > 0)
    if name == "selu":
        return grad_a * np.where(z > 0, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(z, 0.0)))
    if name == "sigmoid":
        return grad_a * a * (1.0 - a)
    if name == "softmax":
        return a * (grad_a - (grad_a * a).sum(axis=-1, keepdims=True))
    if name == "identity":
        return grad_a
    raise ValueError(f"unknown activation {name!r}")


def loss_value(name, output, target):
    """Mean over the batch of the per-sample loss."""
    a = np.atleast_2d(output)
    y = np.atleast_2d(target)
    if name == "mean-squared-error":
        per = ((a - y) ** 2).mean(axis=-1)
    elif name == "categorical-cross-entropy":
        per = -(y * np.log(a + _EPS)).sum(axis=-1)
    elif name == "binary-cross-entropy":
        per = -(y * np.log(a + _EPS) + (1.0 - y) * np.log(1.0 - a + _EPS)).mean(axis=-1)
    else:
        raise ValueError(f"unknown loss {name!r}")
    return float(per.mean())


def _loss_grad(name, a, y):
    """dL/d(output) of the per-sample loss (batch averaging applied later)."""
    n = a.shape[-1]
    if name == "mean-squared-error":
        return 2.0 * (a - y) / n
    if name == "categorical-cross-entropy":
        return -y / (a + _EPS)
    if name == "binary-cross-entropy":
        return (-(y / (a + _EPS)) + (1.0 - y) / (1.0 - a + _EPS)) / n
    raise ValueError(f"unknown loss {name!r}")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]


@dataclass
class Network:
    layers: list
    loss: str

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer dims disagree: {prev.out_dim} -> {nxt.in_dim}"
                )

    @classmethod
    def create(cls, layer_sizes, activations, loss, seed=0):
        """Glorot-uniform init: U(+-sqrt(6/(in+out))), seeded."""
        if len(activations) != len(layer_sizes) - 1:
            raise ValueError("need one activation per layer")
        rng = np.random.default_rng(seed)
        layers = []
        for d_in, d_out, act in zip(layer_sizes, layer_sizes[1:], activations):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            bound = math.sqrt(6.0 / (d_in + d_out))
            layers.append(
                DenseLayer(
                    weights=rng.uniform(-bound, bound, size=(d_out, d_in)),
                    biases=np.zeros(d_out),
                    activation=act,
                )
            )
        return cls(layers=layers, loss=loss)

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def forward(self, x):
        """Output for a single vector or a (batch, in_dim) matrix."""
        single = np.ndim(x) == 1
        a = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if a.shape[1] != self.in_dim:
            raise ValueError(f"input dim {a.shape[1]} != network input {self.in_dim}")
        for layer in self.layers:
            a = _act(layer.activation, a @ layer.weights.T + layer.biases)
        return a[0] if single else a

    def forward_cached(self, x):
        """Forward pass keeping pre-activations and activations for backward."""
        a = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if a.shape[1] != self.in_dim:
            raise ValueError(f"input dim {a.shape[1]} != network input {self.in_dim}")
        zs, acts = [], [a]
        for layer in self.layers:
            z = a @ layer.weights.T + layer.biases
            a = _act(layer.activation, z)
            zs.append(z)
            acts.append(a)
        return a, (zs, acts)

    def predict(self, X, chunk=8192):
        """Chunked forward for large inputs (ndarray or a .rows() source)."""
        n = len(X)
        take = X.rows if hasattr(X, "rows") else (lambda idx: X[idx])
        out = np.empty((n, self.out_dim))
        for lo in range(0, n, chunk):
            idx = np.arange(lo, min(lo + chunk, n))
            out[idx] = self.forward(take(idx))
        return out

    def parameters(self):
        """Flat list [W0, b0, W1, b1, ...]; arrays are live references."""
        params = []
        for layer in self.layers:
            params.append(layer.weights)
            params.append(layer.biases)
        return params

    def copy(self):
        return Network(
            layers=[
                DenseLayer(l.weights.copy(), l.biases.copy(), l.activation)
                for l in self.layers
            ],
            loss=self.loss,
        )


def backward(net: Network, x, target):
    """Exact gradients of the batch-mean loss for every weight and bias.

    Returns (loss, grads) with grads ordered like net.parameters().
    """
    y = np.atleast_2d(np.asarray(target, dtype=np.float64))
    output, (zs, acts) = net.forward_cached(x)
    if y.shape != output.shape:
        raise ValueError(f"target shape {y.shape} != output shape {output.shape}")
    batch = output.shape[0]
    loss = loss_value(net.loss, output, y)
    grad_a = _loss_grad(net.loss, output, y) / batch
    grads = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        grad_z = _act_grad(layer.activation, zs[i], acts[i + 1], grad_a)
        grads.append(grad_z.sum(axis=0))  # d biases
        grads.append(grad_z.T @ acts[i])  # d weights
        if i > 0:
            grad_a = grad_z @ layer.weights
    grads.reverse()
    return loss, grads


@dataclass
class TrainConfig:
    batch_size: int = 80
    epochs: int = 20
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class AdamaxState:
    t: int
    m: list
    u: list

    @classmethod
    def zeros(cls, params):
        return cls(t=0, m=[np.zeros_like(p) for p in params], u=[np.zeros_like(p) for p in params])


def adamax_step(params, grads, state: AdamaxState, config: TrainConfig):
    """One AdaMax update, in place:

        t <- t+1;  m <- b1*m + (1-b1)*g;  u <- max(b2*u, |g|)
        param <- param - (lr / (1 - b1^t)) * m / (u + eps)
    """
    state.t += 1
    scale = config.learning_rate / (1.0 - config.beta1 ** state.t)
    for p, g, m, u in zip(params, grads, state.m, state.u):
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        np.maximum(config.beta2 * u, np.abs(g), out=u)
        p -= scale * m / (u + config.epsilon)
    return params, state


def _row_source(X):
    if hasattr(X, "rows"):
        return len(X), X.rows
    arr = np.asarray(X)
    return len(arr), (lambda idx: arr[idx])


def train(net: Network, X, Y, config: TrainConfig):
    """Mini-batch AdaMax training; deterministic given shuffle_seed.

    X and Y may be arrays or lazy sources exposing __len__ and .rows(idx).
    Returns the per-epoch mean training loss history; net is trained in place.
    """
    n, take_x = _row_source(X)
    ny, take_y = _row_source(Y)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if n != ny:
        raise ValueError(f"X has {n} rows but Y has {ny}")
    rng = np.random.default_rng(config.shuffle_seed)
    params = net.parameters()
    state = AdamaxState.zeros(params)
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            loss, grads = backward(net, take_x(idx), take_y(idx))
            adamax_step(params, grads, state, config)
            total += loss * len(idx)
        if not all(np.isfinite(p).all() for p in params):
            raise FloatingPointError("training produced non-finite parameters")
        history.append(total / n)
    return history


def evaluate_loss(net: Network, X, Y, chunk=8192):
    """Mean loss over a dataset, without touching parameters."""
    n, take_x = _row_source(X)
    _, take_y = _row_source(Y)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    total = 0.0
    for lo in range(0, n, chunk):
        idx = np.arange(lo, min(lo + chunk, n))
        out = net.forward(take_x(idx))
        total += loss_value(net.loss, out, take_y(idx)) * len(idx)
    return total / n


@dataclass
class GridResult:
    best_index: int
    best_candidate: object
    best_network: Network
    val_losses: list = field(default_factory=list)


def grid_search(candidates, build, train_X, train_Y, val_X, val_Y) -> GridResult:
    """Train every candidate and keep the one with the lowest validation
    loss; ties go to the earliest candidate. build(candidate) must return a
    fresh (Network, TrainConfig) pair."""
    if not candidates:
        raise ValueError("grid_search needs at least one candidate")
    best_idx, best_net, losses = 0, None, []
    for i, cand in enumerate(candidates):
        net, cfg = build(cand)
        train(net, train_X, train_Y, cfg)
        vloss = evaluate_loss(net, val_X, val_Y)
        losses.append(vloss)
        if best_net is None or vloss < losses[best_idx]:
            best_idx, best_net = i, net
    return GridResult(best_idx, candidates[best_idx], best_net, losses)


def net_to_dict(net: Network) -> dict:
    return {
        "loss": net.loss,
        "layers": [
            {
                "activation": l.activation,
                "weights": l.weights.tolist(),
                "biases": l.biases.tolist(),
            }
            for l in net.layers
        ],
    }


def net_from_dict(doc: dict) -> Network:
    return Network(
        layers=[
            DenseLayer(
                weights=np.array(l["weights"], dtype=np.float64),
                biases=np.array(l["biases"], dtype=np.float64),
                activation=l["activation"],
            )
            for l in doc["layers"]
        ],
        loss=doc["loss"],
    )


def net_to_json(net: Network) -> str:
    # json emits repr-style floats, so doubles round-trip bit-exactly
    return json.dumps(net_to_dict(net))


def net_from_json(text: str) -> Network:
    return net_from_dict(json.loads(text))
