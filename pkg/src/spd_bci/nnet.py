"""Trainable building blocks in plain numpy: dense, LSTM, attention, batch norm, losses, Adam.

Every layer keeps its parameters and gradient buffers in name-keyed
dicts of float64 arrays and caches its forward activations on the
instance, so a full backward pass runs without an autodiff framework.
All gradients are hand-derived; the test suite checks each block and the
composed model against central finite differences.

Conventions: batch-first arrays; dense weights are (out, in); LSTM gate
order is input, forget, output, candidate with the four gate blocks
stacked row-wise in one matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEAKY_SLOPE = 0.3
PROB_FLOOR = 1e-12


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def stable_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax with max subtraction; invariant to adding a constant along ``axis``."""
    shifted = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "identity":
        return z
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "leaky-relu":
        return np.where(z > 0.0, z, LEAKY_SLOPE * z)
    if kind == "softmax":
        return stable_softmax(z, axis=-1)
    raise ValueError(f"unknown activation {kind!r}")


def _activate_backward(grad_y: np.ndarray, z: np.ndarray, y: np.ndarray, kind: str) -> np.ndarray:
    if kind == "identity":
        return grad_y
    if kind == "tanh":
        return grad_y * (1.0 - y ** 2)
    if kind == "sigmoid":
        return grad_y * y * (1.0 - y)
    if kind == "leaky-relu":
        return grad_y * np.where(z > 0.0, 1.0, LEAKY_SLOPE)
    if kind == "softmax":
        inner = np.sum(grad_y * y, axis=-1, keepdims=True)
        return y * (grad_y - inner)
    raise ValueError(f"unknown activation {kind!r}")


class Dense:
    """Fully connected layer y = act(x W^T + b)."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity",
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.activation = activation
        self.params = {
            "w": glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim),
            "b": np.zeros(out_dim),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        self._x = x
        self._z = x @ self.params["w"].T + self.params["b"]
        self._y = _activate(self._z, self.activation)
        return self._y

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        dz = _activate_backward(grad_y, self._z, self._y, self.activation)
        self.grads["w"] += dz.T @ self._x
        self.grads["b"] += dz.sum(axis=0)
        return dz @ self.params["w"]


class Lstm:
    """Single LSTM layer unrolled over a (batch, length, input) sequence.

    Standard gate equations with sigmoid input/forget/output gates and a
    tanh candidate: c_t = f*c + i*g, h_t = o*tanh(c_t), starting from zero
    state. The forget-gate bias is initialized to +1.
    """

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.in_dim = in_dim
        self.hidden = hidden
        w = glorot_uniform(rng, (4 * hidden, in_dim + hidden), in_dim + hidden, hidden)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        self.params = {"w": w, "b": b}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.in_dim:
            raise ValueError(
                f"expected input of shape (batch, length, {self.in_dim}), got {x.shape}"
            )
        batch, length, _ = x.shape
        h = np.zeros((batch, self.hidden))
        c = np.zeros((batch, self.hidden))
        self._cache = []
        outputs = np.empty((batch, length, self.hidden))
        nh = self.hidden
        for t in range(length):
            z = np.concatenate([x[:, t, :], h], axis=1)
            acts = z @ self.params["w"].T + self.params["b"]
            i = sigmoid(acts[:, :nh])
            f = sigmoid(acts[:, nh:2 * nh])
            o = sigmoid(acts[:, 2 * nh:3 * nh])
            g = np.tanh(acts[:, 3 * nh:])
            c_prev = c
            c = f * c_prev + i * g
            tanh_c = np.tanh(c)
            h = o * tanh_c
            outputs[:, t, :] = h
            self._cache.append((z, i, f, o, g, c_prev, tanh_c))
        return outputs

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        batch, length, _ = grad_out.shape
        nh = self.hidden
        dx = np.empty((batch, length, self.in_dim))
        dh_next = np.zeros((batch, nh))
        dc_next = np.zeros((batch, nh))
        for t in reversed(range(length)):
            z, i, f, o, g, c_prev, tanh_c = self._cache[t]
            dh = grad_out[:, t, :] + dh_next
            do = dh * tanh_c
            dc = dh * o * (1.0 - tanh_c ** 2) + dc_next
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dc_next = dc * f
            da = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    do * o * (1.0 - o),
                    dg * (1.0 - g ** 2),
                ],
                axis=1,
            )
            self.grads["w"] += da.T @ z
            self.grads["b"] += da.sum(axis=0)
            dz = da @ self.params["w"]
            dx[:, t, :] = dz[:, : self.in_dim]
            dh_next = dz[:, self.in_dim:]
        return dx


class Attention:
    """Soft attention over a hidden-state sequence.

    Scores each step through u_t = tanh(W h_t + b). In the default
    ``summed-score`` mode the scalar score is the sum of u_t's components,
    softmax-normalized over time, and the context is the weighted sum of
    hidden states. ``per-component`` instead softmaxes each component of
    u over time and weights h elementwise (requires the projection to be
    square).
    """

    def __init__(self, hidden: int, att_dim: int | None = None, mode: str = "summed-score",
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        if mode not in ("summed-score", "per-component"):
            raise ValueError(f"unknown attention mode {mode!r}")
        att_dim = hidden if att_dim is None else att_dim
        if mode == "per-component" and att_dim != hidden:
            raise ValueError("per-component attention needs att_dim == hidden")
        self.mode = mode
        self.hidden = hidden
        self.att_dim = att_dim
        self.params = {
            "w": glorot_uniform(rng, (att_dim, hidden), hidden, att_dim),
            "b": np.zeros(att_dim),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, h_seq: np.ndarray, train: bool = True) -> np.ndarray:
        if h_seq.ndim != 3 or h_seq.shape[2] != self.hidden:
            raise ValueError(
                f"expected (batch, length, {self.hidden}) hidden sequence, got {h_seq.shape}"
            )
        self._h = h_seq
        self._u = np.tanh(h_seq @ self.params["w"].T + self.params["b"])
        if self.mode == "summed-score":
            scores = self._u.sum(axis=2)  # (batch, length)
            self._alpha = stable_softmax(scores, axis=1)
            context = np.einsum("bl,blh->bh", self._alpha, h_seq)
        else:
            self._alpha = stable_softmax(self._u, axis=1)  # per component over time
            context = np.einsum("blh,blh->bh", self._alpha, h_seq)
        return context

    @property
    def weights(self) -> np.ndarray:
        """Attention weights from the last forward pass."""
        return self._alpha

    def backward(self, grad_context: np.ndarray) -> np.ndarray:
        h, u, alpha = self._h, self._u, self._alpha
        if self.mode == "summed-score":
            dalpha = np.einsum("bh,blh->bl", grad_context, h)
            dh = alpha[:, :, None] * grad_context[:, None, :]
            inner = np.sum(dalpha * alpha, axis=1, keepdims=True)
            dscores = alpha * (dalpha - inner)
            du = dscores[:, :, None] * np.ones((1, 1, self.att_dim))
        else:
            dalpha = grad_context[:, None, :] * h
            dh = alpha * grad_context[:, None, :]
            inner = np.sum(dalpha * alpha, axis=1, keepdims=True)
            du = alpha * (dalpha - inner)
        da = du * (1.0 - u ** 2)
        self.grads["w"] += np.einsum("bla,blh->ah", da, h)
        self.grads["b"] += da.sum(axis=(0, 1))
        dh += da @ self.params["w"]
        return dh


class Dropout:
    """Inverted dropout: scales kept units by 1/(1-rate) in training, identity in eval."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._mask = None

    def forward(self, x: np.ndarray, train: bool = True,
                rng: np.random.Generator | None = None) -> np.ndarray:
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return grad_y
        return grad_y * self._mask


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator, train: bool) -> np.ndarray:
    """Functional form of inverted dropout."""
    layer = Dropout(rate)
    return layer.forward(x, train=train, rng=rng)


class BatchNorm:
    """Per-feature standardization with learned scale/shift and running stats."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.eps = eps
        self.momentum = momentum
        self.params = {"gamma": np.ones(dim), "beta": np.zeros(dim)}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        if train:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean = self.running_mean
            var = self.running_var
        self._train = train
        self._x = x
        self._mean = mean
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mean) * self._inv_std
        return self.params["gamma"] * self._xhat + self.params["beta"]

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        xhat, inv_std = self._xhat, self._inv_std
        self.grads["gamma"] += np.sum(grad_y * xhat, axis=0)
        self.grads["beta"] += np.sum(grad_y, axis=0)
        dxhat = grad_y * self.params["gamma"]
        if not self._train:
            return dxhat * inv_std
        n = grad_y.shape[0]
        # Batch statistics depend on x, so fold their gradients back in.
        return (inv_std / n) * (
            n * dxhat - np.sum(dxhat, axis=0) - xhat * np.sum(dxhat * xhat, axis=0)
        )


def batch_norm_lite(x: np.ndarray, layer: BatchNorm, train: bool) -> np.ndarray:
    """Functional wrapper around a :class:`BatchNorm` instance."""
    return layer.forward(x, train=train)


# ---------------------------------------------------------------------------
# Losses. Each loss returns (scalar mean loss, gradient wrt its first input).
# ---------------------------------------------------------------------------

def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean categorical cross-entropy of probabilities against one-hot targets."""
    p = np.maximum(probs, PROB_FLOOR)
    return float(-np.mean(np.sum(targets * np.log(p), axis=-1)))


def softmax_cross_entropy_with_logits(logits: np.ndarray, targets: np.ndarray):
    """Fused softmax + categorical cross-entropy, numerically stable."""
    probs = stable_softmax(logits, axis=-1)
    loss = cross_entropy(probs, targets)
    grad = (probs - targets) / logits.shape[0]
    return loss, grad


def binary_cross_entropy(p: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy of probabilities against 0/1 targets."""
    p = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def binary_cross_entropy_with_logits(logits: np.ndarray, y: np.ndarray):
    """Fused sigmoid + binary cross-entropy."""
    p = sigmoid(logits)
    loss = binary_cross_entropy(p, y)
    grad = (p - y) / y.size
    return loss, grad


def mean_squared_error(pred: np.ndarray, y: np.ndarray):
    """Mean squared error and its gradient wrt the prediction."""
    diff = pred - y
    loss = float(np.mean(diff ** 2))
    grad = 2.0 * diff / diff.size
    return loss, grad


# ---------------------------------------------------------------------------
# Optimization.
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict[str, np.ndarray], lr: float = 0.001) -> AdamState:
    state = AdamState(lr=lr)
    state.m = {k: np.zeros_like(p) for k, p in params.items()}
    state.v = {k: np.zeros_like(p) for k, p in params.items()}
    return state


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    for key, p in params.items():
        g = grads[key]
        state.m[key] = b1 * state.m[key] + (1.0 - b1) * g
        state.v[key] = b2 * state.v[key] + (1.0 - b2) * g ** 2
        m_hat = state.m[key] / bias1
        v_hat = state.v[key] / bias2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float = 5.0) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    A non-finite norm is returned unscaled so divergence stays visible to
    the caller instead of being silently zeroed out.
    """
    with np.errstate(over="ignore"):
        total = np.sqrt(sum(float(np.sum(g ** 2)) for g in grads.values()))
    if np.isfinite(total) and total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# ---------------------------------------------------------------------------
# Checkpoints: the named-tensor container from the data module (magic,
# version, per-tensor name + shape header, f64 little-endian payload).
# ---------------------------------------------------------------------------

def save_checkpoint(path, tensors: dict[str, np.ndarray]):
    from .data import write_tensors

    write_tensors(path, tensors)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    from .data import read_tensors

    return read_tensors(path)
