"""Two-stream architecture: LSTM-attention temporal stream, dense spatial stream, learned fusion.

The temporal stream runs stacked LSTM layers (each followed by a
per-dataset regularizer: dropout, or batch norm plus leaky ReLU) over the
spectral feature sequence, pools the final layer's hidden states with
soft attention, and projects to an embedding. The spatial stream maps
the concatenated tangent-space vector through two dense layers with
dropout. Fusion scores each embedding with a small encoder, normalizes
the two scalar scores, rescales each embedding by (1 + weight), and
feeds the concatenation through a dense layer into the task head.

Training is plain mini-batch Adam with global-norm gradient clipping;
everything is deterministic given the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .nnet import (
    Attention,
    BatchNorm,
    Dense,
    Dropout,
    Lstm,
    adam_init,
    adam_step,
    binary_cross_entropy_with_logits,
    clip_global_norm,
    mean_squared_error,
    sigmoid,
    softmax_cross_entropy_with_logits,
    stable_softmax,
)

FUSION_MODES = ("weighted", "soft-attention", "concatenation", "independent-sigmoid")
VARIANTS = ("fused", "temporal", "spatial")

_LOSS_FOR_ACTIVATION = {
    "softmax": ("cross-entropy",),
    "sigmoid": ("bce", "mse"),
    "linear": ("mse",),
}


@dataclass
class ArchitectureConfig:
    """Sizes, regularizers, and task pairing for one model instance."""

    temporal_input_dim: int
    spatial_input_dim: int
    n_outputs: int
    lstm_layers: int = 3
    lstm_hidden: int = 256
    temporal_regularizer: str = "batchnorm"  # "batchnorm" or "dropout"
    temporal_dropout: tuple = (0.2, 0.1, 0.1)
    temporal_embedding_dim: int = 64
    spatial_hidden: int = 512
    spatial_embedding_dim: int = 64
    spatial_dropout: float = 0.5
    encoder_hidden: int = 32
    fusion_hidden: int = 128
    fusion_mode: str = "weighted"
    attention_mode: str = "summed-score"
    output_activation: str = "softmax"
    loss: str = "cross-entropy"
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.001
    grad_clip: float = 5.0
    variant: str = "fused"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion_mode!r}")
        if self.temporal_regularizer not in ("batchnorm", "dropout"):
            raise ValueError(f"unknown temporal regularizer {self.temporal_regularizer!r}")
        allowed = _LOSS_FOR_ACTIVATION.get(self.output_activation)
        if allowed is None:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if self.loss not in allowed:
            raise ValueError(
                f"loss {self.loss!r} cannot pair with activation {self.output_activation!r}"
            )
        if self.loss == "cross-entropy" and self.n_outputs < 2:
            raise ValueError("categorical cross-entropy needs at least two outputs")
        if self.loss in ("bce", "mse") and self.n_outputs != 1:
            raise ValueError(f"{self.loss} pairs with a single output unit")
        if self.temporal_regularizer == "dropout" and len(self.temporal_dropout) != self.lstm_layers:
            raise ValueError(
                f"{len(self.temporal_dropout)} dropout rates for {self.lstm_layers} LSTM layers"
            )


class _SeqBatchNormLeaky:
    """Batch norm over (batch*length, hidden) followed by leaky ReLU."""

    def __init__(self, dim: int, slope: float = 0.3):
        self.bn = BatchNorm(dim)
        self.slope = slope
        self.params = self.bn.params
        self.grads = self.bn.grads

    def forward(self, x, train=True, rng=None):
        self._shape = x.shape
        flat = x.reshape(-1, x.shape[-1])
        y = self.bn.forward(flat, train=train)
        self._y = y
        return np.where(y > 0.0, y, self.slope * y).reshape(self._shape)

    def backward(self, grad):
        flat = grad.reshape(-1, grad.shape[-1])
        dy = flat * np.where(self._y > 0.0, 1.0, self.slope)
        return self.bn.backward(dy).reshape(self._shape)


class _SeqDropout:
    """Dropout adapter with the same forward signature as the batch-norm block."""

    def __init__(self, rate: float):
        self.layer = Dropout(rate)
        self.params = self.layer.params
        self.grads = self.layer.grads

    def forward(self, x, train=True, rng=None):
        return self.layer.forward(x, train=train, rng=rng)

    def backward(self, grad):
        return self.layer.backward(grad)


class TwoStreamModel:
    """Trainable spatio-temporal model; see the module docstring for the layout."""

    def __init__(self, config: ArchitectureConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self._modules: dict[str, object] = {}

        if config.variant in ("fused", "temporal"):
            in_dim = config.temporal_input_dim
            self.lstm_stack = []
            for i in range(config.lstm_layers):
                lstm = Lstm(in_dim, config.lstm_hidden, rng=rng)
                if config.temporal_regularizer == "batchnorm":
                    reg = _SeqBatchNormLeaky(config.lstm_hidden)
                else:
                    reg = _SeqDropout(config.temporal_dropout[i])
                self.lstm_stack.append((lstm, reg))
                self._modules[f"lstm{i}"] = lstm
                self._modules[f"lstm{i}_reg"] = reg
                in_dim = config.lstm_hidden
            self.attention = Attention(
                config.lstm_hidden, mode=config.attention_mode, rng=rng
            )
            self.temporal_embed = Dense(
                config.lstm_hidden, config.temporal_embedding_dim, "identity", rng=rng
            )
            self._modules["attention"] = self.attention
            self._modules["temporal_embed"] = self.temporal_embed

        if config.variant in ("fused", "spatial"):
            self.spatial_fc1 = Dense(
                config.spatial_input_dim, config.spatial_hidden, "leaky-relu", rng=rng
            )
            self.spatial_drop1 = Dropout(config.spatial_dropout)
            self.spatial_fc2 = Dense(
                config.spatial_hidden, config.spatial_embedding_dim, "identity", rng=rng
            )
            self.spatial_drop2 = Dropout(config.spatial_dropout)
            self._modules["spatial_fc1"] = self.spatial_fc1
            self._modules["spatial_fc2"] = self.spatial_fc2

        if config.variant == "fused":
            fusion_in = config.temporal_embedding_dim + config.spatial_embedding_dim
            if config.fusion_mode != "concatenation":
                self.encoder_t = [
                    Dense(config.temporal_embedding_dim, config.encoder_hidden, "tanh", rng=rng),
                    Dense(config.encoder_hidden, 1, "identity", rng=rng),
                ]
                self.encoder_s = [
                    Dense(config.spatial_embedding_dim, config.encoder_hidden, "tanh", rng=rng),
                    Dense(config.encoder_hidden, 1, "identity", rng=rng),
                ]
                self._modules["encoder_t0"], self._modules["encoder_t1"] = self.encoder_t
                self._modules["encoder_s0"], self._modules["encoder_s1"] = self.encoder_s
        elif config.variant == "temporal":
            fusion_in = config.temporal_embedding_dim
        else:
            fusion_in = config.spatial_embedding_dim
        self.fusion_fc = Dense(fusion_in, config.fusion_hidden, "leaky-relu", rng=rng)
        self.head = Dense(config.fusion_hidden, config.n_outputs, "identity", rng=rng)
        self._modules["fusion_fc"] = self.fusion_fc
        self._modules["head"] = self.head

    # -- parameter access ---------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for mod_name, mod in self._modules.items():
            for key, arr in mod.params.items():
                out[f"{mod_name}.{key}"] = arr
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for mod_name, mod in self._modules.items():
            for key, arr in mod.grads.items():
                out[f"{mod_name}.{key}"] = arr
        return out

    def zero_grads(self):
        for g in self.grads().values():
            g[:] = 0.0

    def load_params(self, tensors: dict[str, np.ndarray]):
        params = self.params()
        missing = set(params) - set(tensors)
        if missing:
            raise ValueError(f"checkpoint is missing tensors: {sorted(missing)}")
        for key, arr in params.items():
            incoming = tensors[key]
            if incoming.shape != arr.shape:
                raise ValueError(
                    f"tensor {key!r} has shape {incoming.shape}, model expects {arr.shape}"
                )
            arr[:] = incoming

    # -- streams ------------------------------------------------------------

    def temporal_embedding(self, xt, train=True, rng=None) -> np.ndarray:
        h = xt
        for lstm, reg in self.lstm_stack:
            h = lstm.forward(h, train=train)
            h = reg.forward(h, train=train, rng=rng)
        context = self.attention.forward(h, train=train)
        return self.temporal_embed.forward(context, train=train)

    def _temporal_backward(self, grad_embed):
        grad = self.temporal_embed.backward(grad_embed)
        grad = self.attention.backward(grad)
        for lstm, reg in reversed(self.lstm_stack):
            grad = reg.backward(grad)
            grad = lstm.backward(grad)
        return grad

    def spatial_embedding(self, xs, train=True, rng=None) -> np.ndarray:
        h = self.spatial_fc1.forward(xs, train=train)
        h = self.spatial_drop1.forward(h, train=train, rng=rng)
        h = self.spatial_fc2.forward(h, train=train)
        return self.spatial_drop2.forward(h, train=train, rng=rng)

    def _spatial_backward(self, grad_embed):
        grad = self.spatial_drop2.backward(grad_embed)
        grad = self.spatial_fc2.backward(grad)
        grad = self.spatial_drop1.backward(grad)
        return self.spatial_fc1.backward(grad)

    def _encode_score(self, encoder, embed, train):
        hidden = encoder[0].forward(embed, train=train)
        return encoder[1].forward(hidden, train=train)

    def _encoder_backward(self, encoder, grad_score):
        return encoder[0].backward(encoder[1].backward(grad_score))

    # -- full forward/backward ----------------------------------------------

    def forward(self, xt, xs, train=True, rng=None) -> np.ndarray:
        cfg = self.config
        if cfg.variant == "temporal":
            fused = self.temporal_embedding(xt, train=train, rng=rng)
        elif cfg.variant == "spatial":
            fused = self.spatial_embedding(xs, train=train, rng=rng)
        else:
            e_t = self.temporal_embedding(xt, train=train, rng=rng)
            e_s = self.spatial_embedding(xs, train=train, rng=rng)
            self._e_t, self._e_s = e_t, e_s
            if cfg.fusion_mode == "concatenation":
                fused = np.concatenate([e_t, e_s], axis=1)
            else:
                s_t = self._encode_score(self.encoder_t, e_t, train)
                s_s = self._encode_score(self.encoder_s, e_s, train)
                if cfg.fusion_mode == "independent-sigmoid":
                    alpha = np.concatenate([sigmoid(s_t), sigmoid(s_s)], axis=1)
                    scale = 1.0 + alpha
                else:
                    alpha = stable_softmax(np.concatenate([s_t, s_s], axis=1), axis=1)
                    base = 1.0 if cfg.fusion_mode == "weighted" else 0.0
                    scale = base + alpha
                self._alpha = alpha
                fused = np.concatenate(
                    [scale[:, 0:1] * e_t, scale[:, 1:2] * e_s], axis=1
                )
        hidden = self.fusion_fc.forward(fused, train=train)
        return self.head.forward(hidden, train=train)

    @property
    def fusion_weights(self) -> np.ndarray:
        """Stream weights (batch, 2) from the last fused forward pass."""
        return self._alpha

    def backward(self, grad_logits):
        cfg = self.config
        grad = self.fusion_fc.backward(self.head.backward(grad_logits))
        if cfg.variant == "temporal":
            self._temporal_backward(grad)
            return
        if cfg.variant == "spatial":
            self._spatial_backward(grad)
            return
        t_dim = cfg.temporal_embedding_dim
        g_t_scaled, g_s_scaled = grad[:, :t_dim], grad[:, t_dim:]
        if cfg.fusion_mode == "concatenation":
            self._temporal_backward(g_t_scaled)
            self._spatial_backward(g_s_scaled)
            return
        e_t, e_s, alpha = self._e_t, self._e_s, self._alpha
        if cfg.fusion_mode == "independent-sigmoid":
            scale = 1.0 + alpha
        else:
            base = 1.0 if cfg.fusion_mode == "weighted" else 0.0
            scale = base + alpha
        grad_e_t = scale[:, 0:1] * g_t_scaled
        grad_e_s = scale[:, 1:2] * g_s_scaled
        dalpha = np.stack(
            [np.sum(g_t_scaled * e_t, axis=1), np.sum(g_s_scaled * e_s, axis=1)], axis=1
        )
        if cfg.fusion_mode == "independent-sigmoid":
            dscores = dalpha * alpha * (1.0 - alpha)
        else:
            inner = np.sum(dalpha * alpha, axis=1, keepdims=True)
            dscores = alpha * (dalpha - inner)
        grad_e_t += self._encoder_backward(self.encoder_t, dscores[:, 0:1])
        grad_e_s += self._encoder_backward(self.encoder_s, dscores[:, 1:2])
        self._temporal_backward(grad_e_t)
        self._spatial_backward(grad_e_s)

    # -- task head ------------------------------------------------------------

    def loss_and_grad(self, logits, targets):
        cfg = self.config
        if cfg.loss == "cross-entropy":
            return softmax_cross_entropy_with_logits(logits, targets)
        if cfg.loss == "bce":
            return binary_cross_entropy_with_logits(logits, targets)
        # mse with sigmoid or linear output
        if cfg.output_activation == "sigmoid":
            p = sigmoid(logits)
            loss, dp = mean_squared_error(p, targets)
            return loss, dp * p * (1.0 - p)
        return mean_squared_error(logits, targets)

    def predict_scores(self, xt, xs) -> np.ndarray:
        logits = self.forward(xt, xs, train=False)
        if self.config.output_activation == "softmax":
            return stable_softmax(logits, axis=1)
        if self.config.output_activation == "sigmoid":
            return sigmoid(logits)
        return logits

    def predict(self, xt, xs) -> np.ndarray:
        scores = self.predict_scores(xt, xs)
        if self.config.loss == "cross-entropy":
            return np.argmax(scores, axis=1)
        if self.config.loss == "bce":
            return (scores[:, 0] >= 0.5).astype(int)
        return scores[:, 0]


def encode_targets(labels, config: ArchitectureConfig) -> np.ndarray:
    """Labels to training targets: one-hot for CE, column vectors otherwise."""
    labels = np.asarray(labels)
    if config.loss == "cross-entropy":
        idx = labels.astype(int)
        if idx.min() < 0 or idx.max() >= config.n_outputs:
            raise ValueError(
                f"class labels outside [0, {config.n_outputs}): {idx.min()}..{idx.max()}"
            )
        onehot = np.zeros((len(idx), config.n_outputs))
        onehot[np.arange(len(idx)), idx] = 1.0
        return onehot
    return labels.astype(np.float64).reshape(-1, 1)


def train_model(
    model: TwoStreamModel,
    xt,
    xs,
    labels,
    *,
    epochs: int | None = None,
    batch_size: int | None = None,
    lr: float | None = None,
    seed: int = 0,
    log_path=None,
) -> list[dict]:
    """Mini-batch Adam training; returns the per-epoch loss log.

    Deterministic given the seed: shuffling and dropout masks come from
    one generator. A non-finite loss aborts with diagnostics.
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    batch_size = cfg.batch_size if batch_size is None else batch_size
    lr = cfg.learning_rate if lr is None else lr
    targets = encode_targets(labels, cfg)
    n = targets.shape[0]
    if xt is not None and len(xt) != n:
        raise ValueError(f"{len(xt)} temporal inputs for {n} labels")
    if xs is not None and len(xs) != n:
        raise ValueError(f"{len(xs)} spatial inputs for {n} labels")
    rng = np.random.default_rng(seed)
    optimizer = adam_init(model.params(), lr=lr)
    history = []
    labels_array = np.asarray(labels)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            bt = xt[batch] if xt is not None else None
            bs = xs[batch] if xs is not None else None
            model.zero_grads()
            logits = model.forward(bt, bs, train=True, rng=rng)
            loss, dlogits = model.loss_and_grad(logits, targets[batch])
            if not np.isfinite(loss):
                raise NumericalError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"batch starting at sample {start}"
                )
            model.backward(dlogits)
            grads = model.grads()
            clip_global_norm(grads, cfg.grad_clip)
            adam_step(optimizer, model.params(), grads)
            epoch_loss += loss * len(batch)
        record = {"epoch": epoch, "loss": epoch_loss / n}
        predictions = model.predict(xt, xs)
        if cfg.loss in ("cross-entropy", "bce"):
            record["accuracy"] = float(np.mean(predictions == labels_array.astype(int)))
        else:
            record["rmse"] = root_mean_squared_error(labels_array, predictions)
        history.append(record)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            for record in history:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    return history


# ---------------------------------------------------------------------------
# Metrics.
# ---------------------------------------------------------------------------

def confusion_counts(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Confusion matrix with true classes as rows, predictions as columns."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    counts = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(counts, (y_true, y_pred), 1)
    return counts


def kappa_from_agreement(p0: float, pe: float) -> float:
    """Cohen's kappa from observed and chance agreement ratios."""
    if pe >= 1.0:
        raise NumericalError("chance agreement of 1 makes kappa undefined")
    return (p0 - pe) / (1.0 - pe)


def cohen_kappa(confusion: np.ndarray) -> float:
    """Chance-corrected agreement with empirical marginals for the chance term."""
    confusion = np.asarray(confusion, dtype=np.float64)
    total = confusion.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    p0 = np.trace(confusion) / total
    pe = float(np.sum(confusion.sum(axis=1) * confusion.sum(axis=0)) / total ** 2)
    return kappa_from_agreement(p0, pe)


def root_mean_squared_error(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def pearson_correlation(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    a = y_true - y_true.mean()
    b = y_pred - y_pred.mean()
    denom = np.sqrt(np.sum(a ** 2) * np.sum(b ** 2))
    if denom == 0.0:
        raise NumericalError("Pearson correlation undefined: zero variance in inputs")
    return float(np.sum(a * b) / denom)


def evaluate_model(model: TwoStreamModel, xt, xs, labels) -> dict:
    """Task metrics on held-out data: accuracy and kappa, or RMSE and PCC."""
    predictions = model.predict(xt, xs)
    labels = np.asarray(labels)
    if model.config.loss in ("cross-entropy", "bce"):
        n_classes = model.config.n_outputs if model.config.loss == "cross-entropy" else 2
        confusion = confusion_counts(labels.astype(int), predictions, n_classes)
        return {
            "accuracy": float(np.mean(predictions == labels.astype(int))),
            "kappa": cohen_kappa(confusion),
            "confusion": confusion.tolist(),
        }
    return {
        "rmse": root_mean_squared_error(labels, predictions),
        "pcc": pearson_correlation(labels, predictions),
    }
