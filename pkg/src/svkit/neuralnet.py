"""Feed-forward network for learning speaker-discriminative frame features.

Plain numpy, float64 throughout: minibatch SGD on a softmax cross-entropy
objective, with a learning-rate schedule that halves the rate whenever the
held-out cross-validation loss stops improving and stops once the rate
falls under a floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import formats

_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda a: (a > 0.0).astype(np.float64)),
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "sigmoid": (lambda z: 1.0 / (1.0 + np.exp(-z)), lambda a: a * (1.0 - a)),
}


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer sizes and nonlinearity; the output layer is always softmax."""

    input_dim: int
    hidden_dims: tuple[int, ...] = (200, 200, 200, 200)
    output_dim: int = 80
    activation: str = "relu"

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer dims must be >= 1, got {dims}")
        if not self.hidden_dims:
            raise ValueError("need at least one hidden layer")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}, "
                             f"expected one of {sorted(_ACTIVATIONS)}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)


@dataclass
class MlpParams:
    """Per-layer weight matrices (out x in) and bias vectors."""

    arch: MlpArchitecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "MlpParams":
        return MlpParams(self.arch, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.008
    lr_halving_threshold: float = 0.005  # minimum relative CV-loss improvement
    lr_floor: float = 1e-5
    max_epochs: int = 50
    minibatch_size: int = 256
    seed: int = 0
    cv_fraction: float = 1.0 / 12.0

    def __post_init__(self):
        if not self.initial_lr > self.lr_floor > 0:
            raise ValueError("require initial_lr > lr_floor > 0")
        if not 0.0 < self.cv_fraction < 1.0:
            raise ValueError(f"cv_fraction must be in (0, 1), got {self.cv_fraction}")
        if self.minibatch_size < 1 or self.max_epochs < 0:
            raise ValueError("minibatch_size >= 1 and max_epochs >= 0 required")


@dataclass
class EpochStats:
    epoch: int
    learning_rate: float
    train_loss: float
    cv_loss: float
    cv_accuracy: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    stop_reason: str = ""


def init_params(arch: MlpArchitecture, seed: int) -> MlpParams:
    """Uniform fan-based initialization (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    dims = arch.dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(arch, weights, biases)


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.arch.input_dim:
        raise ValueError(f"input dim mismatch at layer 0: expected "
                         f"{params.arch.input_dim}, got {x.shape[1]}")
    return x


def forward(params: MlpParams, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Run a batch through the net.

    Returns (hidden activations per layer, softmax outputs). Hidden
    activations are post-nonlinearity, which is what feature extraction
    reads.
    """
    x = _check_input(params, x)
    act, _ = _ACTIVATIONS[params.arch.activation]
    hiddens = []
    a = x
    n_hidden = len(params.arch.hidden_dims)
    for l in range(n_hidden):
        a = act(a @ params.weights[l].T + params.biases[l])
        hiddens.append(a)
    logits = a @ params.weights[n_hidden].T + params.biases[n_hidden]
    return hiddens, _softmax(logits)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_gradients(params: MlpParams, x: np.ndarray,
                       targets: np.ndarray) -> tuple[float, MlpParams]:
    """Mean cross-entropy over the batch plus gradients for every parameter.

    Gradients are returned in an MlpParams of matching shapes. Targets are
    integer class indices.
    """
    x = _check_input(params, x)
    y = np.asarray(targets, dtype=np.int64).ravel()
    k = params.arch.output_dim
    if y.size != x.shape[0]:
        raise ValueError(f"batch of {x.shape[0]} inputs but {y.size} targets")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"target index out of range [0, {k})")

    act, act_deriv = _ACTIVATIONS[params.arch.activation]
    n_hidden = len(params.arch.hidden_dims)
    activations = [x]
    a = x
    for l in range(n_hidden):
        a = act(a @ params.weights[l].T + params.biases[l])
        activations.append(a)
    logits = a @ params.weights[n_hidden].T + params.biases[n_hidden]
    logp = _log_softmax(logits)
    batch = x.shape[0]
    loss = float(-logp[np.arange(batch), y].mean())

    # dL/dlogits for mean cross-entropy: (softmax - onehot) / batch
    delta = np.exp(logp)
    delta[np.arange(batch), y] -= 1.0
    delta /= batch

    grad_w = [np.empty(0)] * (n_hidden + 1)
    grad_b = [np.empty(0)] * (n_hidden + 1)
    for l in range(n_hidden, -1, -1):
        grad_w[l] = delta.T @ activations[l]
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * act_deriv(activations[l])
    return loss, MlpParams(params.arch, grad_w, grad_b)


def evaluate(params: MlpParams, x: np.ndarray, targets: np.ndarray,
             batch_size: int = 8192) -> tuple[float, float]:
    """Mean cross-entropy loss and frame accuracy on a labelled set."""
    x = _check_input(params, x)
    y = np.asarray(targets, dtype=np.int64).ravel()
    act, _ = _ACTIVATIONS[params.arch.activation]
    n_hidden = len(params.arch.hidden_dims)
    total_loss = 0.0
    correct = 0
    for start in range(0, x.shape[0], batch_size):
        xb = x[start:start + batch_size]
        yb = y[start:start + batch_size]
        a = xb
        for l in range(n_hidden):
            a = act(a @ params.weights[l].T + params.biases[l])
        logits = a @ params.weights[n_hidden].T + params.biases[n_hidden]
        logp = _log_softmax(logits)
        total_loss += float(-logp[np.arange(xb.shape[0]), yb].sum())
        correct += int((logits.argmax(axis=1) == yb).sum())
    n = x.shape[0]
    return total_loss / n, correct / n


def train(utterance_frames: list[np.ndarray], utterance_speakers,
          arch: MlpArchitecture, config: TrainConfig) -> tuple[MlpParams, TrainReport]:
    """Minibatch SGD with CV-driven learning-rate halving.

    Arguments
    ---------
    utterance_frames : list of (T_i, input_dim) arrays
        Network inputs grouped by utterance; the CV holdout is taken at
        utterance level so no utterance straddles the split.
    utterance_speakers : sequence of int
        Class index (0..output_dim-1) per utterance.

    The CV loss of the freshly initialized net is the first comparison
    point: any epoch whose relative CV improvement falls under the
    configured threshold halves the rate, and training stops when the rate
    drops below the floor or max_epochs is reached.
    """
    speakers = np.asarray(utterance_speakers, dtype=np.int64)
    if len(utterance_frames) != speakers.size:
        raise ValueError("one speaker index per utterance required")
    counts = np.bincount(speakers, minlength=arch.output_dim)
    if np.any(counts == 0):
        empty = int(np.argmin(counts))
        raise ValueError(f"class {empty} has no utterances")
    if np.any(counts < 2):
        thin = int(np.argmax(counts < 2))
        raise ValueError(f"class {thin} needs at least 2 utterances "
                         "(1 train + 1 cross-validation)")
    if arch.output_dim < 2:
        raise ValueError("need at least 2 speakers")

    rng = np.random.default_rng(config.seed)
    cv_mask = np.zeros(speakers.size, dtype=bool)
    for s in range(arch.output_dim):
        utt_idx = np.flatnonzero(speakers == s)
        n_cv = min(max(1, int(round(config.cv_fraction * utt_idx.size))), utt_idx.size - 1)
        cv_mask[rng.permutation(utt_idx)[:n_cv]] = True

    def pool(mask):
        xs = [np.asarray(utterance_frames[i], dtype=np.float64)
              for i in np.flatnonzero(mask)]
        ys = [np.full(x.shape[0], speakers[i], dtype=np.int64)
              for i, x in zip(np.flatnonzero(mask), xs)]
        return np.concatenate(xs, axis=0), np.concatenate(ys)

    x_train, y_train = pool(~cv_mask)
    x_cv, y_cv = pool(cv_mask)

    params = init_params(arch, config.seed)
    report = TrainReport(stop_reason="max epochs reached")
    if config.max_epochs == 0:
        return params, report

    lr = config.initial_lr
    prev_cv, _ = evaluate(params, x_cv, y_cv)
    n = x_train.shape[0]
    for epoch in range(config.max_epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.minibatch_size):
            idx = perm[start:start + config.minibatch_size]
            loss, grads = loss_and_gradients(params, x_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite training loss at epoch {epoch}, "
                                   f"batch starting {start} (lr={lr})")
            for l in range(len(params.weights)):
                params.weights[l] -= lr * grads.weights[l]
                params.biases[l] -= lr * grads.biases[l]
            total += loss * idx.size
        cv_loss, cv_acc = evaluate(params, x_cv, y_cv)
        report.epochs.append(EpochStats(epoch, lr, total / n, cv_loss, cv_acc))
        improvement = (prev_cv - cv_loss) / abs(prev_cv)
        if improvement < config.lr_halving_threshold:
            lr *= 0.5
        prev_cv = cv_loss
        if lr < config.lr_floor:
            report.stop_reason = "learning rate below floor"
            break
    return params, report


def save_params(path, params: MlpParams) -> None:
    formats.save_mlp(path, list(params.arch.dims), params.arch.activation,
                     params.weights, params.biases)


def load_params(path) -> MlpParams:
    dims, activation, weights, biases = formats.load_mlp(path)
    arch = MlpArchitecture(input_dim=dims[0], hidden_dims=tuple(dims[1:-1]),
                           output_dim=dims[-1], activation=activation)
    return MlpParams(arch, weights, biases)
