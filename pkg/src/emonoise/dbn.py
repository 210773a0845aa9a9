"""Restricted Boltzmann Machines stacked into a deep belief classifier.

The first RBM has Gaussian (unit-variance) visible units because its inputs
are z-scored real-valued feature vectors; upper RBMs are Bernoulli on both
sides. Pretraining is greedy layerwise contrastive divergence; supervised
fine-tuning unrolls the stack into a sigmoid feedforward net with a softmax
head and backpropagates mean cross-entropy.

Every training routine is a pure function of its inputs and the config
seed: repeated runs produce bit-identical parameters. Trained models are
immutable values, safe for concurrent read-only inference.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"

N_LABELS = 7
DEFAULT_LAYER_SIZES = (13, 1000, 1000, 2000)

_MODEL_MAGIC = b"DBN1"
_MODEL_VERSION = 1
_KIND_CODES = {GAUSSIAN: 0, BERNOULLI: 1}
_KIND_NAMES = {code: kind for kind, code in _KIND_CODES.items()}


class ModelFormatError(ValueError):
    """Model file is malformed: bad magic, wrong version, or truncated."""


def sigmoid(x) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        from_pos = 1.0 / (1.0 + np.exp(-x))
        ex = np.exp(x)
        from_neg = ex / (1.0 + ex)
    return np.where(x >= 0, from_pos, from_neg)


def softplus(x) -> np.ndarray:
    """log(1 + e^x) computed as max(x, 0) + log1p(e^-|x|)."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer hyperparameters plus the seed that fixes every random draw.

    The paper leaves all of these open, so they are ordinary config: CD-1,
    momentum SGD with a small weight decay during pretraining, and plain
    momentum SGD on cross-entropy for fine-tuning. ``finetune_head_only``
    freezes the pretrained stack and trains just the softmax head.
    """

    cd_steps: int = 1
    learning_rate_pretrain: float = 0.01
    learning_rate_pretrain_gaussian: float = 0.001
    learning_rate_finetune: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 2e-4
    batch_size: int = 64
    epochs_pretrain: int = 30
    epochs_finetune: int = 50
    seed: int = 0
    finetune_head_only: bool = False

    def __post_init__(self) -> None:
        if self.cd_steps < 1:
            raise ValueError("cd_steps must be at least 1")
        for name in ("learning_rate_pretrain", "learning_rate_pretrain_gaussian",
                     "learning_rate_finetune", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs_pretrain < 0 or self.epochs_finetune < 0:
            raise ValueError("epoch counts must be nonnegative")


@dataclass(frozen=True)
class Rbm:
    """One energy-model layer: weights (n_visible, n_hidden) plus biases."""

    weights: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    visible_kind: str = BERNOULLI

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        vb = np.asarray(self.visible_bias, dtype=np.float64)
        hb = np.asarray(self.hidden_bias, dtype=np.float64)
        if w.ndim != 2 or vb.shape != (w.shape[0],) or hb.shape != (w.shape[1],):
            raise ValueError("inconsistent RBM parameter shapes")
        if not (np.isfinite(w).all() and np.isfinite(vb).all() and np.isfinite(hb).all()):
            raise ValueError("RBM parameters must be finite")
        if self.visible_kind not in _KIND_CODES:
            raise ValueError(f"unknown visible_kind {self.visible_kind!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "visible_bias", vb)
        object.__setattr__(self, "hidden_bias", hb)

    @property
    def n_visible(self) -> int:
        return self.weights.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.weights.shape[1]


@dataclass
class Dbn:
    """Stacked RBMs plus a softmax head and the input standardization.

    ``input_mean``/``input_std`` hold the per-dimension z-score parameters
    fitted on training features; ``forward`` refuses to run until they are
    set.
    """

    rbms: list[Rbm]
    softmax_weights: np.ndarray
    softmax_bias: np.ndarray
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.rbms:
            raise ValueError("a Dbn needs at least one RBM")
        for i, rbm in enumerate(self.rbms):
            expected = GAUSSIAN if i == 0 else BERNOULLI
            if rbm.visible_kind != expected:
                raise ValueError(f"RBM {i} must have {expected} visible units")
            if i and rbm.n_visible != self.rbms[i - 1].n_hidden:
                raise ValueError("adjacent RBM layer sizes do not chain")
        self.softmax_weights = np.asarray(self.softmax_weights, dtype=np.float64)
        self.softmax_bias = np.asarray(self.softmax_bias, dtype=np.float64)
        top = self.rbms[-1].n_hidden
        if self.softmax_weights.shape != (top, self.softmax_bias.shape[0]):
            raise ValueError("softmax head does not match the top RBM layer")
        for name in ("input_mean", "input_std"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=np.float64)
                if val.shape != (self.rbms[0].n_visible,):
                    raise ValueError(f"{name} must have one entry per input dimension")
                setattr(self, name, val)

    @property
    def n_labels(self) -> int:
        return self.softmax_bias.shape[0]


@dataclass
class CdVelocity:
    """Momentum buffers carried across cd_update calls by a training loop."""

    weights: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray

    @classmethod
    def zeros_like(cls, rbm: Rbm) -> "CdVelocity":
        return cls(
            np.zeros_like(rbm.weights),
            np.zeros_like(rbm.visible_bias),
            np.zeros_like(rbm.hidden_bias),
        )


def hidden_probs(rbm: Rbm, v) -> np.ndarray:
    """P(h_j = 1 | v) = sigmoid(hidden_bias + v @ W). Accepts a batch."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != rbm.n_visible:
        raise ValueError(f"visible vector has {v.shape[-1]} entries, want {rbm.n_visible}")
    return sigmoid(v @ rbm.weights + rbm.hidden_bias)


def visible_recon(rbm: Rbm, h) -> np.ndarray:
    """Reconstruct visibles from hidden activity.

    Bernoulli units give probabilities sigmoid(visible_bias + h @ W.T);
    Gaussian units give the mean visible_bias + h @ W.T of the unit-variance
    model.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != rbm.n_hidden:
        raise ValueError(f"hidden vector has {h.shape[-1]} entries, want {rbm.n_hidden}")
    pre = h @ rbm.weights.T + rbm.visible_bias
    return sigmoid(pre) if rbm.visible_kind == BERNOULLI else pre


def free_energy(rbm: Rbm, v) -> float | np.ndarray:
    """F(v) with P(v) proportional to exp(-F(v)); hidden units marginalized.

    Bernoulli: F(v) = -b.v - sum_j softplus(c_j + (W^T v)_j).
    Gaussian:  F(v) = ||v - b||^2 / 2 - sum_j softplus(c_j + (W^T v)_j).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != rbm.n_visible:
        raise ValueError(f"visible vector has {v.shape[-1]} entries, want {rbm.n_visible}")
    hidden_term = softplus(v @ rbm.weights + rbm.hidden_bias).sum(axis=-1)
    if rbm.visible_kind == BERNOULLI:
        visible_term = -(v @ rbm.visible_bias)
    else:
        visible_term = 0.5 * np.square(v - rbm.visible_bias).sum(axis=-1)
    out = visible_term - hidden_term
    return float(out) if np.ndim(out) == 0 else out


def _sample(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(probs.shape) < probs).astype(np.float64)


def cd_update(
    rbm: Rbm,
    batch,
    cfg: TrainConfig,
    rng: np.random.Generator,
    velocity: CdVelocity | None = None,
) -> tuple[Rbm, float]:
    """One CD-k parameter update on a minibatch.

    Positive statistics come from (v0, hidden_probs(v0)). The chain draws
    hidden states as Bernoulli samples; visible reconstructions use
    probabilities for statistics and samples to continue the chain
    (Gaussian visibles use the mean throughout, with no sampling noise).
    The instantaneous step lr*((v0'p0 - vk'pk)/B - decay*W) accumulates into
    the momentum buffer, which is updated in place when provided. Returns
    the updated RBM and the mean squared error between v0 and the first
    reconstruction.
    """
    v0 = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if v0.shape[0] == 0:
        raise ValueError("cd_update needs a nonempty batch")
    if v0.shape[1] != rbm.n_visible:
        raise ValueError(f"batch rows have {v0.shape[1]} entries, want {rbm.n_visible}")
    n = v0.shape[0]
    lr = (
        cfg.learning_rate_pretrain_gaussian
        if rbm.visible_kind == GAUSSIAN
        else cfg.learning_rate_pretrain
    )

    p0 = hidden_probs(rbm, v0)
    h = _sample(p0, rng)
    v1 = None
    v_stat = None
    for step in range(cfg.cd_steps):
        v_stat = visible_recon(rbm, h)
        if step == 0:
            v1 = v_stat
        if step + 1 < cfg.cd_steps:
            v_chain = _sample(v_stat, rng) if rbm.visible_kind == BERNOULLI else v_stat
            h = _sample(hidden_probs(rbm, v_chain), rng)
    pk = hidden_probs(rbm, v_stat)

    if velocity is None:
        velocity = CdVelocity.zeros_like(rbm)
    velocity.weights *= cfg.momentum
    velocity.weights += lr * ((v0.T @ p0 - v_stat.T @ pk) / n - cfg.weight_decay * rbm.weights)
    velocity.visible_bias *= cfg.momentum
    velocity.visible_bias += lr * (v0 - v_stat).mean(axis=0)
    velocity.hidden_bias *= cfg.momentum
    velocity.hidden_bias += lr * (p0 - pk).mean(axis=0)

    updated = replace(
        rbm,
        weights=rbm.weights + velocity.weights,
        visible_bias=rbm.visible_bias + velocity.visible_bias,
        hidden_bias=rbm.hidden_bias + velocity.hidden_bias,
    )
    return updated, float(np.mean(np.square(v0 - v1)))


def _init_rbm(n_visible: int, n_hidden: int, kind: str, rng: np.random.Generator) -> Rbm:
    return Rbm(
        weights=0.01 * rng.standard_normal((n_visible, n_hidden)),
        visible_bias=np.zeros(n_visible),
        hidden_bias=np.zeros(n_hidden),
        visible_kind=kind,
    )


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_rbm(rbm: Rbm, data: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> Rbm:
    """Run epochs_pretrain epochs of CD over shuffled minibatches."""
    velocity = CdVelocity.zeros_like(rbm)
    for _ in range(cfg.epochs_pretrain):
        for idx in _minibatches(data.shape[0], cfg.batch_size, rng):
            rbm, _ = cd_update(rbm, data[idx], cfg, rng, velocity)
    return rbm


def pretrain_dbn(
    data,
    layer_sizes=None,
    cfg: TrainConfig = TrainConfig(),
    standardization: tuple[np.ndarray, np.ndarray] | None = None,
    n_labels: int = N_LABELS,
) -> Dbn:
    """Greedy layerwise pretraining on already-standardized feature vectors.

    Each RBM is trained on the deterministic hidden probabilities of the
    one below it; the softmax head is randomly initialized (seeded normal,
    sd 0.01). ``standardization`` is the (mean, std) pair the caller fitted
    on raw training features, stored for use by forward().
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("pretraining data must be a nonempty 2-D array")
    sizes = list(DEFAULT_LAYER_SIZES) if layer_sizes is None else list(layer_sizes)
    if len(sizes) < 2:
        raise ValueError("layer_sizes needs an input size and at least one hidden size")
    if sizes[0] != data.shape[1]:
        raise ValueError(f"layer_sizes[0] = {sizes[0]} but data has {data.shape[1]} columns")

    rng = np.random.default_rng(cfg.seed)
    rbms: list[Rbm] = []
    activations = data
    for i, (n_vis, n_hid) in enumerate(zip(sizes[:-1], sizes[1:])):
        kind = GAUSSIAN if i == 0 else BERNOULLI
        rbm = _init_rbm(n_vis, n_hid, kind, rng)
        rbm = train_rbm(rbm, activations, cfg, rng)
        rbms.append(rbm)
        activations = hidden_probs(rbm, activations)

    mean = std = None
    if standardization is not None:
        mean, std = standardization
    return Dbn(
        rbms=rbms,
        softmax_weights=0.01 * rng.standard_normal((sizes[-1], n_labels)),
        softmax_bias=np.zeros(n_labels),
        input_mean=mean,
        input_std=std,
    )


def _standardize(dbn: Dbn, x: np.ndarray) -> np.ndarray:
    if dbn.input_mean is None or dbn.input_std is None:
        raise ValueError("input standardization not set on this Dbn")
    return (x - dbn.input_mean) / dbn.input_std


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _forward_activations(dbn: Dbn, x2d: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    activations = [_standardize(dbn, x2d)]
    for rbm in dbn.rbms:
        activations.append(hidden_probs(rbm, activations[-1]))
    logits = activations[-1] @ dbn.softmax_weights + dbn.softmax_bias
    return activations, logits


def forward(dbn: Dbn, x) -> np.ndarray:
    """Class probabilities for raw (unstandardized) input vectors.

    A deterministic mean-field pass: z-score, sigmoid layers, softmax head
    with max-subtraction. Output rows sum to 1.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    _, logits = _forward_activations(dbn, np.atleast_2d(x))
    probs = np.exp(_log_softmax(logits))
    return probs[0] if single else probs


def predict(dbn: Dbn, x) -> int | np.ndarray:
    """Most probable label; exact ties resolve to the lowest label index."""
    probs = forward(dbn, x)
    if probs.ndim == 1:
        return int(np.argmax(probs))
    return np.argmax(probs, axis=-1)


def _loss_and_grads(dbn: Dbn, x2d: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient for every parameter.

    Returns (loss, [(dW_1, dc_1), ...], (dWs, dbs)) matching the unrolled
    feedforward net: sigmoid layers from each RBM's weights/hidden bias,
    then the softmax head.
    """
    activations, logits = _forward_activations(dbn, x2d)
    log_probs = _log_softmax(logits)
    n = x2d.shape[0]
    loss = -float(log_probs[np.arange(n), labels].mean())

    d_logits = np.exp(log_probs)
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n

    top = activations[-1]
    d_head = (top.T @ d_logits, d_logits.sum(axis=0))
    d_layers: list[tuple[np.ndarray, np.ndarray]] = []
    delta = d_logits @ dbn.softmax_weights.T
    for i in range(len(dbn.rbms) - 1, -1, -1):
        act = activations[i + 1]
        dz = delta * act * (1.0 - act)
        d_layers.append((activations[i].T @ dz, dz.sum(axis=0)))
        if i:
            delta = dz @ dbn.rbms[i].weights.T
    d_layers.reverse()
    return loss, d_layers, d_head


def fine_tune(dbn: Dbn, data, labels, cfg: TrainConfig = TrainConfig()) -> Dbn:
    """Supervised fine-tuning: momentum SGD on mean cross-entropy.

    ``data`` holds raw feature vectors (standardization is applied inside
    the forward pass); ``labels`` are integer class indices. Returns a new
    network; the input is untouched.
    """
    x = np.asarray(data, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("fine-tuning data must be a nonempty 2-D array")
    if y.shape != (x.shape[0],):
        raise ValueError("labels must align one-to-one with data rows")
    if y.size and (y.min() < 0 or y.max() >= dbn.n_labels):
        raise ValueError(f"labels must lie in [0, {dbn.n_labels - 1}]")

    tuned = Dbn(
        rbms=[replace(r, weights=r.weights.copy(), visible_bias=r.visible_bias.copy(),
                      hidden_bias=r.hidden_bias.copy()) for r in dbn.rbms],
        softmax_weights=dbn.softmax_weights.copy(),
        softmax_bias=dbn.softmax_bias.copy(),
        input_mean=None if dbn.input_mean is None else dbn.input_mean.copy(),
        input_std=None if dbn.input_std is None else dbn.input_std.copy(),
    )
    vel_layers = [(np.zeros_like(r.weights), np.zeros_like(r.hidden_bias)) for r in tuned.rbms]
    vel_head = (np.zeros_like(tuned.softmax_weights), np.zeros_like(tuned.softmax_bias))

    rng = np.random.default_rng(cfg.seed)
    lr = cfg.learning_rate_finetune
    for _ in range(cfg.epochs_finetune):
        for idx in _minibatches(x.shape[0], cfg.batch_size, rng):
            _, d_layers, d_head = _loss_and_grads(tuned, x[idx], y[idx])
            if not cfg.finetune_head_only:
                for i, rbm in enumerate(tuned.rbms):
                    vw, vc = vel_layers[i]
                    vw *= cfg.momentum
                    vw -= lr * d_layers[i][0]
                    vc *= cfg.momentum
                    vc -= lr * d_layers[i][1]
                    tuned.rbms[i] = replace(
                        rbm, weights=rbm.weights + vw, hidden_bias=rbm.hidden_bias + vc
                    )
            vw, vb = vel_head
            vw *= cfg.momentum
            vw -= lr * d_head[0]
            vb *= cfg.momentum
            vb -= lr * d_head[1]
            tuned.softmax_weights = tuned.softmax_weights + vw
            tuned.softmax_bias = tuned.softmax_bias + vb
    return tuned


def _pack_f64(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_model(dbn: Dbn, path) -> None:
    """Serialize a Dbn; load_model reproduces every parameter bit-exactly."""
    if dbn.input_mean is None or dbn.input_std is None:
        raise ValueError("cannot save a Dbn whose input standardization is not set")
    parts = [_MODEL_MAGIC, struct.pack("<II", _MODEL_VERSION, len(dbn.rbms))]
    for rbm in dbn.rbms:
        parts.append(struct.pack("<QQB", rbm.n_visible, rbm.n_hidden, _KIND_CODES[rbm.visible_kind]))
        parts.append(_pack_f64(rbm.weights))
        parts.append(_pack_f64(rbm.visible_bias))
        parts.append(_pack_f64(rbm.hidden_bias))
    parts.append(_pack_f64(dbn.softmax_weights))
    parts.append(_pack_f64(dbn.softmax_bias))
    parts.append(_pack_f64(dbn.input_mean))
    parts.append(_pack_f64(dbn.input_std))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_model(path) -> Dbn:
    """Read a model written by save_model."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MODEL_MAGIC:
        raise ModelFormatError(f"{path}: bad model magic")
    if len(blob) < 12:
        raise ModelFormatError(f"{path}: truncated model header")
    version, n_layers = struct.unpack_from("<II", blob, 4)
    if version != _MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {version}")

    pos = 12

    def take_f64(count: int) -> np.ndarray:
        nonlocal pos
        end = pos + count * 8
        if end > len(blob):
            raise ModelFormatError(f"{path}: truncated model file")
        out = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).copy()
        pos = end
        return out

    rbms: list[Rbm] = []
    for _ in range(n_layers):
        if pos + 17 > len(blob):
            raise ModelFormatError(f"{path}: truncated model file")
        rows, cols, kind_code = struct.unpack_from("<QQB", blob, pos)
        pos += 17
        if kind_code not in _KIND_NAMES:
            raise ModelFormatError(f"{path}: unknown visible kind code {kind_code}")
        weights = take_f64(rows * cols).reshape(rows, cols)
        rbms.append(
            Rbm(weights, take_f64(rows), take_f64(cols), visible_kind=_KIND_NAMES[kind_code])
        )
    if not rbms:
        raise ModelFormatError(f"{path}: model has no layers")

    # the head width is implied: remaining = 8*(top*k + k + 2*n_input)
    top, n_input = rbms[-1].n_hidden, rbms[0].n_visible
    remaining = len(blob) - pos
    if remaining % 8 or (remaining // 8 - 2 * n_input) % (top + 1) or remaining // 8 <= 2 * n_input:
        raise ModelFormatError(f"{path}: truncated model file")
    n_labels = (remaining // 8 - 2 * n_input) // (top + 1)
    softmax_weights = take_f64(top * n_labels).reshape(top, n_labels)
    softmax_bias = take_f64(n_labels)
    mean = take_f64(n_input)
    std = take_f64(n_input)
    return Dbn(rbms, softmax_weights, softmax_bias, input_mean=mean, input_std=std)
