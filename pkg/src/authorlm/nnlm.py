"""Feedforward neural network language model with exact analytic
backpropagation and momentum mini-batch training.

Architecture: a shared word-embedding table feeds the concatenated
context embeddings through one logistic hidden layer into a softmax
over the vocabulary.  The model predicts the word at a configurable
target position inside a fixed-width window; with the target in the
last position it behaves as a conventional next-word language model and
can score sentences.

Training is plain mini-batch gradient descent with momentum, geometric
learning-rate decay from a configurable epoch onward, and early
termination when the validation cross-entropy rises.  All gradients are
derived analytically; tests hold them to central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Sequence

import numpy as np
from scipy.special import expit

from .corpus import EncodedCorpus, extract_contexts
from .errors import DataError, DivergenceError

MODEL_MAGIC = b"ALM1"
MODEL_FORMAT_VERSION = 1

#: Standard deviation of the Gaussian weight initialization.
INIT_SCALE = 0.01


@dataclass(frozen=True)
class NnlmConfig:
    """Architecture and training hyperparameters.

    ``context_size`` counts the whole window including the target;
    ``target_pos`` is 1-based within the window.  The learning rate is
    multiplied by ``decay_factor`` once per epoch starting at
    ``decay_start_epoch`` (1-based, inclusive).
    """

    vocab_size: int
    context_size: int = 4
    target_pos: int = 4
    emb_dim: int = 50
    hidden_dim: int = 200
    batch_size: int = 200
    epochs: int = 15
    learning_rate: float = 0.1
    momentum: float = 0.9
    decay_start_epoch: int = 10
    decay_factor: float = 0.9
    init_seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.context_size < 2:
            raise ValueError(f"context_size must be >= 2, got {self.context_size}")
        if not 1 <= self.target_pos <= self.context_size:
            raise ValueError(
                f"target_pos must be in [1, {self.context_size}], got {self.target_pos}"
            )
        if self.emb_dim < 1:
            raise ValueError(f"emb_dim must be >= 1, got {self.emb_dim}")
        if self.hidden_dim < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.decay_start_epoch < 1:
            raise ValueError(
                f"decay_start_epoch must be >= 1, got {self.decay_start_epoch}"
            )
        if not 0 < self.decay_factor <= 1:
            raise ValueError(
                f"decay_factor must be in (0, 1], got {self.decay_factor}"
            )

    @property
    def n_context_words(self) -> int:
        return self.context_size - 1


@dataclass
class NnlmModel:
    """The five parameter tensors plus their configuration.

    ``embeddings`` is shared across all context positions.  Shapes:
    embeddings (V, emb_dim); hidden_weights ((N-1)*emb_dim, hidden_dim);
    hidden_bias (hidden_dim,); output_weights (hidden_dim, V);
    output_bias (V,).
    """

    config: NnlmConfig
    embeddings: np.ndarray
    hidden_weights: np.ndarray
    hidden_bias: np.ndarray
    output_weights: np.ndarray
    output_bias: np.ndarray

    def validate(self) -> None:
        c = self.config
        expected = {
            "embeddings": (c.vocab_size, c.emb_dim),
            "hidden_weights": (c.n_context_words * c.emb_dim, c.hidden_dim),
            "hidden_bias": (c.hidden_dim,),
            "output_weights": (c.hidden_dim, c.vocab_size),
            "output_bias": (c.vocab_size,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise DataError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise DataError(f"{name} contains non-finite values")

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "embeddings": self.embeddings,
            "hidden_weights": self.hidden_weights,
            "hidden_bias": self.hidden_bias,
            "output_weights": self.output_weights,
            "output_bias": self.output_bias,
        }

    def copy(self) -> "NnlmModel":
        return NnlmModel(
            config=self.config,
            **{k: v.copy() for k, v in self.parameters().items()},
        )


PARAM_ORDER = (
    "embeddings",
    "hidden_weights",
    "hidden_bias",
    "output_weights",
    "output_bias",
)


def init_model(config: NnlmConfig) -> NnlmModel:
    """Gaussian(0, 0.01) weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(config.init_seed)
    n_in = config.n_context_words * config.emb_dim
    model = NnlmModel(
        config=config,
        embeddings=rng.normal(0.0, INIT_SCALE, (config.vocab_size, config.emb_dim)),
        hidden_weights=rng.normal(0.0, INIT_SCALE, (n_in, config.hidden_dim)),
        hidden_bias=np.zeros(config.hidden_dim),
        output_weights=rng.normal(0.0, INIT_SCALE, (config.hidden_dim, config.vocab_size)),
        output_bias=np.zeros(config.vocab_size),
    )
    model.validate()
    return model


@dataclass
class ForwardCache:
    """Per-batch activations kept for the backward pass."""

    contexts: np.ndarray   # (B, N-1) int
    emb_out: np.ndarray    # (B, (N-1)*emb_dim)
    hidden_out: np.ndarray # (B, hidden_dim), logistic outputs
    probs: np.ndarray      # (B, V), softmax rows


def forward(model: NnlmModel, contexts: np.ndarray) -> ForwardCache:
    """Propagate a batch of context-index rows to softmax probabilities.

    Embedding lookup is a table row gather; the concatenated context
    embeddings go through the logistic hidden layer and a max-shifted
    softmax, so every output row sums to one and stays finite.
    """
    contexts = np.asarray(contexts, dtype=np.int64)
    if contexts.ndim != 2 or contexts.shape[1] != model.config.n_context_words:
        raise ValueError(
            f"contexts must have shape (B, {model.config.n_context_words})"
        )
    if contexts.size and (
        contexts.min() < 0 or contexts.max() >= model.config.vocab_size
    ):
        raise ValueError("context index out of vocabulary range")

    b = contexts.shape[0]
    emb_out = model.embeddings[contexts].reshape(b, -1)
    hidden_in = emb_out @ model.hidden_weights + model.hidden_bias
    hidden_out = expit(hidden_in)
    out_in = hidden_out @ model.output_weights + model.output_bias
    if not np.isfinite(out_in).all():
        raise DivergenceError("non-finite activations; model weights are unusable")
    shifted = out_in - out_in.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    return ForwardCache(
        contexts=contexts, emb_out=emb_out, hidden_out=hidden_out, probs=probs
    )


def cross_entropy(cache: ForwardCache, targets: np.ndarray) -> float:
    """Mean negative natural log probability of the targets."""
    targets = np.asarray(targets, dtype=np.int64)
    picked = cache.probs[np.arange(len(targets)), targets]
    with np.errstate(divide="ignore"):
        return float(-np.log(picked).mean())


@dataclass
class Gradients:
    """Cost gradients for one mini-batch, shape-matched to the model."""

    embeddings: np.ndarray
    hidden_weights: np.ndarray
    hidden_bias: np.ndarray
    output_weights: np.ndarray
    output_bias: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_ORDER}


@dataclass
class MomentumState:
    """Per-parameter gradient running averages, zero-initialized and
    persistent across update steps within one training run."""

    buffers: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, model: NnlmModel) -> "MomentumState":
        return cls({k: np.zeros_like(v) for k, v in model.parameters().items()})


def backward(model: NnlmModel, cache: ForwardCache, targets: np.ndarray) -> Gradients:
    """Exact gradients of the batch-mean cross-entropy.

    The softmax/cross-entropy pair collapses to (probs - onehot) at the
    output pre-activation; the logistic layer contributes y*(1-y); the
    embedding layer is linear, and because the table is shared across
    context positions each position's slice scatter-adds into the rows
    of its context word.  Everything is normalized by the actual batch
    size.
    """
    targets = np.asarray(targets, dtype=np.int64)
    b = len(targets)
    if cache.probs.shape[0] != b:
        raise ValueError("cache and targets disagree on batch size")

    d_out_in = cache.probs.copy()
    d_out_in[np.arange(b), targets] -= 1.0
    d_out_in /= b

    g_output_weights = cache.hidden_out.T @ d_out_in
    g_output_bias = d_out_in.sum(axis=0)

    d_hidden_out = d_out_in @ model.output_weights.T
    d_hidden_in = d_hidden_out * cache.hidden_out * (1.0 - cache.hidden_out)

    g_hidden_weights = cache.emb_out.T @ d_hidden_in
    g_hidden_bias = d_hidden_in.sum(axis=0)

    d_emb_out = d_hidden_in @ model.hidden_weights.T
    g_embeddings = np.zeros_like(model.embeddings)
    emb_dim = model.config.emb_dim
    for pos in range(model.config.n_context_words):
        np.add.at(
            g_embeddings,
            cache.contexts[:, pos],
            d_emb_out[:, pos * emb_dim : (pos + 1) * emb_dim],
        )

    return Gradients(
        embeddings=g_embeddings,
        hidden_weights=g_hidden_weights,
        hidden_bias=g_hidden_bias,
        output_weights=g_output_weights,
        output_bias=g_output_bias,
    )


def update(
    model: NnlmModel,
    grads: Gradients,
    state: MomentumState,
    learning_rate: float,
    momentum: float,
) -> tuple[NnlmModel, MomentumState]:
    """One momentum step, in place: buf <- momentum*buf + grad, then
    param <- param - learning_rate*buf."""
    params = model.parameters()
    for name, grad in grads.tensors().items():
        if not np.isfinite(grad).all():
            raise DivergenceError(f"diverged: non-finite gradient in {name}")
        buf = state.buffers[name]
        buf *= momentum
        buf += grad
        params[name] -= learning_rate * buf
    return model, state


@dataclass
class TrainHistory:
    """Per-epoch costs, the learning rate in effect, and how the run ended."""

    train_cost: list[float] = field(default_factory=list)
    valid_cost: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    stopped_early: bool = False
    best_epoch: int = 0

    def to_dict(self) -> dict:
        return {
            "train_cost": self.train_cost,
            "valid_cost": self.valid_cost,
            "learning_rate": self.learning_rate,
            "stopped_early": self.stopped_early,
            "best_epoch": self.best_epoch,
        }


def _dataset_cost(model: NnlmModel, contexts, targets, batch_size=4096) -> float:
    total = 0.0
    for lo in range(0, len(targets), batch_size):
        hi = min(lo + batch_size, len(targets))
        cache = forward(model, contexts[lo:hi])
        total += cross_entropy(cache, targets[lo:hi]) * (hi - lo)
    return total / len(targets)


def train(corpus: EncodedCorpus, config: NnlmConfig) -> tuple[NnlmModel, TrainHistory]:
    """Train on the corpus train split, validating per epoch.

    Context windows come from :func:`extract_contexts` on the train and
    validation splits.  Each epoch reshuffles the training pairs with a
    generator derived from the init seed, walks mini-batches of
    ``batch_size`` (the final short batch is kept and normalized by its
    actual size), then measures validation cross-entropy.  If validation
    cost rises against the previous epoch, training stops and the
    previous epoch's snapshot is returned with ``stopped_early`` set.
    The learning rate decays geometrically from ``decay_start_epoch``.

    The recorded train cost is the batch-size-weighted mean of the
    pre-update batch costs seen during the epoch.
    """
    train_ctx, train_tgt = extract_contexts(
        corpus.train_sentences, config.context_size, config.target_pos
    )
    valid_ctx, valid_tgt = extract_contexts(
        corpus.valid_sentences, config.context_size, config.target_pos
    )
    if len(train_tgt) == 0:
        raise DataError("no training context windows; corpus sentences too short")
    if len(valid_tgt) == 0:
        raise DataError("no validation context windows; corpus sentences too short")

    model = init_model(config)
    state = MomentumState.zeros_like(model)
    shuffle_rng = np.random.default_rng([config.init_seed, 0x5A1AD])
    history = TrainHistory()

    best_model = model.copy()
    best_epoch = 0
    prev_valid = np.inf
    lr = config.learning_rate

    n_pairs = len(train_tgt)
    for epoch in range(1, config.epochs + 1):
        if epoch >= config.decay_start_epoch:
            lr *= config.decay_factor

        order = shuffle_rng.permutation(n_pairs)
        epoch_cost = 0.0
        for lo in range(0, n_pairs, config.batch_size):
            batch = order[lo : lo + config.batch_size]
            cache = forward(model, train_ctx[batch])
            cost = cross_entropy(cache, train_tgt[batch])
            if not np.isfinite(cost):
                raise DivergenceError(
                    f"diverged: non-finite cost at epoch {epoch}, "
                    f"iteration {lo // config.batch_size + 1}"
                )
            grads = backward(model, cache, train_tgt[batch])
            update(model, grads, state, lr, config.momentum)
            epoch_cost += cost * len(batch)

        valid_cost = _dataset_cost(model, valid_ctx, valid_tgt)
        if not np.isfinite(valid_cost):
            raise DivergenceError(f"diverged: non-finite validation cost at epoch {epoch}")
        history.train_cost.append(epoch_cost / n_pairs)
        history.valid_cost.append(float(valid_cost))
        history.learning_rate.append(lr)

        if valid_cost > prev_valid:
            history.stopped_early = True
            history.best_epoch = best_epoch
            return best_model, history

        best_model = model.copy()
        best_epoch = epoch
        prev_valid = valid_cost

    history.best_epoch = best_epoch
    return best_model, history


def sentence_log10prob(
    model: NnlmModel, sentence: Sequence[int]
) -> tuple[float, int]:
    """Sum of log10 next-word probabilities over full-context positions.

    Requires a model trained with the target in the last window
    position.  Position k (1-based) is scored when the k-1 preceding
    in-sentence words fill the context, i.e. k runs from the window
    width to the sentence length; no boundary tokens are inserted.
    Sentences shorter than the window return (0.0, 0).
    """
    config = model.config
    if config.target_pos != config.context_size:
        raise ValueError(
            "sentence scoring requires a next-word model "
            "(target_pos == context_size)"
        )
    tokens = np.asarray(sentence, dtype=np.int64)
    n = config.context_size
    if tokens.size < n:
        return 0.0, 0
    windows = np.lib.stride_tricks.sliding_window_view(tokens, n)
    contexts = windows[:, :-1]
    targets = windows[:, -1]
    cache = forward(model, contexts)
    picked = cache.probs[np.arange(len(targets)), targets]
    picked = np.maximum(picked, np.finfo(float).tiny)
    return float(np.log10(picked).sum()), int(len(targets))


def save_model(path, model: NnlmModel) -> None:
    """Write the model as a small versioned binary container.

    Layout: magic, format version (uint32 LE), header length (uint64
    LE), JSON header with config and tensor shapes, then the raw
    float64 row-major bytes of the five tensors in fixed order.
    """
    model.validate()
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": {
            "vocab_size": model.config.vocab_size,
            "context_size": model.config.context_size,
            "target_pos": model.config.target_pos,
            "emb_dim": model.config.emb_dim,
            "hidden_dim": model.config.hidden_dim,
            "batch_size": model.config.batch_size,
            "epochs": model.config.epochs,
            "learning_rate": model.config.learning_rate,
            "momentum": model.config.momentum,
            "decay_start_epoch": model.config.decay_start_epoch,
            "decay_factor": model.config.decay_factor,
            "init_seed": model.config.init_seed,
        },
        "tensors": {name: list(getattr(model, name).shape) for name in PARAM_ORDER},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(np.uint32(MODEL_FORMAT_VERSION).tobytes())
        fh.write(np.uint64(len(blob)).tobytes())
        fh.write(blob)
        for name in PARAM_ORDER:
            fh.write(np.ascontiguousarray(getattr(model, name), dtype=np.float64).tobytes())


def load_model(path) -> NnlmModel:
    """Read a model container and validate every invariant."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise DataError(f"{path} is not a model file")
        version = int(np.frombuffer(fh.read(4), dtype=np.uint32)[0])
        if version != MODEL_FORMAT_VERSION:
            raise DataError(f"unsupported model format version {version}")
        header_len = int(np.frombuffer(fh.read(8), dtype=np.uint64)[0])
        header = json.loads(fh.read(header_len).decode("utf-8"))
        config = NnlmConfig(**header["config"])
        tensors = {}
        for name in PARAM_ORDER:
            shape = tuple(header["tensors"][name])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype=np.float64)
            if data.size != count:
                raise DataError(f"model file truncated while reading {name}")
            tensors[name] = data.reshape(shape).copy()
    model = NnlmModel(config=config, **tensors)
    model.validate()
    return model
