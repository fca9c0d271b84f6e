"""Detachable allocation head: a small MLP over sentence embeddings.

Maps an embedding to a difficulty probability; at or above 0.5 the sub-task is
deemed complex and routed to the cloud. Trained with plain mini-batch gradient
descent on binary cross-entropy. Backbone parameters are never touched; the
head is a separate value that can be saved, loaded, and discarded freely.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backend import BackendPool, EmbeddingVector
from .core import ModelTier
from .errors import ConfigError, EmptyDatasetError, TrainingDivergedError
from .search import AdapterRecord

logger = logging.getLogger(__name__)

# Keeps the logistic output strictly inside (0, 1) and the loss finite.
_PROB_EPS = 1e-12


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden layer sizes must be >= 1, got {self.hidden_dims}")
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))

    def layer_dims(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden_dims, 1]
        return list(zip(sizes, sizes[1:]))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")


@dataclass
class AdapterWeights:
    """Per-layer weight matrices and bias vectors, plus the analytic parameter count."""

    config: MlpConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    param_count: int


def init(config: MlpConfig) -> AdapterWeights:
    """Seeded initialization, uniform in +-1/sqrt(fan_in) per layer."""
    rng = np.random.default_rng(config.seed)
    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    count = 0
    for fan_in, fan_out in config.layer_dims():
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
        count += fan_in * fan_out + fan_out
    return AdapterWeights(config=config, weights=weights, biases=biases, param_count=count)


def _forward_batch(adapter: AdapterWeights, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """All layer activations plus the clipped output probabilities, shape (n,)."""
    activations = [x]
    h = x
    last = len(adapter.weights) - 1
    for i, (w, b) in enumerate(zip(adapter.weights, adapter.biases)):
        z = h @ w + b
        h = z if i == last else np.tanh(z)
        activations.append(h)
    logits = h[:, 0]
    probs = np.empty_like(logits)
    pos = logits >= 0
    probs[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    exp_z = np.exp(logits[~pos])
    probs[~pos] = exp_z / (1.0 + exp_z)
    return activations, np.clip(probs, _PROB_EPS, 1.0 - _PROB_EPS)


def forward(adapter: AdapterWeights, embedding: EmbeddingVector) -> float:
    """Difficulty probability for one embedding, strictly inside (0, 1)."""
    if embedding.dim != adapter.config.input_dim:
        raise ValueError(
            f"embedding dim {embedding.dim} does not match adapter input dim "
            f"{adapter.config.input_dim}"
        )
    _, probs = _forward_batch(adapter, embedding.as_array().reshape(1, -1))
    return float(probs[0])


def _loss_and_grads(
    adapter: AdapterWeights, x: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean binary cross-entropy and its gradients for one mini-batch."""
    n = x.shape[0]
    activations, probs = _forward_batch(adapter, x)
    loss = float(-np.mean(y * np.log(probs) + (1.0 - y) * np.log(1.0 - probs)))

    # d(loss)/d(logit) for sigmoid + BCE.
    delta = ((probs - y) / n).reshape(-1, 1)
    grad_w: list[np.ndarray] = [np.empty(0)] * len(adapter.weights)
    grad_b: list[np.ndarray] = [np.empty(0)] * len(adapter.biases)
    for i in range(len(adapter.weights) - 1, -1, -1):
        grad_w[i] = activations[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ adapter.weights[i].T) * (1.0 - activations[i] ** 2)
    return loss, grad_w, grad_b


def train(
    records: Sequence[AdapterRecord],
    mlp: MlpConfig,
    tc: TrainConfig,
) -> tuple[AdapterWeights, list[float]]:
    """Mini-batch gradient descent on binary cross-entropy.

    Every record must carry a cached embedding. Shuffling is seeded, so two
    runs with identical configs produce identical weights and loss history.
    """
    if not records:
        raise EmptyDatasetError("cannot train on an empty record set")
    missing = [r for r in records if r.embedding is None]
    if missing:
        raise ValueError(f"{len(missing)} record(s) lack cached embeddings")
    x = np.stack([r.embedding.as_array() for r in records])
    y = np.array([float(r.label) for r in records])
    if x.shape[1] != mlp.input_dim:
        raise ConfigError(f"records embed at dim {x.shape[1]} but config expects {mlp.input_dim}")
    if len(set(int(v) for v in y)) < 2:
        logger.warning("training set contains a single class; the head will saturate")

    adapter = init(mlp)
    rng = np.random.default_rng(tc.seed)
    history: list[float] = []
    n = len(records)
    for epoch in range(tc.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, tc.batch_size):
            batch = order[start : start + tc.batch_size]
            loss, grad_w, grad_b = _loss_and_grads(adapter, x[batch], y[batch])
            total += loss * len(batch)
            for i in range(len(adapter.weights)):
                adapter.weights[i] -= tc.learning_rate * grad_w[i]
                adapter.biases[i] -= tc.learning_rate * grad_b[i]
        epoch_loss = total / n
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch)
        history.append(epoch_loss)
    return adapter, history


def training_accuracy(adapter: AdapterWeights, records: Sequence[AdapterRecord]) -> float:
    x = np.stack([r.embedding.as_array() for r in records])
    y = np.array([r.label for r in records])
    _, probs = _forward_batch(adapter, x)
    predicted = (probs >= 0.5).astype(int)
    return float(np.mean(predicted == y))


def allocate(
    adapter: AdapterWeights,
    subtask_text: str,
    pool: BackendPool,
    tier_for_embedding: ModelTier = ModelTier.DEVICE,
) -> ModelTier:
    """Embed the sub-task text and route it: probability >= 0.5 goes to the cloud."""
    embedding = pool.embed_sentence(tier_for_embedding, subtask_text)
    probability = forward(adapter, embedding)
    return ModelTier.CLOUD if probability >= 0.5 else ModelTier.DEVICE


def save_weights(adapter: AdapterWeights, path: str | Path) -> None:
    """JSON round-trip of config plus flat per-layer arrays; bit-exact on reload."""
    payload = {
        "config": {
            "input_dim": adapter.config.input_dim,
            "hidden_dims": list(adapter.config.hidden_dims),
            "seed": adapter.config.seed,
        },
        "param_count": adapter.param_count,
        "layers": [
            {"weight": w.tolist(), "bias": b.tolist()}
            for w, b in zip(adapter.weights, adapter.biases)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_weights(path: str | Path) -> AdapterWeights:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    config = MlpConfig(
        input_dim=payload["config"]["input_dim"],
        hidden_dims=tuple(payload["config"]["hidden_dims"]),
        seed=payload["config"]["seed"],
    )
    weights = [np.array(layer["weight"], dtype=np.float64) for layer in payload["layers"]]
    biases = [np.array(layer["bias"], dtype=np.float64) for layer in payload["layers"]]
    expected = [(w.shape, b.shape) for w, b in zip(weights, biases)]
    declared = [((i, o), (o,)) for i, o in config.layer_dims()]
    if expected != declared:
        raise ConfigError(f"weights file shapes {expected} do not match config {declared}")
    return AdapterWeights(
        config=config, weights=weights, biases=biases, param_count=payload["param_count"]
    )
