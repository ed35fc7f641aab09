"""Class-conditional noise-prediction MLP and its training loop.

The network sees ``[x_t || class embedding || projected timestep features]``
and regresses the noise that produced ``x_t``. Conditioning by concatenation
keeps the gradient path trivial to verify.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .diffusion import LabeledDataset, LatentBatch, NoiseSchedule, sample_latent_batch
from .errors import DimensionError, DomainError, NumericError
from .gradcore import Array, Node, ParamStore, SGD, Tape


@dataclass(frozen=True)
class DenoiserArch:
    d: int
    K: int
    hidden_width: int
    hidden_depth: int
    embed_dim: int
    T: int


@dataclass
class DenoiserModel:
    params: ParamStore
    arch: DenoiserArch

    def copy(self) -> "DenoiserModel":
        return DenoiserModel(params=self.params.copy(), arch=self.arch)


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int
    learning_rate: float
    seed: int

    def __post_init__(self):
        if self.steps < 0:
            raise DomainError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise DomainError(f"learning_rate must be > 0, got {self.learning_rate}")


def timestep_embedding(t: int, embed_dim: int) -> Array:
    """Sinusoidal features for one step: interleaved sin/cos over geometric frequencies."""
    if embed_dim < 2 or embed_dim % 2 != 0:
        raise DomainError(f"embed_dim must be a positive even number, got {embed_dim}")
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}")
    return _timestep_embedding_rows(np.asarray([t], dtype=np.int64), embed_dim)[0]


def _timestep_embedding_rows(t: Array, embed_dim: int) -> Array:
    half = embed_dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = t[:, None].astype(np.float64) * freqs[None, :]
    out = np.empty((len(t), embed_dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def init_model(d: int, K: int, hidden_width: int, hidden_depth: int,
               embed_dim: int, T: int, rng: np.random.Generator) -> DenoiserModel:
    """Fan-in scaled normal initialization; deterministic given the rng state."""
    if min(d, K, hidden_width, hidden_depth, embed_dim, T) < 1:
        raise DomainError("all architecture dimensions must be positive")
    if K < 2:
        raise DomainError(f"K must be >= 2, got {K}")
    if embed_dim % 2 != 0:
        raise DomainError(f"embed_dim must be even, got {embed_dim}")
    arch = DenoiserArch(d=d, K=K, hidden_width=hidden_width, hidden_depth=hidden_depth,
                        embed_dim=embed_dim, T=T)
    params = ParamStore()
    params.add("class_embed", rng.standard_normal((K, embed_dim)) / np.sqrt(embed_dim))
    params.add("time_w", rng.standard_normal((embed_dim, embed_dim)) / np.sqrt(embed_dim))
    params.add("time_b", np.zeros(embed_dim))
    width_in = d + 2 * embed_dim
    for i in range(hidden_depth):
        fan_in = width_in if i == 0 else hidden_width
        params.add(f"layer{i}_w", rng.standard_normal((fan_in, hidden_width)) / np.sqrt(fan_in))
        params.add(f"layer{i}_b", np.zeros(hidden_width))
    params.add("head_w", rng.standard_normal((hidden_width, d)) / np.sqrt(hidden_width))
    params.add("head_b", np.zeros(d))
    return DenoiserModel(params=params, arch=arch)


def _validate_batch_inputs(arch: DenoiserArch, x_t: Array, labels: Array, t: Array) -> None:
    if x_t.ndim != 2 or x_t.shape[1] != arch.d:
        raise DimensionError(f"x_t must have shape (batch, {arch.d}), got {x_t.shape}")
    rows = x_t.shape[0]
    if labels.shape != (rows,) or t.shape != (rows,):
        raise DimensionError("labels and t must have one entry per row")
    if rows and (labels.min() < 0 or labels.max() >= arch.K):
        raise DomainError(f"label out of range [0, {arch.K})")
    if rows and (t.min() < 1 or t.max() > arch.T):
        raise DomainError(f"step out of range [1, {arch.T}]")


def denoiser_forward(tape: Tape, pnodes: dict[str, Node], arch: DenoiserArch,
                     x_t: Array, labels: Array, t: Array) -> Node:
    """Predicted noise as a tape node, for building differentiable losses."""
    x_t = gc.as_array(x_t)
    labels = np.asarray(labels, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    _validate_batch_inputs(arch, x_t, labels, t)
    sinusoid = tape.constant(_timestep_embedding_rows(t, arch.embed_dim))
    temb = gc.add(gc.matmul(sinusoid, pnodes["time_w"]), pnodes["time_b"])
    cemb = gc.embedding(pnodes["class_embed"], labels)
    h = gc.concat_cols([tape.constant(x_t), cemb, temb])
    for i in range(arch.hidden_depth):
        h = gc.activation(gc.add(gc.matmul(h, pnodes[f"layer{i}_w"]), pnodes[f"layer{i}_b"]), "silu")
    return gc.add(gc.matmul(h, pnodes["head_w"]), pnodes["head_b"])


def predict_eps(model: DenoiserModel, x_t: Array, labels: Array, t: Array) -> Array:
    """Plain forward pass; same code path as training, gradients discarded."""
    tape = Tape()
    pnodes = tape.params(model.params)
    return denoiser_forward(tape, pnodes, model.arch, x_t, labels, t).value


def train_step(model: DenoiserModel, batch: LatentBatch, learning_rate: float,
               optimizer: SGD | None = None) -> float:
    """One update on the noise-regression loss; returns the pre-step loss."""
    tape = Tape()
    pnodes = tape.params(model.params)
    pred = denoiser_forward(tape, pnodes, model.arch, batch.x_t, batch.labels, batch.t)
    loss = gc.mse_loss(pred, batch.eps)
    if not np.isfinite(loss.value):
        raise NumericError("non-finite training loss")
    grads = gc.backward(loss)
    if optimizer is not None:
        optimizer.step(model.params, grads)
    else:
        gc.sgd_step(model.params, grads, learning_rate)
    return float(loss.value)


def train(model: DenoiserModel, dataset: LabeledDataset, schedule: NoiseSchedule,
          config: TrainConfig, momentum: float = 0.9) -> tuple[DenoiserModel, list[float]]:
    """Train in place for config.steps; returns the model and per-step losses."""
    if dataset.K != model.arch.K:
        raise DomainError(f"dataset has {dataset.K} classes, model expects {model.arch.K}")
    rng = np.random.default_rng(config.seed)
    opt = SGD(config.learning_rate, momentum=momentum)
    losses: list[float] = []
    for step in range(config.steps):
        batch = sample_latent_batch(dataset, schedule, config.batch_size, rng)
        try:
            losses.append(train_step(model, batch, config.learning_rate, optimizer=opt))
        except NumericError as exc:
            raise NumericError(f"{exc} (at step {step})") from exc
    return model, losses
