"""Trainer: synthetic data generation, MSE loss, ADAM with exponential LR decay.

Training pairs are fresh (channel, bits, noise) draws with SNR uniform in dB
over the configured range. Layer-0 parameters stay frozen; everything else is
packed into one flat vector and updated by bias-corrected ADAM with
lr(epoch) = lr0 * 0.9^epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detectors import precompute
from .network import NetworkParams, _forward_soft_core, param_gradients
from .system_model import Constellation, awgn_receive, generate_channel, modulate, to_real

__all__ = [
    "AdamState",
    "TrainConfig",
    "TrainingDivergenceError",
    "adam_step",
    "generate_sample",
    "lr_schedule",
    "mse_loss",
    "train",
]


class TrainingDivergenceError(RuntimeError):
    """Loss or gradients became non-finite; carries the loss history so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


@dataclass
class TrainConfig:
    n_antennas: int
    n_users: int
    n_layers: int = 8
    modulation: str = "qpsk"
    snr_range_db: tuple = (-1.0, 21.0)
    lr0: float = 1e-4
    batch_size: int = 5000
    n_train: int = 20000
    n_epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n_antennas < self.n_users or self.n_users < 1:
            raise ValueError("need n_antennas >= n_users >= 1")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.batch_size < 1 or self.batch_size > self.n_train:
            raise ValueError("need 1 <= batch_size <= n_train")
        lo, hi = self.snr_range_db
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ValueError("snr_range_db must be a well-ordered finite interval")
        if self.n_epochs < 0:
            raise ValueError("n_epochs must be >= 0")


def generate_sample(config: TrainConfig, rng: np.random.Generator):
    """One training pair: fresh channel, uniform bits, SNR ~ U(range) in dB."""
    constellation = Constellation.from_kind(config.modulation)
    channel = generate_channel(config.n_antennas, config.n_users, rng)
    h_real = to_real(channel)
    bits = rng.integers(0, 2, 2 * config.n_users * constellation.bits_per_real_dim)
    frame = modulate(bits, constellation)
    snr_db = rng.uniform(*config.snr_range_db)
    system = awgn_receive(h_real, frame.x, snr_db, rng)
    return system, frame


def mse_loss(x_true: np.ndarray, x_soft_final: np.ndarray) -> float:
    """Mean squared error with divisor 2K (the vector length)."""
    x_true = np.asarray(x_true, dtype=np.float64)
    x_soft_final = np.asarray(x_soft_final, dtype=np.float64)
    if x_true.shape != x_soft_final.shape:
        raise ValueError(f"length mismatch: {x_true.shape} vs {x_soft_final.shape}")
    return float(np.mean((x_true - x_soft_final) ** 2))


def lr_schedule(lr0: float, epoch: int) -> float:
    """Exponential decay: lr0 * 0.9^epoch."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 * 0.9**epoch


def _pack(values_per_layer) -> np.ndarray:
    """Flatten per-layer trainable values (layers 1..L-1) into one vector."""
    pieces = []
    for lv in values_per_layer[1:]:
        pieces.append([lv.alpha1, lv.alpha2])
        if lv.w1 is not None:
            pieces.append(lv.w1.ravel())
            pieces.append(lv.b1.ravel())
            pieces.append(lv.w2.ravel())
            pieces.append(lv.b2.ravel())
    if not pieces:
        return np.zeros(0)
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in pieces])


def _unpack(vec: np.ndarray, params: NetworkParams) -> NetworkParams:
    """Rebuild NetworkParams from a flat trainable vector (layer 0 untouched)."""
    layers = [params.layers[0]]
    n = 2 * params.n_users
    pos = 0
    for lp in params.layers[1:]:
        alpha1, alpha2 = vec[pos], vec[pos + 1]
        pos += 2
        if lp.has_linear:
            w1 = vec[pos : pos + n * n].reshape(n, n).copy()
            pos += n * n
            b1 = vec[pos : pos + n].copy()
            pos += n
            w2 = vec[pos : pos + n * n].reshape(n, n).copy()
            pos += n * n
            b2 = vec[pos : pos + n].copy()
            pos += n
            layers.append(type(lp)(float(alpha1), float(alpha2), w1, b1, w2, b2))
        else:
            layers.append(type(lp)(float(alpha1), float(alpha2)))
    assert pos == vec.size
    return NetworkParams(layers=layers, modulation=params.modulation, n_users=params.n_users)


@dataclass
class AdamState:
    """First/second-moment accumulators over the flat trainable vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params))


def adam_step(params: NetworkParams, grads, state: AdamState, lr: float):
    """One bias-corrected ADAM update on the trainable parameters only."""
    theta = _pack(params.layers)
    g = _pack(grads)
    if not np.all(np.isfinite(g)):
        raise TrainingDivergenceError("non-finite gradients in ADAM step")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g**2
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m=m, v=v, step=step, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return _unpack(theta, params), new_state


def _build_dataset(config: TrainConfig, rng: np.random.Generator):
    """Stack per-sample precomputations so whole batches run vectorized."""
    n = 2 * config.n_users
    d = np.empty((config.n_train, n))
    gram = np.empty((config.n_train, n, n))
    matched = np.empty((config.n_train, n))
    x_true = np.empty((config.n_train, n))
    for i in range(config.n_train):
        system, frame = generate_sample(config, rng)
        dg = precompute(system)
        d[i] = dg.d
        gram[i] = dg.gram
        matched[i] = dg.matched
        x_true[i] = frame.x
    return d, gram, matched, x_true


def train(config: TrainConfig, progress=None):
    """Train the unfolded network; returns (params, per-epoch mean loss)."""
    rng = np.random.default_rng(config.seed)
    params = NetworkParams.initial(config.n_layers, config.n_users, config.modulation)
    history: list = []
    n_theta = _pack(params.layers).size
    if n_theta == 0 or config.n_epochs == 0:
        return params, history
    d, gram, matched, x_true = _build_dataset(config, rng)
    state = AdamState.zeros(n_theta)
    n_batches = config.n_train // config.batch_size
    for epoch in range(config.n_epochs):
        lr = lr_schedule(config.lr0, epoch)
        perm = rng.permutation(config.n_train)
        batch_losses = []
        for b in range(n_batches):
            idx = perm[b * config.batch_size : (b + 1) * config.batch_size]
            db, gb, mb, xb = d[idx], gram[idx], matched[idx], x_true[idx]
            x0 = mb / db
            out, tape = _forward_soft_core(x0, db, gb, mb, params)
            loss = float(np.mean((out - xb) ** 2))
            if not np.isfinite(loss):
                raise TrainingDivergenceError(
                    f"loss diverged at epoch {epoch}", history=history
                )
            batch_losses.append(loss)
            # gradient of the batch-mean MSE (per-sample divisor 2K)
            loss_grad = (out - xb) / (config.n_users * len(idx))
            grads = param_gradients(tape, loss_grad)
            params, state = adam_step(params, grads, state, lr)
        history.append(float(np.mean(batch_losses)))
        if progress is not None:
            progress(epoch, lr, history[-1])
    return params, history
