"""Classical baseline detectors: ZF, LMMSE, matched filter, iterative cancellation.

The iterative detector is diagonally preconditioned Jacobi on the normal
equations: with D = diag(H^T H),

    x_{t+1} = x_t + D^{-1} (H^T y - H^T H x_t),

started from the matched-filter estimate D^{-1} H^T y and quantized once
at the end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .system_model import Constellation, RealSystem, quantize

__all__ = [
    "DegenerateChannelError",
    "DiagonalGram",
    "iterative_detect",
    "iterative_estimate",
    "lmmse_detect",
    "matched_filter_init",
    "precompute",
    "residual",
    "zf_detect",
    "zf_estimate",
]


class DegenerateChannelError(ValueError):
    """A channel column has zero norm, so D is singular."""


@dataclass(frozen=True)
class DiagonalGram:
    """Shared precomputation: d = diag(H^T H), gram = H^T H, matched = H^T y."""

    d: np.ndarray
    gram: np.ndarray
    matched: np.ndarray


def precompute(system: RealSystem) -> DiagonalGram:
    gram = system.H.T @ system.H
    d = np.diag(gram).copy()
    if np.any(d == 0.0):
        raise DegenerateChannelError("channel has a zero-norm column")
    return DiagonalGram(d=d, gram=gram, matched=system.H.T @ system.y)


def zf_estimate(dg: DiagonalGram) -> np.ndarray:
    """Unquantized zero-forcing solution (H^T H)^{-1} H^T y."""
    return np.linalg.solve(dg.gram, dg.matched)


def zf_detect(system: RealSystem, constellation: Constellation) -> np.ndarray:
    return quantize(zf_estimate(precompute(system)), constellation)


def lmmse_detect(system: RealSystem, constellation: Constellation) -> np.ndarray:
    """Quantized (H^T H + sigma^2 I)^{-1} H^T y with sigma^2 the complex noise variance."""
    dg = precompute(system)
    sigma2 = 2.0 * system.noise_var_per_real_dim
    reg = dg.gram + sigma2 * np.eye(dg.gram.shape[0])
    return quantize(np.linalg.solve(reg, dg.matched), constellation)


def matched_filter_init(dg: DiagonalGram) -> np.ndarray:
    """Channel-hardening initializer D^{-1} H^T y (unquantized)."""
    return dg.matched / dg.d


def residual(dg: DiagonalGram, x_hat: np.ndarray) -> np.ndarray:
    """Residual error vector v = D^{-1} (H^T y - H^T H x_hat)."""
    return (dg.matched - dg.gram @ x_hat) / dg.d


def iterative_estimate(dg: DiagonalGram, n_iters: int) -> np.ndarray:
    """Unquantized iterate after n_iters interference-cancellation steps."""
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    x_hat = matched_filter_init(dg)
    for _ in range(n_iters):
        x_hat = x_hat + residual(dg, x_hat)
    return x_hat


def iterative_detect(
    system: RealSystem, constellation: Constellation, n_iters: int
) -> np.ndarray:
    return quantize(iterative_estimate(precompute(system), n_iters), constellation)
