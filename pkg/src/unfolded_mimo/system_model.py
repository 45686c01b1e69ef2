"""System model: channels, modulation, real embedding, noise, quantizer.

Complex uplink  y~ = H~ x~ + n~  with N base-station antennas and K
single-antenna users is embedded into the real domain as

    H = [[Re(H~), -Im(H~)], [Im(H~), Re(H~)]],   y = [Re(y~); Im(y~)],

so every detector downstream works on H in R^{2N x 2K}, y in R^{2N}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ComplexChannel",
    "Constellation",
    "RealSystem",
    "TransmitFrame",
    "awgn_receive",
    "demodulate_bits",
    "embed_vector",
    "generate_channel",
    "modulate",
    "noise_variance",
    "quantize",
    "to_real",
]


@dataclass(frozen=True)
class ComplexChannel:
    """Complex N x K channel matrix with i.i.d. unit-variance entries."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.complex128)
        if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
            raise ValueError(f"channel must be a 2-D matrix, got shape {e.shape}")
        if not np.all(np.isfinite(e.view(np.float64))):
            raise ValueError("channel entries must be finite")
        object.__setattr__(self, "entries", e)

    @property
    def n_antennas(self) -> int:
        return self.entries.shape[0]

    @property
    def n_users(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class RealSystem:
    """Real-embedded received system every detector consumes.

    noise_var_per_real_dim is sigma^2/2, the variance of each real noise
    component (sigma^2 is the complex-domain noise variance).
    """

    H: np.ndarray
    y: np.ndarray
    noise_var_per_real_dim: float
    n_antennas: int
    n_users: int

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        N, K = self.n_antennas, self.n_users
        if H.shape != (2 * N, 2 * K):
            raise ValueError(f"H must be {2*N}x{2*K}, got {H.shape}")
        if y.shape != (2 * N,):
            raise ValueError(f"y must have length {2*N}, got {y.shape}")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(y))):
            raise ValueError("system entries must be finite")
        if self.noise_var_per_real_dim < 0:
            raise ValueError("noise variance must be non-negative")
        # block structure of the complex->real embedding
        if not (
            np.array_equal(H[:N, :K], H[N:, K:])
            and np.array_equal(H[:N, K:], -H[N:, :K])
        ):
            raise ValueError("H does not have the real-embedding block structure")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "y", y)


# Gray codes listed in ascending level order: adjacent levels differ in one bit.
_QPSK_LEVELS = np.array([-1.0, 1.0]) / np.sqrt(2.0)
_QPSK_CODES = ((1,), (0,))
_QAM16_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(10.0)
_QAM16_CODES = ((0, 0), (0, 1), (1, 1), (1, 0))


@dataclass(frozen=True)
class Constellation:
    """Per-real-dimension alphabet with Gray bit map, unit mean symbol energy."""

    kind: str
    levels: np.ndarray
    bits_per_real_dim: int
    codes: tuple

    @classmethod
    def from_kind(cls, kind: str) -> "Constellation":
        kind = kind.lower()
        if kind == "qpsk":
            return cls("qpsk", _QPSK_LEVELS, 1, _QPSK_CODES)
        if kind == "qam16":
            return cls("qam16", _QAM16_LEVELS, 2, _QAM16_CODES)
        raise ValueError(f"unknown constellation kind: {kind!r}")

    def level_for_bits(self, bits) -> float:
        """Map one per-real-dimension bit group to its level."""
        return float(self.levels[self.codes.index(tuple(int(b) for b in bits))])

    @property
    def code_table(self) -> np.ndarray:
        """Bit codes as an array indexed by level position, shape (n_levels, b)."""
        return np.array(self.codes, dtype=np.int64)


@dataclass(frozen=True)
class TransmitFrame:
    """Transmitted bits with their real-embedded and complex symbol vectors."""

    bits: np.ndarray
    x: np.ndarray
    x_complex: np.ndarray


def generate_channel(n_antennas: int, n_users: int, rng: np.random.Generator) -> ComplexChannel:
    """Draw an i.i.d. CN(0, 1) Rayleigh fading channel."""
    if n_antennas < n_users or n_users < 1:
        raise ValueError(
            f"need n_antennas >= n_users >= 1, got {n_antennas}x{n_users}"
        )
    re = rng.standard_normal((n_antennas, n_users))
    im = rng.standard_normal((n_antennas, n_users))
    return ComplexChannel((re + 1j * im) / np.sqrt(2.0))


def to_real(channel: ComplexChannel) -> np.ndarray:
    """Real 2N x 2K embedding [[Re, -Im], [Im, Re]] of the complex channel."""
    re, im = channel.entries.real, channel.entries.imag
    return np.block([[re, -im], [im, re]])


def embed_vector(v: np.ndarray) -> np.ndarray:
    """Stack [Re(v); Im(v)] of a complex vector; commutes with the matrix embedding."""
    v = np.asarray(v, dtype=np.complex128)
    return np.concatenate([v.real, v.imag])


def modulate(bits, constellation: Constellation) -> TransmitFrame:
    """Gray-map a bit vector of length 2K*b onto real-domain symbols."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    b = constellation.bits_per_real_dim
    if bits.size == 0 or bits.size % (2 * b) != 0:
        raise ValueError(
            f"bit count {bits.size} is not a positive multiple of 2*{b}"
        )
    groups = bits.reshape(-1, b)
    x = np.array([constellation.level_for_bits(g) for g in groups])
    k = x.size // 2
    return TransmitFrame(bits=bits, x=x, x_complex=x[:k] + 1j * x[k:])


def noise_variance(n_users: int, snr_db: float) -> float:
    """Total complex-domain noise variance sigma^2 = K / 10^(SNR/10)."""
    return n_users / 10.0 ** (snr_db / 10.0)


def awgn_receive(
    H_real: np.ndarray,
    x: np.ndarray,
    snr_db: float,
    rng: np.random.Generator,
    noiseless: bool = False,
) -> RealSystem:
    """Form y = Hx + n with i.i.d. N(0, sigma^2/2) real noise components.

    With noiseless=True the noise term is exactly zero (sigma^2 = 0).
    """
    H_real = np.asarray(H_real, dtype=np.float64)
    two_n, two_k = H_real.shape
    if noiseless:
        var = 0.0
        y = H_real @ x
    else:
        if not np.isfinite(snr_db):
            raise ValueError("snr_db must be finite (use noiseless=True for sigma^2=0)")
        var = noise_variance(two_k // 2, snr_db) / 2.0
        y = H_real @ x + rng.standard_normal(two_n) * np.sqrt(var)
    return RealSystem(
        H=H_real,
        y=y,
        noise_var_per_real_dim=var,
        n_antennas=two_n // 2,
        n_users=two_k // 2,
    )


def quantize(x_est: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Map each entry to the nearest level; midpoint ties go to the smaller level."""
    x_est = np.asarray(x_est, dtype=np.float64)
    if not np.all(np.isfinite(x_est)):
        raise ValueError("cannot quantize non-finite values")
    levels = constellation.levels
    mid = (levels[:-1] + levels[1:]) / 2.0
    # side='left' sends an exact midpoint to the lower cell
    return levels[np.searchsorted(mid, x_est, side="left")]


def demodulate_bits(x_quantized: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Invert the Gray map; entries must be exact constellation levels."""
    x_quantized = np.asarray(x_quantized, dtype=np.float64)
    levels = constellation.levels
    idx = np.argmin(np.abs(x_quantized[:, None] - levels[None, :]), axis=1)
    if not np.allclose(levels[idx], x_quantized, rtol=0.0, atol=1e-9):
        raise ValueError("input contains values that are not constellation levels")
    return constellation.code_table[idx].ravel()
