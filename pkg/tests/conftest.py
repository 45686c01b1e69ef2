import numpy as np
import pytest

from unfolded_mimo import (
    ComplexChannel,
    Constellation,
    awgn_receive,
    generate_channel,
    modulate,
    to_real,
)


def make_system(rng, n_antennas, n_users, kind="qpsk", snr_db=10.0, noiseless=False):
    """Random (system, frame, constellation) triple for tests."""
    constellation = Constellation.from_kind(kind)
    channel = generate_channel(n_antennas, n_users, rng)
    bits = rng.integers(0, 2, 2 * n_users * constellation.bits_per_real_dim)
    frame = modulate(bits, constellation)
    system = awgn_receive(to_real(channel), frame.x, snr_db, rng, noiseless=noiseless)
    return system, frame, constellation


def orthonormal_system(rng, n_antennas, n_users, kind="qpsk", noiseless=True, snr_db=10.0):
    """System whose real channel has orthonormal columns (H^T H = I)."""
    constellation = Constellation.from_kind(kind)
    z = rng.standard_normal((n_antennas, n_users)) + 1j * rng.standard_normal(
        (n_antennas, n_users)
    )
    q, _ = np.linalg.qr(z)
    h_real = to_real(ComplexChannel(q))
    bits = rng.integers(0, 2, 2 * n_users * constellation.bits_per_real_dim)
    frame = modulate(bits, constellation)
    system = awgn_receive(h_real, frame.x, snr_db, rng, noiseless=noiseless)
    return system, frame, constellation


def randomized_params(rng, n_layers, n_users, modulation, scale=0.2):
    """Initial NetworkParams with all trainable entries perturbed."""
    from unfolded_mimo import NetworkParams
    from unfolded_mimo.training import _pack, _unpack

    params = NetworkParams.initial(n_layers, n_users, modulation)
    vec = _pack(params.layers)
    return _unpack(vec + rng.normal(0.0, scale, vec.size), params)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
