"""Monte Carlo BER harness and the closed-form flop-count model.

Frames are generated in fixed-size chunks from a seeded generator, so two
detectors evaluated with the same seed consume byte-identical (H, x, n)
streams (common random numbers). Sweep points derive their seed from the
base seed XOR the point index.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np

from .network import NetworkParams, ModulationMismatchError, _layer_step
from .system_model import Constellation, noise_variance

__all__ = [
    "BenchConfig",
    "BerRecord",
    "Detector",
    "emit_results",
    "flops",
    "read_results",
    "run_ber_point",
    "run_sweep",
]

_CHUNK = 1000
_CSV_COLUMNS = ["detector", "snr_db", "n_frames", "n_bits", "n_bit_errors", "ber", "seed"]


class Detector(str, Enum):
    MF = "mf"
    ZF = "zf"
    LMMSE = "lmmse"
    ITERATIVE = "iterative"
    PROPOSED = "proposed"


@dataclass(frozen=True)
class BenchConfig:
    n_antennas: int
    n_users: int
    modulation: str = "qpsk"
    n_layers: int = 8

    def __post_init__(self):
        if self.n_antennas < self.n_users or self.n_users < 1:
            raise ValueError("need n_antennas >= n_users >= 1")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")


@dataclass(frozen=True)
class BerRecord:
    detector: str
    snr_db: float
    n_frames: int
    n_bits: int
    n_bit_errors: int
    ber: float
    seed: int

    def __post_init__(self):
        if self.n_bits <= 0 or not (0 <= self.n_bit_errors <= self.n_bits):
            raise ValueError("inconsistent bit counts")
        if self.ber != self.n_bit_errors / self.n_bits:
            raise ValueError("ber must equal n_bit_errors / n_bits exactly")


def flops(detector, K: int, L: int = 1) -> int:
    """Closed-form multiplication counts of the complexity comparison table."""
    if K < 1 or L < 1:
        raise ValueError("need K >= 1 and L >= 1")
    kind = detector.value if isinstance(detector, Detector) else str(detector).lower()
    if kind == "lmmse":
        return K**3 + K**2
    if kind == "detnet":
        return K * (128 * K - 2) * L
    if kind == "iterative":
        return 4 * L * K**2 + 2 * (2 * L + 1) * K
    if kind == "proposed":
        return 4 * L * K**2 + 2 * (2 * L + 1) * K + 3 * K * L
    raise ValueError(f"no flop formula for detector {detector!r}")


def _level_lut(constellation: Constellation):
    """Lookup tables: bit-group integer -> level, and level index -> bits."""
    b = constellation.bits_per_real_dim
    lut = np.empty(2**b)
    weights = 2 ** np.arange(b - 1, -1, -1)
    for i, code in enumerate(constellation.codes):
        lut[int(np.dot(code, weights))] = constellation.levels[i]
    return lut, weights


def _generate_chunk(rng, config: BenchConfig, constellation, snr_db, n, noiseless):
    """n paired frames: real-embedded H, transmitted bits/symbols, received y."""
    N, K = config.n_antennas, config.n_users
    re = rng.standard_normal((n, N, K))
    im = rng.standard_normal((n, N, K))
    H = np.empty((n, 2 * N, 2 * K))
    H[:, :N, :K] = re / np.sqrt(2.0)
    H[:, :N, K:] = -im / np.sqrt(2.0)
    H[:, N:, :K] = im / np.sqrt(2.0)
    H[:, N:, K:] = re / np.sqrt(2.0)
    b = constellation.bits_per_real_dim
    bits = rng.integers(0, 2, (n, 2 * K, b))
    lut, weights = _level_lut(constellation)
    x = lut[bits @ weights]
    y = np.matmul(H, x[..., None])[..., 0]
    if not noiseless:
        var = noise_variance(K, snr_db) / 2.0
        y = y + rng.standard_normal((n, 2 * N)) * np.sqrt(var)
    return H, bits.reshape(n, -1), x, y


def _quantize_batch(est, levels):
    mid = (levels[:-1] + levels[1:]) / 2.0
    return np.searchsorted(mid, est, side="left")


def _detect_chunk(detector, config, constellation, params, H, y, snr_db, noiseless):
    """Run one detector on a chunk; returns level indices, shape (n, 2K)."""
    Ht = H.transpose(0, 2, 1)
    gram = np.matmul(Ht, H)
    matched = np.matmul(Ht, y[..., None])[..., 0]
    d = np.einsum("nii->ni", gram)
    levels = constellation.levels
    if detector == Detector.MF:
        est = matched / d
    elif detector == Detector.ZF:
        est = np.linalg.solve(gram, matched[..., None])[..., 0]
    elif detector == Detector.LMMSE:
        sigma2 = 0.0 if noiseless else noise_variance(config.n_users, snr_db)
        eye = np.eye(gram.shape[-1])
        est = np.linalg.solve(gram + sigma2 * eye, matched[..., None])[..., 0]
    elif detector == Detector.ITERATIVE:
        est = matched / d
        for _ in range(config.n_layers):
            est = est + (matched - np.matmul(gram, est[..., None])[..., 0]) / d
    elif detector == Detector.PROPOSED:
        xq = matched / d
        v = np.zeros_like(xq)
        for lp in params.layers:
            xq, v, _, _ = _layer_step(xq, v, lp, d, gram, matched, levels)
        return _quantize_batch(xq, levels)
    else:
        raise ValueError(f"unknown detector {detector!r}")
    return _quantize_batch(est, levels)


def _as_detector(detector) -> Detector:
    return detector if isinstance(detector, Detector) else Detector(str(detector).lower())


def run_ber_point(
    detector,
    config: BenchConfig,
    snr_db: float,
    n_frames: int,
    seed: int,
    params: NetworkParams = None,
    noiseless: bool = False,
    frame_hook=None,
) -> BerRecord:
    """Measure one (detector, SNR) point over n_frames independent frames."""
    detector = _as_detector(detector)
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if detector == Detector.PROPOSED:
        if params is None:
            raise ValueError("PROPOSED detector requires NetworkParams")
        if params.modulation != config.modulation:
            raise ModulationMismatchError(
                f"params are for {params.modulation}, config wants {config.modulation}"
            )
        if params.n_users != config.n_users:
            raise ValueError(
                f"params expect K={params.n_users}, config has K={config.n_users}"
            )
    constellation = Constellation.from_kind(config.modulation)
    code_table = constellation.code_table
    rng = np.random.default_rng(seed)
    n_errors = 0
    done = 0
    while done < n_frames:
        n = min(_CHUNK, n_frames - done)
        H, bits, x, y = _generate_chunk(rng, config, constellation, snr_db, n, noiseless)
        if frame_hook is not None:
            frame_hook(H, x, y)
        idx = _detect_chunk(detector, config, constellation, params, H, y, snr_db, noiseless)
        rx_bits = code_table[idx].reshape(n, -1)
        n_errors += int(np.sum(rx_bits != bits))
        done += n
    n_bits = n_frames * 2 * config.n_users * constellation.bits_per_real_dim
    return BerRecord(
        detector=detector.value,
        snr_db=float(snr_db),
        n_frames=n_frames,
        n_bits=n_bits,
        n_bit_errors=n_errors,
        ber=n_errors / n_bits,
        seed=seed,
    )


def run_sweep(
    config: BenchConfig,
    detectors,
    snr_list,
    n_frames: int,
    seed: int,
    params: NetworkParams = None,
    noiseless: bool = False,
) -> list:
    """Full detector x SNR cross product with paired per-point frame streams."""
    records = []
    for i, snr_db in enumerate(snr_list):
        point_seed = seed ^ i
        for detector in detectors:
            records.append(
                run_ber_point(
                    detector,
                    config,
                    snr_db,
                    n_frames,
                    point_seed,
                    params=params,
                    noiseless=noiseless,
                )
            )
    return records


def emit_results(records, fmt: str, path) -> None:
    """Write records as CSV or JSON-lines with round-trip float precision."""
    if not records:
        raise ValueError("no records to emit")
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_COLUMNS)
            for r in records:
                writer.writerow(
                    [r.detector, repr(r.snr_db), r.n_frames, r.n_bits, r.n_bit_errors, repr(r.ber), r.seed]
                )
    elif fmt == "json-lines":
        with open(path, "w", encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps(asdict(r)) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r} (expected 'csv' or 'json-lines')")


def read_results(path, fmt: str = "csv") -> list:
    """Parse a results file back into BerRecord rows."""
    records = []
    if fmt == "csv":
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                records.append(
                    BerRecord(
                        detector=row["detector"],
                        snr_db=float(row["snr_db"]),
                        n_frames=int(row["n_frames"]),
                        n_bits=int(row["n_bits"]),
                        n_bit_errors=int(row["n_bit_errors"]),
                        ber=float(row["ber"]),
                        seed=int(row["seed"]),
                    )
                )
    elif fmt == "json-lines":
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(BerRecord(**json.loads(line)))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return records
