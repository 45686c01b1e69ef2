"""Deep-unfolded interference-cancellation detector for massive MIMO uplinks.

Provides the real-valued system model, classical baseline detectors (ZF,
LMMSE, matched filter, Jacobi-style iterative cancellation), the unfolded
network with per-layer learnable gains, a self-contained trainer, and a
Monte Carlo BER benchmark harness.
"""

from .system_model import (
    ComplexChannel,
    Constellation,
    RealSystem,
    TransmitFrame,
    awgn_receive,
    demodulate_bits,
    generate_channel,
    modulate,
    quantize,
    to_real,
)
from .detectors import (
    DegenerateChannelError,
    DiagonalGram,
    iterative_detect,
    iterative_estimate,
    lmmse_detect,
    matched_filter_init,
    precompute,
    residual,
    zf_detect,
    zf_estimate,
)
from .network import (
    LayerParams,
    LayerState,
    ModelFileError,
    ModulationMismatchError,
    NetworkParams,
    detect,
    forward_soft,
    init_state,
    layer_forward,
    load_params,
    param_gradients,
    save_params,
)
from .training import TrainConfig, TrainingDivergenceError, mse_loss, lr_schedule, train
from .bench import BenchConfig, BerRecord, Detector, emit_results, flops, run_ber_point, run_sweep

__version__ = "0.1.0"
