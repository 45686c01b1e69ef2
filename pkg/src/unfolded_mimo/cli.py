"""Command line interface: train / detect / sweep / flops.

Configuration comes from a TOML file; any key can be overridden by a CLI flag
of the same name. Exit codes: 0 success, 2 config error, 3 numerical
divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from .bench import BenchConfig, Detector, emit_results, flops, run_ber_point, run_sweep
from .network import ModelFileError, load_params, save_params, detect as net_detect
from .system_model import Constellation, awgn_receive, demodulate_bits, generate_channel, modulate, to_real
from .detectors import iterative_detect, lmmse_detect, zf_detect, matched_filter_init, precompute
from .system_model import quantize
from .training import TrainConfig, TrainingDivergenceError, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

_CONFIG_KEYS = [
    "n_antennas",
    "n_users",
    "n_layers",
    "modulation",
    "snr_range_db",
    "lr0",
    "batch_size",
    "n_train",
    "n_epochs",
    "seed",
    "detectors",
    "snr_db",
    "n_frames",
    "format",
]


def _load_config(path, args) -> dict:
    cfg = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                cfg = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"bad config file: {exc}") from exc
        for key in cfg:
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
    for key in _CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


class ConfigError(ValueError):
    pass


def _require(cfg: dict, *keys):
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")


def _train_config(cfg: dict) -> TrainConfig:
    _require(cfg, "n_antennas", "n_users")
    fields = {k: cfg[k] for k in (
        "n_antennas", "n_users", "n_layers", "modulation", "snr_range_db",
        "lr0", "batch_size", "n_train", "n_epochs", "seed") if k in cfg}
    if "snr_range_db" in fields:
        fields["snr_range_db"] = tuple(fields["snr_range_db"])
    return TrainConfig(**fields)


def _bench_config(cfg: dict) -> BenchConfig:
    _require(cfg, "n_antennas", "n_users")
    return BenchConfig(
        n_antennas=cfg["n_antennas"],
        n_users=cfg["n_users"],
        modulation=cfg.get("modulation", "qpsk"),
        n_layers=cfg.get("n_layers", 8),
    )


def _cmd_train(args) -> int:
    cfg = _load_config(args.config, args)
    tc = _train_config(cfg)
    log_rows = []

    def progress(epoch, lr, loss):
        log_rows.append((epoch, lr, loss))
        print(f"epoch {epoch}: lr={lr:.6g} mean_loss={loss:.6g}")

    params, _history = train(tc, progress=progress)
    save_params(params, args.out)
    if args.log is not None:
        with open(args.log, "w", encoding="utf-8") as fh:
            fh.write("epoch,lr,mean_loss\n")
            for epoch, lr, loss in log_rows:
                fh.write(f"{epoch},{lr!r},{loss!r}\n")
    print(f"model written to {args.out}")
    return EXIT_OK


def _cmd_detect(args) -> int:
    cfg = _load_config(args.config, args)
    bc = _bench_config(cfg)
    constellation = Constellation.from_kind(bc.modulation)
    rng = np.random.default_rng(cfg.get("seed", 0))
    channel = generate_channel(bc.n_antennas, bc.n_users, rng)
    bits = rng.integers(0, 2, 2 * bc.n_users * constellation.bits_per_real_dim)
    frame = modulate(bits, constellation)
    system = awgn_receive(to_real(channel), frame.x, args.snr_db, rng)
    det = Detector(args.detector)
    if det == Detector.PROPOSED:
        if args.params is None:
            raise ConfigError("--params is required for the proposed detector")
        x_hat = net_detect(system, constellation, load_params(args.params))
    elif det == Detector.ZF:
        x_hat = zf_detect(system, constellation)
    elif det == Detector.LMMSE:
        x_hat = lmmse_detect(system, constellation)
    elif det == Detector.ITERATIVE:
        x_hat = iterative_detect(system, constellation, bc.n_layers)
    else:
        x_hat = quantize(matched_filter_init(precompute(system)), constellation)
    rx_bits = demodulate_bits(x_hat, constellation)
    n_err = int(np.sum(rx_bits != bits))
    print(f"tx bits: {''.join(map(str, bits))}")
    print(f"rx bits: {''.join(map(str, rx_bits))}")
    print(f"bit errors: {n_err}/{bits.size}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config, args)
    bc = _bench_config(cfg)
    _require(cfg, "detectors", "snr_db", "n_frames")
    detectors = [Detector(d) for d in cfg["detectors"]]
    params = load_params(args.params) if args.params is not None else None
    if Detector.PROPOSED in detectors and params is None:
        raise ConfigError("sweep over the proposed detector needs --params")
    records = run_sweep(
        bc,
        detectors,
        cfg["snr_db"],
        cfg["n_frames"],
        args.seed,
        params=params,
        noiseless=args.noiseless,
    )
    emit_results(records, cfg.get("format", "csv"), args.out)
    print(f"{len(records)} records written to {args.out}")
    return EXIT_OK


def _cmd_flops(args) -> int:
    print(f"K={args.k} L={args.l}")
    for kind in ("lmmse", "detnet", "iterative", "proposed"):
        print(f"{kind:>10}: {flops(kind, args.k, args.l)}")
    return EXIT_OK


def _add_override_flags(p: argparse.ArgumentParser):
    p.add_argument("--n-antennas", dest="n_antennas", type=int)
    p.add_argument("--n-users", dest="n_users", type=int)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--modulation", choices=["qpsk", "qam16"])
    p.add_argument("--lr0", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-epochs", dest="n_epochs", type=int)
    p.add_argument("--n-frames", dest="n_frames", type=int)
    p.add_argument("--detectors", type=lambda s: s.split(","))
    p.add_argument("--format", choices=["csv", "json-lines"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unfolded-mimo")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the unfolded detector")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--log", help="training log CSV to write")
    p.add_argument("--seed", type=int)
    _add_override_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("detect", help="single-frame debug detection")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--snr-db", dest="snr_db", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--detector", default="proposed", choices=[d.value for d in Detector])
    p.add_argument("--params", help="model file for the proposed detector")
    _add_override_flags(p)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("sweep", help="Monte Carlo BER sweep")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="results file to write")
    p.add_argument("--params", help="model file for the proposed detector")
    p.add_argument("--noiseless", action="store_true")
    p.add_argument(
        "--snr-db",
        dest="snr_db",
        type=lambda s: [float(v) for v in s.split(",")],
        help="comma-separated SNR grid in dB",
    )
    _add_override_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("flops", help="print the complexity comparison table")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--l", type=int, default=8)
    p.set_defaults(func=_cmd_flops)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModelFileError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
