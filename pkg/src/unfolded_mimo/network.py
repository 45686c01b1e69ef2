"""Unfolded interference-cancellation network with per-layer learnable gains.

One layer maps the carried pair (x_q, v) to the next pair:

    v~      = W2 (W1 v + b1) + b2          (16QAM mode; identity otherwise)
    v_next  = D^{-1} (H^T y - H^T H x_q)
    x_next  = x_q + v_next + alpha1 * v~
    combo   = (1 - alpha2) * x_next + alpha2 * x_q

In hard (inference) mode the carry is Q[combo]; in soft (training) mode the
quantizer is relaxed to the identity so the whole graph stays differentiable
and reverse-mode gradients match finite differences exactly.

All core routines broadcast over leading batch dimensions, which the trainer
uses to process whole mini-batches at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .detectors import DiagonalGram, matched_filter_init, precompute
from .system_model import Constellation, RealSystem, quantize

__all__ = [
    "LayerGrads",
    "LayerParams",
    "LayerState",
    "ModelFileError",
    "ModulationMismatchError",
    "NetworkParams",
    "TapeError",
    "Tape",
    "detect",
    "forward_soft",
    "init_state",
    "load_params",
    "param_gradients",
    "save_params",
]

MODEL_FILE_VERSION = 1


class ModelFileError(ValueError):
    """Model file is malformed, has a bad version, or violates invariants."""


class ModulationMismatchError(ValueError):
    """NetworkParams modulation does not match the constellation in use."""


class TapeError(ValueError):
    """Gradient request does not match the recorded forward pass."""


@dataclass
class LayerParams:
    """Learnable scalars of one layer, plus the 16QAM linear transform."""

    alpha1: float
    alpha2: float
    w1: Optional[np.ndarray] = None
    b1: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None
    b2: Optional[np.ndarray] = None

    @property
    def has_linear(self) -> bool:
        return self.w1 is not None


@dataclass
class LayerGrads:
    """Gradient container shaped like LayerParams (no invariants enforced)."""

    alpha1: float
    alpha2: float
    w1: Optional[np.ndarray] = None
    b1: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None
    b2: Optional[np.ndarray] = None


@dataclass
class NetworkParams:
    """Full trainable set: L layers, layer 0 frozen at alpha1=0, alpha2=0.5."""

    layers: list
    modulation: str
    n_users: int

    def __post_init__(self):
        if not self.layers:
            raise ValueError("need at least one layer")
        first = self.layers[0]
        if first.alpha1 != 0.0 or first.alpha2 != 0.5:
            raise ValueError(
                "layer 0 is fixed at alpha1=0, alpha2=0.5 "
                f"(got {first.alpha1}, {first.alpha2})"
            )
        wants_linear = self.modulation == "qam16"
        n = 2 * self.n_users
        for t, lp in enumerate(self.layers):
            if lp.has_linear != wants_linear:
                raise ValueError(
                    f"layer {t}: linear transform present={lp.has_linear}, "
                    f"but modulation is {self.modulation}"
                )
            if wants_linear:
                for name in ("w1", "w2"):
                    if getattr(lp, name).shape != (n, n):
                        raise ValueError(f"layer {t}: {name} must be {n}x{n}")
                for name in ("b1", "b2"):
                    if getattr(lp, name).shape != (n,):
                        raise ValueError(f"layer {t}: {name} must have length {n}")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @classmethod
    def initial(cls, n_layers: int, n_users: int, modulation: str) -> "NetworkParams":
        """Untrained starting point: alpha1=0, alpha2=0.5 at every layer; the
        16QAM transforms start at identity/zero so the network reduces to the
        QPSK-structured forward."""
        if n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        n = 2 * n_users
        layers = []
        for _ in range(n_layers):
            if modulation == "qam16":
                layers.append(
                    LayerParams(0.0, 0.5, np.eye(n), np.zeros(n), np.eye(n), np.zeros(n))
                )
            else:
                layers.append(LayerParams(0.0, 0.5))
        return cls(layers=layers, modulation=modulation, n_users=n_users)


@dataclass
class LayerState:
    """Pair carried between layers plus the pre-quantization estimate."""

    x_q: np.ndarray
    v: np.ndarray
    x_soft: np.ndarray


@dataclass
class Tape:
    """Intermediates of one soft forward pass, for reverse-mode gradients."""

    params: NetworkParams
    d: np.ndarray
    gram: np.ndarray
    matched: np.ndarray
    records: list = field(default_factory=list)
    x_soft_final: Optional[np.ndarray] = None


def _mv(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix-vector product broadcasting over leading batch dims."""
    return np.matmul(A, x[..., None])[..., 0]


def _layer_step(xq, v, lp: LayerParams, d, gram, matched, levels):
    """One layer on (possibly batched) carries; levels=None means soft mode."""
    if lp.has_linear:
        u = v @ lp.w1.T + lp.b1
        vtilde = u @ lp.w2.T + lp.b2
    else:
        u = None
        vtilde = v
    v_next = (matched - _mv(gram, xq)) / d
    x_next = xq + v_next + lp.alpha1 * vtilde
    combo = (1.0 - lp.alpha2) * x_next + lp.alpha2 * xq
    if levels is None:
        xq_next = combo
    else:
        mid = (levels[:-1] + levels[1:]) / 2.0
        xq_next = levels[np.searchsorted(mid, combo, side="left")]
    aux = {"v_in": v, "u": u, "vtilde": vtilde, "xq_in": xq, "x_next": x_next, "combo": combo}
    return xq_next, v_next, combo, aux


def init_state(dg: DiagonalGram) -> LayerState:
    """Channel-hardening start: x_q = x_soft = D^{-1} H^T y, v = 0 (unquantized)."""
    x0 = matched_filter_init(dg)
    return LayerState(x_q=x0, v=np.zeros_like(x0), x_soft=x0)


def layer_forward(
    state: LayerState,
    layer_params: LayerParams,
    dg: DiagonalGram,
    constellation: Constellation,
    mode: str = "hard",
) -> LayerState:
    if mode not in ("hard", "soft"):
        raise ValueError(f"mode must be 'hard' or 'soft', got {mode!r}")
    levels = constellation.levels if mode == "hard" else None
    xq_next, v_next, combo, _ = _layer_step(
        state.x_q, state.v, layer_params, dg.d, dg.gram, dg.matched, levels
    )
    return LayerState(x_q=xq_next, v=v_next, x_soft=combo)


def _check_compat(system: RealSystem, constellation: Constellation, params: NetworkParams):
    if params.modulation != constellation.kind:
        raise ModulationMismatchError(
            f"params are for {params.modulation}, constellation is {constellation.kind}"
        )
    if params.n_users != system.n_users:
        raise ValueError(
            f"params expect K={params.n_users}, system has K={system.n_users}"
        )


def detect(
    system: RealSystem, constellation: Constellation, params: NetworkParams
) -> np.ndarray:
    """Hard-mode inference: L unfolded layers, returns the final quantized carry."""
    _check_compat(system, constellation, params)
    dg = precompute(system)
    xq = matched_filter_init(dg)
    v = np.zeros_like(xq)
    for lp in params.layers:
        xq, v, _, _ = _layer_step(xq, v, lp, dg.d, dg.gram, dg.matched, constellation.levels)
    return xq


def forward_soft(
    system: RealSystem, constellation: Constellation, params: NetworkParams
):
    """Differentiable forward: quantizer relaxed to identity, tape recorded.

    Returns (x_soft_final, tape) where x_soft_final is the last layer's
    pre-quantization combination, the loss input.
    """
    _check_compat(system, constellation, params)
    dg = precompute(system)
    x0 = matched_filter_init(dg)
    out, tape = _forward_soft_core(x0, dg.d, dg.gram, dg.matched, params)
    return out, tape


def _forward_soft_core(x0, d, gram, matched, params: NetworkParams):
    """Soft forward over raw (possibly batched) arrays."""
    tape = Tape(params=params, d=d, gram=gram, matched=matched)
    xq = x0
    v = np.zeros_like(x0)
    combo = x0
    for lp in params.layers:
        xq, v, combo, aux = _layer_step(xq, v, lp, d, gram, matched, None)
        tape.records.append(aux)
    tape.x_soft_final = combo
    return combo, tape


def param_gradients(tape: Tape, loss_grad: np.ndarray):
    """Exact reverse-mode gradients of the recorded soft forward.

    loss_grad is dL/d(x_soft_final) with the same shape as the recorded
    output. Returns a list of LayerGrads; layer 0 gets zeros (frozen).
    """
    if tape.x_soft_final is None or len(tape.records) != tape.params.n_layers:
        raise TapeError("tape does not hold a completed forward pass")
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != tape.x_soft_final.shape:
        raise TapeError(
            f"loss_grad shape {loss_grad.shape} does not match recorded "
            f"output shape {tape.x_soft_final.shape}"
        )
    params = tape.params
    grads = [None] * params.n_layers
    g_xq = loss_grad  # grad w.r.t. combo of the layer being processed
    g_v = np.zeros_like(loss_grad)  # grad w.r.t. the v carried into that layer
    for t in range(params.n_layers - 1, -1, -1):
        lp = params.layers[t]
        rec = tape.records[t]
        g_combo = g_xq
        g_alpha2 = float(np.sum(g_combo * (rec["xq_in"] - rec["x_next"])))
        g_x_next = (1.0 - lp.alpha2) * g_combo
        g_xq_in = lp.alpha2 * g_combo + g_x_next
        g_alpha1 = float(np.sum(g_x_next * rec["vtilde"]))
        g_vtilde = lp.alpha1 * g_x_next
        if lp.has_linear:
            n = lp.b1.size
            flat = lambda a: a.reshape(-1, n)
            g_b2 = flat(g_vtilde).sum(axis=0)
            g_w2 = flat(g_vtilde).T @ flat(rec["u"])
            g_u = g_vtilde @ lp.w2
            g_b1 = flat(g_u).sum(axis=0)
            g_w1 = flat(g_u).T @ flat(rec["v_in"])
            g_v_in = g_u @ lp.w1
        else:
            g_b1 = g_b2 = g_w1 = g_w2 = None
            g_v_in = g_vtilde
        # v_next feeds both x_next here and the next layer's v input
        g_v_next = g_x_next + g_v
        # v_next = (matched - gram @ xq_in) / d, gram symmetric
        g_xq_in = g_xq_in - _mv(tape.gram, g_v_next / tape.d)
        grads[t] = LayerGrads(g_alpha1, g_alpha2, g_w1, g_b1, g_w2, g_b2)
        g_xq = g_xq_in
        g_v = g_v_in
    # layer 0 is frozen by contract
    g0 = grads[0]
    g0.alpha1 = 0.0
    g0.alpha2 = 0.0
    if g0.w1 is not None:
        g0.w1 = np.zeros_like(g0.w1)
        g0.b1 = np.zeros_like(g0.b1)
        g0.w2 = np.zeros_like(g0.w2)
        g0.b2 = np.zeros_like(g0.b2)
    return grads


def save_params(params: NetworkParams, path) -> None:
    doc = {
        "version": MODEL_FILE_VERSION,
        "modulation": params.modulation,
        "n_users": params.n_users,
        "n_layers": params.n_layers,
        "alpha1": [lp.alpha1 for lp in params.layers],
        "alpha2": [lp.alpha2 for lp in params.layers],
    }
    if params.modulation == "qam16":
        doc["linear"] = [
            {
                "w1": lp.w1.tolist(),
                "b1": lp.b1.tolist(),
                "w2": lp.w2.tolist(),
                "b2": lp.b2.tolist(),
            }
            for lp in params.layers
        ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_params(path) -> NetworkParams:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != MODEL_FILE_VERSION:
        raise ModelFileError(
            f"unsupported model file version: {doc.get('version') if isinstance(doc, dict) else doc!r}"
        )
    try:
        modulation = doc["modulation"]
        n_users = int(doc["n_users"])
        n_layers = int(doc["n_layers"])
        alpha1 = [float(a) for a in doc["alpha1"]]
        alpha2 = [float(a) for a in doc["alpha2"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed model file: {exc}") from exc
    if len(alpha1) != n_layers or len(alpha2) != n_layers:
        raise ModelFileError("alpha arrays do not match n_layers")
    linear = doc.get("linear")
    if modulation == "qam16":
        if linear is None or len(linear) != n_layers:
            raise ModelFileError("16QAM model file must carry per-layer linear transforms")
    elif linear is not None:
        raise ModelFileError("linear transforms present but modulation is not qam16")
    layers = []
    for t in range(n_layers):
        if modulation == "qam16":
            blk = linear[t]
            layers.append(
                LayerParams(
                    alpha1[t],
                    alpha2[t],
                    np.array(blk["w1"], dtype=np.float64),
                    np.array(blk["b1"], dtype=np.float64),
                    np.array(blk["w2"], dtype=np.float64),
                    np.array(blk["b2"], dtype=np.float64),
                )
            )
        else:
            layers.append(LayerParams(alpha1[t], alpha2[t]))
    try:
        return NetworkParams(layers=layers, modulation=modulation, n_users=n_users)
    except ValueError as exc:
        raise ModelFileError(f"model file violates parameter invariants: {exc}") from exc
