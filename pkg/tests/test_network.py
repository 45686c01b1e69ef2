import numpy as np
import pytest

from conftest import make_system, orthonormal_system, randomized_params
from unfolded_mimo import (
    Constellation,
    LayerParams,
    ModelFileError,
    ModulationMismatchError,
    NetworkParams,
    detect,
    forward_soft,
    init_state,
    layer_forward,
    load_params,
    matched_filter_init,
    param_gradients,
    precompute,
    quantize,
    residual,
    save_params,
)
from unfolded_mimo.network import TapeError
from unfolded_mimo.training import _pack, _unpack

QPSK = Constellation.from_kind("qpsk")
QAM16 = Constellation.from_kind("qam16")


def fd_gradient(system, constellation, params, proj, step=1e-5):
    """Central finite differences of proj . x_soft_final in the flat trainable vector."""
    vec = _pack(params.layers)
    out = np.zeros_like(vec)
    for i in range(vec.size):
        vp, vm = vec.copy(), vec.copy()
        vp[i] += step
        vm[i] -= step
        op, _ = forward_soft(system, constellation, _unpack(vp, params))
        om, _ = forward_soft(system, constellation, _unpack(vm, params))
        out[i] = (proj @ op - proj @ om) / (2 * step)
    return out


class TestParams:
    def test_parameter_counts(self):
        params = NetworkParams.initial(8, 8, "qpsk")
        assert 2 * params.n_layers == 16
        assert _pack(params.layers).size == 2 * (params.n_layers - 1)

    def test_layer0_invariant_enforced(self):
        with pytest.raises(ValueError):
            NetworkParams(layers=[LayerParams(0.1, 0.5)], modulation="qpsk", n_users=4)
        with pytest.raises(ValueError):
            NetworkParams(layers=[LayerParams(0.0, 0.4)], modulation="qpsk", n_users=4)

    def test_linear_blocks_match_modulation(self):
        with pytest.raises(ValueError):
            NetworkParams(
                layers=[LayerParams(0.0, 0.5)], modulation="qam16", n_users=4
            )


class TestInitState:
    def test_orthonormal_noiseless_exact(self, rng):
        system, frame, _ = orthonormal_system(rng, 16, 4)
        state = init_state(precompute(system))
        assert np.max(np.abs(state.x_q - frame.x)) < 1e-12

    def test_zero_observation(self, rng):
        system, _, _ = make_system(rng, 16, 4)
        dg = precompute(system)
        dg = type(dg)(d=dg.d, gram=dg.gram, matched=np.zeros_like(dg.matched))
        state = init_state(dg)
        assert not state.x_q.any() and not state.v.any()

    def test_matches_matched_filter_module(self, rng):
        system, _, _ = make_system(rng, 16, 4)
        dg = precompute(system)
        state = init_state(dg)
        assert np.array_equal(state.x_q, matched_filter_init(dg))
        assert np.array_equal(state.x_q, state.x_soft)


class TestLayerForward:
    def test_zero_params_equal_one_quantized_iteration(self, rng):
        system, _, c = make_system(rng, 16, 4)
        dg = precompute(system)
        state = init_state(dg)
        out = layer_forward(state, LayerParams(0.0, 0.0), dg, c, mode="hard")
        expected = quantize(state.x_q + residual(dg, state.x_q), c)
        assert np.array_equal(out.x_q, expected)

    def test_alpha2_one_keeps_previous_estimate(self, rng):
        system, _, c = make_system(rng, 16, 4)
        dg = precompute(system)
        state = init_state(dg)
        out = layer_forward(state, LayerParams(0.3, 1.0), dg, c, mode="soft")
        assert np.allclose(out.x_q, state.x_q)

    def test_scalar_recipe_oracle(self, rng):
        system, _, c = make_system(rng, 16, 4, kind="qam16")
        dg = precompute(system)
        params = randomized_params(rng, 3, 4, "qam16")
        lp = params.layers[1]
        state = init_state(dg)
        state = layer_forward(state, params.layers[0], dg, QAM16, mode="hard")
        out = layer_forward(state, lp, dg, QAM16, mode="hard")
        # hand-computed four-step recipe, scalar by scalar
        vt = lp.w2 @ (lp.w1 @ state.v + lp.b1) + lp.b2
        v_next = np.array(
            [(dg.matched[i] - dg.gram[i] @ state.x_q) / dg.d[i] for i in range(8)]
        )
        x_next = np.array(
            [state.x_q[i] + v_next[i] + lp.alpha1 * vt[i] for i in range(8)]
        )
        combo = np.array(
            [(1 - lp.alpha2) * x_next[i] + lp.alpha2 * state.x_q[i] for i in range(8)]
        )
        assert np.max(np.abs(out.x_soft - combo)) < 1e-12
        assert np.array_equal(out.x_q, quantize(combo, QAM16))
        assert np.max(np.abs(out.v - v_next)) < 1e-12

    def test_bad_mode_rejected(self, rng):
        system, _, c = make_system(rng, 16, 4)
        dg = precompute(system)
        with pytest.raises(ValueError):
            layer_forward(init_state(dg), LayerParams(0.0, 0.0), dg, c, mode="warm")


class TestDetect:
    def test_reduces_to_per_step_quantized_iteration(self, rng):
        # alpha1 = 0 everywhere, alpha2 = 0 everywhere (layer 0 overridden too)
        system, _, c = make_system(rng, 16, 4)
        dg = precompute(system)
        state = init_state(dg)
        x = state.x_q
        for _ in range(6):
            state = layer_forward(state, LayerParams(0.0, 0.0), dg, c, mode="hard")
            x = quantize(x + residual(dg, x), c)
            assert np.array_equal(state.x_q, x)

    def test_composition_oracle(self, rng):
        system, _, c = make_system(rng, 16, 4)
        layers = [LayerParams(0.0, 0.5)] + [LayerParams(0.0, 0.0) for _ in range(3)]
        params = NetworkParams(layers=layers, modulation="qpsk", n_users=4)
        dg = precompute(system)
        state = init_state(dg)
        for lp in layers:
            state = layer_forward(state, lp, dg, c, mode="hard")
        assert np.array_equal(detect(system, c, params), state.x_q)

    def test_single_layer_algebra(self, rng):
        system, _, c = make_system(rng, 16, 4)
        params = NetworkParams.initial(1, 4, "qpsk")
        dg = precompute(system)
        x0 = matched_filter_init(dg)
        v1 = residual(dg, x0)
        assert np.array_equal(detect(system, c, params), quantize(x0 + 0.5 * v1, c))

    def test_noiseless_untrained_recovers(self, rng):
        params = NetworkParams.initial(8, 8, "qpsk")
        for _ in range(50):
            system, frame, c = make_system(rng, 128, 8, noiseless=True)
            assert np.array_equal(detect(system, c, params), frame.x)

    def test_outputs_are_constellation_points(self, rng):
        system, _, c = make_system(rng, 16, 4, snr_db=0.0)
        params = randomized_params(rng, 5, 4, "qpsk")
        assert np.all(np.isin(detect(system, c, params), c.levels))

    def test_determinism(self):
        rng1, rng2 = np.random.default_rng(5), np.random.default_rng(5)
        s1, _, c = make_system(rng1, 16, 4)
        s2, _, _ = make_system(rng2, 16, 4)
        params = NetworkParams.initial(4, 4, "qpsk")
        assert np.array_equal(detect(s1, c, params), detect(s2, c, params))

    def test_user_count_mismatch(self, rng):
        system, _, c = make_system(rng, 16, 4)
        with pytest.raises(ValueError):
            detect(system, c, NetworkParams.initial(4, 8, "qpsk"))

    def test_modulation_mismatch(self, rng):
        system, _, _ = make_system(rng, 16, 4)
        with pytest.raises(ModulationMismatchError):
            detect(system, QAM16, NetworkParams.initial(4, 4, "qpsk"))


class TestForwardSoft:
    def test_deterministic_replay(self, rng):
        system, _, c = make_system(rng, 16, 4)
        params = randomized_params(rng, 4, 4, "qpsk")
        out1, _ = forward_soft(system, c, params)
        out2, _ = forward_soft(system, c, params)
        assert np.array_equal(out1, out2)

    def test_16qam_identity_equals_qpsk_structure(self, rng):
        system, _, _ = make_system(rng, 16, 4, kind="qam16")
        params16 = NetworkParams.initial(4, 4, "qam16")
        out16, _ = forward_soft(system, QAM16, params16)
        # same alphas without the (identity) linear blocks
        from unfolded_mimo.network import _forward_soft_core

        dg = precompute(system)
        x0 = matched_filter_init(dg)
        scalar = NetworkParams(
            layers=[LayerParams(lp.alpha1, lp.alpha2) for lp in params16.layers],
            modulation="qpsk",
            n_users=4,
        )
        out_scalar, _ = _forward_soft_core(x0, dg.d, dg.gram, dg.matched, scalar)
        assert np.max(np.abs(out16 - out_scalar)) < 1e-12

    @pytest.mark.parametrize("kind", ["qpsk", "qam16"])
    def test_gradients_match_finite_differences(self, rng, kind):
        c = Constellation.from_kind(kind)
        for _ in range(4):
            system, _, _ = make_system(rng, 16, 4, kind=kind, snr_db=8.0)
            params = randomized_params(rng, 3, 4, kind)
            proj = rng.standard_normal(8)
            _, tape = forward_soft(system, c, params)
            got = _pack(param_gradients(tape, proj))
            want = fd_gradient(system, c, params, proj)
            err = np.abs(got - want) / np.maximum(np.abs(want), 1e-7)
            assert err.max() < 1e-4

    def test_alpha1_gradient_zero_without_residual(self, rng):
        # orthonormal noiseless channel: v after layer 0 is exactly zero,
        # so nothing downstream depends on alpha1 of layer 1
        system, _, c = orthonormal_system(rng, 16, 4)
        params = NetworkParams.initial(3, 4, "qpsk")
        _, tape = forward_soft(system, c, params)
        grads = param_gradients(tape, np.ones(8))
        assert grads[1].alpha1 == pytest.approx(0.0, abs=1e-12)

    def test_layer0_gradients_always_zero(self, rng):
        system, _, c = make_system(rng, 16, 4)
        params = randomized_params(rng, 4, 4, "qpsk")
        _, tape = forward_soft(system, c, params)
        grads = param_gradients(tape, rng.standard_normal(8))
        assert grads[0].alpha1 == 0.0 and grads[0].alpha2 == 0.0

    def test_mismatched_loss_grad_rejected(self, rng):
        system, _, c = make_system(rng, 16, 4)
        _, tape = forward_soft(system, c, NetworkParams.initial(3, 4, "qpsk"))
        with pytest.raises(TapeError):
            param_gradients(tape, np.ones(7))


class TestModelFile:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        for kind in ("qpsk", "qam16"):
            params = randomized_params(rng, 4, 4, kind)
            path = tmp_path / f"model_{kind}.json"
            save_params(params, path)
            loaded = load_params(path)
            assert loaded.modulation == kind and loaded.n_users == 4
            assert np.array_equal(_pack(loaded.layers), _pack(params.layers))
            assert loaded.layers[0].alpha2 == 0.5

    def test_bad_layer0_rejected(self, rng, tmp_path):
        params = NetworkParams.initial(3, 4, "qpsk")
        path = tmp_path / "model.json"
        save_params(params, path)
        doc = path.read_text().replace('"alpha2": [\n  0.5,', '"alpha2": [\n  0.7,')
        path.write_text(doc)
        with pytest.raises(ModelFileError):
            load_params(path)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"version": 99}')
        with pytest.raises(ModelFileError):
            load_params(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelFileError):
            load_params(tmp_path / "nope.json")

    def test_loaded_qpsk_params_rejected_in_qam16_run(self, rng, tmp_path):
        system, _, _ = make_system(rng, 16, 4, kind="qam16")
        path = tmp_path / "model.json"
        save_params(NetworkParams.initial(3, 4, "qpsk"), path)
        with pytest.raises(ModulationMismatchError):
            detect(system, QAM16, load_params(path))
