"""IRLS loss evaluators, the blind solver, and halo removal."""

import math

import numpy as np
import pytest

from uwhalo.errors import CenterMismatchError, ConfigError
from uwhalo.imgcore import ImageF, load_image, save_image
from uwhalo.radial import HaloLayer, HaloParams, LightCenter, apply_halo, psi_array, radius_grid, synth_halo
from uwhalo.separation import (
    IrlsState,
    SeparationConfig,
    blind_separate,
    remove_halo,
    smooth_loss,
    supervised_halo_loss,
    update_weights,
)

from conftest import make_reference


def _random_layer(seed, h=16, w=16, center=LightCenter(8.0, 8.0)):
    rng = np.random.default_rng(seed)
    return HaloLayer(rng.uniform(0.2, 1.0, size=(h, w)), center)


class TestSupervisedLoss:
    def test_identical_layers_zero(self):
        layer = _random_layer(0)
        state = IrlsState.initial(layer.values.shape)
        assert supervised_halo_loss(layer, layer, state) == 0.0

    def test_lambda_zero_is_rms(self):
        v_gt, v_low = _random_layer(1), _random_layer(2)
        state = IrlsState.initial(v_gt.values.shape, lambda_=0.0)
        got = supervised_halo_loss(v_gt, v_low, state)
        # brute-force RMS oracle
        acc = 0.0
        for y in range(16):
            for x in range(16):
                acc += (v_gt.values[y, x] - v_low.values[y, x]) ** 2
        assert got == pytest.approx(math.sqrt(acc / 256), abs=1e-10)

    def test_two_term_oracle(self):
        v_gt, v_low = _random_layer(3), _random_layer(4)
        state = IrlsState.initial(v_gt.values.shape, lambda_=0.1)
        got = supervised_halo_loss(v_gt, v_low, state)
        # independent two-term evaluation
        rms = np.sqrt(np.mean((v_gt.values - v_low.values) ** 2))
        psi_g = psi_array(v_gt.values, v_gt.center)
        psi_l = psi_array(v_low.values, v_gt.center)
        reg = np.mean(np.abs(psi_g - psi_l))
        assert got == pytest.approx(rms + 0.1 * reg, abs=1e-10)

    def test_nonnegative_and_zero_iff_equal(self):
        v_gt, v_low = _random_layer(5), _random_layer(6)
        state = IrlsState.initial(v_gt.values.shape)
        assert supervised_halo_loss(v_gt, v_low, state) > 0.0

    def test_center_mismatch(self):
        v_gt = _random_layer(7)
        v_low = _random_layer(8, center=LightCenter(7.0, 8.0))
        state = IrlsState.initial(v_gt.values.shape)
        with pytest.raises(CenterMismatchError):
            supervised_halo_loss(v_gt, v_low, state)


class TestUpdateWeights:
    def test_zero_residual_gives_one_over_eps(self):
        layer = _random_layer(9)
        state = IrlsState.initial(layer.values.shape, epsilon=1e-3)
        new = update_weights(state, layer, layer)
        assert np.allclose(new.weights, 1e3)
        assert new.k == 2

    def test_residual_eps_gives_half(self):
        eps = 1e-3
        assert 1.0 / (eps + eps) == pytest.approx(1.0 / (2 * eps), abs=1e-12)

    def test_formula_loop_oracle(self):
        v_gt, v_prev = _random_layer(10), _random_layer(11)
        state = IrlsState.initial(v_gt.values.shape, epsilon=1e-3)
        new = update_weights(state, v_gt, v_prev)
        psi_g = psi_array(v_gt.values, v_gt.center)
        psi_p = psi_array(v_prev.values, v_gt.center)
        for y in range(16):
            for x in range(16):
                want = 1.0 / (abs(psi_g[y, x] - psi_p[y, x]) + 1e-3)
                assert abs(new.weights[y, x] - want) <= 1e-12

    def test_weights_in_range(self):
        v_gt, v_prev = _random_layer(12), _random_layer(13)
        state = IrlsState.initial(v_gt.values.shape, epsilon=1e-3)
        new = update_weights(state, v_gt, v_prev)
        assert np.all(new.weights > 0)
        assert np.all(new.weights <= 1.0 / new.epsilon + 1e-9)


class TestSmoothLoss:
    def test_identical_zero(self):
        layer = _random_layer(14)
        assert smooth_loss(layer, layer, 0.05) == 0.0

    def test_constant_offset_zero(self):
        v_gt = _random_layer(15)
        v_low = HaloLayer(np.clip(v_gt.values - 0.1, 0.05, 1.0), v_gt.center)
        # keep the clip inactive so the offset really is constant
        assume_ok = np.all(v_gt.values - 0.1 >= 0.05)
        if assume_ok:
            assert smooth_loss(v_gt, v_low, 0.05) <= 1e-12

    def test_linear_ramp_analytic(self):
        h = w = 32
        base = np.full((h, w), 0.5)
        ramp = base + 0.1 * np.arange(w) / w
        v_gt = HaloLayer(base, LightCenter(16, 16))
        v_low = HaloLayer(ramp, LightCenter(16, 16))
        lam = 0.05
        assert smooth_loss(v_gt, v_low, lam) == pytest.approx(lam * 0.1 / w, abs=1e-6)


class TestBlindSeparate:
    def test_constant_times_gaussian(self):
        img = ImageF(np.full((3, 128, 128), 0.9))
        halo = synth_halo(128, 128, HaloParams("gaussian", sigma=20, ambient=0.3),
                          LightCenter(60.0, 70.0))
        z = apply_halo(img, halo)
        est, state = blind_separate(z, halo.center, SeparationConfig())
        assert np.abs(est.values - halo.values).mean() <= 0.02
        diffs = np.diff(state.objective_history)
        assert np.all(diffs <= 1e-9)

    def test_flat_input_returns_ones(self):
        img = ImageF(np.full((3, 64, 64), 0.9))
        with pytest.warns(RuntimeWarning):
            est, _ = blind_separate(img, LightCenter(32, 32), SeparationConfig())
        assert np.abs(est.values - 1.0).max() <= 0.01

    def test_textured_flat_input_near_ones(self):
        ref = make_reference(7, global_amp=0.0, fine_amp=0.03)
        est, _ = blind_separate(ref, LightCenter(60.0, 64.0), SeparationConfig())
        assert np.abs(est.values - 1.0).max() <= 0.01

    def test_scale_invariance(self):
        ref = make_reference(8)
        halo = synth_halo(128, 128, HaloParams("gaussian", sigma=25, ambient=0.25),
                          LightCenter(50.0, 62.0))
        z = apply_halo(ref, halo)
        base, _ = blind_separate(z, halo.center, SeparationConfig())
        for alpha in (0.5, 0.75):
            scaled = ImageF(z.data * alpha)
            est, _ = blind_separate(scaled, halo.center, SeparationConfig())
            assert np.abs(est.values - base.values).max() <= 1e-6

    def test_monotone_along_radius(self):
        ref = make_reference(9)
        halo = synth_halo(128, 128, HaloParams("cosine4", sigma=30, ambient=0.2),
                          LightCenter(55.0, 75.0))
        z = apply_halo(ref, halo)
        est, _ = blind_separate(z, halo.center, SeparationConfig())
        r = radius_grid(128, 128, est.center).ravel()
        order = np.argsort(r, kind="stable")
        assert np.all(np.diff(est.values.ravel()[order]) <= 1e-12)

    def test_first_iteration_unweighted(self):
        state = IrlsState.initial((8, 8))
        assert np.all(state.weights == 1.0)
        assert state.k == 1

    def test_epsilon_annealing_path(self):
        # the spec's annealing schedule, exposed as an ablation knob
        ref = make_reference(12)
        halo = synth_halo(128, 128, HaloParams("gaussian", sigma=22, ambient=0.3),
                          LightCenter(58.0, 66.0))
        z = apply_halo(ref, halo)
        cfg = SeparationConfig(epsilon_decay=0.9)
        est, state = blind_separate(z, halo.center, cfg)
        assert np.abs(est.values - halo.values).mean() <= 0.03
        assert state.epsilon == pytest.approx(1e-3 * 0.9**9)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SeparationConfig(max_iters=0).validate()
        with pytest.raises(ConfigError):
            SeparationConfig(epsilon=0.0).validate()
        with pytest.raises(ConfigError):
            SeparationConfig(epsilon_decay=0.0).validate()


class TestRemoveHalo:
    def test_flat_identity(self):
        rng = np.random.default_rng(20)
        z = ImageF(rng.uniform(0, 1, size=(3, 16, 16)))
        ones = synth_halo(16, 16, HaloParams("flat"), LightCenter(8, 8))
        assert np.array_equal(remove_halo(z, ones).data, z.data)

    def test_inverse_of_apply(self):
        rng = np.random.default_rng(21)
        img = ImageF(rng.uniform(0, 1, size=(3, 32, 32)))
        halo = synth_halo(32, 32, HaloParams("gaussian", sigma=9, ambient=0.2),
                          LightCenter(15.0, 14.0))
        z = apply_halo(img, halo)
        back = remove_halo(z, halo)
        assert np.abs(back.data - img.data).max() <= 1e-6

    def test_floored_division_clamps(self):
        z = ImageF(np.full((1, 8, 8), 0.5))
        v = HaloLayer(np.full((8, 8), 0.0005), LightCenter(4, 4))
        out = remove_halo(z, v, div_floor=1e-3)
        assert np.all(out.data == 1.0)  # 0.5 / 0.001 = 500, clamped

    def test_roundtrip_through_8bit_file(self, tmp_path):
        # 8-bit quantization (0.5/255) is amplified by 1/v; with v >= 0.3
        # everywhere the end-to-end error stays within 2/255.
        rng = np.random.default_rng(22)
        img = ImageF(rng.uniform(0, 1, size=(3, 32, 32)))
        halo = synth_halo(32, 32, HaloParams("cosine4", sigma=10, ambient=0.3),
                          LightCenter(16.0, 16.0))
        z = apply_halo(img, halo)
        save_image(z, tmp_path / "z.png")
        z8 = load_image(tmp_path / "z.png")
        back = remove_halo(z8, halo)
        assert np.abs(back.data - img.data).max() <= 2 / 255


class TestProfileMachinery:
    def test_pava_projects_to_nonincreasing(self):
        from uwhalo.separation import _pava_nonincreasing

        rng = np.random.default_rng(30)
        values = rng.normal(0, 1, size=40)
        weights = rng.uniform(0.5, 3.0, size=40)
        proj = _pava_nonincreasing(values, weights)
        assert np.all(np.diff(proj) <= 1e-12)
        # projection is idempotent
        again = _pava_nonincreasing(proj, weights)
        assert np.abs(again - proj).max() <= 1e-12
        # already-monotone input is untouched
        mono = np.sort(rng.uniform(0, 1, size=20))[::-1]
        assert np.array_equal(_pava_nonincreasing(mono, np.ones(20)), mono)

    def test_pava_pools_to_weighted_mean(self):
        from uwhalo.separation import _pava_nonincreasing

        values = np.array([1.0, 3.0])
        weights = np.array([1.0, 3.0])
        proj = _pava_nonincreasing(values, weights)
        assert np.allclose(proj, 2.5)  # (1*1 + 3*3) / 4

    def test_empty_bins_interpolated(self):
        from uwhalo.separation import _fill_empty_bins

        values = np.array([1.0, 0.0, 0.0, 0.4, 0.2])
        counts = np.array([3, 0, 0, 2, 1])
        filled = _fill_empty_bins(values, counts)
        assert filled[0] == 1.0 and filled[3] == 0.4 and filled[4] == 0.2
        assert filled[1] == pytest.approx(0.8)
        assert filled[2] == pytest.approx(0.6)

    def test_final_state_invariants(self):
        ref = make_reference(11)
        halo = synth_halo(128, 128, HaloParams("gaussian", sigma=24, ambient=0.3),
                          LightCenter(70.0, 50.0))
        z = apply_halo(ref, halo)
        est, state = blind_separate(z, halo.center, SeparationConfig())
        assert state.k == 10
        assert np.all(state.weights > 0)
        assert np.all(state.weights <= 1.0 / state.epsilon + 1e-9)
        assert state.profile is not None
        assert np.all(np.diff(state.profile.values) <= 1e-12)  # monotone profile
        assert np.all(state.profile.values > 0)
        assert state.profile.counts.sum() == 128 * 128


def test_diagnostics_record_roundtrips_to_json():
    import json

    ref = make_reference(10)
    halo = synth_halo(128, 128, HaloParams("gaussian", sigma=22, ambient=0.3),
                      LightCenter(66.0, 58.0))
    z = apply_halo(ref, halo)
    est, state = blind_separate(z, halo.center, SeparationConfig())
    from uwhalo.separation import diagnostics_record

    rec = diagnostics_record(est, state)
    text = json.dumps(rec)
    assert json.loads(text)["iterations"] == state.k
