"""Light-center estimation, the radial gradient operator, halo synthesis."""

import math

import numpy as np
import pytest

from uwhalo.errors import ParamError, ShapeError
from uwhalo.imgcore import ImageF
from uwhalo.radial import (
    HaloLayer,
    HaloParams,
    LightCenter,
    apply_halo,
    estimate_center,
    load_halo,
    radial_gradient,
    radius_grid,
    save_halo,
    synth_halo,
)


def _gaussian_field(n, sigma, cx, cy):
    ys, xs = np.mgrid[0:n, 0:n].astype(float)
    r = np.hypot(xs - cx, ys - cy)
    return np.exp(-(r**2) / (2 * sigma**2)), r


class TestEstimateCenter:
    def test_single_bright_pixel(self):
        img = np.zeros((1, 64, 64))
        img[0, 20, 10] = 1.0
        c = estimate_center(ImageF(img))
        assert (c.x0, c.y0) == (10.0, 20.0)

    def test_constant_image_geometric_center(self):
        with pytest.warns(RuntimeWarning):
            c = estimate_center(ImageF(np.full((1, 32, 48), 0.25)))
        assert (c.x0, c.y0) == (47 / 2, 31 / 2)

    def test_synthetic_gaussian_recovery(self):
        v, _ = _gaussian_field(64, 12.0, 17.0, 23.0)
        img = ImageF(v[None])
        c = estimate_center(img, top_fraction=0.01)
        # independent oracle: exhaustive weighted centroid of the top set
        lum = v.ravel()
        n_top = math.ceil(0.01 * lum.size)
        order = np.argsort(-lum, kind="stable")[:n_top]
        ys, xs = np.unravel_index(order, v.shape)
        w = lum[order]
        ox, oy = np.dot(w, xs) / w.sum(), np.dot(w, ys) / w.sum()
        assert c.x0 == pytest.approx(ox, abs=1e-9)
        assert c.y0 == pytest.approx(oy, abs=1e-9)
        assert math.hypot(c.x0 - 17.0, c.y0 - 23.0) <= 1.5

    def test_recovery_across_sigma_and_ambient(self):
        # non-composite fields: sigma in [8, w/3], ambient <= 0.5
        for sigma in (8, 16, 28, 42):
            for ambient in (0.1, 0.5):
                halo = synth_halo(
                    128, 128,
                    HaloParams("gaussian", sigma=sigma, ambient=ambient),
                    LightCenter(47.0, 81.0),
                )
                c = estimate_center(ImageF(halo.values[None]))
                assert c.distance_to(halo.center) <= 1.5

    def test_param_validation(self):
        with pytest.raises(ParamError):
            estimate_center(ImageF(np.ones((1, 8, 8))), top_fraction=0.0)


class TestRadialGradient:
    def test_constant_field_exact_zero(self):
        field = ImageF(np.full((1, 33, 41), 0.6))
        psi = radial_gradient(field, LightCenter(20.0, 16.0))
        assert np.all(psi.values == 0.0)

    def test_gaussian_analytic_oracle(self):
        sigma = 12.0
        v, r = _gaussian_field(65, sigma, 32.0, 32.0)
        psi = radial_gradient(ImageF(v[None]), LightCenter(32.0, 32.0))
        analytic = -(r / sigma**2) * v
        assert np.abs(psi.values - analytic).max() <= 2e-3

    def test_tangential_field_near_zero(self):
        n = 65
        ys, xs = np.mgrid[0:n, 0:n].astype(float)
        cx = cy = 32.0
        v = np.sin(np.arctan2(ys - cy, xs - cx))
        psi = radial_gradient(ImageF(v[None]), LightCenter(cx, cy))
        r = np.hypot(xs - cx, ys - cy)
        assert np.abs(psi.values[r >= 5.0]).max() <= 5e-2

    def test_linearity(self):
        rng = np.random.default_rng(0)
        u = rng.uniform(0, 1, size=(17, 19))
        v = rng.uniform(0, 1, size=(17, 19))
        c = LightCenter(9.3, 7.8)
        a, b = 0.7, -1.3
        left = radial_gradient(ImageF((a * u + b * v)[None]), c).values
        right = a * radial_gradient(ImageF(u[None]), c).values + b * radial_gradient(
            ImageF(v[None]), c
        ).values
        assert np.abs(left - right).max() <= 1e-10

    def test_translation_equivariance(self):
        rng = np.random.default_rng(1)
        base = rng.uniform(0, 1, size=(40, 40))
        c = LightCenter(12.0, 14.0)
        psi = radial_gradient(ImageF(base[None]), c).values
        shifted = np.roll(np.roll(base, 3, axis=0), 5, axis=1)
        psi_s = radial_gradient(ImageF(shifted[None]), LightCenter(17.0, 17.0)).values
        # interior pixels away from the wrap-around borders and both centers
        assert np.array_equal(psi_s[10:36, 10:36], np.roll(np.roll(psi, 3, axis=0), 5, axis=1)[10:36, 10:36])

    def test_center_pixel_zero(self):
        rng = np.random.default_rng(2)
        field = ImageF(rng.uniform(0, 1, size=(1, 21, 21)))
        c = LightCenter(10.49, 5.49)
        psi = radial_gradient(field, c)
        assert psi.values[5, 10] == 0.0

    def test_monotone_halo_nonpositive_psi(self):
        for model in ("gaussian", "cosine4"):
            halo = synth_halo(64, 64, HaloParams(model, sigma=14, ambient=0.2),
                              LightCenter(30.0, 28.0))
            psi = radial_gradient(ImageF(halo.values[None]), halo.center)
            assert psi.values.max() <= 2e-3

    def test_requires_single_channel(self):
        with pytest.raises(ShapeError):
            radial_gradient(ImageF(np.ones((3, 8, 8))), LightCenter(4, 4))


class TestSynthHalo:
    def test_flat_model(self):
        halo = synth_halo(16, 16, HaloParams("flat"), LightCenter(8, 8))
        assert np.all(halo.values == 1.0)

    def test_gaussian_formula_value(self):
        # direct formula oracle, pre-normalization: a + (1-a) e^{-1} at r = sigma
        a, sigma = 0.2, 10.0
        expected = a + (1 - a) * math.exp(-1.0)
        assert expected == pytest.approx(0.4943, abs=1e-4)
        halo = synth_halo(64, 64, HaloParams("gaussian", sigma=sigma, ambient=a),
                          LightCenter(32.0, 32.0))
        r = radius_grid(64, 64, halo.center)
        peak = a + (1 - a) * math.exp(-((r.min() / sigma) ** 2))
        at_sigma = np.isclose(r, sigma, atol=1e-9)  # Pythagorean (6, 8, 10) pixels
        assert at_sigma.sum() > 0
        assert halo.values[at_sigma] * peak == pytest.approx(expected, abs=1e-9)

    def test_max_is_one_and_floor(self):
        halo = synth_halo(32, 32, HaloParams("gaussian", sigma=2.0, ambient=0.001),
                          LightCenter(5.0, 5.0))
        assert halo.values.max() == 1.0
        assert halo.values.min() >= 1e-3

    def test_monotone_along_radius(self):
        for model in ("gaussian", "cosine4"):
            halo = synth_halo(48, 40, HaloParams(model, sigma=9.0, ambient=0.15, beta=1.2),
                              LightCenter(13.0, 29.0))
            r = radius_grid(48, 40, halo.center).ravel()
            order = np.argsort(r, kind="stable")
            v_sorted = halo.values.ravel()[order]
            assert np.all(np.diff(v_sorted) <= 1e-12)

    def test_param_errors(self):
        with pytest.raises(ParamError):
            synth_halo(16, 16, HaloParams("gaussian", sigma=0.0), LightCenter(8, 8))
        with pytest.raises(ParamError):
            synth_halo(16, 16, HaloParams("gaussian", ambient=1.0), LightCenter(8, 8))
        with pytest.raises(ParamError):
            synth_halo(16, 16, HaloParams("gaussian", beta=0.2), LightCenter(8, 8))
        with pytest.raises(ParamError):
            synth_halo(16, 16, HaloParams("nope"), LightCenter(8, 8))


class TestApplyHalo:
    def test_flat_identity(self):
        rng = np.random.default_rng(3)
        img = ImageF(rng.uniform(0, 1, size=(3, 16, 16)))
        halo = synth_halo(16, 16, HaloParams("flat"), LightCenter(8, 8))
        assert np.array_equal(apply_halo(img, halo).data, img.data)

    def test_unit_image_yields_halo(self):
        img = ImageF(np.ones((3, 24, 24)))
        halo = synth_halo(24, 24, HaloParams("gaussian", sigma=6, ambient=0.2),
                          LightCenter(11.0, 13.0))
        out = apply_halo(img, halo)
        for c in range(3):
            assert np.allclose(out.data[c], halo.values)

    def test_loop_oracle(self):
        rng = np.random.default_rng(4)
        img = ImageF(rng.uniform(0, 1, size=(3, 32, 32)))
        halo = synth_halo(32, 32, HaloParams("cosine4", sigma=8, ambient=0.3),
                          LightCenter(15.0, 17.0))
        out = apply_halo(img, halo)
        for c in range(3):
            for y in range(32):
                for x in range(16):  # spot-check half the columns
                    assert abs(out.data[c, y, x] - img.data[c, y, x] * halo.values[y, x]) <= 1e-12

    def test_shape_error(self):
        img = ImageF(np.ones((3, 16, 16)))
        halo = synth_halo(8, 8, HaloParams("flat"), LightCenter(4, 4))
        with pytest.raises(ShapeError):
            apply_halo(img, halo)


def test_halo_serialization_roundtrip(tmp_path):
    params = HaloParams("gaussian", sigma=13.5, ambient=0.22, beta=1.1)
    halo = synth_halo(40, 56, params, LightCenter(20.25, 31.5))
    save_halo(halo, tmp_path / "h.png", params)
    loaded, lp = load_halo(tmp_path / "h.png")
    assert np.abs(loaded.values - halo.values).max() <= 1 / 65535 + 1e-9
    assert loaded.center == halo.center
    assert (lp.model_tag, lp.sigma, lp.ambient, lp.beta) == (
        params.model_tag, params.sigma, params.ambient, params.beta)


def test_halolayer_value_range_enforced():
    with pytest.raises(ParamError):
        HaloLayer(np.zeros((8, 8)), LightCenter(4, 4), "flat")
    with pytest.raises(ParamError):
        HaloLayer(np.full((8, 8), 1.5), LightCenter(4, 4), "flat")
