import dataclasses

import numpy as np
import pytest

from curvefeat.curvelet import build_geometry, fdct_forward
from curvefeat.errors import MissingForwardCache
from curvefeat.masks import band_scale_ranges
from curvefeat.regularizer import RegConfig
from curvefeat.training import (
    OptimizerConfig,
    band_support_masks,
    build_model,
    history_to_csv,
    load_checkpoint,
    make_synthetic,
    model_backward,
    model_forward,
    predict,
    save_checkpoint,
    train,
)

from helpers import check_tensor_grad


@pytest.fixture(scope="module")
def toy_model():
    geom = build_geometry(16, 16, 3, 8)
    model = build_model(geom, hidden=8, seed=3)
    rng = np.random.default_rng(7)
    for arr in model.named_parameters().values():
        arr += rng.normal(0, 0.05, arr.shape)
    return model


class TestBackward:
    def test_every_tensor_against_finite_differences(self, toy_model):
        # Soft gating makes the straight-through backward the exact chain
        # rule of the forward being differenced.
        rng = np.random.default_rng(11)
        x = rng.random((3, 3, 16, 16))
        y = np.array([0.0, 1.0, 1.0])
        cfg = RegConfig(total_active_target=15.0)
        res = model_forward(toy_model, x, y, cfg, epoch=0, gate_mode="soft")
        grads = model_backward(res.cache)

        def loss():
            return model_forward(
                toy_model, x, y, cfg, epoch=0, gate_mode="soft", need_cache=False
            ).loss

        check = np.random.default_rng(0)
        worst = 0.0
        for name, arr in toy_model.named_parameters().items():
            err = check_tensor_grad(loss, arr, grads[name], check)
            worst = max(worst, err)
        assert worst <= 1e-4

    def test_zero_loss_gradient(self, toy_model):
        rng = np.random.default_rng(12)
        x = rng.random((2, 3, 16, 16))
        y = np.array([0.0, 1.0])
        cfg = RegConfig(total_active_target=15.0)
        res = model_forward(toy_model, x, y, cfg, epoch=0)
        grads = model_backward(res.cache, d_loss=0.0)
        for g in grads.values():
            np.testing.assert_array_equal(g, 0.0)

    def test_missing_cache(self):
        with pytest.raises(MissingForwardCache):
            model_backward(None)

    def test_magnitude_gradient_at_zero_phase(self):
        # d loss / d magnitude through the phase recombination is
        # Re(e^{-i theta} * upstream); at theta = 0 that is the real part.
        from curvefeat.pipeline import _enhance_channel_forward, _enhance_channel_vjp, neutral_params

        geom = build_geometry(16, 16, 3, 8)
        params = neutral_params(geom, hidden=8, seed=0)
        x = np.random.default_rng(1).random((1, 16, 16))
        _, _, cache = _enhance_channel_forward(x, params, 0)
        # force zero phase on every cached wedge
        cache.units = [np.ones_like(u) for u in cache.units]
        upstream = np.zeros((1, 4, 16, 16))
        upstream[0, 3] = np.random.default_rng(2).normal(size=(16, 16))
        grads = _enhance_channel_vjp(cache, upstream, need_mag_grads=True)
        dz = fdct_forward(upstream[:, 3], geom)
        # band 4 has unit mask at init, so d modulated == d gated there
        for i in (0, 4, 9):
            np.testing.assert_allclose(
                grads.gate.d_magnitudes[i], dz.wedges[i].real, atol=1e-12
            )


class TestSynthetic:
    def test_determinism(self):
        a = make_synthetic(8, 32, seed=3)
        b = make_synthetic(8, 32, seed=3)
        np.testing.assert_array_equal(a.images(), b.images())
        np.testing.assert_array_equal(a.labels(), b.labels())
        np.testing.assert_array_equal(a.doctored_bands(), b.doctored_bands())

    def test_balanced_alternating(self):
        ds = make_synthetic(12, 32, seed=4)
        np.testing.assert_array_equal(ds.labels(), [0, 1] * 6)
        assert all(s.doctored_band == 0 for s in ds.samples if s.label == 0)
        assert all(s.doctored_band in (1, 2, 3) for s in ds.samples if s.label == 1)

    def test_values_in_unit_interval(self):
        ds = make_synthetic(8, 32, seed=5)
        imgs = ds.images()
        assert imgs.min() >= 0.0 and imgs.max() <= 1.0

    def test_identity_factor(self):
        ds = make_synthetic(6, 32, seed=6, doctor_factor=1.0)
        for i in range(0, 6, 2):
            np.testing.assert_allclose(
                ds.samples[i].image, ds.samples[i + 1].image, atol=1e-12
            )

    def test_doctored_band_energy_ratio(self):
        # Parseval on band subsets: every wedge of the doctored band scales
        # by exactly the factor, so the band energy ratio is factor^2.
        ds = make_synthetic(8, 64, seed=7)
        g = ds.geometry
        ranges = band_scale_ranges(g.num_scales)
        for p in range(0, 8, 2):
            real, fake = ds.samples[p], ds.samples[p + 1]
            lo, hi = ranges[fake.doctored_band - 1]
            idx = [i for i, w in enumerate(g.wedges) if lo <= w.scale <= hi]
            e_real = e_fake = 0.0
            for c in range(3):
                cr = fdct_forward(real.image[c], g)
                cf = fdct_forward(fake.image[c], g)
                e_real += sum(float(np.sum(np.abs(cr.wedges[i]) ** 2)) for i in idx)
                e_fake += sum(float(np.sum(np.abs(cf.wedges[i]) ** 2)) for i in idx)
            assert e_fake / e_real == pytest.approx(2.25, rel=0.05)

    def test_difference_confined_to_band(self):
        ds = make_synthetic(6, 64, seed=8)
        supports = band_support_masks(ds.geometry)
        for p in range(0, 6, 2):
            real, fake = ds.samples[p], ds.samples[p + 1]
            outside = ~supports[fake.doctored_band - 1]
            spec = np.fft.fft2(fake.image - real.image)
            leak = float(np.sum(np.abs(spec) ** 2 * outside[None]))
            total = float(np.sum(np.abs(spec) ** 2))
            assert leak <= 1e-20 * max(total, 1.0)

    def test_odd_count_rejected(self):
        with pytest.raises(ValueError):
            make_synthetic(5, 32, seed=0)


class TestTraining:
    def test_memorization_pure_bce(self):
        # With both regularizer weights off, the loss is plain BCE and a
        # 32-sample set is memorized.
        ds = make_synthetic(32, 32, seed=9, doctor_factor=2.0)
        cfg = RegConfig(lambda_cls=0.0, lambda_l1_base=0.0, lambda_l1_increment=0.0)
        state, history = train(
            ds, cfg, optimizer=OptimizerConfig(learning_rate=0.006),
            epochs=120, seed=9,
        )
        losses = [row["loss"] for row in history]
        cls_losses = [row["cls_loss"] for row in history]
        np.testing.assert_allclose(losses, cls_losses, atol=1e-12)
        assert losses[-1] < 0.05
        assert history[-1]["accuracy"] == 1.0
        # non-increasing up to optimizer jitter
        assert all(b <= a + 1e-3 for a, b in zip(losses, losses[1:]))

    def test_deterministic_history(self):
        ds = make_synthetic(16, 32, seed=10)
        cfg = RegConfig(total_active_target=15.0)
        _, h1 = train(ds, cfg, epochs=2, seed=5)
        _, h2 = train(ds, cfg, epochs=2, seed=5)
        assert history_to_csv(h1) == history_to_csv(h2)

    def test_lambda_schedule_in_history(self):
        ds = make_synthetic(8, 32, seed=11)
        cfg = RegConfig()
        _, history = train(ds, cfg, epochs=7, seed=1)
        lams = [row["lambda_l1"] for row in history]
        assert lams[0] == pytest.approx(2.5e-4)
        assert lams[4] == pytest.approx(2.5e-4)
        assert lams[5] == pytest.approx(3.75e-4)
        assert lams[6] == pytest.approx(3.75e-4)

    def test_history_csv_columns(self):
        ds = make_synthetic(8, 32, seed=12)
        _, history = train(ds, RegConfig(), epochs=1, seed=0)
        header = history_to_csv(history).splitlines()[0].split(",")
        for col in ("epoch", "loss", "accuracy", "lambda_l1", "gate_count_r",
                    "gate_count_g", "gate_count_b"):
            assert col in header


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        ds = make_synthetic(8, 32, seed=13)
        cfg = RegConfig(total_active_target=20.0)
        state, _ = train(ds, cfg, epochs=1, seed=2)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, state)
        model, reg, epoch = load_checkpoint(path)
        assert epoch == 1
        assert reg.total_active_target == 20.0
        for name, arr in state.model.named_parameters().items():
            np.testing.assert_array_equal(arr, model.named_parameters()[name])
        # restored model predicts identically
        imgs = ds.images()[:4]
        p1, _, _ = predict(state.model, imgs)
        p2, _, _ = predict(model, imgs)
        np.testing.assert_array_equal(p1, p2)

    def test_not_a_checkpoint(self, tmp_path):
        from curvefeat.container import write_archive
        from curvefeat.errors import ShapeMismatch

        path = tmp_path / "bogus.cft"
        write_archive(path, [(np.zeros(3), {"kind": "other"})])
        with pytest.raises(ShapeMismatch):
            load_checkpoint(path)
