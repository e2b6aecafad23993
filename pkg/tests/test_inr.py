import numpy as np
import pytest

from adaptive_tickets.datasets import Image, RegionMap, pixel_coordinates, two_region_fixture
from adaptive_tickets.inr import (
    PSNR_CAP,
    FourierEncoder,
    InrConfig,
    coordinate_task,
    fit_inr,
    fit_inr_levels,
    fourier_encode,
    psnr,
    reconstruct,
    region_psnr,
)
from adaptive_tickets.masking import BinaryMask, MaskSet, PruneSchedule
from adaptive_tickets.tensor import forward, init_params

from conftest import random_mask
from oracles import scalar_psnr

TINY = InrConfig(hidden=(8, 8), num_bands=2, steps=20, epochs=5, lr=1e-2, batch_size=16)


class TestEncoder:
    def test_origin(self):
        f = fourier_encode([0.0, 0.0])
        sins = np.concatenate([f[0:32:4], f[2:32:4]])
        coss = np.concatenate([f[1:32:4], f[3:32:4]])
        assert np.all(sins == 0.0) and np.all(coss == 1.0)
        assert f[32:].tolist() == [0.0, 0.0]

    def test_one_band_at_x1(self):
        f = fourier_encode([1.0, 0.0], num_bands=1)
        assert f[0] == pytest.approx(0.0, abs=1e-15)
        assert f[1] == -1.0
        assert f[2:4].tolist() == [0.0, 1.0]
        assert f[4:].tolist() == [1.0, 0.0]

    @pytest.mark.parametrize("L,raw,width", [(8, True, 34), (8, False, 32), (1, True, 6), (3, False, 12)])
    def test_width(self, L, raw, width):
        enc = FourierEncoder(L, raw)
        assert enc.width == width
        assert enc.encode(np.zeros((5, 2))).shape == (5, width)

    def test_deterministic(self, rng):
        c = rng.uniform(-1, 1, size=(10, 2))
        assert np.array_equal(FourierEncoder().encode(c), FourierEncoder().encode(c))

    def test_model_widths_chain(self):
        w = InrConfig().widths(3)
        assert w[0] == 34 and w[-1] == 3 and len(w) == 6


class TestPsnr:
    def test_identical_capped(self):
        img = Image(np.full((2, 2, 3), 0.5))
        assert psnr(img, img) == PSNR_CAP == 99.0

    def test_uniform_error_20db(self):
        a = Image(np.full((4, 4, 3), 0.5))
        b = Image(np.full((4, 4, 3), 0.6))
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_scalar_oracle(self, rng):
        a = Image(rng.random((8, 8, 3)))
        b = Image(rng.random((8, 8, 3)))
        assert abs(psnr(a, b) - scalar_psnr(a.pixels.tolist(), b.pixels.tolist())) <= 1e-9
        assert psnr(a, b) == psnr(b, a)

    def test_monotone_in_noise(self, rng):
        base = np.full((8, 8, 3), 0.5)
        noise = rng.uniform(-1, 1, size=base.shape)
        values = [psnr(Image(base), Image(base + amp * noise)) for amp in (0.01, 0.05, 0.1, 0.3)]
        assert values == sorted(values, reverse=True)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(Image(np.zeros((2, 2, 3))), Image(np.zeros((2, 3, 3))))

    def test_region_psnr(self):
        a = Image(np.full((2, 2, 1), 0.5))
        b = Image(np.array([[[0.5], [0.6]], [[0.5], [0.6]]]))
        regions = RegionMap(np.array([[0, 1], [0, 1]]), 2)
        out = region_psnr(a, b, regions)
        assert out[0] == PSNR_CAP and out[1] == pytest.approx(20.0)


class TestReconstruct:
    def setup(self, regions):
        cfg = InrConfig(hidden=(6,), num_bands=2)
        params = init_params(cfg.widths(3), 0)
        return cfg, params

    def test_k1_equals_plain_forward(self):
        regions = RegionMap.uniform(4, 5)
        cfg, params = self.setup(regions)
        masks = MaskSet([BinaryMask.ones(params.shapes)], [0])
        img = reconstruct(params, masks, regions, cfg.encoder)
        feats = cfg.encoder.encode(pixel_coordinates(4, 5))
        expect = np.clip(forward(params, None, feats)[0], 0, 1).reshape(4, 5, 3)
        assert np.array_equal(img.pixels, expect)

    def test_zero_masks_give_bias_response(self):
        _, regions = two_region_fixture(8)
        cfg, params = self.setup(regions)
        params.biases[-1][:] = [0.2, 0.4, 0.6]
        masks = MaskSet([BinaryMask.zeros(params.shapes)] * 2, [0, 1])
        img = reconstruct(params, masks, regions, cfg.encoder)
        for r in range(2):
            px = img.pixels[regions.labels == r]
            assert np.all(px == px[0])

    def test_routing_is_local(self, rng):
        _, regions = two_region_fixture(8)
        cfg, params = self.setup(regions)
        m0, m1 = random_mask(params.shapes, rng), random_mask(params.shapes, rng)
        a = reconstruct(params, MaskSet([m0, m1], [0, 1]), regions, cfg.encoder)
        b = reconstruct(params, MaskSet([m0, random_mask(params.shapes, rng)], [0, 1]), regions, cfg.encoder)
        left = regions.labels == 0
        assert np.array_equal(a.pixels[left], b.pixels[left])
        assert not np.array_equal(a.pixels[~left], b.pixels[~left])

    def test_outputs_clamped(self):
        regions = RegionMap.uniform(3, 3)
        cfg, params = self.setup(regions)
        params.biases[-1][:] = [5.0, -5.0, 0.5]
        masks = MaskSet([BinaryMask.zeros(params.shapes)], [0])
        px = reconstruct(params, masks, regions, cfg.encoder).pixels
        assert np.all(px[..., 0] == 1.0) and np.all(px[..., 1] == 0.0)

    def test_missing_region_mask(self):
        _, regions = two_region_fixture(8)
        cfg, params = self.setup(regions)
        with pytest.raises(KeyError):
            reconstruct(params, MaskSet([BinaryMask.ones(params.shapes)], [0]), regions, cfg.encoder)


class TestFit:
    def test_coordinate_task_partition(self):
        img, regions = two_region_fixture(16)
        task = coordinate_task(img, regions, InrConfig())
        assert task.features.shape == (256, 34)
        assert task.partition.sizes == [128, 128]

    def test_dense_psnr_increases(self):
        img, _ = two_region_fixture(16)
        regions = RegionMap.uniform(16, 16)
        cfg = InrConfig(hidden=(16, 16), num_bands=4, steps=1, epochs=6, lr=1e-2, batch_size=64)
        fit = fit_inr(img, regions, PruneSchedule(0.0, "count", 64), cfg, track_psnr=True)
        assert fit.extraction.optimizer_steps == 0
        h = fit.psnr_by_epoch
        assert all(b > a for a, b in zip(h, h[1:]))

    def test_constant_colour_converges(self):
        img = Image(np.tile([0.2, 0.5, 0.8], (8, 8, 1)))
        regions = RegionMap.uniform(8, 8)
        cfg = InrConfig(hidden=(8,), num_bands=2, steps=1, epochs=3000, lr=1e-2, batch_size=64)
        fit = fit_inr(img, regions, PruneSchedule(0.0, "count", 8), cfg)
        out = reconstruct(fit.params, fit.masks, regions, cfg.encoder)
        assert np.max(np.abs(out.pixels - img.pixels)) <= 1 / 255

    def test_shared_init_and_masks_per_region(self):
        img, regions = two_region_fixture(8)
        fit = fit_inr(img, regions, PruneSchedule(0.3, "count", 20), TINY)
        base = fit_inr(img, RegionMap.uniform(8, 8), PruneSchedule(0.3, "count", 20), TINY)
        assert fit.init.equals(base.init)
        assert len(fit.masks) == 2 and len(base.masks) == 1

    def test_levels_snapshot_and_independent(self):
        img, regions = two_region_fixture(8)
        sched = PruneSchedule(0.5, "count", 20)
        fits = fit_inr_levels(img, regions, sched, [0.5, 0.25], TINY)
        assert len(fits) == 2
        assert all(m.issubset(w) for m, w in zip(fits[1].masks, fits[0].masks))
        solo = fit_inr_levels(img, regions, sched, [0.5], TINY, independent=True)[0]
        assert isinstance(solo.params, list) and len(solo.params) == 2
        out = reconstruct(solo.params, solo.masks, regions, TINY.encoder)
        assert out.pixels.shape == (8, 8, 3)
