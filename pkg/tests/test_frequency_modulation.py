# test_frequency_modulation.py
from datetime import datetime

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from errors import CalendarError, ConfigError, DimensionError, DomainError
from frequency_modulation import (AdaptiveFrequencyModulation, beta_filter_eval, build_band_partition,
                                  inspect_region)
from spectral import TransformKind, radial_index


def make_module(height=6, width=6, channels=2, filters=3, **kwargs):
    return AdaptiveFrequencyModulation(height, width, channels, num_filters=filters,
                                       time_embed_dim=4, **kwargs).double()


def zero_(*tensors):
    with torch.no_grad():
        for t in tensors:
            t.zero_()


class TestBandPartition:
    def test_uniform_singletons(self):
        positions = np.linspace(0, 1, 10)
        partition = build_band_partition(10, 10, 1.0, positions)
        np.testing.assert_array_equal(partition.sizes, np.ones(10))
        np.testing.assert_array_equal(partition.modes, positions)

    def test_reference_region(self):
        idx = radial_index(10, 10, TransformKind.REAL)
        partition = build_band_partition(60, 10, 1.3, idx.normalized)
        assert partition.bin_count == 60
        assert np.all(np.diff(partition.sizes) >= 0) and partition.sizes.min() >= 1
        assert partition.sizes[0] == partition.sizes.min()
        assert np.all((partition.modes >= 0) & (partition.modes <= 1))

    def test_single_band_lower_median(self):
        positions = np.linspace(0, 1, 100)
        partition = build_band_partition(100, 1, 1.3, positions)
        np.testing.assert_array_equal(partition.sizes, [100])
        assert partition.modes[0] == positions[49]

    @pytest.mark.parametrize("bin_count", [60, 100, 257])
    @pytest.mark.parametrize("count", [1, 5, 10])
    def test_contiguous_exhaustive(self, bin_count, count):
        partition = build_band_partition(bin_count, count, 1.3)
        covered = [b for n in range(count) for b in partition.band(n)]
        assert covered == list(range(bin_count))
        assert int(partition.sizes.sum()) == bin_count
        assert np.all(np.diff(partition.sizes) >= 0) and partition.sizes.min() >= 1

    def test_steep_growth_keeps_every_band(self):
        partition = build_band_partition(12, 10, 3.0)
        assert partition.sizes.min() == 1 and int(partition.sizes.sum()) == 12

    def test_invalid(self):
        with pytest.raises(ConfigError):
            build_band_partition(5, 10, 1.3)
        with pytest.raises(ConfigError):
            build_band_partition(60, 10, 0.5)


class TestBetaFilter:
    def test_all_pass(self):
        x = np.linspace(0, 1, 101)
        for mode in (0.0, 0.3, 1.0):
            np.testing.assert_array_equal(beta_filter_eval(mode, 2.0, x), np.ones_like(x))

    @pytest.mark.parametrize("mode", [0.0, 0.1, 0.5, 0.77, 1.0])
    @pytest.mark.parametrize("kappa", [2.5, 10.0, 72.0])
    def test_peak_and_range(self, mode, kappa):
        assert beta_filter_eval(mode, kappa, mode) == pytest.approx(1.0, abs=1e-12)
        values = beta_filter_eval(mode, kappa, np.linspace(0, 1, 10_000))
        assert values.min() >= 0 and values.max() <= 1 + 1e-12

    def test_hand_value(self):
        assert beta_filter_eval(0.5, 4.0, 0.25) == pytest.approx(0.75, abs=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            beta_filter_eval(0.5, 1.9, 0.5)
        with pytest.raises(DomainError):
            beta_filter_eval(0.5, 3.0, 1.5)


class TestSpread:
    def test_zero_weights(self):
        module = make_module()
        zero_(module.spread.weight, module.spread.bias)
        spectrum = module.transform(torch.randn(2, 6, 6, 2, dtype=torch.float64))
        kappa = module.compute_spread(spectrum)
        torch.testing.assert_close(kappa, torch.full((2, 3), 37.0, dtype=torch.float64))

    def test_large_negative_bias_is_all_pass(self):
        module = make_module()
        with torch.no_grad():
            module.spread.bias.fill_(-1e4)
            module.spread.weight.zero_()
        kappa = module.compute_spread(module.transform(torch.randn(1, 6, 6, 2, dtype=torch.float64)))
        assert torch.allclose(kappa, torch.full_like(kappa, 2.0))

    def test_matches_scalar_path(self):
        module = make_module()
        regions = torch.randn(2, 6, 6, 2, dtype=torch.float64)
        spectrum = torch.fft.rfft2(regions, dim=(1, 2))
        kappa = module.compute_spread(spectrum)
        W, b = module.spread.weight.detach(), module.spread.bias.detach()
        for r in range(2):
            stacked = torch.cat([spectrum[r].real, spectrum[r].imag], dim=-1).reshape(-1, 4)
            logits = stacked.mean(dim=0) @ W.T + b
            expected = 2 + 70 * torch.sigmoid(logits)
            torch.testing.assert_close(kappa[r], expected)
        assert bool(((kappa > 2) & (kappa < 72)).all())


class TestFilters:
    def test_all_pass_copies(self):
        module = make_module()
        spectrum = module.transform(torch.randn(2, 6, 6, 2, dtype=torch.float64))
        filters = module.filter_bank(torch.full((2, 3), 2.0, dtype=torch.float64))
        filtered = module.apply_filters(spectrum, filters)
        for n in range(3):
            torch.testing.assert_close(filtered[:, n], spectrum)

    def test_zero_spectrum(self):
        module = make_module()
        spectrum = torch.zeros(1, 6, 4, 2, dtype=torch.complex128)
        filters = module.filter_bank(torch.full((1, 3), 9.0, dtype=torch.float64))
        assert not module.apply_filters(spectrum, filters).abs().any()

    def test_matches_loop_oracle(self):
        module = make_module()
        spectrum = module.transform(torch.randn(2, 6, 6, 2, dtype=torch.float64))
        filters = module.filter_bank(torch.rand(2, 3, dtype=torch.float64) * 20 + 2)
        filtered = module.apply_filters(spectrum, filters)
        for r in range(2):
            for n in range(3):
                for k in range(6):
                    for l in range(4):
                        for c in range(2):
                            expected = filters[r, n, k, l] * spectrum[r, k, l, c]
                            assert abs(complex(filtered[r, n, k, l, c]) - complex(expected)) < 1e-14

    def test_filter_bank_follows_eval(self):
        module = make_module()
        kappa = torch.tensor([[3.0, 8.0, 20.0]], dtype=torch.float64)
        bank = module.filter_bank(kappa)[0]
        positions = module.positions.numpy()
        for n in range(3):
            expected = beta_filter_eval(float(module.modes[n]), float(kappa[0, n]), positions)
            np.testing.assert_allclose(bank[n].numpy(), expected, atol=1e-12)

    def test_shape_mismatch(self):
        module = make_module()
        spectrum = torch.zeros(1, 6, 4, 2, dtype=torch.complex128)
        with pytest.raises(DimensionError):
            module.apply_filters(spectrum, torch.ones(1, 3, 5, 4, dtype=torch.float64))


class TestBandWeights:
    def test_uniform_when_paths_are_zero(self):
        module = make_module()
        zero_(module.spatial.weight, module.spatial.bias, module.temporal.weight,
              module.temporal.bias, module.fusion.bias)
        weights = module.band_weights(torch.randn(2, 6, 6, 2, dtype=torch.float64), 6, 15, 12)
        torch.testing.assert_close(weights, torch.full((2, 3, 2), 1 / 3, dtype=torch.float64))

    def test_probability_vectors(self):
        module = make_module()
        weights = module.band_weights(torch.randn(4, 6, 6, 2, dtype=torch.float64),
                                      torch.tensor([1, 2, 3, 12]), 31, torch.tensor([0, 5, 12, 23]))
        assert bool((weights >= 0).all())
        torch.testing.assert_close(weights.sum(dim=1), torch.ones(4, 2, dtype=torch.float64))

    def test_matches_straight_line_composition(self):
        module = make_module()
        raw = torch.randn(1, 6, 6, 2, dtype=torch.float64)
        weights = module.band_weights(raw, 3, 9, 4)[0]

        conv = F.conv2d(raw[0].permute(2, 0, 1)[None], module.spatial.weight, module.spatial.bias, padding=1)
        spatial = conv[0].mean(dim=(1, 2)).reshape(3, 2)
        embedded = module.month_embed.weight[2] + module.day_embed.weight[8] + module.hour_embed.weight[4]
        temporal = embedded @ module.temporal.weight.T + module.temporal.bias
        expected = torch.empty(3, 2, dtype=torch.float64)
        for c in range(2):
            stacked = torch.cat([spatial[:, c], temporal])
            expected[:, c] = torch.softmax(stacked @ module.fusion.weight.T + module.fusion.bias, dim=0)
        torch.testing.assert_close(weights, expected)

    def test_calendar_range(self):
        module = make_module()
        raw = torch.randn(1, 6, 6, 2, dtype=torch.float64)
        with pytest.raises(CalendarError):
            module.band_weights(raw, 13, 1, 0)
        with pytest.raises(CalendarError):
            module.band_weights(raw, 1, 1, 24)


class TestAggregate:
    def test_uniform_all_pass_identity(self):
        module = make_module()
        spectrum = module.transform(torch.randn(2, 6, 6, 2, dtype=torch.float64))
        filtered = module.apply_filters(spectrum, module.filter_bank(torch.full((2, 3), 2.0, dtype=torch.float64)))
        mixed = module.aggregate_bands(filtered, torch.full((2, 3, 2), 1 / 3, dtype=torch.float64))
        torch.testing.assert_close(mixed, spectrum)

    def test_selector(self):
        filtered = torch.randn(1, 3, 4, 3, 2, dtype=torch.complex128)
        weights = torch.zeros(1, 3, 2, dtype=torch.float64)
        weights[:, 1] = 1.0
        torch.testing.assert_close(AdaptiveFrequencyModulation.aggregate_bands(filtered, weights), filtered[:, 1])

    def test_matches_loop_oracle(self):
        filtered = torch.randn(1, 3, 4, 3, 2, dtype=torch.complex128)
        weights = torch.softmax(torch.randn(1, 3, 2, dtype=torch.float64), dim=1)
        mixed = AdaptiveFrequencyModulation.aggregate_bands(filtered, weights)
        for k in range(4):
            for l in range(3):
                for c in range(2):
                    expected = sum(weights[0, n, c] * filtered[0, n, k, l, c] for n in range(3))
                    assert abs(complex(mixed[0, k, l, c]) - complex(expected)) < 1e-12

    def test_linear_in_spectrum(self):
        module = make_module()
        filters = module.filter_bank(torch.rand(1, 3, dtype=torch.float64) * 30 + 2)
        weights = torch.softmax(torch.randn(1, 3, 2, dtype=torch.float64), dim=1)
        f = torch.randn(1, 6, 4, 2, dtype=torch.complex128)
        g = torch.randn(1, 6, 4, 2, dtype=torch.complex128)

        def out(spectrum):
            return module.aggregate_bands(module.apply_filters(spectrum, filters), weights)

        torch.testing.assert_close(out(2.0 * f - 0.5 * g), 2.0 * out(f) - 0.5 * out(g))


class TestForward:
    def test_identity_configuration(self):
        module = make_module()
        zero_(module.ffn[2].weight, module.ffn[2].bias)
        regions = torch.randn(3, 6, 6, 2, dtype=torch.float64)
        out = module(regions, regions, 7, 4, 10,
                     kappa=torch.full((3,), 2.0, dtype=torch.float64),
                     band_weights=torch.full((3, 2), 1 / 3, dtype=torch.float64))
        assert (out - regions).abs().max() < 1e-9

    def test_zero_input_zero_output(self):
        module = make_module()
        zero_(module.ffn[0].bias, module.ffn[2].bias, module.norm.bias)
        zeros = torch.zeros(2, 6, 6, 2, dtype=torch.float64)
        out = module(zeros, zeros, 1, 1, 0)
        assert out.abs().max() < 1e-12

    def test_shape_and_finite(self):
        module = make_module(10, 10, 3, filters=10)
        regions = torch.randn(4, 10, 10, 3, dtype=torch.float64)
        out = module(regions, regions, 12, 31, 23)
        assert out.shape == regions.shape and bool(torch.isfinite(out).all())

    def test_rejects_wrong_region_shape(self):
        module = make_module()
        with pytest.raises(DimensionError):
            module(torch.zeros(1, 5, 6, 2, dtype=torch.float64), torch.zeros(1, 5, 6, 2, dtype=torch.float64), 1, 1, 0)

    def test_rejects_small_kappa(self):
        module = make_module()
        regions = torch.zeros(1, 6, 6, 2, dtype=torch.float64)
        with pytest.raises(DomainError):
            module(regions, regions, 1, 1, 0, kappa=torch.full((3,), 1.5, dtype=torch.float64))


def test_inspect_region(rng):
    module = make_module(10, 10, 2, filters=4)
    region = rng.normal(size=(10, 10, 2))
    result = inspect_region(module, region, region, datetime(2022, 7, 3, 14))
    assert np.array(result["filters"]).shape == (4, 256)
    assert len(result["frequencies"]) == 256
    assert sum(result["partition"]["sizes"]) == 60
    kappa = np.array(result["kappa"])
    assert np.all((kappa > 2) & (kappa < 72))
    weights = np.array(result["band_weights"])
    np.testing.assert_allclose(weights.sum(axis=0), np.ones(2))
    assert len(result["band_weight_hfa"]) == 2
    assert all(0 <= v <= 1 for v in result["band_weight_hfa"])
