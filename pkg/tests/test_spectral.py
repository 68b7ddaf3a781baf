# test_spectral.py
import math

import numpy as np
import pytest

from errors import DegenerateSample, DegenerateSpectrum, DimensionError, DomainError, EmptySample
from spectral import (Spectrum, TransformKind, analyze_hfa, energy_ratio_curve, forward_transform,
                      hfa_of_weights, high_frequency_area, inverse_transform, kde_1d, radial_index,
                      region_hfa, spectral_energy, wasserstein1)

FULL, REAL = TransformKind.FULL, TransformKind.REAL


def naive_dft(field):
    """Direct double sum of the unnormalized forward transform."""
    h, w, c = field.shape
    out = np.zeros((h, w, c), dtype=complex)
    for k in range(h):
        for l in range(w):
            for m in range(h):
                for n in range(w):
                    out[k, l] += field[m, n] * np.exp(-2j * np.pi * (k * m / h + l * n / w))
    return out


def step_sum(eta, positions):
    """Area above the step curve, accumulated segment by segment."""
    area = 0.0
    for K in range(len(positions) - 1):
        area += (1.0 - eta[K]) * (positions[K + 1] - positions[K])
    return area


class TestTransforms:
    def test_constant_field(self):
        spec = forward_transform(np.full((4, 4, 1), 2.5), FULL)
        assert spec.real[0, 0, 0] == pytest.approx(40.0)
        values = spec.complex()
        values[0, 0] = 0
        assert np.abs(values).max() < 1e-12

    def test_cosine_along_width(self):
        n = np.arange(8)
        field = np.tile(np.cos(2 * np.pi * 3 * n / 8), (4, 1))[..., None]
        energy = spectral_energy(forward_transform(field, FULL))[..., 0]
        nonzero = {tuple(i) for i in np.argwhere(energy > 1e-9)}
        assert nonzero == {(0, 3), (0, 5)}
        real_energy = spectral_energy(forward_transform(field, REAL))[..., 0]
        assert {tuple(i) for i in np.argwhere(real_energy > 1e-9)} == {(0, 3)}

    @pytest.mark.parametrize("kind", [FULL, REAL])
    def test_matches_naive_dft(self, rng, kind):
        for _ in range(10):
            h, w, c = rng.integers(4, 9), rng.integers(4, 9), rng.integers(1, 4)
            field = rng.normal(size=(h, w, c))
            oracle = naive_dft(field)
            spec = forward_transform(field, kind)
            stored = oracle if kind == FULL else oracle[:, : w // 2 + 1]
            assert np.abs(spec.complex() - stored).max() < 1e-9

    @pytest.mark.parametrize("kind", [FULL, REAL])
    def test_round_trip(self, kind):
        for seed in range(100):
            field = np.random.default_rng(seed).normal(size=(10, 10, 4))
            back = inverse_transform(forward_transform(field, kind))
            assert np.abs(back - field).max() < 1e-10

    @pytest.mark.parametrize("shape", [(4, 4, 1), (16, 12, 4), (7, 5, 2), (9, 10, 3)])
    def test_round_trip_odd_shapes(self, rng, shape):
        field = rng.normal(size=shape)
        assert np.abs(inverse_transform(forward_transform(field, REAL)) - field).max() < 1e-10

    def test_zero_spectrum(self):
        spec = Spectrum(np.zeros((4, 3, 2)), np.zeros((4, 3, 2)), 4, REAL)
        assert not inverse_transform(spec).any()

    def test_inverse_shape_mismatch(self):
        with pytest.raises(DimensionError):
            inverse_transform(Spectrum(np.zeros((4, 4, 1)), np.zeros((4, 4, 1)), 4, REAL))
        with pytest.raises(DimensionError):
            inverse_transform(Spectrum(np.zeros((4, 3, 1)), np.zeros((4, 2, 1)), 4, REAL))

    @pytest.mark.parametrize("kind", [FULL, REAL])
    def test_parseval(self, rng, kind):
        field = rng.normal(size=(10, 9, 3))
        energy = spectral_energy(forward_transform(field, kind)).sum()
        spatial = (field ** 2).sum()
        assert abs(spatial - energy / 90) / spatial < 1e-9


class TestEnergy:
    def test_constant_field(self):
        energy = spectral_energy(forward_transform(np.full((4, 4, 2), 3.0), REAL))
        assert energy[0, 0, 1] == pytest.approx(48.0 ** 2)
        assert energy.sum() == pytest.approx(48.0 ** 2 * 2)

    def test_pure_imaginary_bin(self):
        spec = Spectrum(np.zeros((1, 1, 1)), np.full((1, 1, 1), 3.0), 1, FULL)
        assert spectral_energy(spec)[0, 0, 0] == 9.0

    @pytest.mark.parametrize("width", [6, 7])
    def test_real_weighting_matches_full(self, rng, width):
        field = rng.normal(size=(5, width, 2))
        full = spectral_energy(forward_transform(field, FULL)).sum(axis=(0, 1))
        real = spectral_energy(forward_transform(field, REAL)).sum(axis=(0, 1))
        np.testing.assert_allclose(real, full, rtol=1e-12)


class TestRadialIndex:
    def test_two_by_two_full(self):
        idx = radial_index(2, 2, FULL)
        np.testing.assert_allclose(np.sort(idx.radii), [0, 0.5, 0.5, math.sqrt(0.5)])
        np.testing.assert_allclose(idx.normalized, [0, 1 / math.sqrt(2), 1 / math.sqrt(2), 1])

    def test_single_bin(self):
        idx = radial_index(1, 1, FULL)
        assert idx.bin_count == 1
        np.testing.assert_array_equal(idx.normalized, [0.0])

    def test_real_input_from_square_region(self):
        idx = radial_index(10, 10, REAL)
        assert idx.bin_count == 60 and idx.stored_width == 6
        assert idx.normalized[0] == 0 and idx.normalized[-1] == 1
        assert idx.order[0] == 0
        assert np.all(np.diff(idx.sorted_radii) >= 0)
        assert sorted(idx.order.tolist()) == list(range(60))
        # Largest radius: row 5 (Nyquist) and column 5
        assert idx.order[-1] == 5 * 6 + 5

    def test_stable_ties(self):
        idx = radial_index(4, 4, FULL)
        for a, b in zip(idx.order[:-1], idx.order[1:]):
            if idx.radii[a] == idx.radii[b]:
                assert a < b


class TestHfa:
    def test_ratio_curve_uniform(self):
        idx = radial_index(4, 4, FULL)
        eta = energy_ratio_curve(np.ones((4, 4, 1)), idx)
        np.testing.assert_allclose(eta, np.arange(1, 17) / 16)

    def test_ratio_curve_prefix_sum(self, rng):
        idx = radial_index(10, 10, REAL)
        energy = rng.random((10, 6, 2))
        eta = energy_ratio_curve(energy, idx, channel=1)
        flat = energy[..., 1].reshape(-1)[idx.order]
        np.testing.assert_allclose(eta, np.cumsum(flat) / flat.sum(), rtol=1e-12)
        assert eta[-1] == 1.0 and np.all(np.diff(eta) >= 0)

    def test_zero_energy(self):
        with pytest.raises(DegenerateSpectrum):
            energy_ratio_curve(np.zeros((4, 3, 1)), radial_index(4, 4, REAL))

    def test_dc_only(self):
        idx = radial_index(10, 10, REAL)
        energy = np.zeros((10, 6, 1))
        energy[0, 0, 0] = 5.0
        eta = energy_ratio_curve(energy, idx)
        assert np.all(eta == 1.0)
        assert high_frequency_area(eta, idx) == 0.0
        assert region_hfa(np.full((10, 10, 1), 3.0))[0] == pytest.approx(0.0, abs=1e-12)

    def test_last_bin_only(self):
        idx = radial_index(10, 10, REAL)
        energy = np.zeros(60)
        energy[idx.order[-1]] = 1.0
        eta = energy_ratio_curve(energy.reshape(10, 6, 1), idx)
        value = high_frequency_area(eta, idx)
        assert value == pytest.approx(step_sum(eta, idx.normalized), abs=1e-12)
        assert value == pytest.approx(1.0, abs=1e-12)

    def test_equal_energy(self):
        idx = radial_index(10, 10, REAL)
        eta = energy_ratio_curve(np.ones((10, 6, 1)), idx)
        assert high_frequency_area(eta, idx) == pytest.approx(step_sum(eta, idx.normalized), abs=1e-12)

    def test_single_bin_index(self):
        idx = radial_index(1, 1, FULL)
        assert high_frequency_area(np.ones(1), idx) == 0.0

    def test_range_on_random_spectra(self, rng):
        idx = radial_index(8, 8, REAL)
        for _ in range(1000):
            energy = rng.random((8, 5, 1)) ** rng.uniform(0.1, 6)
            value = high_frequency_area(energy_ratio_curve(energy, idx), idx)
            assert 0.0 <= value <= 1.0

    def test_full_and_real_agree(self, rng):
        for shape in ((10, 10, 2), (8, 6, 1), (9, 7, 3)):
            field = rng.normal(size=shape)
            np.testing.assert_allclose(region_hfa(field, FULL), region_hfa(field, REAL), rtol=1e-9)

    def test_high_frequency_noise_shifts_right(self, rng):
        rows, cols = np.indices((10, 10))
        smooth = np.cos(2 * np.pi * rows / 10)[..., None]
        noisy = smooth + 0.5 * np.where((rows + cols) % 2, -1.0, 1.0)[..., None]
        assert region_hfa(noisy)[0] > region_hfa(smooth)[0]


class TestHfaOfWeights:
    def test_first_band(self):
        np.testing.assert_array_equal(hfa_of_weights(np.array([[1.0], [0.0], [0.0], [0.0]])), [0.0])

    @pytest.mark.parametrize("count", [2, 5, 10])
    def test_uniform(self, count):
        weights = np.full((count, 2), 1 / count)
        eta = np.arange(1, count + 1) / count
        positions = (np.arange(count) + 0.5) / count
        np.testing.assert_allclose(hfa_of_weights(weights), [step_sum(eta, positions)] * 2, atol=1e-12)
        assert hfa_of_weights(weights)[0] == pytest.approx((count - 1) / (2 * count))

    def test_last_band_is_maximal(self):
        weights = np.zeros((10, 1))
        weights[-1] = 1.0
        assert hfa_of_weights(weights)[0] == pytest.approx(0.9)

    def test_negative(self):
        with pytest.raises(DomainError):
            hfa_of_weights(np.array([[0.5], [-0.1]]))


class TestKde:
    def test_equal_samples_explicit_bandwidth(self):
        curve = kde_1d(np.full(5, 2.0), bandwidth=0.1)
        peak = np.argmax(curve.density)
        assert curve.lattice[peak] == pytest.approx(2.0, abs=curve.lattice[1] - curve.lattice[0])
        np.testing.assert_allclose(curve.density, curve.density[::-1], rtol=1e-9)

    def test_integrates_to_one(self, rng):
        curve = kde_1d(rng.normal(size=200))
        assert len(curve.lattice) == 512
        integral = np.trapz(curve.density, curve.lattice)
        assert integral == pytest.approx(1.0, rel=0.02)
        assert np.all(curve.density >= 0)

    def test_bimodal(self, rng):
        samples = np.concatenate([rng.normal(-5, 0.3, 100), rng.normal(5, 0.3, 100)])
        curve = kde_1d(samples)
        step = curve.lattice[1] - curve.lattice[0]
        left = curve.lattice[np.argmax(np.where(curve.lattice < 0, curve.density, 0))]
        right = curve.lattice[np.argmax(np.where(curve.lattice > 0, curve.density, 0))]
        assert abs(left - samples[:100].mean()) < 0.2 + step
        assert abs(right - samples[100:].mean()) < 0.2 + step
        middle = curve.density[np.argmin(np.abs(curve.lattice))]
        assert middle < 0.1 * curve.density.max()

    def test_standard_normal(self):
        samples = np.random.default_rng(42).normal(size=10_000)
        curve = kde_1d(samples, lattice=np.array([0.0]))
        assert curve.density[0] == pytest.approx(1 / math.sqrt(2 * math.pi), rel=0.1)

    def test_degenerate(self):
        with pytest.raises(DegenerateSample):
            kde_1d([1.0])
        with pytest.raises(DegenerateSample):
            kde_1d([1.0, 1.0, 1.0])


class TestWasserstein:
    def test_identical(self, rng):
        a = rng.normal(size=50)
        assert wasserstein1(a, a) == 0.0

    def test_translation(self, rng):
        a = rng.normal(size=50)
        assert wasserstein1(a, a + 0.75) == pytest.approx(0.75)

    def test_same_empirical_cdf(self):
        assert wasserstein1([0, 1], [0, 0, 1, 1]) == pytest.approx(0.0, abs=1e-15)

    def test_symmetry_and_triangle(self, rng):
        for _ in range(20):
            a, b, c = rng.normal(size=30), rng.normal(1, 2, size=17), rng.exponential(size=40)
            assert wasserstein1(a, b) == pytest.approx(wasserstein1(b, a))
            assert wasserstein1(a, c) <= wasserstein1(a, b) + wasserstein1(b, c) + 1e-12

    def test_empty(self):
        with pytest.raises(EmptySample):
            wasserstein1([], [1.0])


class TestAnalyzeHfa:
    def test_report_and_summary(self, small_data):
        from storage import Dataset

        dataset = Dataset(small_data.grids, small_data.events, small_data.registry)
        analysis = analyze_hfa(small_data.grids, dataset.masks(), 10, 10, seed=1, threads=2)
        frame = analysis.frame
        assert list(frame.columns) == ["timestamp", "region_index", "label", "channel", "s_high"]
        assert set(frame["label"]) <= {"normal", "extreme", "random"}
        counts = analysis.summary["counts"]
        assert counts["normal"] + counts["extreme"] == 12 * 4
        assert counts["random"] == counts["extreme"]
        assert frame["s_high"].between(0, 1).all()

    def test_reproducible(self, small_data):
        from storage import Dataset

        masks = Dataset(small_data.grids, small_data.events, small_data.registry).masks()
        first = analyze_hfa(small_data.grids, masks, 10, 10, seed=5)
        second = analyze_hfa(small_data.grids, masks, 10, 10, seed=5, threads=3)
        assert first.frame.equals(second.frame)
        assert first.summary == second.summary

    def test_no_extremes(self, small_data):
        masks = [np.zeros((20, 20), dtype=bool)] * len(small_data.grids)
        summary = analyze_hfa(small_data.grids, masks, 10, 10).summary
        assert summary["w1_normal_extreme"] is None
        assert summary["counts"]["random"] == 0

    def test_mismatched_masks(self, small_data):
        with pytest.raises(DimensionError):
            analyze_hfa(small_data.grids, [], 10, 10)
