# spectral.py
"""Fourier diagnostics: transforms, radial frequencies, energy ratios, HFA, KDE and W1."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

from errors import DegenerateSample, DegenerateSpectrum, DimensionError, DomainError, EmptySample
from grid_core import split_blocks

logger = logging.getLogger(__name__)

KDE_POINTS = 512


class TransformKind(str, Enum):
    FULL = "full"
    REAL = "real"


@dataclass
class Spectrum:
    """Complex spectrum of an h x w x C field, stored as real and imaginary parts."""

    real: np.ndarray
    imag: np.ndarray
    width: int
    kind: TransformKind = TransformKind.REAL

    @property
    def height(self):
        return self.real.shape[0]

    @property
    def channels(self):
        return self.real.shape[2]

    @property
    def shape(self):
        """Shape (h, w, C) of the field this spectrum came from."""
        return (self.height, self.width, self.channels)

    @property
    def stored_width(self):
        """w_f: w for the full transform, w // 2 + 1 for the real-input one."""
        return self.width if self.kind == TransformKind.FULL else self.width // 2 + 1

    def complex(self):
        return self.real + 1j * self.imag


@dataclass
class RadialFrequencyIndex:
    """Radial frequency of every stored bin and its ascending ordering."""

    height: int
    width: int
    kind: TransformKind
    radii: np.ndarray
    order: np.ndarray
    sorted_radii: np.ndarray
    normalized: np.ndarray

    @property
    def bin_count(self):
        return self.radii.size

    @property
    def stored_width(self):
        return self.width if self.kind == TransformKind.FULL else self.width // 2 + 1

    @property
    def normalized_by_bin(self):
        """Min-max normalized radius of each bin in flat (k * w_f + l) order."""
        lo, hi = self.radii.min(), self.radii.max()
        if hi <= lo:
            return np.zeros_like(self.radii)
        return (self.radii - lo) / (hi - lo)


def _as_field(region):
    region = np.asarray(region, dtype=np.float64)
    if region.ndim == 2:
        region = region[..., None]
    if region.ndim != 3:
        raise DimensionError(f"Expected an h x w x C field, got shape {region.shape}")
    return region


def forward_transform(region, kind=TransformKind.REAL):
    """
    Unnormalized 2D DFT over the two spatial axes, channel by channel.

    Args:
        region: h x w x C real array (h x w is promoted to one channel)
        kind: TransformKind.FULL or TransformKind.REAL

    Returns:
        Spectrum: R + iI with w_f stored columns
    """
    region = _as_field(region)
    kind = TransformKind(kind)
    if kind == TransformKind.FULL:
        spec = np.fft.fft2(region, axes=(0, 1))
    else:
        spec = np.fft.rfft2(region, axes=(0, 1))
    return Spectrum(spec.real.copy(), spec.imag.copy(), region.shape[1], kind)


def inverse_transform(spec):
    """
    Inverse 2D DFT carrying the 1/(hw) factor.

    Args:
        spec: Spectrum from forward_transform (or modified in place)

    Returns:
        np.ndarray: h x w x C real field
    """
    if spec.real.shape != spec.imag.shape or spec.real.ndim != 3:
        raise DimensionError(
            f"Real and imaginary parts disagree: {spec.real.shape} vs {spec.imag.shape}"
        )
    if spec.real.shape[1] != spec.stored_width:
        raise DimensionError(
            f"{spec.kind.value} spectrum of width {spec.width} needs {spec.stored_width} "
            f"columns, got {spec.real.shape[1]}"
        )
    values = spec.complex()
    if spec.kind == TransformKind.FULL:
        return np.fft.ifft2(values, axes=(0, 1)).real
    return np.fft.irfft2(values, s=(spec.height, spec.width), axes=(0, 1))


def hermitian_weights(width, kind):
    """Column multiplicities that make real-input energies sum like the full transform."""
    kind = TransformKind(kind)
    if kind == TransformKind.FULL:
        return np.ones(width)
    weights = np.full(width // 2 + 1, 2.0)
    weights[0] = 1.0
    if width % 2 == 0:
        weights[-1] = 1.0
    return weights


def spectral_energy(spec):
    """
    Per-bin, per-channel spectral energy R^2 + I^2.

    Real-input spectra weight every column that stands for a conjugate pair
    by 2, so totals match the full transform.

    Returns:
        np.ndarray: h x w_f x C non-negative energies
    """
    energy = spec.real ** 2 + spec.imag ** 2
    return energy * hermitian_weights(spec.width, spec.kind)[None, :, None]


def radial_index(height, width, kind=TransformKind.REAL):
    """
    Radial frequencies of the stored bins of an h x w transform.

    Row frequencies use the two-sided mapping min(k, h - k) / h; columns use
    min(l, w - l) / w for the full transform and l / w for the real-input one.
    The ordering is a stable ascending sort, so tied radii keep flat order.

    Args:
        height: h
        width: w (the spatial width, not the stored one)
        kind: TransformKind of the spectrum

    Returns:
        RadialFrequencyIndex: h * w_f bins
    """
    if height < 1 or width < 1:
        raise DimensionError(f"Transform dimensions must be >= 1, got ({height}, {width})")
    kind = TransformKind(kind)
    k = np.arange(height)
    lam_h = np.minimum(k, height - k) / height
    if kind == TransformKind.FULL:
        l = np.arange(width)
        lam_w = np.minimum(l, width - l) / width
    else:
        lam_w = np.arange(width // 2 + 1) / width
    radii = np.sqrt(lam_h[:, None] ** 2 + lam_w[None, :] ** 2).reshape(-1)
    order = np.argsort(radii, kind="stable")
    sorted_radii = radii[order]
    lo, hi = sorted_radii[0], sorted_radii[-1]
    if hi > lo:
        normalized = (sorted_radii - lo) / (hi - lo)
    else:
        normalized = np.zeros_like(sorted_radii)
    return RadialFrequencyIndex(height, width, kind, radii, order, sorted_radii, normalized)


def energy_ratio_curve(energy, idx, channel=0):
    """
    Cumulative share of energy over ascending radial frequency.

    Args:
        energy: h x w_f x C energies from spectral_energy
        idx: RadialFrequencyIndex of the same transform
        channel: Channel c

    Returns:
        np.ndarray: Length-B non-decreasing curve ending at exactly 1
    """
    flat = np.asarray(energy)[..., channel].reshape(-1)
    if flat.size != idx.bin_count:
        raise DimensionError(f"{flat.size} energies for an index of {idx.bin_count} bins")
    cumulative = np.cumsum(flat[idx.order])
    total = cumulative[-1]
    if not total > 0:
        raise DegenerateSpectrum(f"Channel {channel} carries no spectral energy")
    eta = np.minimum(cumulative / total, 1.0)
    eta[-1] = 1.0
    return eta


def _step_area(eta, positions):
    """Area above the right-continuous step curve eta over the given positions."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.size < 2 or positions[-1] <= positions[0]:
        return 0.0
    # Segment K spans [x_K, x_K+1) and carries the ratio of the first K+1 bins
    area = float(np.sum((1.0 - eta[:-1]) * np.diff(positions)))
    return min(max(area, 0.0), 1.0)


def high_frequency_area(eta, idx):
    """
    High-Frequency Area S_high of an energy ratio curve.

    Args:
        eta: Curve from energy_ratio_curve
        idx: RadialFrequencyIndex it was computed on

    Returns:
        float: S_high in [0, 1]; 0 for a single-bin index
    """
    eta = np.asarray(eta, dtype=np.float64)
    if eta.size != idx.bin_count:
        raise DimensionError(f"Curve of length {eta.size} for {idx.bin_count} bins")
    return _step_area(eta, idx.normalized)


def region_hfa(region, kind=TransformKind.REAL, idx=None):
    """
    Per-channel S_high of one region.

    Returns:
        np.ndarray: Length-C array of S_high values
    """
    spec = forward_transform(region, kind)
    if idx is None:
        idx = radial_index(spec.height, spec.width, spec.kind)
    energy = spectral_energy(spec)
    return np.array([
        high_frequency_area(energy_ratio_curve(energy, idx, c), idx)
        for c in range(spec.channels)
    ])


def hfa_of_weights(weights):
    """
    S_high of band aggregation weights.

    Band n sits at the midpoint (n + 0.5) / N of [0, 1]; weights act as the
    band energies.

    Args:
        weights: N x C non-negative weights, bands in ascending frequency

    Returns:
        np.ndarray: Length-C S_high values
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim == 1:
        weights = weights[:, None]
    if np.any(weights < 0):
        raise DomainError("Band weights must be non-negative")
    count = weights.shape[0]
    positions = (np.arange(count) + 0.5) / count
    result = []
    for c in range(weights.shape[1]):
        cumulative = np.cumsum(weights[:, c])
        if not cumulative[-1] > 0:
            raise DegenerateSpectrum(f"Channel {c} has all-zero band weights")
        eta = np.minimum(cumulative / cumulative[-1], 1.0)
        eta[-1] = 1.0
        result.append(_step_area(eta, positions))
    return np.array(result)


@dataclass
class KdeCurve:
    lattice: np.ndarray
    density: np.ndarray
    bandwidth: float


def scott_bandwidth(samples):
    """n^(-1/5) times the sample standard deviation."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size < 2:
        raise DegenerateSample(f"KDE needs at least 2 samples, got {samples.size}")
    spread = samples.std(ddof=1)
    if not spread > 0:
        raise DegenerateSample("Samples have zero variance; pass an explicit bandwidth")
    return samples.size ** (-1 / 5) * spread


def kde_1d(samples, bandwidth=None, lattice=None):
    """
    Gaussian kernel density estimate.

    Args:
        samples: 1-D sample values
        bandwidth: Kernel width; Scott's rule when omitted
        lattice: Evaluation points; 512 points over [min - 3bw, max + 3bw] when omitted

    Returns:
        KdeCurve: Lattice, density and the bandwidth used
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size < 2:
        raise DegenerateSample(f"KDE needs at least 2 samples, got {samples.size}")
    if bandwidth is None:
        bandwidth = scott_bandwidth(samples)
    if not bandwidth > 0:
        raise DomainError(f"Bandwidth must be positive, got {bandwidth}")
    if lattice is None:
        lattice = np.linspace(samples.min() - 3 * bandwidth, samples.max() + 3 * bandwidth, KDE_POINTS)
    lattice = np.asarray(lattice, dtype=np.float64)
    kernel = stats.norm.pdf((lattice[:, None] - samples[None, :]) / bandwidth)
    density = kernel.sum(axis=1) / (samples.size * bandwidth)
    return KdeCurve(lattice, density, float(bandwidth))


def wasserstein1(samples_a, samples_b):
    """
    1-D Wasserstein-1 distance between two equal-weight empirical measures.

    Returns:
        float: Distance >= 0
    """
    a = np.asarray(samples_a, dtype=np.float64).reshape(-1)
    b = np.asarray(samples_b, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise EmptySample("Wasserstein distance needs two non-empty sample sets")
    return float(stats.wasserstein_distance(a, b))


@dataclass
class HfaAnalysis:
    """Result of an HFA survey: per-row report plus distribution summary."""

    frame: pd.DataFrame
    summary: dict


def analyze_hfa(grids, masks, region_height, region_width, seed=0, threads=1,
                kind=TransformKind.REAL):
    """
    Label regions normal/extreme/random and measure their HFA.

    Args:
        grids: Sequence of WeatherGrid
        masks: Matching sequence of H x W extreme masks
        region_height: a_h
        region_width: a_w
        seed: Seed of the random-region sample
        threads: Worker threads over timesteps
        kind: Transform used for the HFA

    Returns:
        HfaAnalysis: hfa-report rows and the KDE / W1 summary
    """
    if len(grids) != len(masks):
        raise DimensionError(f"{len(grids)} grids but {len(masks)} masks")
    if not grids:
        raise EmptySample("No grids to analyze")
    idx = radial_index(region_height, region_width, kind)

    def process(t):
        grid, mask = grids[t], np.asarray(masks[t], dtype=bool)
        regions = split_blocks(grid.values, region_height, region_width)
        hit = split_blocks(mask[..., None], region_height, region_width).any(axis=(1, 2, 3))
        values = np.stack([region_hfa(region, kind, idx) for region in regions])
        return values, hit

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        results = list(tqdm(executor.map(process, range(len(grids))), total=len(grids),
                            desc="hfa", disable=not logger.isEnabledFor(logging.INFO)))

    rows = []
    means = {"normal": [], "extreme": []}
    pool = []
    for t, (values, hit) in enumerate(results):
        stamp = grids[t].timestamp.isoformat()
        for r in range(values.shape[0]):
            label = "extreme" if hit[r] else "normal"
            means[label].append(values[r].mean())
            pool.append((t, r))
            for c in range(values.shape[1]):
                rows.append((stamp, r, label, grids[t].variables[c], values[r, c]))

    rng = np.random.default_rng(seed)
    count = min(len(means["extreme"]), len(pool))
    picks = rng.choice(len(pool), size=count, replace=False) if count else []
    means["random"] = []
    for p in sorted(int(i) for i in picks):
        t, r = pool[p]
        values = results[t][0][r]
        means["random"].append(values.mean())
        for c in range(values.size):
            rows.append((grids[t].timestamp.isoformat(), r, "random", grids[t].variables[c], values[c]))

    frame = pd.DataFrame(rows, columns=["timestamp", "region_index", "label", "channel", "s_high"])
    summary = _distribution_summary({k: np.array(v) for k, v in means.items()})
    logger.info(
        f"HFA over {len(grids)} timesteps: {len(means['extreme'])} extreme, "
        f"{len(means['normal'])} normal regions"
    )
    return HfaAnalysis(frame, summary)


def _distribution_summary(groups):
    """KDE curves on a shared lattice plus W1 distances from the normal group."""
    usable = {k: v for k, v in groups.items() if v.size >= 2 and v.std(ddof=1) > 0}
    summary = {
        "mean_s_high": {k: (float(v.mean()) if v.size else None) for k, v in groups.items()},
        "counts": {k: int(v.size) for k, v in groups.items()},
        "lattice": [],
        "density": {},
        "w1_normal_extreme": None,
        "w1_normal_random": None,
    }
    if usable:
        bandwidth = max(scott_bandwidth(v) for v in usable.values())
        everything = np.concatenate(list(usable.values()))
        lattice = np.linspace(everything.min() - 3 * bandwidth, everything.max() + 3 * bandwidth, KDE_POINTS)
        summary["lattice"] = lattice.tolist()
        for name, values in usable.items():
            summary["density"][name] = kde_1d(values, lattice=lattice).density.tolist()
    if groups["normal"].size and groups["extreme"].size:
        summary["w1_normal_extreme"] = wasserstein1(groups["normal"], groups["extreme"])
    else:
        logger.warning("No extreme (or no normal) regions; W1 distances are undefined")
    if groups["normal"].size and groups["random"].size:
        summary["w1_normal_random"] = wasserstein1(groups["normal"], groups["random"])
    return summary
