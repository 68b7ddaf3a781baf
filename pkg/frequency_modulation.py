# frequency_modulation.py
"""Region-adaptive Beta filter banks over the spectrum of each region."""
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from errors import CalendarError, ConfigError, DimensionError, DomainError
from spectral import TransformKind, hfa_of_weights, radial_index

logger = logging.getLogger(__name__)

CURVE_POINTS = 256


@dataclass
class BandPartition:
    """Contiguous groups of radially sorted bins, smallest band first."""

    count: int
    growth_rate: float
    sizes: np.ndarray
    modes: np.ndarray

    @property
    def bin_count(self):
        return int(self.sizes.sum())

    @property
    def starts(self):
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(int)

    def band(self, n):
        """Sorted-bin positions of band n."""
        start = int(self.starts[n])
        return range(start, start + int(self.sizes[n]))

    def to_dict(self):
        return {
            "count": self.count,
            "growth_rate": self.growth_rate,
            "sizes": self.sizes.tolist(),
            "modes": self.modes.tolist(),
        }


def band_sizes(bin_count, count, growth_rate):
    """
    Geometric band sizes scaled to cover bin_count exactly.

    Ideal sizes s * growth_rate**n are rounded by largest remainder (ties go
    to the higher band), every band keeps at least one bin.
    """
    ideal = growth_rate ** np.arange(count, dtype=np.float64)
    ideal *= bin_count / ideal.sum()
    sizes = np.maximum(np.floor(ideal).astype(int), 1)
    fractions = ideal - np.floor(ideal)
    ranked = sorted(range(count), key=lambda n: (-fractions[n], -n))
    deficit = bin_count - int(sizes.sum())
    step = 0
    while deficit > 0:
        sizes[ranked[step % count]] += 1
        deficit -= 1
        step += 1
    # Minimum-size bumps can overshoot; trim from the largest bands
    while deficit < 0:
        n = max((n for n in range(count) if sizes[n] > 1), key=lambda n: (sizes[n], n))
        sizes[n] -= 1
        deficit += 1
    return np.sort(sizes)


def build_band_partition(bin_count, count, growth_rate, positions=None):
    """
    Split bin_count radially sorted bins into count bands.

    Args:
        bin_count: Number of spectral bins (h * w_f)
        count: Number of filters N
        growth_rate: Geometric growth rate of band sizes
        positions: Normalized sorted radii of the bins; evenly spaced when omitted

    Returns:
        BandPartition: Sizes and per-band (lower) median modes
    """
    if count < 1:
        raise ConfigError(f"Filter count must be >= 1, got {count}")
    if bin_count < count:
        raise ConfigError(f"{bin_count} spectral bins cannot hold {count} bands")
    if growth_rate < 1:
        raise ConfigError(f"growth_rate must be >= 1, got {growth_rate}")
    if positions is None:
        positions = np.linspace(0.0, 1.0, bin_count) if bin_count > 1 else np.zeros(1)
    positions = np.asarray(positions, dtype=np.float64)
    if positions.size != bin_count:
        raise DimensionError(f"{positions.size} positions for {bin_count} bins")

    sizes = band_sizes(bin_count, count, growth_rate)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    modes = np.array([positions[start + (size - 1) // 2] for start, size in zip(starts, sizes)])
    return BandPartition(count, float(growth_rate), sizes, modes)


def _safe_pow(base, exponent):
    """base ** exponent with 0 ** 0 = 1 and zero value/gradient at base 0."""
    positive = base > 0
    safe_base = torch.where(positive, base, torch.ones_like(base))
    zero_case = (exponent == 0).to(exponent.dtype)
    return torch.where(positive, safe_base ** exponent, zero_case)


def beta_filter(modes, kappa, x):
    """
    Normalized Beta curves peaking at 1 on their mode.

    Args:
        modes: (N,) modes in [0, 1]
        kappa: (..., N) spreads >= 2
        x: (P,) normalized frequencies in [0, 1]

    Returns:
        torch.Tensor: (..., N, P) filter values in [0, 1]
    """
    alpha_m1 = (modes * (kappa - 2))[..., None]
    beta_m1 = ((1 - modes) * (kappa - 2))[..., None]
    numerator = _safe_pow(x, alpha_m1) * _safe_pow(1 - x, beta_m1)
    peak = _safe_pow(modes[..., None].expand_as(alpha_m1), alpha_m1) * \
        _safe_pow((1 - modes)[..., None].expand_as(beta_m1), beta_m1)
    return numerator / peak


def beta_filter_eval(mode, kappa, x):
    """
    Evaluate one Beta filter.

    Args:
        mode: Mode in [0, 1]
        kappa: Spread, at least 2
        x: Scalar or array of normalized frequencies in [0, 1]

    Returns:
        np.ndarray: Filter weights, same shape as x
    """
    if kappa < 2:
        raise DomainError(f"kappa must be >= 2, got {kappa}")
    if not 0 <= mode <= 1:
        raise DomainError(f"mode must lie in [0, 1], got {mode}")
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < 0) | (x > 1)):
        raise DomainError("Normalized frequencies must lie in [0, 1]")
    values = beta_filter(
        torch.tensor([float(mode)], dtype=torch.float64),
        torch.tensor([float(kappa)], dtype=torch.float64),
        torch.as_tensor(x.reshape(-1)),
    )
    return values[0].numpy().reshape(x.shape)


def time_indices(month, day, hour, count, device=None):
    """Validate calendar fields and broadcast them to (count,) index tensors."""
    fields = []
    for name, value, low, high in (("month", month, 1, 12), ("day", day, 1, 31), ("hour", hour, 0, 23)):
        tensor = torch.as_tensor(value, dtype=torch.long, device=device).reshape(-1)
        if tensor.numel() and (tensor.min() < low or tensor.max() > high):
            raise CalendarError(f"{name} outside {low}-{high}: {tensor.tolist()}")
        if tensor.numel() == 1:
            tensor = tensor.expand(count)
        elif tensor.numel() != count:
            raise DimensionError(f"{tensor.numel()} {name} values for {count} regions")
        fields.append(tensor)
    return fields


class AdaptiveFrequencyModulation(nn.Module):
    """
    Frequency modulation of a batch of regions.

    Regions are (R, a_h, a_w, C). Each region's spectrum is copied through N
    Beta filters whose spreads come from the spectrum itself, and the copies
    are mixed with per-channel band weights computed from the raw region and
    its timestamp. A pre-norm FFN residual follows the inverse transform.
    """

    def __init__(self, region_height, region_width, channels, num_filters=10,
                 growth_rate=1.3, max_kappa=70.0, time_embed_dim=72):
        super().__init__()
        self.region_height = region_height
        self.region_width = region_width
        self.channels = channels
        self.num_filters = num_filters
        self.max_kappa = float(max_kappa)

        idx = radial_index(region_height, region_width, TransformKind.REAL)
        self.partition = build_band_partition(idx.bin_count, num_filters, growth_rate, idx.normalized)
        self.register_buffer("modes", torch.as_tensor(self.partition.modes))
        self.register_buffer(
            "positions",
            torch.as_tensor(idx.normalized_by_bin).reshape(region_height, idx.stored_width),
        )

        self.spread = nn.Linear(2 * channels, num_filters)
        self.spatial = nn.Conv2d(channels, num_filters * channels, kernel_size=3, padding=1)
        self.month_embed = nn.Embedding(12, time_embed_dim)
        self.day_embed = nn.Embedding(31, time_embed_dim)
        self.hour_embed = nn.Embedding(24, time_embed_dim)
        self.temporal = nn.Linear(time_embed_dim, num_filters)
        self.fusion = nn.Linear(2 * num_filters, num_filters)
        self.norm = nn.LayerNorm(channels, eps=1e-5)
        self.ffn = nn.Sequential(
            nn.Linear(channels, 4 * channels),
            nn.GELU(),
            nn.Linear(4 * channels, channels),
        )
        logger.debug(f"AFM over {idx.bin_count} radial bins, band sizes {self.partition.sizes.tolist()}")

    def _check(self, regions):
        expected = (self.region_height, self.region_width, self.channels)
        if regions.dim() != 4 or tuple(regions.shape[1:]) != expected:
            raise DimensionError(f"Expected regions of shape (R, {expected}), got {tuple(regions.shape)}")

    def transform(self, regions):
        """Real-input spectrum of each region: (R, a_h, w_f, C) complex."""
        return torch.fft.rfft2(regions, dim=(1, 2))

    def compute_spread(self, spectrum):
        """kappa = 2 + MAX * sigmoid(mean over bins of [R:I] W + b), shape (R, N)."""
        stacked = torch.cat([spectrum.real, spectrum.imag], dim=-1)
        logits = self.spread(stacked).mean(dim=(1, 2))
        return 2 + self.max_kappa * torch.sigmoid(logits)

    def filter_bank(self, kappa):
        """Filter weights at every stored bin: (R, N, a_h, w_f)."""
        flat = self.positions.reshape(-1)
        values = beta_filter(self.modes, kappa, flat)
        return values.reshape(*kappa.shape, *self.positions.shape)

    @staticmethod
    def apply_filters(spectrum, filters):
        """Scale the spectrum by every filter: (R, N, a_h, w_f, C)."""
        if filters.shape[-2:] != spectrum.shape[1:3] or filters.shape[0] != spectrum.shape[0]:
            raise DimensionError(
                f"Filters {tuple(filters.shape)} do not match spectrum {tuple(spectrum.shape)}"
            )
        return filters[..., None] * spectrum[:, None]

    def band_weights(self, raw_regions, month, day, hour):
        """
        Spatiotemporal band weights, softmax-normalized over the bands.

        Args:
            raw_regions: (R, a_h, a_w, C) regions before augmentation
            month: 1-12, scalar or (R,)
            day: 1-31, scalar or (R,)
            hour: 0-23, scalar or (R,)

        Returns:
            torch.Tensor: (R, N, C) non-negative weights summing to 1 over N
        """
        count = raw_regions.shape[0]
        months, days, hours = time_indices(month, day, hour, count, raw_regions.device)
        spatial = self.spatial(raw_regions.permute(0, 3, 1, 2)).mean(dim=(-2, -1))
        spatial = spatial.reshape(count, self.num_filters, self.channels)
        embedded = self.month_embed(months - 1) + self.day_embed(days - 1) + self.hour_embed(hours)
        temporal = self.temporal(embedded)[..., None].expand(-1, -1, self.channels)
        fused = torch.cat([spatial, temporal], dim=1)
        logits = self.fusion(fused.transpose(1, 2)).transpose(1, 2)
        return torch.softmax(logits, dim=1)

    @staticmethod
    def aggregate_bands(filtered, weights):
        """Weighted sum of the filtered copies: (R, a_h, w_f, C)."""
        return (filtered * weights[:, :, None, None, :]).sum(dim=1)

    def forward(self, regions, raw_regions, month, day, hour, kappa=None, band_weights=None):
        """
        Modulate a batch of regions.

        Args:
            regions: (R, a_h, a_w, C) regions to modulate
            raw_regions: (R, a_h, a_w, C) regions the band weights are read from
            month: Calendar month(s) of the regions
            day: Day(s) of month
            hour: Hour(s) of day
            kappa: Optional (R, N) spreads replacing the computed ones
            band_weights: Optional (R, N, C) weights replacing the computed ones

        Returns:
            torch.Tensor: (R, a_h, a_w, C) modulated regions
        """
        self._check(regions)
        self._check(raw_regions)
        spectrum = self.transform(regions)
        if kappa is None:
            kappa = self.compute_spread(spectrum)
        else:
            if torch.any(kappa < 2):
                raise DomainError("kappa must be >= 2")
            kappa = kappa.expand(regions.shape[0], self.num_filters)
        filtered = self.apply_filters(spectrum, self.filter_bank(kappa))
        if band_weights is None:
            band_weights = self.band_weights(raw_regions, month, day, hour)
        else:
            band_weights = band_weights.expand(regions.shape[0], self.num_filters, self.channels)
        mixed = self.aggregate_bands(filtered, band_weights)
        modulated = torch.fft.irfft2(mixed, s=(self.region_height, self.region_width), dim=(1, 2))
        return modulated + self.ffn(self.norm(modulated))


@torch.no_grad()
def inspect_region(module, region, raw_region, timestamp):
    """
    Filter curves, band partition, spreads and band weights of one region.

    Args:
        module: AdaptiveFrequencyModulation
        region: (a_h, a_w, C) region as the module sees it
        raw_region: (a_h, a_w, C) region the band weights are read from
        timestamp: datetime of the region

    Returns:
        dict: JSON-ready description for plotting
    """
    dtype = module.modes.dtype
    region = torch.as_tensor(np.asarray(region), dtype=dtype)[None]
    raw_region = torch.as_tensor(np.asarray(raw_region), dtype=dtype)[None]
    kappa = module.compute_spread(module.transform(region))
    grid = torch.linspace(0, 1, CURVE_POINTS, dtype=dtype)
    curves = beta_filter(module.modes, kappa, grid)[0]
    weights = module.band_weights(raw_region, timestamp.month, timestamp.day, timestamp.hour)[0]
    return {
        "timestamp": timestamp.isoformat(),
        "partition": module.partition.to_dict(),
        "frequencies": grid.tolist(),
        "filters": curves.tolist(),
        "kappa": kappa[0].tolist(),
        "band_weights": weights.tolist(),
        "band_weight_hfa": hfa_of_weights(weights.numpy()).tolist(),
    }
