# model.py
"""End-to-end forecaster: EPA -> AFM per region, region merge, transformer backbone."""
import logging
from dataclasses import dataclass, replace
from datetime import timedelta

import numpy as np
import torch
import torch.nn as nn

from backbone import Backbone
from errors import DegenerateVariable, DimensionError, EmptyCorpus, StructureError
from event_memory import EventPriorAugmentation
from frequency_modulation import AdaptiveFrequencyModulation
from grid_core import join_blocks, split_blocks

logger = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class NormalizationStats:
    """Per-variable mean and standard deviation over the fit period."""

    mean: np.ndarray
    std: np.ndarray
    variables: tuple = ()
    period: tuple = ("", "")
    count: int = 0

    def to_dict(self):
        return {
            "mean": np.asarray(self.mean).tolist(),
            "std": np.asarray(self.std).tolist(),
            "variables": list(self.variables),
            "period": list(self.period),
            "count": self.count,
        }

    @classmethod
    def from_dict(cls, values):
        return cls(
            np.asarray(values["mean"], dtype=np.float64),
            np.asarray(values["std"], dtype=np.float64),
            tuple(values.get("variables", ())),
            tuple(values.get("period", ("", ""))),
            int(values.get("count", 0)),
        )


def fit_normalization(grids):
    """
    Two-pass per-variable mean and (population) standard deviation.

    Args:
        grids: Sequence of WeatherGrid from the training period

    Returns:
        NormalizationStats: Statistics over all cells and timesteps
    """
    grids = list(grids)
    if not grids:
        raise EmptyCorpus("Normalization needs at least one grid")
    stacked = np.stack([g.values for g in grids])
    mean = stacked.mean(axis=(0, 1, 2))
    std = np.sqrt(((stacked - mean) ** 2).mean(axis=(0, 1, 2)))
    for c, value in enumerate(std):
        if not value > 0:
            raise DegenerateVariable(c, grids[0].variables[c])
    period = (grids[0].timestamp.isoformat(), grids[-1].timestamp.isoformat())
    logger.info(f"Fitted normalization over {len(grids)} grids ({period[0]} to {period[1]})")
    return NormalizationStats(mean, std, grids[0].variables, period, len(grids))


def normalize(grid, stats):
    """(x - mean_c) / std_c."""
    if grid.channels != len(stats.mean):
        raise DimensionError(f"Grid has {grid.channels} channels, stats cover {len(stats.mean)}")
    return grid.with_values((grid.values - stats.mean) / stats.std, normalized=True)


def denormalize(grid, stats):
    """Inverse of normalize."""
    if grid.channels != len(stats.mean):
        raise DimensionError(f"Grid has {grid.channels} channels, stats cover {len(stats.mean)}")
    return grid.with_values(grid.values * stats.std + stats.mean, normalized=False)


def l1_loss(pred, target):
    """Mean absolute difference over every cell and channel."""
    if pred.shape != target.shape:
        raise DimensionError(f"Prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    return (pred - target).abs().mean()


def time_features(timestamps):
    """(month, day, hour) long tensors of a list of datetimes."""
    return tuple(
        torch.tensor([getattr(ts, name) for ts in timestamps], dtype=torch.long)
        for name in ("month", "day", "hour")
    )


class ExtremeCastModel(nn.Module):
    """Region-wise memory augmentation and frequency modulation ahead of a windowed transformer."""

    def __init__(self, config, channels):
        super().__init__()
        self.config = config
        self.channels = channels
        self.region_height = config.region_height
        self.region_width = config.region_width
        self.epa = EventPriorAugmentation(channels) if config.use_epa else None
        self.afm = AdaptiveFrequencyModulation(
            config.region_height, config.region_width, channels,
            num_filters=config.num_filters,
            growth_rate=config.growth_rate,
            max_kappa=config.max_kappa,
            time_embed_dim=config.time_embed_dim,
        ) if config.use_afm else None
        self.backbone = Backbone(
            channels,
            embed_dim=config.embed_dim,
            depth=config.depth,
            num_heads=config.num_heads,
            window_size=config.window_size,
            patch_size=(config.patch_height, config.patch_width),
        )
        self.register_buffer("memory_entries", None, persistent=False)
        self.register_buffer("memory_mask", None, persistent=False)

    def set_memory(self, pool):
        """Attach a MemoryPool; its entries follow the model's dtype."""
        if pool is None:
            self.memory_entries = None
            self.memory_mask = None
            return
        expected = (self.region_height, self.region_width, self.channels)
        if tuple(pool.region_shape) != expected:
            raise StructureError(f"Pool regions {tuple(pool.region_shape)} differ from model regions {expected}")
        dtype = next(self.parameters()).dtype
        self.memory_entries = torch.as_tensor(pool.entries, dtype=dtype)
        self.memory_mask = torch.as_tensor(pool.mask, dtype=torch.bool)

    def forward(self, x, month, day, hour):
        """
        Predict the next-hour state of a batch of normalized grids.

        Args:
            x: (B, H, W, C) tensor
            month: (B,) calendar months
            day: (B,) days of month
            hour: (B,) hours of day

        Returns:
            torch.Tensor: (B, H, W, C) prediction
        """
        batch, height, width, channels = x.shape
        if height % self.region_height or width % self.region_width:
            raise DimensionError(
                f"Grid {height} x {width} is not tiled by {self.region_height} x {self.region_width} regions"
            )
        if self.epa is not None or self.afm is not None:
            rows, cols = height // self.region_height, width // self.region_width
            raw = split_blocks(x, self.region_height, self.region_width)
            count = raw.shape[1]
            raw = raw.reshape(batch * count, self.region_height, self.region_width, channels)
            regions = raw
            if self.epa is not None:
                if self.memory_entries is None:
                    raise StructureError("Event prior augmentation is enabled but no memory pool is attached")
                regions = self.epa(regions, self.memory_entries, self.memory_mask)
            if self.afm is not None:
                regions = self.afm(
                    regions, raw,
                    torch.as_tensor(month).repeat_interleave(count),
                    torch.as_tensor(day).repeat_interleave(count),
                    torch.as_tensor(hour).repeat_interleave(count),
                )
            regions = regions.reshape(batch, count, self.region_height, self.region_width, channels)
            x = join_blocks(regions, rows, cols)
        return self.backbone(x)


def build_model(config, channels, pool=None):
    """
    Seeded construction of the forecaster in the configured dtype.

    Args:
        config: TrainConfig
        channels: C
        pool: Optional MemoryPool, required when EPA is enabled

    Returns:
        ExtremeCastModel
    """
    torch.manual_seed(config.seed)
    model = ExtremeCastModel(config, channels).to(DTYPES[config.dtype])
    model.set_memory(pool)
    return model


@torch.no_grad()
def model_forward(model, grid):
    """
    Predict the next-hour grid from one normalized grid.

    Args:
        model: ExtremeCastModel with its memory attached
        grid: Normalized WeatherGrid

    Returns:
        WeatherGrid: Normalized prediction, same shape and metadata
    """
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(grid.values, dtype=dtype)[None]
    month, day, hour = time_features([grid.timestamp])
    pred = model(x, month, day, hour)[0]
    forecast = grid.with_values(pred.double().numpy())
    return replace(forecast, timestamp=grid.timestamp + timedelta(hours=1))
