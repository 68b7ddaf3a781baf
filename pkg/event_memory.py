# event_memory.py
"""Event prior memory: a typed pool of extreme-region patterns and two-level attention over it."""
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from threadpoolctl import threadpool_limits

from errors import DimensionError, EmptyCorpus, NoValidMemory
from grid_core import EventRegistry, partition_regions, rasterize_events, region_labels

logger = logging.getLogger(__name__)

KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-6


@dataclass
class MemoryPool:
    """
    Exactly U region-shaped entries per event type.

    entries is (M', U, a_h, a_w, C); mask marks the valid entries; provenance
    lists, per type and entry, the (timestep, region) pairs behind it.
    """

    entries: np.ndarray
    mask: np.ndarray
    registry: EventRegistry
    provenance: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.entries.ndim != 5:
            raise DimensionError(f"Pool entries must be (M', U, a_h, a_w, C), got {self.entries.shape}")
        if self.mask.shape != self.entries.shape[:2]:
            raise DimensionError(f"Mask {self.mask.shape} does not match entries {self.entries.shape[:2]}")
        if self.entries.shape[0] != self.registry.num_types:
            raise DimensionError(
                f"{self.entries.shape[0]} type slots for a registry of {self.registry.num_types} types"
            )
        if not self.provenance:
            self.provenance = [[[] for _ in range(self.capacity)] for _ in range(self.num_types)]

    @property
    def num_types(self):
        return self.entries.shape[0]

    @property
    def capacity(self):
        return self.entries.shape[1]

    @property
    def region_shape(self):
        return self.entries.shape[2:]

    @property
    def valid_types(self):
        return self.mask.any(axis=1)

    def slot(self, name):
        """Entries and mask of one event type."""
        m = self.registry.index(name)
        return self.entries[m], self.mask[m]

    def summary(self):
        """Per-type counts and value statistics of the valid entries."""
        result = {}
        for m, name in enumerate(self.registry.all_names):
            valid = self.entries[m][self.mask[m]]
            result[name] = {
                "valid": int(self.mask[m].sum()),
                "sources": int(sum(len(p) for p in self.provenance[m])),
                "mean": float(valid.mean()) if valid.size else None,
                "std": float(valid.std()) if valid.size else None,
            }
        return result


def kmeans_standardize(entries, capacity, seed=0):
    """
    Reduce or pad a list of regions to exactly `capacity` entries.

    Up to `capacity` regions pass through unchanged and are zero-padded; more
    are replaced by the k-means centroids of their flattened values.

    Args:
        entries: (n, a_h, a_w, C) array, n may be 0
        capacity: U
        seed: Seed of the k-means++ initialisation

    Returns:
        tuple: ((U, a_h, a_w, C) values, (U,) bool mask, list of member index lists)
    """
    entries = np.asarray(entries, dtype=np.float64)
    count = entries.shape[0]
    shape = entries.shape[1:]
    values = np.zeros((capacity,) + shape)
    mask = np.zeros(capacity, dtype=bool)
    if count <= capacity:
        values[:count] = entries
        mask[:count] = True
        members = [[i] for i in range(count)] + [[] for _ in range(capacity - count)]
        return values, mask, members

    flat = entries.reshape(count, -1)
    # Single-threaded BLAS keeps the centroids bit-reproducible
    with threadpool_limits(limits=1), warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        km = KMeans(
            n_clusters=capacity, init="k-means++", n_init=1,
            max_iter=KMEANS_MAX_ITER, tol=KMEANS_TOL,
            random_state=seed, algorithm="lloyd",
        ).fit(flat)
    values = km.cluster_centers_.reshape((capacity,) + shape)
    mask[:] = True
    members = [np.flatnonzero(km.labels_ == k).tolist() for k in range(capacity)]
    logger.debug(f"k-means reduced {count} regions to {capacity} centroids in {km.n_iter_} iterations")
    return values, mask, members


def build_memory_pool(samples, registry, region_height, region_width, capacity, seed=0):
    """
    Collect extreme regions per event type and standardize each slot.

    Every region touched by an event joins the slot of each of its types.
    Normal regions are sampled to match the number of extreme regions, so a
    corpus without events leaves every slot empty.

    Args:
        samples: Iterable of (WeatherGrid, list of EventRecord), in time order
        registry: EventRegistry covering all event types present
        region_height: a_h
        region_width: a_w
        capacity: U entries per type
        seed: Seed for the normal-region sample and k-means

    Returns:
        MemoryPool: Deterministic given the corpus and seed
    """
    slots = [[] for _ in range(registry.num_types)]
    normal = []
    extreme_count = 0
    timesteps = 0
    region_shape = None
    for t, (grid, events) in enumerate(samples):
        timesteps += 1
        partition = partition_regions(grid, region_height, region_width)
        region_shape = partition.regions.shape[1:]
        mask = rasterize_events(events, grid.height, grid.width, grid.lat_bounds, grid.lon_bounds)
        labels = region_labels(partition, mask, events, registry)
        for r in range(len(partition)):
            if labels[r, registry.normal_index]:
                normal.append((t, r, partition.regions[r]))
                continue
            extreme_count += 1
            for m in np.flatnonzero(labels[r, :registry.num_extreme]):
                slots[m].append((t, r, partition.regions[r]))
    if timesteps == 0:
        raise EmptyCorpus("Memory pool needs at least one training grid")

    rng = np.random.default_rng(seed)
    wanted = min(extreme_count, len(normal))
    if not extreme_count:
        logger.warning("No extreme regions in the memory corpus; the pool holds no valid entries")
    picks = np.sort(rng.choice(len(normal), size=wanted, replace=False)) if wanted else []
    slots[registry.normal_index] = [normal[i] for i in picks]

    entries, masks, provenance = [], [], []
    for m, slot in enumerate(slots):
        stacked = np.stack([s[2] for s in slot]) if slot else np.zeros((0,) + region_shape)
        values, valid, members = kmeans_standardize(stacked, capacity, seed)
        entries.append(values)
        masks.append(valid)
        provenance.append([[(slot[i][0], slot[i][1]) for i in group] for group in members])
        logger.debug(f"Slot {registry.all_names[m]}: {len(slot)} regions -> {int(valid.sum())} entries")

    logger.info(
        f"Built memory pool from {timesteps} grids: {extreme_count} extreme regions, "
        f"{len(slots[registry.normal_index])} sampled normal regions"
    )
    return MemoryPool(np.stack(entries), np.stack(masks), registry, provenance, seed)


class PooledDescriptor(nn.Module):
    """3x3 same-padded convolution followed by a global spatial mean."""

    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, kernel_size=3, padding=1)

    def forward(self, x):
        """(..., a_h, a_w, C) -> (..., C)"""
        *lead, height, width, channels = x.shape
        flat = x.reshape(-1, height, width, channels).permute(0, 3, 1, 2)
        pooled = self.conv(flat).mean(dim=(-2, -1))
        return pooled.reshape(*lead, channels)


def attention_fuse(query, keys, values, mask, allow_empty=False):
    """
    Masked scaled dot-product attention over region-shaped values.

    Shapes broadcast: query (..., C), keys (..., n, C), values
    (..., n, a_h, a_w, C), mask (..., n) bool.

    Args:
        allow_empty: Rows without a valid entry yield zeros instead of raising

    Returns:
        tuple: (fused (..., a_h, a_w, C), weights (..., n))
    """
    mask = torch.as_tensor(mask, dtype=torch.bool, device=keys.device)
    has_valid = mask.any(dim=-1)
    if not allow_empty and not bool(has_valid.all()):
        raise NoValidMemory("Every memory entry offered to attention is masked")
    scores = (keys * query[..., None, :]).sum(dim=-1) / math.sqrt(query.shape[-1])
    scores = scores.masked_fill(~mask, float("-inf"))
    scores = torch.where(has_valid[..., None], scores, torch.zeros_like(scores))
    weights = torch.softmax(scores, dim=-1)
    weights = torch.where(mask, weights, torch.zeros_like(weights))
    hidden = torch.where(mask[..., None, None, None], values, torch.zeros_like(values))
    fused = (weights[..., None, None, None] * hidden).sum(dim=-4)
    return fused, weights


class EventPriorAugmentation(nn.Module):
    """Intra-type then inter-type attention over a memory pool, plus a residual head."""

    def __init__(self, channels):
        super().__init__()
        self.channels = channels
        self.query = PooledDescriptor(channels)
        self.key = PooledDescriptor(channels)
        self.inter_query = PooledDescriptor(channels)
        self.inter_key = PooledDescriptor(channels)
        self.residual = nn.Linear(channels, channels)

    def forward(self, regions, entries, mask, return_weights=False):
        """
        Augment a batch of regions with the hybrid memory.

        Args:
            regions: (R, a_h, a_w, C)
            entries: (M', U, a_h, a_w, C) pool entries
            mask: (M', U) bool validity
            return_weights: Also return the (R, M') inter-type weights

        Returns:
            torch.Tensor: (R, a_h, a_w, C) augmented regions
        """
        if tuple(entries.shape[2:]) != tuple(regions.shape[1:]):
            raise DimensionError(
                f"Memory entries {tuple(entries.shape[2:])} do not match regions {tuple(regions.shape[1:])}"
            )
        mask = torch.as_tensor(mask, dtype=torch.bool, device=regions.device)
        valid_types = mask.any(dim=-1)
        if not bool(valid_types.any()):
            raise NoValidMemory("Memory pool holds no valid entries in any type")

        query = self.query(regions)
        keys = self.key(entries)
        per_type, _ = attention_fuse(query[:, None, :], keys, entries, mask, allow_empty=True)
        valid = valid_types.expand(regions.shape[0], -1)
        hybrid, weights = attention_fuse(self.inter_query(regions), self.inter_key(per_type), per_type, valid)
        augmented = self.residual(regions + hybrid)
        if return_weights:
            return augmented, weights
        return augmented


@torch.no_grad()
def inter_type_attention(module, regions, pool):
    """
    Inter-type attention weights of each region.

    Args:
        module: EventPriorAugmentation
        regions: (R, a_h, a_w, C) array
        pool: MemoryPool

    Returns:
        np.ndarray: (R, M') weights; invalid types get 0
    """
    dtype = module.residual.weight.dtype
    _, weights = module(
        torch.as_tensor(np.asarray(regions), dtype=dtype),
        torch.as_tensor(pool.entries, dtype=dtype),
        torch.as_tensor(pool.mask),
        return_weights=True,
    )
    return weights.numpy()
