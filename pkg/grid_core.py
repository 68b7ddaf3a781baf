# grid_core.py
"""Gridded weather states, region tiling, event records and extreme masks."""
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime

import numpy as np

from errors import BoundsError, CalendarError, DimensionError, DomainError, StructureError

logger = logging.getLogger(__name__)

DEFAULT_EVENT_TYPES = (
    "flood", "marine_thunderstorm_wind", "waterspout", "thunderstorm_wind",
    "funnel_cloud", "tornado", "wind", "hail", "flash_flood", "lightning",
    "heavy_rain", "cold", "marine_high_wind", "debris_flow", "dust_devil",
    "marine_hail", "heat", "marine_strong_wind",
)
NORMAL_TYPE = "normal"


def check_calendar(month, day, hour):
    """Raise CalendarError unless month 1-12, day 1-31 and hour 0-23."""
    if not 1 <= month <= 12:
        raise CalendarError(f"month {month} outside 1-12")
    if not 1 <= day <= 31:
        raise CalendarError(f"day {day} outside 1-31")
    if not 0 <= hour <= 23:
        raise CalendarError(f"hour {hour} outside 0-23")
    return month, day, hour


@dataclass(frozen=True)
class EventRegistry:
    """Ordered extreme event types; "normal" is appended as index M."""

    names: tuple = DEFAULT_EVENT_TYPES

    def __post_init__(self):
        if not self.names:
            raise DomainError("Event registry needs at least one extreme type")
        if len(set(self.names)) != len(self.names):
            raise DomainError("Event registry contains duplicate type names")
        if NORMAL_TYPE in self.names:
            raise DomainError(f"'{NORMAL_TYPE}' is reserved for the normal type")

    @property
    def num_extreme(self):
        return len(self.names)

    @property
    def num_types(self):
        """M' = M + 1, counting the normal type."""
        return len(self.names) + 1

    @property
    def normal_index(self):
        return len(self.names)

    @property
    def all_names(self):
        return tuple(self.names) + (NORMAL_TYPE,)

    def index(self, name):
        """
        Resolve a type name to its index.

        Args:
            name: Event type identifier

        Returns:
            int: Index in [0, M], M being the normal type
        """
        try:
            return self.all_names.index(name)
        except ValueError:
            raise DomainError(f"Unknown event type: {name!r}")

    @classmethod
    def first(cls, count):
        """Registry made of the first `count` default types."""
        if not 1 <= count <= len(DEFAULT_EVENT_TYPES):
            raise DomainError(f"Event type count must be in [1, {len(DEFAULT_EVENT_TYPES)}]")
        return cls(DEFAULT_EVENT_TYPES[:count])


@dataclass
class WeatherGrid:
    """One timestep of H x W x C gridded variables."""

    values: np.ndarray
    timestamp: datetime
    variables: tuple = ()
    lat_bounds: tuple = None
    lon_bounds: tuple = None
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DimensionError(f"Grid values must be H x W x C, got shape {self.values.shape}")
        if min(self.values.shape) < 1:
            raise DimensionError(f"Grid dimensions must be >= 1, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DimensionError("Grid values contain NaN or Inf")
        if not self.variables:
            self.variables = tuple(f"var{c}" for c in range(self.channels))
        self.variables = tuple(self.variables)
        if len(self.variables) != self.channels:
            raise DimensionError(
                f"{len(self.variables)} variable names for {self.channels} channels"
            )
        # Without declared bounds, coordinates are (row, col) positions
        if self.lat_bounds is None:
            self.lat_bounds = (0.0, float(self.height))
        if self.lon_bounds is None:
            self.lon_bounds = (0.0, float(self.width))
        self.lat_bounds = tuple(float(v) for v in self.lat_bounds)
        self.lon_bounds = tuple(float(v) for v in self.lon_bounds)
        if self.lat_bounds[0] >= self.lat_bounds[1] or self.lon_bounds[0] >= self.lon_bounds[1]:
            raise DimensionError("Geographic bounds must be increasing (min, max) pairs")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[2]

    @property
    def shape(self):
        return self.values.shape

    @property
    def month(self):
        return self.timestamp.month

    @property
    def day(self):
        return self.timestamp.day

    @property
    def hour(self):
        return self.timestamp.hour

    def with_values(self, values, normalized=None):
        """Copy of this grid carrying new values (same metadata)."""
        return replace(
            self,
            values=values,
            normalized=self.normalized if normalized is None else normalized,
        )


@dataclass
class RegionPartition:
    """Row-major tiling of a grid into a_h x a_w regions."""

    region_height: int
    region_width: int
    grid_height: int
    grid_width: int
    regions: np.ndarray
    template: WeatherGrid = field(default=None, repr=False)

    @property
    def rows(self):
        """H' = H / a_h."""
        return self.grid_height // self.region_height

    @property
    def cols(self):
        """W' = W / a_w."""
        return self.grid_width // self.region_width

    def __len__(self):
        return self.regions.shape[0]

    def bounds(self, r):
        """
        Cell ranges covered by region r.

        Returns:
            tuple: ((row_start, row_stop), (col_start, col_stop))
        """
        r_h, r_w = divmod(r, self.cols)
        return (
            (r_h * self.region_height, (r_h + 1) * self.region_height),
            (r_w * self.region_width, (r_w + 1) * self.region_width),
        )


@dataclass(frozen=True)
class EventRecord:
    """An extreme event: four (lat, lon) corners and its type names."""

    timestamp: datetime
    vertices: tuple
    type_names: tuple

    def __post_init__(self):
        vertices = tuple(tuple(float(c) for c in v) for v in self.vertices)
        if len(vertices) != 4 or any(len(v) != 2 for v in vertices):
            raise StructureError(f"An event needs exactly 4 (lat, lon) vertices, got {self.vertices}")
        if not self.type_names:
            raise StructureError("An event needs at least one type name")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "type_names", tuple(self.type_names))

    def lat_range(self):
        lats = [v[0] for v in self.vertices]
        return min(lats), max(lats)

    def lon_range(self):
        lons = [v[1] for v in self.vertices]
        return min(lons), max(lons)


def split_blocks(values, a_h, a_w):
    """
    Tile (..., H, W, C) into (..., H'W', a_h, a_w, C) in row-major region order.

    Works on numpy arrays and torch tensors alike.
    """
    *lead, height, width, channels = tuple(values.shape)
    rows, cols = height // a_h, width // a_w
    blocks = values.reshape(*lead, rows, a_h, cols, a_w, channels).swapaxes(-4, -3)
    return blocks.reshape(*lead, rows * cols, a_h, a_w, channels)


def join_blocks(blocks, rows, cols):
    """Inverse of split_blocks for a rows x cols region grid."""
    *lead, count, a_h, a_w, channels = tuple(blocks.shape)
    grid = blocks.reshape(*lead, rows, cols, a_h, a_w, channels).swapaxes(-4, -3)
    return grid.reshape(*lead, rows * a_h, cols * a_w, channels)


def partition_regions(grid, a_h, a_w):
    """
    Partition a grid into uniform regions.

    Args:
        grid: WeatherGrid to tile
        a_h: Region height in grid points
        a_w: Region width in grid points

    Returns:
        RegionPartition: H'W' regions of shape a_h x a_w x C, row-major
    """
    if a_h < 1 or grid.height % a_h:
        raise DimensionError(f"Region height {a_h} does not divide grid height {grid.height} (axis H)")
    if a_w < 1 or grid.width % a_w:
        raise DimensionError(f"Region width {a_w} does not divide grid width {grid.width} (axis W)")
    regions = split_blocks(grid.values, a_h, a_w).copy()
    return RegionPartition(a_h, a_w, grid.height, grid.width, regions, template=grid)


def merge_regions(partition):
    """
    Reassemble a full grid from its regions.

    Args:
        partition: RegionPartition produced by partition_regions

    Returns:
        WeatherGrid: Exact inverse of the partitioning
    """
    a_h, a_w = partition.region_height, partition.region_width
    if (a_h < 1 or a_w < 1 or partition.grid_height % a_h or partition.grid_width % a_w):
        raise StructureError("Region size does not tile the declared grid size")
    regions = np.asarray(partition.regions)
    expected = partition.rows * partition.cols
    if regions.ndim != 4 or regions.shape[0] != expected:
        raise StructureError(f"Expected {expected} regions, got array of shape {regions.shape}")
    if regions.shape[1:3] != (a_h, a_w):
        raise StructureError(f"Region shape {regions.shape[1:3]} differs from declared ({a_h}, {a_w})")
    values = join_blocks(regions, partition.rows, partition.cols)
    if partition.template is not None:
        return partition.template.with_values(values)
    return WeatherGrid(values, datetime(2000, 1, 1))


def _cell_range(low, high, bounds, cells):
    """Cell indices [start, stop] covered by the coordinate interval [low, high]."""
    lo_b, hi_b = bounds
    scale = cells / (hi_b - lo_b)
    start = int(math.floor((low - lo_b) * scale))
    stop = int(math.floor((high - lo_b) * scale))
    return max(0, min(start, cells - 1)), max(0, min(stop, cells - 1))


def rasterize_events(events, height, width, lat_bounds=None, lon_bounds=None):
    """
    Rasterize event boxes into a binary extreme mask.

    Each event covers the axis-aligned bounding box of its vertices, boundary
    cells included. Coordinates map affinely from the bounds to fractional
    cell positions (row from latitude, column from longitude) and floor to
    cell indices. Without bounds, vertices are already (row, col) positions.

    Args:
        events: Iterable of EventRecord
        height: Grid height H
        width: Grid width W
        lat_bounds: (min, max) latitude of the grid, default (0, H)
        lon_bounds: (min, max) longitude of the grid, default (0, W)

    Returns:
        np.ndarray: H x W boolean mask
    """
    lat_bounds = tuple(lat_bounds) if lat_bounds is not None else (0.0, float(height))
    lon_bounds = tuple(lon_bounds) if lon_bounds is not None else (0.0, float(width))
    mask = np.zeros((height, width), dtype=bool)
    for index, event in enumerate(events):
        lat_lo, lat_hi = event.lat_range()
        lon_lo, lon_hi = event.lon_range()
        if lat_lo < lat_bounds[0] or lat_hi > lat_bounds[1] or lon_lo < lon_bounds[0] or lon_hi > lon_bounds[1]:
            raise BoundsError(f"Event {index} has a vertex outside the grid bounds")
        r0, r1 = _cell_range(lat_lo, lat_hi, lat_bounds, height)
        c0, c1 = _cell_range(lon_lo, lon_hi, lon_bounds, width)
        mask[r0:r1 + 1, c0:c1 + 1] = True
    return mask


def type_masks(events, registry, height, width, lat_bounds=None, lon_bounds=None):
    """
    Per-type extreme masks.

    Returns:
        np.ndarray: M x H x W boolean stack, one mask per extreme type
    """
    masks = np.zeros((registry.num_extreme, height, width), dtype=bool)
    for event in events:
        box = rasterize_events([event], height, width, lat_bounds, lon_bounds)
        for name in event.type_names:
            m = registry.index(name)
            if m == registry.normal_index:
                raise DomainError(f"Events cannot carry the '{NORMAL_TYPE}' type")
            masks[m] |= box
    return masks


def region_labels(partition, mask, events, registry, lat_bounds=None, lon_bounds=None):
    """
    Multi-hot type vectors for every region.

    Args:
        partition: RegionPartition of the grid
        mask: H x W extreme mask of the same timestep
        events: EventRecord list the mask was built from
        registry: EventRegistry resolving type names
        lat_bounds: Grid latitude bounds (see rasterize_events)
        lon_bounds: Grid longitude bounds (see rasterize_events)

    Returns:
        np.ndarray: R x M' uint8 array; bit M marks normal-only regions
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (partition.grid_height, partition.grid_width):
        raise DimensionError(
            f"Mask shape {mask.shape} differs from grid "
            f"({partition.grid_height}, {partition.grid_width})"
        )
    if partition.template is not None:
        lat_bounds = lat_bounds or partition.template.lat_bounds
        lon_bounds = lon_bounds or partition.template.lon_bounds
    per_type = type_masks(events, registry, partition.grid_height, partition.grid_width,
                          lat_bounds, lon_bounds)
    hits = split_blocks(per_type[..., None], partition.region_height, partition.region_width)
    labels = np.zeros((len(partition), registry.num_types), dtype=np.uint8)
    labels[:, :registry.num_extreme] = hits.any(axis=(-3, -2, -1)).T
    labels[:, registry.normal_index] = ~labels[:, :registry.num_extreme].any(axis=1)
    region_mask = split_blocks(mask[..., None], partition.region_height, partition.region_width)
    stray = region_mask.any(axis=(1, 2, 3)) & labels[:, registry.normal_index].astype(bool)
    if stray.any():
        logger.warning(f"{int(stray.sum())} regions hold mask cells not covered by the given events")
    return labels
