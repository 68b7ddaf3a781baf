# synthetic.py
"""Seeded synthetic weather: power-law smooth fields with typed, high-frequency event boxes."""
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta

import numpy as np

from errors import ConfigError
from grid_core import DEFAULT_EVENT_TYPES, EventRecord, EventRegistry, WeatherGrid

logger = logging.getLogger(__name__)

# name, offset, scale of the physical channels; extra channels get generic names
CHANNELS = (
    ("t2m", 288.0, 6.0),
    ("msl", 1013.0, 8.0),
    ("u10", 0.0, 4.0),
    ("v10", 0.0, 4.0),
    ("z500", 5600.0, 60.0),
    ("q850", 0.008, 0.003),
)
COMPOUND_PROBABILITY = 0.2
EVENT_DECAY = 0.7


@dataclass
class SyntheticSpec:
    """Generator settings; see DEFAULT_CONFIG["synthetic"]."""

    height: int = 60
    width: int = 60
    channels: int = 2
    timesteps: int = 50
    spectral_slope: float = 3.0
    events_per_step: int = 1
    box_min: int = 6
    box_max: int = 14
    hf_amplitude: float = 1.0
    hf_band: tuple = (0.3, 0.5)
    event_types: int = 3
    advection: tuple = (0, 1)
    persistence: float = 0.9
    event_lifetime: int = 2
    start: str = "2022-06-01T00:00:00"
    seed: int = 7

    def validate(self):
        """Raise ConfigError on infeasible settings."""
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise ConfigError("Grid dimensions and channel count must be positive")
        if self.timesteps < 2:
            raise ConfigError(f"Need at least 2 timesteps, got {self.timesteps}")
        if not 1 <= self.box_min <= self.box_max:
            raise ConfigError(f"Box sizes must satisfy 1 <= box_min <= box_max, got {self.box_min}, {self.box_max}")
        if self.box_max > min(self.height, self.width):
            raise ConfigError(f"box_max={self.box_max} does not fit a {self.height} x {self.width} grid")
        if self.events_per_step < 0:
            raise ConfigError("events_per_step must be non-negative")
        if self.hf_amplitude < 0:
            raise ConfigError("hf_amplitude must be non-negative")
        low, high = self.hf_band
        if not 0 <= low < high:
            raise ConfigError(f"hf_band must be an increasing pair of frequencies, got {self.hf_band}")
        if not 1 <= self.event_types <= len(DEFAULT_EVENT_TYPES):
            raise ConfigError(f"event_types must lie in [1, {len(DEFAULT_EVENT_TYPES)}]")
        if not 0 <= self.persistence <= 1:
            raise ConfigError(f"persistence must lie in [0, 1], got {self.persistence}")
        if self.event_lifetime < 1:
            raise ConfigError("event_lifetime must be >= 1")
        try:
            datetime.fromisoformat(self.start)
        except ValueError:
            raise ConfigError(f"Invalid start timestamp: {self.start!r}")
        return self

    def to_dict(self):
        values = asdict(self)
        values["hf_band"] = list(self.hf_band)
        values["advection"] = list(self.advection)
        return values


@dataclass
class SyntheticData:
    """Grids in time order and the events active at each timestep."""

    grids: list
    events: list
    registry: EventRegistry
    spec: SyntheticSpec = field(default=None, repr=False)

    def flat_events(self):
        return [e for step in self.events for e in step]


def radial_frequencies(height, width):
    """Radial frequency in cycles per sample of every full-transform bin."""
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    return np.sqrt(fy ** 2 + fx ** 2)


def smooth_field(rng, height, width, slope):
    """Zero-mean, unit-variance noise with power proportional to frequency ** -slope."""
    radius = radial_frequencies(height, width)
    amplitude = np.zeros_like(radius)
    amplitude[radius > 0] = radius[radius > 0] ** (-slope / 2)
    spectrum = np.fft.fft2(rng.standard_normal((height, width))) * amplitude
    field = np.fft.ifft2(spectrum).real
    std = field.std()
    return (field - field.mean()) / std if std > 0 else field


def band_noise(rng, height, width, band):
    """Unit-variance noise whose energy lies in the radial band [low, high]."""
    radius = radial_frequencies(height, width)
    keep = (radius >= band[0]) & (radius <= band[1])
    spectrum = np.fft.fft2(rng.standard_normal((height, width))) * keep
    field = np.fft.ifft2(spectrum).real
    std = field.std()
    if std > 0:
        return field / std
    # Too small for the band: fall back to the Nyquist checkerboard
    rows, cols = np.indices((height, width))
    return np.where((rows + cols) % 2, -1.0, 1.0)


@dataclass
class _ActiveEvent:
    row: int
    col: int
    pattern: np.ndarray
    type_names: tuple
    age: int = 0


def channel_layout(count):
    names, offsets, scales = [], [], []
    for c in range(count):
        name, offset, scale = CHANNELS[c] if c < len(CHANNELS) else (f"var{c}", 0.0, 1.0)
        names.append(name)
        offsets.append(offset)
        scales.append(scale)
    return tuple(names), np.array(offsets), np.array(scales)


def generate_synthetic(spec):
    """
    Generate a synthetic dataset.

    Each channel carries a smooth base field advected by `advection` cells
    per step and refreshed as persistence * base + sqrt(1 - persistence^2) * noise.
    Events are boxes with band-limited high-frequency perturbations of
    amplitude `hf_amplitude`; they move with the flow, decay by a fixed factor
    per step and disappear after `event_lifetime` steps or at the grid edge.

    Args:
        spec: SyntheticSpec

    Returns:
        SyntheticData
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    registry = EventRegistry.first(spec.event_types)
    names, offsets, scales = channel_layout(spec.channels)
    start = datetime.fromisoformat(spec.start)
    shift_y, shift_x = spec.advection
    refresh = np.sqrt(max(0.0, 1.0 - spec.persistence ** 2))

    base = np.stack([smooth_field(rng, spec.height, spec.width, spec.spectral_slope)
                     for _ in range(spec.channels)], axis=-1)
    active = []
    grids, events = [], []
    for t in range(spec.timesteps):
        timestamp = start + timedelta(hours=t)
        if t > 0:
            fresh = np.stack([smooth_field(rng, spec.height, spec.width, spec.spectral_slope)
                              for _ in range(spec.channels)], axis=-1)
            base = spec.persistence * np.roll(base, (shift_y, shift_x), axis=(0, 1)) + refresh * fresh
            moved = []
            for event in active:
                event.row += shift_y
                event.col += shift_x
                event.age += 1
                box_h, box_w = event.pattern.shape[:2]
                inside = (0 <= event.row and event.row + box_h <= spec.height
                          and 0 <= event.col and event.col + box_w <= spec.width)
                if event.age < spec.event_lifetime and inside:
                    moved.append(event)
            active = moved

        for _ in range(spec.events_per_step):
            box_h, box_w = rng.integers(spec.box_min, spec.box_max + 1, size=2)
            row = int(rng.integers(0, spec.height - box_h + 1))
            col = int(rng.integers(0, spec.width - box_w + 1))
            pattern = np.stack([band_noise(rng, box_h, box_w, spec.hf_band)
                                for _ in range(spec.channels)], axis=-1)
            types = [registry.names[rng.integers(registry.num_extreme)]]
            if registry.num_extreme > 1 and rng.random() < COMPOUND_PROBABILITY:
                second = registry.names[rng.integers(registry.num_extreme)]
                if second not in types:
                    types.append(second)
            active.append(_ActiveEvent(row, col, pattern, tuple(types)))

        values = base.copy()
        step_events = []
        for event in active:
            box_h, box_w = event.pattern.shape[:2]
            weight = spec.hf_amplitude * EVENT_DECAY ** event.age
            values[event.row:event.row + box_h, event.col:event.col + box_w] += weight * event.pattern
            top, bottom = event.row + 0.5, event.row + box_h - 0.5
            left, right = event.col + 0.5, event.col + box_w - 0.5
            step_events.append(EventRecord(
                timestamp,
                ((top, left), (top, right), (bottom, right), (bottom, left)),
                event.type_names,
            ))
        grids.append(WeatherGrid(offsets + scales * values, timestamp, names))
        events.append(step_events)

    logger.info(
        f"Generated {spec.timesteps} synthetic grids of {spec.height} x {spec.width} x "
        f"{spec.channels} with {sum(len(e) for e in events)} event records"
    )
    return SyntheticData(grids, events, registry, spec)
