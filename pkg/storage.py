# storage.py
"""
On-disk formats and the dataset store.

Binary formats share one layout: a single-line JSON header, a newline, then
a little-endian float32 payload (plus mask bytes for memory pools).
"""
import glob
import json
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np
import pandas as pd
import torch

from config import TrainConfig
from errors import ConfigError, DimensionError, FormatError, StructureError
from event_memory import MemoryPool
from grid_core import EventRecord, EventRegistry, WeatherGrid, rasterize_events
from model import NormalizationStats, build_model

logger = logging.getLogger(__name__)

PAYLOAD_DTYPE = np.dtype("<f4")
FORMAT_VERSION = 1
MANIFEST_FILE = "dataset.json"
EVENTS_FILE = "records.events.jsonl"


def check_output(path, force=False):
    """Refuse to overwrite an existing file or non-empty directory unless forced."""
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise ConfigError(f"Output directory {path} is not empty; pass --force to overwrite")
    if os.path.isfile(path) and not force:
        raise ConfigError(f"Output file {path} exists; pass --force to overwrite")


def _write_binary(path, header, payload, extra=b""):
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        f.write(np.ascontiguousarray(payload, dtype=PAYLOAD_DTYPE).tobytes())
        f.write(extra)


def _read_binary(path, kind):
    """Split a file into its JSON header and raw payload bytes."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise FormatError(f"Cannot read {path}: {str(e)}")
    head, sep, payload = raw.partition(b"\n")
    if not sep:
        raise FormatError(f"{path} has no header line")
    try:
        header = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path} has a malformed header: {str(e)}")
    if header.get("format") != kind:
        raise FormatError(f"{path} is not a {kind} file (format={header.get('format')!r})")
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path} has unsupported version {header.get('version')}")
    return header, payload


def _floats(payload, count, path):
    size = count * PAYLOAD_DTYPE.itemsize
    if len(payload) < size:
        raise FormatError(f"{path} payload holds {len(payload)} bytes, expected {size}")
    return np.frombuffer(payload[:size], dtype=PAYLOAD_DTYPE).astype(np.float64), payload[size:]


def write_grid(path, grid):
    """Write a WeatherGrid as .wgrid."""
    header = {
        "format": "wgrid",
        "version": FORMAT_VERSION,
        "shape": list(grid.shape),
        "timestamp": grid.timestamp.isoformat(),
        "variables": list(grid.variables),
        "lat_bounds": list(grid.lat_bounds),
        "lon_bounds": list(grid.lon_bounds),
        "normalized": grid.normalized,
    }
    _write_binary(path, header, grid.values)


def read_grid(path):
    """Read a .wgrid file."""
    header, payload = _read_binary(path, "wgrid")
    shape = tuple(header["shape"])
    values, rest = _floats(payload, int(np.prod(shape)), path)
    if rest:
        raise FormatError(f"{path} has {len(rest)} trailing bytes")
    return WeatherGrid(
        values.reshape(shape),
        datetime.fromisoformat(header["timestamp"]),
        tuple(header["variables"]),
        tuple(header["lat_bounds"]),
        tuple(header["lon_bounds"]),
        header["normalized"],
    )


def write_events(path, events):
    """Write EventRecords as JSON lines."""
    with open(path, "w") as f:
        for event in events:
            record = {
                "timestamp": event.timestamp.isoformat(),
                "vertices": [list(v) for v in event.vertices],
                "types": list(event.type_names),
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_events(path):
    """Read an .events.jsonl file."""
    events = []
    with open(path, "r") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                events.append(EventRecord(
                    datetime.fromisoformat(record["timestamp"]),
                    tuple(tuple(v) for v in record["vertices"]),
                    tuple(record["types"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, StructureError) as e:
                raise FormatError(f"{path}:{number}: malformed event record ({str(e)})")
    return events


def write_pool(path, pool):
    """Write a MemoryPool as .epamem."""
    num_types, capacity, height, width, channels = pool.entries.shape
    header = {
        "format": "epamem",
        "version": FORMAT_VERSION,
        "num_types": num_types,
        "capacity": capacity,
        "region_height": height,
        "region_width": width,
        "channels": channels,
        "registry": list(pool.registry.names),
        "seed": pool.seed,
        "provenance": [[[list(p) for p in entry] for entry in slot] for slot in pool.provenance],
    }
    _write_binary(path, header, pool.entries, pool.mask.astype(np.uint8).tobytes())
    logger.info(f"Memory pool written to {path}")


def read_pool(path):
    """Read an .epamem file."""
    header, payload = _read_binary(path, "epamem")
    shape = (header["num_types"], header["capacity"], header["region_height"],
             header["region_width"], header["channels"])
    values, rest = _floats(payload, int(np.prod(shape)), path)
    if len(rest) != shape[0] * shape[1]:
        raise FormatError(f"{path} mask holds {len(rest)} bytes, expected {shape[0] * shape[1]}")
    mask = np.frombuffer(rest, dtype=np.uint8).reshape(shape[:2]).astype(bool)
    provenance = [[[tuple(p) for p in entry] for entry in slot] for slot in header["provenance"]]
    return MemoryPool(values.reshape(shape), mask, EventRegistry(tuple(header["registry"])),
                      provenance, header["seed"])


@dataclass
class Checkpoint:
    model: object
    config: TrainConfig
    stats: NormalizationStats
    registry: EventRegistry
    epoch: int
    seed: int


def save_checkpoint(path, model, config, stats, registry, epoch):
    """
    Write model parameters and everything needed to rebuild the model as .uxck.

    Args:
        path: Destination file
        model: ExtremeCastModel
        config: TrainConfig it was built from
        stats: NormalizationStats of the training period
        registry: EventRegistry of its memory pool
        epoch: Epoch the parameters belong to
    """
    state = model.state_dict()
    header = {
        "format": "uxck",
        "version": FORMAT_VERSION,
        "config": config.to_dict(),
        "channels": model.channels,
        "tensors": [{"name": name, "shape": list(t.shape)} for name, t in state.items()],
        "seed": config.seed,
        "epoch": epoch,
        "normalization": stats.to_dict() if stats is not None else None,
        "registry": list(registry.names) if registry is not None else None,
    }
    if state:
        payload = np.concatenate([t.detach().double().reshape(-1).numpy() for t in state.values()])
    else:
        payload = np.zeros(0)
    _write_binary(path, header, payload)
    logger.info(f"Checkpoint (epoch {epoch}) written to {path}")


def load_checkpoint(path, pool=None):
    """
    Rebuild a model from a .uxck file.

    Args:
        path: Checkpoint file
        pool: Optional MemoryPool to attach

    Returns:
        Checkpoint
    """
    header, payload = _read_binary(path, "uxck")
    config = TrainConfig.from_dict(header["config"])
    model = build_model(config, header["channels"], pool)
    shapes = [(t["name"], tuple(t["shape"])) for t in header["tensors"]]
    total = sum(int(np.prod(shape)) for _, shape in shapes)
    values, rest = _floats(payload, total, path)
    if rest:
        raise FormatError(f"{path} has {len(rest)} trailing bytes")

    state, offset = {}, 0
    reference = model.state_dict()
    for name, shape in shapes:
        if name not in reference or tuple(reference[name].shape) != shape:
            raise FormatError(f"{path}: tensor {name} {shape} does not fit the configured model")
        size = int(np.prod(shape))
        chunk = values[offset:offset + size].reshape(shape)
        state[name] = torch.as_tensor(chunk).to(reference[name].dtype)
        offset += size
    model.load_state_dict(state)
    stats = NormalizationStats.from_dict(header["normalization"]) if header["normalization"] else None
    registry = EventRegistry(tuple(header["registry"])) if header["registry"] else None
    return Checkpoint(model, config, stats, registry, header["epoch"], header["seed"])


@dataclass
class Dataset:
    """Grids in time order with the events of each timestep."""

    grids: list
    events: list
    registry: EventRegistry
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.grids)

    def masks(self):
        """H x W extreme mask of every timestep."""
        return [
            rasterize_events(events, g.height, g.width, g.lat_bounds, g.lon_bounds)
            for g, events in zip(self.grids, self.events)
        ]

    def samples(self, indices=None):
        """(grid, events) pairs for the given timesteps."""
        indices = range(len(self.grids)) if indices is None else indices
        return [(self.grids[i], self.events[i]) for i in indices]


def group_events(grids, events):
    """Assign each event to the grid with the same timestamp."""
    by_time = {g.timestamp: [] for g in grids}
    for event in events:
        if event.timestamp not in by_time:
            logger.warning(f"Dropping event at {event.timestamp.isoformat()}: no grid at that time")
            continue
        by_time[event.timestamp].append(event)
    return [by_time[g.timestamp] for g in grids]


class DatasetStore:
    """
    Directory of .wgrid files plus one events file and a JSON manifest.
    """

    def __init__(self, data_dir):
        """
        Initialize the store.

        Args:
            data_dir: Dataset directory
        """
        self.data_dir = data_dir

    def save(self, grids, events, registry, extra=None, force=False):
        """
        Write a dataset.

        Args:
            grids: WeatherGrids in time order
            events: Flat list of EventRecords
            registry: EventRegistry naming the event types
            extra: Additional manifest entries (e.g. the generator settings)
            force: Overwrite a non-empty directory
        """
        check_output(self.data_dir, force)
        os.makedirs(self.data_dir, exist_ok=True)
        names = []
        for t, grid in enumerate(grids):
            name = f"t{t:06d}.wgrid"
            write_grid(os.path.join(self.data_dir, name), grid)
            names.append(name)
        write_events(os.path.join(self.data_dir, EVENTS_FILE), events)
        manifest = {"grids": names, "events": EVENTS_FILE, "registry": list(registry.names)}
        manifest.update(extra or {})
        with open(os.path.join(self.data_dir, MANIFEST_FILE), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        logger.info(f"Saved {len(grids)} grids and {len(events)} events to {self.data_dir}")

    def load(self):
        """
        Read a dataset written by save (or any directory of .wgrid files).

        Returns:
            Dataset
        """
        manifest_path = os.path.join(self.data_dir, MANIFEST_FILE)
        if os.path.exists(manifest_path):
            with open(manifest_path, "r") as f:
                manifest = json.load(f)
            paths = [os.path.join(self.data_dir, n) for n in manifest["grids"]]
            event_paths = [os.path.join(self.data_dir, manifest["events"])]
            registry = EventRegistry(tuple(manifest["registry"]))
        else:
            manifest = {}
            paths = sorted(glob.glob(os.path.join(self.data_dir, "*.wgrid")))
            event_paths = sorted(glob.glob(os.path.join(self.data_dir, "*.events.jsonl")))
            registry = EventRegistry()
        if not paths:
            raise FormatError(f"No .wgrid files in {self.data_dir}")
        grids = sorted((read_grid(p) for p in paths), key=lambda g: g.timestamp)
        shapes = {g.shape for g in grids}
        if len(shapes) != 1:
            raise DimensionError(f"Dataset {self.data_dir} mixes grid shapes {sorted(shapes)}")
        events = [e for p in event_paths for e in read_events(p)]
        logger.info(f"Loaded {len(grids)} grids and {len(events)} events from {self.data_dir}")
        return Dataset(grids, group_events(grids, events), registry, manifest)


def read_json(path):
    """Load a JSON document, reporting unreadable or malformed files as FormatError."""
    try:
        with open(path, "r") as f:
            return json.load(f)
    except OSError as e:
        raise FormatError(f"Cannot read {path}: {str(e)}")
    except ValueError as e:
        raise FormatError(f"{path} is not valid JSON: {str(e)}")


def write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def write_csv(path, frame):
    """Write a pandas DataFrame without its index."""
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {len(frame)} rows to {path}")


def read_trace(path):
    """Read a JSON-lines training trace into a DataFrame."""
    return pd.read_json(path, lines=True)
