# metrics.py
"""Climatology and General / Extreme / Gap verification scores (MAE, RMSE, ACC)."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from errors import DimensionError, EmptyCorpus, FormatError, MissingClimatology
from grid_core import type_masks

logger = logging.getLogger(__name__)

METRICS = ("mae", "rmse", "acc")


@dataclass
class Climatology:
    """Mean field per (month, hour) bucket."""

    means: dict
    counts: dict = field(default_factory=dict)
    period: tuple = ("", "")

    def lookup(self, month, hour):
        try:
            return self.means[(month, hour)]
        except KeyError:
            raise MissingClimatology(month, hour)

    def normalized(self, stats):
        """The same climatology in normalized units."""
        means = {key: (value - stats.mean) / stats.std for key, value in self.means.items()}
        return Climatology(means, dict(self.counts), self.period)

    def save(self, path):
        arrays = {f"m{m:02d}_h{h:02d}": v for (m, h), v in self.means.items()}
        counts = np.array([[m, h, n] for (m, h), n in self.counts.items()], dtype=np.int64)
        np.savez_compressed(path, counts=counts, period=np.array(self.period), **arrays)
        logger.info(f"Climatology with {len(self.means)} buckets written to {path}")

    @classmethod
    def load(cls, path):
        try:
            data = np.load(path)
        except (OSError, ValueError) as e:
            raise FormatError(f"Cannot read climatology {path}: {str(e)}")
        means = {}
        for key in data.files:
            if key.startswith("m") and "_h" in key:
                month, hour = key[1:].split("_h")
                means[(int(month), int(hour))] = data[key]
        counts = {(int(m), int(h)): int(n) for m, h, n in data["counts"]}
        return cls(means, counts, tuple(str(p) for p in data["period"]))


def fit_climatology(grids):
    """
    Bucket-mean of the training grids by (month, hour).

    Args:
        grids: Iterable of WeatherGrid

    Returns:
        Climatology
    """
    sums, counts = {}, {}
    first = last = None
    for grid in grids:
        key = (grid.month, grid.hour)
        if key in sums:
            sums[key] = sums[key] + grid.values
        else:
            sums[key] = grid.values.copy()
        counts[key] = counts.get(key, 0) + 1
        first = first or grid.timestamp
        last = grid.timestamp
    if not sums:
        raise EmptyCorpus("Climatology needs at least one grid")
    means = {key: total / counts[key] for key, total in sums.items()}
    logger.info(f"Fitted climatology over {sum(counts.values())} grids, {len(means)} buckets")
    return Climatology(means, counts, (first.isoformat(), last.isoformat()))


@dataclass
class MetricReport:
    """
    Scores per scope ("general", "extreme", "gap") and metric.

    A scope maps each metric to per-variable values; extreme and gap are
    None when no timestep had an extreme cell.
    """

    variables: tuple
    general: dict
    extreme: dict = None
    gap: dict = None
    counts: dict = field(default_factory=dict)
    scale: str = "normalized"

    @staticmethod
    def _scope_dict(scope, variables):
        if scope is None:
            return None
        result = {}
        for metric in METRICS:
            values = scope[metric]
            defined = [v for v in values if v is not None]
            result[metric] = {
                "per_variable": dict(zip(variables, values)),
                "mean": float(np.mean(defined)) if defined else None,
            }
        return result

    def mean(self, scope, metric):
        """Variable-averaged value of one scope/metric, None when undefined."""
        block = self._scope_dict(getattr(self, scope), self.variables)
        return None if block is None else block[metric]["mean"]

    def to_dict(self):
        return {
            "scale": self.scale,
            "general": self._scope_dict(self.general, self.variables),
            "extreme": self._scope_dict(self.extreme, self.variables),
            "gap": self._scope_dict(self.gap, self.variables),
            "counts": self.counts,
        }

    def to_frame(self):
        """One row per variable plus "mean"; columns <metric>_<scope>."""
        rows = []
        table = self.to_dict()
        for variable in list(self.variables) + ["mean"]:
            row = {"variable": variable}
            for metric in METRICS:
                for scope, suffix in (("general", "gen"), ("extreme", "ext"), ("gap", "gap")):
                    block = table[scope]
                    if block is None:
                        value = None
                    elif variable == "mean":
                        value = block[metric]["mean"]
                    else:
                        value = block[metric]["per_variable"][variable]
                    row[f"{metric}_{suffix}"] = value
            rows.append(row)
        return pd.DataFrame(rows)


def gap_scores(general, extreme):
    """Gap per variable: MAE/RMSE extreme minus general, ACC general minus extreme."""
    gap = {}
    for metric in METRICS:
        pairs = zip(general[metric], extreme[metric])
        if metric == "acc":
            gap[metric] = [None if g is None or e is None else g - e for g, e in pairs]
        else:
            gap[metric] = [None if g is None or e is None else e - g for g, e in pairs]
    return gap


def _acc(pred_anomaly, true_anomaly, weight=None):
    """Per-channel anomaly correlation; NaN where an anomaly norm is zero."""
    if weight is not None:
        pred_anomaly = pred_anomaly * weight
        cross = (pred_anomaly * true_anomaly).sum(axis=(0, 1))
        pred_norm = (pred_anomaly * pred_anomaly).sum(axis=(0, 1))
        true_norm = (weight * true_anomaly * true_anomaly).sum(axis=(0, 1))
    else:
        cross = (pred_anomaly * true_anomaly).sum(axis=(0, 1))
        pred_norm = (pred_anomaly * pred_anomaly).sum(axis=(0, 1))
        true_norm = (true_anomaly * true_anomaly).sum(axis=(0, 1))
    denominator = np.sqrt(pred_norm * true_norm)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denominator > 0, cross / np.where(denominator > 0, denominator, 1.0), np.nan)


def _timestep_partials(pred, target, mask, clim):
    error = pred - target
    absolute = np.abs(error)
    squared = error * error
    weight = mask.astype(np.float64)[..., None]
    pred_anomaly = pred - clim
    true_anomaly = target - clim
    return {
        "abs": absolute.sum(axis=(0, 1)),
        "sq": squared.sum(axis=(0, 1)),
        "ext_abs": (weight * absolute).sum(axis=(0, 1)),
        "ext_sq": (weight * squared).sum(axis=(0, 1)),
        "mask": float(weight.sum()),
        "acc": _acc(pred_anomaly, true_anomaly),
        "ext_acc": _acc(pred_anomaly, true_anomaly, weight) if weight.sum() > 0 else None,
    }


def _to_array(item):
    return item.values if hasattr(item, "values") else np.asarray(item, dtype=np.float64)


def compute_metrics(preds, targets, masks, climatology, scale="normalized", threads=1):
    """
    Verification scores over a sequence of forecasts.

    Args:
        preds: Predicted WeatherGrids
        targets: Verifying WeatherGrids (their timestamps select the climatology)
        masks: H x W extreme masks of the target timesteps
        climatology: Climatology in the same units as the fields
        scale: "normalized" or "raw", recorded in the report
        threads: Worker threads over timesteps

    Returns:
        MetricReport
    """
    if not (len(preds) == len(targets) == len(masks)):
        raise DimensionError(f"{len(preds)} predictions, {len(targets)} targets, {len(masks)} masks")
    if not preds:
        raise EmptyCorpus("No forecasts to score")
    variables = tuple(targets[0].variables)
    shape = targets[0].shape

    def partial(t):
        pred, target = _to_array(preds[t]), _to_array(targets[t])
        mask = np.asarray(masks[t], dtype=bool)
        if pred.shape != shape or target.shape != shape or mask.shape != shape[:2]:
            raise DimensionError(f"Timestep {t} shapes differ from {shape}")
        clim = climatology.lookup(targets[t].month, targets[t].hour)
        return _timestep_partials(pred, target, mask, clim)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        parts = list(executor.map(partial, range(len(preds))))

    cells = len(parts) * shape[0] * shape[1]
    abs_sum = sum(p["abs"] for p in parts)
    sq_sum = sum(p["sq"] for p in parts)
    accs = np.stack([p["acc"] for p in parts])
    general = {
        "mae": (abs_sum / cells).tolist(),
        "rmse": np.sqrt(sq_sum / cells).tolist(),
        "acc": _nan_mean(accs),
    }

    mask_cells = [p["mask"] for p in parts]
    included = [p for p in parts if p["mask"] > 0]
    counts = {
        "timesteps": len(parts),
        "extreme_cells": [int(m) for m in mask_cells],
        "excluded_extreme_timesteps": len(parts) - len(included),
        "acc_undefined_general": int(np.isnan(accs).sum()),
    }
    extreme = gap = None
    if included:
        total = sum(p["mask"] for p in included)
        ext_accs = np.stack([p["ext_acc"] for p in included])
        extreme = {
            "mae": (sum(p["ext_abs"] for p in included) / total).tolist(),
            "rmse": np.sqrt(sum(p["ext_sq"] for p in included) / total).tolist(),
            "acc": _nan_mean(ext_accs),
        }
        counts["acc_undefined_extreme"] = int(np.isnan(ext_accs).sum())
        gap = gap_scores(general, extreme)
    else:
        logger.warning("No timestep has extreme cells; extreme and gap scores are absent")
    return MetricReport(variables, general, extreme, gap, counts, scale)


def _nan_mean(values):
    """Per-channel mean over timesteps, skipping NaN; None where nothing is defined."""
    result = []
    for column in values.T:
        defined = column[~np.isnan(column)]
        result.append(float(defined.mean()) if defined.size else None)
    return result


def compute_type_metrics(preds, targets, events, registry, climatology, scale="normalized"):
    """
    Extreme-scope scores restricted to each event type.

    Args:
        preds: Predicted WeatherGrids
        targets: Verifying WeatherGrids
        events: EventRecord lists aligned with targets
        registry: EventRegistry naming the types
        climatology: Climatology

    Returns:
        dict: type name -> MetricReport, for types with at least one cell
    """
    stacks = [
        type_masks(ev, registry, t.height, t.width, t.lat_bounds, t.lon_bounds)
        for t, ev in zip(targets, events)
    ]
    reports = {}
    for m, name in enumerate(registry.names):
        masks = [s[m] for s in stacks]
        if not any(mask.any() for mask in masks):
            continue
        reports[name] = compute_metrics(preds, targets, masks, climatology, scale)
    return reports
