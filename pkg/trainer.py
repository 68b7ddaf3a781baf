# trainer.py
"""L1 training loop with step-decayed AdamW and early stopping on extreme-region MAE."""
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from tqdm import tqdm

from errors import EmptyCorpus, TrainingDiverged
from model import DTYPES, build_model, l1_loss, time_features
from storage import save_checkpoint

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    """Best model, its score and the per-epoch trace."""

    model: object
    trace: list = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = math.inf
    steps: int = 0
    stopped_early: bool = False
    step_losses: list = field(default_factory=list)


def chronological_split(count, val_fraction):
    """
    Split `count` forecast pairs into leading training and trailing validation indices.

    Returns:
        tuple: (train indices, validation indices)
    """
    val_count = int(math.floor(count * val_fraction))
    if val_fraction > 0 and count >= 2:
        val_count = max(val_count, 1)
    split = count - val_count
    return list(range(split)), list(range(split, count))


def _batch_tensors(grids, indices, dtype):
    """Inputs, targets and calendar fields of the forecast pairs t -> t+1."""
    x = torch.as_tensor(np.stack([grids[i].values for i in indices]), dtype=dtype)
    y = torch.as_tensor(np.stack([grids[i + 1].values for i in indices]), dtype=dtype)
    return x, y, time_features([grids[i].timestamp for i in indices])


@torch.no_grad()
def evaluate_split(model, grids, masks, indices, batch_size):
    """
    General and extreme-region MAE of next-hour predictions.

    Args:
        model: ExtremeCastModel
        grids: Normalized WeatherGrids
        masks: H x W extreme masks aligned with grids
        indices: Forecast pairs (t -> t + 1) to score
        batch_size: Pairs per forward pass

    Returns:
        tuple: (mae_general, mae_extreme or None when no extreme cells)
    """
    dtype = next(model.parameters()).dtype
    abs_sum, cells, ext_sum, ext_cells = 0.0, 0, 0.0, 0
    for start in range(0, len(indices), batch_size):
        chunk = indices[start:start + batch_size]
        x, y, (month, day, hour) = _batch_tensors(grids, chunk, dtype)
        error = (model(x, month, day, hour) - y).abs().double().numpy()
        abs_sum += error.sum()
        cells += error.size
        mask = np.stack([masks[i + 1] for i in chunk])[..., None]
        ext_sum += (error * mask).sum()
        ext_cells += int(mask.sum()) * error.shape[-1]
    mae_general = abs_sum / cells if cells else math.nan
    mae_extreme = ext_sum / ext_cells if ext_cells else None
    return mae_general, mae_extreme


def _snapshot(model):
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def train(config, grids, masks, pool=None, stats=None, registry=None, output_dir=None, max_steps=None):
    """
    Fit the forecaster on consecutive (X^t, X^t+1) pairs.

    Extreme masks only drive model selection; the loss never sees them.

    Args:
        config: TrainConfig
        grids: Normalized WeatherGrids in time order
        masks: H x W extreme masks aligned with grids
        pool: MemoryPool, required when EPA is enabled
        stats: NormalizationStats stored in checkpoints
        registry: EventRegistry stored in checkpoints
        output_dir: Where best.uxck and trace.jsonl go; nothing is written when None
        max_steps: Stop after this many optimizer steps

    Returns:
        TrainResult: The best model (by validation score) and the trace
    """
    config.validate(grids[0].shape[:2] if grids else None)
    if len(grids) < 2:
        raise EmptyCorpus(f"Training needs at least 2 consecutive grids, got {len(grids)}")
    torch.set_num_threads(config.threads)
    dtype = DTYPES[config.dtype]
    model = build_model(config, grids[0].channels, pool if config.use_epa else None)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate,
                                  weight_decay=config.weight_decay)
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=config.decay_step,
                                                gamma=config.decay_factor)

    train_idx, val_idx = chronological_split(len(grids) - 1, config.val_fraction)
    if not train_idx:
        raise EmptyCorpus("No training pairs left after the validation split")
    logger.info(f"Training on {len(train_idx)} pairs, validating on {len(val_idx)}")

    trace_path = None
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        trace_path = os.path.join(output_dir, "trace.jsonl")
        open(trace_path, "w").close()

    result = TrainResult(model)
    best_state = _snapshot(model)
    last_finite = best_state
    bad_evals = 0
    warned = False
    epochs = tqdm(range(1, config.epochs + 1), desc="train",
                  disable=not logger.isEnabledFor(logging.INFO))
    for epoch in epochs:
        model.train()
        losses = []
        for start in range(0, len(train_idx), config.batch_size):
            chunk = train_idx[start:start + config.batch_size]
            x, y, (month, day, hour) = _batch_tensors(grids, chunk, dtype)
            optimizer.zero_grad()
            loss = l1_loss(model(x, month, day, hour), y)
            if not torch.isfinite(loss):
                path = None
                if output_dir:
                    model.load_state_dict(last_finite)
                    path = os.path.join(output_dir, "last_finite.uxck")
                    save_checkpoint(path, model, config, stats, registry, epoch)
                raise TrainingDiverged(epoch, result.steps, path)
            loss.backward()
            optimizer.step()
            result.steps += 1
            losses.append(loss.item())
            result.step_losses.append(loss.item())
            if all(bool(torch.isfinite(p).all()) for p in model.parameters()):
                last_finite = _snapshot(model)
            if max_steps is not None and result.steps >= max_steps:
                break
        lr = optimizer.param_groups[0]["lr"]
        scheduler.step()

        model.eval()
        train_l1 = float(np.mean(losses))
        if val_idx:
            mae_general, mae_extreme = evaluate_split(model, grids, masks, val_idx, config.batch_size)
            if mae_extreme is None and not warned:
                logger.warning("Validation split has no extreme cells; early stopping uses general MAE")
                warned = True
            score = mae_extreme if mae_extreme is not None else mae_general
        else:
            mae_extreme = None
            score = train_l1
        entry = {"epoch": epoch, "train_l1": train_l1, "val_mae_ext": mae_extreme, "lr": lr}
        result.trace.append(entry)
        if trace_path:
            with open(trace_path, "a") as f:
                f.write(json.dumps(entry) + "\n")
        logger.debug(f"Epoch {epoch}: train_l1={train_l1:.6f} score={score:.6f}")

        if score < result.best_score:
            result.best_score = score
            result.best_epoch = epoch
            best_state = _snapshot(model)
            bad_evals = 0
        else:
            bad_evals += 1
            if bad_evals >= config.patience:
                logger.info(f"Early stopping at epoch {epoch} (best epoch {result.best_epoch})")
                result.stopped_early = True
                break
        if max_steps is not None and result.steps >= max_steps:
            break

    model.load_state_dict(best_state)
    if output_dir:
        save_checkpoint(os.path.join(output_dir, "best.uxck"), model, config, stats, registry,
                        result.best_epoch)
    logger.info(f"Training finished after {result.steps} steps; best score {result.best_score:.6f}")
    return result
