# cli.py
import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime, timedelta

import torch

from config import Config
from errors import DomainError, ExtremeCastError, FormatError, GradientCheckFailed
from event_memory import build_memory_pool, inter_type_attention
from frequency_modulation import inspect_region
from gradcheck import SUITES, run_gradcheck
from grid_core import split_blocks
from metrics import Climatology, compute_metrics, compute_type_metrics, fit_climatology
from model import NormalizationStats, denormalize, fit_normalization, model_forward, normalize
from spectral import analyze_hfa
from storage import (DatasetStore, check_output, load_checkpoint, read_grid, read_json, read_pool,
                     write_csv, write_grid, write_json, write_pool)
from synthetic import generate_synthetic
from trainer import chronological_split, evaluate_split, train

STATS_FILE = "normalization.json"
CLIMATOLOGY_FILE = "climatology.npz"


def setup_logging(log_level="INFO", log_file="extremecast.log"):
    """
    Set up logging configuration.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: File receiving a copy of the log
    """
    numeric_level = getattr(logging, log_level.upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"Invalid log level: {log_level}")

    logging.basicConfig(
        level=numeric_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(sys.stdout)
        ]
    )


def load_config(args):
    """Defaults < --config file < command-line flags."""
    config = Config(args.config)
    if args.seed is not None:
        config.set("seed", args.seed)
        config.set("synthetic", {"seed": args.seed})
    if args.threads is not None:
        config.set("threads", args.threads)
    torch.set_num_threads(config.get("threads"))
    setup_logging(args.log_level, config.get("log_file"))
    return config


def train_config(config, args, grid_shape):
    """TrainConfig with the per-command overrides applied and checked against the grid."""
    overrides = {
        "epochs": getattr(args, "epochs", None),
        "learning_rate": getattr(args, "lr", None),
        "memory_capacity": getattr(args, "capacity", None),
        "batch_size": getattr(args, "batch_size", None),
    }
    for key, value in overrides.items():
        if value is not None:
            config.set(key, value)
    return config.get_train_config().validate(grid_shape)


def load_stats(path):
    values = read_json(path)
    try:
        return NormalizationStats.from_dict(values)
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path} does not hold normalization statistics: {str(e)}")


def checkpoint_stats(checkpoint):
    if checkpoint.stats is None:
        raise DomainError("The checkpoint carries no normalization statistics")
    return checkpoint.stats


def split_dataset(dataset, train_cfg):
    """Training and validation pair indices of a dataset in time order."""
    return chronological_split(len(dataset) - 1, train_cfg.val_fraction)


def memory_samples(dataset, train_idx, years, normalized):
    """(grid, events) of the training timesteps in the final `years` years of the training period."""
    if not train_idx:
        return []
    last = dataset.grids[train_idx[-1]].timestamp
    since = last - timedelta(days=365 * years)
    return [(normalized[i], dataset.events[i]) for i in train_idx if dataset.grids[i].timestamp > since]


def resolve_time(dataset, value):
    """A timestep index or ISO timestamp to an index."""
    try:
        index = int(value)
    except ValueError:
        stamp = datetime.fromisoformat(value)
        matches = [i for i, g in enumerate(dataset.grids) if g.timestamp == stamp]
        if not matches:
            raise DomainError(f"No grid at {value}")
        return matches[0]
    if not 0 <= index < len(dataset):
        raise DomainError(f"Timestep {index} outside 0-{len(dataset) - 1}")
    return index


def synth_command(args):
    """
    Execute synth command.

    Args:
        args: Command line arguments
    """
    config = load_config(args)
    logger = logging.getLogger("synth")

    if args.spec:
        settings = read_json(args.spec)
        if not isinstance(settings, dict):
            raise FormatError(f"{args.spec} must hold a JSON object of synthetic settings")
        config.set("synthetic", settings)
    overrides = {
        "timesteps": args.timesteps,
        "hf_amplitude": args.amplitude,
        "events_per_step": args.events_per_step,
    }
    config.set("synthetic", {k: v for k, v in overrides.items() if v is not None})
    spec = config.get_synthetic_spec()

    data = generate_synthetic(spec)
    store = DatasetStore(args.out)
    store.save(data.grids, data.flat_events(), data.registry,
               extra={"synthetic": spec.to_dict()}, force=args.force)
    logger.info(f"Synthetic dataset written to {args.out}")


def analyze_hfa_command(args):
    """
    Execute analyze-hfa command.

    Args:
        args: Command line arguments
    """
    config = load_config(args)
    logger = logging.getLogger("analyze-hfa")

    check_output(args.out, args.force)
    dataset = DatasetStore(args.data).load()
    stats = load_stats(args.stats) if args.stats else fit_normalization(dataset.grids)
    grids = [normalize(g, stats) for g in dataset.grids]
    analysis = analyze_hfa(
        grids, dataset.masks(),
        args.region_height or config.get("region_height"),
        args.region_width or config.get("region_width"),
        seed=config.get("seed"),
        threads=config.get("threads"),
    )
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "hfa_report.csv"), analysis.frame)
    write_json(os.path.join(args.out, "hfa_summary.json"), analysis.summary)
    summary = analysis.summary
    logger.info(
        f"W1(normal, extreme)={summary['w1_normal_extreme']}, "
        f"W1(normal, random)={summary['w1_normal_random']}"
    )


def build_memory_command(args):
    """
    Execute build-memory command.

    Args:
        args: Command line arguments
    """
    config = load_config(args)
    logger = logging.getLogger("build-memory")

    check_output(args.out, args.force)
    dataset = DatasetStore(args.data).load()
    cfg = train_config(config, args, dataset.grids[0].shape[:2])
    train_idx, _ = split_dataset(dataset, cfg)
    stats = load_stats(args.stats) if args.stats else \
        fit_normalization([dataset.grids[i] for i in train_idx])
    normalized = [normalize(g, stats) for g in dataset.grids]
    samples = memory_samples(dataset, train_idx, cfg.memory_years, normalized)
    pool = build_memory_pool(samples, dataset.registry, cfg.region_height, cfg.region_width,
                             cfg.memory_capacity, cfg.seed)
    write_pool(args.out, pool)
    logger.info(f"Pool holds {int(pool.mask.sum())} valid entries over {pool.num_types} types")


def fit_stats_command(args):
    """
    Execute fit-stats command: normalization statistics and climatology of the training period.

    Args:
        args: Command line arguments
    """
    config = load_config(args)
    logger = logging.getLogger("fit-stats")

    check_output(args.out, args.force)
    dataset = DatasetStore(args.data).load()
    cfg = train_config(config, args, dataset.grids[0].shape[:2])
    train_idx, _ = split_dataset(dataset, cfg)
    # Pair t -> t+1 uses grids up to t+1
    period = [dataset.grids[i] for i in range(train_idx[-1] + 2)]
    stats = fit_normalization(period)
    climatology = fit_climatology(period)
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, STATS_FILE), stats.to_dict())
    climatology.save(os.path.join(args.out, CLIMATOLOGY_FILE))
    logger.info(f"Statistics written to {args.out}")


def _prepare_training(args, config):
    dataset = DatasetStore(args.data).load()
    cfg = train_config(config, args, dataset.grids[0].shape[:2])
    train_idx, _ = split_dataset(dataset, cfg)
    stats = load_stats(args.stats) if args.stats else \
        fit_normalization([dataset.grids[i] for i in range(train_idx[-1] + 2)])
    normalized = [normalize(g, stats) for g in dataset.grids]
    pool = None
    if cfg.use_epa:
        if args.pool:
            pool = read_pool(args.pool)
        else:
            samples = memory_samples(dataset, train_idx, cfg.memory_years, normalized)
            pool = build_memory_pool(samples, dataset.registry, cfg.region_height,
                                     cfg.region_width, cfg.memory_capacity, cfg.seed)
    return dataset, cfg, stats, normalized, pool


def train_command(args):
    """
    Execute train command.

    Args:
        args: Command line arguments
    """
    config = load_config(args)
    logger = logging.getLogger("train")

    check_output(args.out, args.force)
    dataset, cfg, stats, normalized, pool = _prepare_training(args, config)
    masks = dataset.masks()
    os.makedirs(args.out, exist_ok=True)
    if pool is not None:
        write_pool(os.path.join(args.out, "pool.epamem"), pool)
    write_json(os.path.join(args.out, STATS_FILE), stats.to_dict())

    result = train(cfg, normalized, masks, pool, stats, dataset.registry, args.out, args.max_steps)
    logger.info(f"Best epoch {result.best_epoch} with validation score {result.best_score:.6f}")

    if args.compare_backbone:
        baseline_cfg = replace(cfg, use_afm=False, use_epa=False)
        baseline = train(baseline_cfg, normalized, masks, None, stats, dataset.registry,
                         os.path.join(args.out, "backbone_only"), args.max_steps)
        _, val_idx = split_dataset(dataset, cfg)
        ablation = {}
        for name, run in (("full", result), ("backbone_only", baseline)):
            mae_gen, mae_ext = evaluate_split(run.model, normalized, masks, val_idx, cfg.batch_size) \
                if val_idx else (None, None)
            ablation[name] = {"best_epoch": run.best_epoch, "val_mae_gen": mae_gen, "val_mae_ext": mae_ext}
        write_json(os.path.join(args.out, "ablation.json"), ablation)
        logger.info(f"Ablation comparison written to {os.path.join(args.out, 'ablation.json')}")


def evaluate_command(args):
    """
    Execute evaluate command.

    Args:
        args: Command line arguments
    """
    config = load_config(args)
    logger = logging.getLogger("evaluate")

    check_output(args.out, args.force)
    pool = read_pool(args.pool) if args.pool else None
    checkpoint = load_checkpoint(args.checkpoint, pool)
    dataset = DatasetStore(args.data).load()
    stats = checkpoint.stats or fit_normalization(dataset.grids)
    train_idx, val_idx = split_dataset(dataset, checkpoint.config)
    indices = list(range(len(dataset) - 1)) if args.all else val_idx
    if not indices:
        indices = list(range(len(dataset) - 1))
        logger.warning("Validation split is empty; scoring every forecast pair")

    if args.climatology:
        climatology = Climatology.load(args.climatology)
    else:
        climatology = fit_climatology([dataset.grids[i] for i in range(train_idx[-1] + 2)] if train_idx else dataset.grids)

    normalized = [normalize(g, stats) for g in dataset.grids]
    masks = dataset.masks()
    checkpoint.model.eval()
    preds = [model_forward(checkpoint.model, normalized[i]) for i in indices]
    targets = [normalized[i + 1] for i in indices]
    if args.scale == "raw":
        preds = [denormalize(p, stats) for p in preds]
        targets = [dataset.grids[i + 1] for i in indices]
    else:
        climatology = climatology.normalized(stats)
    target_masks = [masks[i + 1] for i in indices]
    report = compute_metrics(preds, targets, target_masks, climatology, args.scale, config.get("threads"))

    payload = report.to_dict()
    if args.per_type:
        events = [dataset.events[i + 1] for i in indices]
        per_type = compute_type_metrics(preds, targets, events, dataset.registry, climatology, args.scale)
        payload["per_type"] = {name: r.to_dict() for name, r in per_type.items()}
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, "report.json"), payload)
    write_csv(os.path.join(args.out, "report.csv"), report.to_frame())
    logger.info(
        f"MAE general={report.mean('general', 'mae')}, extreme={report.mean('extreme', 'mae')}"
    )


def predict_command(args):
    """
    Execute predict command.

    Args:
        args: Command line arguments
    """
    load_config(args)
    logger = logging.getLogger("predict")

    check_output(args.out, args.force)
    pool = read_pool(args.pool) if args.pool else None
    checkpoint = load_checkpoint(args.checkpoint, pool)
    grid = read_grid(args.grid)
    checkpoint.model.eval()
    stats = checkpoint_stats(checkpoint)
    forecast = model_forward(checkpoint.model, normalize(grid, stats))
    write_grid(args.out, denormalize(forecast, stats))
    logger.info(f"Forecast for {forecast.timestamp.isoformat()} written to {args.out}")


def afm_inspect_command(args):
    """
    Execute afm inspect command.

    Args:
        args: Command line arguments
    """
    load_config(args)
    logger = logging.getLogger("afm")

    check_output(args.out, args.force)
    pool = read_pool(args.pool) if args.pool else None
    checkpoint = load_checkpoint(args.checkpoint, pool)
    model = checkpoint.model
    if model.afm is None:
        raise DomainError("The checkpoint was trained without frequency modulation")
    if model.epa is not None and model.memory_entries is None:
        raise DomainError("The checkpoint uses event prior augmentation; pass its --pool")
    dataset = DatasetStore(args.data).load()
    t = resolve_time(dataset, args.time)
    grid = normalize(dataset.grids[t], checkpoint_stats(checkpoint))
    raw = split_blocks(grid.values, model.region_height, model.region_width)
    if not 0 <= args.region < raw.shape[0]:
        raise DomainError(f"Region {args.region} outside 0-{raw.shape[0] - 1}")
    region = raw[args.region]
    if model.epa is not None:
        with torch.no_grad():
            dtype = model.memory_entries.dtype
            region = model.epa(torch.as_tensor(region[None], dtype=dtype), model.memory_entries,
                               model.memory_mask)[0].numpy()
    result = inspect_region(model.afm, region, raw[args.region], grid.timestamp)
    result["region"] = args.region
    write_json(args.out, result)
    logger.info(f"AFM inspection of region {args.region} at {grid.timestamp.isoformat()} written to {args.out}")


def epa_inspect_command(args):
    """
    Execute epa inspect command.

    Args:
        args: Command line arguments
    """
    load_config(args)
    logger = logging.getLogger("epa")

    check_output(args.out, args.force)
    pool = read_pool(args.pool)
    result = {"summary": pool.summary(), "capacity": pool.capacity, "seed": pool.seed}
    if args.type:
        entries, mask = pool.slot(args.type)
        m = pool.registry.index(args.type)
        result["type"] = {
            "name": args.type,
            "mask": mask.tolist(),
            "provenance": [[list(p) for p in entry] for entry in pool.provenance[m]],
            "entries": entries.tolist(),
        }
    if args.checkpoint:
        checkpoint = load_checkpoint(args.checkpoint, pool)
        if checkpoint.model.epa is None:
            raise DomainError("The checkpoint was trained without event prior augmentation")
        if args.grid:
            raw = read_grid(args.grid)
        else:
            dataset = DatasetStore(args.data).load()
            raw = dataset.grids[resolve_time(dataset, args.time)]
        grid = normalize(raw, checkpoint_stats(checkpoint))
        regions = split_blocks(grid.values, pool.region_shape[0], pool.region_shape[1])
        weights = inter_type_attention(checkpoint.model.epa, regions, pool)
        result["inter_type_weights"] = {
            "timestamp": grid.timestamp.isoformat(),
            "types": list(pool.registry.all_names),
            "weights": weights.tolist(),
        }
    write_json(args.out, result)
    logger.info(f"EPA inspection written to {args.out}")


def gradcheck_command(args):
    """
    Execute gradcheck command.

    Args:
        args: Command line arguments
    """
    config = load_config(args)
    logger = logging.getLogger("gradcheck")

    reports = run_gradcheck(args.suite, seed=config.get("seed"), samples=args.samples)
    payload = {name: report.to_dict() for name, report in reports.items()}
    if args.out:
        check_output(args.out, args.force)
        write_json(args.out, payload)
    print(json.dumps({name: r["max_rel_error"] for name, r in payload.items()}, indent=2))
    failed = [name for name, r in payload.items() if not r["passed"]]
    if failed:
        raise GradientCheckFailed(f"Gradient check failed for: {', '.join(failed)}")
    logger.info("All gradient checks passed")


def run_command(func, args):
    """Run a subcommand, mapping project errors to exit codes."""
    try:
        func(args)
    except ExtremeCastError as e:
        logging.getLogger("cli").error(f"{type(e).__name__}: {str(e)}")
        sys.exit(e.exit_code)
    except OSError as e:
        logging.getLogger("cli").error(f"{type(e).__name__}: {str(e)}")
        sys.exit(FormatError.exit_code)


def build_parser():
    """
    Build the argument parser.
    """
    parser = argparse.ArgumentParser(description="Extreme weather nowcasting command line interface")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
                        default="INFO", help="Set logging level")
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--seed", type=int, help="Seed (defaults to UX_SEED or the config)")
    parser.add_argument("--threads", type=int, help="Worker threads")
    parser.add_argument("--force", action="store_true", help="Overwrite existing outputs")

    subparsers = parser.add_subparsers(dest="command", help="Command to execute")

    # Synth command
    synth_parser = subparsers.add_parser("synth", help="Generate a synthetic dataset")
    synth_parser.add_argument("--out", required=True, help="Output dataset directory")
    synth_parser.add_argument("--spec", help="JSON file of synthetic settings")
    synth_parser.add_argument("--timesteps", type=int, help="Number of timesteps")
    synth_parser.add_argument("--amplitude", type=float, help="High-frequency injection amplitude")
    synth_parser.add_argument("--events-per-step", type=int, help="New events per timestep")
    synth_parser.set_defaults(func=synth_command)

    # Analyze-hfa command
    hfa_parser = subparsers.add_parser("analyze-hfa", help="HFA distributions of normal and extreme regions")
    hfa_parser.add_argument("--data", required=True, help="Dataset directory")
    hfa_parser.add_argument("--out", required=True, help="Output directory")
    hfa_parser.add_argument("--stats", help="Normalization statistics JSON")
    hfa_parser.add_argument("--region-height", type=int, help="Region height")
    hfa_parser.add_argument("--region-width", type=int, help="Region width")
    hfa_parser.set_defaults(func=analyze_hfa_command)

    # Build-memory command
    memory_parser = subparsers.add_parser("build-memory", help="Build an event prior memory pool")
    memory_parser.add_argument("--data", required=True, help="Dataset directory")
    memory_parser.add_argument("--out", required=True, help="Output .epamem file")
    memory_parser.add_argument("--stats", help="Normalization statistics JSON")
    memory_parser.add_argument("--capacity", type=int, help="Entries per event type (U)")
    memory_parser.set_defaults(func=build_memory_command)

    # Fit-stats command
    stats_parser = subparsers.add_parser("fit-stats", help="Fit normalization statistics and climatology")
    stats_parser.add_argument("--data", required=True, help="Dataset directory")
    stats_parser.add_argument("--out", required=True, help="Output directory")
    stats_parser.set_defaults(func=fit_stats_command)

    # Train command
    train_parser = subparsers.add_parser("train", help="Train the forecaster")
    train_parser.add_argument("--data", required=True, help="Dataset directory")
    train_parser.add_argument("--out", required=True, help="Output directory")
    train_parser.add_argument("--pool", help="Prebuilt .epamem pool")
    train_parser.add_argument("--stats", help="Normalization statistics JSON")
    train_parser.add_argument("--epochs", type=int, help="Maximum epochs")
    train_parser.add_argument("--lr", type=float, help="Initial learning rate")
    train_parser.add_argument("--batch-size", type=int, help="Forecast pairs per step")
    train_parser.add_argument("--max-steps", type=int, help="Stop after this many optimizer steps")
    train_parser.add_argument("--compare-backbone", action="store_true",
                              help="Also train the backbone-only variant and write ablation.json")
    train_parser.set_defaults(func=train_command)

    # Evaluate command
    eval_parser = subparsers.add_parser("evaluate", help="Score a checkpoint")
    eval_parser.add_argument("--checkpoint", required=True, help=".uxck checkpoint")
    eval_parser.add_argument("--data", required=True, help="Dataset directory")
    eval_parser.add_argument("--out", required=True, help="Output directory")
    eval_parser.add_argument("--pool", help=".epamem pool the checkpoint was trained with")
    eval_parser.add_argument("--climatology", help="Climatology .npz from fit-stats")
    eval_parser.add_argument("--scale", choices=["normalized", "raw"], default="normalized",
                             help="Score normalized or physical fields")
    eval_parser.add_argument("--all", action="store_true", help="Score every pair, not only validation")
    eval_parser.add_argument("--per-type", action="store_true", help="Add per-event-type scores")
    eval_parser.set_defaults(func=evaluate_command)

    # Predict command
    predict_parser = subparsers.add_parser("predict", help="Forecast the next hour of one grid")
    predict_parser.add_argument("--checkpoint", required=True, help=".uxck checkpoint")
    predict_parser.add_argument("--grid", required=True, help="Input .wgrid")
    predict_parser.add_argument("--out", required=True, help="Output .wgrid")
    predict_parser.add_argument("--pool", help=".epamem pool the checkpoint was trained with")
    predict_parser.set_defaults(func=predict_command)

    # AFM commands
    afm_parser = subparsers.add_parser("afm", help="Frequency modulation tools")
    afm_sub = afm_parser.add_subparsers(dest="afm_command")
    afm_inspect = afm_sub.add_parser("inspect", help="Filter curves, spreads and band weights of a region")
    afm_inspect.add_argument("--checkpoint", required=True, help=".uxck checkpoint")
    afm_inspect.add_argument("--data", required=True, help="Dataset directory")
    afm_inspect.add_argument("--time", required=True, help="Timestep index or ISO timestamp")
    afm_inspect.add_argument("--region", type=int, required=True, help="Region index")
    afm_inspect.add_argument("--pool", help=".epamem pool the checkpoint was trained with")
    afm_inspect.add_argument("--out", required=True, help="Output JSON")
    afm_inspect.set_defaults(func=afm_inspect_command)

    # EPA commands
    epa_parser = subparsers.add_parser("epa", help="Event memory tools")
    epa_sub = epa_parser.add_subparsers(dest="epa_command")
    epa_inspect = epa_sub.add_parser("inspect", help="Dump pool entries or inter-type attention")
    epa_inspect.add_argument("--pool", required=True, help=".epamem pool")
    epa_inspect.add_argument("--type", help="Event type whose entries to dump")
    epa_inspect.add_argument("--checkpoint", help=".uxck checkpoint for attention weights")
    epa_inspect.add_argument("--grid", help="Input .wgrid (with --checkpoint)")
    epa_inspect.add_argument("--data", help="Dataset directory (with --checkpoint)")
    epa_inspect.add_argument("--time", default="0", help="Timestep index or ISO timestamp")
    epa_inspect.add_argument("--out", required=True, help="Output JSON")
    epa_inspect.set_defaults(func=epa_inspect_command)

    # Gradcheck command
    grad_parser = subparsers.add_parser("gradcheck", help="Finite-difference gradient suite")
    grad_parser.add_argument("--suite", action="append", choices=sorted(SUITES),
                             help="Suite to run (repeatable, default all)")
    grad_parser.add_argument("--samples", type=int, default=8, help="Entries probed per tensor")
    grad_parser.add_argument("--out", help="Output JSON")
    grad_parser.set_defaults(func=gradcheck_command)

    return parser


def main(argv=None):
    """
    Main entry point for CLI.
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    if not getattr(args, "func", None):
        parser.print_help()
        sys.exit(2)
    if args.command == "epa" and args.checkpoint and not (args.data or args.grid):
        parser.error("epa inspect --checkpoint needs --data or --grid")

    run_command(args.func, args)


if __name__ == "__main__":
    main()
