# gradcheck.py
"""Finite-difference verification of autograd gradients for every parameterised stage."""
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from backbone import Backbone
from config import TrainConfig
from errors import GradientCheckFailed
from event_memory import EventPriorAugmentation
from frequency_modulation import AdaptiveFrequencyModulation
from model import ExtremeCastModel

logger = logging.getLogger(__name__)

STEP = 1e-4
MODULE_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3


@dataclass
class TensorCheck:
    name: str
    max_rel_error: float
    checked: int


@dataclass
class GradcheckReport:
    suite: str
    tolerance: float
    tensors: list = field(default_factory=list)

    @property
    def max_rel_error(self):
        return max((t.max_rel_error for t in self.tensors), default=0.0)

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    def to_dict(self):
        return {
            "tolerance": self.tolerance,
            "max_rel_error": self.max_rel_error,
            "passed": self.passed,
            "tensors": {t.name: t.max_rel_error for t in self.tensors},
        }


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)


def check_gradients(loss_fn, named_parameters, tolerance, samples=8, seed=0, suite=""):
    """
    Compare autograd against central differences.

    Each tensor is probed at a seeded sample of entries plus its
    largest-gradient entry, with step 1e-4 * max(1, |theta|).

    Args:
        loss_fn: Closure returning a scalar tensor
        named_parameters: Iterable of (name, parameter)
        tolerance: Maximum accepted relative error
        samples: Random entries probed per tensor
        seed: Seed of the entry sample
        suite: Label for the report

    Returns:
        GradcheckReport
    """
    params = [(name, p) for name, p in named_parameters if p.requires_grad]
    for _, p in params:
        p.grad = None
    loss_fn().backward()

    rng = np.random.default_rng(seed)
    report = GradcheckReport(suite, tolerance)
    with torch.no_grad():
        for name, p in params:
            grad = p.grad.reshape(-1).clone() if p.grad is not None else torch.zeros(p.numel(), dtype=p.dtype)
            flat = p.data.view(-1)
            picks = set(rng.choice(p.numel(), size=min(samples, p.numel()), replace=False).tolist())
            picks.add(int(grad.abs().argmax()))
            worst = 0.0
            for i in sorted(picks):
                original = flat[i].item()
                step = STEP * max(1.0, abs(original))
                flat[i] = original + step
                plus = loss_fn().item()
                flat[i] = original - step
                minus = loss_fn().item()
                flat[i] = original
                numeric = (plus - minus) / (2 * step)
                worst = max(worst, relative_error(grad[i].item(), numeric))
            report.tensors.append(TensorCheck(name, worst, len(picks)))
    logger.info(f"Gradient check {suite}: max relative error {report.max_rel_error:.3e}")
    return report


def _projection(shape, generator):
    return torch.randn(shape, generator=generator, dtype=torch.float64)


def afm_suite(seed=7, samples=8):
    """6 x 6 x 2 regions, N = 3."""
    torch.manual_seed(seed)
    module = AdaptiveFrequencyModulation(6, 6, 2, num_filters=3, time_embed_dim=4).double()
    g = torch.Generator().manual_seed(seed)
    regions = _projection((2, 6, 6, 2), g)
    raw = _projection((2, 6, 6, 2), g)
    weights = _projection((2, 6, 6, 2), g)

    def loss():
        return (module(regions, raw, 7, 14, 18) * weights).sum()

    return check_gradients(loss, module.named_parameters(), MODULE_TOLERANCE, samples, seed, "afm")


def _random_memory(generator, types=3, capacity=2, shape=(6, 6, 2)):
    entries = _projection((types, capacity) + shape, generator)
    mask = torch.ones(types, capacity, dtype=torch.bool)
    mask[-1, -1] = False
    return entries, mask


def epa_suite(seed=7, samples=8):
    """6 x 6 x 2 regions, M' = 3, U = 2."""
    torch.manual_seed(seed)
    module = EventPriorAugmentation(2).double()
    g = torch.Generator().manual_seed(seed)
    regions = _projection((2, 6, 6, 2), g)
    entries, mask = _random_memory(g)
    weights = _projection((2, 6, 6, 2), g)

    def loss():
        return (module(regions, entries, mask) * weights).sum()

    return check_gradients(loss, module.named_parameters(), MODULE_TOLERANCE, samples, seed, "epa")


def backbone_suite(seed=7, samples=8):
    """16 x 16 x 2 grid, D = 8, L = 2, window 2."""
    torch.manual_seed(seed)
    module = Backbone(2, embed_dim=8, depth=2, num_heads=2, window_size=2, patch_size=(4, 4)).double()
    g = torch.Generator().manual_seed(seed)
    grid = _projection((1, 16, 16, 2), g)
    weights = _projection((1, 16, 16, 2), g)

    def loss():
        return (module(grid) * weights).sum()

    return check_gradients(loss, module.named_parameters(), MODULE_TOLERANCE, samples, seed, "backbone")


def desk_config(seed=7):
    """The reduced configuration the full-model check runs on."""
    return TrainConfig(
        seed=seed, region_height=10, region_width=10, num_filters=3, time_embed_dim=8,
        memory_capacity=2, embed_dim=8, depth=1, num_heads=2, window_size=2,
        patch_height=4, patch_width=4,
    )


def model_suite(seed=7, samples=8):
    """20 x 20 x 2 grid through EPA, AFM and the backbone."""
    config = desk_config(seed)
    torch.manual_seed(seed)
    module = ExtremeCastModel(config, 2).double()
    g = torch.Generator().manual_seed(seed)
    grid = _projection((1, 20, 20, 2), g)
    entries, mask = _random_memory(g, shape=(10, 10, 2))
    module.memory_entries = entries
    module.memory_mask = mask
    weights = _projection((1, 20, 20, 2), g)
    calendar = [torch.tensor([v]) for v in (1, 8, 18)]

    def loss():
        return (module(grid, *calendar) * weights).sum()

    return check_gradients(loss, module.named_parameters(), MODEL_TOLERANCE, samples, seed, "model")


SUITES = {
    "afm": afm_suite,
    "epa": epa_suite,
    "backbone": backbone_suite,
    "model": model_suite,
}


def run_gradcheck(suites=None, seed=7, samples=8, strict=False):
    """
    Run the finite-difference suites.

    Args:
        suites: Names from SUITES, all when None
        seed: Seed of the fixtures and entry samples
        samples: Random entries probed per tensor
        strict: Raise GradientCheckFailed when a suite fails

    Returns:
        dict: suite name -> GradcheckReport
    """
    reports = {}
    for name in suites or SUITES:
        reports[name] = SUITES[name](seed, samples)
    failed = [name for name, r in reports.items() if not r.passed]
    if failed and strict:
        raise GradientCheckFailed(
            "Gradient check failed for " + ", ".join(
                f"{n} (max rel {reports[n].max_rel_error:.3e})" for n in failed
            )
        )
    return reports
