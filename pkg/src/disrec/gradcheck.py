"""Gradient verification: reverse-mode tape vs central finite differences.

Builds a small randomized instance of the full training objective (both
augmented collaborative views, the final forward, both social views,
projections, every loss term and the regularizer) with frozen augmentation
and negative-sampling seeds, then compares :func:`autodiff.value_and_grad`
against :func:`autodiff.finite_diff_grad` coordinate by coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import finite_diff_grad, value_and_grad
from .config import Config
from .data import Dataset
from .encoders import ParameterSet, init_parameters
from .training import (
    _INIT,
    _NEG,
    BatchContext,
    batch_objective,
    derive_rng,
    derive_seed,
    make_epoch_views,
    sample_negatives,
)

__all__ = ["GroupResult", "GradCheckReport", "build_check_instance", "check_gradients"]

GRAD_FLOOR = 1e-6


@dataclass
class GroupResult:
    name: str
    max_rel_error: float
    checked: int
    size: int


@dataclass
class GradCheckReport:
    groups: list[GroupResult]
    passed: bool
    tolerance: float
    epsilon: float
    seed: int
    loss: float

    def render(self) -> str:
        lines = [
            f"gradient check: seed={self.seed} epsilon={self.epsilon:g} "
            f"tolerance={self.tolerance:g} loss={self.loss:.6f}",
            f"{'parameter':<24}{'checked':>10}  max rel error",
        ]
        for g in self.groups:
            err = f"{g.max_rel_error:.3e}" if g.checked else "-"
            lines.append(f"{g.name:<24}{g.checked:>6}/{g.size:<4} {err}")
        lines.append("result: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines) + "\n"


def build_check_instance(
    seed: int = 0,
    num_users: int = 6,
    num_items: int = 8,
    dim: int = 4,
    with_social: bool = True,
    config: Config | None = None,
):
    """A tiny random dataset plus a deterministic single-batch objective.

    Returns ``(params, objective)`` where ``objective`` maps a flat dict of
    leaf tensors to the joint-loss tensor.
    """
    if config is None:
        config = Config(
            dim=dim,
            item_layers=2,
            social_layers=2,
            projector_depth=2,
            lambda1=0.01,
            lambda2=0.01,
            lambda3=1e-4,
            tau=0.2,
            batch_size=4096,
            seed=seed,
        )
    rng = np.random.default_rng(seed)
    pairs = set()
    for u in range(num_users):
        for i in rng.choice(num_items, size=3, replace=False):
            pairs.add((u, int(i)))
    interactions = np.array(sorted(pairs), dtype=np.int64)
    social = None
    if with_social:
        candidates = [(a, b) for a in range(num_users) for b in range(a + 1, num_users)]
        chosen = rng.choice(len(candidates), size=min(6, len(candidates)), replace=False)
        social = np.array([candidates[i] for i in sorted(chosen)], dtype=np.int64)
    dataset = Dataset.from_pairs(interactions, social, num_users, num_items, seed=seed)

    item_views, social_views = make_epoch_views(dataset, config, epoch=0)
    ctx = BatchContext(
        item_views=item_views,
        social_views=social_views,
        full_adj=dataset.interaction_adj,
        config=config,
        num_users=num_users,
        num_items=num_items,
    )
    train = dataset.split.train
    users, pos = train[:, 0], train[:, 1]
    neg = sample_negatives(users, dataset.train_items, num_items, derive_rng(seed, _NEG, 0))

    def objective(leaves):
        pt = ParameterSet.from_flat(leaves)
        total, _ = batch_objective(pt, users, pos, neg, ctx)
        return total

    params = init_parameters(
        num_users,
        num_items,
        dim=config.dim,
        social_layers=config.social_layers,
        projector_depth=config.projector_depth,
        seed=derive_seed(seed, _INIT),
    )
    return params, objective


def check_gradients(
    seed: int = 0,
    tolerance: float = 1e-4,
    epsilon: float = 1e-5,
    grad_floor: float = GRAD_FLOOR,
    with_social: bool = True,
    config: Config | None = None,
    corrupt=None,
) -> GradCheckReport:
    """Run both gradient paths on the standard instance and compare.

    A coordinate participates when its reverse-mode gradient exceeds
    ``grad_floor`` in magnitude; its relative error is measured against the
    finite-difference value.  ``corrupt`` is a test hook mutating the
    reverse-mode gradients before comparison.
    """
    params, objective = build_check_instance(seed=seed, with_social=with_social, config=config)
    flat = params.to_flat()
    loss, grads = value_and_grad(objective, flat)
    if corrupt is not None:
        corrupt(grads)
    reference = finite_diff_grad(objective, flat, epsilon=epsilon)
    groups = []
    for name in flat:
        g, ref = grads[name], reference[name]
        mask = np.abs(g) > grad_floor
        if mask.any():
            rel = np.abs(g[mask] - ref[mask]) / np.maximum(np.abs(ref[mask]), 1e-12)
            max_err = float(rel.max())
        else:
            max_err = 0.0
        groups.append(GroupResult(name, max_err, int(mask.sum()), g.size))
    passed = all(g.max_rel_error < tolerance for g in groups)
    return GradCheckReport(
        groups=groups,
        passed=passed,
        tolerance=tolerance,
        epsilon=epsilon,
        seed=seed,
        loss=loss,
    )
