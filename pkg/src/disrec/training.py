"""Joint optimization loop.

Each epoch: sample fresh augmented views of both domains, shuffle the
training interactions into batches, and per batch sample one uniform
negative per positive, run all forwards (two collaborative views, the
un-augmented final forward, two social views), project, assemble the joint
loss, backpropagate and take an Adam step.  The best-validation-recall
parameters are kept and training stops after ``patience`` epochs without
improvement.

All randomness derives from the single root seed in the config, so a run is
bit-reproducible.  Checkpoints use a dedicated deterministic binary layout
(see :func:`save_checkpoint`): a magic line, one JSON header line listing
array names/shapes plus the config snapshot, then raw little-endian float64
blocks in header order.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import evaluation
from .augmentation import COLLABORATIVE, SOCIAL, AugmentationSpec, AugmentedView, make_views
from .autodiff import NonFiniteError, Tensor
from .config import Config, from_dict as config_from_dict, to_dict as config_to_dict
from .data import Dataset
from .encoders import ParameterSet, init_parameters, light_gcn, project, social_gcn
from .objectives import (
    bpr_loss,
    cross_domain_loss,
    domain_specific_losses,
    joint_objective,
)
from .sparse import SparseAdjacency

__all__ = [
    "AdamState",
    "EpochRecord",
    "FitResult",
    "TrainLog",
    "TrainingError",
    "CheckpointError",
    "adam_step",
    "train_epoch",
    "fit",
    "batch_objective",
    "BatchContext",
    "make_epoch_views",
    "sample_negatives",
    "save_checkpoint",
    "load_checkpoint",
]

# seed-stream tags; every generator is derived from (root_seed, tag, ...)
_INIT, _AUG, _SHUFFLE, _NEG = 0, 1, 2, 3

CHECKPOINT_MAGIC = b"DISRECCKPT1\n"


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or gradient), with location context."""


class CheckpointError(ValueError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


def derive_rng(root_seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), *map(int, tags)]))


def derive_seed(root_seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([int(root_seed), *map(int, tags)]).generate_state(1)[0])


@dataclass
class AdamState:
    """First/second-moment accumulators per parameter leaf, plus step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: ParameterSet) -> "AdamState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in params.named_arrays()},
            v={name: np.zeros_like(arr) for name, arr in params.named_arrays()},
        )


@dataclass
class EpochRecord:
    epoch: int
    main: float
    collaborative: float
    social: float
    cross_domain: float
    regularizer: float
    total: float
    val_metric: float = float("nan")
    wall_time: float = 0.0


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = float("nan")

    COLUMNS = (
        "epoch",
        "main",
        "collaborative",
        "social",
        "cross_domain",
        "regularizer",
        "total",
        "val_metric",
        "wall_time",
    )

    def to_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\t".join(self.COLUMNS) + "\n")
            for r in self.records:
                fh.write(
                    f"{r.epoch}\t{r.main:.10g}\t{r.collaborative:.10g}\t{r.social:.10g}\t"
                    f"{r.cross_domain:.10g}\t{r.regularizer:.10g}\t{r.total:.10g}\t"
                    f"{r.val_metric:.10g}\t{r.wall_time:.3f}\n"
                )


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray], state: AdamState, config: Config) -> None:
    """Standard bias-corrected Adam update, elementwise and in place."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    mc = 1.0 - b1 ** state.t
    vc = 1.0 - b2 ** state.t
    for name, arr in params.named_arrays():
        g = grads[name]
        if g.shape != arr.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {arr.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        arr -= config.learning_rate * (m / mc) / (np.sqrt(v / vc) + config.adam_eps)


def sample_negatives(users, train_items, num_items: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform unobserved item per positive; rejects observed draws."""
    neg = np.empty(len(users), dtype=np.int64)
    for i, u in enumerate(users):
        owned = train_items[int(u)]
        if len(owned) >= num_items:
            raise TrainingError(f"user {u} interacts with every item; no negative exists")
        j = int(rng.integers(num_items))
        while j in owned:
            j = int(rng.integers(num_items))
        neg[i] = j
    return neg


def make_epoch_views(dataset: Dataset, config: Config, epoch: int):
    """Fresh stochastic views for the epoch; seeds derive from (root, epoch)."""

    def spec(text: str, domain_id: int, view_id: int) -> AugmentationSpec:
        parsed = AugmentationSpec.parse(text)
        return replace(parsed, seed=derive_seed(config.seed, _AUG, epoch, domain_id, view_id))

    item_views = make_views(
        COLLABORATIVE,
        dataset.split.train,
        spec(config.aug_item_view1, 0, 1),
        spec(config.aug_item_view2, 0, 2),
        dataset.num_users,
        dataset.num_items,
    )
    social_views = None
    if dataset.has_social:
        social_views = make_views(
            SOCIAL,
            dataset.social_edges,
            spec(config.aug_social_view1, 1, 1),
            spec(config.aug_social_view2, 1, 2),
            dataset.num_users,
        )
    return item_views, social_views


@dataclass
class BatchContext:
    """Per-epoch constants shared by every batch objective."""

    item_views: tuple[AugmentedView, AugmentedView]
    social_views: tuple[AugmentedView, AugmentedView] | None
    full_adj: SparseAdjacency
    config: Config
    num_users: int
    num_items: int


def _contrast_indices(users, pos, config: Config, num_users: int, num_items: int):
    if config.negatives_scope == "full":
        return np.arange(num_users), np.arange(num_items)
    return np.unique(users), np.unique(pos)


def batch_objective(pt: ParameterSet, users, pos, neg, ctx: BatchContext):
    """Assemble the joint loss for one batch as a differentiable scalar.

    ``pt`` holds tape tensors (see :meth:`ParameterSet.from_flat`).  Loss
    components whose weight is zero are skipped entirely, so unused
    parameters receive exact-zero gradients; the regularizer covers only the
    embeddings rows and weight stacks the batch actually touched.
    """
    cfg = ctx.config
    weights = cfg.weights
    users = np.asarray(users, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    neg = np.asarray(neg, dtype=np.int64)

    final_u, final_v = light_gcn(ctx.full_adj, pt.user_emb, pt.item_emb, cfg.item_layers)
    triplets = np.stack([users, pos, neg], axis=1)
    l_main = bpr_loss(triplets, final_u, final_v)

    contrast_wanted = weights.lambda1 > 0 or weights.lambda2 > 0
    users_c, items_c = _contrast_indices(users, pos, cfg, ctx.num_users, ctx.num_items)
    # a contrastive batch needs at least one negative per anchor
    contrast_used = contrast_wanted and len(users_c) >= 2 and len(items_c) >= 2
    social_used = contrast_used and ctx.social_views is not None

    l_collab, l_social, l_cross = 0.0, 0.0, 0.0
    if contrast_used:
        u1, v1 = light_gcn(ctx.item_views[0].adjacency, pt.user_emb, pt.item_emb, cfg.item_layers)
        u2, v2 = light_gcn(ctx.item_views[1].adjacency, pt.user_emb, pt.item_emb, cfg.item_layers)
        ub1 = ad.gather_rows(u1, users_c)
        ub2 = ad.gather_rows(u2, users_c)
        vb1 = ad.gather_rows(v1, items_c)
        vb2 = ad.gather_rows(v2, items_c)
        social_mlp = pt.social_proj if cfg.projector else None
        sb1 = sb2 = None
        if social_used:
            s1 = social_gcn(ctx.social_views[0].adjacency, pt.social_user_emb, pt.social_weights)
            s2 = social_gcn(ctx.social_views[1].adjacency, pt.social_user_emb, pt.social_weights)
            sb1 = project(ad.gather_rows(s1, users_c), social_mlp)
            sb2 = project(ad.gather_rows(s2, users_c), social_mlp)
        if weights.lambda1 > 0:
            l_collab, l_social = domain_specific_losses(ub1, ub2, vb1, vb2, sb1, sb2, cfg.tau)
        if weights.lambda2 > 0 and social_used:
            item_mlp = pt.item_proj if cfg.projector else None
            pu1 = project(ub1, item_mlp)
            pu2 = project(ub2, item_mlp)
            l_cross = cross_domain_loss(sb1, sb2, pu1, pu2, cfg.tau)

    reg_users = np.unique(np.concatenate([users, users_c]) if contrast_used else users)
    reg_items = np.unique(np.concatenate([pos, neg, items_c]) if contrast_used else np.concatenate([pos, neg]))
    reg_terms = [
        ad.sum_of_squares(ad.gather_rows(pt.user_emb, reg_users)),
        ad.sum_of_squares(ad.gather_rows(pt.item_emb, reg_items)),
    ]
    if social_used:
        reg_terms.append(ad.sum_of_squares(ad.gather_rows(pt.social_user_emb, users_c)))
        reg_terms.extend(ad.sum_of_squares(w) for w in pt.social_weights)
        if cfg.projector:
            for w, b in pt.social_proj:
                reg_terms.append(ad.sum_of_squares(w))
                reg_terms.append(ad.sum_of_squares(b))
    if contrast_used and social_used and weights.lambda2 > 0 and cfg.projector:
        for w, b in pt.item_proj:
            reg_terms.append(ad.sum_of_squares(w))
            reg_terms.append(ad.sum_of_squares(b))
    l_reg = reg_terms[0]
    for term in reg_terms[1:]:
        l_reg = ad.add(l_reg, term)

    total = joint_objective(l_main, l_collab, l_social, l_cross, l_reg, weights)
    parts = {
        "main": float(l_main.value),
        "collaborative": float(l_collab.value) if isinstance(l_collab, Tensor) else float(l_collab),
        "social": float(l_social.value) if isinstance(l_social, Tensor) else float(l_social),
        "cross_domain": float(l_cross.value) if isinstance(l_cross, Tensor) else float(l_cross),
        "regularizer": float(l_reg.value),
        "total": float(total.value),
    }
    return total, parts


def train_epoch(
    dataset: Dataset, params: ParameterSet, state: AdamState, config: Config, epoch: int
) -> EpochRecord:
    """One pass over the shuffled training edges; returns the loss record.

    Component columns are summed over the epoch's batches.
    """
    start = time.perf_counter()
    item_views, social_views = make_epoch_views(dataset, config, epoch)
    ctx = BatchContext(
        item_views=item_views,
        social_views=social_views,
        full_adj=dataset.interaction_adj,
        config=config,
        num_users=dataset.num_users,
        num_items=dataset.num_items,
    )
    train = dataset.split.train
    perm = derive_rng(config.seed, _SHUFFLE, epoch).permutation(len(train))
    neg_rng = derive_rng(config.seed, _NEG, epoch)
    sums = dict.fromkeys(("main", "collaborative", "social", "cross_domain", "regularizer", "total"), 0.0)
    for batch_index, lo in enumerate(range(0, len(train), config.batch_size)):
        rows = train[perm[lo:lo + config.batch_size]]
        users, pos = rows[:, 0], rows[:, 1]
        neg = sample_negatives(users, dataset.train_items, dataset.num_items, neg_rng)
        leaves = {name: Tensor(arr) for name, arr in params.named_arrays()}
        pt = ParameterSet.from_flat(leaves)
        try:
            total, parts = batch_objective(pt, users, pos, neg, ctx)
            ad.backward(total)
            grads = {
                name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
                for name, leaf in leaves.items()
            }
            adam_step(params, grads, state, config)
        except NonFiniteError as exc:
            raise TrainingError(f"epoch {epoch}, batch {batch_index}: {exc}") from exc
        for key in sums:
            sums[key] += parts[key]
    return EpochRecord(
        epoch=epoch,
        main=sums["main"],
        collaborative=sums["collaborative"],
        social=sums["social"],
        cross_domain=sums["cross_domain"],
        regularizer=sums["regularizer"],
        total=sums["total"],
        wall_time=time.perf_counter() - start,
    )


def validation_recall(dataset: Dataset, params: ParameterSet, config: Config, fold: str = "validation") -> float:
    from .encoders import final_representations

    user_repr, item_repr = final_representations(
        dataset.interaction_adj, params.user_emb, params.item_emb, config.item_layers
    )
    report = evaluation.evaluate_topk(
        user_repr, item_repr, dataset.train_items, dataset.items_in_fold(fold), k=config.eval_k
    )
    return report.recall


@dataclass
class FitResult:
    """Best-validation parameters plus the log and optimizer state to resume."""

    params: ParameterSet
    log: TrainLog
    state: AdamState
    epochs_run: int


def fit(dataset: Dataset, config: Config, progress=None) -> FitResult:
    """Train up to ``config.epochs`` epochs with validation-recall early
    stopping; keeps the parameters (and Adam state) of the best epoch and
    stops after ``config.patience`` epochs without improvement.

    ``progress``, if given, is called with each completed :class:`EpochRecord`.
    """
    params = init_parameters(
        dataset.num_users,
        dataset.num_items,
        dim=config.dim,
        social_layers=config.social_layers,
        projector_depth=config.projector_depth,
        seed=derive_seed(config.seed, _INIT),
    )
    state = AdamState.init(params)
    log = TrainLog()
    best_params = params.copy()
    best_state = AdamState.init(params)
    best_metric = -np.inf
    stale = 0
    epochs_run = 0
    for epoch in range(config.epochs):
        record = train_epoch(dataset, params, state, config, epoch)
        record.val_metric = validation_recall(dataset, params, config)
        log.records.append(record)
        epochs_run = epoch + 1
        if progress is not None:
            progress(record)
        if record.val_metric > best_metric:
            best_metric = record.val_metric
            best_params = params.copy()
            best_state = AdamState(
                m={k: v.copy() for k, v in state.m.items()},
                v={k: v.copy() for k, v in state.v.items()},
                t=state.t,
            )
            log.best_epoch = epoch
            log.best_metric = best_metric
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break
    return FitResult(params=best_params, log=log, state=best_state, epochs_run=epochs_run)


# ---------------------------------------------------------------------------
# checkpoints


def _checkpoint_entries(params: ParameterSet, state: AdamState):
    for name, arr in params.named_arrays():
        yield f"param:{name}", arr
    for name in (n for n, _ in params.named_arrays()):
        yield f"adam_m:{name}", state.m[name]
    for name in (n for n, _ in params.named_arrays()):
        yield f"adam_v:{name}", state.v[name]


def save_checkpoint(path, params: ParameterSet, state: AdamState, epoch: int, config: Config) -> None:
    """Write the versioned binary dump; identical state yields identical bytes."""
    entries = list(_checkpoint_entries(params, state))
    header = {
        "epoch": int(epoch),
        "adam_t": int(state.t),
        "config": config_to_dict(config),
        "arrays": [[name, list(arr.shape)] for name, arr in entries],
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for _, arr in entries:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns ``(params, adam_state, epoch, config)``."""
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint or unsupported version")
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except ValueError as exc:
            raise CheckpointError(f"{path}: corrupt header: {exc}") from None
        arrays = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated data for array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last array")
    try:
        config = config_from_dict(header["config"])
    except Exception as exc:
        raise CheckpointError(f"{path}: bad embedded config: {exc}") from exc
    params = ParameterSet.from_flat(
        {name[len("param:"):]: arr for name, arr in arrays.items() if name.startswith("param:")}
    )
    state = AdamState(
        m={name[len("adam_m:"):]: arr for name, arr in arrays.items() if name.startswith("adam_m:")},
        v={name[len("adam_v:"):]: arr for name, arr in arrays.items() if name.startswith("adam_v:")},
        t=int(header["adam_t"]),
    )
    return params, state, int(header["epoch"]), config
