"""Ingestion, indexing, splitting and graph construction.

Raw inputs are plain-text files, one record per line, fields separated by
tabs or runs of spaces; lines starting with ``#`` are ignored.  The ratings
file carries ``user item rating [extra fields ignored]``, the social file
``user friend [extra ignored]``.

Everything downstream works on dense integer indices.  The split manifest
written by :func:`write_split_manifest` pins the exact train/validation/test
assignment so a run can be reproduced bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .sparse import SparseAdjacency

logger = logging.getLogger(__name__)

FOLDS = ("train", "validation", "test")


class ParseError(ValueError):
    """A malformed line in an input file; message carries file and line number."""


@dataclass(frozen=True)
class InteractionRecord:
    user_raw_id: str
    item_raw_id: str
    rating: float


@dataclass(frozen=True)
class SocialRecord:
    user_raw_id: str
    friend_raw_id: str


@dataclass
class IdIndex:
    """Bijection between raw string ids and contiguous dense indices."""

    user_map: dict[str, int]
    item_map: dict[str, int]

    @property
    def num_users(self) -> int:
        return len(self.user_map)

    @property
    def num_items(self) -> int:
        return len(self.item_map)

    def user_ids(self) -> list[str]:
        """Raw user ids ordered by dense index."""
        out = [""] * len(self.user_map)
        for raw, idx in self.user_map.items():
            out[idx] = raw
        return out

    def item_ids(self) -> list[str]:
        out = [""] * len(self.item_map)
        for raw, idx in self.item_map.items():
            out[idx] = raw
        return out


@dataclass
class DatasetSplit:
    """Disjoint train/validation/test edge lists covering the filtered set."""

    train: np.ndarray  # (k, 2) int64 of (user_idx, item_idx)
    validation: np.ndarray
    test: np.ndarray
    seed: int

    def fold(self, name: str) -> np.ndarray:
        if name not in FOLDS:
            raise ValueError(f"unknown fold {name!r}, expected one of {FOLDS}")
        return getattr(self, "validation" if name == "validation" else name)

    @property
    def total(self) -> int:
        return len(self.train) + len(self.validation) + len(self.test)

    def validate(self) -> None:
        folds = [self.train, self.validation, self.test]
        seen = set()
        for edges in folds:
            pairs = {(int(u), int(i)) for u, i in edges}
            if pairs & seen:
                raise ValueError("folds overlap")
            seen |= pairs
        if len(seen) != self.total:
            raise ValueError("duplicate edges within a fold")
        exact = self.total / 10.0
        for edges, weight in zip(folds, (8, 1, 1)):
            if abs(len(edges) - weight * exact) > 1.0:
                raise ValueError("fold sizes deviate from 8:1:1 by more than one edge")


def _parse_lines(path, min_fields: int):
    """Yield ``(line_number, fields)`` for data lines; skips blanks and comments."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) < min_fields:
                raise ParseError(
                    f"{path}:{lineno}: expected at least {min_fields} fields, "
                    f"got {len(fields)}"
                )
            yield lineno, fields


def load_interactions(path, min_rating: float = 4.0) -> list[InteractionRecord]:
    """Read a ratings file, collapse duplicates to the max rating, filter.

    Keeps only records with ``rating >= min_rating``; file order of first
    occurrence is preserved.
    """
    best: dict[tuple[str, str], float] = {}
    order: list[tuple[str, str]] = []
    for lineno, fields in _parse_lines(path, 3):
        user, item, raw_rating = fields[0], fields[1], fields[2]
        try:
            rating = float(raw_rating)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric rating {raw_rating!r}") from None
        if not np.isfinite(rating) or not (1.0 <= rating <= 5.0):
            raise ParseError(f"{path}:{lineno}: rating {rating} outside [1, 5]")
        key = (user, item)
        if key not in best:
            best[key] = rating
            order.append(key)
        elif rating > best[key]:
            best[key] = rating
    return [
        InteractionRecord(u, i, best[(u, i)])
        for u, i in order
        if best[(u, i)] >= min_rating
    ]


def _iter_social_pairs(path, index: IdIndex):
    """Yield directed (user, friend) pairs whose endpoints exist in the index."""
    for lineno, fields in _parse_lines(path, 2):
        user, friend = fields[0], fields[1]
        if user == friend:
            continue
        if user in index.user_map and friend in index.user_map:
            yield user, friend


def count_social_relations(path, index: IdIndex) -> int:
    """Directed relation count before symmetrization (for dataset statistics)."""
    return sum(1 for _ in _iter_social_pairs(path, index))


def load_social(path, index: IdIndex) -> list[SocialRecord]:
    """Read a relations file and return symmetrized, deduplicated records.

    Self-loops and pairs touching unknown users are dropped; each surviving
    undirected relation appears once per direction, ordered by first
    occurrence in the file.
    """
    seen: set[tuple[str, str]] = set()
    records: list[SocialRecord] = []
    for user, friend in _iter_social_pairs(path, index):
        key = (user, friend) if user < friend else (friend, user)
        if key in seen:
            continue
        seen.add(key)
        records.append(SocialRecord(user, friend))
        records.append(SocialRecord(friend, user))
    return records


def build_index(records: list[InteractionRecord]) -> IdIndex:
    """Assign dense indices to users and items in first-appearance order."""
    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    for rec in records:
        if rec.user_raw_id not in user_map:
            user_map[rec.user_raw_id] = len(user_map)
        if rec.item_raw_id not in item_map:
            item_map[rec.item_raw_id] = len(item_map)
    return IdIndex(user_map, item_map)


def _apportion(total: int, ratios: tuple[int, ...]) -> list[int]:
    """Largest-remainder rounding of ``total`` into ``ratios`` parts.

    Guarantees every part is within one edge of its exact share; leftover
    edges go to the parts with the largest fractional share (earlier part
    wins ties).
    """
    weight = sum(ratios)
    exact = [total * r / weight for r in ratios]
    sizes = [int(np.floor(e)) for e in exact]
    remainder = total - sum(sizes)
    by_fraction = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in by_fraction[:remainder]:
        sizes[i] += 1
    return sizes


def split_interactions(
    records: list[InteractionRecord],
    ratios: tuple[int, int, int] = (8, 1, 1),
    seed: int = 0,
    index: IdIndex | None = None,
) -> DatasetSplit:
    """Globally shuffle interactions and partition them by ``ratios``.

    Deterministic for a fixed seed.  Refuses inputs with fewer than ten
    records, where an 8:1:1 partition is meaningless.
    """
    if len(records) < 10:
        raise ValueError(
            f"need at least 10 interactions to split 8:1:1, got {len(records)}"
        )
    if any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be positive, got {ratios}")
    if index is None:
        index = build_index(records)
    pairs = np.array(
        [(index.user_map[r.user_raw_id], index.item_map[r.item_raw_id]) for r in records],
        dtype=np.int64,
    )
    rng = np.random.default_rng(seed)
    pairs = pairs[rng.permutation(len(pairs))]
    n_train, n_val, n_test = _apportion(len(pairs), ratios)
    return DatasetSplit(
        train=pairs[:n_train],
        validation=pairs[n_train:n_train + n_val],
        test=pairs[n_train + n_val:],
        seed=seed,
    )


def build_interaction_adjacency(train_edges, num_users: int, num_items: int) -> SparseAdjacency:
    """Bipartite block adjacency with ``1/sqrt(deg_u * deg_i)`` edge weights.

    Items occupy indices ``num_users .. num_users+num_items-1`` of the square
    (m+n) x (m+n) matrix.  Degrees are counted on the given (training) edges
    only.
    """
    edges = np.asarray(train_edges, dtype=np.int64).reshape(-1, 2)
    size = num_users + num_items
    if len(edges) == 0:
        return SparseAdjacency.from_edges([], [], [], (size, size))
    users, items = edges[:, 0], edges[:, 1]
    if users.min() < 0 or users.max() >= num_users:
        raise IndexError("user index out of range")
    if items.min() < 0 or items.max() >= num_items:
        raise IndexError("item index out of range")
    user_deg = np.bincount(users, minlength=num_users).astype(np.float64)
    item_deg = np.bincount(items, minlength=num_items).astype(np.float64)
    weights = 1.0 / np.sqrt(user_deg[users] * item_deg[items])
    rows = np.concatenate([users, items + num_users])
    cols = np.concatenate([items + num_users, users])
    vals = np.concatenate([weights, weights])
    return SparseAdjacency.from_edges(rows, cols, vals, (size, size))


def build_social_adjacency(
    social_edges, num_users: int, add_self_loops: bool = True
) -> SparseAdjacency:
    """Symmetric-normalized social adjacency ``D^{-1/2} (A [+ I]) D^{-1/2}``.

    ``social_edges`` lists each undirected relation once as ``(u, v)``.
    Without self-loops, isolated users simply have empty rows.
    """
    edges = np.asarray(social_edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= num_users):
        raise IndexError("social index out of range")
    if len(edges) and np.any(edges[:, 0] == edges[:, 1]):
        raise ValueError("self-loop in social edge list")
    rows = np.concatenate([edges[:, 0], edges[:, 1]]) if len(edges) else np.array([], dtype=np.int64)
    cols = np.concatenate([edges[:, 1], edges[:, 0]]) if len(edges) else np.array([], dtype=np.int64)
    if add_self_loops:
        loops = np.arange(num_users, dtype=np.int64)
        rows = np.concatenate([rows, loops])
        cols = np.concatenate([cols, loops])
    if len(rows) == 0:
        return SparseAdjacency.from_edges([], [], [], (num_users, num_users))
    deg = np.bincount(rows, minlength=num_users).astype(np.float64)
    vals = 1.0 / np.sqrt(deg[rows] * deg[cols])
    return SparseAdjacency.from_edges(rows, cols, vals, (num_users, num_users))


def canonical_social_edges(records: list[SocialRecord], index: IdIndex) -> np.ndarray:
    """Undirected (u, v) index pairs with u < v, one per relation, sorted."""
    pairs = {
        (min(a, b), max(a, b))
        for a, b in (
            (index.user_map[r.user_raw_id], index.user_map[r.friend_raw_id])
            for r in records
        )
    }
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    return np.array(sorted(pairs), dtype=np.int64)


def write_split_manifest(path, split: DatasetSplit, index: IdIndex) -> None:
    """One ``user<TAB>item<TAB>fold`` line per interaction, in fold order."""
    users = index.user_ids()
    items = index.item_ids()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# seed = {split.seed}\n")
        for fold in FOLDS:
            for u, i in split.fold(fold):
                fh.write(f"{users[u]}\t{items[i]}\t{fold}\n")


def read_split_manifest(path, index: IdIndex) -> DatasetSplit:
    folds: dict[str, list[tuple[int, int]]] = {f: [] for f in FOLDS}
    seed = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "seed" in line and "=" in line:
                    seed = int(line.split("=", 1)[1].strip())
                continue
            fields = line.split("\t")
            if len(fields) != 3 or fields[2] not in FOLDS:
                raise ParseError(f"{path}:{lineno}: malformed manifest line")
            user, item, fold = fields
            if user not in index.user_map or item not in index.item_map:
                raise ParseError(f"{path}:{lineno}: unknown user or item id")
            folds[fold].append((index.user_map[user], index.item_map[item]))

    def as_array(rows):
        return np.array(rows, dtype=np.int64).reshape(-1, 2)

    return DatasetSplit(
        train=as_array(folds["train"]),
        validation=as_array(folds["validation"]),
        test=as_array(folds["test"]),
        seed=seed,
    )


@dataclass
class Dataset:
    """Everything the trainer and evaluator need, in dense-index form."""

    num_users: int
    num_items: int
    split: DatasetSplit
    social_edges: np.ndarray  # (e, 2) canonical undirected pairs, possibly empty
    index: IdIndex | None = None
    interaction_adj: SparseAdjacency = field(init=False)
    train_items: list[set[int]] = field(init=False)

    def __post_init__(self):
        self.social_edges = np.asarray(self.social_edges, dtype=np.int64).reshape(-1, 2)
        self.interaction_adj = build_interaction_adjacency(
            self.split.train, self.num_users, self.num_items
        )
        self.train_items = [set() for _ in range(self.num_users)]
        for u, i in self.split.train:
            self.train_items[int(u)].add(int(i))

    @property
    def has_social(self) -> bool:
        return len(self.social_edges) > 0

    def items_in_fold(self, fold: str) -> dict[int, set[int]]:
        """Per-user item sets for one fold; users without items are absent."""
        out: dict[int, set[int]] = {}
        for u, i in self.split.fold(fold):
            out.setdefault(int(u), set()).add(int(i))
        return out

    @classmethod
    def from_pairs(
        cls,
        interactions,
        social=None,
        num_users: int | None = None,
        num_items: int | None = None,
        seed: int = 0,
        ratios: tuple[int, int, int] = (8, 1, 1),
    ) -> "Dataset":
        """Build a dataset from already-indexed (user, item) pairs.

        ``social`` is an optional array of (user, user) pairs; direction and
        duplicates are ignored.
        """
        pairs = np.asarray(interactions, dtype=np.int64).reshape(-1, 2)
        if len(pairs) < 10:
            raise ValueError(f"need at least 10 interactions, got {len(pairs)}")
        m = int(pairs[:, 0].max()) + 1 if num_users is None else num_users
        n = int(pairs[:, 1].max()) + 1 if num_items is None else num_items
        rng = np.random.default_rng(seed)
        shuffled = pairs[rng.permutation(len(pairs))]
        n_train, n_val, n_test = _apportion(len(shuffled), ratios)
        split = DatasetSplit(
            train=shuffled[:n_train],
            validation=shuffled[n_train:n_train + n_val],
            test=shuffled[n_train + n_val:],
            seed=seed,
        )
        if social is None or len(social) == 0:
            edges = np.empty((0, 2), dtype=np.int64)
        else:
            social = np.asarray(social, dtype=np.int64).reshape(-1, 2)
            if social.min() < 0 or social.max() >= m:
                raise IndexError("social index out of range")
            uniq = {
                (min(int(a), int(b)), max(int(a), int(b)))
                for a, b in social
                if a != b
            }
            edges = np.array(sorted(uniq), dtype=np.int64) if uniq else np.empty((0, 2), dtype=np.int64)
        return cls(num_users=m, num_items=n, split=split, social_edges=edges)
