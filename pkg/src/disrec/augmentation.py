"""Stochastic graph views for contrastive training.

Each epoch the trainer perturbs the raw edge sets of both domains (edge
dropout, node dropout, and, for the social graph only, edge adding), then
rebuilds the normalized adjacency of the perturbed graph.  Degrees are
recomputed on the perturbed graph, so isolated nodes simply stop receiving
neighbor messages.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import build_interaction_adjacency, build_social_adjacency
from .sparse import SparseAdjacency

KINDS = ("identity", "edge_drop", "node_drop", "edge_add")

SOCIAL = "social"
COLLABORATIVE = "collaborative"


@dataclass(frozen=True)
class AugmentationSpec:
    """One perturbation: ``kind`` in {identity, edge_drop, node_drop, edge_add}."""

    kind: str
    rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate must be in [0, 1], got {self.rate}")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "AugmentationSpec":
        """Parse the config form ``kind:rate`` (rate optional for identity)."""
        kind, _, rate = text.strip().partition(":")
        if kind == "identity" and not rate:
            return cls("identity", 0.0, seed)
        try:
            return cls(kind, float(rate), seed)
        except ValueError as exc:
            raise ValueError(f"bad augmentation spec {text!r}: {exc}") from None


@dataclass(frozen=True)
class AugmentedView:
    """A re-normalized adjacency plus the spec that produced it."""

    adjacency: SparseAdjacency
    spec: AugmentationSpec
    view_id: int

    def __post_init__(self):
        if self.view_id not in (1, 2):
            raise ValueError(f"view_id must be 1 or 2, got {self.view_id}")


def _as_edges(edges) -> np.ndarray:
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def edge_dropout(edges, rate: float, seed: int) -> np.ndarray:
    """Keep each (undirected) edge independently with probability 1-rate."""
    edges = _as_edges(edges)
    if rate == 0.0 or len(edges) == 0:
        return edges.copy()
    rng = np.random.default_rng(seed)
    keep = rng.random(len(edges)) >= rate
    return edges[keep]


def node_dropout(
    edges, rate: float, seed: int, num_users: int, num_items: int | None = None
) -> np.ndarray:
    """Remove every edge incident to a random ``rate`` fraction of nodes.

    For the bipartite domain users and items are dropped independently at
    the same rate; for the square social domain only users exist.
    """
    edges = _as_edges(edges)
    if rate == 0.0 or len(edges) == 0:
        return edges.copy()
    rng = np.random.default_rng(seed)
    drop_users = rng.choice(num_users, size=int(rate * num_users), replace=False)
    user_dead = np.zeros(num_users, dtype=bool)
    user_dead[drop_users] = True
    if num_items is None:
        keep = ~(user_dead[edges[:, 0]] | user_dead[edges[:, 1]])
    else:
        drop_items = rng.choice(num_items, size=int(rate * num_items), replace=False)
        item_dead = np.zeros(num_items, dtype=bool)
        item_dead[drop_items] = True
        keep = ~(user_dead[edges[:, 0]] | item_dead[edges[:, 1]])
    return edges[keep]


def edge_add(edges, rate: float, seed: int, num_users: int) -> np.ndarray:
    """Add ``floor(rate * |E|)`` distinct non-existing undirected user pairs.

    Social domain only.  If the graph is too dense to supply the requested
    count, adds as many as exist and warns.
    """
    edges = _as_edges(edges)
    want = int(rate * len(edges))
    if want == 0:
        return edges.copy()
    existing = {(min(int(a), int(b)), max(int(a), int(b))) for a, b in edges}
    available = num_users * (num_users - 1) // 2 - len(existing)
    if available < want:
        warnings.warn(
            f"requested {want} new social edges but only {available} "
            f"non-edges exist; adding {available}",
            stacklevel=2,
        )
        want = available
    if want == 0:
        return edges.copy()
    rng = np.random.default_rng(seed)
    added: list[tuple[int, int]] = []
    attempts = 0
    max_attempts = 200 * want + 1000
    while len(added) < want and attempts < max_attempts:
        u, v = rng.integers(0, num_users, size=2)
        attempts += 1
        if u == v:
            continue
        pair = (min(int(u), int(v)), max(int(u), int(v)))
        if pair in existing:
            continue
        existing.add(pair)
        added.append(pair)
    if len(added) < want:
        # dense graph: rejection sampling stalled, enumerate the complement
        remaining = [
            (u, v)
            for u in range(num_users)
            for v in range(u + 1, num_users)
            if (u, v) not in existing
        ]
        extra = rng.choice(len(remaining), size=want - len(added), replace=False)
        added.extend(remaining[i] for i in sorted(extra))
    return np.concatenate([edges, np.array(added, dtype=np.int64)])


def apply_spec(
    domain: str, edges, spec: AugmentationSpec, num_users: int, num_items: int | None
) -> np.ndarray:
    if spec.kind == "identity":
        return _as_edges(edges).copy()
    if spec.kind == "edge_drop":
        return edge_dropout(edges, spec.rate, spec.seed)
    if spec.kind == "node_drop":
        return node_dropout(edges, spec.rate, spec.seed, num_users, num_items)
    if spec.kind == "edge_add":
        if domain != SOCIAL:
            raise ValueError("edge_add applies only to the social domain")
        return edge_add(edges, spec.rate, spec.seed, num_users)
    raise ValueError(f"unknown augmentation kind {spec.kind!r}")


def make_views(
    domain: str,
    edges,
    spec1: AugmentationSpec,
    spec2: AugmentationSpec,
    num_users: int,
    num_items: int | None = None,
    social_self_loops: bool = True,
) -> tuple[AugmentedView, AugmentedView]:
    """Two independently perturbed, re-normalized adjacencies of one domain."""
    if domain not in (SOCIAL, COLLABORATIVE):
        raise ValueError(f"unknown domain {domain!r}")
    if domain == COLLABORATIVE and num_items is None:
        raise ValueError("collaborative domain needs num_items")
    views = []
    for view_id, spec in ((1, spec1), (2, spec2)):
        perturbed = apply_spec(domain, edges, spec, num_users, num_items)
        if domain == SOCIAL:
            adj = build_social_adjacency(perturbed, num_users, add_self_loops=social_self_loops)
        else:
            adj = build_interaction_adjacency(perturbed, num_users, num_items)
        views.append(AugmentedView(adjacency=adj, spec=spec, view_id=view_id))
    return views[0], views[1]
