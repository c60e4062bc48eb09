"""Full-ranking top-K evaluation: NDCG@K, Recall@K, Precision@K.

Every non-excluded item is scored by the inner product of the final
representations, ranked descending with ties broken by ascending item index,
and the cutoff metrics are averaged over users that have at least one
relevant item in the evaluated fold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RankingReport",
    "rank_items",
    "metrics_at_k",
    "evaluate_topk",
    "evaluate_params",
    "format_report",
    "machine_lines",
]


@dataclass
class RankingReport:
    k: int
    ndcg: float
    recall: float
    precision: float
    users_evaluated: int
    per_user: list[tuple[int, tuple[float, float, float]]] | None = None


def rank_items(user: int, user_factors, item_factors, exclude=()) -> np.ndarray:
    """All items ordered by descending score; excluded items are removed.

    Ties break by ascending item index, so rankings are deterministic.
    """
    user_factors = np.asarray(user_factors)
    item_factors = np.asarray(item_factors)
    scores = item_factors @ user_factors[user]
    if len(exclude):
        keep = np.ones(len(scores), dtype=bool)
        keep[np.fromiter(exclude, dtype=np.int64)] = False
        candidates = np.flatnonzero(keep)
    else:
        candidates = np.arange(len(scores))
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order]


def metrics_at_k(ranked, relevant, k: int = 5) -> tuple[float, float, float]:
    """(ndcg, recall, precision) at cutoff ``k``.

    Gains are binary; DCG discounts by ``1/log2(rank+1)`` and IDCG places
    ``min(|relevant|, k)`` hits at the top.
    """
    relevant = set(int(r) for r in relevant)
    if not relevant:
        raise ValueError("metrics need at least one relevant item")
    top = np.asarray(ranked)[:k]
    hit_ranks = [r + 1 for r, item in enumerate(top) if int(item) in relevant]
    hits = len(hit_ranks)
    dcg = sum(1.0 / np.log2(rank + 1) for rank in hit_ranks)
    idcg = sum(1.0 / np.log2(rank + 1) for rank in range(1, min(len(relevant), k) + 1))
    return dcg / idcg, hits / len(relevant), hits / k


def evaluate_topk(
    user_factors,
    item_factors,
    train_items,
    relevant_by_user: dict[int, set[int]],
    k: int = 5,
    exclude_train: bool = True,
    collect_per_user: bool = False,
) -> RankingReport:
    """Average metrics over every user with at least one relevant item.

    ``train_items`` maps user index to the items excluded from ranking
    (pass empty sets or set ``exclude_train=False`` to rank everything).
    """
    users = sorted(u for u, rel in relevant_by_user.items() if rel)
    if not users:
        raise ValueError("no evaluable users: every user has an empty relevant set")
    totals = np.zeros(3)
    per_user = [] if collect_per_user else None
    for u in users:
        exclude = train_items[u] if exclude_train else ()
        ranked = rank_items(u, user_factors, item_factors, exclude)
        triple = metrics_at_k(ranked, relevant_by_user[u], k)
        totals += triple
        if per_user is not None:
            per_user.append((u, triple))
    ndcg, recall, precision = totals / len(users)
    return RankingReport(
        k=k,
        ndcg=float(ndcg),
        recall=float(recall),
        precision=float(precision),
        users_evaluated=len(users),
        per_user=per_user,
    )


def evaluate_params(dataset, params, config, fold: str = "test", k: int | None = None,
                    exclude_train: bool = True, collect_per_user: bool = False) -> RankingReport:
    """Convenience wrapper: final representations from the trained parameters,
    then :func:`evaluate_topk` on one fold of the dataset split."""
    from .encoders import final_representations

    user_repr, item_repr = final_representations(
        dataset.interaction_adj, params.user_emb, params.item_emb, config.item_layers
    )
    return evaluate_topk(
        user_repr,
        item_repr,
        dataset.train_items,
        dataset.items_in_fold(fold),
        k=config.eval_k if k is None else k,
        exclude_train=exclude_train,
        collect_per_user=collect_per_user,
    )


def format_report(report: RankingReport, title: str = "") -> str:
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'metric':<12}{'k':>4}  value")
    for name, value in (("ndcg", report.ndcg), ("recall", report.recall), ("precision", report.precision)):
        lines.append(f"{name:<12}{report.k:>4}  {value:.6f}")
    lines.append(f"users evaluated: {report.users_evaluated}")
    return "\n".join(lines) + "\n"


def machine_lines(report: RankingReport) -> str:
    """The machine-readable ``metric<TAB>k<TAB>value`` form."""
    return (
        f"ndcg\t{report.k}\t{report.ndcg:.10f}\n"
        f"recall\t{report.k}\t{report.recall:.10f}\n"
        f"precision\t{report.k}\t{report.precision:.10f}\n"
    )
