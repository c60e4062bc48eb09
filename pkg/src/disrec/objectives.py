"""Scalar training objectives.

The contrastive machinery is one temperature-scaled cosine InfoNCE term
(:func:`info_nce_term`), averaged symmetrically over both view directions
(:func:`symmetric_contrastive`), then combined across domains
(:func:`cross_domain_loss`, :func:`domain_specific_losses`).  Ranking is
trained with the pairwise BPR loss on inner-product scores, and
:func:`joint_objective` assembles the weighted total.

Every loss accepts either plain arrays (returning a float) or tape tensors
(returning a scalar tensor), so the same code path that trains the model is
the one checked against the naive references in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor

__all__ = [
    "ContrastiveBatch",
    "BprTriplet",
    "LossWeights",
    "NonFiniteLossError",
    "cosine_affinity",
    "info_nce_term",
    "symmetric_contrastive",
    "cross_domain_loss",
    "domain_specific_losses",
    "bpr_loss",
    "joint_objective",
]

NORM_EPS = ad.NORM_EPS


class NonFiniteLossError(NonFiniteError):
    """A loss component evaluated to NaN or infinity."""


@dataclass(frozen=True)
class ContrastiveBatch:
    """Two aligned view matrices (w, d) plus the softmax temperature."""

    z1: np.ndarray
    z2: np.ndarray
    tau: float

    def __post_init__(self):
        z1 = np.asarray(self.z1, dtype=np.float64)
        z2 = np.asarray(self.z2, dtype=np.float64)
        object.__setattr__(self, "z1", z1)
        object.__setattr__(self, "z2", z2)
        if z1.shape != z2.shape or z1.ndim != 2:
            raise ValueError(f"views must share a (w, d) shape, got {z1.shape} and {z2.shape}")
        if z1.shape[0] < 2:
            raise ValueError("contrastive batch needs at least two instances")
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        for name, z in (("z1", z1), ("z2", z2)):
            if np.any(np.all(z == 0.0, axis=1)):
                raise ValueError(f"{name} contains an all-zero row; cosine is undefined")

    @property
    def size(self) -> int:
        return self.z1.shape[0]


@dataclass(frozen=True)
class BprTriplet:
    user: int
    pos_item: int
    neg_item: int


@dataclass(frozen=True)
class LossWeights:
    """Balance weights: lambda1 scales the domain-specific losses, lambda2
    the cross-domain loss, lambda3 the squared-L2 regularizer."""

    lambda1: float = 0.0
    lambda2: float = 0.0
    lambda3: float = 0.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


def cosine_affinity(z1, z2, tau: float) -> float:
    """Temperature-scaled cosine similarity of two vectors, in [-1/tau, 1/tau].

    Norms carry an epsilon guard so a zero vector degrades to affinity 0
    instead of a hard error mid-training.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    n1 = np.linalg.norm(z1) + NORM_EPS
    n2 = np.linalg.norm(z2) + NORM_EPS
    return float(np.dot(z1, z2) / (n1 * n2) / tau)


def info_nce_term(j: int, batch: ContrastiveBatch, direction: str = "1->2") -> float:
    """One InfoNCE term: anchor instance ``j`` of one view against its other-view
    positive, with every other instance of both views as negatives."""
    if direction not in ("1->2", "2->1"):
        raise ValueError(f"direction must be '1->2' or '2->1', got {direction!r}")
    anchor_view, other_view = (batch.z1, batch.z2) if direction == "1->2" else (batch.z2, batch.z1)
    anchor = anchor_view[j]
    pos = cosine_affinity(anchor, other_view[j], batch.tau)
    logits = [pos]
    for view in (batch.z1, batch.z2):
        for k in range(batch.size):
            if k != j:
                logits.append(cosine_affinity(anchor, view[k], batch.tau))
    logits = np.asarray(logits)
    high = logits.max()
    return float(high + np.log(np.sum(np.exp(logits - high))) - pos)


def _is_tensor(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def _symmetric_sum(za: Tensor, zb: Tensor, tau: float) -> Tensor:
    """Sum over instances of both direction terms for the canonical pair
    (za, zb); see :func:`symmetric_contrastive` for the ordering contract."""
    # scaling the normalized rows by 1/sqrt(tau) scales every affinity by
    # 1/tau while touching (w, d) instead of (w, w) entries
    root = 1.0 / np.sqrt(tau)
    a = ad.scale(ad.normalize_rows(za), root)
    b = ad.scale(ad.normalize_rows(zb), root)
    s_ab = ad.matmul_nt(a, b)
    s_aa = ad.matmul_nt(a, a)
    s_bb = ad.matmul_nt(b, b)
    pos = ad.take_diag(s_ab)
    # anchors contrast against all entries of the cross-view block and all
    # non-self entries of their own view's block
    lse_a = ad.paired_logsumexp_excl_diag(s_ab, s_aa)
    lse_b = ad.paired_logsumexp_excl_diag(ad.transpose(s_ab), s_bb)
    return ad.sum_all(ad.add(ad.sub(lse_a, pos), ad.sub(lse_b, pos)))


def symmetric_contrastive(z1, z2, tau: float):
    """Mean InfoNCE over both directions: ``(1/2w) sum_j [term(j,1->2) + term(j,2->1)]``.

    Exactly symmetric in its arguments: the operand pair is put into a
    canonical byte order before evaluation, so ``L(Z1, Z2)`` and ``L(Z2, Z1)``
    execute identical float operations.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    t1, t2 = ad.as_tensor(z1), ad.as_tensor(z2)
    if t1.value.shape != t2.value.shape or t1.value.ndim != 2:
        raise ValueError(
            f"views must share a (w, d) shape, got {t1.value.shape} and {t2.value.shape}"
        )
    w = t1.value.shape[0]
    if w < 2:
        raise ValueError("contrastive loss needs at least two instances")
    if t2.value.tobytes() < t1.value.tobytes():
        t1, t2 = t2, t1
    out = ad.scale(_symmetric_sum(t1, t2, tau), 1.0 / (2 * w))
    return out if _is_tensor(z1, z2) else float(out.value)


def cross_domain_loss(social_v1, social_v2, item_v1, item_v2, tau: float):
    """Contrast projected social-user views against projected collaborative
    user views, over all four view pairings."""
    parts = [
        symmetric_contrastive(social_v1, item_v1, tau),
        symmetric_contrastive(social_v1, item_v2, tau),
        symmetric_contrastive(social_v2, item_v1, tau),
        symmetric_contrastive(social_v2, item_v2, tau),
    ]
    if _is_tensor(social_v1, social_v2, item_v1, item_v2):
        total = parts[0]
        for p in parts[1:]:
            total = ad.add(total, p)
        return total
    return float(sum(parts))


def domain_specific_losses(user_v1, user_v2, item_v1, item_v2, social_v1, social_v2, tau: float):
    """Per-domain view agreement: raw collaborative representations for the
    interaction domain, projected representations for the social domain.

    Returns ``(collaborative_loss, social_loss)``; the social term is 0 when
    no social views are given (social-free mode).
    """
    users = symmetric_contrastive(user_v1, user_v2, tau)
    items = symmetric_contrastive(item_v1, item_v2, tau)
    collaborative = ad.add(users, items) if _is_tensor(users, items) else users + items
    if social_v1 is None or social_v2 is None:
        return collaborative, 0.0
    social = symmetric_contrastive(social_v1, social_v2, tau)
    return collaborative, social


def bpr_loss(triplets, user_repr, item_repr):
    """Pairwise ranking loss ``sum -log sigma(y_ui - y_uj)`` over the batch.

    ``triplets`` is an integer array of (user, positive item, negative item)
    rows; scores are inner products of the final representations.  Computed
    as ``softplus(y_uj - y_ui)`` so large score gaps cannot overflow.
    """
    triplets = np.asarray(
        [(t.user, t.pos_item, t.neg_item) for t in triplets]
        if len(triplets) and isinstance(triplets[0], BprTriplet)
        else triplets,
        dtype=np.int64,
    ).reshape(-1, 3)
    u = ad.gather_rows(user_repr, triplets[:, 0])
    pos = ad.gather_rows(item_repr, triplets[:, 1])
    neg = ad.gather_rows(item_repr, triplets[:, 2])
    margin = ad.sub(ad.rowwise_dot(u, pos), ad.rowwise_dot(u, neg))
    out = ad.sum_all(ad.softplus(ad.neg(margin)))
    return out if _is_tensor(user_repr, item_repr) else float(out.value)


def _component_value(x) -> float:
    return float(x.value) if isinstance(x, Tensor) else float(x)


def joint_objective(main, collaborative, social, cross_domain, regularizer, weights: LossWeights):
    """Weighted total ``main + l1*(collab + social) + l2*cross + l3*reg``.

    Raises :class:`NonFiniteLossError` naming the first non-finite component
    so a diverging run aborts with a usable diagnostic.
    """
    parts = {
        "main": main,
        "collaborative": collaborative,
        "social": social,
        "cross_domain": cross_domain,
        "regularizer": regularizer,
    }
    for name, value in parts.items():
        if not math.isfinite(_component_value(value)):
            raise NonFiniteLossError(f"loss component {name!r} is not finite")
    if _is_tensor(*parts.values()):
        total = ad.as_tensor(main)
        if weights.lambda1 != 0.0:
            total = ad.add(total, ad.scale(ad.add(ad.as_tensor(collaborative), ad.as_tensor(social)), weights.lambda1))
        if weights.lambda2 != 0.0:
            total = ad.add(total, ad.scale(ad.as_tensor(cross_domain), weights.lambda2))
        if weights.lambda3 != 0.0:
            total = ad.add(total, ad.scale(ad.as_tensor(regularizer), weights.lambda3))
        return total
    return (
        _component_value(main)
        + weights.lambda1 * (_component_value(collaborative) + _component_value(social))
        + weights.lambda2 * _component_value(cross_domain)
        + weights.lambda3 * _component_value(regularizer)
    )
