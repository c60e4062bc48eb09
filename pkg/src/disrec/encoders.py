"""Representation encoders for both domains and the semantic projectors.

The collaborative encoder is a light graph convolution: weightless,
nonlinearity-free neighbor averaging over the bipartite block adjacency
with a uniform mean over layer outputs 0..K.  The social encoder is a
standard weighted graph convolution with a rectifier on every layer except
the last, so representations are not clamped to the nonnegative orthant
before cosine similarities.  Projectors are small row-wise MLPs mapping
either domain's user representations into a shared space.

All forwards are pure functions of (adjacency, parameters); the ``*_forward``
wrappers take and return plain arrays, while the tensor-level functions are
used inside the training tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .sparse import SparseAdjacency

__all__ = [
    "ParameterSet",
    "init_parameters",
    "light_gcn",
    "light_gcn_forward",
    "social_gcn",
    "social_gcn_forward",
    "project",
    "project_forward",
    "final_representations",
]


@dataclass
class ParameterSet:
    """All trainable values; fields hold arrays (or tensors inside a tape).

    ``user_emb``/``item_emb`` are the collaborative-domain base embeddings,
    ``social_user_emb`` the social-domain user table.  ``social_weights``
    holds one (d, d) matrix per social layer; each projector is a list of
    (weight, bias) pairs.
    """

    user_emb: np.ndarray | Tensor
    item_emb: np.ndarray | Tensor
    social_user_emb: np.ndarray | Tensor
    social_weights: list = field(default_factory=list)
    social_proj: list = field(default_factory=list)  # [(W, b), ...]
    item_proj: list = field(default_factory=list)

    def named_arrays(self):
        """Deterministically ordered (name, array) pairs over every leaf."""
        yield "user_emb", self.user_emb
        yield "item_emb", self.item_emb
        yield "social_user_emb", self.social_user_emb
        for i, w in enumerate(self.social_weights):
            yield f"social_weights.{i}", w
        for prefix, stack in (("social_proj", self.social_proj), ("item_proj", self.item_proj)):
            for i, (w, b) in enumerate(stack):
                yield f"{prefix}.{i}.weight", w
                yield f"{prefix}.{i}.bias", b

    def to_flat(self) -> dict:
        return dict(self.named_arrays())

    @classmethod
    def from_flat(cls, flat: dict) -> "ParameterSet":
        """Rebuild the structured set from ``named_arrays`` style keys."""
        social_weights = []
        for i in range(len([k for k in flat if k.startswith("social_weights.")])):
            social_weights.append(flat[f"social_weights.{i}"])
        stacks = {}
        for prefix in ("social_proj", "item_proj"):
            depth = len([k for k in flat if k.startswith(prefix) and k.endswith(".weight")])
            stacks[prefix] = [
                (flat[f"{prefix}.{i}.weight"], flat[f"{prefix}.{i}.bias"]) for i in range(depth)
            ]
        return cls(
            user_emb=flat["user_emb"],
            item_emb=flat["item_emb"],
            social_user_emb=flat["social_user_emb"],
            social_weights=social_weights,
            social_proj=stacks["social_proj"],
            item_proj=stacks["item_proj"],
        )

    def copy(self) -> "ParameterSet":
        return ParameterSet.from_flat({k: np.array(v, copy=True) for k, v in self.named_arrays()})

    def checksum(self, name: str) -> float:
        """Cheap change detector for one leaf (sum of absolute values)."""
        return float(np.abs(dict(self.named_arrays())[name]).sum())


def init_parameters(
    num_users: int,
    num_items: int,
    dim: int,
    social_layers: int = 2,
    projector_depth: int = 2,
    seed: int = 0,
) -> ParameterSet:
    """Centered-uniform initialization with scale ``1/sqrt(dim)``.

    Biases draw from the same distribution; with zero biases a rectifier-dead
    row would project to an exact zero vector, whose cosine gradient is
    degenerate.
    """
    if dim < 1 or social_layers < 1 or projector_depth < 1:
        raise ValueError("dim, social_layers and projector_depth must be >= 1")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(dim)

    def uniform(*shape):
        return rng.uniform(-bound, bound, size=shape)

    def mlp():
        return [(uniform(dim, dim), uniform(dim)) for _ in range(projector_depth)]

    return ParameterSet(
        user_emb=uniform(num_users, dim),
        item_emb=uniform(num_items, dim),
        social_user_emb=uniform(num_users, dim),
        social_weights=[uniform(dim, dim) for _ in range(social_layers)],
        social_proj=mlp(),
        item_proj=mlp(),
    )


def light_gcn(adj: SparseAdjacency, user_emb, item_emb, num_layers: int):
    """Light graph convolution over the bipartite block adjacency.

    Returns the (user, item) blocks of the mean over layer outputs 0..K.
    Accepts arrays or tensors; gradients flow only through tensor inputs.
    """
    user_emb, item_emb = ad.as_tensor(user_emb), ad.as_tensor(item_emb)
    m, n = user_emb.value.shape[0], item_emb.value.shape[0]
    if adj.rows != m + n or adj.cols != m + n:
        raise ValueError(
            f"adjacency is {adj.rows}x{adj.cols}, expected {(m + n)}x{(m + n)} "
            f"for {m} users and {n} items"
        )
    if num_layers < 0:
        raise ValueError("num_layers must be >= 0")
    h = ad.vstack2(user_emb, item_emb)
    layers = [h]
    for _ in range(num_layers):
        h = ad.spmm(adj, h)
        layers.append(h)
    out = ad.average(layers)
    return ad.slice_rows(out, 0, m), ad.slice_rows(out, m, m + n)


def light_gcn_forward(adj: SparseAdjacency, user_emb, item_emb, num_layers: int):
    users, items = light_gcn(adj, np.asarray(user_emb), np.asarray(item_emb), num_layers)
    return users.value, items.value


def final_representations(adj_full: SparseAdjacency, user_emb, item_emb, num_layers: int):
    """Prediction-time representations: light convolution on the un-augmented
    training adjacency (identical computation to :func:`light_gcn_forward`)."""
    return light_gcn_forward(adj_full, user_emb, item_emb, num_layers)


def social_gcn(adj: SparseAdjacency, emb, layer_weights):
    """Weighted graph convolution ``H <- act(A H W)``; linear last layer."""
    h = ad.as_tensor(emb)
    if adj.rows != adj.cols or adj.rows != h.value.shape[0]:
        raise ValueError(
            f"social adjacency is {adj.rows}x{adj.cols}, embeddings have "
            f"{h.value.shape[0]} rows"
        )
    if not layer_weights:
        raise ValueError("social encoder needs at least one layer")
    last = len(layer_weights) - 1
    for i, w in enumerate(layer_weights):
        h = ad.matmul(ad.spmm(adj, h), ad.as_tensor(w))
        if i != last:
            h = ad.relu(h)
    return h


def social_gcn_forward(adj: SparseAdjacency, emb, layer_weights):
    return social_gcn(adj, np.asarray(emb), [np.asarray(w) for w in layer_weights]).value


def project(x, mlp_layers):
    """Row-wise MLP projection; ``None`` or an empty stack is the identity
    (the no-projector ablation)."""
    h = ad.as_tensor(x)
    if not mlp_layers:
        return h
    last = len(mlp_layers) - 1
    for i, (w, b) in enumerate(mlp_layers):
        h = ad.add_bias(ad.matmul(h, ad.as_tensor(w)), ad.as_tensor(b))
        if i != last:
            h = ad.relu(h)
    return h


def project_forward(x, mlp_layers):
    layers = None
    if mlp_layers:
        layers = [(np.asarray(w), np.asarray(b)) for w, b in mlp_layers]
    return project(np.asarray(x), layers).value
