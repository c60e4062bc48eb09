import numpy as np
import pytest

from disrec.augmentation import (
    COLLABORATIVE,
    SOCIAL,
    AugmentationSpec,
    AugmentedView,
    edge_add,
    edge_dropout,
    make_views,
    node_dropout,
)
from disrec.data import build_social_adjacency


def random_social_edges(m, count, seed):
    rng = np.random.default_rng(seed)
    pairs = set()
    while len(pairs) < count:
        u, v = rng.integers(0, m, size=2)
        if u != v:
            pairs.add((min(u, v), max(u, v)))
    return np.array(sorted(pairs), dtype=np.int64)


class TestSpec:
    def test_parse(self):
        spec = AugmentationSpec.parse("edge_drop:0.25")
        assert spec.kind == "edge_drop" and spec.rate == 0.25

    def test_parse_identity(self):
        assert AugmentationSpec.parse("identity").kind == "identity"

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            AugmentationSpec.parse("edge_flip:0.1")

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            AugmentationSpec("edge_drop", 1.5)

    def test_view_id_checked(self):
        adj = build_social_adjacency([(0, 1)], 2)
        with pytest.raises(ValueError):
            AugmentedView(adj, AugmentationSpec("identity"), view_id=3)


class TestEdgeDropout:
    def test_rate_zero_identity(self):
        edges = random_social_edges(30, 40, 0)
        out = edge_dropout(edges, 0.0, seed=5)
        assert np.array_equal(out, edges)

    def test_rate_one_empty(self):
        edges = random_social_edges(30, 40, 0)
        assert len(edge_dropout(edges, 1.0, seed=5)) == 0

    def test_subset_property(self):
        edges = random_social_edges(50, 120, 1)
        out = edge_dropout(edges, 0.3, seed=9)
        kept = {tuple(e) for e in out}
        assert kept <= {tuple(e) for e in edges}

    def test_determinism(self):
        edges = random_social_edges(50, 120, 1)
        a = edge_dropout(edges, 0.3, seed=9)
        b = edge_dropout(edges, 0.3, seed=9)
        assert np.array_equal(a, b)

    def test_binomial_interval_10k(self):
        rng = np.random.default_rng(0)
        edges = np.array([(u, 10_000 + k) for k, u in enumerate(rng.integers(0, 500, size=10_000))])
        kept = len(edge_dropout(edges, 0.2, seed=3))
        assert 7_700 <= kept <= 8_300


class TestNodeDropout:
    def test_rate_zero_identity(self):
        edges = random_social_edges(30, 50, 2)
        assert np.array_equal(node_dropout(edges, 0.0, 1, 30), edges)

    def test_incidence_property(self):
        edges = random_social_edges(40, 100, 3)
        rng = np.random.default_rng(7)
        out = node_dropout(edges, 0.25, seed=7, num_users=40)
        dropped = set(rng.choice(40, size=10, replace=False).tolist())
        for u, v in out:
            assert u not in dropped and v not in dropped

    def test_star_graph_center_dropped(self):
        # dropping the hub from a star leaves no edges; rate 1 drops all nodes
        edges = np.array([(0, i) for i in range(1, 10)])
        out = node_dropout(edges, 1.0, seed=0, num_users=10)
        assert len(out) == 0

    def test_bipartite_drops_both_sides(self):
        edges = np.array([(u, i) for u in range(10) for i in range(10)])
        out = node_dropout(edges, 0.3, seed=4, num_users=10, num_items=10)
        rng = np.random.default_rng(4)
        dead_users = set(rng.choice(10, size=3, replace=False).tolist())
        dead_items = set(rng.choice(10, size=3, replace=False).tolist())
        assert len(out) == (10 - 3) * (10 - 3)
        for u, i in out:
            assert u not in dead_users and i not in dead_items


class TestEdgeAdd:
    def test_rate_zero_identity(self):
        edges = random_social_edges(30, 40, 5)
        assert np.array_equal(edge_add(edges, 0.0, 1, 30), edges)

    def test_superset_and_count(self):
        edges = random_social_edges(60, 100, 6)
        out = edge_add(edges, 0.1, seed=2, num_users=60)
        assert len(out) == 110
        assert {tuple(e) for e in edges} <= {tuple(e) for e in out}

    def test_added_edges_are_new_and_distinct(self):
        edges = random_social_edges(25, 50, 7)
        out = edge_add(edges, 0.5, seed=2, num_users=25)
        canon = [(min(u, v), max(u, v)) for u, v in out]
        assert len(set(canon)) == len(canon)
        assert all(u != v for u, v in out)

    def test_saturated_graph_warns(self):
        edges = np.array([[0, 1]])
        with pytest.warns(UserWarning, match="non-edges"):
            out = edge_add(edges, 1.0, seed=0, num_users=2)
        assert np.array_equal(out, edges)

    def test_dense_graph_falls_back_to_enumeration(self):
        m = 8
        all_pairs = [(u, v) for u in range(m) for v in range(u + 1, m)]
        edges = np.array(all_pairs[:-3])
        out = edge_add(edges, 0.12, seed=0, num_users=m)  # wants 3, exactly 3 exist
        assert len(out) == len(edges) + 3


class TestMakeViews:
    def test_identity_views_equal_base(self):
        edges = random_social_edges(15, 25, 8)
        spec = AugmentationSpec("identity")
        v1, v2 = make_views(SOCIAL, edges, spec, spec, 15)
        base = build_social_adjacency(edges, 15, add_self_loops=True)
        assert v1.adjacency == base
        assert v2.adjacency == base
        assert (v1.view_id, v2.view_id) == (1, 2)

    def test_different_seeds_differ(self):
        edges = random_social_edges(100, 1000, 9)
        s1 = AugmentationSpec("edge_drop", 0.3, seed=1)
        s2 = AugmentationSpec("edge_drop", 0.3, seed=2)
        v1, v2 = make_views(SOCIAL, edges, s1, s2, 100)
        assert v1.adjacency != v2.adjacency

    def test_determinism(self):
        edges = random_social_edges(40, 120, 10)
        s1 = AugmentationSpec("edge_drop", 0.2, seed=5)
        s2 = AugmentationSpec("edge_add", 0.2, seed=6)
        a = make_views(SOCIAL, edges, s1, s2, 40)
        b = make_views(SOCIAL, edges, s1, s2, 40)
        assert a[0].adjacency == b[0].adjacency
        assert a[1].adjacency == b[1].adjacency

    def test_edge_add_rejected_for_collaborative(self):
        edges = np.array([(0, 0), (1, 1)])
        good = AugmentationSpec("edge_drop", 0.1)
        bad = AugmentationSpec("edge_add", 0.1)
        with pytest.raises(ValueError, match="social"):
            make_views(COLLABORATIVE, edges, good, bad, 2, num_items=2)

    def test_renormalization_matches_dense_oracle(self):
        # after any perturbation the weights are the symmetric normalization
        # of the perturbed graph
        rng = np.random.default_rng(11)
        for kind in ("edge_drop", "node_drop", "edge_add"):
            edges = random_social_edges(18, 30, rng.integers(1000))
            spec = AugmentationSpec(kind, 0.3, seed=int(rng.integers(1000)))
            view, _ = make_views(SOCIAL, edges, spec, AugmentationSpec("identity"), 18)
            from disrec.augmentation import apply_spec

            perturbed = apply_spec(SOCIAL, edges, spec, 18, None)
            dense = np.zeros((18, 18))
            for u, v in perturbed:
                dense[u, v] = dense[v, u] = 1.0
            dense += np.eye(18)
            deg = dense.sum(axis=1)
            inv = np.where(deg > 0, 1 / np.sqrt(deg), 0.0)
            np.testing.assert_allclose(view.adjacency.to_dense(), inv[:, None] * dense * inv, atol=1e-12)
