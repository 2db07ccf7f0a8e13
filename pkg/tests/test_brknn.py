import numpy as np
import pytest

from gsmi.brknn import (
    PseudoUser,
    batch_reverse_topk,
    can_prune_node,
    can_prune_pseudo_user,
    can_prune_user,
    collect_candidates,
    score_bound_list,
    socially_relevant_users,
    top_k_query,
)
from gsmi.geo_core import Location, Poi, User
from gsmi.oracles import oracle_brknn, oracle_partial_topk, oracle_topk

from conftest import build_ctx, make_instance, manual_dataset, path_road


def random_instances(count, **kw):
    for seed in range(count):
        ds = make_instance(seed, **kw)
        alpha = (0.0, 0.3, 0.6, 1.0)[seed % 4]
        k = (1, 2, 3, 5)[seed % 4]
        yield seed, ds, build_ctx(ds, alpha=alpha), k


class TestTopK:
    def test_equals_linear_scan_on_random_users(self):
        for seed, ds, ctx, k in random_instances(8):
            for u in range(len(ds.users)):
                assert top_k_query(ctx, u, k) == oracle_topk(ds, u, k, ctx.params), (seed, u)

    def test_k_larger_than_qualifying_pois_returns_all(self, toy1, toy1_ctx):
        for u in range(len(toy1.users)):
            got = top_k_query(toy1_ctx, u, 100)
            want = oracle_topk(toy1, u, 100, toy1_ctx.params)
            assert got == want
            assert all(s > 0 for _, s in got)

    def test_rejects_bad_k(self, toy1_ctx):
        with pytest.raises(ValueError):
            top_k_query(toy1_ctx, 0, 0)


class TestScoreBoundList:
    def test_equals_brute_force_partial_topk(self):
        for seed, ds, ctx, k in random_instances(8):
            for u in range(len(ds.users)):
                got = ctx.sb_list(u, k)
                w = oracle_partial_topk(ds, u, k, ctx.params)
                want = tuple(w[:k]) + ((None, 0.0),) * (k - len(w[:k]))
                assert got.entries == want, (seed, u)

    def test_frozen_toy_value(self, toy1_ctx):
        got = toy1_ctx.sb_list(2, 2)
        assert got.entries[0][0] == 1
        assert got.entries[0][1] == pytest.approx(0.0046892166082024445, rel=1e-12)
        assert got.entries[1][0] == 2
        assert got.entries[1][1] == pytest.approx(0.003485264411177778, rel=1e-12)

    def test_keywordless_user_gets_zero_padding(self, toy1, toy1_ctx):
        keywordless = [u.id for u in toy1.users if not u.keywords]
        assert keywordless, "toy fixture should include a keyword-free user"
        sb = toy1_ctx.sb_list(keywordless[0], 3)
        assert sb.entries == ((None, 0.0),) * 3
        assert sb.s_k == 0.0


class TestPairPruning:
    def test_zero_bound_never_prunes_positive_pair(self, toy1, toy1_ctx):
        keywordless = [u.id for u in toy1.users if not u.keywords][0]
        for p in range(len(toy1.pois)):
            if toy1_ctx.score_pair(keywordless, p) > 0:
                assert not can_prune_user(toy1_ctx, keywordless, p, k=2)

    def test_pruned_pairs_never_in_oracle_result(self):
        for seed, ds, ctx, k in random_instances(6):
            members = oracle_brknn(ds, range(len(ds.pois)), k, ctx.params)
            for u in range(len(ds.users)):
                for p in range(len(ds.pois)):
                    if can_prune_user(ctx, u, p, k=k):
                        assert u not in members[p], (seed, u, p)

    def test_prunes_when_k_better_pois_exist(self):
        for seed, ds, ctx, k in random_instances(4):
            pruned = sum(
                can_prune_user(ctx, u, p, k=k)
                for u in range(len(ds.users))
                for p in range(len(ds.pois))
            )
            if pruned:
                return
        pytest.skip("no pair-level prune fired on these instances")


class TestBorderPruning:
    def test_empty_keyword_set_is_vacuously_prunable(self, toy1, toy1_ctx):
        node = toy1_ctx.index.gtree.nodes[-1]
        if not node.borders:
            pytest.skip("leaf without borders")
        pseudo = PseudoUser(border=node.borders[0], node=node.id, keywords=frozenset())
        assert can_prune_pseudo_user(toy1_ctx, pseudo, 0, k=2)

    def test_distant_poi_dominated_by_near_rich_pois(self):
        # Path road; two heavyweight POIs sit next to the probed border while
        # the queried POI is far away with a light term weight.
        road = path_road(30, weight=100.0)
        pois = [
            Poi(0, Location(2), {"a": 5.0}, frozenset()),
            Poi(1, Location(4), {"a": 5.0}, frozenset()),
            Poi(2, Location(29), {"a": 1.0}, frozenset()),
        ]
        users = [
            User(0, Location(0), {"a": 1.0}, frozenset()),
            User(1, Location(1), {"a": 1.0}, frozenset()),
        ]
        ds = manual_dataset(road, pois, users, [])
        ctx = build_ctx(ds, threshold=1, leaf_capacity=4, alpha=0.5)
        leaf = ctx.index.leaf_of(0)
        node = ctx.index.node(leaf)
        pseudo = PseudoUser(border=max(node.borders), node=leaf, keywords=frozenset({"a"}))
        assert can_prune_pseudo_user(ctx, pseudo, 2, k=2)
        # ... and the exact results agree: nobody here ranks the far POI.
        members = oracle_brknn(ds, [2], 2, ctx.params)
        assert members[2] == frozenset()

    def test_node_without_relevant_users_is_prunable(self):
        ds = make_instance(3)
        ctx = build_ctx(ds)
        for p in range(len(ds.pois)):
            poi = ds.pois[p]
            for node in ctx.index.gtree.nodes:
                if node.parent is None:
                    continue
                if not (ctx.index.node_inv_users[node.id].keys() & poi.keywords.keys()):
                    assert can_prune_node(ctx, p, node.id, k=2)

    def test_node_holding_a_true_member_is_never_prunable(self):
        hits = 0
        for seed, ds, ctx, k in random_instances(6):
            members = oracle_brknn(ds, range(len(ds.pois)), k, ctx.params)
            social = {
                p: set(socially_relevant_users(ds, ds.pois[p])) for p in range(len(ds.pois))
            }
            for p, us in members.items():
                textual_only = us - social[p]
                for node in ctx.index.gtree.nodes:
                    if node.parent is None:
                        continue
                    inside = {u for u in textual_only if ds.users[u].loc.vertex in set(node.vertices)}
                    if inside and ds.pois[p].loc.vertex not in set(node.vertices):
                        hits += 1
                        assert not can_prune_node(ctx, p, node.id, k=k), (seed, p, node.id)
        assert hits > 0

    def test_soundness_sweep_inward_prunes_match_oracle(self):
        for seed, ds, ctx, k in random_instances(4):
            members = oracle_brknn(ds, range(len(ds.pois)), k, ctx.params)
            for p in range(len(ds.pois)):
                poi = ds.pois[p]
                social = set(socially_relevant_users(ds, poi))
                for node in ctx.index.gtree.nodes:
                    if node.parent is None or poi.loc.vertex in set(node.vertices):
                        continue
                    if can_prune_node(ctx, p, node.id, k=k):
                        inside = {
                            u for u in members[p] - social
                            if ds.users[u].loc.vertex in set(node.vertices)
                        }
                        assert not inside, (seed, p, node.id)


class TestBatch:
    def test_equals_oracle_on_random_instances(self):
        for seed, ds, ctx, k in random_instances(10):
            rng = np.random.default_rng(seed)
            pois = sorted(int(p) for p in rng.choice(len(ds.pois), size=6, replace=False))
            got = batch_reverse_topk(ctx, pois, k)
            want = oracle_brknn(ds, pois, k, ctx.params)
            assert {p: set(v) for p, v in got.members.items()} == {
                p: set(v) for p, v in want.items()
            }, seed

    def test_inversion_identity(self, toy1, toy1_ctx):
        pois = list(range(len(toy1.pois)))
        got = batch_reverse_topk(toy1_ctx, pois, 2)
        for u in range(len(toy1.users)):
            in_top = {pid for pid, _ in top_k_query(toy1_ctx, u, 2)}
            for p in pois:
                assert (u in got.members[p]) == (p in in_top)

    def test_irrelevant_poi_gets_empty_result(self):
        road = path_road(6)
        pois = [
            Poi(0, Location(0), {"a": 1.0}, frozenset({0})),
            Poi(1, Location(5), {"zz": 1.0}, frozenset()),  # nobody cares
        ]
        users = [User(0, Location(1), {"a": 1.0}, frozenset())]
        ds = manual_dataset(road, pois, users, [])
        ctx = build_ctx(ds, threshold=1, leaf_capacity=2)
        got = batch_reverse_topk(ctx, [0, 1], 2)
        assert got.members[1] == frozenset()
        assert got.members[0] == frozenset({0})

    def test_unknown_poi_rejected(self, toy1_ctx):
        with pytest.raises(ValueError, match="unknown poi"):
            batch_reverse_topk(toy1_ctx, [999], 2)
        with pytest.raises(ValueError, match="empty"):
            batch_reverse_topk(toy1_ctx, [], 2)

    def test_dequeue_keys_are_monotone_per_fill(self):
        # The frontier refills an emptied queue, so monotonicity holds
        # within each fill epoch (the heap discipline), not across them.
        ds = make_instance(11, rows=8, cols=8, n_users=60, n_pois=30, vocab=6)
        ctx = build_ctx(ds, leaf_capacity=6)
        state, _ = collect_candidates(ctx, list(range(8)), 3)
        assert any(state.dequeue_epochs)
        for epoch in state.dequeue_epochs:
            assert epoch == sorted(epoch)

    def test_deterministic_across_runs(self):
        ds = make_instance(12, rows=6, cols=6, n_users=50, n_pois=20, vocab=6)
        a = batch_reverse_topk(build_ctx(ds), list(range(8)), 3)
        b = batch_reverse_topk(build_ctx(ds), list(range(8)), 3)
        assert a.members == b.members
        assert a.stats.as_dict() == b.stats.as_dict()
        assert a.candidates == b.candidates

    def test_prune_trace_soundness(self):
        for seed, ds, ctx, k in random_instances(6):
            pois = list(range(len(ds.pois)))
            got = batch_reverse_topk(ctx, pois, k, trace=True)
            want = oracle_brknn(ds, pois, k, ctx.params)
            truth = {(p, u) for p, us in want.items() for u in us}
            tr = got.trace
            for kind in ("lemma4", "leaf_keyword_skips", "subtree_skips"):
                discarded = set(getattr(tr, kind))
                assert not discarded & truth, (seed, kind)
            for p, nid in tr.node_outward_pruned:
                inside = set(ctx.index.gtree.nodes[nid].vertices)
                social = set(socially_relevant_users(ds, ds.pois[p]))
                outside_members = {
                    u for u in want[p] - social if ds.users[u].loc.vertex not in inside
                }
                assert not outside_members, (seed, p, nid)

    def test_aggressive_mode_still_exact(self):
        for seed, ds, ctx, k in random_instances(6):
            pois = list(range(len(ds.pois)))
            got = batch_reverse_topk(ctx, pois, k, user_keyword_df_min=3)
            want = oracle_brknn(ds, pois, k, ctx.params)
            assert {p: set(v) for p, v in got.members.items()} == {
                p: set(v) for p, v in want.items()
            }, seed


class TestSociallyRelevantUsers:
    def test_no_checkins_means_empty(self):
        road = path_road(3)
        pois = [Poi(0, Location(0), {"a": 1.0}, frozenset())]
        users = [User(0, Location(1), {"a": 1.0}, frozenset())]
        ds = manual_dataset(road, pois, users, [])
        assert socially_relevant_users(ds, ds.pois[0]) == []

    def test_recount_on_toy(self, toy1):
        for p in toy1.pois:
            want = sorted(
                u.id for u in toy1.users if u.friends & p.checkins
            )
            assert socially_relevant_users(toy1, p) == want

    def test_everyone_when_all_friends_checked_in(self):
        road = path_road(3)
        pois = [Poi(0, Location(0), {"a": 1.0}, frozenset({0, 1, 2}))]
        users = [
            User(0, Location(0), {}, frozenset({1, 2})),
            User(1, Location(1), {}, frozenset({0, 2})),
            User(2, Location(2), {}, frozenset({0, 1})),
        ]
        edges = [(u, v, 0.5) for u in range(3) for v in range(3) if u != v]
        ds = manual_dataset(road, pois, users, edges)
        assert socially_relevant_users(ds, ds.pois[0]) == [0, 1, 2]
