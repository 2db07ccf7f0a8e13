import numpy as np
import pytest

from gsmi.geo_core import Location, Poi, User
from gsmi.ignvd import (
    CompressedNnMap,
    IndexFormatError,
    InfrequentKeywordError,
    build_gtree,
    build_index,
    build_nvd,
    classify_keywords,
    compress_nn_maps,
    load_index,
    nvd_adjacent,
    nvd_lookup,
    save_index,
)
from gsmi.oracles import oracle_nearest_poi_map

from conftest import make_instance, manual_dataset, path_road


class TestGTree:
    def test_grid_partition_properties(self):
        ds = make_instance(0, rows=4, cols=4, n_users=4, n_pois=3, vocab=2)
        tree = build_gtree(ds.road, fanout=4, leaf_capacity=4)
        root = tree.root
        assert sorted(root.vertices) == list(range(16))
        for node in tree.nodes:
            if node.children:
                child_sets = [set(tree.nodes[c].vertices) for c in node.children]
                union = set().union(*child_sets)
                assert union == set(node.vertices)
                for i in range(len(child_sets)):
                    for j in range(i + 1, len(child_sets)):
                        assert not child_sets[i] & child_sets[j]
            else:
                assert len(node.vertices) <= 4

    def test_tiny_network_is_single_leaf(self):
        ds = make_instance(0, rows=2, cols=2, n_users=2, n_pois=2, vocab=2)
        tree = build_gtree(ds.road, fanout=4, leaf_capacity=64)
        assert len(tree.nodes) == 1 and tree.root.is_leaf

    def test_borders_cut_exactly_the_crossing_edges(self):
        ds = make_instance(1, rows=6, cols=6, n_users=4, n_pois=3, vocab=2)
        tree = build_gtree(ds.road, fanout=4, leaf_capacity=6)
        for node in tree.nodes:
            members = set(node.vertices)
            want = {
                v
                for v in node.vertices
                if any(u not in members for u, _ in ds.road.adjacency[v])
            }
            assert set(node.borders) == want
        assert tree.root.borders == ()

    def test_deterministic(self):
        ds = make_instance(2, rows=6, cols=6, n_users=4, n_pois=3, vocab=2)
        t1 = build_gtree(ds.road, fanout=4, leaf_capacity=6)
        t2 = build_gtree(ds.road, fanout=4, leaf_capacity=6)
        assert [n.vertices for n in t1.nodes] == [n.vertices for n in t2.nodes]

    def test_parameter_validation(self):
        ds = make_instance(0, rows=2, cols=2, n_users=2, n_pois=2, vocab=2)
        with pytest.raises(ValueError):
            build_gtree(ds.road, fanout=1)
        with pytest.raises(ValueError):
            build_gtree(ds.road, leaf_capacity=0)


class TestNvd:
    def test_single_poi_owns_everything(self):
        road = path_road(5)
        nvd = build_nvd(road, "x", [(0, Location(2))])
        assert all(int(o) == 0 for o in nvd.owner)
        assert nvd.adjacency == {0: ()}

    def test_two_pois_split_a_path_with_tie_to_smaller_id(self):
        road = path_road(5, weight=10.0)  # vertices 0..4, midpoint vertex 2
        nvd = build_nvd(road, "x", [(0, Location(0)), (1, Location(4))])
        assert list(nvd.owner) == [0, 0, 0, 1, 1]  # tie at vertex 2 -> poi 0
        assert nvd.adjacency == {0: (1,), 1: (0,)}

    def test_three_cells_in_a_line_middle_adjacent_to_both(self):
        road = path_road(7, weight=10.0)
        nvd = build_nvd(road, "x", [(0, Location(0)), (1, Location(3)), (2, Location(6))])
        assert nvd.adjacency[1] == (0, 2)
        assert nvd.adjacency[0] == (1,) and nvd.adjacency[2] == (1,)

    def test_owners_match_per_vertex_brute_force(self, toy1, toy1_index):
        for t in sorted(toy1_index.frequent):
            members = [(p, toy1.pois[p].loc) for p in toy1.vocab.poi_postings[t]]
            owner, dist = oracle_nearest_poi_map(toy1.road, members)
            nvd = toy1_index.nvds[t]
            for v in range(toy1.road.n_vertices):
                assert nvd_lookup(toy1_index, v, t) == owner[v]
                if owner[v] is not None:
                    assert nvd.dist[v] == pytest.approx(dist[v], rel=1e-12)

    def test_adjacency_matches_cut_edge_recount(self, toy1, toy1_index):
        for t in sorted(toy1_index.frequent):
            nvd = toy1_index.nvds[t]
            want = {p: set() for p in toy1.vocab.poi_postings[t]}
            for u, v, _ in toy1.road.edges:
                ou, ov = int(nvd.owner[u]), int(nvd.owner[v])
                if ou != ov and ou >= 0 and ov >= 0:
                    want[ou].add(ov)
                    want[ov].add(ou)
            # Members owning no cell are linked to the owner of their vertex.
            for p in toy1.vocab.poi_postings[t]:
                ov = int(nvd.owner[toy1.pois[p].loc.vertex])
                if ov != p:
                    want[p].add(ov)
                    want[ov].add(p)
            assert {p: tuple(sorted(s)) for p, s in want.items()} == nvd.adjacency

    def test_empty_member_list_rejected(self):
        with pytest.raises(ValueError):
            build_nvd(path_road(3), "x", [])


class TestClassifyKeywords:
    def test_threshold_one_makes_everything_frequent(self, toy1):
        frequent, postings = classify_keywords(toy1, 1)
        assert frequent == frozenset(toy1.vocab.poi_df)
        assert postings == {}

    def test_huge_threshold_makes_everything_infrequent(self, toy1):
        frequent, postings = classify_keywords(toy1, 10_000)
        assert frequent == frozenset()
        assert set(postings) == set(toy1.vocab.poi_df)
        for t, ids in postings.items():
            assert ids == toy1.vocab.poi_postings[t]
            assert list(ids) == sorted(ids)

    def test_recount_equality(self, toy1):
        frequent, _ = classify_keywords(toy1, 3)
        want = {t for t, df in toy1.vocab.poi_df.items() if df >= 3}
        assert frequent == want

    def test_lookup_on_infrequent_keyword_raises(self, toy1, toy1_index):
        infrequent = sorted(toy1_index.postings)
        if not infrequent:
            pytest.skip("toy fixture has no infrequent keyword at this threshold")
        with pytest.raises(InfrequentKeywordError, match="posting list"):
            nvd_lookup(toy1_index, 0, infrequent[0])
        with pytest.raises(InfrequentKeywordError):
            nvd_adjacent(toy1_index, toy1_index.postings[infrequent[0]][0], infrequent[0])


class TestNnMaps:
    def test_consistent_with_nvd_lookup(self, toy1, toy1_index):
        for nid, nn_map in toy1_index.nn_maps.items():
            node = toy1_index.node(nid)
            key_vertices = node.vertices if node.is_leaf else node.borders
            for t in sorted(nn_map.by_keyword):
                for v in key_vertices:
                    assert nn_map.lookup(v, t) == nvd_lookup(toy1_index, v, t)

    def test_compression_is_lossless_after_rebuild(self, toy1, toy1_index):
        before = {
            (nid, t, v): nn.lookup(v, t)
            for nid, nn in toy1_index.nn_maps.items()
            for t in sorted(nn.by_keyword)
            for v in nn.vertices.tolist()
        }
        compress_nn_maps(toy1_index)
        after = {
            (nid, t, v): nn.lookup(v, t)
            for nid, nn in toy1_index.nn_maps.items()
            for t in sorted(nn.by_keyword)
            for v in nn.vertices.tolist()
        }
        assert before == after

    def test_constant_owner_collapses_to_single_record(self):
        vertices = [0, 1, 2, 3]
        vecs = {"a": np.array([7, 7, 7, 7]), "b": np.array([7, 7, 7, 7]), "c": np.array([1, 2, 1, 2])}
        nn = CompressedNnMap.build(vertices, vecs)
        assert nn.n_records() == 2  # one shared constant record + one vector
        assert nn.lookup(2, "a") == 7 and nn.lookup(1, "c") == 2

    def test_identical_vectors_share_a_record(self):
        vecs = {"a": np.array([1, 2]), "b": np.array([1, 2]), "c": np.array([2, 1])}
        nn = CompressedNnMap.build([0, 1], vecs)
        assert nn.by_keyword["a"] == nn.by_keyword["b"] != nn.by_keyword["c"]


class TestSerialization:
    def test_round_trip(self, toy1, toy1_index, tmp_path):
        path = tmp_path / "toy.idx"
        save_index(toy1_index, path)
        loaded = load_index(path)
        assert len(loaded.gtree.nodes) == len(toy1_index.gtree.nodes)
        assert loaded.frequent == toy1_index.frequent
        assert loaded.postings == toy1_index.postings
        for t, nvd in toy1_index.nvds.items():
            assert (loaded.nvds[t].owner == nvd.owner).all()
            assert loaded.nvds[t].adjacency == nvd.adjacency

    def test_empty_like_index_round_trips(self, tmp_path):
        ds = make_instance(0, rows=2, cols=2, n_users=2, n_pois=2, vocab=2)
        index = build_index(ds, threshold=1000)  # nothing frequent
        assert index.nvds == {} and index.nn_maps == {}
        path = tmp_path / "empty.idx"
        save_index(index, path)
        loaded = load_index(path)
        assert loaded.nvds == {} and set(loaded.postings) == set(index.postings)

    def test_truncated_file_detected(self, toy1_index, tmp_path):
        path = tmp_path / "toy.idx"
        save_index(toy1_index, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 20])
        with pytest.raises(IndexFormatError, match="hash"):
            load_index(path)

    def test_bad_magic_detected(self, tmp_path):
        path = tmp_path / "junk.idx"
        path.write_bytes(b"not an index at all")
        with pytest.raises(IndexFormatError, match="magic"):
            load_index(path)

    def test_version_mismatch_detected(self, toy1_index, tmp_path):
        path = tmp_path / "toy.idx"
        save_index(toy1_index, path)
        data = bytearray(path.read_bytes())
        data[8] = 99  # bump the little-endian version field
        path.write_bytes(bytes(data))
        with pytest.raises(IndexFormatError, match="version"):
            load_index(path)


class TestInvertedFiles:
    def test_internal_inv_is_union_of_children(self, toy1, toy1_index):
        for node in toy1_index.gtree.nodes:
            if not node.children:
                continue
            for inv_of in (toy1_index.node_inv_pois, toy1_index.node_inv_users):
                merged = {}
                for c in node.children:
                    for t, ids in inv_of[c].items():
                        merged.setdefault(t, set()).update(ids)
                assert {t: tuple(sorted(s)) for t, s in sorted(merged.items())} == inv_of[node.id]

    def test_keyword_present_iff_someone_beneath_carries_it(self, toy1, toy1_index):
        for node in toy1_index.gtree.nodes:
            members = set(node.vertices)
            pois_here = [p for p in toy1.pois if p.loc.vertex in members]
            users_here = [u for u in toy1.users if u.loc.vertex in members]
            assert set(toy1_index.node_inv_pois[node.id]) == {
                t for p in pois_here for t in p.keywords
            }
            assert set(toy1_index.node_inv_users[node.id]) == {
                t for u in users_here for t in u.keywords
            }
