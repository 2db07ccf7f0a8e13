import numpy as np
import pytest

from gsmi import datagen
from gsmi.geo_core import DataError, save_dataset

from conftest import make_instance


class TestGenerate:
    def test_toy_preset_shape(self, toy1):
        counts = toy1.counts()
        assert counts["road_vertices"] == 16
        assert counts["users"] == 8
        assert counts["pois"] == 5
        assert counts["keywords"] <= 3

    def test_deterministic_bundle_bytes(self, tmp_path):
        a = datagen.generate(datagen.preset("toy-1", seed=7))
        b = datagen.generate(datagen.preset("toy-1", seed=7))
        save_dataset(a, tmp_path / "a")
        save_dataset(b, tmp_path / "b")
        for name in ("pois.tsv", "users.tsv", "social_edges.tsv", "road_edges.tsv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert a.manifest == b.manifest

    def test_weighted_cascade_in_weights_sum_to_one(self):
        ds = make_instance(3, n_users=60, n_pois=10, friends_per_user=3)
        for v in range(len(ds.users)):
            in_edges = ds.social.in_edges[v]
            if in_edges:
                assert sum(w for _, w in in_edges) == pytest.approx(1.0)
                for _, w in in_edges:
                    assert w == pytest.approx(1.0 / ds.social.in_degree(v))

    def test_checkins_reference_valid_users(self):
        ds = make_instance(4, n_users=40, n_pois=15, checkins_avg=3.0)
        for p in ds.pois:
            assert all(0 <= u < len(ds.users) for u in p.checkins)

    def test_zipf_rank_frequency_slope(self):
        rng = np.random.default_rng(0)
        exponent = 1.0
        draws = datagen.draw_zipf_ranks(rng, 50, exponent, 10_000)
        counts = np.bincount(draws, minlength=50)
        ranks = np.arange(1, 21)  # head of the distribution, well-populated
        freqs = counts[:20]
        slope = np.polyfit(np.log(ranks), np.log(freqs), 1)[0]
        assert slope == pytest.approx(-exponent, abs=0.2)


class TestQuerySet:
    def test_requested_size_too_large_errors(self, toy1):
        with pytest.raises(DataError):
            datagen.generate_query_set(toy1, size=10_000, frequent_threshold=1)

    def test_members_have_checkins(self):
        ds = make_instance(5, rows=8, cols=8, n_users=80, n_pois=40, vocab=5, checkins_avg=3.0)
        pois = datagen.generate_query_set(ds, size=5, cluster=1, rng=np.random.default_rng(0))
        assert all(ds.pois[p].checkins for p in pois)

    def test_cluster_one_is_popular(self):
        ds = make_instance(5, rows=8, cols=8, n_users=80, n_pois=40, vocab=5, checkins_avg=3.0)
        pois = datagen.generate_query_set(ds, size=5, cluster=1, rng=np.random.default_rng(0))
        avg = sum(len(p.checkins) for p in ds.pois) / len(ds.pois)
        got = np.mean([len(ds.pois[p].checkins) for p in pois])
        assert got > avg

    def test_clusters_partition_by_keyword_and_popularity(self):
        ds = make_instance(6, rows=8, cols=8, n_users=80, n_pois=40, vocab=5, checkins_avg=3.0)
        rng = np.random.default_rng(1)
        one = datagen.generate_query_set(ds, size=3, cluster=1, rng=np.random.default_rng(1))
        two = datagen.generate_query_set(ds, size=3, cluster=2, rng=np.random.default_rng(1))
        avg = sum(len(p.checkins) for p in ds.pois) / len(ds.pois)
        assert all(len(ds.pois[p].checkins) > avg for p in one)
        assert all(len(ds.pois[p].checkins) <= avg for p in two)


class TestSubsample:
    def test_subsample_revalidates_and_rescales(self):
        ds = make_instance(7, n_users=60, n_pois=20, friends_per_user=3)
        sub = datagen.subsample_dataset(ds, user_frac=0.5, poi_frac=0.5,
                                        rng=np.random.default_rng(0))
        assert len(sub.users) == 30 and len(sub.pois) == 10
        for v in range(len(sub.users)):
            in_edges = sub.social.in_edges[v]
            if in_edges:
                assert sum(w for _, w in in_edges) == pytest.approx(1.0)
