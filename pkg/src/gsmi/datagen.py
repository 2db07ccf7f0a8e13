"""Deterministic synthetic geo-social dataset and query-set generation.

The recipe mirrors the usual experimental setup for this problem family:
users and POIs placed uniformly on road vertices, keywords drawn from a Zipf
distribution, check-ins biased toward nearby users, friendships grown by
preferential attachment, and social edge weights set by the weighted-cascade
convention ``w(u, v) = 1 / in_degree(v)``.

Everything is a pure function of the config (seed included): regenerating
with the same config yields a byte-identical bundle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .geo_core import (
    DataError,
    GeoSocialDataset,
    Location,
    Poi,
    RoadNetwork,
    SocialNetwork,
    User,
    Vocabulary,
)


@dataclass(frozen=True)
class GenConfig:
    seed: int = 42
    road_model: str = "grid"  # "grid" | "delaunay"
    grid_rows: int = 4
    grid_cols: int = 4
    n_road_vertices: int = 100  # delaunay only
    n_road_edges: int = 250  # delaunay only; clipped to the triangulation
    n_users: int = 8
    n_pois: int = 5
    vocab_size: int = 3
    zipf_exponent: float = 1.0
    poi_keywords_avg: float = 2.0
    user_keywords_avg: float = 2.0
    checkins_avg: float = 2.0
    friends_per_user: int = 2
    checkin_locality_m: float = 2000.0
    edge_length_m: tuple = (50.0, 150.0)
    keyword_weight_range: tuple = (0.5, 2.0)
    query_size: int = 4
    name: str = ""

    def __post_init__(self):
        if self.n_users < 1 or self.n_pois < 1 or self.vocab_size < 1:
            raise ValueError("counts must be >= 1")
        if self.zipf_exponent <= 0:
            raise ValueError("zipf exponent must be positive")


PRESETS = {
    # Tiny fixture: 4x4 grid, 8 users, 5 POIs, 3 keywords.
    "toy-1": GenConfig(name="toy-1"),
    # Desk-scale workload for smoke benchmarks.
    "desk-1": GenConfig(
        name="desk-1",
        grid_rows=125,
        grid_cols=160,
        n_users=50_000,
        n_pois=20_000,
        vocab_size=400,
        poi_keywords_avg=4.0,
        user_keywords_avg=3.0,
        checkins_avg=5.0,
        friends_per_user=5,
        query_size=60,
    ),
    # Scaled toward a Gowalla-shaped workload (same ratios, larger counts).
    "bench-1": GenConfig(
        name="bench-1",
        grid_rows=200,
        grid_cols=200,
        n_users=100_000,
        n_pois=40_000,
        vocab_size=600,
        poi_keywords_avg=5.0,
        user_keywords_avg=3.0,
        checkins_avg=5.0,
        friends_per_user=8,
        query_size=60,
    ),
}


def preset(name, seed=None):
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}") from None
    return cfg if seed is None else replace(cfg, seed=seed)


def zipf_probabilities(vocab_size, exponent):
    ranks = np.arange(1, vocab_size + 1, dtype=float)
    probs = ranks**-exponent
    return probs / probs.sum()


def draw_zipf_ranks(rng, vocab_size, exponent, n):
    """n keyword ranks (0-based) drawn from the Zipf distribution."""
    return rng.choice(vocab_size, size=n, p=zipf_probabilities(vocab_size, exponent))


def _grid_road(rng, rows, cols, length_range):
    n = rows * cols
    spacing = sum(length_range) / 2.0
    coords = np.empty((n, 2))
    edges = []
    lo, hi = length_range
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            coords[v] = (c * spacing, r * spacing)
            if c + 1 < cols:
                edges.append((v, v + 1, float(rng.uniform(lo, hi))))
            if r + 1 < rows:
                edges.append((v, v + cols, float(rng.uniform(lo, hi))))
    return RoadNetwork(n, edges, coords=coords)


def _delaunay_road(rng, n_vertices, n_edges, length_scale):
    side = length_scale * math.sqrt(n_vertices)
    coords = rng.uniform(0.0, side, size=(n_vertices, 2))
    tri = Delaunay(coords)
    all_edges = set()
    for simplex in tri.simplices:
        for i in range(3):
            a, b = int(simplex[i]), int(simplex[(i + 1) % 3])
            all_edges.add((min(a, b), max(a, b)))
    all_edges = sorted(all_edges)

    # Keep a spanning tree first so the network stays connected, then fill
    # with the shortest remaining edges up to the requested count.
    parent = list(range(n_vertices))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def length(e):
        return float(np.hypot(*(coords[e[0]] - coords[e[1]])))

    tree, rest = [], []
    for e in sorted(all_edges, key=length):
        ra, rb = find(e[0]), find(e[1])
        if ra != rb:
            parent[ra] = rb
            tree.append(e)
        else:
            rest.append(e)
    chosen = tree + rest[: max(0, n_edges - len(tree))]
    edges = [(a, b, length((a, b))) for a, b in sorted(chosen)]
    return RoadNetwork(n_vertices, edges, coords=coords)


def _draw_keywords(rng, probs, count, weight_range):
    if count <= 0:
        return {}
    vocab_size = len(probs)
    count = min(count, vocab_size)
    chosen = []
    seen = set()
    attempts = 0
    while len(chosen) < count and attempts < 20 * count:
        r = int(rng.choice(vocab_size, p=probs))
        attempts += 1
        if r not in seen:
            seen.add(r)
            chosen.append(r)
    for r in range(vocab_size):  # deterministic fill if rejection stalled
        if len(chosen) >= count:
            break
        if r not in seen:
            seen.add(r)
            chosen.append(r)
    lo, hi = weight_range
    return {f"t{r:03d}": float(rng.uniform(lo, hi)) for r in sorted(chosen)}


def _preferential_attachment(rng, n_users, m):
    """Undirected friendship pairs by Barabasi-Albert growth."""
    m = min(m, max(n_users - 1, 0))
    if m == 0:
        return [set() for _ in range(n_users)]
    friends = [set() for _ in range(n_users)]
    repeated = []
    for v in range(m, n_users):
        if v == m:
            targets = list(range(m))
        else:
            targets = []
            picked = set()
            while len(targets) < m:
                t = int(repeated[rng.integers(len(repeated))])
                if t not in picked:
                    picked.add(t)
                    targets.append(t)
        for t in targets:
            friends[v].add(t)
            friends[t].add(v)
            repeated.extend((v, t))
    return friends


def generate(config):
    """Build a fully validated dataset from the config, deterministically."""
    rng = np.random.default_rng(config.seed)

    if config.road_model == "grid":
        road = _grid_road(rng, config.grid_rows, config.grid_cols, config.edge_length_m)
    elif config.road_model == "delaunay":
        road = _delaunay_road(
            rng, config.n_road_vertices, config.n_road_edges, sum(config.edge_length_m) / 2.0
        )
    else:
        raise ValueError(f"unknown road model {config.road_model!r}")

    probs = zipf_probabilities(config.vocab_size, config.zipf_exponent)
    n_v = road.n_vertices

    poi_vertices = rng.integers(0, n_v, size=config.n_pois)
    user_vertices = rng.integers(0, n_v, size=config.n_users)

    poi_keywords = []
    for _ in range(config.n_pois):
        count = max(1, int(rng.poisson(config.poi_keywords_avg)))
        poi_keywords.append(_draw_keywords(rng, probs, count, config.keyword_weight_range))
    user_keywords = []
    for _ in range(config.n_users):
        count = int(rng.poisson(config.user_keywords_avg))
        user_keywords.append(_draw_keywords(rng, probs, count, config.keyword_weight_range))

    friends = _preferential_attachment(rng, config.n_users, config.friends_per_user)

    # Check-ins biased toward nearby users: candidates from a KD-tree over
    # user positions, accepted with weight exp(-d / locality).
    user_xy = road.coords[user_vertices]
    tree = cKDTree(user_xy)
    checkins = []
    for i in range(config.n_pois):
        count = int(rng.poisson(config.checkins_avg))
        count = min(count, config.n_users)
        if count == 0:
            checkins.append(frozenset())
            continue
        pool = min(config.n_users, max(8 * count, 32))
        dists, cand = tree.query(road.coords[poi_vertices[i]], k=pool)
        dists = np.atleast_1d(dists)
        cand = np.atleast_1d(cand)
        weights = np.exp(-dists / config.checkin_locality_m)
        weights /= weights.sum()
        picked = rng.choice(cand, size=count, replace=False, p=weights)
        checkins.append(frozenset(int(u) for u in picked))

    pois = tuple(
        Poi(i, Location(int(poi_vertices[i])), poi_keywords[i], checkins[i])
        for i in range(config.n_pois)
    )
    users = tuple(
        User(i, Location(int(user_vertices[i])), user_keywords[i], frozenset(friends[i]))
        for i in range(config.n_users)
    )

    # Weighted cascade: every friendship contributes both directed edges,
    # each weighed by the receiver's in-degree (= friend count).
    social_edges = []
    for u in range(config.n_users):
        for f in sorted(friends[u]):
            social_edges.append((f, u, 1.0 / len(friends[u])))
    social = SocialNetwork(config.n_users, social_edges)

    return GeoSocialDataset(
        road=road,
        social=social,
        pois=pois,
        users=users,
        vocab=Vocabulary.build(pois, users),
        manifest={"generator": {"preset": config.name or None, "seed": config.seed}},
    )


def generate_query_set(dataset, size, cluster=1, rng=None, frequent_threshold=3):
    """Candidate POI ids following the keyword/popularity clustering recipe.

    Two frequent keywords are sampled; each keyword's checked-in POIs are
    split by whether their check-in count exceeds the dataset-wide average,
    yielding clusters 1..4 (cluster 1 = popular POIs of the more frequent
    sampled keyword).  ``size`` POIs are then drawn from the requested
    cluster.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if not 1 <= cluster <= 4:
        raise ValueError("cluster must be in 1..4")
    frequent = sorted(t for t, df in dataset.vocab.poi_df.items() if df >= frequent_threshold)
    eligible = [
        t for t in frequent if any(dataset.pois[p].checkins for p in dataset.vocab.poi_postings[t])
    ]
    if len(eligible) < 2:
        raise DataError("dataset has fewer than 2 frequent keywords with checked-in POIs")
    pick = rng.choice(len(eligible), size=2, replace=False)
    chosen = sorted((eligible[int(i)] for i in pick), key=lambda t: (-dataset.vocab.poi_df[t], t))
    avg_checkins = sum(len(p.checkins) for p in dataset.pois) / len(dataset.pois)
    clusters = []
    for t in chosen:
        group = [p for p in dataset.vocab.poi_postings[t] if dataset.pois[p].checkins]
        popular = [p for p in group if len(dataset.pois[p].checkins) > avg_checkins]
        rest = [p for p in group if len(dataset.pois[p].checkins) <= avg_checkins]
        clusters.extend([popular, rest])
    members = clusters[cluster - 1]
    if len(members) < size:
        raise DataError(
            f"cluster {cluster} holds {len(members)} POIs, fewer than requested {size}"
        )
    picked = rng.choice(len(members), size=size, replace=False)
    return tuple(sorted(members[int(i)] for i in picked))


def subsample_dataset(dataset, user_frac=1.0, poi_frac=1.0, rng=None):
    """Random sub-dataset with dense re-ids and recomputed cascade weights.

    Used by the benchmark harness for the user/POI cardinality sweeps.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    n_u = max(1, int(round(user_frac * len(dataset.users))))
    n_p = max(1, int(round(poi_frac * len(dataset.pois))))
    keep_users = sorted(int(i) for i in rng.choice(len(dataset.users), size=n_u, replace=False))
    keep_pois = sorted(int(i) for i in rng.choice(len(dataset.pois), size=n_p, replace=False))
    umap = {old: new for new, old in enumerate(keep_users)}

    users = []
    for old in keep_users:
        u = dataset.users[old]
        fr = frozenset(umap[f] for f in u.friends if f in umap)
        users.append(User(umap[old], u.loc, dict(u.keywords), fr))
    pois = []
    for new, old in enumerate(keep_pois):
        p = dataset.pois[old]
        ck = frozenset(umap[c] for c in p.checkins if c in umap)
        pois.append(Poi(new, p.loc, dict(p.keywords), ck))

    social_edges = []
    for u in users:
        if not u.friends:
            continue
        for f in sorted(u.friends):
            social_edges.append((f, u.id, 1.0 / len(u.friends)))
    social = SocialNetwork(len(users), social_edges)
    return GeoSocialDataset(
        road=dataset.road,
        social=social,
        pois=tuple(pois),
        users=tuple(users),
        vocab=Vocabulary.build(pois, users),
        manifest={"generator": dict(dataset.manifest.get("generator", {}), subsample=[user_frac, poi_frac])},
    )
