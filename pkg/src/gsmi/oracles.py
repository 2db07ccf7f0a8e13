"""Brute-force reference implementations for testing the optimized paths.

Everything in this module is intentionally simple: hand-rolled Dijkstra,
linear scans, full enumerations.  It re-derives scoring from the dataset
counts rather than importing the optimized scoring/query code, so the two
routes stay independent.  These functions back every derived test value and
the acceptance suite, and are exposed through the ``gsmi oracle`` CLI.
"""

from __future__ import annotations

import heapq
import math

INF = math.inf


def dijkstra_row(road, source):
    """Single-source distances by textbook binary-heap Dijkstra."""
    dist = [INF] * road.n_vertices
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in road.adjacency[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def location_distance(road, a, b, _row_cache=None):
    if a == b:
        return 0.0
    if _row_cache is not None and a.vertex in _row_cache:
        row = _row_cache[a.vertex]
    else:
        row = dijkstra_row(road, a.vertex)
        if _row_cache is not None:
            _row_cache[a.vertex] = row
    base = row[b.vertex]
    if base == INF:
        return INF
    return a.offset + base + b.offset


def _idf(n_docs, df):
    return math.log1p(n_docs / df)


def _score(dataset, user, poi, dist, alpha, min_distance):
    if dist == INF:
        return 0.0
    f_g = max(dist, min_distance)
    f_s = 0.0
    if user.friends:
        f_s = len(user.friends & poi.checkins) / len(user.friends)
    f_t = 0.0
    n_pois = len(dataset.pois)
    n_users = len(dataset.users)
    for t in sorted(user.keywords.keys() & poi.keywords.keys()):
        ts_u = user.keywords[t] * _idf(n_users, dataset.vocab.user_df[t])
        ts_p = poi.keywords[t] * _idf(n_pois, dataset.vocab.poi_df[t])
        f_t += ts_u * ts_p
    return (alpha * f_s + (1.0 - alpha) * f_t) / f_g


def oracle_topk(dataset, user_id, k, params):
    """Exact top-k POIs for a user by full linear scan.

    Returns up to k ``(poi_id, score)`` pairs with positive score, sorted by
    score descending with ties broken by poi id ascending.
    """
    user = dataset.users[user_id]
    row = dijkstra_row(dataset.road, user.loc.vertex)
    scored = []
    for p in dataset.pois:
        base = row[p.loc.vertex]
        d = INF if base == INF else user.loc.offset + base + p.loc.offset
        if user.loc == p.loc:
            d = 0.0
        s = _score(dataset, user, p, d, params.alpha, params.min_distance)
        if s > 0.0:
            scored.append((p.id, s))
    scored.sort(key=lambda e: (-e[1], e[0]))
    return scored[:k]


def oracle_partial_topk(dataset, user_id, k, params):
    """Top-k by the geo-textual partial score (1-alpha)*f_t/f_g."""
    user = dataset.users[user_id]
    row = dijkstra_row(dataset.road, user.loc.vertex)
    n_pois = len(dataset.pois)
    n_users = len(dataset.users)
    scored = []
    for p in dataset.pois:
        base = row[p.loc.vertex]
        if base == INF:
            continue
        d = user.loc.offset + base + p.loc.offset
        if user.loc == p.loc:
            d = 0.0
        f_g = max(d, params.min_distance)
        f_t = 0.0
        for t in sorted(user.keywords.keys() & p.keywords.keys()):
            ts_u = user.keywords[t] * _idf(n_users, dataset.vocab.user_df[t])
            ts_p = p.keywords[t] * _idf(n_pois, dataset.vocab.poi_df[t])
            f_t += ts_u * ts_p
        s = (1.0 - params.alpha) * f_t / f_g
        if s > 0.0:
            scored.append((p.id, s))
    scored.sort(key=lambda e: (-e[1], e[0]))
    return scored[:k]


def oracle_brknn(dataset, poi_ids, k, params):
    """Reverse top-k by inverting oracle_topk over every user."""
    wanted = set(poi_ids)
    members = {p: set() for p in sorted(wanted)}
    for user in dataset.users:
        for pid, _ in oracle_topk(dataset, user.id, k, params):
            if pid in wanted:
                members[pid].add(user.id)
    return {p: frozenset(us) for p, us in members.items()}


def oracle_nearest_poi_map(road, poi_locations):
    """Per-vertex nearest POI among ``poi_locations`` (list of (pid, loc)).

    Returns (owner, dist) lists indexed by vertex; owner is None when no POI
    is reachable.  Ties go to the smallest poi id.  Computed the slow way:
    one independent Dijkstra per POI, then a per-vertex argmin scan.
    """
    owner = [None] * road.n_vertices
    best = [INF] * road.n_vertices
    for pid, loc in sorted(poi_locations):
        row = dijkstra_row(road, loc.vertex)
        for v in range(road.n_vertices):
            if row[v] == INF:
                continue
            d = row[v] + loc.offset
            if d < best[v] or (d == best[v] and owner[v] is not None and pid < owner[v]):
                best[v] = d
                owner[v] = pid
    return owner, best


def oracle_influence(dataset_or_social, seeds, mode="exact", n_sims=10000, rng=None):
    """Stable test entry point for influence evaluation.

    Delegates to the exact possible-world enumerator (``mode='exact'``,
    guarded by the enumeration size limit) or to Monte-Carlo estimation
    (``mode='mc'``, returning the sample mean).
    """
    from .influence import estimate_influence_mc, exact_influence

    social = getattr(dataset_or_social, "social", dataset_or_social)
    if mode == "exact":
        return exact_influence(social, seeds)
    if mode == "mc":
        import numpy as np

        if rng is None:
            rng = np.random.default_rng(0)
        mean, _ = estimate_influence_mc(social, seeds, n_sims, rng)
        return mean
    raise ValueError(f"unknown oracle influence mode {mode!r}")
