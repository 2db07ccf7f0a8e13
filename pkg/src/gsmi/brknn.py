"""Exact top-k relevance queries and pruned batch reverse top-k retrieval.

Batch retrieval runs in three phases per candidate POI set:

1. Socially relevant users (a friend checked in) and textually relevant
   users in the POI's own leaf are scored directly; a user survives into the
   candidate pool unless its own score-bound list disqualifies the pair
   (k POIs with a geo-textual partial score strictly above the pair's full
   score already exist).

2. The partition tree is expanded outward from each POI's leaf.  For every
   textually relevant sibling subtree, a pseudo-user is enqueued on each of
   its border vertices, keyed by border-to-POI distance.  A dequeued
   pseudo-user drops keywords that provably cannot put the POI into the
   top-k of any user routed through that border, descends into child nodes
   while any keyword survives, and evaluates leaf users individually.

3. Every surviving candidate is verified with an exact top-k query.

Border pruning rule.  For a user ``u`` inside node ``N`` whose shortest path
to POI ``p`` leaves through border ``b`` at depth ``x = dist(u, b)``, with
``D = dist(b, p)`` and no social relevance, the score is at most
``(1-a) * TS(t*, u) * S_p / max(x + D, m)`` where ``t*`` is u's
highest-weighted keyword shared with ``p``, ``S_p`` is the sum of p's
POI-side term weights over the pseudo-user keyword set, and ``m`` the
distance clamp.  A list POI ``p_i`` carrying ``t*`` at border distance
``D_i`` scores at least ``(1-a) * TS(t*, u) * TS(t*, p_i) / max(x + D_i, m)``.
The user factor cancels, so ``p`` is out of u's top-k whenever k distinct
list POIs satisfy ``TS(t, p_i) * r > S_p`` with ``r`` the minimum of
``max(x + D, m) / max(x + D_i, m)`` over the realizable depth range
``x in [0, x_max(N, b)]``.  This is a strictly conservative reading of the
per-border keyword test: it never discards a user that belongs to a result.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .geo_core import INFINITE_DISTANCE
from .scoring import ScoreParams, TermWeightTable

_NO_OWNER = -1


# ---------------------------------------------------------------------------
# Result and bookkeeping types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreBoundList:
    """A user's k best geo-textual partial scores, zero-padded, descending."""

    user: int
    k: int
    entries: tuple  # ((poi_id | None, s), ...) length k

    @property
    def s_k(self):
        return self.entries[-1][1]


@dataclass(frozen=True)
class PseudoUser:
    """Synthetic probe on a border vertex bounding the users behind it."""

    border: int
    node: int
    keywords: frozenset


@dataclass
class BatchStats:
    pois: int = 0
    users_evaluated: int = 0
    pruned_lemma4: int = 0
    keyword_drops: int = 0
    pseudo_users_enqueued: int = 0
    pseudo_users_pruned: int = 0
    nodes_pruned_outward: int = 0
    queue_pops: int = 0
    candidates: int = 0
    verifications: int = 0

    def as_dict(self):
        return dict(vars(self))


@dataclass
class BatchTrace:
    """Per-decision prune log; enabled only for soundness testing."""

    lemma4: list = field(default_factory=list)  # (poi, user) pairs
    leaf_keyword_skips: list = field(default_factory=list)  # (poi, user)
    pseudo_pruned: list = field(default_factory=list)  # (poi, node, border)
    node_outward_pruned: list = field(default_factory=list)  # (poi, node)
    subtree_skips: list = field(default_factory=list)  # (poi, user), derived


@dataclass
class BatchState:
    """Live state of the batch expansion (exposed for inspection/tests)."""

    queue: list = field(default_factory=list)  # (dist, poi, border, node)
    candidates: set = field(default_factory=set)
    frontier: dict = field(default_factory=dict)  # poi -> uppermost node id
    assoc: dict = field(default_factory=dict)  # user -> set of poi ids
    dequeue_epochs: list = field(default_factory=list)  # keys per queue fill


@dataclass(frozen=True)
class BrknnResult:
    members: dict  # poi id -> frozenset of user ids
    stats: BatchStats
    candidates: tuple = ()
    assoc: dict = field(default_factory=dict)
    trace: BatchTrace | None = None

    def __getitem__(self, poi_id):
        return self.members[poi_id]


def socially_relevant_users(dataset, poi):
    """Users with at least one friend among the POI's check-ins, sorted."""
    out = set()
    for c in poi.checkins:
        out.update(dataset.users[c].friends)
    return sorted(out)


# ---------------------------------------------------------------------------
# Query context: shared immutable inputs plus memoized per-query structures
# ---------------------------------------------------------------------------


class QueryContext:
    """Bundles dataset, index, oracle and scoring params with caches.

    Safe to reuse across queries with the same scoring parameters; all
    cached structures are parameter-dependent but input-immutable.
    """

    def __init__(self, dataset, index, oracle, params=None, table=None):
        self.dataset = dataset
        self.index = index
        self.oracle = oracle
        self.params = params or ScoreParams()
        self.table = table or TermWeightTable.build(dataset)
        self._sb = {}
        self._topk = {}
        self._kw_lists = {}
        self._xmax = {}
        self._outside_mask = {}
        self._user_vertices = np.fromiter(
            (u.loc.vertex for u in dataset.users), dtype=np.int64, count=len(dataset.users)
        )
        self._user_offsets = np.fromiter(
            (u.loc.offset for u in dataset.users), dtype=np.float64, count=len(dataset.users)
        )

    # -- distances ---------------------------------------------------------

    def poi_row(self, poi_id):
        return self.oracle.vertex_distances(self.dataset.pois[poi_id].loc.vertex)

    def user_poi_distance(self, user, poi, poi_row=None, user_row=None):
        """Distance via whichever precomputed row is at hand."""
        if user.loc == poi.loc:
            return 0.0
        if user_row is not None:
            base = float(user_row[poi.loc.vertex])
        else:
            if poi_row is None:
                poi_row = self.poi_row(poi.id)
            base = float(poi_row[user.loc.vertex])
        if base == INFINITE_DISTANCE:
            return INFINITE_DISTANCE
        return user.loc.offset + base + poi.loc.offset

    def border_poi_distance(self, border, poi):
        # Anchored at the border so it is float-consistent with the keyword
        # lists, which expand from the same border row.
        base = float(self.oracle.vertex_distances(border)[poi.loc.vertex])
        if base == INFINITE_DISTANCE:
            return INFINITE_DISTANCE
        return base + poi.loc.offset

    # -- scoring -----------------------------------------------------------

    def pair_numerator(self, user, poi):
        """alpha * f_s + (1 - alpha) * f_t, computed without any distance."""
        p = self.params
        f_s = 0.0
        if p.alpha > 0.0 and user.friends:
            f_s = len(user.friends & poi.checkins) / len(user.friends)
        f_t = 0.0
        if p.alpha < 1.0:
            shared = user.keywords.keys() & poi.keywords.keys()
            for t in sorted(shared):
                f_t += self.table.ts_user(t, user) * self.table.ts_poi(t, poi)
        return p.alpha * f_s + (1.0 - p.alpha) * f_t

    def score_pair(self, user_id, poi_id, user_row=None):
        # Always anchored at the user so comparisons against score-bound
        # lists and top-k rankings are float-consistent.
        user = self.dataset.users[user_id]
        poi = self.dataset.pois[poi_id]
        num = self.pair_numerator(user, poi)
        if num <= 0.0:
            return 0.0
        if user_row is None:
            user_row = self.oracle.vertex_distances(user.loc.vertex)
        d = self.user_poi_distance(user, poi, user_row=user_row)
        if d == INFINITE_DISTANCE:
            return 0.0
        return num / max(d, self.params.min_distance)

    # -- cached per-user structures -----------------------------------------

    def sb_list(self, user_id, k):
        key = (user_id, k)
        got = self._sb.get(key)
        if got is None:
            got = score_bound_list(self, user_id, k)
            self._sb[key] = got
        return got

    def top_k(self, user_id, k):
        key = (user_id, k)
        got = self._topk.get(key)
        if got is None:
            got = top_k_query(self, user_id, k)
            self._topk[key] = got
        return got

    def keyword_list(self, border, keyword, k):
        key = (border, keyword, k)
        got = self._kw_lists.get(key)
        if got is None:
            got = _border_keyword_list(self, border, keyword, k)
            self._kw_lists[key] = got
        return got

    # -- depth bounds behind borders ----------------------------------------

    def depth_bound(self, node_id, border, outward=False):
        """Max distance from a (node-side or outside) user to the border.

        Returns -1.0 when no such user can route through the border at all
        (the border's claim is then vacuous).
        """
        key = (node_id, border, outward)
        got = self._xmax.get(key)
        if got is not None:
            return got
        row = self.oracle.vertex_distances(border)
        if outward:
            mask = self._outside_mask.get(node_id)
            if mask is None:
                mask = np.ones(len(self.dataset.users), dtype=bool)
                ids = list(self.index.node_user_ids[node_id])
                mask[ids] = False
                self._outside_mask[node_id] = mask
            d = row[self._user_vertices[mask]] + self._user_offsets[mask]
        else:
            verts = self.index.node_user_vertices[node_id]
            d = row[verts] + self.index.node_user_offsets[node_id]
        d = d[np.isfinite(d)]
        got = float(np.max(d)) if d.size else -1.0
        self._xmax[key] = got
        return got


# ---------------------------------------------------------------------------
# Distance-ordered keyword expansion over the NVDs / posting lists
# ---------------------------------------------------------------------------


class _KeywordExpansion:
    """Yields (distance, poi_id) for one keyword in nondecreasing distance.

    Frequent keywords walk the NVD adjacency graph starting from the origin
    vertex's cell owner; by the Voronoi expansion property the next nearest
    member is always adjacent to an already-finalized cell, so the heap head
    is a valid frontier bound for all unseen members.  Infrequent keywords
    enumerate their posting list outright.
    """

    def __init__(self, ctx, origin_vertex, origin_offset, keyword):
        self.ctx = ctx
        self.keyword = keyword
        self.heap = []
        self.seen = set()
        self._row = None
        self.origin_vertex = origin_vertex
        self.origin_offset = origin_offset
        nvd = ctx.index.nvds.get(keyword)
        self.nvd = nvd
        if nvd is not None:
            owner = int(nvd.owner[origin_vertex])
            if owner != _NO_OWNER:
                d = origin_offset + float(nvd.dist[origin_vertex])
                self.seen.add(owner)
                self.heap.append((d, owner))
        else:
            for pid in ctx.index.postings.get(keyword, ()):
                d = self._distance(pid)
                if d < INFINITE_DISTANCE:
                    self.heap.append((d, pid))
            heapq.heapify(self.heap)
            self.seen.update(pid for _, pid in self.heap)

    def _distance(self, pid):
        if self._row is None:
            self._row = self.ctx.oracle.vertex_distances(self.origin_vertex)
        poi = self.ctx.dataset.pois[pid]
        base = float(self._row[poi.loc.vertex])
        if base == INFINITE_DISTANCE:
            return INFINITE_DISTANCE
        return self.origin_offset + base + poi.loc.offset

    def frontier(self):
        return self.heap[0][0] if self.heap else None

    def pop(self):
        d, pid = heapq.heappop(self.heap)
        if self.nvd is not None:
            for nxt in self.nvd.adjacency[pid]:
                if nxt not in self.seen:
                    self.seen.add(nxt)
                    nd = self._distance(nxt)
                    if nd < INFINITE_DISTANCE:
                        heapq.heappush(self.heap, (nd, nxt))
        return d, pid


def _expansion_scan(ctx, origin_vertex, origin_offset, weighted_keywords, score_fn, k):
    """Shared driver: pop candidates in distance order until the k-th exact
    score strictly dominates the admissible bound on everything unseen.

    ``weighted_keywords`` maps keyword -> coefficient such that the unseen
    bound is sum(coef / clamp(frontier_distance)).  ``score_fn(pid)`` returns
    the exact score of a candidate.  Returns {pid: score > 0}.
    """
    min_d = ctx.params.min_distance
    expansions = {}
    for t in sorted(weighted_keywords):
        if weighted_keywords[t] <= 0.0:
            continue
        exp = _KeywordExpansion(ctx, origin_vertex, origin_offset, t)
        if exp.heap:
            expansions[t] = exp
    scored = {}
    top = []  # min-heap of the k best scores seen
    while expansions:
        bound = 0.0
        nearest_t, nearest_d = None, None
        for t, exp in expansions.items():
            d = exp.frontier()
            bound += weighted_keywords[t] / max(d, min_d)
            if nearest_d is None or d < nearest_d:
                nearest_d, nearest_t = d, t
        if len(top) >= k and top[0] > bound:
            break
        d, pid = expansions[nearest_t].pop()
        if not expansions[nearest_t].heap:
            del expansions[nearest_t]
        if pid in scored:
            continue
        s = score_fn(pid)
        if s > 0.0:
            scored[pid] = s
            if len(top) < k:
                heapq.heappush(top, s)
            elif s > top[0]:
                heapq.heapreplace(top, s)
    return scored


def top_k_query(ctx, user_id, k):
    """Exact top-k POIs for a user: (poi_id, score) pairs, score descending,
    ties by poi id; only positive scores; fewer than k when fewer qualify.

    Socially relevant POIs (a friend checked in) are scored outright; the
    textual side is gathered by distance-ordered keyword expansion with an
    admissible stopping bound, so the result equals a full linear scan.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    user = ctx.dataset.users[user_id]
    params = ctx.params
    table = ctx.table

    scored = {}
    if params.alpha > 0.0:
        social_pois = set()
        for friend in user.friends:
            social_pois.update(ctx.dataset.checkin_index.get(friend, ()))
        for pid in sorted(social_pois):
            s = ctx.score_pair(user_id, pid, user_row=ctx.oracle.vertex_distances(user.loc.vertex))
            if s > 0.0:
                scored[pid] = s

    if params.alpha < 1.0 and user.keywords:
        weights = {
            t: (1.0 - params.alpha) * table.ts_user(t, user) * table.max_poi_ts.get(t, 0.0)
            for t in sorted(user.keywords)
        }

        def exact(pid):
            return ctx.score_pair(user_id, pid, user_row=ctx.oracle.vertex_distances(user.loc.vertex))

        # The expansion may re-discover social POIs; the scores agree.
        scored.update(_expansion_scan(ctx, user.loc.vertex, user.loc.offset, weights, exact, k))

    ranked = sorted(scored.items(), key=lambda e: (-e[1], e[0]))
    return ranked[:k]


def score_bound_list(ctx, user_id, k):
    """The user's k largest geo-textual partial scores (zero-padded)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    user = ctx.dataset.users[user_id]
    params = ctx.params
    table = ctx.table
    entries = []
    if params.alpha < 1.0 and user.keywords:
        weights = {
            t: (1.0 - params.alpha) * table.ts_user(t, user) * table.max_poi_ts.get(t, 0.0)
            for t in sorted(user.keywords)
        }

        def partial(pid):
            poi = ctx.dataset.pois[pid]
            d = ctx.user_poi_distance(user, poi, user_row=ctx.oracle.vertex_distances(user.loc.vertex))
            if d == INFINITE_DISTANCE:
                return 0.0
            f_t = 0.0
            for t in sorted(user.keywords.keys() & poi.keywords.keys()):
                f_t += table.ts_user(t, user) * table.ts_poi(t, poi)
            return (1.0 - params.alpha) * f_t / max(d, params.min_distance)

        scored = _expansion_scan(ctx, user.loc.vertex, user.loc.offset, weights, partial, k)
        entries = sorted(scored.items(), key=lambda e: (-e[1], e[0]))[:k]
    entries = list(entries) + [(None, 0.0)] * (k - len(entries))
    return ScoreBoundList(user=user_id, k=k, entries=tuple(entries))


def _border_keyword_list(ctx, border, keyword, k):
    """k best single-keyword partial scores from a border vertex.

    Entries are (poi_id, s, ts, dist) with s = (1-alpha) * TS(keyword, poi)
    / clamp(dist), sorted by s descending then poi id, zero-padded to k.
    Equals the brute-force per-keyword top-k.
    """
    params = ctx.params
    table = ctx.table
    min_d = params.min_distance
    max_ts = table.max_poi_ts.get(keyword, 0.0)
    coef = (1.0 - params.alpha) * max_ts
    exp = _KeywordExpansion(ctx, border, 0.0, keyword)
    found = []
    top = []
    while exp.heap:
        d = exp.frontier()
        if coef > 0.0:
            bound = coef / max(d, min_d)
            if len(top) >= k and top[0] > bound:
                break
        elif len(found) >= k:
            break
        d, pid = exp.pop()
        ts = table.ts_poi(keyword, ctx.dataset.pois[pid])
        s = (1.0 - params.alpha) * ts / max(d, min_d)
        if s > 0.0:
            found.append((pid, s, ts, d))
            if len(top) < k:
                heapq.heappush(top, s)
            elif s > top[0]:
                heapq.heapreplace(top, s)
    found.sort(key=lambda e: (-e[1], e[0]))
    found = found[:k]
    found += [(None, 0.0, 0.0, INFINITE_DISTANCE)] * (k - len(found))
    return tuple(found)


# ---------------------------------------------------------------------------
# Pruning rules
# ---------------------------------------------------------------------------


def can_prune_user(ctx, user_id, poi_id, sb=None, k=None, score=None):
    """Pair-level rule: prune iff the exact score is strictly below the k-th
    partial-score bound of the user's own list.  Sound: a pruned user can
    never hold the POI in its top-k."""
    if sb is None:
        sb = ctx.sb_list(user_id, k)
    if score is None:
        score = ctx.score_pair(user_id, poi_id)
    return score < sb.s_k


def _min_depth_ratio(D, D_i, x_max, min_d):
    """min over x in [0, x_max] of max(x + D, min_d) / max(x + D_i, min_d).

    Piecewise monotone in x, so the minimum sits at an interval endpoint or
    a clamp joint.  x_max = inf uses the x -> inf limit (ratio 1).
    """
    xs = [0.0]
    unbounded = not math.isfinite(x_max)
    if not unbounded:
        xs.append(x_max)
    for joint in (min_d - D, min_d - D_i):
        if 0.0 < joint and (unbounded or joint < x_max):
            xs.append(joint)
    best = min(max(x + D, min_d) / max(x + D_i, min_d) for x in xs)
    if unbounded:
        best = min(best, 1.0)
    return best


def _keyword_prunable(ctx, keyword, entries, poi, D, s_p, x_max, k):
    """True iff k distinct list POIs provably beat the POI for every user
    routed through the border (see the module docstring for the bound)."""
    if ctx.params.alpha >= 1.0:
        return True  # textual-only users score 0 when alpha = 1
    if x_max < 0.0:
        return True  # no user can route through this border
    if D == INFINITE_DISTANCE:
        return True  # POI unreachable through this border
    min_d = ctx.params.min_distance
    count = 0
    for pid, s, ts, dist_i in entries:
        if pid is None or pid == poi.id or s <= 0.0:
            continue
        if dist_i == INFINITE_DISTANCE:
            continue
        if ts * _min_depth_ratio(D, dist_i, x_max, min_d) > s_p:
            count += 1
            if count >= k:
                return True
    return False


def _pseudo_keywords(ctx, node_id, poi, restrict=None):
    keys = ctx.index.node_inv_users[node_id].keys() & poi.keywords.keys()
    if restrict is not None:
        keys &= restrict
    return frozenset(keys)


def _poi_ts_sum(ctx, keywords, poi):
    return sum(ctx.table.ts_poi(t, poi) for t in sorted(keywords))


def _surviving_keywords(ctx, pseudo, poi_id, k, stats=None):
    """Apply the per-keyword border test; returns the keywords that survive."""
    poi = ctx.dataset.pois[poi_id]
    keys = sorted(pseudo.keywords)
    if not keys:
        return ()
    D = ctx.border_poi_distance(pseudo.border, poi)
    s_p = _poi_ts_sum(ctx, keys, poi)
    x_max = ctx.depth_bound(pseudo.node, pseudo.border, outward=False)
    survivors = []
    for t in keys:
        entries = ctx.keyword_list(pseudo.border, t, k)
        if _keyword_prunable(ctx, t, entries, poi, D, s_p, x_max, k):
            if stats is not None:
                stats.keyword_drops += 1
        else:
            survivors.append(t)
    return tuple(survivors)


def can_prune_pseudo_user(ctx, pseudo, poi_id, k):
    """True iff every keyword of the pseudo-user fails to survive the border
    test; no user behind this border (via this node) can then hold the POI
    in its top-k."""
    return not _surviving_keywords(ctx, pseudo, poi_id, k)


def can_prune_node(ctx, poi_id, node_id, k, outward=False):
    """Subtree rule: prunable iff every border's pseudo-user is prunable.

    ``outward=True`` tests the complement side: users outside the node whose
    shortest paths to the (inside) POI enter through the node's borders.
    """
    poi = ctx.dataset.pois[poi_id]
    node = ctx.index.node(node_id)
    if outward:
        inv = ctx.index.node_inv_users[node_id]
        keys = frozenset(
            t
            for t in poi.keywords
            if ctx.dataset.vocab.user_df.get(t, 0) > len(inv.get(t, ()))
        )
    else:
        keys = _pseudo_keywords(ctx, node_id, poi)
    if not keys:
        return True
    min_d = ctx.params.min_distance
    for border in node.borders:
        D = ctx.border_poi_distance(border, poi)
        x_max = ctx.depth_bound(node_id, border, outward=outward)
        if x_max < 0.0 or D == INFINITE_DISTANCE:
            continue
        s_p = _poi_ts_sum(ctx, keys, poi)
        for t in sorted(keys):
            entries = ctx.keyword_list(border, t, k)
            if not _keyword_prunable(ctx, t, entries, poi, D, s_p, x_max, k):
                return False
    return True


# ---------------------------------------------------------------------------
# Batch retrieval
# ---------------------------------------------------------------------------


def collect_candidates(
    ctx,
    poi_ids,
    k,
    stats=None,
    trace=None,
    user_keyword_df_min=None,
    compensate=True,
):
    """Phases 1-2: produce the verification candidate pool and association map.

    ``user_keyword_df_min`` enables aggressive keyword filtering: pseudo-user
    keyword sets are restricted to keywords carried by at least that many
    users, and (when ``compensate`` is set) users carrying the filtered-out
    rare keywords are evaluated directly so no result can be lost.
    """
    dataset, index = ctx.dataset, ctx.index
    stats = stats if stats is not None else BatchStats()
    stats.pois = len(poi_ids)
    state = BatchState()
    evaluated = set()
    enqueued = set()
    processed = set()
    descended = set()
    border_total = {}
    border_pruned = {}

    restrict = None
    if user_keyword_df_min is not None:
        restrict = frozenset(
            t for t, df in dataset.vocab.user_df.items() if df >= user_keyword_df_min
        )

    def evaluate_user(u, p):
        if (u, p) in evaluated:
            return
        evaluated.add((u, p))
        stats.users_evaluated += 1
        if ctx.pair_numerator(dataset.users[u], dataset.pois[p]) <= 0.0:
            return
        score = ctx.score_pair(u, p)
        if score <= 0.0:
            return
        sb = ctx.sb_list(u, k)
        if score < sb.s_k:
            stats.pruned_lemma4 += 1
            if trace is not None:
                trace.lemma4.append((p, u))
            return
        state.candidates.add(u)
        state.assoc.setdefault(u, set()).add(p)

    # Phase 1: socially relevant users plus textual users in the POI's leaf.
    for p in sorted(poi_ids):
        poi = dataset.pois[p]
        leaf = index.leaf_of(poi.loc.vertex)
        direct = set(socially_relevant_users(dataset, poi))
        direct.update(index.users_under(leaf, poi.keywords.keys()))
        if restrict is not None and compensate:
            for t in sorted(poi.keywords.keys() - restrict):
                direct.update(dataset.vocab.user_postings.get(t, ()))
        for u in sorted(direct):
            evaluate_user(u, p)
        state.frontier[p] = leaf

    # Phase 2: expand the partition tree with pseudo-users.
    def enqueue_children(parent_id, p, exclude=None):
        poi = dataset.pois[p]
        for cid in index.node(parent_id).children:
            if cid == exclude:
                continue
            ckeys = _pseudo_keywords(ctx, cid, poi, restrict)
            if not ckeys:
                continue
            child = index.node(cid)
            for b in child.borders:
                key = (b, cid, p)
                if key in enqueued:
                    continue
                enqueued.add(key)
                d = ctx.border_poi_distance(b, poi)
                heapq.heappush(state.queue, (d, p, b, cid))
                stats.pseudo_users_enqueued += 1
            border_total[(p, cid)] = len(child.borders)

    def extend_range():
        for p in sorted(state.frontier):
            nid = state.frontier[p]
            node = index.node(nid)
            if node.parent is None:
                del state.frontier[p]
                continue
            poi = dataset.pois[p]
            nk = node.parent
            while index.node(nk).parent is not None and not (
                index.node_inv_users[nk].keys() & poi.keywords.keys()
            ):
                nk = index.node(nk).parent
            enqueue_children(nk, p, exclude=index.gtree.path_child(nk, nid))
            if index.node(nk).parent is None:
                del state.frontier[p]
            elif can_prune_node(ctx, p, nk, k, outward=True):
                stats.nodes_pruned_outward += 1
                if trace is not None:
                    trace.node_outward_pruned.append((p, nk))
                del state.frontier[p]
            else:
                state.frontier[p] = nk

    while state.queue or state.frontier:
        if not state.queue:
            extend_range()
            state.dequeue_epochs.append([])
            continue
        d, p, b, nid = heapq.heappop(state.queue)
        if not state.dequeue_epochs:
            state.dequeue_epochs.append([])
        state.dequeue_epochs[-1].append(d)
        stats.queue_pops += 1
        key = (b, nid, p)
        if key in processed:
            continue
        processed.add(key)
        poi = dataset.pois[p]
        pseudo = PseudoUser(border=b, node=nid, keywords=_pseudo_keywords(ctx, nid, poi, restrict))
        survivors = _surviving_keywords(ctx, pseudo, p, k, stats=stats)
        if not survivors:
            stats.pseudo_users_pruned += 1
            border_pruned[(p, nid)] = border_pruned.get((p, nid), 0) + 1
            if trace is not None:
                trace.pseudo_pruned.append((p, nid, b))
            continue
        node = index.node(nid)
        if node.is_leaf:
            descended.add((p, nid))
            hit = index.users_under(nid, survivors)
            if trace is not None:
                full = index.users_under(nid, pseudo.keywords)
                for u in full:
                    if u not in hit and (u, p) not in evaluated:
                        trace.leaf_keyword_skips.append((p, u))
            for u in hit:
                evaluate_user(u, p)
        else:
            if (p, nid) not in descended:
                descended.add((p, nid))
                enqueue_children(nid, p)

    if trace is not None:
        for (p, nid), pruned in sorted(border_pruned.items()):
            if (p, nid) in descended or pruned < border_total.get((p, nid), -1):
                continue
            poi = dataset.pois[p]
            for u in index.users_under(nid, poi.keywords.keys()):
                if (u, p) not in evaluated:
                    trace.subtree_skips.append((p, u))

    stats.candidates = len(state.candidates)
    return state, stats


def batch_reverse_topk(ctx, poi_ids, k, trace=False, user_keyword_df_min=None):
    """Exact reverse top-k for every POI in the batch.

    Returns a :class:`BrknnResult` whose ``members[p]`` equals
    ``{u : p in top_k(u)}`` -- candidate collection is conservative and each
    candidate is verified with the exact top-k query.
    """
    poi_ids = sorted(set(int(p) for p in poi_ids))
    if not poi_ids:
        raise ValueError("empty candidate POI set")
    n_pois = len(ctx.dataset.pois)
    for p in poi_ids:
        if not 0 <= p < n_pois:
            raise ValueError(f"unknown poi id {p}")
    if k < 1:
        raise ValueError("k must be >= 1")
    tr = BatchTrace() if trace else None
    stats = BatchStats()
    state, stats = collect_candidates(
        ctx, poi_ids, k, stats=stats, trace=tr, user_keyword_df_min=user_keyword_df_min
    )
    members = {p: set() for p in poi_ids}
    for u in sorted(state.candidates):
        ranked = ctx.top_k(u, k)
        stats.verifications += 1
        in_top = {pid for pid, _ in ranked}
        for p in sorted(state.assoc.get(u, ())):
            if p in in_top:
                members[p].add(u)
    return BrknnResult(
        members={p: frozenset(us) for p, us in members.items()},
        stats=stats,
        candidates=tuple(sorted(state.candidates)),
        assoc={u: tuple(sorted(ps)) for u, ps in sorted(state.assoc.items())},
        trace=tr,
    )
