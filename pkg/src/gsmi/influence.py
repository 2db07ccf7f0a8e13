"""Independent-cascade influence machinery.

The influence of a POI set is the expected cascade size seeded by the union
of the POIs' reverse top-k users.  This module provides every evaluation
route used by the solvers and their tests:

* stochastic cascade simulation and Monte-Carlo estimation;
* exact evaluation by possible-world enumeration (small graphs only);
* reverse-reachable (RR) set sampling over the POI-to-user graph, in two
  modes: ``full`` (a POI joins the set when any of its seed users reaches
  the root in the sampled world) and ``beyond-2-hop`` (a POI joins only
  when the minimum live hop distance from its seed users to the root is at
  least 3);
* coverage counting and lazy-greedy maximum coverage;
* exact two-hop local influence and its greedy POI selection;
* the hybrid estimator (exact local term plus sampled remote term) and the
  lower/upper influence bound and sample-size formulas built on it.

Two-hop exactness sketch: a non-seed user u activates within two rounds iff
some in-neighbor channel fires, where the channel through seed v is the
single edge (v, u) and the channel through non-seed v is (v, u) combined
with v's own seed in-edges.  Channels of distinct in-neighbors touch
disjoint edge sets, so their failure probabilities multiply exactly.

The hybrid estimator's two parts are not exactly complementary for
multi-POI sets: a user activated within two hops by one POI's seeds may
still be counted by another POI surviving in a beyond-2-hop RR set.  The
residual overlap is measured empirically in the acceptance tests; for
singleton sets the decomposition is exact.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

MAX_EXACT_EDGES = 20
E_FACTOR = 1.0 - 1.0 / math.e


# ---------------------------------------------------------------------------
# Heterogeneous POI -> user graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InfluenceGraph:
    """Social network plus weight-1 edges from each POI to its seed users.

    POI nodes have in-degree 0 by construction.  Users unreachable from
    every seed user are retained but flagged so samplers can short-circuit;
    keeping them preserves the |V_s| scaling of the coverage estimators.
    """

    social: object
    poi_ids: tuple
    seed_sets: dict  # poi id -> frozenset of user ids
    user_pois: dict  # user id -> tuple of poi ids seeded by the user
    unreachable: frozenset

    @property
    def n_users(self):
        return self.social.n_users

    def seeds_of(self, poi_set):
        out = set()
        for p in sorted(poi_set):
            out.update(self.seed_sets[p])
        return out


def build_influence_graph(social, members):
    """``members`` maps poi id -> iterable of seed user ids."""
    seed_sets = {}
    user_pois = {}
    for p in sorted(members):
        us = frozenset(int(u) for u in members[p])
        for u in us:
            if not 0 <= u < social.n_users:
                raise ValueError(f"seed user {u} outside the social network")
            user_pois.setdefault(u, []).append(p)
        seed_sets[int(p)] = us
    user_pois = {u: tuple(sorted(ps)) for u, ps in user_pois.items()}

    all_seeds = set()
    for us in seed_sets.values():
        all_seeds.update(us)
    reached = set(all_seeds)
    frontier = sorted(all_seeds)
    while frontier:
        nxt = []
        for u in frontier:
            for v, w in social.out_edges[u]:
                if w > 0.0 and v not in reached:
                    reached.add(v)
                    nxt.append(v)
        frontier = sorted(nxt)
    unreachable = frozenset(range(social.n_users)) - reached
    return InfluenceGraph(
        social=social,
        poi_ids=tuple(sorted(seed_sets)),
        seed_sets=seed_sets,
        user_pois=user_pois,
        unreachable=unreachable,
    )


# ---------------------------------------------------------------------------
# Cascade simulation and exact evaluation
# ---------------------------------------------------------------------------


def simulate_cascade(social, seeds, rng):
    """One stochastic cascade; returns the number of activated users."""
    active = set(int(s) for s in seeds)
    frontier = sorted(active)
    while frontier:
        nxt = []
        for u in frontier:
            for v, w in social.out_edges[u]:
                if v not in active and rng.random() < w:
                    active.add(v)
                    nxt.append(v)
        frontier = nxt
    return len(active)


def estimate_influence_mc(social, seeds, n_sims, rng):
    """Monte-Carlo influence estimate; returns (mean, stderr)."""
    if n_sims < 1:
        raise ValueError("n_sims must be >= 1")
    seeds = sorted(set(int(s) for s in seeds))
    if not seeds:
        return 0.0, 0.0
    counts = np.empty(n_sims)
    for i in range(n_sims):
        counts[i] = simulate_cascade(social, seeds, rng)
    stderr = float(counts.std(ddof=1) / math.sqrt(n_sims)) if n_sims > 1 else 0.0
    return float(counts.mean()), stderr


def exact_influence_many(social, seed_sets):
    """Exact expected influence of several seed sets by shared possible-world
    enumeration.  Guarded: at most ``MAX_EXACT_EDGES`` social edges."""
    edges = social.edge_list()
    if len(edges) > MAX_EXACT_EDGES:
        raise ValueError(
            f"graph has {len(edges)} edges; exact enumeration capped at {MAX_EXACT_EDGES}"
        )
    seed_sets = [sorted(set(int(s) for s in ss)) for ss in seed_sets]
    n = social.n_users
    certain = [(u, v) for u, v, w in edges if w == 1.0]
    uncertain = [(u, v, w) for u, v, w in edges if 0.0 < w < 1.0]
    totals = [0.0] * len(seed_sets)
    for mask in range(1 << len(uncertain)):
        prob = 1.0
        live = list(certain)
        for i, (u, v, w) in enumerate(uncertain):
            if mask >> i & 1:
                prob *= w
                live.append((u, v))
            else:
                prob *= 1.0 - w
        if prob == 0.0:
            continue
        adj = [[] for _ in range(n)]
        for u, v in live:
            adj[u].append(v)
        reach = [0] * n  # bitmask of nodes reachable from each node
        for s in range(n):
            seen = 1 << s
            stack = [s]
            while stack:
                u = stack.pop()
                for v in adj[u]:
                    if not seen >> v & 1:
                        seen |= 1 << v
                        stack.append(v)
            reach[s] = seen
        for j, ss in enumerate(seed_sets):
            acc = 0
            for s in ss:
                acc |= reach[s]
            totals[j] += prob * acc.bit_count()
    return totals


def exact_influence(social, seeds):
    """Exact expected influence of one seed set (possible-world sum)."""
    return exact_influence_many(social, [seeds])[0]


# ---------------------------------------------------------------------------
# Reverse-reachable sampling
# ---------------------------------------------------------------------------

FULL = "full"
BEYOND_2HOP = "beyond-2-hop"
_CHUNK = 1024


@dataclass(frozen=True)
class RrSet:
    root: int
    members: frozenset  # poi ids
    mode: str


class RrCollection:
    """A list of RR sets with an inverted coverage index.

    Empty sets count toward the collection size.  Sampling is deterministic
    for a fixed base seed and extension sequence: sets are produced in
    fixed-size chunks, each chunk from its own child RNG stream, so worker
    scheduling cannot reorder results.
    """

    def __init__(self, graph, mode, base_seed):
        if mode not in (FULL, BEYOND_2HOP):
            raise ValueError(f"unknown RR mode {mode!r}")
        self.graph = graph
        self.mode = mode
        self.base_seed = int(base_seed)
        self.n_users = graph.n_users
        self.sets = []
        self.cover = {}
        self._next_chunk = 0

    def __len__(self):
        return len(self.sets)

    def _append(self, rr):
        idx = len(self.sets)
        self.sets.append(rr)
        for p in rr.members:
            self.cover.setdefault(p, []).append(idx)

    def extend(self, n_new, threads=1):
        if n_new <= 0:
            return self
        spans = []
        remaining = n_new
        while remaining > 0:
            take = min(_CHUNK, remaining)
            spans.append((self._next_chunk, take))
            self._next_chunk += 1
            remaining -= take

        def run(span):
            chunk_id, count = span
            rng = np.random.default_rng([self.base_seed, chunk_id])
            return [sample_rr_set(self.graph, self.mode, rng) for _ in range(count)]

        if threads > 1 and len(spans) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                chunks = list(pool.map(run, spans))
        else:
            chunks = [run(s) for s in spans]
        for chunk in chunks:
            for rr in chunk:
                self._append(rr)
        return self


def sample_rr_set(graph, mode, rng):
    """One reverse-reachable set from a uniformly random root user."""
    social = graph.social
    root = int(rng.integers(social.n_users))
    if root in graph.unreachable:
        return RrSet(root=root, members=frozenset(), mode=mode)
    level = {root: 0}
    frontier = [root]
    poi_level = {}
    hop = 0
    while frontier:
        for u in frontier:
            lvl = level[u]
            for p in graph.user_pois.get(u, ()):
                if p not in poi_level or lvl < poi_level[p]:
                    poi_level[p] = lvl
        nxt = []
        hop += 1
        for u in frontier:
            for v, w in social.in_edges[u]:
                if v not in level and rng.random() < w:
                    level[v] = hop
                    nxt.append(v)
        frontier = nxt
    if mode == FULL:
        members = frozenset(poi_level)
    else:
        members = frozenset(p for p, lvl in poi_level.items() if lvl >= 3)
    return RrSet(root=root, members=members, mode=mode)


def coverage(collection, poi_set):
    """Number of RR sets hit by at least one POI of the set."""
    covered = set()
    for p in sorted(set(poi_set)):
        covered.update(collection.cover.get(p, ()))
    return len(covered)


def greedy_max_coverage(collection, candidates, b):
    """Lazy greedy max coverage; identical to naive greedy, ties by poi id.

    Returns up to b POIs (all candidates when b exceeds their number),
    padding with zero-gain candidates in id order once coverage saturates.
    """
    if b < 1:
        raise ValueError("b must be >= 1")
    candidates = sorted(set(candidates))
    covered = [False] * len(collection)
    heap = [(-len(collection.cover.get(p, ())), p) for p in candidates]
    heapq.heapify(heap)
    selected = []
    while heap and len(selected) < b:
        neg_gain, p = heapq.heappop(heap)
        actual = sum(1 for i in collection.cover.get(p, ()) if not covered[i])
        entry = (-actual, p)
        if not heap or entry <= heap[0]:
            selected.append(p)
            for i in collection.cover.get(p, ()):
                covered[i] = True
        else:
            heapq.heappush(heap, entry)
    return selected


def upper_coverage_bound(collection, candidates, b):
    """Upper bound on the best size-b coverage over the candidates.

    Minimum of (i) greedy-prefix bounds: prefix coverage plus the b largest
    remaining marginals at that prefix, over every prefix length, and (ii)
    the (1 - 1/e) greedy-guarantee fallback.  Both are valid upper bounds;
    the minimum tightens.
    """
    candidates = sorted(set(candidates))
    covered = [False] * len(collection)
    selected = []
    cov = 0
    best = math.inf

    def marginals():
        out = []
        for p in candidates:
            if p in selected:
                continue
            out.append(sum(1 for i in collection.cover.get(p, ()) if not covered[i]))
        return sorted(out, reverse=True)

    for _ in range(b + 1):
        tops = marginals()[:b]
        best = min(best, cov + sum(tops))
        if len(selected) >= b or len(selected) >= len(candidates):
            break
        gains = {
            p: sum(1 for i in collection.cover.get(p, ()) if not covered[i])
            for p in candidates
            if p not in selected
        }
        nxt = min(gains, key=lambda p: (-gains[p], p))
        selected.append(nxt)
        for i in collection.cover.get(nxt, ()):
            if not covered[i]:
                covered[i] = True
                cov += 1
    best = min(best, cov / E_FACTOR)
    return best


# ---------------------------------------------------------------------------
# Exact two-hop local influence
# ---------------------------------------------------------------------------


def two_hop_influence(social, seeds):
    """Exact expected number of users activated within two hops of the seeds."""
    seeds = set(int(s) for s in seeds)
    if not seeds:
        return 0.0
    one_hop = {}
    for s in sorted(seeds):
        for v, w in social.out_edges[s]:
            if v in seeds:
                continue
            one_hop[v] = 1.0 - (1.0 - one_hop.get(v, 0.0)) * (1.0 - w)
    targets = set(one_hop)
    for v in sorted(one_hop):
        for u, _ in social.out_edges[v]:
            if u not in seeds:
                targets.add(u)
    total = float(len(seeds))
    for u in sorted(targets):
        miss = 1.0
        for v, w in social.in_edges[u]:
            if v in seeds:
                q = 1.0
            else:
                q = one_hop.get(v, 0.0)
            if q > 0.0:
                miss *= 1.0 - w * q
        total += 1.0 - miss
    return total


def greedy_two_hop(graph, candidates, b):
    """Greedy POIs maximizing exact two-hop influence of their seed union."""
    if b < 1:
        raise ValueError("b must be >= 1")
    candidates = sorted(set(candidates))
    selected = []
    seeds = set()
    current = 0.0
    while len(selected) < b and len(selected) < len(candidates):
        best_gain, best_p = None, None
        for p in candidates:
            if p in selected:
                continue
            gain = two_hop_influence(graph.social, seeds | graph.seed_sets[p]) - current
            if best_gain is None or gain > best_gain:
                best_gain, best_p = gain, p
        selected.append(best_p)
        seeds |= graph.seed_sets[best_p]
        current += best_gain
    return selected


# ---------------------------------------------------------------------------
# Hybrid estimator and bounds
# ---------------------------------------------------------------------------


def hybrid_influence(graph, poi_set, collection):
    """Exact two-hop local term plus sampled beyond-2-hop remote term."""
    if collection.mode != BEYOND_2HOP:
        raise ValueError("hybrid estimation needs a beyond-2-hop collection")
    if len(collection) == 0:
        raise ValueError("empty RR collection")
    poi_set = sorted(set(poi_set))
    if not poi_set:
        return 0.0
    local = two_hop_influence(graph.social, graph.seeds_of(poi_set))
    remote = coverage(collection, poi_set) * graph.n_users / len(collection)
    return local + remote


def influence_lower_bound(poi_set, collection, eta_l, mode="coverage", graph=None):
    """High-probability lower bound on the influence of a chosen POI set.

    ``coverage`` mode uses only the sampled coverage; ``hybrid`` mode adds
    the exact two-hop local term (the collection must then be beyond-2-hop).
    The coverage term clamps at 0 so tiny coverage stays a valid bound.
    """
    if eta_l <= 0:
        raise ValueError("eta_l must be positive")
    cov = coverage(collection, poi_set)
    if len(collection) == 0:
        return 0.0
    term = (math.sqrt(cov + 2.0 * eta_l / 9.0) - math.sqrt(eta_l / 2.0)) ** 2 - eta_l / 18.0
    value = max(term, 0.0) * collection.n_users / len(collection)
    if mode == "hybrid":
        if collection.mode != BEYOND_2HOP:
            raise ValueError("hybrid bound needs a beyond-2-hop collection")
        value += two_hop_influence(graph.social, graph.seeds_of(poi_set))
    elif mode != "coverage":
        raise ValueError(f"unknown bound mode {mode!r}")
    return value


def optimal_influence_upper_bound(
    collection, candidates, b, eta_u, mode="coverage", graph=None, local_pick=None
):
    """High-probability upper bound on the best size-b influence.

    ``coverage`` mode bounds via the coverage of the (unknown) optimum;
    ``hybrid`` mode adds the greedy two-hop pick's value inflated by the
    (1 - 1/e) guarantee, with the coverage term over a beyond-2-hop
    collection.  An empty collection yields +inf.
    """
    if eta_u <= 0:
        raise ValueError("eta_u must be positive")
    if len(collection) == 0:
        return math.inf
    lam_u = upper_coverage_bound(collection, candidates, b)
    value = (math.sqrt(lam_u + eta_u / 2.0) + math.sqrt(eta_u / 2.0)) ** 2
    value *= collection.n_users / len(collection)
    if mode == "hybrid":
        if collection.mode != BEYOND_2HOP:
            raise ValueError("hybrid bound needs a beyond-2-hop collection")
        if local_pick is None:
            raise ValueError("hybrid upper bound needs the greedy two-hop pick")
        value += two_hop_influence(graph.social, graph.seeds_of(local_pick)) / E_FACTOR
    elif mode != "coverage":
        raise ValueError(f"unknown bound mode {mode!r}")
    return value


# ---------------------------------------------------------------------------
# Sample-size formulas
# ---------------------------------------------------------------------------


def _ln_binom(n, k):
    return (
        math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
        if 0 <= k <= n
        else 0.0
    )


@dataclass(frozen=True)
class SamplerConfig:
    """Sampling parameters and the derived sizes of the doubling schedule."""

    epsilon: float
    delta: float
    b: int
    n_candidates: int
    n_users: int

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must be in (0, 1)")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if not 1 <= self.b <= self.n_candidates:
            raise ValueError("need 1 <= b <= |candidates|")

    def max_samples(self, psi):
        """Sample count guaranteeing the approximation ratio, given a
        positive lower estimate ``psi`` of the optimal influence."""
        if psi <= 0:
            raise ValueError("psi must be positive")
        ln6d = math.log(6.0 / self.delta)
        head = E_FACTOR * math.sqrt(ln6d)
        tail = math.sqrt(E_FACTOR * (_ln_binom(self.n_candidates, self.b) + ln6d))
        num = 2.0 * self.n_users * (head + tail) ** 2
        return int(math.ceil(num / (self.epsilon**2 * psi)))

    def initial_samples(self, theta_max, psi):
        theta0 = theta_max * self.epsilon**2 * psi / self.n_users
        return max(1, int(math.ceil(theta0)))

    def rounds(self, theta_max, theta_0):
        if theta_0 >= theta_max:
            return 1
        return max(1, int(math.ceil(math.log2(theta_max / theta_0))))

    def eta(self, i_max):
        return math.log(3.0 * i_max / self.delta)
