"""End-to-end POI selection: sampling solvers, heuristics, and policies.

Three solvers answer the influence-maximizing selection problem:

* ``solve_baseline`` -- exact batch reverse top-k, then a doubling
  reverse-influence-sampling loop using coverage only: greedy selection on
  one collection, a lower bound on the pick from the second, an upper bound
  on the optimum from the first, stopping once the certified ratio reaches
  1 - 1/e - epsilon (or a sample cap is hit, reported honestly).

* ``solve_approx`` -- the hybrid solver: an exact two-hop greedy pick seeds
  the sample-size formulas; the doubling loop then selects by the hybrid
  objective (exact two-hop local term plus beyond-2-hop coverage term) with
  matching hybrid bounds and at most ceil(log2(theta_max / theta_0))
  iterations.  The final pick is returned even when the last iteration's
  ratio check fails; the achieved ratio is surfaced so callers can detect
  uncertified results.

* ``solve_heuristic`` -- trades certification for speed: aggressive keyword
  filtering during candidate collection (rare user-side keywords are pruned
  from pseudo-users and their carriers compensated directly), verification
  ordered by ``|friends| * |associated POIs|`` in batches, stopping when the
  two-hop value of the verified-graph pick reaches 1 - 1/e of the
  optimistic-graph pick.

Four competitor policies (relevance, influencer, max reverse-knn size,
random) and an exhaustive-optimal oracle close the loop for evaluation.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import influence as inf
from .brknn import QueryContext, batch_reverse_topk, collect_candidates, socially_relevant_users
from .geo_core import build_distance_oracle
from .oracles import oracle_brknn
from .scoring import ScoreParams

TARGET_OFFSET = 1.0 - 1.0 / math.e


@dataclass(frozen=True)
class QuerySpec:
    poi_ids: tuple
    b: int
    k: int = 20
    alpha: float = 0.6
    epsilon: float = 0.1
    delta: float | None = None  # defaults to 1/|V_s| at solve time
    seed: int = 0
    min_distance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "poi_ids", tuple(sorted(set(int(p) for p in self.poi_ids))))
        if not 1 <= self.b <= len(self.poi_ids):
            raise ValueError("need 1 <= b <= |candidate POIs|")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must be in (0, 1)")
        if self.delta is not None and not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")

    def params(self):
        return ScoreParams(alpha=self.alpha, min_distance=self.min_distance)

    def resolved_delta(self, n_users):
        return self.delta if self.delta is not None else 1.0 / n_users


@dataclass
class SolverOutcome:
    method: str
    selected: tuple
    estimate: float | None = None
    lower: float | None = None
    upper: float | None = None
    ratio: float | None = None
    iterations: int = 0
    rr_sets: int = 0
    certified: bool = False
    capped: bool = False
    wall_time: float = 0.0
    timings: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "method": self.method,
            "P_s": list(self.selected),
            "estimate": self.estimate,
            "lower": self.lower,
            "upper": self.upper,
            "ratio": self.ratio,
            "iterations": self.iterations,
            "rr_sets": self.rr_sets,
            "certified": self.certified,
            "capped": self.capped,
            "timings": dict(self.timings),
        }


def make_context(dataset, index, spec, oracle=None):
    if oracle is None:
        oracle = build_distance_oracle(dataset.road)
    return QueryContext(dataset, index, oracle, spec.params())


def _fill_to_b(selected, candidates, b):
    out = list(selected)
    for p in sorted(candidates):
        if len(out) >= b:
            break
        if p not in out:
            out.append(p)
    return tuple(out)


def _retrieve(ctx, spec, brknn_result, timings, trace=False):
    t0 = time.perf_counter()
    if brknn_result is None:
        brknn_result = batch_reverse_topk(ctx, spec.poi_ids, spec.k, trace=trace)
    timings["brknn"] = timings.get("brknn", 0.0) + time.perf_counter() - t0
    return brknn_result


def _greedy_hybrid(graph, collection, candidates, b):
    """Lazy greedy on the hybrid objective; marginals recomputed on pop."""
    candidates = sorted(set(candidates))
    scale = graph.n_users / len(collection) if len(collection) else 0.0
    covered = [False] * len(collection)
    seeds = set()
    local = 0.0

    def marginal(p):
        gain_local = inf.two_hop_influence(graph.social, seeds | graph.seed_sets[p]) - local
        gain_cov = sum(1 for i in collection.cover.get(p, ()) if not covered[i])
        return gain_local + gain_cov * scale

    import heapq

    heap = [(-marginal(p), p) for p in candidates]
    heapq.heapify(heap)
    selected = []
    while heap and len(selected) < b:
        _, p = heapq.heappop(heap)
        entry = (-marginal(p), p)
        if not heap or entry <= heap[0]:
            selected.append(p)
            seeds |= graph.seed_sets[p]
            local = inf.two_hop_influence(graph.social, seeds)
            for i in collection.cover.get(p, ()):
                covered[i] = True
        else:
            heapq.heappush(heap, entry)
    return selected


def solve_baseline(
    spec,
    dataset,
    index,
    oracle=None,
    ctx=None,
    brknn_result=None,
    start_size=256,
    sample_cap=1 << 26,
    threads=1,
):
    """Coverage-only sampling solver with certified stopping."""
    t_start = time.perf_counter()
    timings = {}
    if ctx is None:
        ctx = make_context(dataset, index, spec, oracle)
    brknn_result = _retrieve(ctx, spec, brknn_result, timings)
    t_sel = time.perf_counter()
    graph = inf.build_influence_graph(dataset.social, brknn_result.members)
    delta = spec.resolved_delta(dataset.social.n_users)
    i_cap = max(1, int(math.ceil(math.log2(max(2, sample_cap / start_size)))))
    eta = math.log(2.0 * i_cap / delta)
    target = TARGET_OFFSET - spec.epsilon
    r1 = inf.RrCollection(graph, inf.FULL, base_seed=spec.seed * 4 + 1)
    r2 = inf.RrCollection(graph, inf.FULL, base_seed=spec.seed * 4 + 2)
    size = start_size
    r1.extend(size, threads=threads)
    r2.extend(size, threads=threads)
    outcome = SolverOutcome(method="ba", selected=())
    while True:
        outcome.iterations += 1
        pick = _fill_to_b(
            inf.greedy_max_coverage(r1, spec.poi_ids, spec.b), spec.poi_ids, spec.b
        )
        lower = inf.influence_lower_bound(pick, r2, eta, mode="coverage")
        upper = inf.optimal_influence_upper_bound(r1, spec.poi_ids, spec.b, eta, mode="coverage")
        ratio = 1.0 if upper == 0.0 else (0.0 if math.isinf(upper) else lower / upper)
        outcome.selected = pick
        outcome.lower, outcome.upper, outcome.ratio = lower, upper, ratio
        if ratio >= target:
            outcome.certified = True
            break
        if 2 * size > sample_cap:
            outcome.capped = True
            break
        size *= 2
        r1.extend(size - len(r1), threads=threads)
        r2.extend(size - len(r2), threads=threads)
    outcome.rr_sets = len(r1) + len(r2)
    outcome.estimate = inf.coverage(r1, outcome.selected) * graph.n_users / len(r1)
    timings["selection"] = time.perf_counter() - t_sel
    outcome.wall_time = timings["total"] = time.perf_counter() - t_start
    outcome.timings = timings
    outcome.stats = brknn_result.stats.as_dict()
    return outcome


def solve_approx(
    spec,
    dataset,
    index,
    oracle=None,
    ctx=None,
    brknn_result=None,
    threads=1,
):
    """Hybrid sampling solver (two-hop local term + beyond-2-hop coverage)."""
    t_start = time.perf_counter()
    timings = {}
    if ctx is None:
        ctx = make_context(dataset, index, spec, oracle)
    brknn_result = _retrieve(ctx, spec, brknn_result, timings)
    t_sel = time.perf_counter()
    graph = inf.build_influence_graph(dataset.social, brknn_result.members)
    delta = spec.resolved_delta(dataset.social.n_users)

    local_pick = _fill_to_b(
        inf.greedy_two_hop(graph, spec.poi_ids, spec.b), spec.poi_ids, spec.b
    )
    psi = inf.two_hop_influence(dataset.social, graph.seeds_of(local_pick))
    outcome = SolverOutcome(method="ap", selected=local_pick)
    if psi <= 0.0:
        # No seed user anywhere: every selection is equally (un)influential.
        outcome.selected = _fill_to_b((), spec.poi_ids, spec.b)
        outcome.estimate = outcome.lower = outcome.upper = 0.0
        outcome.ratio, outcome.certified = 1.0, True
        timings["selection"] = time.perf_counter() - t_sel
        outcome.wall_time = timings["total"] = time.perf_counter() - t_start
        outcome.timings = timings
        outcome.stats = brknn_result.stats.as_dict()
        return outcome

    config = inf.SamplerConfig(
        epsilon=spec.epsilon,
        delta=delta,
        b=spec.b,
        n_candidates=len(spec.poi_ids),
        n_users=dataset.social.n_users,
    )
    theta_max = config.max_samples(psi)
    theta_0 = config.initial_samples(theta_max, psi)
    i_max = config.rounds(theta_max, theta_0)
    eta = config.eta(i_max)
    target = TARGET_OFFSET - spec.epsilon

    r1 = inf.RrCollection(graph, inf.BEYOND_2HOP, base_seed=spec.seed * 4 + 1)
    r2 = inf.RrCollection(graph, inf.BEYOND_2HOP, base_seed=spec.seed * 4 + 2)
    r1.extend(theta_0, threads=threads)
    r2.extend(theta_0, threads=threads)
    for i in range(1, i_max + 1):
        outcome.iterations = i
        pick = _fill_to_b(_greedy_hybrid(graph, r1, spec.poi_ids, spec.b), spec.poi_ids, spec.b)
        lower = inf.influence_lower_bound(pick, r2, eta, mode="hybrid", graph=graph)
        upper = inf.optimal_influence_upper_bound(
            r1, spec.poi_ids, spec.b, eta, mode="hybrid", graph=graph, local_pick=local_pick
        )
        ratio = 1.0 if upper == 0.0 else (0.0 if math.isinf(upper) else lower / upper)
        outcome.selected = pick
        outcome.lower, outcome.upper, outcome.ratio = lower, upper, ratio
        if ratio >= target:
            outcome.certified = True
            break
        if i == i_max:
            break
        r1.extend(len(r1), threads=threads)
        r2.extend(len(r2), threads=threads)
    outcome.rr_sets = len(r1) + len(r2)
    outcome.estimate = inf.hybrid_influence(graph, outcome.selected, r1)
    timings["selection"] = time.perf_counter() - t_sel
    outcome.wall_time = timings["total"] = time.perf_counter() - t_start
    outcome.timings = timings
    outcome.stats = brknn_result.stats.as_dict()
    outcome.stats.update(theta_max=theta_max, theta_0=theta_0, i_max=i_max)
    return outcome


def solve_heuristic(
    spec,
    dataset,
    index,
    oracle=None,
    ctx=None,
    batch_size=256,
    user_keyword_df_min=None,
    threads=1,
):
    """Verification-thrifty heuristic; returns the verified two-hop pick."""
    t_start = time.perf_counter()
    timings = {}
    if ctx is None:
        ctx = make_context(dataset, index, spec, oracle)
    if user_keyword_df_min is None:
        user_keyword_df_min = max(3, len(dataset.users) // 1000)
    t0 = time.perf_counter()
    state, stats = collect_candidates(
        ctx, list(spec.poi_ids), spec.k, user_keyword_df_min=user_keyword_df_min
    )
    timings["brknn"] = time.perf_counter() - t0
    t_sel = time.perf_counter()

    order = sorted(
        state.candidates,
        key=lambda u: (-len(dataset.users[u].friends) * len(state.assoc.get(u, ())), u),
    )
    verified_members = {p: set() for p in spec.poi_ids}
    pending = {u: set(state.assoc.get(u, ())) for u in order}
    ratio = 1.0
    pick = ()
    verified_n = 0
    batches = 0
    for chunk_start in range(0, max(len(order), 1), batch_size):
        chunk = order[chunk_start : chunk_start + batch_size]
        for u in chunk:
            ranked = {pid for pid, _ in ctx.top_k(u, spec.k)}
            stats.verifications += 1
            verified_n += 1
            for p in sorted(pending.pop(u, ())):
                if p in ranked:
                    verified_members[p].add(u)
        batches += 1
        optimistic = {
            p: verified_members[p] | {u for u, ps in pending.items() if p in ps}
            for p in spec.poi_ids
        }
        g_opt = inf.build_influence_graph(dataset.social, optimistic)
        g_ver = inf.build_influence_graph(dataset.social, verified_members)
        pick_opt = _fill_to_b(
            inf.greedy_two_hop(g_opt, spec.poi_ids, spec.b), spec.poi_ids, spec.b
        )
        pick = _fill_to_b(
            inf.greedy_two_hop(g_ver, spec.poi_ids, spec.b), spec.poi_ids, spec.b
        )
        optimistic_value = inf.two_hop_influence(dataset.social, g_opt.seeds_of(pick_opt))
        verified_value = inf.two_hop_influence(dataset.social, g_ver.seeds_of(pick))
        ratio = 1.0 if optimistic_value <= 0.0 else verified_value / optimistic_value
        if ratio >= TARGET_OFFSET:
            break
        if not order:
            break
    if not order:  # no candidates at all
        g_ver = inf.build_influence_graph(dataset.social, verified_members)
        pick = _fill_to_b((), spec.poi_ids, spec.b)

    outcome = SolverOutcome(method="he", selected=pick)
    outcome.iterations = batches
    outcome.ratio = ratio
    outcome.estimate = inf.two_hop_influence(
        dataset.social, inf.build_influence_graph(dataset.social, verified_members).seeds_of(pick)
    )
    timings["selection"] = time.perf_counter() - t_sel
    outcome.wall_time = timings["total"] = time.perf_counter() - t_start
    outcome.timings = timings
    outcome.stats = stats.as_dict()
    outcome.stats.update(verified=verified_n, candidates_total=len(order))
    return outcome


# ---------------------------------------------------------------------------
# Competitor policies
# ---------------------------------------------------------------------------


def _greedy_union(cover_sets, candidates, b):
    """Greedy max-union over per-POI element sets; ties by poi id."""
    selected, covered = [], set()
    candidates = sorted(set(candidates))
    while len(selected) < b and len(selected) < len(candidates):
        best, best_gain = None, -1
        for p in candidates:
            if p in selected:
                continue
            gain = len(cover_sets.get(p, set()) - covered)
            if gain > best_gain:
                best, best_gain = p, gain
        selected.append(best)
        covered |= cover_sets.get(best, set())
    return selected


def policy_random(spec, dataset):
    rng = np.random.default_rng([spec.seed, 97])
    picked = rng.choice(len(spec.poi_ids), size=spec.b, replace=False)
    return tuple(sorted(spec.poi_ids[int(i)] for i in picked))


def policy_relevance(spec, dataset, oracle=None, radius_m=5000.0):
    """b POIs covering the most nearby textually/socially relevant users."""
    if oracle is None:
        oracle = build_distance_oracle(dataset.road)
    cover = {}
    for p in spec.poi_ids:
        poi = dataset.pois[p]
        row = oracle.vertex_distances(poi.loc.vertex)
        nearby_relevant = set(socially_relevant_users(dataset, poi))
        for t in sorted(poi.keywords):
            nearby_relevant.update(dataset.vocab.user_postings.get(t, ()))
        kept = set()
        for u in nearby_relevant:
            user = dataset.users[u]
            d = float(row[user.loc.vertex])
            if d + user.loc.offset + poi.loc.offset <= radius_m or user.loc == poi.loc:
                kept.add(u)
        cover[p] = kept
    return tuple(sorted(_greedy_union(cover, spec.poi_ids, spec.b)))


def policy_influencer(spec, dataset, index, oracle=None, ctx=None, x=200, rr_size=1 << 16):
    """b POIs relevant to the most of the top-x sampled influencers."""
    if ctx is None:
        ctx = make_context(dataset, index, spec, oracle)
    relevant = set()
    for p in spec.poi_ids:
        poi = dataset.pois[p]
        relevant.update(socially_relevant_users(dataset, poi))
        for t in sorted(poi.keywords):
            relevant.update(dataset.vocab.user_postings.get(t, ()))
    if not relevant:
        return policy_random(spec, dataset)
    # Standard user-level reverse-reachable ranking, restricted to relevant
    # users: each user is its own singleton seed set.
    g = inf.build_influence_graph(dataset.social, {u: (u,) for u in sorted(relevant)})
    col = inf.RrCollection(g, inf.FULL, base_seed=spec.seed * 4 + 3)
    col.extend(rr_size)
    influencers = inf.greedy_max_coverage(col, sorted(relevant), min(x, len(relevant)))
    cover = {p: set() for p in spec.poi_ids}
    wanted = set(spec.poi_ids)
    for u in influencers:
        for pid, _ in ctx.top_k(u, spec.k):
            if pid in wanted:
                cover[pid].add(u)
    return tuple(sorted(_greedy_union(cover, spec.poi_ids, spec.b)))


def policy_maxbrknn(spec, dataset, index, oracle=None, ctx=None, brknn_result=None):
    """b POIs greedily maximizing the size of the combined reverse top-k."""
    if ctx is None:
        ctx = make_context(dataset, index, spec, oracle)
    if brknn_result is None:
        brknn_result = batch_reverse_topk(ctx, spec.poi_ids, spec.k)
    cover = {p: set(us) for p, us in brknn_result.members.items()}
    return tuple(sorted(_greedy_union(cover, spec.poi_ids, spec.b)))


POLICIES = ("relevance", "influencer", "maxbrknn", "random")


def solve_policy(method, spec, dataset, index, oracle=None, ctx=None, brknn_result=None,
                 mc_budget=1000):
    """Run one competitor policy and wrap it in a SolverOutcome (MC estimate)."""
    t0 = time.perf_counter()
    if method == "random":
        selected = policy_random(spec, dataset)
    elif method == "relevance":
        selected = policy_relevance(spec, dataset, oracle=oracle or (ctx and ctx.oracle))
    elif method == "influencer":
        selected = policy_influencer(spec, dataset, index, oracle=oracle, ctx=ctx)
    elif method == "maxbrknn":
        selected = policy_maxbrknn(
            spec, dataset, index, oracle=oracle, ctx=ctx, brknn_result=brknn_result
        )
    else:
        raise ValueError(f"unknown policy {method!r}")
    outcome = SolverOutcome(method=method, selected=tuple(selected))
    if ctx is None:
        ctx = make_context(dataset, index, spec, oracle)
    members = (
        brknn_result.members
        if brknn_result is not None
        else batch_reverse_topk(ctx, spec.poi_ids, spec.k).members
    )
    seeds = set()
    for p in outcome.selected:
        seeds.update(members.get(p, ()))
    mean, _ = inf.estimate_influence_mc(
        dataset.social, seeds, mc_budget, np.random.default_rng([spec.seed, 11])
    )
    outcome.estimate = mean
    outcome.wall_time = outcome.timings["total"] = time.perf_counter() - t0
    return outcome


# ---------------------------------------------------------------------------
# Exhaustive oracle
# ---------------------------------------------------------------------------


def exhaustive_optimal(spec, dataset, mode="exact", n_sims=20000, rng=None,
                       members=None, max_subsets=10_000):
    """Enumerate all size-b subsets and return (best subset, its influence).

    Reverse top-k sets come from the brute-force oracle unless supplied.
    ``exact`` mode evaluates by possible-world enumeration (guarded by the
    social edge cap); ``mc`` falls back to Monte-Carlo with the given budget.
    Ties go to the lexicographically smallest subset.
    """
    n_subsets = math.comb(len(spec.poi_ids), spec.b)
    if n_subsets > max_subsets:
        raise ValueError(f"{n_subsets} subsets exceed the cap {max_subsets}")
    if members is None:
        members = oracle_brknn(dataset, spec.poi_ids, spec.k, spec.params())
    subsets = list(itertools.combinations(spec.poi_ids, spec.b))
    seed_sets = []
    for sub in subsets:
        seeds = set()
        for p in sub:
            seeds.update(members[p])
        seed_sets.append(sorted(seeds))
    if mode == "exact":
        values = inf.exact_influence_many(dataset.social, seed_sets)
    elif mode == "mc":
        if rng is None:
            rng = np.random.default_rng(spec.seed)
        values = [
            inf.estimate_influence_mc(dataset.social, ss, n_sims, rng)[0] for ss in seed_sets
        ]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    best_i = max(range(len(subsets)), key=lambda i: values[i])
    for i in range(len(subsets)):  # first index attaining the max = lex smallest
        if values[i] == values[best_i]:
            best_i = i
            break
    return tuple(subsets[best_i]), values[best_i]
