"""Immutable geo-social data model, dataset bundle I/O, and distance oracles.

Locations are road-network attachments ``(vertex, offset)``.  The network
distance between two distinct locations is ``offset_a + d(v_a, v_b) +
offset_b`` where ``d`` is the exact shortest-path distance between the
attachment vertices; identical locations have distance 0.  Composing offsets
through the attachment vertex is a documented reading -- generated bundles
use zero offsets throughout, so the rule only matters for hand-built data.

Two oracle strategies answer distance queries:

* ``dijkstra``   -- full single-source rows computed by scipy's C Dijkstra,
  kept in a bounded LRU cache.  This is the default query backend.
* ``hub_labels`` -- an exact pruned 2-hop labeling built deterministically
  from a degree-descending vertex order.  Slower to build, near-constant
  query time, intended for small/medium networks and equivalence tests.

Disconnected pairs yield ``math.inf``; callers treat such POIs as
unreachable (score 0).
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

INFINITE_DISTANCE = math.inf

DATASET_FILES = (
    "road_vertices.tsv",
    "road_edges.tsv",
    "pois.tsv",
    "users.tsv",
    "social_edges.tsv",
)


class DataError(ValueError):
    """A dataset bundle is malformed or violates a model invariant."""


@dataclass(frozen=True)
class Location:
    """A position on the road network: nearest vertex plus offset in meters."""

    vertex: int
    offset: float = 0.0


@dataclass(frozen=True)
class Poi:
    id: int
    loc: Location
    keywords: dict  # keyword -> positive weight
    checkins: frozenset  # user ids


@dataclass(frozen=True)
class User:
    id: int
    loc: Location
    keywords: dict  # keyword -> positive weight (may be empty)
    friends: frozenset  # user ids, symmetric


class RoadNetwork:
    """Undirected weighted road graph with dense vertex ids.

    Edge weights are strictly positive finite meters; self-loops and
    duplicate edges are rejected.
    """

    def __init__(self, n_vertices, edges, coords=None):
        if n_vertices < 1:
            raise DataError("road network needs at least one vertex")
        self.n_vertices = int(n_vertices)
        self.coords = None if coords is None else np.asarray(coords, dtype=float)
        if self.coords is not None and len(self.coords) != self.n_vertices:
            raise DataError("coordinate count does not match vertex count")
        adj = [[] for _ in range(self.n_vertices)]
        seen = set()
        canonical = []
        for u, v, w in edges:
            u, v = int(u), int(v)
            if not (0 <= u < self.n_vertices and 0 <= v < self.n_vertices):
                raise DataError(f"road edge ({u},{v}) references unknown vertex")
            if u == v:
                raise DataError(f"road self-loop at vertex {u}")
            key = (u, v) if u < v else (v, u)
            if key in seen:
                raise DataError(f"duplicate road edge ({u},{v})")
            w = float(w)
            if not (w > 0.0 and math.isfinite(w)):
                raise DataError(f"road edge ({u},{v}) weight must be positive finite")
            seen.add(key)
            canonical.append((key[0], key[1], w))
            adj[u].append((v, w))
            adj[v].append((u, w))
        self.edges = tuple(canonical)
        self.adjacency = tuple(tuple(sorted(nbrs)) for nbrs in adj)

    @cached_property
    def csr(self):
        """Symmetric CSR matrix (both directions stored) for scipy Dijkstra."""
        if not self.edges:
            return csr_matrix((self.n_vertices, self.n_vertices))
        us, vs, ws = zip(*self.edges)
        row = np.fromiter(us, dtype=np.int32, count=len(us))
        col = np.fromiter(vs, dtype=np.int32, count=len(vs))
        dat = np.fromiter(ws, dtype=np.float64, count=len(ws))
        return csr_matrix(
            (np.concatenate([dat, dat]), (np.concatenate([row, col]), np.concatenate([col, row]))),
            shape=(self.n_vertices, self.n_vertices),
        )

    def degree(self, v):
        return len(self.adjacency[v])


class SocialNetwork:
    """Directed influence graph over user ids with weights in [0, 1]."""

    def __init__(self, n_users, weighted_edges):
        self.n_users = int(n_users)
        out_adj = [[] for _ in range(self.n_users)]
        in_adj = [[] for _ in range(self.n_users)]
        seen = set()
        for u, v, w in weighted_edges:
            u, v = int(u), int(v)
            if not (0 <= u < self.n_users and 0 <= v < self.n_users):
                raise DataError(f"social edge ({u},{v}) references unknown user")
            if u == v:
                raise DataError(f"social self-loop at user {u}")
            if (u, v) in seen:
                raise DataError(f"duplicate social edge ({u},{v})")
            w = float(w)
            if not (0.0 <= w <= 1.0):
                raise DataError(f"social edge ({u},{v}) weight {w} outside [0,1]")
            seen.add((u, v))
            out_adj[u].append((v, w))
            in_adj[v].append((u, w))
        self.out_edges = tuple(tuple(sorted(nbrs)) for nbrs in out_adj)
        self.in_edges = tuple(tuple(sorted(nbrs)) for nbrs in in_adj)
        self.n_edges = len(seen)

    def in_degree(self, v):
        return len(self.in_edges[v])

    def edge_list(self):
        """All directed edges as (src, dst, weight), sorted."""
        out = []
        for u, nbrs in enumerate(self.out_edges):
            for v, w in nbrs:
                out.append((u, v, w))
        return out


@dataclass(frozen=True)
class Vocabulary:
    """Per-keyword document frequencies and sorted posting lists."""

    poi_df: dict
    user_df: dict
    poi_postings: dict  # keyword -> tuple of poi ids
    user_postings: dict  # keyword -> tuple of user ids

    @classmethod
    def build(cls, pois, users):
        poi_postings, user_postings = {}, {}
        for p in pois:
            for t in p.keywords:
                poi_postings.setdefault(t, []).append(p.id)
        for u in users:
            for t in u.keywords:
                user_postings.setdefault(t, []).append(u.id)
        poi_postings = {t: tuple(sorted(ids)) for t, ids in sorted(poi_postings.items())}
        user_postings = {t: tuple(sorted(ids)) for t, ids in sorted(user_postings.items())}
        return cls(
            poi_df={t: len(ids) for t, ids in poi_postings.items()},
            user_df={t: len(ids) for t, ids in user_postings.items()},
            poi_postings=poi_postings,
            user_postings=user_postings,
        )


@dataclass(frozen=True)
class GeoSocialDataset:
    """The shared immutable world model.

    All ids are dense: vertices in [0, |V_r|), users in [0, |U|), POIs in
    [0, |P|).  ``source_ids`` preserves the identifiers found in the bundle
    when they were remapped at load time.
    """

    road: RoadNetwork
    social: SocialNetwork
    pois: tuple
    users: tuple
    vocab: Vocabulary
    source_ids: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.pois:
            raise DataError("no POIs")
        if self.social.n_users != len(self.users):
            raise DataError("social network user count differs from user list")
        user_ids = {u.id for u in self.users}
        for kind, objs in (("poi", self.pois), ("user", self.users)):
            for i, o in enumerate(objs):
                if o.id != i:
                    raise DataError(f"{kind} ids must be dense, found {o.id} at index {i}")
                if not (0 <= o.loc.vertex < self.road.n_vertices):
                    raise DataError(f"{kind} {o.id} at nonexistent vertex {o.loc.vertex}")
                if o.loc.offset < 0:
                    raise DataError(f"{kind} {o.id} has negative offset")
                for t, w in o.keywords.items():
                    if not w > 0:
                        raise DataError(f"{kind} {o.id} keyword {t!r} weight must be positive")
        for p in self.pois:
            if not p.checkins <= user_ids:
                raise DataError(f"poi {p.id} has check-ins from unknown users")
        social_pairs = {
            (u, v) for u, nbrs in enumerate(self.social.out_edges) for v, _ in nbrs
        }
        for u in self.users:
            for f in u.friends:
                if f not in user_ids:
                    raise DataError(f"user {u.id} has unknown friend {f}")
                if u.id not in self.users[f].friends:
                    raise DataError(f"friendship {u.id}<->{f} is not symmetric")
                if (u.id, f) not in social_pairs and (f, u.id) not in social_pairs:
                    raise DataError(
                        f"friendship {u.id}<->{f} has no social edge in either direction"
                    )
        recount = Vocabulary.build(self.pois, self.users)
        if recount.poi_df != self.vocab.poi_df or recount.user_df != self.vocab.user_df:
            raise DataError("vocabulary frequencies disagree with recounts")

    @cached_property
    def checkin_index(self):
        """user id -> sorted tuple of poi ids the user checked into."""
        inv = {}
        for p in self.pois:
            for u in p.checkins:
                inv.setdefault(u, []).append(p.id)
        return {u: tuple(sorted(ps)) for u, ps in inv.items()}

    @cached_property
    def poi_locations(self):
        return tuple(p.loc for p in self.pois)

    def counts(self):
        return {
            "road_vertices": self.road.n_vertices,
            "road_edges": len(self.road.edges),
            "users": len(self.users),
            "pois": len(self.pois),
            "social_edges": self.social.n_edges,
            "keywords": len(set(self.vocab.poi_df) | set(self.vocab.user_df)),
        }


# ---------------------------------------------------------------------------
# Distance oracles
# ---------------------------------------------------------------------------


def _hub_query(la, lb):
    if len(la) > len(lb):
        la, lb = lb, la
    best = INFINITE_DISTANCE
    for h, d in la.items():
        other = lb.get(h)
        if other is not None and d + other < best:
            best = d + other
    return best


def _build_hub_labels(road):
    """Exact pruned 2-hop labeling; deterministic given the degree order."""
    n = road.n_vertices
    order = sorted(range(n), key=lambda v: (-road.degree(v), v))
    labels = [dict() for _ in range(n)]
    for hub in order:
        hub_labels = labels[hub]
        dist = {hub: 0.0}
        heap = [(0.0, hub)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist.get(u, INFINITE_DISTANCE):
                continue
            if _hub_query(hub_labels, labels[u]) <= d:
                continue
            labels[u][hub] = d
            for v, w in road.adjacency[u]:
                nd = d + w
                if nd < dist.get(v, INFINITE_DISTANCE):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
    return labels


class DistanceOracle:
    """Exact network distances between locations.

    ``vertex_distances(v)`` returns the full distance row from ``v`` (cached),
    which the query-processing layers use heavily; ``distance`` composes
    location offsets on top of the vertex distance.
    """

    STRATEGIES = ("dijkstra", "hub_labels")

    def __init__(self, road, strategy="dijkstra", cache_size=768):
        if strategy not in self.STRATEGIES:
            raise ValueError(f"unknown oracle strategy {strategy!r}")
        self.road = road
        self.strategy = strategy
        self._cache = OrderedDict()
        self._cache_size = int(cache_size)
        self._labels = _build_hub_labels(road) if strategy == "hub_labels" else None

    def vertex_distances(self, v):
        row = self._cache.get(v)
        if row is not None:
            self._cache.move_to_end(v)
            return row
        if self._labels is not None:
            labels = self._labels
            lv = labels[v]
            row = np.fromiter(
                (_hub_query(lv, labels[u]) for u in range(self.road.n_vertices)),
                dtype=np.float64,
                count=self.road.n_vertices,
            )
        else:
            row = _csgraph_dijkstra(self.road.csr, directed=False, indices=v)
        row.setflags(write=False)
        self._cache[v] = row
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return row

    def vertex_distance(self, a, b):
        if a == b:
            return 0.0
        if self._labels is not None:
            return _hub_query(self._labels[a], self._labels[b])
        return float(self.vertex_distances(a)[b])

    def distance(self, a, b):
        if a == b:
            return 0.0
        base = self.vertex_distance(a.vertex, b.vertex)
        if base == INFINITE_DISTANCE:
            return INFINITE_DISTANCE
        return a.offset + base + b.offset


def build_distance_oracle(road, strategy="dijkstra", cache_size=768):
    return DistanceOracle(road, strategy=strategy, cache_size=cache_size)


def shortest_distance(oracle, a, b):
    """Exact network distance between two locations (inf when disconnected)."""
    return oracle.distance(a, b)


# ---------------------------------------------------------------------------
# Bundle I/O
# ---------------------------------------------------------------------------


def _fmt_keywords(kw):
    if not kw:
        return "-"
    return ",".join(f"{t}:{w!r}" for t, w in sorted(kw.items()))


def _fmt_ids(ids):
    if not ids:
        return "-"
    return ",".join(str(i) for i in sorted(ids))


def _parse_keywords(text, where):
    if text == "-" or text == "":
        return {}
    out = {}
    for item in text.split(","):
        try:
            t, w = item.split(":")
            out[t] = float(w)
        except ValueError:
            raise DataError(f"{where}: malformed keyword entry {item!r}") from None
    return out


def _parse_ids(text, where):
    if text == "-" or text == "":
        return frozenset()
    try:
        return frozenset(int(i) for i in text.split(","))
    except ValueError:
        raise DataError(f"{where}: malformed id list {text!r}") from None


def _rows(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            yield lineno, line.split("\t")


def _bundle_hash(directory):
    digest = hashlib.sha256()
    for name in DATASET_FILES:
        digest.update((Path(directory) / name).read_bytes())
    return digest.hexdigest()


def save_dataset(dataset, directory):
    """Write the five-file TSV bundle plus manifest.json; returns the path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    road = dataset.road
    with open(directory / "road_vertices.tsv", "w", encoding="utf-8") as fh:
        fh.write("# id\tx\ty\n")
        for v in range(road.n_vertices):
            if road.coords is None:
                fh.write(f"{v}\t0.0\t0.0\n")
            else:
                x, y = (float(c) for c in road.coords[v])
                fh.write(f"{v}\t{x!r}\t{y!r}\n")
    with open(directory / "road_edges.tsv", "w", encoding="utf-8") as fh:
        fh.write("# src\tdst\tmeters\n")
        for u, v, w in road.edges:
            fh.write(f"{u}\t{v}\t{w!r}\n")
    with open(directory / "pois.tsv", "w", encoding="utf-8") as fh:
        fh.write("# id\tvertex\toffset\tkeywords\tcheckins\n")
        for p in dataset.pois:
            fh.write(
                f"{p.id}\t{p.loc.vertex}\t{p.loc.offset!r}\t"
                f"{_fmt_keywords(p.keywords)}\t{_fmt_ids(p.checkins)}\n"
            )
    with open(directory / "users.tsv", "w", encoding="utf-8") as fh:
        fh.write("# id\tvertex\toffset\tkeywords\tfriends\n")
        for u in dataset.users:
            fh.write(
                f"{u.id}\t{u.loc.vertex}\t{u.loc.offset!r}\t"
                f"{_fmt_keywords(u.keywords)}\t{_fmt_ids(u.friends)}\n"
            )
    with open(directory / "social_edges.tsv", "w", encoding="utf-8") as fh:
        fh.write("# src\tdst\tprob\n")
        for u, v, w in dataset.social.edge_list():
            fh.write(f"{u}\t{v}\t{w!r}\n")
    manifest = dict(dataset.manifest)
    manifest.update(counts=dataset.counts(), sha256=_bundle_hash(directory))
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_dataset(directory):
    """Parse and fully validate a dataset bundle.

    Ids are remapped to dense ranges; the original identifiers are kept in
    ``dataset.source_ids``.  Any malformed line, dangling reference, or
    out-of-range weight raises :class:`DataError` naming the file and line.
    """
    directory = Path(directory)
    for name in DATASET_FILES:
        if not (directory / name).is_file():
            raise DataError(f"missing dataset file {name}")

    vertices = []
    coords = []
    for lineno, cols in _rows(directory / "road_vertices.tsv"):
        where = f"road_vertices.tsv:{lineno}"
        if len(cols) != 3:
            raise DataError(f"{where}: expected 3 columns")
        try:
            vertices.append(int(cols[0]))
            coords.append((float(cols[1]), float(cols[2])))
        except ValueError:
            raise DataError(f"{where}: malformed vertex line") from None
    if len(set(vertices)) != len(vertices):
        raise DataError("road_vertices.tsv: duplicate vertex ids")
    vertex_order = sorted(vertices)
    vmap = {orig: i for i, orig in enumerate(vertex_order)}
    coords_by_new = [None] * len(vertex_order)
    for orig, xy in zip(vertices, coords):
        coords_by_new[vmap[orig]] = xy

    edges = []
    for lineno, cols in _rows(directory / "road_edges.tsv"):
        where = f"road_edges.tsv:{lineno}"
        if len(cols) != 3:
            raise DataError(f"{where}: expected 3 columns")
        try:
            u, v, w = int(cols[0]), int(cols[1]), float(cols[2])
        except ValueError:
            raise DataError(f"{where}: malformed edge line") from None
        if u not in vmap or v not in vmap:
            raise DataError(f"{where}: edge references unknown vertex")
        edges.append((vmap[u], vmap[v], w))
    road = RoadNetwork(len(vertex_order), edges, coords=coords_by_new)

    raw_pois = []
    for lineno, cols in _rows(directory / "pois.tsv"):
        where = f"pois.tsv:{lineno}"
        if len(cols) != 5:
            raise DataError(f"{where}: expected 5 columns")
        try:
            pid, vx, off = int(cols[0]), int(cols[1]), float(cols[2])
        except ValueError:
            raise DataError(f"{where}: malformed poi line") from None
        if vx not in vmap:
            raise DataError(f"{where}: poi at nonexistent vertex {vx}")
        raw_pois.append((pid, vmap[vx], off, _parse_keywords(cols[3], where), cols[4], where))
    if not raw_pois:
        raise DataError("pois.tsv: no POIs")

    raw_users = []
    for lineno, cols in _rows(directory / "users.tsv"):
        where = f"users.tsv:{lineno}"
        if len(cols) != 5:
            raise DataError(f"{where}: expected 5 columns")
        try:
            uid, vx, off = int(cols[0]), int(cols[1]), float(cols[2])
        except ValueError:
            raise DataError(f"{where}: malformed user line") from None
        if vx not in vmap:
            raise DataError(f"{where}: user at nonexistent vertex {vx}")
        raw_users.append((uid, vmap[vx], off, _parse_keywords(cols[3], where), cols[4], where))

    poi_order = sorted(r[0] for r in raw_pois)
    user_order = sorted(r[0] for r in raw_users)
    if len(set(poi_order)) != len(poi_order):
        raise DataError("pois.tsv: duplicate poi ids")
    if len(set(user_order)) != len(user_order):
        raise DataError("users.tsv: duplicate user ids")
    pmap = {orig: i for i, orig in enumerate(poi_order)}
    umap = {orig: i for i, orig in enumerate(user_order)}

    pois = [None] * len(poi_order)
    for pid, vx, off, kw, ck_text, where in raw_pois:
        cks = _parse_ids(ck_text, where)
        try:
            cks = frozenset(umap[c] for c in cks)
        except KeyError as exc:
            raise DataError(f"{where}: check-in references unknown user {exc.args[0]}") from None
        pois[pmap[pid]] = Poi(pmap[pid], Location(vx, off), kw, cks)

    users = [None] * len(user_order)
    for uid, vx, off, kw, fr_text, where in raw_users:
        frs = _parse_ids(fr_text, where)
        try:
            frs = frozenset(umap[f] for f in frs)
        except KeyError as exc:
            raise DataError(f"{where}: friend list references unknown user {exc.args[0]}") from None
        users[umap[uid]] = User(umap[uid], Location(vx, off), kw, frs)

    social_edges = []
    for lineno, cols in _rows(directory / "social_edges.tsv"):
        where = f"social_edges.tsv:{lineno}"
        if len(cols) != 3:
            raise DataError(f"{where}: expected 3 columns")
        try:
            su, sv, w = int(cols[0]), int(cols[1]), float(cols[2])
        except ValueError:
            raise DataError(f"{where}: malformed social edge line") from None
        if su not in umap or sv not in umap:
            raise DataError(f"{where}: social edge references unknown user")
        if not (0.0 <= w <= 1.0):
            raise DataError(f"{where}: social edge weight {w} outside [0,1]")
        social_edges.append((umap[su], umap[sv], w))
    social = SocialNetwork(len(user_order), social_edges)

    manifest = {}
    manifest_path = directory / "manifest.json"
    if manifest_path.is_file():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        recorded = manifest.get("sha256")
        if recorded is not None and recorded != _bundle_hash(directory):
            raise DataError("manifest.json: bundle content hash mismatch")

    dataset = GeoSocialDataset(
        road=road,
        social=social,
        pois=tuple(pois),
        users=tuple(users),
        vocab=Vocabulary.build(pois, users),
        source_ids={
            "vertex": tuple(vertex_order),
            "poi": tuple(poi_order),
            "user": tuple(user_order),
        },
        manifest=manifest,
    )
    counts = manifest.get("counts")
    if counts is not None and counts != dataset.counts():
        raise DataError("manifest.json: recorded counts disagree with bundle contents")
    return dataset
