"""Road-network index: partition tree, inverted files, and per-keyword NVDs.

The index has two coupled structures:

* A hierarchical partition tree of the road network ("G-Tree" style): each
  node owns a vertex set, its children partition that set, and the node's
  border vertices are those with an edge leaving the subgraph.  Every node
  carries an inverted file mapping keywords to the POIs and users beneath it.

* Per-keyword network Voronoi diagrams (NVDs) for *frequent* keywords: each
  road vertex is owned by its nearest POI carrying the keyword (ties to the
  smaller poi id), with cell adjacency derived from cut edges.  Infrequent
  keywords keep plain sorted posting lists instead.

Nearest-POI maps (per-vertex at leaves, per-border at internal nodes) are
dictionary-compressed by sharing identical owner vectors across keywords;
compression is lossless.
"""

from __future__ import annotations

import hashlib
import heapq
import pickle
from dataclasses import dataclass, field

import numpy as np

from .geo_core import INFINITE_DISTANCE

_NO_OWNER = -1
_MAGIC = b"GSMIIDX1"
INDEX_VERSION = 1


class InfrequentKeywordError(KeyError):
    """NVD lookup on an infrequent keyword; use the posting-list path."""


class IndexFormatError(ValueError):
    """Index file is unreadable: bad magic, version, or content hash."""


# ---------------------------------------------------------------------------
# Partition tree
# ---------------------------------------------------------------------------


@dataclass
class GTreeNode:
    id: int
    parent: int | None = None
    children: tuple = ()
    vertices: tuple = ()
    borders: tuple = ()
    depth: int = 0

    @property
    def is_leaf(self):
        return not self.children


@dataclass
class GTree:
    nodes: list
    leaf_of_vertex: np.ndarray
    fanout: int
    leaf_capacity: int

    @property
    def root(self):
        return self.nodes[0]

    def ancestors(self, node_id):
        """Node ids from the node's parent up to the root."""
        out = []
        nid = self.nodes[node_id].parent
        while nid is not None:
            out.append(nid)
            nid = self.nodes[nid].parent
        return out

    def path_child(self, ancestor_id, node_id):
        """The child of ``ancestor_id`` whose subtree contains ``node_id``."""
        nid = node_id
        while nid is not None:
            parent = self.nodes[nid].parent
            if parent == ancestor_id:
                return nid
            nid = parent
        raise ValueError(f"node {ancestor_id} is not an ancestor of {node_id}")


def _subgraph_bfs_farthest(adjacency, members, start):
    """Farthest member from start by hop count within the vertex set."""
    level = {start: 0}
    frontier = [start]
    far, far_hops = start, 0
    hops = 0
    while frontier:
        hops += 1
        nxt = []
        for v in frontier:
            for u, _ in adjacency[v]:
                if u in members and u not in level:
                    level[u] = hops
                    nxt.append(u)
        if nxt:
            far = min(nxt)
            far_hops = hops
        frontier = sorted(nxt)
    return far, level


def _region_grow(adjacency, members, seeds):
    """Multi-source BFS assignment; ties go to the lower seed index."""
    assign = {s: i for i, s in enumerate(seeds)}
    frontier = list(seeds)
    while frontier:
        nxt = []
        for v in frontier:
            part = assign[v]
            for u, _ in adjacency[v]:
                if u in members and u not in assign:
                    assign[u] = part
                    nxt.append(u)
        frontier = sorted(nxt, key=lambda u: (assign[u], u))
    return assign


def _split_vertices(adjacency, vertices, parts):
    """Partition a vertex list into at most ``parts`` nonempty groups."""
    members = set(vertices)
    start = vertices[0]
    s1, _ = _subgraph_bfs_farthest(adjacency, members, start)
    seeds = [s1]
    while len(seeds) < min(parts, len(vertices)):
        reach = _region_grow(adjacency, members, seeds)
        unreached = members - reach.keys()
        if unreached:
            seeds.append(min(unreached))
            continue
        # Farthest vertex from the current seed set.
        level = {s: 0 for s in seeds}
        frontier = sorted(seeds)
        far, hops = None, -1
        h = 0
        while frontier:
            h += 1
            nxt = []
            for v in frontier:
                for u, _ in adjacency[v]:
                    if u in members and u not in level:
                        level[u] = h
                        nxt.append(u)
            if nxt:
                far, hops = min(nxt), h
            frontier = sorted(nxt)
        if far is None or hops < 1 or far in seeds:
            break
        seeds.append(far)

    assign = _region_grow(adjacency, members, seeds)
    groups = [[] for _ in seeds]
    unreached = sorted(members - assign.keys())
    for v in sorted(assign):
        groups[assign[v]].append(v)
    # Attach disconnected leftovers, component by component, to the smallest
    # group so balance survives.
    remaining = set(unreached)
    while remaining:
        comp_start = min(remaining)
        comp = {comp_start}
        stack = [comp_start]
        while stack:
            v = stack.pop()
            for u, _ in adjacency[v]:
                if u in remaining and u not in comp:
                    comp.add(u)
                    stack.append(u)
        remaining -= comp
        target = min(range(len(groups)), key=lambda i: (len(groups[i]), i))
        groups[target].extend(sorted(comp))
        groups[target].sort()
        for v in comp:
            assign[v] = target

    # One boundary-refinement pass: move a vertex to the neighboring part
    # holding more of its neighbors, if balance allows.
    cap = int(1.3 * (len(vertices) / len(groups))) + 1
    sizes = [len(g) for g in groups]
    for v in sorted(members):
        here = assign[v]
        counts = {}
        for u, _ in adjacency[v]:
            if u in members:
                counts[assign[u]] = counts.get(assign[u], 0) + 1
        if not counts:
            continue
        best = max(sorted(counts), key=lambda p: counts[p])
        if best != here and counts[best] > counts.get(here, 0):
            if sizes[here] > 1 and sizes[best] + 1 <= cap:
                assign[v] = best
                sizes[here] -= 1
                sizes[best] += 1
    groups = [[] for _ in groups]
    for v in sorted(members):
        groups[assign[v]].append(v)
    return [g for g in groups if g]


def build_gtree(road, fanout=4, leaf_capacity=64):
    """Recursive balanced-ish partition hierarchy over the road network."""
    if fanout < 2:
        raise ValueError("fanout must be >= 2")
    if leaf_capacity < 1:
        raise ValueError("leaf_capacity must be >= 1")
    adjacency = road.adjacency
    all_vertices = list(range(road.n_vertices))
    nodes = [GTreeNode(id=0, parent=None, vertices=tuple(all_vertices), depth=0)]
    queue = [0]
    while queue:
        nid = queue.pop(0)
        node = nodes[nid]
        if len(node.vertices) <= leaf_capacity:
            continue
        groups = _split_vertices(adjacency, list(node.vertices), fanout)
        if len(groups) < 2:
            continue  # unsplittable; keep as an oversized leaf
        child_ids = []
        for g in groups:
            cid = len(nodes)
            nodes.append(
                GTreeNode(id=cid, parent=nid, vertices=tuple(g), depth=node.depth + 1)
            )
            child_ids.append(cid)
            queue.append(cid)
        node.children = tuple(child_ids)

    leaf_of_vertex = np.full(road.n_vertices, -1, dtype=np.int32)
    for node in nodes:
        member_set = set(node.vertices)
        node.borders = tuple(
            v for v in node.vertices if any(u not in member_set for u, _ in adjacency[v])
        )
        if node.is_leaf:
            leaf_of_vertex[list(node.vertices)] = node.id
    return GTree(nodes=nodes, leaf_of_vertex=leaf_of_vertex, fanout=fanout, leaf_capacity=leaf_capacity)


# ---------------------------------------------------------------------------
# Network Voronoi diagrams
# ---------------------------------------------------------------------------


@dataclass
class Nvd:
    """Ownership of every road vertex by its nearest keyword-carrying POI."""

    keyword: str
    owner: np.ndarray  # vertex -> poi id (or -1 when unreachable)
    dist: np.ndarray  # vertex -> distance to owner
    adjacency: dict  # poi id -> tuple of adjacent poi ids


def build_nvd(road, keyword, members):
    """One multi-source Dijkstra seeded at all member POI locations.

    ``members`` is a list of ``(poi_id, Location)``.  Ownership follows the
    lexicographic key ``(distance, poi_id)`` so ties deterministically go to
    the smaller id.  Vertices unreachable from every member stay unowned.
    """
    if not members:
        raise ValueError(f"keyword {keyword!r} has no POIs")
    n = road.n_vertices
    best_d = np.full(n, INFINITE_DISTANCE)
    best_p = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    settled = np.zeros(n, dtype=bool)
    heap = []
    for pid, loc in sorted(members):
        key = (loc.offset, pid)
        if key < (best_d[loc.vertex], best_p[loc.vertex]):
            best_d[loc.vertex], best_p[loc.vertex] = key
            heap.append((loc.offset, pid, loc.vertex))
    heapq.heapify(heap)
    adjacency = road.adjacency
    while heap:
        d, pid, v = heapq.heappop(heap)
        if settled[v] or (d, pid) != (best_d[v], best_p[v]):
            continue
        settled[v] = True
        for u, w in adjacency[v]:
            if settled[u]:
                continue
            nd = d + w
            if (nd, pid) < (best_d[u], best_p[u]):
                best_d[u] = nd
                best_p[u] = pid
                heapq.heappush(heap, (nd, pid, u))
    owner = np.where(settled, best_p, _NO_OWNER).astype(np.int64)
    dist = np.where(settled, best_d, INFINITE_DISTANCE)

    adj = {pid: set() for pid, _ in members}
    for u, v, _ in road.edges:
        ou, ov = int(owner[u]), int(owner[v])
        if ou != ov and ou != _NO_OWNER and ov != _NO_OWNER:
            adj[ou].add(ov)
            adj[ov].add(ou)
    # A member that loses its own attachment vertex (co-location or an exact
    # distance tie) owns no cell and would be unreachable through cut-edge
    # adjacency alone.  Linking it to the owner of its vertex keeps
    # distance-ordered expansion complete: that owner is never farther from
    # any query point than the member itself.
    for pid, loc in members:
        ov = int(owner[loc.vertex])
        if ov != _NO_OWNER and ov != pid:
            adj[pid].add(ov)
            adj[ov].add(pid)
    return Nvd(
        keyword=keyword,
        owner=owner,
        dist=dist,
        adjacency={pid: tuple(sorted(s)) for pid, s in sorted(adj.items())},
    )


def classify_keywords(dataset, threshold):
    """Split the POI vocabulary into frequent keywords and posting lists."""
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    frequent = frozenset(t for t, df in dataset.vocab.poi_df.items() if df >= threshold)
    postings = {
        t: tuple(ids)
        for t, ids in dataset.vocab.poi_postings.items()
        if t not in frequent
    }
    return frequent, postings


# ---------------------------------------------------------------------------
# Compressed nearest-POI maps
# ---------------------------------------------------------------------------


class CompressedNnMap:
    """Owner vectors per keyword, deduplicated across keywords.

    Keywords whose owner vector is constant collapse to a single shared
    scalar record; identical vectors share one record.  Lookups are exactly
    the uncompressed lookups.
    """

    def __init__(self, vertices, by_keyword, records):
        self.vertices = vertices  # sorted np array of covered vertices
        self.by_keyword = by_keyword  # keyword -> record index
        self.records = records  # ("const", pid) or ("vec", np array)

    @classmethod
    def build(cls, vertices, keyword_vectors):
        vertices = np.asarray(sorted(vertices), dtype=np.int64)
        records, by_keyword, interned = [], {}, {}
        for t in sorted(keyword_vectors):
            vec = np.asarray(keyword_vectors[t], dtype=np.int64)
            if vec.size and np.all(vec == vec[0]):
                key = ("const", int(vec[0]))
            else:
                key = ("vec", vec.tobytes())
            idx = interned.get(key)
            if idx is None:
                idx = len(records)
                records.append(("const", int(vec[0])) if key[0] == "const" else ("vec", vec))
                interned[key] = idx
            by_keyword[t] = idx
        return cls(vertices, by_keyword, records)

    def lookup(self, vertex, keyword):
        kind, payload = self.records[self.by_keyword[keyword]]
        if kind == "const":
            pid = payload
        else:
            i = int(np.searchsorted(self.vertices, vertex))
            if i >= len(self.vertices) or self.vertices[i] != vertex:
                raise KeyError(f"vertex {vertex} not covered by this map")
            pid = int(payload[i])
        return None if pid == _NO_OWNER else pid

    def n_records(self):
        return len(self.records)


# ---------------------------------------------------------------------------
# The assembled index
# ---------------------------------------------------------------------------


@dataclass
class IgNvdIndex:
    gtree: GTree
    threshold: int
    frequent: frozenset
    nvds: dict  # keyword -> Nvd
    postings: dict  # infrequent keyword -> sorted tuple of poi ids
    nn_maps: dict = field(default_factory=dict)  # node id -> CompressedNnMap
    node_inv_pois: list = field(default_factory=list)  # node id -> {kw: tuple}
    node_inv_users: list = field(default_factory=list)
    node_user_ids: list = field(default_factory=list)
    node_user_vertices: list = field(default_factory=list)
    node_user_offsets: list = field(default_factory=list)
    dataset_fingerprint: str = ""
    dataset_path: str = ""
    version: int = INDEX_VERSION

    def node(self, node_id):
        return self.gtree.nodes[node_id]

    def leaf_of(self, vertex):
        return int(self.gtree.leaf_of_vertex[vertex])

    def user_keywords_under(self, node_id):
        return self.node_inv_users[node_id].keys()

    def users_under(self, node_id, keywords):
        """Sorted user ids beneath the node carrying any of the keywords."""
        inv = self.node_inv_users[node_id]
        out = set()
        for t in keywords:
            out.update(inv.get(t, ()))
        return sorted(out)


def nvd_lookup(index, vertex, keyword):
    """Owner POI of the vertex's cell (None if unreachable)."""
    nvd = index.nvds.get(keyword)
    if nvd is None:
        raise InfrequentKeywordError(
            f"keyword {keyword!r} is infrequent; scan its posting list instead"
        )
    pid = int(nvd.owner[vertex])
    return None if pid == _NO_OWNER else pid


def nvd_adjacent(index, poi_id, keyword):
    """POIs whose cells share a cut edge with this POI's cell."""
    nvd = index.nvds.get(keyword)
    if nvd is None:
        raise InfrequentKeywordError(
            f"keyword {keyword!r} is infrequent; scan its posting list instead"
        )
    return nvd.adjacency[poi_id]


def compress_nn_maps(index):
    """(Re)build the dictionary-coded nearest-POI maps from the NVDs.

    Leaves cover all their vertices; internal nodes cover their borders.
    Only keywords present in the node's inverted file are stored.  Lossless:
    every stored lookup equals the corresponding NVD lookup.
    """
    index.nn_maps = {}
    if not index.nvds:
        return index
    for node in index.gtree.nodes:
        key_vertices = node.vertices if node.is_leaf else node.borders
        if not key_vertices:
            continue
        present = (
            set(index.node_inv_pois[node.id]) | set(index.node_inv_users[node.id])
            if index.node_inv_pois
            else set(index.nvds)
        )
        vecs = {}
        varr = np.asarray(sorted(key_vertices), dtype=np.int64)
        for t in sorted(present):
            nvd = index.nvds.get(t)
            if nvd is not None:
                vecs[t] = nvd.owner[varr]
        if vecs:
            index.nn_maps[node.id] = CompressedNnMap.build(varr, vecs)
    return index


def build_index(dataset, threshold, fanout=4, leaf_capacity=64, dataset_path=""):
    """Construct the full index for a dataset."""
    gtree = build_gtree(dataset.road, fanout=fanout, leaf_capacity=leaf_capacity)
    frequent, postings = classify_keywords(dataset, threshold)

    nvds = {}
    for t in sorted(frequent):
        members = [(pid, dataset.pois[pid].loc) for pid in dataset.vocab.poi_postings[t]]
        nvds[t] = build_nvd(dataset.road, t, members)

    n_nodes = len(gtree.nodes)
    inv_pois = [dict() for _ in range(n_nodes)]
    inv_users = [dict() for _ in range(n_nodes)]
    node_users = [[] for _ in range(n_nodes)]

    def paths_to_root(vertex):
        nid = int(gtree.leaf_of_vertex[vertex])
        while nid is not None:
            yield nid
            nid = gtree.nodes[nid].parent

    tmp_p = [dict() for _ in range(n_nodes)]
    tmp_u = [dict() for _ in range(n_nodes)]
    for p in dataset.pois:
        for nid in paths_to_root(p.loc.vertex):
            for t in p.keywords:
                tmp_p[nid].setdefault(t, []).append(p.id)
    for u in dataset.users:
        for nid in paths_to_root(u.loc.vertex):
            node_users[nid].append(u.id)
            for t in u.keywords:
                tmp_u[nid].setdefault(t, []).append(u.id)
    for nid in range(n_nodes):
        inv_pois[nid] = {t: tuple(sorted(ids)) for t, ids in sorted(tmp_p[nid].items())}
        inv_users[nid] = {t: tuple(sorted(ids)) for t, ids in sorted(tmp_u[nid].items())}

    node_user_ids, node_user_vertices, node_user_offsets = [], [], []
    for nid in range(n_nodes):
        ids = tuple(sorted(node_users[nid]))
        node_user_ids.append(ids)
        node_user_vertices.append(
            np.fromiter((dataset.users[i].loc.vertex for i in ids), dtype=np.int64, count=len(ids))
        )
        node_user_offsets.append(
            np.fromiter((dataset.users[i].loc.offset for i in ids), dtype=np.float64, count=len(ids))
        )

    index = IgNvdIndex(
        gtree=gtree,
        threshold=threshold,
        frequent=frequent,
        nvds=nvds,
        postings=postings,
        node_inv_pois=inv_pois,
        node_inv_users=inv_users,
        node_user_ids=node_user_ids,
        node_user_vertices=node_user_vertices,
        node_user_offsets=node_user_offsets,
        dataset_fingerprint=dataset.manifest.get("sha256", ""),
        dataset_path=str(dataset_path),
    )
    return compress_nn_maps(index)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_index(index, path):
    payload = pickle.dumps(index, protocol=pickle.HIGHEST_PROTOCOL)
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(INDEX_VERSION.to_bytes(4, "little"))
        fh.write(digest)
        fh.write(payload)
    return path


def load_index(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise IndexFormatError("not an index file (bad magic)")
        version = int.from_bytes(fh.read(4), "little")
        if version != INDEX_VERSION:
            raise IndexFormatError(f"unsupported index version {version}")
        digest = fh.read(32)
        payload = fh.read()
    if hashlib.sha256(payload).digest() != digest:
        raise IndexFormatError("index content hash mismatch (truncated or corrupt file)")
    index = pickle.loads(payload)
    if not isinstance(index, IgNvdIndex):
        raise IndexFormatError("index payload has unexpected type")
    return index
