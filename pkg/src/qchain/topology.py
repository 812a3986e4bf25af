"""Network topologies: GraphML ingestion, link lengths, shortest paths, user pairs.

Files follow the Internet Topology Zoo conventions: node coordinates live in
``Latitude``/``Longitude`` keys and the name in ``label``.  Link lengths are
great-circle distances between the endpoints, optionally inflated by a
fibre-route factor.
"""

from __future__ import annotations

import heapq
import math
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .noise import ChainSpec

EARTH_RADIUS_KM = 6371.0
MIN_LINK_KM = 1.0
_GRAPHML_NS = "http://graphml.graphdrawing.org/xmlns"
_LENGTH_TOL = 1e-9  # km; path lengths closer than this count as equal


class TopologyError(ValueError):
    pass


class GraphParseError(TopologyError):
    pass


class LengthUnderivableError(TopologyError):
    pass


class NoPathError(TopologyError):
    pass


class EmptySelectionError(TopologyError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    label: str = ""
    latitude: Optional[float] = None
    longitude: Optional[float] = None

    @property
    def has_coords(self) -> bool:
        return self.latitude is not None and self.longitude is not None


@dataclass(frozen=True)
class Edge:
    u: str
    v: str
    length_km: float


@dataclass(frozen=True)
class NetworkGraph:
    """Undirected geographic graph.  ``dropped_edges`` lists edges whose length could not be derived."""

    nodes: tuple
    edges: tuple
    name: str = ""
    dropped_edges: tuple = ()
    _adj: dict = field(init=False, repr=False, compare=False)
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_id = {n.id: n for n in self.nodes}
        if len(by_id) != len(self.nodes):
            raise TopologyError("duplicate node ids")
        adj: Dict[str, Dict[str, float]] = {n.id: {} for n in self.nodes}
        for e in self.edges:
            if e.u == e.v:
                raise TopologyError(f"self-loop at node {e.u!r}")
            if e.u not in by_id or e.v not in by_id:
                raise TopologyError(f"edge {e.u!r}-{e.v!r} references an unknown node")
            if not e.length_km > 0:
                raise TopologyError(f"edge {e.u!r}-{e.v!r} has non-positive length")
            adj[e.u][e.v] = e.length_km
            adj[e.v][e.u] = e.length_km
        object.__setattr__(self, "_adj", adj)
        object.__setattr__(self, "_by_id", by_id)

    @property
    def node_ids(self) -> List[str]:
        return sorted(self._by_id, key=node_sort_key)

    @property
    def flagged_nodes(self) -> List[str]:
        """Nodes without coordinates."""
        return [n.id for n in self.nodes if not n.has_coords]

    def node(self, node_id: str) -> Node:
        return self._by_id[node_id]

    def neighbors(self, node_id: str) -> Dict[str, float]:
        return dict(self._adj[node_id])

    def edge_length(self, u: str, v: str) -> float:
        try:
            return self._adj[u][v]
        except KeyError:
            raise TopologyError(f"no edge between {u!r} and {v!r}") from None

    def degree_histogram(self) -> Dict[int, int]:
        c = Counter(len(self._adj[n]) for n in self._by_id)
        return dict(sorted(c.items()))


@dataclass(frozen=True)
class UserPair:
    src: str
    dst: str
    path: tuple
    path_length_km: float

    @property
    def n_repeaters(self) -> int:
        return len(self.path) - 2


@dataclass(frozen=True)
class PairSelection:
    pairs: tuple
    n_qualifying: int
    requested: int

    @property
    def truncated(self) -> bool:
        """True when fewer pairs qualified than were requested."""
        return len(self.pairs) < self.requested

    def __len__(self):
        return len(self.pairs)

    def __iter__(self) -> Iterator[UserPair]:
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]


def node_sort_key(node_id: str):
    """Numeric ids order numerically, everything else after them as text."""
    try:
        return (0, int(node_id), "")
    except ValueError:
        return (1, 0, node_id)


# ------------------------------------------------------------------- lengths


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def derive_length(a: Node, b: Node, inflation: float = 1.0) -> float:
    """Great-circle distance times ``inflation``, never below 1 km."""
    if not (a.has_coords and b.has_coords):
        missing = [n.id for n in (a, b) if not n.has_coords]
        raise LengthUnderivableError(f"missing coordinates for node(s) {missing}")
    d = haversine_km(a.latitude, a.longitude, b.latitude, b.longitude) * inflation
    return max(d, MIN_LINK_KM)


# ------------------------------------------------------------------- parsing


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _float_or_none(text: Optional[str]) -> Optional[float]:
    if text is None or not text.strip():
        return None
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def parse_graphml(data, inflation: float = 1.0) -> NetworkGraph:
    """Parse GraphML bytes (or text) into a :class:`NetworkGraph`."""
    if not inflation > 0:
        raise ValueError("inflation must be positive")
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        raise GraphParseError(f"malformed GraphML at line {line}, column {col}: {exc}") from None
    if _local(root.tag) != "graphml":
        raise GraphParseError(f"root element is <{_local(root.tag)}>, expected <graphml>")

    keys = {}
    for k in root.iter():
        if _local(k.tag) == "key":
            keys[k.get("id")] = (k.get("for", "all"), k.get("attr.name", k.get("id")))
    graph_el = next((g for g in root.iter() if _local(g.tag) == "graph"), None)
    if graph_el is None:
        raise GraphParseError("no <graph> element")

    def attrs(el) -> Dict[str, str]:
        out = {}
        for d in el:
            if _local(d.tag) == "data":
                name = keys.get(d.get("key"), (None, d.get("key")))[1]
                out[name] = (d.text or "").strip()
        return out

    name = ""
    for d in graph_el:
        if _local(d.tag) == "data":
            if keys.get(d.get("key"), (None, ""))[1] in ("Network", "label", "name"):
                name = (d.text or "").strip()

    nodes = []
    for el in graph_el:
        if _local(el.tag) != "node":
            continue
        a = attrs(el)
        lat = _float_or_none(a.get("Latitude", a.get("latitude")))
        lon = _float_or_none(a.get("Longitude", a.get("longitude")))
        nodes.append(Node(el.get("id"), a.get("label", ""), lat, lon))
    if not nodes:
        raise GraphParseError("graph has no nodes")
    by_id = {n.id: n for n in nodes}

    edges, dropped, seen = [], [], set()
    for el in graph_el:
        if _local(el.tag) != "edge":
            continue
        u, v = el.get("source"), el.get("target")
        if u not in by_id or v not in by_id:
            raise GraphParseError(f"edge {u!r}-{v!r} references an unknown node")
        if u == v:
            continue
        pair = frozenset((u, v))
        if pair in seen:
            continue  # parallel edges carry the same geographic length
        seen.add(pair)
        try:
            length = derive_length(by_id[u], by_id[v], inflation)
        except LengthUnderivableError:
            dropped.append((u, v))
            continue
        edges.append(Edge(u, v, length))
    return NetworkGraph(tuple(nodes), tuple(edges), name, tuple(dropped))


def load_graphml(path, inflation: float = 1.0) -> NetworkGraph:
    with open(path, "rb") as fh:
        return parse_graphml(fh.read(), inflation)


def surfnet_path():
    """Path of the bundled SURFnet topology."""
    return resources.files("qchain") / "data" / "Surfnet.graphml"


def load_surfnet(inflation: float = 1.0) -> NetworkGraph:
    return parse_graphml(surfnet_path().read_bytes(), inflation)


def to_graphml(graph: NetworkGraph) -> bytes:
    """Serialise nodes (label, coordinates) and edges in Topology Zoo layout."""
    ET.register_namespace("", _GRAPHML_NS)
    q = lambda t: f"{{{_GRAPHML_NS}}}{t}"  # noqa: E731
    root = ET.Element(q("graphml"))
    for kid, target, aname, atype in (("d0", "graph", "Network", "string"),
                                      ("d1", "node", "Longitude", "double"),
                                      ("d2", "node", "Latitude", "double"),
                                      ("d3", "node", "label", "string")):
        ET.SubElement(root, q("key"), {"attr.name": aname, "attr.type": atype, "for": target, "id": kid})
    g = ET.SubElement(root, q("graph"), {"edgedefault": "undirected"})
    ET.SubElement(g, q("data"), {"key": "d0"}).text = graph.name
    for n in graph.nodes:
        el = ET.SubElement(g, q("node"), {"id": n.id})
        if n.longitude is not None:
            ET.SubElement(el, q("data"), {"key": "d1"}).text = repr(n.longitude)
        if n.latitude is not None:
            ET.SubElement(el, q("data"), {"key": "d2"}).text = repr(n.latitude)
        ET.SubElement(el, q("data"), {"key": "d3"}).text = n.label
    for u, v in [(e.u, e.v) for e in graph.edges] + list(graph.dropped_edges):
        ET.SubElement(g, q("edge"), {"source": u, "target": v})
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


# ------------------------------------------------------------------ routing


def _dijkstra(graph: NetworkGraph, src: str) -> Dict[str, Tuple[float, tuple]]:
    """Shortest (length, path) from ``src`` to every reachable node.

    Among paths of equal length the one whose node sequence sorts first wins.
    """
    skey = node_sort_key
    best: Dict[str, Tuple[float, tuple]] = {src: (0.0, (src,))}
    heap = [(0.0, (skey(src),), (src,))]
    done = set()
    while heap:
        d, _, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        for v, w in graph._adj[u].items():
            if v in done or v in path:
                continue
            nd = d + w
            npath = path + (v,)
            cur = best.get(v)
            if cur is None or nd < cur[0] - _LENGTH_TOL or (
                abs(nd - cur[0]) <= _LENGTH_TOL
                and tuple(map(skey, npath)) < tuple(map(skey, cur[1]))
            ):
                best[v] = (nd, npath)
                heapq.heappush(heap, (nd, tuple(map(skey, npath)), npath))
    return best


def shortest_path(graph: NetworkGraph, src: str, dst: str) -> UserPair:
    for x in (src, dst):
        if x not in graph._by_id:
            raise TopologyError(f"unknown node {x!r}")
    if src == dst:
        raise TopologyError("source and destination must differ")
    best = _dijkstra(graph, src)
    if dst not in best:
        raise NoPathError(f"no path from {src!r} to {dst!r}")
    _, path = best[dst]
    return UserPair(src, dst, path, _path_length(graph, path))


def _path_length(graph: NetworkGraph, path: Sequence[str]) -> float:
    return float(sum(graph.edge_length(a, b) for a, b in zip(path, path[1:])))


def all_pairs(graph: NetworkGraph) -> List[UserPair]:
    """Every ordered, connected (src, dst) pair with its shortest path."""
    out = []
    for s in graph.node_ids:
        best = _dijkstra(graph, s)
        for t in graph.node_ids:
            if t != s and t in best:
                path = best[t][1]
                out.append(UserPair(s, t, path, _path_length(graph, path)))
    return out


def select_user_pairs(
    graph: NetworkGraph,
    min_km: float,
    max_km: float,
    min_repeaters: int,
    count: int,
    seed: int,
) -> PairSelection:
    """Seeded sample without replacement of ordered pairs passing the length and hop filters."""
    if count < 1:
        raise ValueError("count must be >= 1")
    qualifying = [
        p for p in all_pairs(graph)
        if min_km <= p.path_length_km <= max_km and p.n_repeaters >= min_repeaters
    ]
    if not qualifying:
        raise EmptySelectionError(
            f"no pair has a shortest path in [{min_km}, {max_km}] km with >= {min_repeaters} repeaters"
        )
    rng = np.random.default_rng(seed)
    k = min(count, len(qualifying))
    idx = rng.choice(len(qualifying), size=k, replace=False)
    return PairSelection(tuple(qualifying[i] for i in idx), len(qualifying), count)


def chain_from_pair(graph: NetworkGraph, pair: UserPair, **noise) -> ChainSpec:
    """Chain whose links follow ``pair.path``; ``noise`` goes to :meth:`ChainSpec.from_lengths`."""
    lengths = [graph.edge_length(a, b) for a, b in zip(pair.path, pair.path[1:])]
    return ChainSpec.from_lengths(lengths, **noise)


def summary(graph: NetworkGraph) -> dict:
    return {
        "name": graph.name,
        "nodes": len(graph.nodes),
        "edges": len(graph.edges),
        "nodes_without_coordinates": len(graph.flagged_nodes),
        "dropped_edges": len(graph.dropped_edges),
        "degree_histogram": {str(k): v for k, v in graph.degree_histogram().items()},
        "total_length_km": float(sum(e.length_km for e in graph.edges)),
    }
