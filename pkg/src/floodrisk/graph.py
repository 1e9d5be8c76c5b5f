"""Tract adjacency graph: construction from polygons, Laplacian, k-hop
neighbourhoods, and structural validation."""
import csv
import json
from collections import Counter, deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .geometry import GeometryError, TractPolygon, polygon_distance


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class TractGraph:
    """Undirected simple graph over an ordered list of tract ids.

    ``edges`` holds each unordered pair once, as ``(a, b)`` with ``a``
    preceding ``b`` in ``tract_ids``.
    """

    tract_ids: tuple
    edges: tuple

    def __post_init__(self):
        ids = tuple(str(t) for t in self.tract_ids)
        object.__setattr__(self, "tract_ids", ids)
        if len(set(ids)) != len(ids):
            dup = next(t for t, c in Counter(ids).items() if c > 1)
            raise GraphError(f"duplicate tract_id {dup!r}")
        pos = {t: i for i, t in enumerate(ids)}
        seen = set()
        for a, b in self.edges:
            a, b = str(a), str(b)
            if a not in pos or b not in pos:
                raise GraphError(f"edge ({a!r}, {b!r}) references an unknown tract")
            if a == b:
                raise GraphError(f"self-loop on {a!r}")
            i, j = sorted((pos[a], pos[b]))
            seen.add((i, j))
        object.__setattr__(self, "edges", tuple((ids[i], ids[j]) for i, j in sorted(seen)))

    @property
    def n(self):
        return len(self.tract_ids)

    @cached_property
    def index(self):
        return {t: i for i, t in enumerate(self.tract_ids)}

    @cached_property
    def edge_index(self):
        """``(m, 2)`` int32 array of edge endpoints as tract positions."""
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int32)
        idx = self.index
        return np.array([(idx[a], idx[b]) for a, b in self.edges], dtype=np.int32)

    @cached_property
    def degree(self):
        return np.bincount(self.edge_index.ravel(), minlength=self.n)

    @cached_property
    def neighbors(self):
        nb = [[] for _ in range(self.n)]
        for i, j in self.edge_index:
            nb[i].append(int(j))
            nb[j].append(int(i))
        return tuple(tuple(sorted(x)) for x in nb)

    def adjacency(self):
        """Sparse symmetric 0/1 adjacency matrix."""
        e = self.edge_index
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    @cached_property
    def components(self):
        """Component label per tract, numbered by first appearance."""
        if self.n == 0:
            return np.zeros(0, dtype=np.int32)
        _, labels = connected_components(self.adjacency(), directed=False)
        remap = {}
        out = np.empty(self.n, dtype=np.int32)
        for i, lab in enumerate(labels):
            out[i] = remap.setdefault(lab, len(remap))
        return out

    def subgraph(self, tract_ids):
        keep = set(tract_ids)
        ids = [t for t in self.tract_ids if t in keep]
        return TractGraph(ids, [e for e in self.edges if e[0] in keep and e[1] in keep])


def build_adjacency(polygons, buffer_distance):
    """Connect tracts whose polygons, each grown by ``buffer_distance``,
    intersect.

    Two polygons are neighbours when their minimum distance is at most
    ``2 * buffer_distance``; with zero buffer, touching counts.
    """
    if buffer_distance < 0:
        raise GraphError("buffer_distance must be non-negative")
    polygons = list(polygons)
    ids = [p.tract_id for p in polygons]
    dup = [t for t, c in Counter(ids).items() if c > 1]
    if dup:
        raise GraphError(f"duplicate tract_id {dup[0]!r}")
    for p in polygons:
        if p.area <= 0:
            raise GeometryError(f"tract {p.tract_id!r}: degenerate polygon with zero area")

    reach = 2.0 * buffer_distance
    bb = np.array([p.bbox for p in polygons], dtype=np.float64).reshape(-1, 4)
    edges = []
    for i in range(len(polygons)):
        # bounding-box prefilter, then exact distance
        j = np.arange(i + 1, len(polygons))
        ok = ((bb[j, 0] - reach <= bb[i, 2]) & (bb[i, 0] - reach <= bb[j, 2])
              & (bb[j, 1] - reach <= bb[i, 3]) & (bb[i, 1] - reach <= bb[j, 3]))
        for jj in j[ok]:
            if polygon_distance(polygons[i], polygons[jj]) <= reach:
                edges.append((ids[i], ids[jj]))
    return TractGraph(ids, edges)


def laplacian(graph, as_sparse=False):
    """Combinatorial Laplacian ``D - A``."""
    A = graph.adjacency()
    L = sparse.diags(np.asarray(A.sum(axis=1)).ravel()) - A
    return L.tocsr() if as_sparse else L.toarray()


def k_hop_neighborhood(graph, seeds, k):
    """All tracts within graph distance ``k`` of any seed, seeds included."""
    if k < 0:
        raise GraphError("k must be non-negative")
    idx = graph.index
    seeds = list(seeds)
    unknown = [s for s in seeds if s not in idx]
    if unknown:
        raise GraphError(f"unknown seed tract(s): {unknown}")
    dist = {idx[s]: 0 for s in seeds}
    queue = deque(dist)
    nb = graph.neighbors
    while queue:
        v = queue.popleft()
        if dist[v] == k:
            continue
        for w in nb[v]:
            if w not in dist:
                dist[w] = dist[v] + 1
                queue.append(w)
    return {graph.tract_ids[i] for i in dist}


@dataclass
class GraphReport:
    n_tracts: int
    n_edges: int
    component_sizes: list
    isolated: list
    degree_histogram: dict

    @property
    def n_components(self):
        return len(self.component_sizes)

    @property
    def connected(self):
        return self.n_components <= 1

    def to_dict(self):
        return {
            "n_tracts": self.n_tracts,
            "n_edges": self.n_edges,
            "n_components": self.n_components,
            "component_sizes": self.component_sizes,
            "isolated": self.isolated,
            "degree_histogram": {str(k): v for k, v in sorted(self.degree_histogram.items())},
        }


def validate_graph(graph):
    """Report components, isolated tracts, and the degree histogram."""
    comp = graph.components
    sizes = sorted(np.bincount(comp).tolist(), reverse=True) if graph.n else []
    deg = graph.degree
    return GraphReport(
        n_tracts=graph.n,
        n_edges=len(graph.edges),
        component_sizes=sizes,
        isolated=[t for t, d in zip(graph.tract_ids, deg) if d == 0],
        degree_histogram=dict(Counter(int(d) for d in deg)),
    )


# -- file formats -----------------------------------------------------------

def read_geojson(path, id_property="tract_id"):
    """Load a FeatureCollection of Polygon/MultiPolygon features.

    MultiPolygons keep only their largest part. Errors name the feature
    index.
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GeometryError(f"{path}: not valid JSON ({exc})") from None
    return polygons_from_geojson(doc, id_property)


def polygons_from_geojson(doc, id_property="tract_id"):
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise GeometryError("expected a GeoJSON FeatureCollection")
    out = []
    for k, feat in enumerate(doc.get("features", [])):
        try:
            props = feat.get("properties") or {}
            if id_property not in props:
                raise GeometryError(f"missing id property {id_property!r}")
            geom = feat["geometry"]
            if geom["type"] == "Polygon":
                parts = [geom["coordinates"]]
            elif geom["type"] == "MultiPolygon":
                parts = geom["coordinates"]
            else:
                raise GeometryError(f"unsupported geometry type {geom['type']!r}")
            polys = [TractPolygon(str(props[id_property]), part[0], tuple(part[1:])) for part in parts]
            out.append(max(polys, key=lambda p: p.area))
        except (GeometryError, KeyError, TypeError, AttributeError, IndexError, ValueError) as exc:
            raise GeometryError(f"feature {k}: {exc}") from None
    return out


def polygons_to_geojson(polygons, properties=None, id_property="tract_id"):
    """FeatureCollection dict; ``properties`` maps tract_id -> extra props."""
    properties = properties or {}
    feats = []
    for p in polygons:
        props = {id_property: p.tract_id}
        props.update(properties.get(p.tract_id, {}))
        feats.append({
            "type": "Feature",
            "properties": props,
            "geometry": {"type": "Polygon", "coordinates": [r.tolist() for r in p.rings]},
        })
    return {"type": "FeatureCollection", "features": feats}


def write_edges_csv(graph, path, header_comment=None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tract_a", "tract_b"])
        w.writerows(graph.edges)


def read_edges_csv(path, tract_ids=None):
    """Read an edge list; isolated tracts need ``tract_ids`` to survive."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    edges = [(r["tract_a"], r["tract_b"]) for r in rows]
    if tract_ids is None:
        seen = {}
        for a, b in edges:
            seen.setdefault(a, None)
            seen.setdefault(b, None)
        tract_ids = list(seen)
    return TractGraph(tract_ids, edges)
