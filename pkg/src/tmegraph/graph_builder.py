"""Histology map -> spatial TME graph.

A non-overlapping window grid is laid over the map. Inside each window, tiles
of equal nonzero label are grouped into connected components; components larger
than the label's threshold become nodes located at the component centroid.
Nodes closer than ``epsilon_px`` (strictly) are joined by an edge.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .fileio import FormatError, split_comments
from .labels import HIGH_RELEVANCE, NUM_LABELS

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True)
class BuilderConfig:
    window: int = 10
    eta_high: int = 5
    eta_low: int = 10
    high_relevance_set: frozenset = field(default_factory=lambda: HIGH_RELEVANCE)
    epsilon_px: float = 1500.0
    connectivity: int = 4
    # False: keep clusters with count > eta; True: count >= eta
    inclusive_threshold: bool = False

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.eta_high <= 0 or self.eta_low <= 0:
            raise ValueError("thresholds must be positive")
        if self.eta_high > self.eta_low:
            raise ValueError("eta_high must not exceed eta_low")
        if not self.epsilon_px > 0:
            raise ValueError("epsilon_px must be positive")
        if self.connectivity not in _STRUCTURES:
            raise ValueError("connectivity must be 4 or 8")
        object.__setattr__(self, "high_relevance_set", frozenset(self.high_relevance_set))

    def eta(self, label):
        return self.eta_high if label in self.high_relevance_set else self.eta_low

    def keeps(self, label, count):
        eta = self.eta(label)
        return count >= eta if self.inclusive_threshold else count > eta


@dataclass(frozen=True)
class TmeNode:
    id: int
    label: int
    count: int
    centroid_px: tuple  # (x, y)


@dataclass(frozen=True, eq=False)
class TmeGraph:
    """Undirected graph; ``edges`` holds position pairs (i < j), sorted."""

    nodes: tuple
    edges: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        edges = tuple(sorted((min(i, j), max(i, j)) for i, j in self.edges))
        n = len(self.nodes)
        for i, j in edges:
            if i == j:
                raise ValueError("self-loops are not allowed")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) references a missing node")
        if len(set(edges)) != len(edges):
            raise ValueError("duplicate edge")
        object.__setattr__(self, "edges", edges)

    @property
    def n(self):
        return len(self.nodes)

    @cached_property
    def adjacency(self):
        a = np.zeros((self.n, self.n), dtype=np.int8)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1
        a.flags.writeable = False
        return a

    @cached_property
    def neighbors(self):
        nbrs = [[] for _ in range(self.n)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(sorted(x)) for x in nbrs)

    @property
    def labels(self):
        return np.array([v.label for v in self.nodes], dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, TmeGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    __hash__ = None


def window_origins(m, window):
    return [(r, c) for r in range(0, m.rows, window) for c in range(0, m.cols, window)]


def cluster_window(m, origin, cfg):
    """Connected same-label components inside one window, thresholded.

    Returns (label, count, (row_centroid, col_centroid)) in absolute tile
    coordinates, ordered by each component's first tile in raster order.
    """
    r0, c0 = origin
    block = np.asarray(m.cells[r0 : r0 + cfg.window, c0 : c0 + cfg.window])
    found = []
    for label in np.unique(block):
        if label == 0:
            continue
        comp, ncomp = ndimage.label(block == label, structure=_STRUCTURES[cfg.connectivity])
        for k in range(1, ncomp + 1):
            rr, cc = np.nonzero(comp == k)
            # first member in raster order gives the discovery position
            found.append((rr[0] * block.shape[1] + cc[0], int(label), rr, cc))
    found.sort(key=lambda t: t[0])
    out = []
    for _, label, rr, cc in found:
        count = len(rr)
        if cfg.keeps(label, count):
            out.append((label, count, (r0 + rr.mean(), c0 + cc.mean())))
    return out


def epsilon_edges(centroids, epsilon):
    """Pairs (i, j), i < j, with Euclidean distance strictly below ``epsilon``."""
    if len(centroids) < 2:
        return []
    pts = np.asarray(centroids, dtype=float)
    pairs = cKDTree(pts).query_pairs(epsilon, output_type="ndarray")
    if len(pairs) == 0:
        return []
    d = pts[pairs[:, 0]] - pts[pairs[:, 1]]
    keep = (d * d).sum(axis=1) < epsilon * epsilon
    return sorted((int(i), int(j)) for i, j in pairs[keep])


def build_graph(m, cfg=None, threads=1):
    cfg = cfg or BuilderConfig()
    origins = window_origins(m, cfg.window)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_window = list(pool.map(lambda o: cluster_window(m, o, cfg), origins))
    else:
        per_window = [cluster_window(m, o, cfg) for o in origins]

    nodes = []
    for clusters in per_window:
        for label, count, (rc, cc) in clusters:
            centroid = (float((cc + 0.5) * m.tile_px), float((rc + 0.5) * m.tile_px))
            nodes.append(TmeNode(len(nodes), label, count, centroid))
    edges = epsilon_edges([v.centroid_px for v in nodes], cfg.epsilon_px)
    return TmeGraph(tuple(nodes), tuple(edges))


def write_graph(g):
    out = [f"TMEG 1 {g.n} {len(g.edges)}"]
    for v in g.nodes:
        cx, cy = v.centroid_px
        out.append(f"NODE {v.id} {v.label} {v.count} {float(cx)!r} {float(cy)!r}")
    ids = [v.id for v in g.nodes]
    for a, b in sorted(tuple(sorted((ids[i], ids[j]))) for i, j in g.edges):
        out.append(f"EDGE {a} {b}")
    return ("\n".join(out) + "\n").encode("utf-8")


def parse_graph(text):
    lines = [(ln, line) for ln, line in split_comments(text) if line != ""]
    if not lines:
        raise FormatError("empty graph file", 1)
    ln, header = lines[0]
    parts = header.split()
    if len(parts) != 4 or parts[:2] != ["TMEG", "1"]:
        raise FormatError("header must be 'TMEG 1 <nodes> <edges>'", ln)
    try:
        n_nodes, n_edges = int(parts[2]), int(parts[3])
    except ValueError:
        raise FormatError("non-integer count in header", ln) from None

    nodes, pos, edges = [], {}, []
    for ln, line in lines[1:]:
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "NODE" and len(parts) == 6:
                if edges:
                    raise FormatError("NODE lines must precede EDGE lines", ln)
                nid, label, count = int(parts[1]), int(parts[2]), int(parts[3])
                cx, cy = float(parts[4]), float(parts[5])
                if nid in pos:
                    raise FormatError(f"duplicate node id {nid}", ln)
                if not 1 <= label <= NUM_LABELS:
                    raise FormatError(f"node label {label} outside 1..{NUM_LABELS}", ln)
                if count <= 0:
                    raise FormatError("node count must be positive", ln)
                pos[nid] = len(nodes)
                nodes.append(TmeNode(nid, label, count, (cx, cy)))
            elif kind == "EDGE" and len(parts) == 3:
                a, b = int(parts[1]), int(parts[2])
                for end in (a, b):
                    if end not in pos:
                        raise FormatError(f"edge endpoint {end} is not a node id", ln)
                if a == b:
                    raise FormatError("self-loop edge", ln)
                edges.append((pos[a], pos[b], ln))
            else:
                raise FormatError(f"unrecognized line {line!r}", ln)
        except ValueError as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"bad number in {kind} line", ln) from None

    if len(nodes) != n_nodes or len(edges) != n_edges:
        raise FormatError(f"header declares {n_nodes} nodes/{n_edges} edges, found {len(nodes)}/{len(edges)}", lines[0][0])
    seen = set()
    for i, j, ln in edges:
        key = (min(i, j), max(i, j))
        if key in seen:
            raise FormatError("duplicate edge", ln)
        seen.add(key)
    return TmeGraph(tuple(nodes), tuple(seen))
