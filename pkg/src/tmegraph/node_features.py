"""Per-node features: social-network-analysis centralities and the feature matrix H.

Column layout (29 columns by default)::

    onehot_<label> x12 | log_count | tex_0..tex_11 | degree betweenness pagerank closeness
"""

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from .fileio import FormatError, split_comments
from .labels import LABEL_NAMES, NUM_LABELS

TEXTURE_DIM = 12
SNA_NAMES = ("degree", "betweenness", "pagerank", "closeness")
COLUMNS = (
    tuple(f"onehot_{n}" for n in LABEL_NAMES)
    + ("log_count",)
    + tuple(f"tex_{i}" for i in range(TEXTURE_DIM))
    + SNA_NAMES
)
N_FEATURES = len(COLUMNS)

# column groups switched by ablation flags: L(abel+count), I(mage texture), S(NA)
FEATURE_GROUPS = {
    "L": tuple(range(0, NUM_LABELS + 1)),
    "I": tuple(range(NUM_LABELS + 1, NUM_LABELS + 1 + TEXTURE_DIM)),
    "S": tuple(range(NUM_LABELS + 1 + TEXTURE_DIM, N_FEATURES)),
}
ONEHOT_COLUMNS = tuple(range(NUM_LABELS))


class ConvergenceWarning(UserWarning):
    pass


# -- centralities ------------------------------------------------------------


def degree(g):
    return np.array([len(nb) for nb in g.neighbors], dtype=np.int64)


def _bfs(neighbors, source):
    """Distances, shortest-path counts and visit order from ``source``."""
    n = len(neighbors)
    dist = np.full(n, -1, dtype=np.int64)
    sigma = np.zeros(n)
    preds = [[] for _ in range(n)]
    order = []
    dist[source] = 0
    sigma[source] = 1.0
    queue = deque([source])
    while queue:
        v = queue.popleft()
        order.append(v)
        for w in neighbors[v]:
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                queue.append(w)
            if dist[w] == dist[v] + 1:
                sigma[w] += sigma[v]
                preds[w].append(v)
    return dist, sigma, preds, order


def betweenness(g):
    """Unnormalized betweenness over unordered pairs (Brandes accumulation)."""
    nbrs = g.neighbors
    bc = np.zeros(g.n)
    for s in range(g.n):
        _, sigma, preds, order = _bfs(nbrs, s)
        delta = np.zeros(g.n)
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    # every unordered pair was visited from both ends
    return bc / 2.0


def closeness(g):
    nbrs = g.neighbors
    out = np.zeros(g.n)
    for v in range(g.n):
        dist = _bfs(nbrs, v)[0]
        reach = dist[dist > 0]
        if len(reach):
            out[v] = len(reach) / reach.sum()
    return out


def pagerank(g, damping=0.85, tol=1e-10, max_iter=1000):
    """Power iteration on the undirected graph; isolated nodes are dangling.

    Stops once the L1 change between sweeps drops below ``tol``. Emits a
    ConvergenceWarning (and still returns the last iterate) otherwise.
    """
    n = g.n
    if n == 0:
        return np.zeros(0)
    deg = degree(g).astype(float)
    dangling = deg == 0
    src = np.array([i for i, j in g.edges] + [j for i, j in g.edges], dtype=np.int64)
    dst = np.array([j for i, j in g.edges] + [i for i, j in g.edges], dtype=np.int64)
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        share = np.where(dangling, 0.0, x / np.where(dangling, 1.0, deg))
        new = np.zeros(n)
        np.add.at(new, dst, share[src])
        new = (1.0 - damping) / n + damping * (new + x[dangling].sum() / n)
        change = np.abs(new - x).sum()
        x = new
        if change < tol:
            return x
    warnings.warn(f"pagerank did not converge in {max_iter} iterations", ConvergenceWarning)
    return x


def sna_features(g):
    """(n, 4) array: degree, betweenness, pagerank, closeness."""
    if g.n == 0:
        return np.zeros((0, 4))
    return np.column_stack([degree(g), betweenness(g), pagerank(g), closeness(g)]).astype(float)


# -- textures ----------------------------------------------------------------


def parse_textures(text):
    out = {}
    for ln, line in split_comments(text):
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] != "FEAT" or len(parts) < 2:
            raise FormatError("expected 'FEAT <node_id> <v1> ... <v12>'", ln)
        try:
            nid = int(parts[1])
            vec = np.array([float(p) for p in parts[2:]])
        except ValueError:
            raise FormatError("bad number in FEAT line", ln) from None
        if nid in out:
            raise FormatError(f"duplicate texture row for node {nid}", ln)
        if len(vec) != TEXTURE_DIM:
            raise FormatError(f"node {nid}: texture has {len(vec)} values, expected {TEXTURE_DIM}", ln)
        if not np.all(np.isfinite(vec)):
            raise FormatError(f"node {nid}: non-finite texture value", ln)
        out[nid] = vec
    return out


def write_textures(textures):
    lines = []
    for nid in sorted(textures):
        vec = textures[nid]
        lines.append(f"FEAT {nid} " + " ".join(repr(float(v)) for v in vec))
    return ("\n".join(lines) + "\n" if lines else "").encode("utf-8")


def synthetic_textures(g, seed, signal=1.0, noise=1.0):
    """Stand-in texture embeddings for synthetic cohorts.

    softmax(signal * onehot(label) + noise * N(0, 1)): the label is only
    partly recoverable from the texture, as with a real tile encoder.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for v in g.nodes:
        logits = noise * rng.standard_normal(TEXTURE_DIM)
        logits[v.label - 1] += signal
        e = np.exp(logits - logits.max())
        out[v.id] = e / e.sum()
    return out


# -- assembly ----------------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    """Per-column mean/std fitted on training nodes; one-hot columns untouched."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, matrices):
        stacked = np.vstack([np.asarray(m, dtype=float).reshape(-1, N_FEATURES) for m in matrices])
        mean = stacked.mean(axis=0) if len(stacked) else np.zeros(N_FEATURES)
        std = stacked.std(axis=0) if len(stacked) else np.ones(N_FEATURES)
        # constant columns are centred but not scaled
        std = np.where(std > 1e-12, std, 1.0)
        mean[list(ONEHOT_COLUMNS)] = 0.0
        std[list(ONEHOT_COLUMNS)] = 1.0
        return cls(mean, std)

    def transform(self, values):
        return (np.asarray(values, dtype=float) - self.mean) / self.std


@dataclass(frozen=True)
class NodeFeatureMatrix:
    values: np.ndarray
    node_ids: tuple
    columns: tuple = COLUMNS

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]


def assemble_features(g, textures=None, standardizer=None, count_mode="log", zero_textures=False):
    """Build the (n, 29) node feature matrix of ``g``.

    ``textures`` maps node id -> 12-vector; every node needs a row unless
    ``zero_textures`` is set.
    """
    n = g.n
    h = np.zeros((n, N_FEATURES))
    for row, v in enumerate(g.nodes):
        h[row, v.label - 1] = 1.0
        h[row, NUM_LABELS] = np.log1p(v.count) if count_mode == "log" else float(v.count)
        if zero_textures:
            continue
        if textures is None or v.id not in textures:
            raise ValueError(f"missing texture row for node {v.id}")
        tex = np.asarray(textures[v.id], dtype=float)
        if tex.shape != (TEXTURE_DIM,):
            raise ValueError(f"node {v.id}: texture has {tex.size} values, expected {TEXTURE_DIM}")
        h[row, FEATURE_GROUPS["I"]] = tex
    if n:
        h[:, FEATURE_GROUPS["S"]] = sna_features(g)
    if standardizer is not None:
        h = standardizer.transform(h)
    return NodeFeatureMatrix(h, tuple(v.id for v in g.nodes))


def write_nfm(fm):
    out = [f"NFM 1 {fm.n} {fm.d}", "COLS " + " ".join(fm.columns)]
    for nid, row in zip(fm.node_ids, fm.values):
        out.append(f"ROW {nid} " + " ".join(repr(float(x)) for x in row))
    return ("\n".join(out) + "\n").encode("utf-8")


def parse_nfm(text):
    lines = [(ln, line) for ln, line in split_comments(text) if line.strip()]
    if len(lines) < 2:
        raise FormatError("truncated feature matrix file", None)
    ln, header = lines[0]
    parts = header.split()
    if len(parts) != 4 or parts[:2] != ["NFM", "1"]:
        raise FormatError("header must be 'NFM 1 <n> <d>'", ln)
    n, d = int(parts[2]), int(parts[3])
    ln, cols = lines[1]
    columns = tuple(cols.split()[1:])
    if not cols.startswith("COLS ") or len(columns) != d:
        raise FormatError(f"expected COLS line with {d} names", ln)
    ids, rows = [], []
    for ln, line in lines[2:]:
        parts = line.split()
        if parts[0] != "ROW" or len(parts) != d + 2:
            raise FormatError(f"expected 'ROW <id>' followed by {d} values", ln)
        ids.append(int(parts[1]))
        rows.append([float(x) for x in parts[2:]])
    if len(rows) != n:
        raise FormatError(f"header declares {n} rows, found {len(rows)}", lines[0][0])
    return NodeFeatureMatrix(np.array(rows, dtype=float).reshape(n, d), tuple(ids), columns)
