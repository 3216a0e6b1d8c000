"""Label-keyed edge/triangle census and the group statistics built on it."""

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .labels import LABEL_NAMES, NUM_LABELS

PAIR_KEYS = tuple(combinations(range(1, NUM_LABELS + 1), 2))  # 66
TRIPLE_KEYS = tuple(combinations(range(1, NUM_LABELS + 1), 3))  # 220


def _label_key(kind, codes):
    return f"{kind}:" + "-".join(LABEL_NAMES[c - 1] for c in codes)


@dataclass
class CensusTable:
    edge_counts: dict = field(default_factory=lambda: dict.fromkeys(PAIR_KEYS, 0))
    same_label_edges: dict = field(default_factory=lambda: dict.fromkeys(range(1, NUM_LABELS + 1), 0))
    triangle_counts: dict = field(default_factory=lambda: dict.fromkeys(TRIPLE_KEYS, 0))
    repeated_label_triangles: int = 0

    @property
    def total_edges(self):
        return sum(self.edge_counts.values()) + sum(self.same_label_edges.values())

    @property
    def total_triangles(self):
        return sum(self.triangle_counts.values()) + self.repeated_label_triangles

    def flat(self):
        """Ordered {key: count}: distinct pairs, same-label pairs, triples, repeated bucket."""
        out = {}
        for pair in PAIR_KEYS:
            out[_label_key("edge", pair)] = self.edge_counts[pair]
        for c in range(1, NUM_LABELS + 1):
            out[_label_key("edge", (c, c))] = self.same_label_edges[c]
        for triple in TRIPLE_KEYS:
            out[_label_key("tri", triple)] = self.triangle_counts[triple]
        out["tri:repeated"] = self.repeated_label_triangles
        return out


def triangles(g):
    """Each triangle once, as sorted position triples (i < j < k)."""
    nbr = [set(x) for x in g.neighbors]
    out = []
    for i, j in g.edges:
        for k in nbr[i] & nbr[j]:
            if k > j:
                out.append((i, j, k))
    return sorted(out)


def census(g):
    table = CensusTable()
    labels = [v.label for v in g.nodes]
    for i, j in g.edges:
        a, b = sorted((labels[i], labels[j]))
        if a == b:
            table.same_label_edges[a] += 1
        else:
            table.edge_counts[(a, b)] += 1
    for tri in triangles(g):
        key = tuple(sorted(labels[v] for v in tri))
        if len(set(key)) == 3:
            table.triangle_counts[key] += 1
        else:
            table.repeated_label_triangles += 1
    return table


def triangle_participation(g):
    """Number of triangles each node belongs to."""
    out = np.zeros(g.n, dtype=np.int64)
    for tri in triangles(g):
        out[list(tri)] += 1
    return out


# -- t distribution ----------------------------------------------------------


def _betacf(a, b, x, max_iter=500, tol=1e-15):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t, df):
    if math.isinf(t):
        return 0.0
    return min(1.0, betainc(df / 2.0, 0.5, df / (df + t * t)))


def welch_ttest(x, y):
    """Welch two-sample t-test of mean(x) - mean(y). Returns (t, p, df)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx, ny = len(x), len(y)
    if nx < 2 or ny < 2:
        raise ValueError("each group needs at least two observations")
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(ddof=1) / nx, y.var(ddof=1) / ny
    se2 = vx + vy
    if se2 == 0.0:
        if mx == my:
            return 0.0, 1.0, float("nan")
        return math.copysign(math.inf, mx - my), 0.0, float("nan")
    t = (mx - my) / math.sqrt(se2)
    df = se2 * se2 / (vx * vx / (nx - 1) + vy * vy / (ny - 1))
    return t, t_two_sided_p(t, df), df


@dataclass(frozen=True)
class KeyComparison:
    key: str
    mean_pcr: float
    std_pcr: float
    mean_rd: float
    std_rd: float
    n_pcr: int
    n_rd: int
    t: float
    p: float


def compare_groups(tables, groups, keys=None):
    """Welch test per key between the pCR and RD patients.

    ``tables`` holds one mapping (key -> value) per patient, e.g.
    ``CensusTable.flat()``; keys missing from a patient count as 0.
    """
    groups = [str(g).lower() for g in groups]
    if len(tables) != len(groups):
        raise ValueError("one group label per table is required")
    if keys is None:
        keys = []
        for t in tables:
            keys.extend(k for k in t if k not in keys)
    pcr = [t for t, g in zip(tables, groups) if g == "pcr"]
    rd = [t for t, g in zip(tables, groups) if g == "rd"]
    if len(pcr) < 2 or len(rd) < 2:
        raise ValueError(f"need at least two patients per group, got {len(pcr)} pCR / {len(rd)} RD")
    out = []
    for key in keys:
        a = np.array([float(t.get(key, 0)) for t in pcr])
        b = np.array([float(t.get(key, 0)) for t in rd])
        t, p, _ = welch_ttest(a, b)
        out.append(KeyComparison(key, a.mean(), a.std(ddof=1), b.mean(), b.std(ddof=1), len(a), len(b), t, p))
    return out


# -- label profiles ----------------------------------------------------------


def label_counts(m):
    return np.bincount(np.asarray(m.cells, dtype=np.int64).ravel(), minlength=NUM_LABELS + 1)[1:]


def label_proportions(m):
    counts = label_counts(m)
    total = counts.sum()
    if total == 0:
        raise ValueError("map has no tissue tiles")
    return counts / total


# -- relevance ---------------------------------------------------------------


def _pearson_columns(x, y):
    """Pearson r of every column of x with y; constant columns give 0."""
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum(axis=0))
    sy = math.sqrt(float((yc * yc).sum()))
    constant = sx == 0
    if sy == 0:
        return np.zeros(x.shape[1]), constant
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (xc * yc[:, None]).sum(axis=0) / (sx * sy)
    r = np.where(constant, 0.0, np.clip(r, -1.0, 1.0))
    return r, constant


def pearson_map(features, response):
    """Per-feature Pearson r with the response. Returns (r, constant_flags)."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(response, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(y) < 3:
        raise ValueError("pearson_map needs at least three patients")
    if np.all(y == y[0]):
        raise ValueError("response is constant")
    return _pearson_columns(x, y)


def mrmr_rank(features, response, k):
    """Greedy mRMR, difference scheme.

    relevance = |r(feature, response)|, redundancy = mean |r| with the
    features already chosen, score = relevance - redundancy. Ties go to the
    lower feature index. Returns [(feature_index, score), ...] of length k.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    nfeat = x.shape[1]
    if not 0 <= k <= nfeat:
        raise ValueError(f"k={k} outside 0..{nfeat}")
    relevance = np.abs(pearson_map(x, response)[0])
    redundancy_sum = np.zeros(nfeat)
    chosen, out = [], []
    remaining = list(range(nfeat))
    for step in range(k):
        scores = relevance[remaining] - (redundancy_sum[remaining] / step if step else 0.0)
        best_pos = int(np.argmax(scores))  # first maximum -> lowest index
        best = remaining.pop(best_pos)
        chosen.append(best)
        out.append((best, float(scores[best_pos])))
        if remaining:
            redundancy_sum[remaining] += np.abs(_pearson_columns(x[:, remaining], x[:, best])[0])
    return out


# -- per-tile exports --------------------------------------------------------


def label_value_grid(m, per_label):
    """Tile grid carrying ``per_label[code - 1]``; background tiles are NaN."""
    per_label = np.asarray(per_label, dtype=float)
    lut = np.concatenate([[np.nan], per_label])
    return lut[np.asarray(m.cells, dtype=np.int64)]


def node_value_grid(m, g, values):
    """Sum of per-node values at the tile holding each node's centroid."""
    grid = np.zeros((m.rows, m.cols))
    for v, val in zip(g.nodes, values):
        cx, cy = v.centroid_px
        r = min(int(cy // m.tile_px), m.rows - 1)
        c = min(int(cx // m.tile_px), m.cols - 1)
        grid[r, c] += val
    return grid


def write_value_grid(grid, tile_px):
    rows, cols = grid.shape
    out = [f"FMAP 1 {rows} {cols} {tile_px}"]
    out.extend(" ".join(repr(float(v)) for v in row) for row in grid)
    return ("\n".join(out) + "\n").encode("utf-8")
