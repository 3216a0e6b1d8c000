import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tmegraph.fileio import FormatError
from tmegraph.graph_builder import (
    BuilderConfig,
    TmeGraph,
    TmeNode,
    build_graph,
    cluster_window,
    epsilon_edges,
    parse_graph,
    write_graph,
)
from tmegraph.histomap import HistologyMap, SynthSpec, synthesize_map
from tmegraph.labels import STROMA, TUMOR


def flood_fill_components(block, connectivity):
    """Plain BFS labelling: list of (label, [(r, c), ...]) in raster discovery order."""
    rows, cols = block.shape
    seen = np.zeros_like(block, dtype=bool)
    if connectivity == 4:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        steps = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if dr or dc]
    out = []
    for r in range(rows):
        for c in range(cols):
            if seen[r, c] or block[r, c] == 0:
                continue
            lab = block[r, c]
            stack, members = [(r, c)], []
            seen[r, c] = True
            while stack:
                y, x = stack.pop()
                members.append((y, x))
                for dy, dx in steps:
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < rows and 0 <= xx < cols and not seen[yy, xx] and block[yy, xx] == lab:
                        seen[yy, xx] = True
                        stack.append((yy, xx))
            out.append((int(lab), members))
    return out


def oracle_nodes(m, cfg):
    nodes = []
    for r0 in range(0, m.rows, cfg.window):
        for c0 in range(0, m.cols, cfg.window):
            block = np.asarray(m.cells[r0 : r0 + cfg.window, c0 : c0 + cfg.window])
            for lab, members in flood_fill_components(block, cfg.connectivity):
                if not cfg.keeps(lab, len(members)):
                    continue
                rr = np.mean([p[0] for p in members]) + r0
                cc = np.mean([p[1] for p in members]) + c0
                nodes.append((lab, len(members), ((cc + 0.5) * m.tile_px, (rr + 0.5) * m.tile_px)))
    return nodes


def _blob_map(rows, cols, blobs, tile_px=150):
    cells = np.zeros((rows, cols), dtype=int)
    for label, r0, c0, h, w in blobs:
        cells[r0 : r0 + h, c0 : c0 + w] = label
    return HistologyMap.from_array(cells, tile_px)


def test_full_tumor_window():
    m = _blob_map(10, 10, [(TUMOR, 0, 0, 10, 10)])
    out = cluster_window(m, (0, 0), BuilderConfig())
    assert len(out) == 1
    label, count, (rc, cc) = out[0]
    assert (label, count) == (TUMOR, 100)
    assert (rc, cc) == (4.5, 4.5)


def test_small_cluster_dropped():
    m = _blob_map(10, 10, [(TUMOR, 0, 0, 2, 2)])
    assert cluster_window(m, (0, 0), BuilderConfig()) == []


def test_threshold_boundary_strict_and_inclusive():
    m = _blob_map(10, 10, [(TUMOR, 0, 0, 1, 5)])
    assert cluster_window(m, (0, 0), BuilderConfig()) == []
    assert len(cluster_window(m, (0, 0), BuilderConfig(inclusive_threshold=True))) == 1


def test_diagonal_blobs_split_under_4_connectivity():
    # two 6-tile stroma blobs (2x3) touching only at a corner
    m = _blob_map(10, 10, [(STROMA, 0, 0, 2, 3), (STROMA, 2, 3, 2, 3)])
    cfg4 = BuilderConfig()
    assert [c[:2] for c in cluster_window(m, (0, 0), cfg4)] == [(STROMA, 6), (STROMA, 6)]
    cfg8 = BuilderConfig(connectivity=8)
    assert [c[:2] for c in cluster_window(m, (0, 0), cfg8)] == [(STROMA, 12)]


def test_empty_map():
    g = build_graph(HistologyMap.from_array(np.zeros((20, 20), dtype=int)))
    assert g.n == 0 and g.edges == ()
    assert write_graph(g) == b"TMEG 1 0 0\n"


@pytest.mark.parametrize("shift, edges", [(0, 1), (1, 0)])
def test_epsilon_cut_at_1400_and_1600(shift, edges):
    # 2x5 tumor blobs; centroids 7 tiles (1400 px) or 8 tiles (1600 px) apart
    m = _blob_map(10, 20, [(TUMOR, 0, 5, 2, 5), (TUMOR, 0, 12 + shift, 2, 5)], tile_px=200)
    g = build_graph(m)
    assert g.n == 2
    dx = g.nodes[1].centroid_px[0] - g.nodes[0].centroid_px[0]
    assert dx == 1400 + 200 * shift
    assert len(g.edges) == edges


def test_distance_equal_to_epsilon_has_no_edge():
    assert epsilon_edges([(0.0, 0.0), (1500.0, 0.0)], 1500.0) == []
    assert epsilon_edges([(0.0, 0.0), (1499.999, 0.0)], 1500.0) == [(0, 1)]


def test_blob_across_windows_gives_two_nodes():
    m = _blob_map(10, 20, [(TUMOR, 0, 7, 3, 6)])
    g = build_graph(m)
    assert [(v.label, v.count) for v in g.nodes] == [(TUMOR, 9), (TUMOR, 9)]


def random_map(rng, rows=40, cols=40):
    # blocky random maps so clusters survive
    coarse = rng.integers(0, 13, size=(rows // 2, cols // 2))
    return HistologyMap.from_array(np.kron(coarse, np.ones((2, 2), dtype=int))[:rows, :cols])


@pytest.mark.parametrize("connectivity", [4, 8])
def test_nodes_match_flood_fill_oracle(connectivity):
    rng = np.random.default_rng(11)
    cfg = BuilderConfig(connectivity=connectivity)
    for _ in range(20):
        m = random_map(rng, 30, 37)
        g = build_graph(m, cfg)
        got = [(v.label, v.count, v.centroid_px) for v in g.nodes]
        want = oracle_nodes(m, cfg)
        assert [x[:2] for x in got] == [x[:2] for x in want]
        assert np.allclose([x[2] for x in got], [x[2] for x in want], rtol=0, atol=1e-9)


def test_edges_match_all_pairs_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        g = build_graph(random_map(rng))
        pts = [v.centroid_px for v in g.nodes]
        want = [(i, j) for i, j in itertools.combinations(range(len(pts)), 2) if np.hypot(*np.subtract(pts[i], pts[j])) < 1500]
        assert list(g.edges) == want


def test_large_epsilon_gives_complete_graph():
    g = build_graph(random_map(np.random.default_rng(0)), BuilderConfig(epsilon_px=1e9))
    assert len(g.edges) == g.n * (g.n - 1) // 2


def test_graph_invariants_on_synthetic_maps():
    cfg = BuilderConfig()
    for seed in range(10):
        m, _ = synthesize_map(SynthSpec.for_group("pcr" if seed % 2 else "rd"), seed)
        g = build_graph(m, cfg)
        a = g.adjacency
        assert (a == a.T).all() and not a.diagonal().any()
        for v in g.nodes:
            assert 1 <= v.label <= 12
            assert v.count > cfg.eta(v.label)


def test_deterministic_across_runs_and_threads():
    m = random_map(np.random.default_rng(9))
    ref = write_graph(build_graph(m))
    for threads in (1, 4, 1, 4):
        assert write_graph(build_graph(m, threads=threads)) == ref


def test_window_order_does_not_change_node_multiset():
    m = random_map(np.random.default_rng(21))
    cfg = BuilderConfig()
    origins = [(r, c) for r in range(0, m.rows, 10) for c in range(0, m.cols, 10)]
    fwd = sorted(x[:2] + (x[2],) for o in origins for x in cluster_window(m, o, cfg))
    rev = sorted(x[:2] + (x[2],) for o in reversed(origins) for x in cluster_window(m, o, cfg))
    assert fwd == rev


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(100, 3000), st.floats(0, 2000))
def test_epsilon_monotonicity(seed, eps, extra):
    m = random_map(np.random.default_rng(seed), 20, 20)
    small = set(build_graph(m, BuilderConfig(epsilon_px=eps)).edges)
    large = set(build_graph(m, BuilderConfig(epsilon_px=eps + extra)).edges)
    assert small <= large


def test_config_invariants():
    with pytest.raises(ValueError):
        BuilderConfig(eta_high=11)
    with pytest.raises(ValueError):
        BuilderConfig(epsilon_px=0)
    with pytest.raises(ValueError):
        BuilderConfig(window=0)
    with pytest.raises(ValueError):
        BuilderConfig(connectivity=6)


def test_graph_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(20):
        g = build_graph(random_map(rng, 20, 30))
        data = write_graph(g)
        assert parse_graph(data) == g
        assert write_graph(parse_graph(data)) == data


@settings(max_examples=50)
@given(st.integers(0, 8).flatmap(lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.integers(0, max(n - 1, 0)), st.integers(0, max(n - 1, 0))), max_size=20))))
def test_round_trip_random_graphs(spec):
    n, pairs = spec
    edges = {(min(i, j), max(i, j)) for i, j in pairs if i != j}
    nodes = tuple(TmeNode(10 * k, 1 + k % 12, k + 1, (k * 0.1, 3.0 / (k + 1))) for k in range(n))
    g = TmeGraph(nodes, tuple(edges))
    assert parse_graph(write_graph(g)) == g


@pytest.mark.parametrize(
    "text, message",
    [
        (b"TMEG 1 3 1\nNODE 0 9 6 0 0\nNODE 1 9 6 0 0\nNODE 2 9 6 0 0\nEDGE 0 5\n", "endpoint 5"),
        (b"TMEG 1 2 0\nNODE 0 9 6 0 0\nNODE 0 9 6 0 0\n", "duplicate node id"),
        (b"TMEG 1 2 2\nNODE 0 9 6 0 0\nNODE 1 9 6 0 0\nEDGE 0 1\nEDGE 1 0\n", "duplicate edge"),
        (b"TMEG 1 1 1\nNODE 0 9 6 0 0\nEDGE 0 0\n", "self-loop"),
        (b"TMEG 1 2 0\nNODE 0 9 6 0 0\n", "header declares"),
        (b"TMEG 1 1 0\nNODE 0 0 6 0 0\n", "label"),
        (b"GRAPH\n", "header"),
    ],
)
def test_parse_errors(text, message):
    with pytest.raises(FormatError, match=message):
        parse_graph(text)
