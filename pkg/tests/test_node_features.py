import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    betweenness_oracle,
    closeness_oracle,
    connected_graphs,
    degree_oracle,
    make_graph,
    pagerank_linear_oracle,
    pagerank_power_oracle,
    random_graph,
)
from tmegraph.fileio import FormatError
from tmegraph.graph_builder import TmeGraph, TmeNode
from tmegraph.node_features import (
    COLUMNS,
    FEATURE_GROUPS,
    N_FEATURES,
    ConvergenceWarning,
    Standardizer,
    assemble_features,
    betweenness,
    closeness,
    degree,
    pagerank,
    parse_nfm,
    parse_textures,
    synthetic_textures,
    write_nfm,
    write_textures,
)

PATH3 = make_graph(3, [(0, 1), (1, 2)])
K3 = make_graph(3, [(0, 1), (1, 2), (0, 2)])
K4 = make_graph(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])


def test_path_examples():
    assert degree(PATH3).tolist() == [1, 2, 1]
    assert betweenness(PATH3).tolist() == [0, 1, 0]
    assert np.allclose(closeness(PATH3), [2 / 3, 1, 2 / 3])
    # x = 0.05 + 0.425 y, y = 0.05 + 1.7 x
    x = (0.05 + 0.425 * 0.05) / (1 - 0.425 * 1.7)
    y = 0.05 + 1.7 * x
    pr = pagerank(PATH3)
    assert np.allclose(pr, [x, y, x], atol=1e-9)
    assert round(pr[0], 4) == 0.2568 and round(pr[1], 4) == 0.4865


def test_complete_graph_examples():
    assert degree(K4).tolist() == [3, 3, 3, 3]
    assert betweenness(K3).tolist() == [0, 0, 0]
    assert np.allclose(pagerank(K3), 1 / 3)


def test_isolated_nodes():
    g = make_graph(3, [(0, 1)])
    assert closeness(g)[2] == 0
    assert betweenness(g).tolist() == [0, 0, 0]
    assert np.isclose(pagerank(g).sum(), 1.0)
    assert np.allclose(pagerank(g), pagerank_power_oracle(3, [(0, 1)]), atol=1e-9)


def test_empty_graph():
    g = TmeGraph((), ())
    assert degree(g).size == betweenness(g).size == closeness(g).size == pagerank(g).size == 0


def test_exhaustive_small_connected_graphs():
    count = 0
    for n, edges in connected_graphs(5):
        g = make_graph(n, edges)
        assert np.array_equal(degree(g), degree_oracle(n, edges))
        assert np.allclose(betweenness(g), betweenness_oracle(n, edges), rtol=0, atol=1e-9)
        assert np.allclose(closeness(g), closeness_oracle(n, edges), rtol=0, atol=1e-9)
        pr = pagerank(g)
        assert np.allclose(pr, pagerank_power_oracle(n, edges), rtol=0, atol=1e-8)
        assert abs(pr.sum() - 1) < 1e-9
        count += 1
    # connected labelled graphs on 1..5 vertices: 1 + 1 + 4 + 38 + 728
    assert count == 772


def test_random_graphs_up_to_seven_nodes():
    rng = np.random.default_rng(1)
    for _ in range(300):
        n, edges = random_graph(rng, 7)
        g = make_graph(n, edges)
        assert np.array_equal(degree(g), degree_oracle(n, edges))
        assert np.allclose(betweenness(g), betweenness_oracle(n, edges), rtol=0, atol=1e-9)
        assert np.allclose(closeness(g), closeness_oracle(n, edges), rtol=0, atol=1e-9)
        assert np.allclose(pagerank(g), pagerank_power_oracle(n, edges), rtol=0, atol=1e-8)


def test_pagerank_matches_linear_solve():
    for n, edges in connected_graphs(4):
        if n > 1:
            assert np.allclose(pagerank(make_graph(n, edges)), pagerank_linear_oracle(n, edges), atol=1e-9)


def test_pagerank_nonconvergence_warns_and_returns():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        pr = pagerank(PATH3, max_iter=2)
    assert any(issubclass(w.category, ConvergenceWarning) for w in caught)
    assert pr.shape == (3,)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_centralities_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    n, edges = random_graph(rng, 7)
    perm = rng.permutation(n)
    moved = [(int(perm[i]), int(perm[j])) for i, j in edges]
    g, h = make_graph(n, edges), make_graph(n, moved)
    for fn in (degree, betweenness, closeness, pagerank):
        a, b = fn(g), fn(h)
        assert np.allclose(b[perm], a, atol=1e-9)


def _single_tumor():
    return TmeGraph((TmeNode(4, 9, 20, (75.0, 75.0)),), ())


def test_single_node_layout():
    fm = assemble_features(_single_tumor(), zero_textures=True)
    row = fm.values[0]
    assert fm.values.shape == (1, 29) and len(COLUMNS) == N_FEATURES == 29
    assert row[8] == 1 and row[:12].sum() == 1  # tumor is code 9
    assert row[12] == np.log1p(20)
    assert row[list(FEATURE_GROUPS["I"])].tolist() == [0.0] * 12
    assert row[list(FEATURE_GROUPS["S"])].tolist() == [0, 0, 1, 0]
    assert fm.node_ids == (4,)


def test_raw_count_mode():
    assert assemble_features(_single_tumor(), zero_textures=True, count_mode="raw").values[0, 12] == 20


def test_texture_errors_name_node():
    with pytest.raises(ValueError, match="node 4"):
        assemble_features(_single_tumor(), {4: np.zeros(13)})
    with pytest.raises(ValueError, match="node 4"):
        assemble_features(_single_tumor(), {})


def test_textures_round_trip_and_errors():
    g = make_graph(3, [(0, 1)])
    tex = synthetic_textures(g, 0)
    back = parse_textures(write_textures(tex))
    assert sorted(back) == [0, 1, 2]
    for k in tex:
        assert np.array_equal(back[k], tex[k])
    with pytest.raises(FormatError, match="node 0"):
        parse_textures(b"FEAT 0 1 2 3\n")


def test_standardized_training_columns():
    rng = np.random.default_rng(0)
    mats = []
    for _ in range(5):
        n, edges = random_graph(rng, 7)
        g = make_graph(n, edges, labels=rng.integers(1, 13, n))
        mats.append(assemble_features(g, synthetic_textures(g, 1)).values)
    std = Standardizer.fit(mats)
    out = np.vstack([std.transform(m) for m in mats])
    cols = [c for c in range(12, 29)]
    assert np.allclose(out[:, cols].mean(axis=0), 0, atol=1e-9)
    raw = np.vstack(mats)
    varying = [c for c in cols if raw[:, c].std() > 1e-12]
    assert np.allclose(out[:, varying].std(axis=0), 1, atol=1e-6)
    assert np.array_equal(out[:, :12], raw[:, :12])


def test_constant_column_is_centred_not_scaled():
    m = np.zeros((4, 29))
    m[:, 12] = 3.0
    std = Standardizer.fit([m])
    assert std.std[12] == 1.0 and np.allclose(std.transform(m)[:, 12], 0)


def test_feature_rows_follow_node_permutation():
    rng = np.random.default_rng(4)
    n, edges = 6, [(0, 1), (1, 2), (2, 3), (3, 4), (1, 5)]
    labels = rng.integers(1, 13, n)
    perm = rng.permutation(n)
    g = make_graph(n, edges, labels)
    nodes = [None] * n
    for i, v in enumerate(g.nodes):
        nodes[perm[i]] = v
    h = TmeGraph(tuple(nodes), tuple((int(perm[i]), int(perm[j])) for i, j in edges))
    tex = synthetic_textures(g, 3)
    a = assemble_features(g, tex).values
    b = assemble_features(h, tex).values
    assert np.allclose(b[perm], a, atol=1e-12)


def test_nfm_round_trip():
    g = make_graph(4, [(0, 1), (2, 3)], labels=[1, 2, 3, 9])
    fm = assemble_features(g, synthetic_textures(g, 0))
    back = parse_nfm(write_nfm(fm))
    assert np.array_equal(back.values, fm.values)
    assert back.node_ids == fm.node_ids and back.columns == COLUMNS
