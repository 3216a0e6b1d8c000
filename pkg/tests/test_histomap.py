import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tmegraph.fileio import FormatError
from tmegraph.histomap import HistologyMap, SynthSpec, parse_map, parse_pair, synthesize_map, write_map
from tmegraph.labels import IMMUNE, MVD, TUMOR, code_of, name_of


def test_label_table():
    assert name_of(9) == "tumor"
    assert code_of("immune") == 2
    assert code_of("12") == 12
    with pytest.raises(ValueError):
        name_of(13)


def test_parse_minimal():
    m = parse_map(b"HMAP 1 1 1 150\n9\n")
    assert (m.rows, m.cols, m.tile_px) == (1, 1, 150)
    assert m.cells.tolist() == [[9]]


def test_parse_background_cells():
    m = parse_map(b"HMAP 1 2 2 150\n9 8\n0 0\n")
    assert m.cells.tolist() == [[9, 8], [0, 0]]
    assert int((m.cells == 0).sum()) == 2


def test_out_of_range_code_names_line():
    with pytest.raises(FormatError, match="line 3"):
        parse_map(b"HMAP 1 2 2 150\n9 8\n13 0\n")


@pytest.mark.parametrize(
    "text, line",
    [
        (b"HMAP 2 1 1 150\n9\n", 1),
        (b"HMAP 1 1 2 150\n9\n", 2),
        (b"HMAP 1 2 1 150\n9\n", 2),
        (b"HMAP 1 1 1 150\n9\n9\n", 3),
        (b"HMAP 1 1 2 150\n9  8\n", 2),
        (b"HMAP 1 1 1 0\n9\n", 1),
    ],
)
def test_malformed_inputs_report_line(text, line):
    with pytest.raises(FormatError) as err:
        parse_map(text)
    assert err.value.line == line


def test_missing_trailing_newline_rejected():
    with pytest.raises(FormatError):
        parse_map(b"HMAP 1 1 1 150\n9")


def test_write_canonical():
    m = HistologyMap.from_array([[9]])
    assert write_map(m) == b"HMAP 1 1 1 150\n9\n"


def test_comment_lines_are_skipped():
    assert parse_map(b"# tmegraph synth\nHMAP 1 1 1 150\n9\n") == parse_map(b"HMAP 1 1 1 150\n9\n")


def test_map_is_read_only():
    m = HistologyMap.from_array([[1, 2]])
    with pytest.raises(ValueError):
        m.cells[0, 0] = 3


grids = st.tuples(st.integers(1, 6), st.integers(1, 6)).flatmap(
    lambda shape: st.lists(st.integers(0, 12), min_size=shape[0] * shape[1], max_size=shape[0] * shape[1]).map(
        lambda cells: np.array(cells).reshape(shape)
    )
)


@given(grids, st.integers(1, 500))
def test_round_trip(cells, tile_px):
    m = HistologyMap.from_array(cells, tile_px)
    data = write_map(m)
    assert parse_map(data) == m
    assert write_map(parse_map(data)) == data


def test_round_trip_2x3_random():
    rng = np.random.default_rng(5)
    for _ in range(50):
        m = HistologyMap.from_array(rng.integers(0, 13, size=(2, 3)))
        assert parse_map(write_map(m)) == m


def test_parse_pair():
    assert parse_pair("tumor-immune") == (IMMUNE, TUMOR)
    with pytest.raises(ValueError):
        parse_pair("tumor")


def test_synth_deterministic_zero_rates():
    spec = SynthSpec(group="pcr", motif_rates={})
    a, la = synthesize_map(spec, 7)
    b, lb = synthesize_map(spec, 7)
    assert a == b and la == lb == "pcr"


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["pcr", "rd"]), st.integers(0, 10_000))
def test_synth_codes_in_range(group, seed):
    m, _ = synthesize_map(SynthSpec.for_group(group), seed)
    assert m.cells.min() >= 0 and m.cells.max() <= 12


def _adjacent_immune_tumor(cells):
    """Immune tiles with a tumor tile among their 8 neighbours (direct count)."""
    rows, cols = cells.shape
    count = 0
    for r in range(rows):
        for c in range(cols):
            if cells[r, c] != IMMUNE:
                continue
            hit = False
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if (dr or dc) and 0 <= rr < rows and 0 <= cc < cols and cells[rr, cc] == TUMOR:
                        hit = True
            count += hit
    return count


def test_pcr_maps_enriched_in_immune_tumor_adjacency():
    pcr = np.mean([_adjacent_immune_tumor(synthesize_map(SynthSpec.for_group("pcr"), s)[0].cells) for s in range(100)])
    rd = np.mean([_adjacent_immune_tumor(synthesize_map(SynthSpec.for_group("rd"), s)[0].cells) for s in range(100)])
    assert pcr > rd


def test_rd_maps_enriched_in_mvd_stroma_tiles():
    def mvd(group):
        return np.mean([(synthesize_map(SynthSpec.for_group(group), s)[0].cells == MVD).sum() for s in range(50)])

    assert mvd("rd") > mvd("pcr")


def test_blob_demand_exceeding_area():
    spec = SynthSpec(rows=5, cols=5, group="pcr", motif_rates={(IMMUNE, TUMOR): 50.0})
    with pytest.raises(ValueError, match="exceeds map area"):
        synthesize_map(spec, 0)
