"""Tile-level histology label maps: the ``.hmap`` text format and a synthetic generator."""

from dataclasses import dataclass, field

import numpy as np

from .fileio import FormatError, split_comments
from .labels import ADIPOSE, IMMUNE, MVD, NECROSIS, NUM_LABELS, STROMA, TUMOR, code_of

GROUPS = ("pcr", "rd")


@dataclass(frozen=True, eq=False)
class HistologyMap:
    rows: int
    cols: int
    tile_px: int
    cells: np.ndarray  # (rows, cols) int8, read-only

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("map dimensions must be positive")
        if self.tile_px <= 0:
            raise ValueError("tile_px must be positive")
        cells = np.array(self.cells, dtype=np.int8).reshape(self.rows, self.cols)
        if cells.size and (cells.min() < 0 or cells.max() > NUM_LABELS):
            raise ValueError(f"label codes must lie in 0..{NUM_LABELS}")
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)

    @classmethod
    def from_array(cls, cells, tile_px=150):
        cells = np.asarray(cells)
        return cls(cells.shape[0], cells.shape[1], tile_px, cells)

    def __eq__(self, other):
        if not isinstance(other, HistologyMap):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and self.tile_px == other.tile_px
            and np.array_equal(self.cells, other.cells)
        )

    __hash__ = None


def _int_tokens(line, lineno, what):
    tokens = line.split(" ")
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise FormatError(f"expected space-separated integers in {what}", lineno) from None


def parse_map(text):
    """Parse ``.hmap`` bytes or text.

    Only the canonical form is accepted: single spaces between integers and
    one trailing newline. Leading ``#`` comment lines are skipped.
    """
    lines = list(split_comments(text))
    if not lines or lines[-1][1] != "":
        raise FormatError("file must end with a newline", lines[-1][0] if lines else None)
    lines = lines[:-1]
    if not lines:
        raise FormatError("empty file", 1)
    lineno, header = lines[0]
    parts = header.split(" ")
    if len(parts) != 5 or parts[0] != "HMAP" or parts[1] != "1":
        raise FormatError("header must be 'HMAP 1 <rows> <cols> <tile_px>'", lineno)
    try:
        rows, cols, tile_px = (int(p) for p in parts[2:])
    except ValueError:
        raise FormatError("non-integer value in header", lineno) from None
    if rows <= 0 or cols <= 0 or tile_px <= 0:
        raise FormatError("rows, cols and tile_px must be positive", lineno)
    body = lines[1:]
    if len(body) != rows:
        where = body[rows][0] if len(body) > rows else (body[-1][0] if body else lineno)
        raise FormatError(f"expected {rows} grid rows, found {len(body)}", where)
    cells = np.empty((rows, cols), dtype=np.int8)
    for r, (ln, line) in enumerate(body):
        values = _int_tokens(line, ln, "grid row")
        if len(values) != cols:
            raise FormatError(f"expected {cols} cells, found {len(values)}", ln)
        for v in values:
            if not 0 <= v <= NUM_LABELS:
                raise FormatError(f"label code {v} outside 0..{NUM_LABELS}", ln)
        cells[r] = values
    return HistologyMap(rows, cols, tile_px, cells)


def write_map(m):
    out = [f"HMAP 1 {m.rows} {m.cols} {m.tile_px}"]
    out.extend(" ".join(str(int(v)) for v in row) for row in m.cells)
    return ("\n".join(out) + "\n").encode("utf-8")


def parse_pair(text):
    """``'immune-tumor'`` -> (2, 9), sorted by code."""
    a, sep, b = text.partition("-")
    if not sep:
        raise ValueError(f"label pair must look like 'immune-tumor', got {text!r}")
    pair = sorted((code_of(a), code_of(b)))
    return tuple(pair)


# motif-injection defaults: expected blob pairs per map, equal totals per group
# so that graph topology carries no group signal on its own
PCR_MOTIFS = {(IMMUNE, TUMOR): 4.0, (NECROSIS, TUMOR): 2.0, (MVD, STROMA): 1.0, (STROMA, ADIPOSE): 1.0}
RD_MOTIFS = {(IMMUNE, TUMOR): 1.0, (NECROSIS, TUMOR): 1.0, (MVD, STROMA): 4.0, (STROMA, ADIPOSE): 2.0}

# shared across groups: stroma, tumor, adipose and a little of everything else
FILLER_PRIOR = (0.02, 0.05, 0.05, 0.05, 0.02, 0.05, 0.02, 0.3, 0.25, 0.15, 0.02, 0.02)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic map generator.

    ``motif_rates`` maps a sorted label pair to the expected number of planted
    blob pairs (Poisson). Each blob pair is two ``blob_shape`` rectangles of the
    two labels sharing a side, placed entirely inside one ``window`` cell of the
    window grid so that neither blob is split when the graph is built.
    """

    rows: int = 30
    cols: int = 30
    group: str = "pcr"
    tile_px: int = 150
    window: int = 10
    blob_shape: tuple = (3, 4)
    motif_rates: dict = field(default_factory=dict)
    filler_blobs: float = 2.0
    filler_prior: tuple = FILLER_PRIOR
    noise_rate: float = 0.05

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"group must be one of {GROUPS}")
        if len(self.filler_prior) != NUM_LABELS:
            raise ValueError("filler_prior needs one weight per label")
        for pair, rate in self.motif_rates.items():
            if rate < 0:
                raise ValueError(f"negative motif rate for {pair}")

    @classmethod
    def for_group(cls, group, **overrides):
        rates = dict(PCR_MOTIFS if group == "pcr" else RD_MOTIFS)
        rates.update(overrides.pop("motif_rates", {}))
        return cls(group=group, motif_rates=rates, **overrides)


def _find_slot(rng, occupied, spec, h, w):
    rows, cols, win = spec.rows, spec.cols, spec.window
    windows = [(r, c) for r in range(0, rows, win) for c in range(0, cols, win)]
    for _ in range(500):
        r0, c0 = windows[rng.integers(len(windows))]
        wh, ww = min(win, rows - r0), min(win, cols - c0)
        if h > wh or w > ww:
            continue
        r = r0 + int(rng.integers(wh - h + 1))
        c = c0 + int(rng.integers(ww - w + 1))
        if not occupied[r : r + h, c : c + w].any():
            return r, c
    return None


def synthesize_map(spec, seed):
    """Generate a synthetic map and its response label ("pcr" or "rd").

    Deterministic in (spec, seed). Raises ValueError if the planted blobs
    need more tiles than the map has or cannot be placed.
    """
    rng = np.random.default_rng(seed)
    bh, bw = spec.blob_shape
    blob_tiles = bh * bw

    plan = []
    for pair in sorted(spec.motif_rates):
        n = int(rng.poisson(spec.motif_rates[pair]))
        plan.extend([tuple(pair)] * n)
    prior = np.asarray(spec.filler_prior, dtype=float)
    prior = prior / prior.sum()
    for _ in range(int(rng.poisson(spec.filler_blobs))):
        plan.append((int(rng.choice(NUM_LABELS, p=prior)) + 1,))

    demand = sum(len(item) for item in plan) * blob_tiles
    if demand > spec.rows * spec.cols:
        raise ValueError(f"blob demand of {demand} tiles exceeds map area {spec.rows * spec.cols}")

    cells = np.zeros((spec.rows, spec.cols), dtype=np.int8)
    occupied = np.zeros_like(cells, dtype=bool)
    for item in plan:
        labels = list(item)
        if len(labels) == 2 and rng.random() < 0.5:
            labels.reverse()
        vertical = len(labels) == 2 and rng.random() < 0.5
        h = bh * (len(labels) if vertical else 1)
        w = bw * (1 if vertical else len(labels))
        slot = _find_slot(rng, occupied, spec, h, w)
        if slot is None:
            raise ValueError("could not place all blobs; map too small for the requested motif rates")
        r, c = slot
        occupied[r : r + h, c : c + w] = True
        for i, label in enumerate(labels):
            if vertical:
                cells[r + i * bh : r + (i + 1) * bh, c : c + bw] = label
            else:
                cells[r : r + bh, c + i * bw : c + (i + 1) * bw] = label

    free = ~occupied
    noisy = free & (rng.random(cells.shape) < spec.noise_rate)
    noise_labels = rng.choice(NUM_LABELS, size=cells.shape, p=prior) + 1
    cells[noisy] = noise_labels[noisy]
    return HistologyMap(spec.rows, spec.cols, spec.tile_px, cells), spec.group
