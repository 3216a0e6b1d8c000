"""Histology label table shared by every module.

Code 0 marks a background (discarded) tile and never forms a graph node.
"""

NUM_LABELS = 12
BACKGROUND = 0

# fixed order; one-hot column i-1 corresponds to code i
LABEL_NAMES = (
    "hemorrhage",
    "immune",
    "cis",
    "mvd",
    "mucinous",
    "necrosis",
    "pgcc",
    "stroma",
    "tumor",
    "adipose",
    "muscle",
    "apocrine",
)

LONG_NAMES = (
    "hemorrhage",
    "immune cells",
    "carcinoma in situ",
    "microvessel density",
    "mucinous changes",
    "necrosis",
    "polyploid giant cancer cells",
    "stroma",
    "tumor",
    "adipose tissue",
    "muscle tissue",
    "apocrine change",
)

CODES = {name: i + 1 for i, name in enumerate(LABEL_NAMES)}

HEMORRHAGE, IMMUNE, CIS, MVD, MUCINOUS, NECROSIS, PGCC, STROMA, TUMOR, ADIPOSE, MUSCLE, APOCRINE = range(1, 13)

# clinically relevant classes cluster into nodes at the lower threshold
HIGH_RELEVANCE = frozenset({TUMOR, NECROSIS, IMMUNE, MVD, STROMA, PGCC})


def name_of(code: int) -> str:
    if not 1 <= code <= NUM_LABELS:
        raise ValueError(f"no histology label with code {code}")
    return LABEL_NAMES[code - 1]


def code_of(name: str) -> int:
    """Resolve a short label name (or a decimal code) to its integer code."""
    key = name.strip().lower()
    if key.isdigit():
        code = int(key)
        name_of(code)
        return code
    try:
        return CODES[key]
    except KeyError:
        raise ValueError(f"unknown histology label {name!r}") from None
