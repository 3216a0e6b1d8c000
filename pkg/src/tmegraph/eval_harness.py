"""Stratified k-fold cross-validation, classification metrics and feature ablations."""

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import gnn_core
from .node_features import FEATURE_GROUPS, Standardizer, assemble_features

METRICS = ("acc", "auc", "sensitivity", "specificity", "precision", "f1")


# -- folds -------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    folds: tuple  # ((train_ids, test_ids), ...)

    def test_sets(self):
        return [set(test) for _, test in self.folds]


def make_folds(patient_ids, labels, k=8, seed=0):
    """Stratified folds: each class is shuffled and dealt round-robin.

    The second class continues dealing where the first stopped, so fold sizes
    differ by at most one overall and per class.
    """
    ids = list(patient_ids)
    labels = list(labels)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate patient ids")
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > len(ids):
        raise ValueError(f"k={k} exceeds the number of patients ({len(ids)})")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError("both classes must be present")
    rng = np.random.default_rng(seed)
    buckets = [[] for _ in range(k)]
    cursor = 0
    for cls in classes:
        members = [pid for pid, lab in zip(ids, labels) if lab == cls]
        for pid in (members[i] for i in rng.permutation(len(members))):
            buckets[cursor % k].append(pid)
            cursor += 1
    folds = []
    for f in range(k):
        test = tuple(buckets[f])
        test_set = set(test)
        train = tuple(pid for pid in ids if pid not in test_set)
        folds.append((train, test))
    return FoldPlan(k, seed, tuple(folds))


# -- metrics -----------------------------------------------------------------


def roc_points(scores, labels):
    """ROC vertices (fpr, tpr, threshold) from the highest threshold down.

    Tied scores advance TP and FP together, i.e. one diagonal segment.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    pos, neg = labels.sum(), (~labels).sum()
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    pts = [(0.0, 0.0, math.inf)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        tp += int(y[i:j].sum())
        fp += int((~y[i:j]).sum())
        pts.append((fp / neg if neg else float("nan"), tp / pos if pos else float("nan"), float(s[i])))
        i = j
    return pts


def auc_score(scores, labels):
    """Trapezoidal area under the exact ROC; None if a class is missing."""
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        return None
    pts = roc_points(scores, labels)
    area = 0.0
    for (x0, y0, _), (x1, y1, _) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def _ratio(num, den):
    return num / den if den else 0.0


@dataclass(frozen=True)
class MetricEntry:
    acc: float
    auc: float  # None when the fold holds a single class
    sensitivity: float
    specificity: float
    precision: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int


def metrics_from_confusion(tp, fp, tn, fn, auc=None):
    sens = _ratio(tp, tp + fn)
    spec = _ratio(tn, tn + fp)
    prec = _ratio(tp, tp + fp)
    f1 = _ratio(2 * prec * sens, prec + sens)
    acc = _ratio(tp + tn, tp + fp + tn + fn)
    return MetricEntry(acc, auc, sens, spec, prec, f1, tp, fp, tn, fn)


def compute_metrics(scores, labels, threshold=0.5):
    """Metrics for pCR-positive scores; ``labels`` is 1 for pCR, 0 for RD.

    A patient is called pCR when its score is >= ``threshold``. Undefined
    ratios (zero denominators) are reported as 0.
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    pred = scores >= threshold
    tp = int((pred & y).sum())
    fp = int((pred & ~y).sum())
    tn = int((~pred & ~y).sum())
    fn = int((~pred & y).sum())
    return metrics_from_confusion(tp, fp, tn, fn, auc_score(scores, y))


# -- data --------------------------------------------------------------------


@dataclass
class Patient:
    id: str
    label: str  # "pcr" or "rd"
    graph: object
    features: np.ndarray  # raw (unstandardized) node features

    @property
    def is_pcr(self):
        return self.label == "pcr"


def ablation_mask(flags):
    """Boolean column mask keeping the L / I / S groups named in ``flags``."""
    flags = (flags or "").upper()
    if flags in ("NONE", "-"):
        flags = ""
    unknown = set(flags) - set(FEATURE_GROUPS)
    if unknown:
        raise ValueError(f"unknown ablation flag(s) {''.join(sorted(unknown))}; use L, I, S")
    keep = np.zeros(sum(len(c) for c in FEATURE_GROUPS.values()), dtype=bool)
    for flag in flags:
        keep[list(FEATURE_GROUPS[flag])] = True
    return keep


def prepare(patients, train_ids, ablation):
    """Fit the standardizer on training patients only; return transform closure."""
    by_id = {p.id: p for p in patients}
    std = Standardizer.fit([by_id[i].features for i in train_ids])
    keep = ablation_mask(ablation)

    def transform(p):
        return std.transform(p.features) * keep

    return std, transform


# -- cross-validation --------------------------------------------------------


@dataclass
class FoldResult:
    index: int
    test_ids: tuple
    scores: tuple  # prob_pCR per test patient
    labels: tuple  # 1 = pCR
    metrics: MetricEntry
    roc: list
    epochs_run: int
    lr: float


@dataclass
class CVReport:
    folds: list
    ablation: str
    summary: dict = field(default_factory=dict)  # metric -> (mean, std)
    pooled_auc: float = None

    def mean(self, metric):
        return self.summary[metric][0]


class LeakageError(RuntimeError):
    pass


def _fit_predict(patients, train_ids, test_ids, ablation, train_cfg, model_cfg):
    train_set = set(train_ids)
    if train_set & set(test_ids):
        raise LeakageError(f"test patient(s) {sorted(train_set & set(test_ids))} appear in training inputs")
    by_id = {p.id: p for p in patients}
    _, transform = prepare(patients, train_ids, ablation)
    data = [(by_id[i].graph.adjacency, transform(by_id[i]), 0 if by_id[i].is_pcr else 1) for i in train_ids]
    result = gnn_core.train(data, train_cfg, model_cfg)
    scores = []
    for pid in test_ids:
        p = by_id[pid]
        pred = gnn_core.predict(p.graph.adjacency, transform(p), result.params)
        scores.append(float(pred.probs[0]))
    return scores, result.epochs_run


def _select_lr(patients, train_ids, ablation, train_cfg, model_cfg, lr_grid, seed):
    by_id = {p.id: p for p in patients}
    inner = make_folds(train_ids, [by_id[i].label for i in train_ids], k=3, seed=seed)
    best_lr, best_acc = None, -1.0
    for lr in lr_grid:
        cfg = replace(train_cfg, lr=lr)
        correct = 0
        for tr, te in inner.folds:
            scores, _ = _fit_predict(patients, tr, te, ablation, cfg, model_cfg)
            correct += sum((s >= 0.5) == by_id[i].is_pcr for s, i in zip(scores, te))
        acc = correct / len(train_ids)
        if acc > best_acc:
            best_lr, best_acc = lr, acc
    return best_lr


def run_fold(patients, plan, index, ablation, train_cfg, model_cfg=None, lr_grid=None):
    train_ids, test_ids = plan.folds[index]
    cfg = replace(train_cfg, seed=train_cfg.seed + index)
    if model_cfg is not None:
        model_cfg = replace(model_cfg, seed=cfg.seed)
    if lr_grid:
        cfg = replace(cfg, lr=_select_lr(patients, train_ids, ablation, cfg, model_cfg, lr_grid, plan.seed + index))
    scores, epochs = _fit_predict(patients, train_ids, test_ids, ablation, cfg, model_cfg)
    by_id = {p.id: p for p in patients}
    labels = tuple(int(by_id[i].is_pcr) for i in test_ids)
    return FoldResult(
        index, tuple(test_ids), tuple(scores), labels, compute_metrics(scores, labels), roc_points(scores, labels), epochs, cfg.lr
    )


def summarize(folds):
    summary = {}
    for name in METRICS:
        vals = [getattr(f.metrics, name) for f in folds]
        vals = np.array([v for v in vals if v is not None], dtype=float)
        summary[name] = (float(vals.mean()), float(vals.std())) if len(vals) else (float("nan"), float("nan"))
    return summary


def run_cv(patients, train_cfg=None, model_cfg=None, ablation="LIS", k=8, seed=0, workers=1, lr_grid=None):
    """k-fold CV; every fold standardizes on its own training patients only."""
    train_cfg = train_cfg or gnn_core.TrainConfig()
    ablation_mask(ablation)
    plan = make_folds([p.id for p in patients], [p.label for p in patients], k, seed)
    covered = sorted(i for _, test in plan.folds for i in test)
    if covered != sorted(p.id for p in patients):
        raise LeakageError("fold plan does not partition the cohort")
    args = [(patients, plan, i, ablation, train_cfg, model_cfg, lr_grid) for i in range(k)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as pool:
            folds = list(pool.map(run_fold, *zip(*args)))
    else:
        folds = [run_fold(*a) for a in args]
    folds.sort(key=lambda f: f.index)
    all_scores = [s for f in folds for s in f.scores]
    all_labels = [y for f in folds for y in f.labels]
    return CVReport(folds, ablation, summarize(folds), auc_score(all_scores, all_labels))


def _fmt(v):
    return "" if v is None else repr(float(v))


def report_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fold", *METRICS, "tp", "fp", "tn", "fn", "epochs", "lr"])
    for f in report.folds:
        m = f.metrics
        w.writerow([f.index, *(_fmt(getattr(m, n)) for n in METRICS), m.tp, m.fp, m.tn, m.fn, f.epochs_run, f.lr])
    w.writerow(["mean", *(_fmt(report.summary[n][0]) for n in METRICS), "", "", "", "", "", ""])
    w.writerow(["std", *(_fmt(report.summary[n][1]) for n in METRICS), "", "", "", "", "", ""])
    w.writerow(["pooled_auc", "", _fmt(report.pooled_auc), "", "", "", "", "", "", "", "", "", ""])
    return buf.getvalue()


def roc_csv(fold):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fpr", "tpr", "threshold"])
    for fpr, tpr, thr in fold.roc:
        w.writerow([repr(fpr), repr(tpr), repr(thr)])
    return buf.getvalue()


def predictions_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fold", "id", "prob_pcr", "label"])
    for f in report.folds:
        for pid, s, y in zip(f.test_ids, f.scores, f.labels):
            w.writerow([f.index, pid, repr(s), "pcr" if y else "rd"])
    return buf.getvalue()


# -- manifests ---------------------------------------------------------------

MANIFEST_FIELDS = ("patient_id", "hmap_path", "tmeg_path", "feat_path", "label")


@dataclass(frozen=True)
class ManifestRow:
    patient_id: str
    hmap_path: Path
    tmeg_path: Path
    feat_path: Path
    label: str


def normalize_label(value):
    v = str(value).strip().lower()
    if v in ("pcr", "1"):
        return "pcr"
    if v in ("rd", "0"):
        return "rd"
    raise ValueError(f"label must be pcr/rd (or 1/0), got {value!r}")


def read_manifest(path):
    """Rows of a manifest CSV; relative paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    text = "\n".join(line for line in path.read_text(encoding="utf-8").splitlines() if not line.startswith("#"))
    reader = csv.DictReader(io.StringIO(text))
    missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"manifest {path} lacks column(s): {', '.join(sorted(missing))}")
    rows, seen = [], set()
    for rec in reader:
        pid = rec["patient_id"].strip()
        if pid in seen:
            raise ValueError(f"duplicate patient id {pid!r} in manifest")
        seen.add(pid)
        rows.append(
            ManifestRow(
                pid,
                *(base / rec[k].strip() if rec[k].strip() else None for k in ("hmap_path", "tmeg_path", "feat_path")),
                normalize_label(rec["label"]),
            )
        )
    return rows


def write_manifest(rows, base=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_FIELDS)
    for r in rows:
        paths = [r.hmap_path, r.tmeg_path, r.feat_path]
        if base is not None:
            paths = [Path(p).relative_to(base) if p is not None else "" for p in paths]
        w.writerow([r.patient_id, *paths, r.label])
    return buf.getvalue()


def load_patients(rows, zero_textures=False):
    from .graph_builder import parse_graph
    from .node_features import parse_textures

    patients = []
    for r in rows:
        g = parse_graph(Path(r.tmeg_path).read_bytes())
        tex = None if zero_textures else parse_textures(Path(r.feat_path).read_bytes())
        fm = assemble_features(g, tex, zero_textures=zero_textures)
        patients.append(Patient(r.patient_id, r.label, g, fm.values))
    return patients
