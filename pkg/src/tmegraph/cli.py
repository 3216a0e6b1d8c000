"""Command-line entry point: ``tmegraph <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error. Output files are written
atomically and start with a ``#`` header naming the subcommand and the
effective configuration.
"""

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import census_stats, eval_harness, gnn_core
from .config import load_config
from .fileio import FormatError, atomic_write, comment_header
from .graph_builder import build_graph, parse_graph, write_graph
from .histomap import SynthSpec, parse_map, parse_pair, synthesize_map, write_map
from .labels import LABEL_NAMES
from .node_features import (
    Standardizer,
    assemble_features,
    parse_nfm,
    parse_textures,
    synthetic_textures,
    write_nfm,
    write_textures,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_usage()}")


def _emit(path, subcommand, config, body):
    if isinstance(body, str):
        body = body.encode("utf-8")
    atomic_write(path, comment_header(subcommand, config).encode("utf-8") + body)


def _csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def _builder_overrides(args):
    return {
        "builder.epsilon_px": args.epsilon,
        "builder.window": args.window,
        "builder.eta_high": args.eta_high,
        "builder.eta_low": args.eta_low,
        "builder.connectivity": args.conn,
    }


# -- subcommands -------------------------------------------------------------


def cmd_synth(args):
    rates = {}
    for item in args.motif_rate or []:
        pair, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--motif-rate expects <pair>=<float>, got {item!r}")
        try:
            rates[parse_pair(pair)] = float(value)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    spec = SynthSpec.for_group(args.group, rows=args.rows, cols=args.cols, tile_px=args.tile_px, motif_rates=rates)
    m, label = synthesize_map(spec, args.seed)
    config = {"rows": args.rows, "cols": args.cols, "group": label, "seed": args.seed, "tile_px": args.tile_px}
    config.update({f"motif_rate.{LABEL_NAMES[a - 1]}-{LABEL_NAMES[b - 1]}": r for (a, b), r in sorted(spec.motif_rates.items())})
    _emit(args.out, "synth", config, write_map(m))


def cmd_synth_cohort(args):
    from .synthetic import HIGH_SIGNAL, synthetic_cohort

    cfg = load_config(args.config, _builder_overrides(args))
    out = Path(args.out_dir)
    rates = HIGH_SIGNAL if args.high_signal else {}
    cases = synthetic_cohort(
        args.n_pcr,
        args.n_rd,
        args.seed,
        cfg.builder,
        args.texture_signal,
        args.texture_noise,
        pcr_rates=rates.get("pcr"),
        rd_rates=rates.get("rd"),
    )
    rows = []
    header = {"seed": args.seed, "n_pcr": args.n_pcr, "n_rd": args.n_rd, "high_signal": args.high_signal, **cfg.flat()}
    for c in cases:
        paths = [out / f"{c.id}.{ext}" for ext in ("hmap", "tmeg", "feat")]
        _emit(paths[0], "synth-cohort", {"id": c.id, "group": c.label}, write_map(c.hmap))
        _emit(paths[1], "synth-cohort", header, write_graph(c.graph))
        _emit(paths[2], "synth-cohort", {"id": c.id}, write_textures(c.textures))
        rows.append(eval_harness.ManifestRow(c.id, *paths, c.label))
    _emit(out / "manifest.csv", "synth-cohort", header, eval_harness.write_manifest(rows, base=out))


def cmd_build_graph(args):
    cfg = load_config(args.config, _builder_overrides(args))
    m = parse_map(Path(args.inp).read_bytes())
    g = build_graph(m, cfg.builder, threads=args.threads)
    _emit(args.out, "build-graph", {k: v for k, v in cfg.flat().items() if k.startswith("builder.")}, write_graph(g))


def cmd_synth_textures(args):
    g = parse_graph(Path(args.graph).read_bytes())
    tex = synthetic_textures(g, args.seed, args.signal, args.noise)
    _emit(args.out, "synth-textures", {"seed": args.seed, "signal": args.signal, "noise": args.noise}, write_textures(tex))


def cmd_features(args):
    g = parse_graph(Path(args.graph).read_bytes())
    if args.textures is None and not args.zero_textures:
        raise UsageError("features: pass --textures <file.feat> or --zero-textures")
    tex = None if args.zero_textures else parse_textures(Path(args.textures).read_bytes())
    fm = assemble_features(g, tex, count_mode=args.count_mode, zero_textures=args.zero_textures)
    config = {"count_mode": args.count_mode, "zero_textures": args.zero_textures, "layout": "onehot12|count|texture12|sna4"}
    _emit(args.out, "features", config, write_nfm(fm))


def cmd_census(args):
    g = parse_graph(Path(args.graph).read_bytes())
    table = census_stats.census(g)
    rows = [("key", "count")] + list(table.flat().items())
    rows += [("total:edges", table.total_edges), ("total:triangles", table.total_triangles)]
    _emit(args.out, "census", {"graph": Path(args.graph).name}, _csv(rows))
    if args.density_out:
        if not args.map:
            raise UsageError("census: --density-out needs --map")
        m = parse_map(Path(args.map).read_bytes())
        grid = census_stats.node_value_grid(m, g, census_stats.triangle_participation(g))
        config = {"graph": Path(args.graph).name, "map": Path(args.map).name, "value": "triangle_participation"}
        _emit(args.density_out, "census", config, census_stats.write_value_grid(grid, m.tile_px))


def _patient_tables(rows, kind):
    tables = []
    for r in rows:
        if kind == "census":
            tables.append(census_stats.census(parse_graph(Path(r.tmeg_path).read_bytes())).flat())
        else:
            props = census_stats.label_proportions(parse_map(Path(r.hmap_path).read_bytes()))
            tables.append({f"prop:{n}": float(v) for n, v in zip(LABEL_NAMES, props)})
    return tables


def cmd_compare(args):
    rows = eval_harness.read_manifest(args.manifest)
    tables = _patient_tables(rows, args.kind)
    result = census_stats.compare_groups(tables, [r.label for r in rows])
    out = [("key", "mean_pcr", "mean_rd", "t", "p", "std_pcr", "std_rd", "n_pcr", "n_rd")]
    for c in result:
        out.append((c.key, repr(c.mean_pcr), repr(c.mean_rd), repr(c.t), repr(c.p), repr(c.std_pcr), repr(c.std_rd), c.n_pcr, c.n_rd))
    _emit(args.out, "compare", {"manifest": Path(args.manifest).name, "kind": args.kind, "test": "welch"}, _csv(out))


def cmd_relevance(args):
    rows = eval_harness.read_manifest(args.manifest)
    maps = [parse_map(Path(r.hmap_path).read_bytes()) for r in rows]
    if args.features == "label_counts":
        x = np.array([census_stats.label_counts(m) for m in maps], dtype=float)
    else:
        x = np.array([census_stats.label_proportions(m) for m in maps])
    y = np.array([1.0 if r.label == "pcr" else 0.0 for r in rows])
    r, constant = census_stats.pearson_map(x, y)
    if args.method == "pearson":
        order = sorted(range(len(r)), key=lambda i: (-abs(r[i]), i))[: args.k]
        ranked = [(i, float(r[i])) for i in order]
        per_label = r
    else:
        ranked = census_stats.mrmr_rank(x, y, args.k)
        per_label = np.zeros(len(LABEL_NAMES))
        for i, score in ranked:
            per_label[i] = score
    out = [("rank", "feature", "score", "pearson_r", "constant")]
    for rank, (i, score) in enumerate(ranked, start=1):
        out.append((rank, LABEL_NAMES[i], repr(score), repr(float(r[i])), int(constant[i])))
    config = {"manifest": Path(args.manifest).name, "method": args.method, "k": args.k, "features": args.features}
    _emit(args.out, "relevance", config, _csv(out))
    if args.map_out:
        for row, m in zip(rows, maps):
            grid = census_stats.label_value_grid(m, per_label)
            _emit(Path(args.map_out) / f"{row.patient_id}.fmap", "relevance", config, census_stats.write_value_grid(grid, m.tile_px))


def _train_config(args, cfg):
    overrides = {
        "train.lr": args.lr,
        "train.epochs": args.epochs,
        "train.seed": args.seed,
        "train.batch_size": args.batch_size,
        "train.early_stop_loss": args.early_stop_loss,
        "train.patience": args.patience,
        "model.hidden": args.hidden,
        "model.blocks": args.blocks,
    }
    return cfg.with_values({k: v for k, v in overrides.items() if v is not None})


def cmd_train(args):
    cfg = _train_config(args, load_config(args.config, {"eval.ablation": args.ablation}))
    rows = eval_harness.read_manifest(args.data)
    patients = eval_harness.load_patients(rows, zero_textures=args.zero_textures)
    ids = [p.id for p in patients]
    std, transform = eval_harness.prepare(patients, ids, cfg.eval.ablation)
    data = [(p.graph.adjacency, transform(p), 0 if p.is_pcr else 1) for p in patients]
    model_cfg = replace(cfg.model, seed=cfg.train.seed)
    result = gnn_core.train(data, cfg.train, model_cfg)
    result.params.meta.update({"ablation": cfg.eval.ablation, "loss_curve": result.loss_curve})
    extra = {"standardizer": {"mean": std.mean.tolist(), "std": std.std.tolist()}, "run_config": cfg.flat()}
    body = gnn_core.save_checkpoint(result.params, extra)
    atomic_write(args.out, body)
    if args.loss_out:
        _emit(args.loss_out, "train", cfg.flat(), _csv([("epoch", "loss")] + [(i, repr(v)) for i, v in enumerate(result.loss_curve)]))


def _load_features(path, g):
    data = Path(path).read_bytes()
    text = data.decode("utf-8")
    first = next((line for line in text.splitlines() if line and not line.startswith("#")), "")
    if first.startswith("NFM "):
        fm = parse_nfm(data)
        if list(fm.node_ids) != [v.id for v in g.nodes]:
            raise FormatError("feature matrix rows do not match graph node ids")
        return fm.values
    return assemble_features(g, parse_textures(data)).values


def cmd_predict(args):
    params, header = gnn_core.load_checkpoint(Path(args.model).read_bytes())
    std = Standardizer(np.array(header["standardizer"]["mean"]), np.array(header["standardizer"]["std"]))
    keep = eval_harness.ablation_mask(params.meta.get("ablation", "LIS"))
    out = [("id", "prob_pcr", "prob_rd", "pred")]
    g = parse_graph(Path(args.graph).read_bytes())
    h = std.transform(_load_features(args.features, g)) * keep
    pred = gnn_core.predict(g.adjacency, h, params)
    pid = args.id or Path(args.graph).stem
    out.append((pid, repr(float(pred.probs[0])), repr(float(pred.probs[1])), "pcr" if pred.probs[0] >= 0.5 else "rd"))
    config = {"model": Path(args.model).name, "graph": Path(args.graph).name}
    body = _csv(out)
    if args.out:
        _emit(args.out, "predict", config, body)
    else:
        sys.stdout.write(body)
    if args.embeddings_out:
        rows = [("node_id", "attention", *(f"emb_{i}" for i in range(pred.embeddings.shape[1])))]
        for v, a, e in zip(g.nodes, pred.attention, pred.embeddings):
            rows.append((v.id, repr(float(a)), *(repr(float(x)) for x in e)))
        _emit(args.embeddings_out, "predict", config, _csv(rows))


def cmd_cv(args):
    overrides = {"eval.k": args.k, "eval.seed": args.seed, "eval.ablation": args.ablation, "eval.threads": args.threads}
    cfg = _train_config(args, load_config(args.config, overrides))
    rows = eval_harness.read_manifest(args.manifest)
    patients = eval_harness.load_patients(rows, zero_textures=args.zero_textures)
    lr_grid = [float(x) for x in args.lr_grid.split(",")] if args.lr_grid else None
    model_cfg = replace(cfg.model, seed=cfg.train.seed)
    report = eval_harness.run_cv(
        patients, cfg.train, model_cfg, cfg.eval.ablation, cfg.eval.k, cfg.eval.seed, cfg.eval.threads, lr_grid
    )
    header = {k: v for k, v in cfg.flat().items() if k != "eval.threads"}
    _emit(args.out, "cv", header, eval_harness.report_csv(report))
    if args.roc_out:
        for fold in report.folds:
            _emit(Path(args.roc_out) / f"fold{fold.index}.csv", "cv", header, eval_harness.roc_csv(fold))
    if args.predictions_out:
        _emit(args.predictions_out, "cv", header, eval_harness.predictions_csv(report))
    mean = report.summary
    print(" ".join(f"{m}={mean[m][0]:.3f}±{mean[m][1]:.3f}" for m in eval_harness.METRICS))


def cmd_grad_check(args):
    rng = np.random.default_rng(args.seed)
    n = args.nodes
    a = np.triu((rng.random((n, n)) < 0.5).astype(float), 1)
    a = a + a.T
    h = rng.standard_normal((n, args.in_dim))
    cfg = gnn_core.ModelConfig(in_dim=args.in_dim, hidden=args.hidden, blocks=args.blocks, activation=args.activation, seed=args.seed)
    params = gnn_core.init_params(cfg)
    res = gnn_core.grad_check(params, h, a, label=args.seed % 2, step=args.step)
    print(f"parameters={params.parameter_count()} max_rel_error={res.max_rel_error:.3e} max_abs_error={res.max_abs_error:.3e}")
    return 0 if res.max_rel_error < args.tol else 2


# -- parser ------------------------------------------------------------------


def _add_builder_flags(p):
    p.add_argument("--epsilon", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--eta-high", type=int)
    p.add_argument("--eta-low", type=int)
    p.add_argument("--conn", type=int, choices=(4, 8))


def _add_train_flags(p):
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--early-stop-loss", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--zero-textures", action="store_true", help="use all-zero texture embeddings")


def build_parser():
    parser = _Parser(prog="tmegraph", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value RunConfig file")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic histology map")
    p.add_argument("--rows", type=int, default=30)
    p.add_argument("--cols", type=int, default=30)
    p.add_argument("--group", choices=("pcr", "rd"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tile-px", type=int, default=150)
    p.add_argument("--motif-rate", action="append", metavar="PAIR=RATE")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("synth-cohort", help="generate maps, graphs, textures and a manifest")
    p.add_argument("--n-pcr", type=int, default=40)
    p.add_argument("--n-rd", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--texture-signal", type=float, default=1.0)
    p.add_argument("--texture-noise", type=float, default=1.0)
    p.add_argument("--high-signal", action="store_true", help="use the benchmark motif rates")
    _add_builder_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth_cohort)

    p = sub.add_parser("build-graph", help="histology map -> TME graph")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    _add_builder_flags(p)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("synth-textures", help="stand-in texture embeddings for a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--signal", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_textures)

    p = sub.add_parser("features", help="assemble the node feature matrix")
    p.add_argument("--graph", required=True)
    p.add_argument("--textures")
    p.add_argument("--zero-textures", action="store_true")
    p.add_argument("--count-mode", choices=("log", "raw"), default="log")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("census", help="edge and triangle counts by label combination")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--map", help="source .hmap, needed for --density-out")
    p.add_argument("--density-out", help="per-tile triangle-participation grid (.fmap)")
    p.set_defaults(func=cmd_census)

    p = sub.add_parser("compare", help="Welch t-tests between pCR and RD patients")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", choices=("census", "proportions"), default="census")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("relevance", help="Pearson / mRMR ranking of histology labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", choices=("pearson", "mrmr"), default="pearson")
    p.add_argument("--k", type=int, default=12)
    p.add_argument("--features", choices=("label_counts", "label_proportions"), default="label_counts")
    p.add_argument("--out", required=True)
    p.add_argument("--map-out", help="directory for per-patient per-tile value grids")
    p.set_defaults(func=cmd_relevance)

    p = sub.add_parser("train", help="train a classifier on a manifest")
    p.add_argument("--data", required=True)
    _add_train_flags(p)
    p.add_argument("--ablation")
    p.add_argument("--out", required=True)
    p.add_argument("--loss-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score one graph with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--features", required=True, help=".feat textures or .nfm matrix")
    p.add_argument("--id")
    p.add_argument("--out")
    p.add_argument("--embeddings-out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cv", help="k-fold cross-validation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--ablation")
    p.add_argument("--threads", type=int)
    p.add_argument("--lr-grid", help="comma-separated learning rates for nested selection")
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--roc-out")
    p.add_argument("--predictions-out")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("grad-check", help="finite-difference gradient check on a random graph")
    p.add_argument("--nodes", type=int, default=4)
    p.add_argument("--in-dim", type=int, default=29)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--activation", choices=("relu", "identity"), default="relu")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)
    return parser


def dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        code = args.func(args)
        return 0 if code is None else code
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    except (FormatError, ValueError, KeyError, OSError, FloatingPointError, eval_harness.LeakageError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
