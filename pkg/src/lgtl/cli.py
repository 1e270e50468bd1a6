"""Command line entry point: ``lgtl <subcommand> ...``; every subcommand writes CSV."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .errors import LgtlError
from .graph import SbmConfig, generate_sbm, load_graph, save_graph

GRAPH_FILES = ("edges.txt", "features.csv", "labels.csv")


def _csv_ints(text):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10f}"
    return str(x)


def _emit(rows, header, out):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    text = buf.getvalue()
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def read_graph(path):
    """A graph directory holds edges.txt, features.csv and optionally labels.csv."""
    base = Path(path)
    labels = base / GRAPH_FILES[2]
    return load_graph(base / GRAPH_FILES[0], base / GRAPH_FILES[1], labels if labels.exists() else None)


def _sizes(args, default=2):
    return args.sizes if args.sizes else tuple([default] * args.hops)


# --
# subcommands

def cmd_generate(args):
    cfg = SbmConfig(args.nodes_per_class, args.classes, args.p_intra, args.p_inter, args.feature_dim,
                    args.separation, args.noise, args.seed)
    g = generate_sbm(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_graph(g, *(out / f for f in GRAPH_FILES))
    return 0


def cmd_tokenize(args):
    from .model import load_params, lgtl_forward
    from .templates import ho_tokens, nd_tokens, none_tokens

    g = read_graph(args.graph)
    if args.template == "none":
        tl = none_tokens(g, args.center)
    elif args.template == "ho":
        tl = ho_tokens(g, args.center, args.hops)
    elif args.template == "nd":
        tl, _ = nd_tokens(g, args.center, _sizes(args), args.seed)
    else:
        if not args.params:
            raise LgtlError("--template lgtl needs --params")
        tl = lgtl_forward(g, args.center, load_params(args.params), args.seed).tokens
    rows = []
    for t, layer, v, w in tl.to_rows():
        rows.append((t, layer, v, float(w), *tl.tokens[t]))
    _emit(rows, ["token", "layer", "node", "weight"] + [f"x{j}" for j in range(g.feature_dim)], args.out)
    return 0


def cmd_matrix(args):
    from .hopmatrix import check_properties, m_ho, m_nd

    table = (m_ho if args.kind == "ho" else m_nd)(args.n, args.depth)
    rep = check_properties(table)
    rows = [("entry", k, i, str(table[k][i])) for k in range(table.K + 1) for i in range(table.K + 1)]
    rows += [("property", "parity", "", rep.parity), ("property", "row_decay", "", rep.row_decay),
             ("property", "column_monotonicity", "", rep.column_monotonicity)]
    if rep.counterexample:
        rows.append(("counterexample", *rep.counterexample))
    _emit(rows, ["kind", "row", "col", "value"], args.out)
    return 0


def cmd_bounds(args):
    from .attention import ProjectionWeights, estimate_lipschitz
    from .bounds import ho_case, lgtl_case, nd_case
    from .model import LgtlParams, load_params

    g = read_graph(args.graph)
    lip = estimate_lipschitz(g)
    w = ProjectionWeights.random(g.feature_dim, args.seed, scale=1.0)
    if args.template == "lgtl":
        p = load_params(args.params) if args.params else LgtlParams.init(
            g.feature_dim, args.hops, _sizes(args, 4), g.class_count, args.seed)
    rows = []
    for u in range(g.num_nodes):
        if g.degree(u) == 0:
            continue
        if args.template == "ho":
            c = ho_case(g, u, args.hops, w, lip)
            rows.append((u, c.smoothness, c.uniform_smoothness, c.bound, c.uniform_smoothness <= c.bound + 1e-9))
        elif args.template == "nd":
            c = nd_case(g, u, _sizes(args), args.seed, w, lip)
            rows.append((u, c.smoothness, c.smoothness, c.bound, c.holds))
        else:
            c = lgtl_case(g, u, p, args.seed, lip)
            rows.append((u, c.smoothness, c.smoothness, c.bound, c.holds))
    _emit(rows, ["node", "smoothness", "bound_smoothness", "bound", "holds"], args.out)
    return 0 if all(r[-1] for r in rows) else 1


def cmd_train(args):
    from .model import LgtlParams, save_params
    from .training import TrainConfig, evaluate, make_splits, train

    g = read_graph(args.graph)
    sizes = _sizes(args, 4)
    cfg = TrainConfig(args.lr, args.epochs, args.seed, args.hops, sizes, args.ablation, args.patience,
                      args.template, args.train_backbone)
    splits = make_splits(g.num_nodes, args.seed)
    init = LgtlParams.init(g.feature_dim, args.hops, sizes, g.class_count, args.seed, attention_scale=0.0)
    res = train(g, splits, cfg, init)
    rows = [("epoch", e, "loss", loss) for e, loss, _, _ in res.curve]
    rows += [("epoch", e, "train_acc", acc) for e, _, acc, _ in res.curve]
    rows += [("epoch", e, "val_micro_f1", v) for e, _, _, v in res.curve]
    m = evaluate(g, res.params, splits.test, cfg)
    rows += [("final", res.best_epoch, "test_micro_f1", m.micro_f1), ("final", res.best_epoch, "test_macro_f1",
                                                                      m.macro_f1),
             ("final", res.best_epoch, "test_accuracy", m.accuracy)]
    _emit(rows, ["kind", "epoch", "metric", "value"], args.out)
    if args.save_params:
        save_params(res.params, args.save_params)
    return 0


def _experiment_config(args):
    cfg = ex.ExperimentConfig.load(args.config) if args.config else ex.ExperimentConfig()
    if args.seed is not None:
        cfg = ex.with_overrides(cfg, seeds=(args.seed,))
    cfg.validate()
    return cfg


def _run_experiment(fn):
    def run(args):
        rep = fn(_experiment_config(args))
        if args.out:
            rep.write(args.out)
        else:
            sys.stdout.write(rep.to_csv())
        return 0
    return run


def cmd_check(args):
    from .checks import run_checks

    rows = [(name, ok, detail) for name, ok, detail, _ in run_checks(args.only or None)]
    _emit(rows, ["check", "passed", "detail"], args.out)
    return 0 if all(r[1] for r in rows) else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="lgtl", description="Graph token lists: templates, theory and LGTL.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=0):
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--out", default=None, help="output CSV path (stdout if omitted)")

    p = sub.add_parser("generate", help="write a stochastic block model graph directory")
    p.add_argument("--nodes-per-class", type=int, default=150)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--p-intra", type=float, default=0.04)
    p.add_argument("--p-inter", type=float, default=0.01)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--separation", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("tokenize", help="token list and provenance for one node")
    p.add_argument("--graph", required=True)
    p.add_argument("--template", choices=("none", "ho", "nd", "lgtl"), required=True)
    p.add_argument("--center", type=int, required=True)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--sizes", type=_csv_ints, default=None)
    p.add_argument("--params", default=None)
    common(p)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("matrix", help="exact hop-contribution table and property report")
    p.add_argument("--kind", choices=("ho", "nd"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--depth", type=int, required=True)
    common(p)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("bounds", help="per-node smoothness against its bound")
    p.add_argument("--graph", required=True)
    p.add_argument("--template", choices=("ho", "nd", "lgtl"), required=True)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--sizes", type=_csv_ints, default=None)
    p.add_argument("--params", default=None)
    common(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("train", help="train one model on a graph directory")
    p.add_argument("--graph", required=True)
    p.add_argument("--template", choices=("none", "ho", "nd", "lgtl"), default="lgtl")
    p.add_argument("--ablation", choices=("full", "no_gate", "no_selection"), default="full")
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--sizes", type=_csv_ints, default=None)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--train-backbone", action="store_true")
    p.add_argument("--save-params", default=None)
    common(p)
    p.set_defaults(func=cmd_train)

    for name, fn, text in (("prelim", ex.run_preliminary, "fixed templates on both graph families"),
                           ("gate-analysis", ex.run_gate_analysis, "mean gate weight per hop"),
                           ("selection-analysis", ex.run_selection_analysis, "top-selected label agreement"),
                           ("ablate", ex.run_ablation, "LGTL with and without gate / selection")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", default=None, help="experiment JSON (defaults built in)")
        common(p, seed_default=None)
        p.set_defaults(func=_run_experiment(fn))

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--only", nargs="*", default=None)
    common(p)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    import torch

    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LgtlError, OSError) as exc:
        print(f"lgtl {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
