"""Command-line front end.

    graphcondense condense --dataset data/cora --method gcond --ratio 0.026 --out runs/cora
    graphcondense eval --condensed runs/cora --dataset data/cora --model gcn --repeats 10
    graphcondense stats --condensed runs/cora

Exit codes: 0 success, 2 bad configuration or input, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import dataio
from .condense import CondenseConfig, CondensedGraph, allocate_counts, condense, finalize
from .coresets import select
from .errors import ConfigError, GraphCondenseError
from .graph import graph_stats, induced_subgraph
from .harness import cross_architecture, cross_table, evaluate, evaluate_whole, report
from .models import ModelSpec

MODELS = {"gcn": "GCN", "sgc": "SGC", "appnp": "APPNP", "sage": "SAGE_mean", "mlp": "MLP"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _size_flags(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--ratio", type=float, help="condensed size as a fraction of all nodes")
    g.add_argument("--nodes", type=int, help="explicit condensed node count")


def _condense_flags(p):
    d = CondenseConfig()
    p.add_argument("--arch", choices=["sgc", "gcn"], default=d.arch.lower())
    p.add_argument("--layers", type=int, default=d.layers)
    p.add_argument("--hidden", type=int, default=d.hidden)
    p.add_argument("--k-prop", type=int, default=d.k_prop)
    p.add_argument("--epochs", type=int, default=d.epochs, help="inner iterations T")
    p.add_argument("--outer", type=int, default=d.outer, help="outer initializations K")
    p.add_argument("--tau1", type=int, default=d.tau1)
    p.add_argument("--tau2", type=int, default=d.tau2)
    p.add_argument("--tau-theta", type=int, default=d.tau_theta)
    p.add_argument("--lr-feat", type=float, default=d.lr_feat)
    p.add_argument("--lr-phi", type=float, default=d.lr_phi)
    p.add_argument("--lr-theta", type=float, default=d.lr_theta)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--fanout", type=int, default=d.fanout)
    p.add_argument("--gphi-layers", type=int, default=d.gphi_layers)
    p.add_argument("--gphi-hidden", type=int, default=d.gphi_hidden)
    p.add_argument("--delta", type=float, default=d.delta)
    p.add_argument("--schedule", choices=["alternate", "joint"], default=d.schedule)
    p.add_argument("--workers", type=int, default=d.workers)
    p.add_argument("--seed", type=int, default=d.seed)


def _config_from(args):
    return CondenseConfig(
        ratio=args.ratio, nodes=args.nodes, outer=args.outer, epochs=args.epochs, tau1=args.tau1,
        tau2=args.tau2, tau_theta=args.tau_theta, lr_feat=args.lr_feat, lr_phi=args.lr_phi,
        lr_theta=args.lr_theta, batch_size=args.batch_size, fanout=args.fanout, arch=args.arch.upper(),
        layers=args.layers, hidden=args.hidden, k_prop=args.k_prop, gphi_layers=args.gphi_layers,
        gphi_hidden=args.gphi_hidden, delta=args.delta, schedule=args.schedule, seed=args.seed,
        workers=args.workers).validate()


def _eval_spec(args):
    return ModelSpec(MODELS[args.model], layers=args.model_layers, hidden=args.model_hidden)


def _eval_flags(p):
    p.add_argument("--model", choices=sorted(MODELS), default="gcn")
    p.add_argument("--model-layers", type=int, default=2)
    p.add_argument("--model-hidden", type=int, default=256)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--eval-epochs", type=int, default=600)
    p.add_argument("--eval-lr", type=float, default=0.01)


def build_parser():
    ap = _Parser(prog="graphcondense", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("condense", help="learn a condensed graph")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", choices=["gcond", "gcond-x", "dc-graph"], default="gcond")
    _size_flags(p)
    _condense_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("select", help="pick a coreset of real training nodes")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", choices=["random", "herding", "kcenter"], default="random")
    _size_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="train on a reduced graph, test on the original")
    p.add_argument("--dataset", required=True)
    p.add_argument("--condensed", help="artifact directory; omit to train on the whole dataset")
    _eval_flags(p)
    p.add_argument("--delta", type=float, help="re-threshold the stored adjacency first")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")

    p = sub.add_parser("cross-eval", help="condense with several models, evaluate with several")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", choices=["gcond", "gcond-x", "dc-graph"], default="gcond")
    _size_flags(p)
    _condense_flags(p)
    p.add_argument("--condense-archs", default="sgc,gcn")
    p.add_argument("--models", default="gcn,sgc,appnp,sage,mlp")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--report")

    p = sub.add_parser("stats", help="edge count, sparsity, homophily and storage")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--condensed")
    g.add_argument("--dataset")
    p.add_argument("--binarize-at", type=float, default=0.5)

    p = sub.add_parser("gen-synth", help="write a stochastic-block-model dataset")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--p-in", type=float, default=0.1)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("import", help="convert public citation data to the text format")
    p.add_argument("--format", choices=["planetoid", "linqs"], required=True)
    p.add_argument("--raw", required=True, help="directory with the raw files")
    p.add_argument("--name", required=True)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return ap


def _target(graph, args):
    cfg = CondenseConfig(ratio=args.ratio, nodes=args.nodes).validate()
    return cfg.target_nodes(graph)


def cmd_condense(args):
    graph = dataio.load_dataset(args.dataset)
    cfg = _config_from(args)

    def progress(it, loss):
        if not args.quiet and it % 25 == 0:
            print(f"iter {it:5d}  matching loss {loss:.6f}", flush=True)

    cond, trace = condense(graph, cfg, args.method, callback=progress)
    cond.meta["dataset_path"] = os.path.abspath(args.dataset)
    dataio.save_condensed(cond, args.out)
    np.savetxt(os.path.join(args.out, "loss_trace.txt"), trace, fmt=dataio.FLOAT_FMT)
    st = graph_stats(cond.adj, cond.labels, 0.5, cond.features.shape[1])
    print(f"wrote {args.out}: {cond.n} nodes, {st['edges']} edges, homophily {st['homophily']:.3f}")
    return 0


def cmd_select(args):
    graph = dataio.load_dataset(args.dataset)
    counts = allocate_counts(graph.class_counts(), _target(graph, args))
    sel = select(graph, args.method, counts, seed=args.seed)
    sub = induced_subgraph(graph, sel.node_ids)
    cond = CondensedGraph(sub.features, sub.labels, graph.num_classes, variant=args.method.upper(),
                          delta=None, adj=sub.adj.toarray(),
                          meta={"seed": args.seed, "config": {"method": args.method, "counts": counts.tolist()},
                                "node_ids": sel.node_ids.tolist()})
    dataio.save_condensed(cond, args.out)
    print(f"wrote {args.out}: {len(sel.node_ids)} nodes selected by {args.method}")
    return 0


def cmd_eval(args):
    graph = dataio.load_dataset(args.dataset)
    spec = _eval_spec(args)
    if args.condensed:
        cond = dataio.load_condensed(args.condensed)
        if args.delta is not None:
            cond = finalize(cond, delta=args.delta)
        rep = evaluate(cond, graph, spec, repeats=args.repeats, seed=args.seed, epochs=args.eval_epochs,
                       lr=args.eval_lr)
    else:
        rep = evaluate_whole(graph, spec, repeats=args.repeats, seed=args.seed, epochs=args.eval_epochs,
                             lr=args.eval_lr)
    for i, (s, a) in enumerate(zip(rep.seeds, rep.accuracies)):
        print(f"repeat {i} seed {s} accuracy {100 * a:.2f}")
    print(f"{rep.method} {rep.eval_arch} accuracy {rep.summary()}")
    config = {"dataset": args.dataset, "condensed": args.condensed, "model": spec.arch,
              "layers": spec.layers, "hidden": spec.hidden, "repeats": args.repeats, "seed": args.seed,
              "epochs": args.eval_epochs, "lr": args.eval_lr, "weight_decay": spec.weight_decay,
              "dropout": spec.dropout, "checkpoint": "best-validation"}
    if args.report:
        report(rep, path=args.report, config=config)
    return 0


def cmd_cross_eval(args):
    graph = dataio.load_dataset(args.dataset)
    cfg = _config_from(args)
    cas = [a.strip().upper() for a in args.condense_archs.split(",") if a.strip()]
    eas = [MODELS[m.strip()] for m in args.models.split(",") if m.strip()]
    res = cross_architecture(graph, cfg, cas, eas, repeats=args.repeats, seed=cfg.seed, variant=args.method)
    print(cross_table(res), end="")
    if args.report:
        report(*res.values(), path=args.report, config=cfg.echo())
    return 0


def cmd_stats(args):
    if args.condensed:
        cond = dataio.load_condensed(args.condensed)
        st = graph_stats(cond.adj, cond.labels, args.binarize_at, cond.features.shape[1])
    else:
        g = dataio.load_dataset(args.dataset)
        st = graph_stats(g.adj, g.labels, args.binarize_at, g.num_features)
    print(f"nodes      {st['nodes']}")
    print(f"edges      {st['edges']}")
    print(f"sparsity   {st['sparsity']:.2f}%")
    print(f"homophily  {st['homophily']:.4f}")
    print(f"storage    {st['storage_mb']:.3f} MB ({st['storage_bytes']} bytes)")
    return 0


def cmd_gen_synth(args):
    g = dataio.gen_synthetic(args.n, args.classes, args.p_in, args.p_out, args.d, seed=args.seed)
    extra = {"generator": {"n": args.n, "classes": args.classes, "p_in": args.p_in, "p_out": args.p_out,
                           "d": args.d, "seed": args.seed}}
    dataio.save_dataset(g, args.out, extra=extra)
    print(f"wrote {args.out}: {g.n} nodes, {g.num_edges()} edges")
    return 0


def cmd_import(args):
    if args.format == "planetoid":
        g = dataio.import_planetoid(args.raw, args.name)
        extra = {"source": f"Planetoid ind.{args.name}.* public split"}
    else:
        g = dataio.import_linqs(os.path.join(args.raw, f"{args.name}.content"),
                                os.path.join(args.raw, f"{args.name}.cites"), seed=args.split_seed,
                                name=args.name)
        extra = {"source": f"LINQS {args.name}.content/{args.name}.cites", "split_seed": args.split_seed}
    dataio.save_dataset(g, args.out, compress=True, row_normalize=True, extra=extra)
    print(f"wrote {args.out}: {g.n} nodes, {g.num_edges()} edges, {g.num_classes} classes")
    return 0


COMMANDS = {"condense": cmd_condense, "select": cmd_select, "eval": cmd_eval, "cross-eval": cmd_cross_eval,
            "stats": cmd_stats, "gen-synth": cmd_gen_synth, "import": cmd_import}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.cmd](args)
    except GraphCondenseError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except SystemExit as e:  # --help
        return int(e.code or 0)


if __name__ == "__main__":
    sys.exit(main())
