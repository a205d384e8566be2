"""Command-line entry point: ``bigsl <subcommand> ...``.

Every subcommand exits 0 on success. On failure it prints one line,
``bigsl: error: <reason>``, to stderr and exits 2.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np
import yaml

from .config import ABLATIONS, PROFILES, load_run_config
from .errors import BigslError
from .ingest import filter_dataset, load_dataset, read_checkins, save_dataset, split_train_test
from .metrics import ablation_table, evaluate_model, run_ablations, write_report
from .storage import atomic_write_bytes, edge_list_text, matrix_text
from .train import CHECKPOINT_FORMAT, Trainer, load_model

CHECKPOINT_NAME = "checkpoint.bin"
LOG_NAME = "train_log.jsonl"
REPORTS_NAME = "reports.json"


class CliError(BigslError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {' '.join(message.split())}\n")


def _require_file(path, what):
    if path is None:
        raise CliError(f"no {what} given")
    if not os.path.isfile(path):
        raise CliError(f"{what} not found: {path}")
    return path


def _run_config(args, need_dataset=True):
    overrides = {"seed": args.seed, "estep_period": args.estep, "epochs": getattr(args, "epochs", None),
                 "ablation": args.ablation, "dataset": args.dataset, "workdir": args.workdir,
                 "run_id": getattr(args, "run_id", None)}
    config, run = load_run_config(args.config, args.profile, overrides=overrides)
    if need_dataset:
        _require_file(run.get("dataset"), "dataset file")
    run.setdefault("workdir", ".")
    run.setdefault("run_id", config.ablation)
    return config, run


# --- subcommands --------------------------------------------------------------

def cmd_preprocess(args):
    _require_file(args.raw, "raw check-in file")
    ds = filter_dataset(read_checkins(args.raw), args.min_user, args.max_user,
                        args.min_poi_users, iterative=not args.single_pass)
    ds = split_train_test(ds, args.split)
    ds.meta["slots"] = args.slots
    save_dataset(ds, args.out)
    s = ds.summary()
    print(f"users={s['users']} pois={s['pois']} checkins={s['checkins']} density={s['density']:.6f}")


def cmd_synth(args):
    from .ingest import serialize_checkins
    from .synthetic import generate_checkins
    checkins, _ = generate_checkins(args.seed, n_users=args.users, per_cluster=args.per_cluster)
    atomic_write_bytes(args.out, serialize_checkins(checkins).encode("utf-8"))
    print(f"checkins={len(checkins)}")


def cmd_train(args):
    config, run = _run_config(args)
    dataset = load_dataset(run["dataset"])
    workdir = run["workdir"]
    os.makedirs(workdir, exist_ok=True)
    ckpt = os.path.join(workdir, CHECKPOINT_NAME)
    if args.resume:
        trainer = Trainer.from_checkpoint(dataset, _require_file(args.resume, "checkpoint"))
        if args.epochs is not None:
            trainer.config = trainer.model.config = replace(trainer.config, epochs=args.epochs)
    else:
        trainer = Trainer(dataset, config)

    def after_epoch(tr, record):
        print(f"epoch {record['epoch']} loss={record['loss']:.6f} ce/sample={record['ce_per_sample']:.6f}")
        tr.save(ckpt)

    trainer.fit(log_path=os.path.join(workdir, LOG_NAME), on_epoch=after_epoch)
    trainer.save(ckpt)
    print(f"checkpoint {ckpt} (epoch {trainer.epoch})")


def cmd_evaluate(args):
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.dataset, "dataset file")
    model, meta = load_model(args.checkpoint)
    dataset = load_dataset(args.dataset)
    report = evaluate_model(model, dataset)
    run_id = args.run_id or meta["config"].get("ablation", "full")
    out_dir = args.workdir or os.path.dirname(os.path.abspath(args.checkpoint))
    atomic_write_bytes(os.path.join(out_dir, f"report-{run_id}.txt"), report.to_text().encode("utf-8"))
    write_report(os.path.join(out_dir, REPORTS_NAME), run_id, report)
    sys.stdout.write(report.to_text())


def _graph_model(path, view):
    model, meta = load_model(_require_file(path, "checkpoint"))
    if not model.uses_graph:
        raise CliError(f"checkpoint {path} was trained without graphs")
    if view not in model.view_ids:
        raise CliError(f"view {view!r} not in checkpoint (has {', '.join(model.view_ids)})")
    if view not in model.prototypes:
        model.estep()
    return model


def cmd_export_graph(args):
    model = _graph_model(args.checkpoint, args.view)
    g = model.graph(args.view)
    A = {"poi": g.a_poi.data, "hier": g.a_hier, "proto": g.a_proto.data}[args.which]
    text = edge_list_text(A)
    if args.out:
        atomic_write_bytes(args.out, text.encode("utf-8"))
    else:
        sys.stdout.write(text)


def cmd_inspect_clusters(args):
    model = _graph_model(args.checkpoint, args.view)
    protos = model.prototypes[args.view]
    lines = ["cluster\tsize\tmembers\n"]
    for k in range(protos.K):
        members = np.flatnonzero(protos.assignments == k)
        lines.append(f"{k}\t{members.size}\t{','.join(map(str, members))}\n")
    sys.stdout.write("".join(lines))


def cmd_export_embeddings(args):
    model, meta = load_model(_require_file(args.checkpoint, "checkpoint"))
    if not model.uses_graph:
        raise CliError(f"checkpoint {args.checkpoint} was trained without graphs")
    if not model.prototypes:
        model.estep()
    _, _, info = model.representations(need_losses=False)
    header = {"kind": "fused", "views": ",".join(model.view_ids), "epoch": meta["epoch"]}
    text = matrix_text(info["fusion"].fused.data, header)
    if args.out:
        atomic_write_bytes(args.out, text.encode("utf-8"))
    else:
        sys.stdout.write(text)


def cmd_ablate(args):
    config, run = _run_config(args)
    dataset = load_dataset(run["dataset"])
    variants = args.variants.split(",") if args.variants else ABLATIONS
    rows = run_ablations(dataset, config, variants,
                         log=lambda name, rep: print(f"{name}: Acc@5={rep.acc_at[5]:.4f}", flush=True))
    os.makedirs(run["workdir"], exist_ok=True)
    for name, rep in rows.items():
        write_report(os.path.join(run["workdir"], REPORTS_NAME), name, rep)
    sys.stdout.write(ablation_table(rows))


# --- parser ---------------------------------------------------------------------

def _config_flags(p):
    p.add_argument("--config", help="YAML file with a flat mapping of settings")
    p.add_argument("--profile", choices=sorted(PROFILES), default="paper")
    p.add_argument("--seed", type=int)
    p.add_argument("--ablation", choices=ABLATIONS + ("backbone",))
    p.add_argument("--estep", choices=("epoch", "batch"))
    p.add_argument("--dataset", help="preprocessed dataset file")
    p.add_argument("--workdir", help="output directory")


def build_parser():
    parser = _Parser(prog="bigsl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="filter and split a raw check-in file")
    p.add_argument("raw")
    p.add_argument("out")
    p.add_argument("--min-user", type=int, default=20)
    p.add_argument("--max-user", type=int, default=50)
    p.add_argument("--min-poi-users", type=int, default=10)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--slots", type=int, default=56)
    p.add_argument("--single-pass", action="store_true", help="apply the filters once, not to a fixpoint")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="write a planted-structure raw check-in file")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=300)
    p.add_argument("--per-cluster", type=int, default=40)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _config_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", help=f"{CHECKPOINT_FORMAT} file to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--workdir")
    p.add_argument("--run-id")
    p.add_argument("--seed", type=int, help="accepted for symmetry; evaluation is deterministic")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-graph", help="write one adjacency as a sorted edge list")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--view", default="spatial")
    p.add_argument("--which", choices=("poi", "hier", "proto"), default="poi")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_graph)

    p = sub.add_parser("inspect-clusters", help="per-prototype membership summary")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--view", default="spatial")
    p.set_defaults(func=cmd_inspect_clusters)

    p = sub.add_parser("export-embeddings", help="write fused POI representations as a matrix file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("ablate", help="train and evaluate every ablation variant")
    _config_flags(p)
    p.add_argument("--variants", help="comma-separated subset of " + ",".join(ABLATIONS))
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (BigslError, OSError, ValueError, KeyError, yaml.YAMLError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"bigsl: error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
