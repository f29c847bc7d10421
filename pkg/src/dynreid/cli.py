"""``dynreid`` command line: gen-data, train, eval, gradcheck, export-distances.

Exit codes: 0 success, 1 usage or config error, 2 runtime error,
3 gradient check failure.
"""

import argparse
import logging
import os
import sys

from .config import TrainConfig, parse_branches
from .errors import ConfigInvalid, DynReidError, SpecInvalid

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3

log = logging.getLogger("dynreid")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


FLAG_HELP = {
    "out": "output path (file for gen-data/export-distances, directory for train/eval)",
    "dataset": "DYRD dataset; default renders the synthetic set from the config",
    "checkpoint": "DYCK checkpoint written by train",
    "branches": "comma-separated subset of global,self,mutual",
}


def build_parser():
    p = _Parser(prog="dynreid", description="Synthetic re-identification: data, training, evaluation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *flags):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        for f in flags:
            sp.add_argument(f"--{f}", help=FLAG_HELP[f])
        return sp

    common(sub.add_parser("gen-data", help="render a synthetic DYRD dataset"), "out")
    common(sub.add_parser("train", help="train and write checkpoint + log"), "out", "dataset", "branches")
    common(sub.add_parser("eval", help="per-branch and fused mAP/CMC"), "out", "dataset", "checkpoint", "branches")
    g = common(sub.add_parser("gradcheck", help="finite-difference check of every primitive and branch"))
    g.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    g.add_argument("--only", help="comma-separated check names")
    common(sub.add_parser("export-distances", help="query x gallery distance CSV"),
           "out", "dataset", "checkpoint", "branches")
    return p


def _config(args):
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "dataset", None):
        cfg.dataset = args.dataset
    if getattr(args, "branches", None):
        cfg.branches = parse_branches(args.branches)
    return cfg


def _require(args, *names):
    missing = [n for n in names if not getattr(args, n, None)]
    if missing:
        raise UsageError("missing required flag(s): " + ", ".join("--" + n for n in missing))


def cmd_gen_data(args):
    from .data import generate_dataset, write_dataset

    _require(args, "out")
    cfg = _config(args)
    if args.seed is not None:
        cfg.data_seed = args.seed
    samples = generate_dataset(cfg.synth_spec())
    write_dataset(args.out, samples)
    print(f"samples={len(samples)} identities={len({s.id for s in samples})} path={args.out}")
    return EXIT_OK


def cmd_train(args):
    from .checkpoint import save_checkpoint
    from .train import history_csv, load_samples, train

    _require(args, "out")
    cfg = _config(args).validate()
    samples = load_samples(cfg)
    os.makedirs(args.out, exist_ok=True)
    model, opt, history = train(cfg, samples)
    ckpt = os.path.join(args.out, "checkpoint.dyck")
    save_checkpoint(ckpt, model, opt, epoch=cfg.epochs)
    with open(os.path.join(args.out, "train_log.csv"), "w", encoding="utf-8") as fh:
        fh.write(history_csv(history))
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    print(f"checkpoint={ckpt} epochs={len(history)} final_loss={history[-1]['total']:.6f}")
    return EXIT_OK


def _loaded(args):
    from .checkpoint import load_checkpoint
    from .data import read_dataset, generate_dataset

    _require(args, "checkpoint")
    model, _, _ = load_checkpoint(args.checkpoint)
    if args.dataset:
        samples = read_dataset(args.dataset)
    elif model.cfg.dataset:
        samples = read_dataset(model.cfg.dataset)
    else:
        samples = generate_dataset(model.cfg.synth_spec())
    branches = parse_branches(args.branches) if args.branches else model.branches
    if not branches:
        raise ConfigInvalid("at least one branch must be selected")
    return model, samples, branches


def cmd_eval(args):
    from .evaluate import evaluate_model, report_text

    model, samples, branches = _loaded(args)
    reports = evaluate_model(model, samples, branches)
    text = report_text(reports)
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)
        for name, rep in reports.items():
            with open(os.path.join(args.out, f"cmc_{name}.csv"), "w", encoding="utf-8") as fh:
                fh.write(rep.cmc_csv())
    return EXIT_OK


def cmd_export_distances(args):
    from .evaluate import export_csv, export_rows

    _require(args, "out")
    model, samples, branches = _loaded(args)
    rows = export_rows(model, samples, branches)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(export_csv(rows))
    print(f"rows={len(rows)} path={args.out}")
    return EXIT_OK


def cmd_gradcheck(args):
    from . import gradsuite

    names = args.only.split(",") if args.only else list(gradsuite.CHECKS)
    unknown = set(names) - set(gradsuite.CHECKS)
    if unknown:
        raise UsageError(f"unknown check(s): {sorted(unknown)}")
    start = args.seed or 0
    seeds = range(start, start + max(1, args.seeds))
    failed = 0
    for name in names:
        results = [gradsuite.run_check(name, s) for s in seeds]
        worst = max(r.max_rel_error for r in results)
        bad = [r.seed for r in results if not r.passed]
        skipped = sum(r.kinks_skipped for r in results)
        status = "PASS" if not bad else "FAIL"
        print(f"{status} {name} max_rel_error={worst:.3e} kinks_skipped={skipped}"
              + (f" failing_seeds={bad}" if bad else ""))
        failed += bool(bad)
    prims = gradsuite.primitive_names()
    covered = sum(1 for p in prims if p in gradsuite.CHECKS)
    print(f"primitives={len(prims)} covered={covered} checks={len(names)} failed={failed}")
    return EXIT_GRADCHECK if failed else EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "export-distances": cmd_export_distances,
}


def main(argv=None):
    logging.basicConfig(level=os.environ.get("DYNREID_LOG", "WARNING"), format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigInvalid, SpecInvalid) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DynReidError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
