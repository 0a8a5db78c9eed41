"""Command-line entry point: ``mpnp-ddi <command> ...``.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, atomic_write, load_checkpoint, restore_model, \
    save_checkpoint
from .chem import SmilesError, featurize_smiles
from .config import ConfigValidationError, RunConfig
from .data import DatasetError, load_dataset, load_drugs
from .encoder import ConfigError
from .gradcheck import run_suite
from .interpret import atom_attribution, atom_similarity_matrix, attribution_table, \
    final_node_states
from .metrics import MetricError, evaluate_predictions
from .objective import TrainingError, fit, predict
from .splits import SplitError, inductive_split, sample_negatives, transductive_split

log = logging.getLogger("mpnp_ddi")

VALIDATION_ERRORS = (ConfigValidationError, ConfigError, DatasetError, SplitError,
                     CheckpointError, SmilesError, MetricError, FileNotFoundError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _write_pairs(path, pairs):
    lines = ["drug_id_1\tdrug_id_2\trelation_id\tlabel"]
    lines += ["\t".join(str(v) for v in p) for p in pairs]
    atomic_write(path, "\n".join(lines) + "\n")


def _with_negatives(bundle, ratio, seed):
    """Add corrupted negatives when the pair table holds positives only."""
    if ratio <= 0 or any(p[3] == 0 for p in bundle.pairs):
        return list(bundle.pairs)
    negatives = sample_negatives(bundle.pairs, list(bundle.drugs), ratio, seed)
    return list(bundle.pairs) + negatives


def _make_split(pairs, mode, seed, ratios, drug_ratio, train_fraction):
    if mode == "transductive":
        return transductive_split(pairs, ratios, seed)
    return inductive_split(pairs, drug_ratio, seed, train_fraction)


def _report(model, bundle, pairs, threshold):
    examples = bundle.examples(pairs)
    mu, s = predict(model, examples)
    return evaluate_predictions(mu, s, [p[3] for p in pairs], threshold)


# -- commands --------------------------------------------------------------
def cmd_train(args):
    run = RunConfig.load(args.config)
    if args.seed is not None:
        run.train = replace(run.train, seed=args.seed)
    seed = run.train.seed
    bundle = load_dataset(run.drugs_path, run.pairs_path)
    pairs = _with_negatives(bundle, run.negative_ratio, seed)
    split = _make_split(pairs, run.split_mode, seed, run.split_ratios,
                        run.inductive_drug_ratio, run.inductive_train_fraction)
    if not split.train:
        raise SplitError("training split is empty")
    out = Path(run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        _write_pairs(out / f"{name}_pairs.tsv", getattr(split, name))
    for line in split.constraint_log:
        log.info(line)

    fd, tmp_log = tempfile.mkstemp(dir=out, prefix=".loss_log.", suffix=".tmp")
    os.close(fd)
    try:
        result = fit(bundle.examples(split.train), run.train, num_relations=bundle.num_relations,
                     log_path=tmp_log)
        os.replace(tmp_log, out / "loss_log.tsv")
    finally:
        if os.path.exists(tmp_log):
            os.unlink(tmp_log)
    save_checkpoint(out / "model.ckpt", result.model, result.optimizer, result.rng)
    print(f"checkpoint={out / 'model.ckpt'}")
    print(f"loss_log={out / 'loss_log.tsv'}")
    if split.test and len({p[3] for p in split.test}) == 2:
        report = _report(result.model, bundle, split.test, run.threshold)
        atomic_write(out / "test_report.txt", report.to_text())
        print(f"test_auroc={report.auroc!r}")
    elif split.test:
        log.warning("test split holds a single class; no test report written")
    return 0


def cmd_eval(args):
    model = restore_model(load_checkpoint(args.checkpoint))
    bundle = load_dataset(args.drugs, args.pairs)
    report = _report(model, bundle, bundle.pairs, args.threshold)
    text = report.to_text()
    if args.output:
        atomic_write(args.output, text)
    sys.stdout.write(text)
    return 0


def cmd_predict(args):
    model = restore_model(load_checkpoint(args.checkpoint))
    g_i, g_j = featurize_smiles(args.smiles_i), featurize_smiles(args.smiles_j)
    if args.max_over_relations:
        args.relation = int(np.argmax(model.relation_scores([g_i], [g_j])[0]))
        print(f"relation={args.relation}")
    if not 0 <= args.relation < model.num_relations:
        raise ConfigValidationError(
            f"relation {args.relation} outside [0, {model.num_relations})")
    out = model.forward([g_i], [g_j], [args.relation], training=False).prediction(0)
    print(f"probability={out.probability!r}")
    print(f"variance={out.variance!r}")
    print("alpha_i=" + ",".join(repr(float(a)) for a in out.alpha_i))
    print("alpha_j=" + ",".join(repr(float(a)) for a in out.alpha_j))
    return 0


def cmd_split(args):
    bundle = load_dataset(args.drugs, args.pairs)
    pairs = _with_negatives(bundle, args.negative_ratio, args.seed)
    split = _make_split(pairs, args.mode, args.seed, tuple(args.ratios), args.drug_ratio,
                        args.train_fraction)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        _write_pairs(out / f"{name}_pairs.tsv", getattr(split, name))
        print(f"{name}={len(getattr(split, name))}")
    if split.mode == "inductive":
        atomic_write(out / "train_drugs.txt", "\n".join(sorted(split.train_drugs)) + "\n")
        atomic_write(out / "constraint_log.txt", "\n".join(split.constraint_log) + "\n")
        print(f"discarded={split.discarded}")
    return 0


def cmd_gradcheck(args):
    results = run_suite(seed=args.seed or 0, step=args.step, tolerance=args.tolerance)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name} max_rel_error={r.report.max_rel_error:.3e}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_interpret(args):
    model = restore_model(load_checkpoint(args.checkpoint))
    _, drugs, _ = load_drugs(args.drugs)
    for d in (args.drug_i, args.drug_j):
        if d not in drugs:
            raise DatasetError(f"unknown drug id {d!r}")
    g_i, g_j = drugs[args.drug_i], drugs[args.drug_j]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    attr_i, attr_j = atom_attribution(model, g_i, g_j, args.relation, radius=args.radius)
    for drug, graph, attr in ((args.drug_i, g_i, attr_i), (args.drug_j, g_j, attr_j)):
        sim = atom_similarity_matrix(final_node_states(model, graph))
        atomic_write(out / f"{drug}_similarity.tsv", sim.to_table())
        atomic_write(out / f"{drug}_attribution.tsv", attribution_table(attr))
        flag = " uniform_fallback" if attr.uniform_fallback else ""
        print(f"{drug}: top_atom={attr.top_atom} neighborhood="
              f"{','.join(map(str, attr.neighborhood))}{flag}")
    return 0


# -- parser ----------------------------------------------------------------
def build_parser():
    p = _Parser(prog="mpnp-ddi", description="Drug-drug interaction prediction")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a JSON run config")
    t.add_argument("config")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a pairs table")
    e.add_argument("checkpoint")
    e.add_argument("--drugs", required=True)
    e.add_argument("--pairs", required=True)
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--output")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="predict one drug pair from SMILES")
    pr.add_argument("checkpoint")
    pr.add_argument("smiles_i")
    pr.add_argument("smiles_j")
    pr.add_argument("--relation", type=int, default=0)
    pr.add_argument("--max-over-relations", action="store_true",
                    help="score the relation with the highest logit instead of --relation")
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("split", help="write train/valid/test pair tables")
    s.add_argument("--drugs", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--mode", choices=("transductive", "inductive"), default="transductive")
    s.add_argument("--ratios", type=float, nargs=3, default=(0.8, 0.1, 0.1))
    s.add_argument("--drug-ratio", type=float, default=0.8)
    s.add_argument("--train-fraction", type=float, default=1.0)
    s.add_argument("--negative-ratio", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_split)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--step", type=float, default=1e-5)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("interpret", help="atom similarity and attribution tables")
    i.add_argument("checkpoint")
    i.add_argument("drug_i")
    i.add_argument("drug_j")
    i.add_argument("--drugs", required=True)
    i.add_argument("--relation", type=int, default=0)
    i.add_argument("--radius", type=int, default=1)
    i.add_argument("--out-dir", required=True)
    i.set_defaults(func=cmd_interpret)
    return p


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, ValueError, RuntimeError, OSError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
