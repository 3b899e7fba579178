"""Command-line entry point: ``molr <command> ...``.

Exit codes: 0 ok, 1 invariant failure, 2 data error, 3 config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .checks import run_all
from .datagen import TEMPLATES, corpus_hash, generate_corpus
from .downstream import ged_exact, ged_probe, property_probe
from .encoders import GNN_KINDS, READOUTS, EncoderConfig, encode_molecules, encode_side
from .errors import ConfigError, DataError, MolrError, ParseError
from .evaluator import build_candidate_pool, evaluate_ranking, multi_choice
from .smiles import parse_molecule, parse_reaction
from .trainer import TrainConfig, load_checkpoint, margin_for_dim, save_checkpoint, train

log = logging.getLogger("molr")

EXIT_OK, EXIT_INVARIANT, EXIT_DATA, EXIT_CONFIG = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _margin(text: str) -> float | str:
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"margin must be a number or 'auto', got {text!r}") from None


def _snapshot(args: argparse.Namespace) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}


def _model_meta(ckpt, args) -> dict:
    return {
        "model_hash": ckpt.model_hash,
        "encoder": ckpt.encoder.to_json(),
        "train": ckpt.train_config.to_json() if ckpt.train_config else None,
        "command": _snapshot(args),
    }


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _parse_smiles_at(text: str, path, lineno: int):
    try:
        return parse_molecule(text)
    except ParseError as err:
        raise DataError(str(err), path, lineno) from err


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    margin = margin_for_dim(args.dim) if args.margin == "auto" else args.margin
    encoder = EncoderConfig.uniform(args.gnn, args.layers, args.dim, heads=args.heads, tag_l=args.tag_l,
                                    readout=args.readout)
    config = TrainConfig(margin=margin, batch_size=args.batch, epochs=args.epochs, learning_rate=args.lr,
                         seed=args.seed, encoder=encoder)
    data = io.read_reactions_tsv(args.data)
    val = io.read_reactions_tsv(args.val) if args.val else None
    ckpt, history = train(data, config, validation=val)
    out = save_checkpoint(ckpt, args.out)
    log_path = out / "train_log.csv"
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "val_mrr"])
        for rec in history:
            w.writerow([rec.epoch, io.fmt_float(rec.mean_loss),
                        "" if rec.val_mrr is None else io.fmt_float(rec.val_mrr)])
    io.write_sidecar(log_path, _model_meta(ckpt, args))
    print(f"saved {out} (model_hash {ckpt.model_hash[:12]})")
    return EXIT_OK


def cmd_embed(args) -> int:
    ckpt = load_checkpoint(args.model)
    lines = io.read_lines(args.input)
    graphs, errors = [], []
    for text in lines:
        try:
            graphs.append(parse_molecule(text))
            errors.append("")
        except ParseError as err:
            graphs.append(None)
            errors.append(f"{type(err).__name__}: {err}")
    n_bad = sum(1 for e in errors if e)
    if lines and n_bad > len(lines) / 2:
        raise DataError(f"{n_bad} of {len(lines)} lines failed to parse", args.input)
    ok = [g for g in graphs if g is not None]
    emb = encode_molecules(ok, ckpt.vocab, ckpt.encoder, ckpt.weights) if ok else np.zeros((0, ckpt.encoder.out_dim))
    dim = ckpt.encoder.out_dim
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"dim_{k}" for k in range(dim)] + ["error"])
        it = iter(emb)
        for lineno, (g, err) in enumerate(zip(graphs, errors), start=1):
            values = [io.fmt_float(v) for v in next(it)] if g is not None else [""] * dim
            w.writerow([lineno] + values + [err])
    io.write_sidecar(out, _model_meta(ckpt, args))
    print(f"wrote {len(lines)} rows ({n_bad} failed) to {out}")
    return EXIT_OK


def cmd_rank(args) -> int:
    ckpt = load_checkpoint(args.model)
    reactions = io.read_reactions_tsv(args.data)
    if not reactions:
        raise DataError("no reactions to rank", args.data)
    report = evaluate_ranking(reactions, ckpt.vocab, ckpt.encoder, ckpt.weights)
    out = Path(args.out)
    _write_json(out / "rank_report.json", {**report.to_json(), "pool_size": len(build_candidate_pool(reactions)[0]),
                                           **_model_meta(ckpt, args)})
    ranks_path = out / "ranks.csv"
    with open(ranks_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "rank"])
        for r, rank in zip(reactions, report.ranks):
            w.writerow([r.id, rank])
    io.write_sidecar(ranks_path, _model_meta(ckpt, args))
    print(json.dumps({k: v for k, v in report.to_json().items() if k != "ranks"}, sort_keys=True))
    return EXIT_OK


def read_questions(path) -> list[tuple[str, tuple, list, int]]:
    """Question TSV: ``id<TAB>reactants<TAB>choices<TAB>answer`` (header optional).

    ``choices`` is dot-separated SMILES, one molecule per choice; ``answer``
    is the 0-based index of the correct choice.
    """
    questions = []
    for lineno, line in enumerate(io.read_lines(path), start=1):
        if not line.strip() or (lineno == 1 and line.split("\t")[0] == "id"):
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise DataError(f"expected 4 tab-separated columns, got {len(cols)}", path, lineno)
        qid, react, choices, answer = cols
        try:
            reaction = parse_reaction(f"{qid}\t{react}\t{choices.split('.')[0]}")
            options = [parse_molecule(s) for s in choices.split(".")]
            truth = int(answer)
        except (ParseError, ValueError) as err:
            raise DataError(str(err), path, lineno) from err
        if len(options) < 2 or not 0 <= truth < len(options):
            raise DataError("need at least two choices and an answer index among them", path, lineno)
        questions.append((qid, reaction.reactants, options, truth))
    return questions


def cmd_choice(args) -> int:
    ckpt = load_checkpoint(args.model)
    questions = read_questions(args.data)
    if not questions:
        raise DataError("no questions", args.data)
    results = []
    for qid, reactants, options, truth in questions:
        h = encode_side(reactants, ckpt.vocab, ckpt.encoder, ckpt.weights)
        emb = encode_molecules(options, ckpt.vocab, ckpt.encoder, ckpt.weights)
        pick, correct = multi_choice(h, emb, truth)
        results.append({"id": qid, "selected": pick, "answer": truth, "correct": correct})
    accuracy = sum(r["correct"] for r in results) / len(results)
    payload = {"accuracy": accuracy, "questions": results, **_model_meta(ckpt, args)}
    if args.out:
        _write_json(Path(args.out), payload)
    print(f"accuracy {accuracy:.4f} on {len(results)} questions")
    return EXIT_OK


def cmd_probe_prop(args) -> int:
    ckpt = load_checkpoint(args.model)
    rows = io.read_csv_rows(args.data, ("smiles", "label"))
    graphs, labels = [], []
    for lineno, row in enumerate(rows, start=2):
        graphs.append(_parse_smiles_at(row["smiles"], args.data, lineno))
        try:
            labels.append(int(float(row["label"])))
        except ValueError as err:
            raise DataError(f"bad label {row['label']!r}", args.data, lineno) from err
    emb = encode_molecules(graphs, ckpt.vocab, ckpt.encoder, ckpt.weights)
    report = property_probe(emb, labels, repetitions=args.repetitions, seed=args.seed)
    payload = {**report.to_json(), **_model_meta(ckpt, args)}
    if args.out:
        _write_json(Path(args.out), payload)
    print(f"auc {report.value:.4f} +- {report.std:.4f} over {len(report.values)} splits")
    return EXIT_OK


def cmd_probe_ged(args) -> int:
    ckpt = load_checkpoint(args.model)
    rows = io.read_csv_rows(args.data, ("smiles_a", "smiles_b", "ged"))
    a, b, y = [], [], []
    for lineno, row in enumerate(rows, start=2):
        a.append(_parse_smiles_at(row["smiles_a"], args.data, lineno))
        b.append(_parse_smiles_at(row["smiles_b"], args.data, lineno))
        try:
            y.append(float(row["ged"]))
        except ValueError as err:
            raise DataError(f"bad ged {row['ged']!r}", args.data, lineno) from err
    if len(y) < 3:
        raise DataError("need at least three pairs for a train/test split", args.data)
    ea = encode_molecules(a, ckpt.vocab, ckpt.encoder, ckpt.weights)
    eb = encode_molecules(b, ckpt.vocab, ckpt.encoder, ckpt.weights)
    reports = {mode: ged_probe(ea, eb, y, mode, args.seed).to_json() for mode in ("concat", "subtract")}
    if args.out:
        _write_json(Path(args.out), {**reports, **_model_meta(ckpt, args)})
    for mode, rep in reports.items():
        print(f"{mode}: rmse {rep['value']:.4f}")
    return EXIT_OK


def cmd_ged_exact(args) -> int:
    texts = [t for t in io.read_lines(args.input)]
    mols = []
    for lineno, text in enumerate(texts, start=1):
        if text.strip():
            mols.append((text, _parse_smiles_at(text, args.input, lineno)))
    small = [(t, g) for t, g in mols if g.n_atoms <= args.max_nodes]
    pairs = [(i, j) for i in range(len(small)) for j in range(i + 1, len(small))]
    if args.pairs and args.pairs < len(pairs):
        chosen = np.random.default_rng(args.seed).choice(len(pairs), size=args.pairs, replace=False)
        pairs = [pairs[k] for k in sorted(chosen)]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["smiles_a", "smiles_b", "ged"])
        for i, j in pairs:
            w.writerow([small[i][0], small[j][0], ged_exact(small[i][1], small[j][1], args.max_nodes)])
    io.write_sidecar(out, {"command": _snapshot(args), "skipped_over_limit": len(mols) - len(small)})
    print(f"wrote {len(pairs)} pairs to {out} ({len(mols) - len(small)} molecules over the node limit)")
    return EXIT_OK


def cmd_gen(args) -> int:
    unknown = set(args.templates) - set(TEMPLATES)
    if unknown:
        raise ConfigError(f"unknown template(s) {sorted(unknown)}; choose from {TEMPLATES}")
    instances = generate_corpus(args.n, args.seed, args.templates, args.distance, args.max_substituent,
                                unique_products=args.unique)
    reactions = [inst.reaction for inst in instances]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_reactions_tsv(reactions, out)
    io.write_sidecar(out, {"command": _snapshot(args), "corpus_hash": corpus_hash(reactions),
                           "templates": [inst.template for inst in instances],
                           "centers": [sorted(inst.center) for inst in instances]})
    print(f"wrote {len(reactions)} reactions to {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    results = run_all(args.gnn, seed=args.seed, quick=args.quick)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_INVARIANT if failed else EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="molr", description="Reaction-aware molecule embeddings.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an encoder on a reaction TSV")
    t.add_argument("--data", required=True)
    t.add_argument("--val")
    t.add_argument("--gnn", choices=GNN_KINDS, default="gcn")
    t.add_argument("--layers", type=int, default=2)
    t.add_argument("--dim", type=int, default=1024)
    t.add_argument("--heads", type=int, default=16)
    t.add_argument("--tag-l", type=int, default=2)
    t.add_argument("--margin", type=_margin, default=4.0, help="a number, or 'auto' to scale 4.0 by sqrt(dim/1024)")
    t.add_argument("--batch", type=int, default=4096)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--readout", choices=READOUTS, default="sum")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="embed one SMILES per line into a CSV")
    e.add_argument("model")
    e.add_argument("--in", dest="input", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_embed)

    r = sub.add_parser("rank", help="rank test products against all test products")
    r.add_argument("model")
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rank)

    c = sub.add_parser("choice", help="multiple-choice product selection")
    c.add_argument("model")
    c.add_argument("--data", required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_choice)

    pp = sub.add_parser("probe-prop", help="logistic probe AUC from a smiles,label CSV")
    pp.add_argument("model")
    pp.add_argument("--data", required=True)
    pp.add_argument("--repetitions", type=int, default=20)
    pp.add_argument("--seed", type=int, default=0)
    pp.add_argument("--out")
    pp.set_defaults(func=cmd_probe_prop)

    pg = sub.add_parser("probe-ged", help="ridge probe RMSE from a smiles_a,smiles_b,ged CSV")
    pg.add_argument("model")
    pg.add_argument("--data", required=True)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--out")
    pg.set_defaults(func=cmd_probe_ged)

    g = sub.add_parser("ged-exact", help="exact GED for molecule pairs")
    g.add_argument("--in", dest="input", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--max-nodes", type=int, default=8)
    g.add_argument("--pairs", type=int, default=0, help="sample this many pairs (0 = all)")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_ged_exact)

    gn = sub.add_parser("gen", help="write a synthetic template reaction corpus")
    gn.add_argument("--n", type=int, default=200)
    gn.add_argument("--seed", type=int, default=0)
    gn.add_argument("--templates", nargs="+", default=list(TEMPLATES))
    gn.add_argument("--distance", type=int, default=2)
    gn.add_argument("--max-substituent", type=int, default=6)
    gn.add_argument("--unique", action="store_true", help="no two reactions share a product")
    gn.add_argument("--out", required=True)
    gn.set_defaults(func=cmd_gen)

    ck = sub.add_parser("check", help="run the invariant suites on random weights")
    ck.add_argument("--gnn", nargs="+", choices=GNN_KINDS, default=list(GNN_KINDS))
    ck.add_argument("--seed", type=int, default=0)
    ck.add_argument("--quick", action="store_true")
    ck.set_defaults(func=cmd_check)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except MolrError as err:
        print(f"data error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
