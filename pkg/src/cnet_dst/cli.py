"""Command line interface: ``cnet-dst <command> ...``.

Every command prints single-line JSON records on stdout carrying a
``schema`` field.  Exit codes: 0 success, 1 usage or configuration error,
2 data error, 3 numeric or training error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import encoder
from . import numerics as nx
from .cnet import (
    DEFAULT_INTERJECTIONS, coverage_stats, cnet_size_summary, load_interjections, one_best_cnet,
    parse_cnet_blocks, prune_cnet, serialize_cnet,
)
from .corpus import (
    SPLITS, SYNTHETIC_PRESETS, SynthConfig, Vocabulary, generate_synthetic, import_dstc2, load_corpus,
    synthetic_split, write_corpus,
)
from .errors import CheckpointError, CnetDstError, ConfigError, CorpusError, GradCheckError, StructureError, TrainingError
from .estimator import CnetTracker, EnsembleTracker, head_groups
from .model import GROUP_EPOCHS, DstModel, ModelConfig, model_grad_check, random_check_dialog, relu_margin
from .ontology import Ontology

SCHEMA_VERSION = 1
GRADCHECK_TOLERANCE = 1e-4

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("cnet_dst")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; usage errors are 1 here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def emit(command: str, /, **fields) -> None:
    record = {"schema": f"cnet-dst/{command}/{SCHEMA_VERSION}"}
    record.update(fields)
    print(json.dumps(record, sort_keys=True, separators=(",", ":")), flush=True)


def _threads() -> int:
    raw = os.environ.get("CNET_DST_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CNET_DST_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("CNET_DST_THREADS must be >= 1")
    return n


def _interjections(args) -> frozenset:
    path = getattr(args, "interjections", None)
    return DEFAULT_INTERJECTIONS if path is None else load_interjections(path)


def _ontology(args) -> Ontology:
    if args.ontology is not None:
        return Ontology.load(args.ontology)
    return Ontology.load("synthetic" if getattr(args, "synthetic", None) else "dstc2")


def _dialogs(args, split: str, ontology: Ontology):
    if args.synthetic:
        return synthetic_split(args.synthetic, split, ontology)
    if args.corpus is None:
        raise ConfigError("give --corpus DIR or --synthetic NAME")
    return load_corpus(args.corpus, split, ontology)


def _add_corpus_args(p, default_split: str):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--corpus", type=Path, help="corpus root holding <split>/<dialog>/ directories")
    src.add_argument("--synthetic", choices=sorted(SYNTHETIC_PRESETS), help="use a generated corpus")
    p.add_argument("--split", choices=SPLITS, default=default_split)
    p.add_argument("--ontology", help="'dstc2', 'synthetic' or a JSON file")


def _add_prune_args(p):
    p.add_argument("--prune-threshold", type=float, default=0.001)
    p.add_argument("--interjections", type=Path, help="file with one interjection per line")


def _threshold(value: float) -> float:
    if not 0.0 <= value < 1.0:
        raise ConfigError(f"--prune-threshold must lie in [0, 1), got {value}")
    return value


# --------------------------------------------------------------------------
# stats / prune / gen-synth / import-dstc2


def cmd_stats(args) -> int:
    ontology = _ontology(args)
    dialogs = _dialogs(args, args.split, ontology)
    threshold = _threshold(args.prune_threshold)
    interj = _interjections(args)
    turns = [t for d in dialogs for t in d.turns]
    sv_vocab = ontology.slot_value_words()
    views = {
        "1best": [one_best_cnet(t.cnet) for t in turns],
        "cnet": [t.cnet for t in turns],
        "pruned": [prune_cnet(t.cnet, interj, threshold) for t in turns],
    }
    for view, cnets in views.items():
        report = coverage_stats([(t.transcript, c) for t, c in zip(turns, cnets)], sv_vocab)
        emit("stats", view=view, split=args.split, **report.as_dict())
    return EXIT_OK


def cmd_prune(args) -> int:
    threshold = _threshold(args.prune_threshold)
    text = Path(args.input).read_text(encoding="utf-8")
    cnets = parse_cnet_blocks(text)
    pruned = [prune_cnet(c, _interjections(args), threshold, args.renormalize) for c in cnets]
    out = "\n".join(serialize_cnet(c) for c in pruned)
    if args.output is None:
        sys.stdout.write(out)
    else:
        Path(args.output).write_text(out, encoding="utf-8")
    before, after = cnet_size_summary(cnets), cnet_size_summary([c for c in pruned if len(c)] or cnets)
    emit("prune", utterances=len(cnets), avg_timesteps_before=before[0], avg_k_before=before[1],
         avg_timesteps_after=after[0], avg_k_after=after[1],
         emptied=sum(1 for c in pruned if not len(c)))
    return EXIT_OK


def cmd_gen_synth(args) -> int:
    ontology = Ontology.load(args.ontology or "synthetic")
    cfg = SynthConfig(n_dialogs=args.dialogs, turns=args.turns, seed=args.seed, p_swap=args.p_swap,
                      p_confuse=args.p_confuse, p_interj=args.p_interj, p_drop=args.p_drop,
                      id_prefix=args.split)
    for name in ("p_swap", "p_confuse", "p_interj", "p_drop"):
        if not 0.0 <= getattr(cfg, name) <= 1.0:
            raise ConfigError(f"--{name.replace('_', '-')} must lie in [0, 1]")
    if args.dialogs < 1 or args.turns < 1:
        raise ConfigError("--dialogs and --turns must be >= 1")
    dialogs = generate_synthetic(cfg, ontology)
    try:
        root = write_corpus(dialogs, args.out, args.split)
    except OSError as exc:
        raise CorpusError(f"cannot write corpus: {exc}") from None
    emit("gen-synth", path=str(root), dialogs=len(dialogs), turns=sum(len(d.turns) for d in dialogs),
         seed=args.seed)
    return EXIT_OK


def cmd_import_dstc2(args) -> int:
    ontology = Ontology.load(args.ontology or "dstc2")
    dialogs = import_dstc2(args.data_root, args.flist, ontology, asr=args.asr)
    root = write_corpus(dialogs, args.out, args.split)
    emit("import-dstc2", path=str(root), dialogs=len(dialogs), turns=sum(len(d.turns) for d in dialogs))
    return EXIT_OK


# --------------------------------------------------------------------------
# train / eval


def _group_epochs(args, groups: Sequence[str]) -> dict[str, int]:
    if args.epochs is not None:
        epochs = {g: args.epochs for g in groups}
    else:
        epochs = {g: GROUP_EPOCHS.get(g, 50) for g in groups}
    for item in args.group_epochs or ():
        name, _, value = item.partition("=")
        if name not in epochs or not value.isdigit():
            raise ConfigError(f"--group-epochs expects GROUP=N with GROUP in {sorted(epochs)}, got {item!r}")
        epochs[name] = int(value)
    return epochs


def _tracker_params(args, ontology: Ontology, epochs: dict[str, int], seed: int) -> dict:
    return dict(
        ontology=ontology, input_source=args.input, pooling=args.pool,
        renormalize_pooling=args.renormalize_pooling, prune_threshold=_threshold(args.prune_threshold),
        interjections=None if args.interjections is None else sorted(load_interjections(args.interjections)),
        embed_dim=args.embed_dim, dense_units=args.dense_units, gru_units=args.gru_units,
        combine_dim=args.combine_dim, dropout=args.dropout, l2=args.l2, lr=args.lr,
        batch_dialogs=args.batch_dialogs, epochs=epochs, head_groups=args.head_groups,
        min_count=args.min_count, embeddings_path=args.embeddings, random_state=seed,
    )


def _train_one(params: dict, dialogs, out_dir: Path) -> tuple[int, dict[str, list[float]]]:
    tracker = CnetTracker(**params).fit(dialogs)
    tracker.save(out_dir / f"seed{params['random_state']}")
    return params["random_state"], tracker.loss_curves_


def cmd_train(args) -> int:
    ontology = _ontology(args)
    if not args.seeds:
        raise ConfigError("--seeds needs at least one seed")
    dialogs = _dialogs(args, args.split, ontology)
    groups = list(head_groups(ontology, args.head_groups))
    epochs = _group_epochs(args, groups)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [_tracker_params(args, ontology, epochs, s) for s in args.seeds]
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, jobs, [dialogs] * len(jobs), [out] * len(jobs)))
    else:
        results = [_train_one(p, dialogs, out) for p in jobs]
    lines = ["epoch,head_group,seed,loss"]
    for seed, curves in results:
        for group, curve in curves.items():
            lines.extend(f"{e},{group},{seed},{loss!r}" for e, loss in enumerate(curve, 1))
        final = {g: (c[-1] if c else None) for g, c in curves.items()}
        emit("train", seed=seed, epochs=epochs, final_loss=final, path=str(out / f"seed{seed}"))
    (out / "loss.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def _seed_dirs(model_dir: Path, seeds: Optional[Sequence[int]]) -> list[tuple[int, Path]]:
    if seeds:
        found = [(s, model_dir / f"seed{s}") for s in seeds]
    else:
        found = sorted((int(p.name[4:]), p) for p in model_dir.glob("seed*") if p.name[4:].isdigit())
    if not found:
        raise CheckpointError("seed", f"no seed directories under {model_dir}")
    for s, path in found:
        if not (path / "tracker.json").is_file():
            raise CheckpointError("seed", f"missing checkpoints for seed {s} in {path}")
    return found


def cmd_eval(args) -> int:
    trackers = [(s, CnetTracker.load(p)) for s, p in _seed_dirs(Path(args.model), args.seeds)]
    ontology = trackers[0][1].ontology_
    dialogs = _dialogs(args, args.split, ontology)
    source = args.input or trackers[0][1].input_source
    scores = []
    for s, tracker in trackers:
        m = tracker.evaluate(dialogs, source=source)
        scores.append(m)
        emit("eval", kind="seed", seed=s, source=source, **m)
    summary = {}
    for key in ("joint_goals", "joint_requests"):
        vals = [m[key] for m in scores]
        summary[key] = {"avg": float(np.mean(vals)), "min": min(vals), "max": max(vals)}
    emit("eval", kind="summary", seeds=[s for s, _ in trackers], source=source, **summary)
    if args.ensemble:
        m = EnsembleTracker([t for _, t in trackers]).evaluate(dialogs, source=source)
        emit("eval", kind="ensemble", seeds=[s for s, _ in trackers], source=source, **m)
    return EXIT_OK


# --------------------------------------------------------------------------
# gradcheck

_CHECK_WORDS = ("i", "want", "thai", "food", "cheap", "north", "inform", "area", "the", "a", "uh", "!null")


# Required distance of ReLU inputs from 0, in finite-difference steps.  A bias
# step moves a ReLU input by exactly one step; weight and embedding steps move
# it by one step times an entry of magnitude below 1.
KINK_MARGIN = 1.0


def gradcheck_report(seed: int, config: ModelConfig, ontology: Ontology, step: float = 1e-4) -> nx.GradCheckResult:
    """Full-model gradient check on a random 2-turn dialog whose cnets have k <= 3.

    Dialogs that put a dense-layer input within ``KINK_MARGIN`` steps of the
    ReLU kink are redrawn: there the loss has no derivative to check.
    """
    rng = nx.make_rng(seed, 7)
    vocab = Vocabulary(("<pad>", "<unk>", "!null") + tuple(w for w in _CHECK_WORDS if w != "!null"))
    model = DstModel(vocab, ontology, config, seed=seed)
    for _ in range(1000):
        turns, gold = random_check_dialog(rng, list(_CHECK_WORDS), ontology)
        if relu_margin(model, turns) > KINK_MARGIN * step:
            return model_grad_check(model, turns, gold, step)
    raise GradCheckError("could not draw a dialog away from the ReLU kink")


def cmd_gradcheck(args) -> int:
    config = ModelConfig(embed_dim=args.embed_dim, dense_units=args.dense_units, gru_units=args.gru_units,
                         combine_dim=args.combine_dim, pooling=args.pool)
    previous = encoder._BACKWARD_FAULT
    if args.corrupt_backward:
        encoder._BACKWARD_FAULT = 1.5
    try:
        res = gradcheck_report(args.seed, config, Ontology.load(args.ontology or "synthetic"))
    finally:
        encoder._BACKWARD_FAULT = previous
    bad = sorted(g for g, err in res.rel_error.items() if not err < GRADCHECK_TOLERANCE)
    for group, err in res.rel_error.items():
        emit("gradcheck", group=group, max_rel_error=err, max_abs_error=res.abs_error[group],
             resolved_rel_error=res.resolved_rel_error[group], ok=err < GRADCHECK_TOLERANCE)
    emit("gradcheck", kind="summary", seed=args.seed, loss=res.loss, max_rel_error=res.max_rel_error,
         max_resolved_rel_error=max(res.resolved_rel_error.values()), noise_floor=res.noise_floor,
         tolerance=GRADCHECK_TOLERANCE, failed=bad)
    if bad:
        print(f"gradient check failed for: {', '.join(bad)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# --------------------------------------------------------------------------


def _add_model_args(p):
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--dense-units", type=int, default=64)
    p.add_argument("--gru-units", type=int, default=32)
    p.add_argument("--combine-dim", type=int, default=16)
    p.add_argument("--pool", choices=("average", "weighted"), default="weighted")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cnet-dst", description="Confusion-network dialog state tracking.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", help="word coverage and size of 1-best, full and pruned cnets")
    _add_corpus_args(p, "dev")
    _add_prune_args(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("prune", help="prune a file of cnet blocks")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--renormalize", action="store_true")
    _add_prune_args(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("gen-synth", help="write a synthetic corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", choices=SPLITS, default="train")
    p.add_argument("--dialogs", type=int, default=20)
    p.add_argument("--turns", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p-swap", type=float, default=0.3)
    p.add_argument("--p-confuse", type=float, default=0.2)
    p.add_argument("--p-interj", type=float, default=0.1)
    p.add_argument("--p-drop", type=float, default=0.0)
    p.add_argument("--ontology")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("import-dstc2", help="convert DSTC2 JSON logs into the corpus layout")
    p.add_argument("--data-root", type=Path, required=True)
    p.add_argument("--flist", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", choices=SPLITS, required=True)
    p.add_argument("--asr", choices=("batch", "live"), default="batch")
    p.add_argument("--ontology")
    p.set_defaults(func=cmd_import_dstc2)

    p = sub.add_parser("train", help="train one tracker per seed")
    _add_corpus_args(p, "train")
    _add_prune_args(p)
    _add_model_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=list(range(1, 11)))
    p.add_argument("--epochs", type=int, help="epochs for every head group (default: per-group schedule)")
    p.add_argument("--group-epochs", nargs="+", metavar="GROUP=N", help="per-group epoch overrides")
    p.add_argument("--head-groups", choices=("separate", "joint"), default="separate")
    p.add_argument("--input", choices=("cnet", "1best", "transcript"), default="cnet",
                   help="user input used next to the transcripts for training")
    p.add_argument("--renormalize-pooling", action="store_true")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-dialogs", type=int, default=10)
    p.add_argument("--l2", type=float, default=0.001)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--embeddings", type=Path, help="word2vec-style text file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="joint goals / requests accuracy per seed, summary and ensemble")
    _add_corpus_args(p, "test")
    p.add_argument("--model", type=Path, required=True, help="directory written by 'train'")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--input", choices=("cnet", "1best", "transcript"))
    p.add_argument("--ensemble", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model gradient")
    _add_model_args(p)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--ontology")
    p.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, GradCheckError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (StructureError, CorpusError, CheckpointError, CnetDstError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
