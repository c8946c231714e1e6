"""Command-line entry point: ``seqembed <subcommand> [flags]``.

Every subcommand accepts ``--config FILE`` with ``key=value`` lines whose keys
are the subcommand's long flag names; explicit flags override the file. The
resolved configuration is echoed to stderr as ``# key=value`` lines.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric/model error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .codec import LabeledDataset, load_dataset, read_fasta, write_dataset, write_fasta
from .datagen import GenSpec, generate_families, split
from .errors import (
    CheckpointError,
    CodecError,
    ConfigError,
    DatasetError,
    GenerationError,
    IngestionError,
    PreconditionError,
    ProtocolError,
    SequenceLengthError,
)
from .index import (
    DEFAULT_NS,
    build_db,
    classification_report,
    export_embeddings,
    knn_query,
    load_embeddings,
    noise_sweep,
    recall_from_ranks,
    repeated_recall,
    sweep_tsv,
)
from .model import build, load_checkpoint, preset, save_checkpoint
from .noise import NoiseSpec
from .train import EncodingCache, TrainConfig, fit

log = logging.getLogger("seqembed")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3
DATA_ERRORS = (IngestionError, CodecError, SequenceLengthError, DatasetError, GenerationError,
               ProtocolError, PreconditionError, OSError)
MODEL_ERRORS = (CheckpointError, ConfigError, FloatingPointError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _floats(s: str) -> list[float]:
    return [float(x) for x in str(s).split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in str(s).split(",") if x.strip()]


# --------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    p = _Parser(prog="seqembed", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="key=value file of defaults for this subcommand")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=0, help="cap BLAS threads (0 = no cap)")
        return sp

    g = add("gen-data", "generate synthetic gene families (FASTA + labels + manifest)")
    g.add_argument("--families", type=int, default=10)
    g.add_argument("--per-family", type=int, default=100)
    g.add_argument("--out-prefix", default="data")
    g.add_argument("--test-fraction", type=float, default=0.2)
    g.add_argument("--first-family-id", type=int, default=0)
    g.add_argument("--library-seed", type=int, default=None)
    g.add_argument("--motif-library-size", type=int, default=GenSpec.motif_library_size)
    g.add_argument("--within-rate", type=float, default=GenSpec.within_family_substitution_rate)
    g.add_argument("--motif-rate", type=float, default=GenSpec.motif_substitution_rate)
    g.add_argument("--length-min", type=int, default=GenSpec.length_range[0])
    g.add_argument("--length-max", type=int, default=GenSpec.length_range[1])
    g.add_argument("--length-jitter", type=float, default=GenSpec.length_jitter)

    t = add("train", "train the classifier; writes a checkpoint and a TSV log")
    _data_args(t)
    t.add_argument("--preset", default="desk", choices=["desk", "paper"])
    t.add_argument("--embedding-dim", type=int, default=None)
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--eval-every", type=int, default=250)
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--log", default=None, help="TSV training log path")

    e = add("eval-class", "classification report, length analysis and optional noise sweep")
    _data_args(e)
    _ckpt(e)
    e.add_argument("--split", default="test", choices=["test", "train", "all"])
    e.add_argument("--out-prefix", default="eval")
    e.add_argument("--length-bins", type=int, default=10)
    e.add_argument("--noise", default=None, choices=["substitution", "deletion"])
    e.add_argument("--p-list", type=_floats, default="0,0.05,0.1,0.2,0.4")
    e.add_argument("--codon-aligned", type=_bool, default="true")

    m = add("embed", "embed a FASTA file and write an embedding TSV")
    _ckpt(m)
    m.add_argument("--fasta", required=True)
    m.add_argument("--labels", default=None)
    m.add_argument("--out", required=True)

    q = add("query", "k nearest database entries for each query sequence")
    _ckpt(q)
    q.add_argument("--embeddings", required=True)
    q.add_argument("--fasta", required=True, help="query sequences")
    q.add_argument("--k", type=int, default=10)
    q.add_argument("--out", default="-")

    r = add("eval-recall", "recall-at-N on one random pair per class")
    _data_args(r)
    _ckpt(r)
    r.add_argument("--split", default="all", choices=["test", "train", "all"])
    r.add_argument("--ns", type=_ints, default=",".join(map(str, DEFAULT_NS)))
    r.add_argument("--repetitions", type=int, default=1)
    r.add_argument("--out", default="-")

    n = add("perturb", "apply substitution or deletion noise to a FASTA file")
    n.add_argument("--fasta", required=True)
    n.add_argument("--out", required=True)
    n.add_argument("--kind", required=True, choices=["substitution", "deletion"])
    n.add_argument("--p", type=float, required=True)
    n.add_argument("--codon-aligned", type=_bool, default="true")

    x = add("export", "export embeddings of a labeled dataset for external projection")
    _data_args(x)
    _ckpt(x)
    x.add_argument("--split", default="all", choices=["test", "train", "all"])
    x.add_argument("--per-class", type=int, default=0, help="subsample per class (0 = all)")
    x.add_argument("--out", required=True)
    return p


def _data_args(sp):
    sp.add_argument("--fasta", required=True)
    sp.add_argument("--labels", required=True)


def _ckpt(sp):
    sp.add_argument("--checkpoint", required=True)


# --------------------------------------------------------------------------
# config handling


def read_run_config(path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, _, v = line.partition("=")
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse(argv):
    argv = list(argv)
    parser = build_parser()
    cfg_path = _config_path(argv)
    command = next((t for t in argv if not t.startswith("-")), None)
    if cfg_path and command in COMMANDS:
        sp = _subparser(parser, command)
        known = {a.dest for a in sp._actions if a.dest not in ("help", "config")}
        try:
            cfg = read_run_config(cfg_path)
        except OSError as e:
            raise UsageError(f"cannot read config: {e}") from e
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"{cfg_path}: unknown key(s) {', '.join(unknown)}")
        for a in sp._actions:
            if a.dest in cfg:
                a.required = False
        sp.set_defaults(**cfg)
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("missing subcommand; see --help")
    return args


def echo_config(args):
    for k, v in sorted(vars(args).items()):
        if isinstance(v, list):
            v = ",".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)
        print(f"# {k}={v}", file=sys.stderr)


# --------------------------------------------------------------------------
# subcommands


def _records(ds: LabeledDataset, which: str):
    if which == "all" or ds.split is None:
        return ds.records
    return ds.subset(which)


def cmd_gen_data(args):
    spec = GenSpec(
        num_families=args.families, sequences_per_family=args.per_family,
        length_range=(args.length_min, args.length_max),
        within_family_substitution_rate=args.within_rate, motif_substitution_rate=args.motif_rate,
        length_jitter=args.length_jitter, motif_library_size=args.motif_library_size,
        library_seed=args.library_seed, seed=args.seed, first_family_id=args.first_family_id)
    ds, _ = generate_families(spec)
    if args.test_fraction > 0:
        ds = split(ds, args.test_fraction, rngmod.stream(args.seed, rngmod.SPLIT))
    prefix = args.out_prefix
    write_dataset(ds, f"{prefix}.fasta", f"{prefix}.labels.tsv")
    Path(f"{prefix}.manifest").write_text(
        spec.manifest() + f"test_fraction={args.test_fraction}\n", encoding="utf-8")
    log.info("wrote %d records in %d families to %s.*", len(ds), ds.num_classes, prefix)
    return EXIT_OK


def cmd_train(args):
    ds = load_dataset(args.fasta, args.labels)
    over = {"num_classes": ds.num_classes, "seed": args.seed}
    if args.embedding_dim:
        over["embedding_dim"] = args.embedding_dim
    net = build(preset(args.preset, **over))
    cfg = TrainConfig(batch_size=args.batch_size, steps=args.steps, lr=args.lr, seed=args.seed,
                      eval_every=args.eval_every, checkpoint_path=args.checkpoint,
                      log_path=args.log)
    out = fit(net, ds, cfg)
    save_checkpoint(net, args.checkpoint)
    last = out.entries[-1] if len(out) else None
    if last is not None:
        log.info("final step %d loss %.4f test_acc %s", last.step, last.loss, last.test_acc)
    return EXIT_OK


def cmd_eval_class(args):
    net = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.fasta, args.labels)
    recs = _records(ds, args.split)
    rep = classification_report(net, recs, ds.labels, args.length_bins)
    p = args.out_prefix
    Path(f"{p}.summary.tsv").write_text(rep.summary_tsv(), encoding="utf-8")
    Path(f"{p}.confusion.tsv").write_text(rep.confusion_tsv(), encoding="utf-8")
    Path(f"{p}.length.tsv").write_text(rep.length_tsv(), encoding="utf-8")
    Path(f"{p}.deviation.tsv").write_text(rep.deviation_tsv(), encoding="utf-8")
    if args.noise:
        rows = noise_sweep(net, recs, args.noise, args.p_list, args.seed, args.codon_aligned)
        kind = args.noise if args.noise == "substitution" else (
            "deletion_aligned" if args.codon_aligned else "deletion_unaligned")
        Path(f"{p}.noise.tsv").write_text(sweep_tsv(rows, kind), encoding="utf-8")
    print(f"accuracy\t{rep.accuracy:.6f}")
    return EXIT_OK


def _label_map(path):
    if path is None:
        return {}
    from .codec import read_labels

    return read_labels(path)[0]


def _as_records(seqs, labels):
    from .codec import LabeledRecord

    return [LabeledRecord(s, labels.get(s.id, "."), 0) for s in seqs]


def cmd_embed(args):
    net = load_checkpoint(args.checkpoint)
    recs = _as_records(read_fasta(args.fasta), _label_map(args.labels))
    db = build_db(net, recs)
    for sid, msg in db.skipped.items():
        log.warning("skipped %s: %s", sid, msg)
    export_embeddings(db, args.out)
    return EXIT_OK


def cmd_query(args):
    db = load_embeddings(args.embeddings)
    if not 1 <= args.k <= len(db):
        raise PreconditionError(f"k={args.k} but database {args.embeddings} has {len(db)} entries")
    net = load_checkpoint(args.checkpoint)
    if net.config.embedding_dim != db.dim:
        raise ConfigError(f"checkpoint embeds to {net.config.embedding_dim} dims, "
                          f"database has {db.dim}")
    queries = build_db(net, _as_records(read_fasta(args.fasta), {}))
    for sid, msg in queries.skipped.items():
        raise PreconditionError(f"query {sid}: {msg}")
    lines = ["query_id\trank\tid\tlabel\tdistance"]
    for qid, vec in zip(queries.ids, queries.vectors):
        for rank, nb in enumerate(knn_query(db, vec, args.k), 1):
            lines.append(f"{qid}\t{rank}\t{nb.id}\t{nb.label}\t{nb.distance:.9g}")
    _write_out(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_eval_recall(args):
    net = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.fasta, args.labels)
    recs = _records(ds, args.split)
    reps = repeated_recall(net, recs, args.repetitions, args.seed, args.ns)
    ranks = [r for rep in reps for r in rep.ranks]
    merged = recall_from_ranks(ranks, args.ns)
    merged.num_pairs = reps[0].num_pairs
    text = merged.tsv()
    if args.repetitions > 1:
        text += "\nrepetition\t" + "\t".join(f"recall@{n}" for n in args.ns) + "\n"
        for i, rep in enumerate(reps):
            text += f"{i}\t" + "\t".join(f"{rep.recall[n]:.6f}" for n in args.ns) + "\n"
    _write_out(args.out, text)
    return EXIT_OK


def cmd_perturb(args):
    spec = NoiseSpec(args.kind, args.p, args.codon_aligned, args.seed)
    rng = rngmod.stream(args.seed, rngmod.NOISE)
    seqs = [spec.apply(s, rng) for s in read_fasta(args.fasta)]
    write_fasta(args.out, seqs)
    Path(f"{args.out}.manifest").write_text(
        f"kind={spec.kind}\np={spec.p}\ncodon_aligned={spec.codon_aligned}\nseed={spec.seed}\n"
        f"input={args.fasta}\nrecords={len(seqs)}\n", encoding="utf-8")
    return EXIT_OK


def cmd_export(args):
    net = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.fasta, args.labels)
    recs = _records(ds, args.split)
    if args.per_class:
        g = rngmod.stream(args.seed, rngmod.PAIRS, 0xE)
        keep = []
        for lab in ds.labels:
            members = [r for r in recs if r.class_label == lab]
            n = min(args.per_class, len(members))
            idx = sorted(g.choice(len(members), n, replace=False)) if n else []
            keep.extend(members[int(i)] for i in idx)
        recs = keep
    db = build_db(net, recs, cache=EncodingCache(net.config.max_len))
    export_embeddings(db, args.out)
    return EXIT_OK


def _write_out(dest, text):
    if dest in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(dest).write_text(text, encoding="utf-8")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval-class": cmd_eval_class,
    "embed": cmd_embed,
    "query": cmd_query,
    "eval-recall": cmd_eval_recall,
    "perturb": cmd_perturb,
    "export": cmd_export,
}


def _limit_threads(n):
    if n and n > 0:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=n)
    return nullcontext()


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args = parse(sys.argv[1:] if argv is None else argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    echo_config(args)
    try:
        with _limit_threads(args.threads), np.errstate(over="raise", invalid="raise"):
            return COMMANDS[args.command](args)
    except MODEL_ERRORS as e:
        print(f"model error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except DATA_ERRORS as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
