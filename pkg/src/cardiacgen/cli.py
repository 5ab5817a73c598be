"""Command-line entry points, one subcommand per pipeline stage.

    cardiacgen synth-corpus --out corpus.bin [--config spec.json] [--seed N]
    cardiacgen preprocess   --corpus in.bin --out out.bin [--import-csv DIR]
    cardiacgen train        --module hrv|morph --config cfg.json --corpus c.bin --out DIR
    cardiacgen generate     --hrv DIR/hrv.cgen --morph DIR/morph.cgen --corpus c.bin --out synth.bin
    cardiacgen evaluate     --task emotion|identity|hrv-features --dataset train|synth|aug ...
    cardiacgen export       --corpus c.bin --out DIR
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, evaluation, synthesis, training
from .errors import BadConfig, CardiacGenError, EmptySplit, UnknownCommand
from .provenance import csv_header, provenance

log = logging.getLogger("cardiacgen")

COMMANDS = ("synth-corpus", "preprocess", "train", "generate", "evaluate", "export")


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise BadConfig(f"cannot read config {path}: {exc}") from exc


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_synth_corpus(args) -> int:
    cfg = _load_json(args.config)
    spec = dict(cfg.get("spec", cfg))
    if args.subjects is not None:
        spec["n_subjects"] = args.subjects
    if args.minutes is not None:
        spec["minutes_per_subject"] = args.minutes
    try:
        spec = data.ToySpec(**spec)
    except TypeError as exc:
        raise BadConfig(f"bad toy corpus spec: {exc}") from exc
    corpus, truth = data.synth_toy_corpus(spec, seed=args.seed)
    corpus.provenance = provenance(corpus.provenance, args.seed, stage="synth-corpus",
                                   source="toy", spec=corpus.provenance["spec"])
    data.write_corpus(corpus, args.out)
    if args.truth:
        Path(args.truth).write_text(json.dumps(
            {"provenance": corpus.provenance,
             "peaks": {str(r.subject): t.tolist() for r, t in zip(corpus.records, truth)}}))
    print(f"wrote {len(corpus.records)} subjects to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _load_json(args.config)
    if args.import_csv:
        files = sorted(Path(args.import_csv).glob("*.csv"))
        records = [data.read_subject_csv(f, i) for i, f in enumerate(files) if f.name != "windows.csv"]
        if not records:
            raise EmptySplit(f"no subject CSV files in {args.import_csv}")
        corpus = data.Corpus(records, provenance={"source": "csv", "dir": str(args.import_csv)})
    elif args.corpus:
        corpus = data.read_corpus(args.corpus)
    else:
        raise BadConfig("preprocess needs --corpus or --import-csv")
    corpus.ensure_peaks()
    bsize = int(cfg.get("bsize", data.BSIZE))
    drop = cfg.get("drop")
    data.build_splits(corpus, bsize=bsize, seed=args.seed, drop=drop)
    corpus.provenance = provenance({"bsize": bsize, "drop": drop, "upstream": corpus.provenance},
                                   args.seed, stage="preprocess", upstream=corpus.provenance)
    data.write_corpus(corpus, args.out)
    for rec in corpus.records:
        counts = np.bincount(corpus.tags[rec.subject], minlength=5)
        print(f"subject {rec.subject}: {len(rec.peaks)} peaks, train {counts[1]} val {counts[2]} "
              f"test {counts[3]} dropped {counts[4]}")
    return 0


def cmd_train(args) -> int:
    cfg_dict = _load_json(args.config)
    if args.module:
        cfg_dict["module"] = args.module
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if args.epochs is not None:
        cfg_dict["epochs"] = args.epochs
    cfg = training.TrainConfig.from_dict(cfg_dict)
    corpus = data.read_corpus(args.corpus)
    views = data.hrv_windows if cfg.module == "hrv" else data.morph_windows
    train_set, val_set = views(corpus, "train"), views(corpus, "val")
    out = _out_dir(args.out)
    gap = int(round(corpus.win / corpus.step))
    res = training.train(cfg.module, train_set, val_set, cfg, gap=gap,
                         log_path=out / f"{cfg.module}_metrics.csv",
                         progress=lambda row: print(f"epoch {row['epoch']}: val_neg_critic_loss "
                                                    f"{row['val_neg_critic_loss']:.5f}"))
    training.save_checkpoint(res.best, out / f"{cfg.module}.cgen")
    if args.save_all:
        for ck in res.checkpoints:
            training.save_checkpoint(ck, out / f"{cfg.module}_epoch{ck.epoch:03d}.cgen")
    (out / f"{cfg.module}_config.json").write_text(json.dumps(
        {**cfg.to_dict(), "provenance": res.best.provenance}, indent=1, sort_keys=True))
    print(f"selected epoch {res.best.epoch} (val_neg_critic_loss {res.best.val_neg_critic_loss:.5f})")
    return 0


def cmd_generate(args) -> int:
    hrv = training.load_checkpoint(args.hrv)
    morph = training.load_checkpoint(args.morph)
    corpus = data.read_corpus(args.corpus)
    if args.manifest:
        manifest = synthesis.read_manifest(args.manifest)
    else:
        manifest = synthesis.default_manifest(corpus, seed=args.seed)
    sampler = synthesis.Sampler(hrv, morph)
    synth, report = synthesis.generate_corpus(sampler, corpus, manifest)
    data.write_corpus(synth, args.out)
    for line in report.lines:
        print(line, file=sys.stderr)
    print(f"generated {report.windows_total - report.windows_excluded} of {report.windows_total} "
          f"windows ({report.windows_excluded} excluded) -> {args.out}")
    return 0


def _eval_hrv_features(args, real: data.Corpus, out: Path) -> int:
    if not args.synth:
        raise BadConfig("--task hrv-features needs --synth")
    synth = data.read_corpus(args.synth)
    a, b = evaluation.corpus_rmssd(real), evaluation.corpus_rmssd(synth)
    summary = evaluation.histogram_distance(a, b)
    prov = provenance({"task": "hrv-features"}, args.seed, real=str(args.corpus), synth=str(args.synth))
    with open(out / "rmssd_hist.csv", "w") as fh:
        fh.write(csv_header(prov))
        fh.write("bin_low_ms,bin_high_ms,count_real,count_synth\n")
        e = summary["edges"]
        for i, (ca, cb) in enumerate(zip(summary["hist_a"], summary["hist_b"])):
            fh.write(f"{e[i]:.4f},{e[i + 1]:.4f},{ca},{cb}\n")
    (out / "rmssd_summary.json").write_text(json.dumps(
        {"total_variation": summary["total_variation"], "wasserstein_1_ms": summary["wasserstein_1"],
         "n_real": int(a.size), "n_synth": int(b.size), "provenance": prov}, indent=1, sort_keys=True))
    print(f"RMSSD total variation {summary['total_variation']:.4f}, "
          f"W1 {summary['wasserstein_1']:.3f} ms")
    return 0


def cmd_evaluate(args) -> int:
    real = data.read_corpus(args.corpus)
    out = _out_dir(args.out)
    if args.task == "hrv-features":
        return _eval_hrv_features(args, real, out)
    cfg_dict = _load_json(args.config)
    cfg_dict.setdefault("seed", args.seed)
    try:
        cfg = evaluation.ClassifierConfig(task=args.task, **cfg_dict)
    except (TypeError, ValueError) as exc:
        raise BadConfig(f"bad classifier config: {exc}") from exc
    train_set = evaluation.classifier_dataset(real, "train", cfg)
    val_set = evaluation.classifier_dataset(real, "val", cfg)
    test_set = evaluation.classifier_dataset(real, "test", cfg)
    if args.dataset in ("synth", "aug"):
        if not args.synth:
            raise BadConfig(f"--dataset {args.dataset} needs --synth")
        synth_set = evaluation.classifier_dataset(data.read_corpus(args.synth), None, cfg)
        if args.dataset == "synth":
            fit_set = synth_set
        else:
            fit_set = evaluation.augment(train_set, synth_set, np.random.default_rng(args.seed))
    else:
        fit_set = train_set
    classes = np.unique(np.concatenate([train_set.y, test_set.y]))
    clf = evaluation.train_classifier(cfg, fit_set, val_set, classes=classes)
    k = min(args.bins, int(np.isfinite(test_set.hr).sum()))
    rep = evaluation.error_by_bin(clf, test_set, k=k)
    prov = provenance(cfg.__dict__, args.seed, task=args.task, dataset=args.dataset)
    stem = f"{args.task}_{args.dataset}"
    evaluation.write_bin_csv(rep, out / f"{stem}_bins.csv", prov)
    evaluation.write_summary_json(rep, out / f"{stem}_summary.json", dataset=args.dataset,
                                  task=args.task, seed=args.seed, prov=prov)
    with open(out / f"{stem}_log.csv", "w") as fh:
        fh.write(csv_header(prov))
        fh.write("epoch,train_loss,val_error\n")
        for row in clf.log:
            fh.write(f"{row['epoch']},{row['train_loss']!r},{row.get('val_error', float('nan'))!r}\n")
    print(f"{args.task}/{args.dataset}: test error {rep.overall:.2f}% over {len(test_set)} windows")
    return 0


def cmd_export(args) -> int:
    corpus = data.read_corpus(args.corpus)
    prov = provenance(corpus.provenance, corpus.provenance.get("seed"), stage="export",
                      source_file=str(args.corpus))
    written = data.export_corpus_csv(corpus, args.out, header=csv_header(prov))
    print(f"wrote {len(written)} CSV files to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cardiacgen", description="Conditional ECG synthesis pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    s = sub.add_parser("synth-corpus", help="write a toy ECG corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--subjects", type=int)
    s.add_argument("--minutes", type=float)
    s.add_argument("--truth", help="optional JSON file for the planted R-peak times")
    s.set_defaults(func=cmd_synth_corpus)

    s = sub.add_parser("preprocess", help="detect R-peaks and assign train/val/test splits")
    s.add_argument("--corpus")
    s.add_argument("--import-csv", help="directory of per-subject time,ecg,emo_label CSV files")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train the HRV or Morph module")
    s.add_argument("--module", choices=training.MODULES)
    s.add_argument("--config")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--save-all", action="store_true", help="also write every epoch's checkpoint")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="synthesise ECG from trained checkpoints")
    s.add_argument("--hrv", required=True)
    s.add_argument("--morph", required=True)
    s.add_argument("--corpus", required=True, help="real corpus supplying avg-HRV conditions")
    s.add_argument("--manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="classifier utility or HRV feature realism")
    s.add_argument("--task", choices=("emotion", "identity", "hrv-features"), required=True)
    s.add_argument("--dataset", choices=("train", "synth", "aug"), default="train")
    s.add_argument("--corpus", required=True)
    s.add_argument("--synth")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--bins", type=int, default=10)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("export", help="export a corpus as CSV")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)
    return p


def dispatch(argv=None) -> int:
    """Run one subcommand; returns the process exit status."""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:          # argparse: usage errors exit with 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command is None:
            raise UnknownCommand(f"no command given; choose one of {', '.join(COMMANDS)}")
        return args.func(args)
    except UnknownCommand as exc:
        parser.print_usage(sys.stderr)
        print(f"cardiacgen: error: {exc}", file=sys.stderr)
        return 2
    except CardiacGenError as exc:
        print(f"cardiacgen: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"cardiacgen: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
