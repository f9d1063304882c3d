"""Command-line entry point.

Subcommands: pretrain, adapt, eval, report, synth, tsne, confusion.
Every command writes its artifacts plus a manifest (input hashes, config,
package version) under the output directory, so a run can be reproduced
exactly. Exit codes: 0 success, 1 missing/unreadable input, 2 malformed
file or config, 3 numerical divergence; stderr carries one
machine-parsable ``reason: detail`` line on failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .data import (
    SyntheticShiftSpec,
    apply_shift,
    load_dataset,
    preprocess,
    resolve_dataset,
    save_dataset,
)
from .errors import DimensionError, FormatError, NumericsError, ValidationError
from .models import load_checkpoint, save_checkpoint
from .pipeline import (
    SourceModel,
    adapt_target,
    encode_features,
    evaluate,
    pretrain_source,
    run_protocol,
    subsample,
)
from .viz import (
    Embedding,
    TsneConfig,
    confusion,
    emit_confusion_svg,
    emit_csv,
    emit_embedding_svg,
    tsne_embed,
)


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


class Job:
    """Resolved configuration plus output bookkeeping for one command."""

    def __init__(self, args):
        self.cfg: RunConfig = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            self.cfg = dataclasses.replace(self.cfg, seed=args.seed)
        if args.out is not None:
            self.cfg = dataclasses.replace(self.cfg, output_dir=args.out)
        data_dir = self.cfg.data_dir or os.environ.get("ADDA_DATA_DIR") or "."
        self.cfg = dataclasses.replace(self.cfg, data_dir=data_dir)
        self.out = Path(self.cfg.output_dir)
        self.inputs: dict[str, str] = {}
        if args.config:
            self.track_input(args.config)

    def track_input(self, path) -> None:
        self.inputs[str(path)] = _sha256_file(path)

    def track_dataset(self, name: str) -> None:
        base = Path(self.cfg.data_dir)
        for stem in (f"{name}-train", f"{name}-test", name):
            for kind in ("images", "labels"):
                p = base / f"{stem}-{kind}.idx"
                if p.is_file():
                    self.track_input(p)

    def load_ckpt(self, path, arch: str):
        self.track_input(path)
        model, meta = load_checkpoint(Path(path).read_bytes(), expected_arch=arch)
        return model, meta

    def finish(self, command: str, extra: dict | None = None) -> int:
        manifest = {
            "command": command,
            "config": {"sha256": self.cfg.sha256(), "values": self.cfg.to_dict()},
            "inputs": self.inputs,
            "version": __version__,
        }
        if extra:
            manifest.update(extra)
        self.out.mkdir(parents=True, exist_ok=True)
        _write_json(self.out / "manifest.json", manifest)
        return 0


def _resolved(job: Job, name: str):
    job.track_dataset(name)
    train, test = resolve_dataset(job.cfg.data_dir, name, seed=job.cfg.seed)
    return train, test


def cmd_pretrain(args) -> int:
    job = Job(args)
    train, test = _resolved(job, args.dataset)
    train = subsample(train, job.cfg.caps.train, job.cfg.seed)
    test = subsample(test, job.cfg.caps.eval, job.cfg.seed)
    x, y = preprocess(train)
    tx, ty = preprocess(test)
    model = pretrain_source(
        x, y,
        epochs=job.cfg.pretrain.epochs, lr=job.cfg.pretrain.lr,
        batch_size=job.cfg.batch_size, seed=job.cfg.seed, test_x=tx, test_y=ty,
    )
    job.out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": job.cfg.seed, "epoch": job.cfg.pretrain.epochs, "dataset": args.dataset}
    (job.out / "encoder.ckpt").write_bytes(save_checkpoint(model.encoder, meta))
    (job.out / "classifier.ckpt").write_bytes(save_checkpoint(model.classifier, meta))
    _write_json(job.out / "pretrain_metrics.json", {
        "dataset": args.dataset,
        "seed": job.cfg.seed,
        "train_loss": model.train_loss,
        "test_acc": model.test_acc,
        "final_test_acc": model.test_acc[-1] if model.test_acc else None,
    })
    if model.test_acc:
        print(f"accuracy {model.test_acc[-1]:.4f}")
    return job.finish("pretrain")


def cmd_adapt(args) -> int:
    job = Job(args)
    enc, _ = job.load_ckpt(Path(args.source_model) / "encoder.ckpt", "encoder")
    cls, _ = job.load_ckpt(Path(args.source_model) / "classifier.ckpt", "classifier")
    enc.freeze()
    cls.freeze()
    source = SourceModel(enc, cls)
    src_train, _ = _resolved(job, args.source)
    tgt_train, tgt_test = _resolved(job, args.target)
    src_train = subsample(src_train, job.cfg.caps.train, job.cfg.seed)
    tgt_train = subsample(tgt_train, job.cfg.caps.train, job.cfg.seed + 1)
    sx, _ = preprocess(src_train)
    tx, _ = preprocess(tgt_train)
    target_enc, history = adapt_target(
        source, sx, tx,
        epochs=job.cfg.adapt.epochs, lr=job.cfg.adapt.lr,
        batch_size=job.cfg.batch_size, seed=job.cfg.seed,
    )
    job.out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": job.cfg.seed, "epoch": job.cfg.adapt.epochs,
            "dataset": f"{args.source}->{args.target}"}
    (job.out / "target_encoder.ckpt").write_bytes(save_checkpoint(target_enc, meta))
    ex, ey = preprocess(subsample(tgt_test, job.cfg.caps.eval, job.cfg.seed))
    acc, _ = evaluate(target_enc, cls, ex, ey)
    _write_json(job.out / "adapt_metrics.json", {
        "source": args.source,
        "target": args.target,
        "seed": job.cfg.seed,
        "d_loss": history["d_loss"],
        "m_loss": history["m_loss"],
        "adda_target_acc": acc,
    })
    print(f"accuracy {acc:.4f}")
    return job.finish("adapt")


def cmd_eval(args) -> int:
    job = Job(args)
    enc, _ = job.load_ckpt(args.encoder, "encoder")
    cls, _ = job.load_ckpt(args.classifier, "classifier")
    _, test = _resolved(job, args.dataset)
    test = subsample(test, job.cfg.caps.eval, job.cfg.seed)
    x, y = preprocess(test)
    acc, preds = evaluate(enc, cls, x, y)
    job.out.mkdir(parents=True, exist_ok=True)
    _write_json(job.out / "eval_metrics.json", {
        "dataset": args.dataset, "accuracy": acc, "examples": int(len(y)),
    })
    emit_csv(job.out / "predictions.csv", ["index", "label", "prediction"],
             [(i, int(y[i]), int(preds[i])) for i in range(len(y))])
    print(f"accuracy {acc:.4f}")
    return job.finish("eval")


def cmd_report(args) -> int:
    job = Job(args)
    job.track_dataset(args.source)
    job.track_dataset(args.target)
    result = run_protocol(args.source, args.target, job.cfg)
    job.out.mkdir(parents=True, exist_ok=True)
    _write_json(job.out / "report.json", result.report)

    tsne_cfg = TsneConfig(sample_cap=job.cfg.caps.tsne, seed=job.cfg.seed)
    for side, (x, y) in (("source", result.source_test), ("target", result.target_test)):
        acc, preds = evaluate(result.target_encoder, result.source_model.classifier, x, y)
        cm = confusion(preds, y)
        emit_confusion_svg(cm, job.out / f"confusion_{side}.svg")
        emit_csv(job.out / f"confusion_{side}.csv",
                 [f"pred_{j}" for j in range(10)], cm.normalized().tolist())

        cap = min(len(y), tsne_cfg.sample_cap)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([job.cfg.seed, 99])))
        pick = rng.permutation(len(y))[:cap]
        feats = encode_features(result.target_encoder, _index_tensor(x, pick))
        emb = tsne_embed(feats, np.asarray(y)[pick], tsne_cfg)
        emit_embedding_svg(emb, job.out / f"tsne_{side}.svg")
        emit_csv(job.out / f"tsne_{side}.csv", ["x", "y", "label"],
                 [(float(px), float(py), int(l)) for (px, py), l in zip(emb.points, emb.labels)])
    print(
        f"baseline {result.report['baseline_acc']:.4f} "
        f"adda-target {result.report['adda_target_acc']:.4f} "
        f"adda-source {result.report['adda_source_acc']:.4f}"
    )
    return job.finish("report")


def _index_tensor(x, idx):
    from .tensor import Tensor

    return Tensor(x.data[idx])


def cmd_synth(args) -> int:
    job = Job(args)
    spec = job.cfg.shift
    if args.kind is not None:
        spec = SyntheticShiftSpec(kind=args.kind, sigma=args.sigma, dx=args.dx,
                                  dy=args.dy, seed=args.shift_seed)
    if spec is None:
        raise ValidationError("synth: no shift given (use --kind or config.shift)")
    new_name = args.name or f"{args.dataset}-{spec.kind}"
    job.out.mkdir(parents=True, exist_ok=True)
    base = Path(job.cfg.data_dir)
    wrote = []
    if (base / f"{args.dataset}-train-images.idx").is_file():
        pairs = [(f"{args.dataset}-train", f"{new_name}-train"),
                 (f"{args.dataset}-test", f"{new_name}-test")]
    else:
        pairs = [(args.dataset, new_name)]
    for src_name, dst_name in pairs:
        job.track_dataset(src_name)
        ds = load_dataset(job.cfg.data_dir, src_name)
        shifted = apply_shift(ds, spec)
        shifted.name = dst_name
        wrote += [str(p) for p in save_dataset(shifted, job.out)]
    print("\n".join(wrote))
    return job.finish("synth", {"outputs": wrote})


def cmd_tsne(args) -> int:
    job = Job(args)
    enc, _ = job.load_ckpt(args.encoder, "encoder")
    _, test = _resolved(job, args.dataset)
    x, y = preprocess(subsample(test, job.cfg.caps.tsne, job.cfg.seed))
    feats = encode_features(enc, x)
    cfg = TsneConfig(
        perplexity=args.perplexity, iterations=args.iterations,
        sample_cap=job.cfg.caps.tsne, seed=job.cfg.seed,
    )
    emb = tsne_embed(feats, y, cfg)
    job.out.mkdir(parents=True, exist_ok=True)
    emit_embedding_svg(emb, job.out / "embedding.svg")
    emit_csv(job.out / "embedding.csv", ["x", "y", "label"],
             [(float(px), float(py), int(l)) for (px, py), l in zip(emb.points, emb.labels)])
    emit_csv(job.out / "kl_trace.csv", ["iteration", "kl"],
             [(i, v) for i, v in enumerate(emb.kl_trace)])
    return job.finish("tsne")


def cmd_confusion(args) -> int:
    job = Job(args)
    enc, _ = job.load_ckpt(args.encoder, "encoder")
    cls, _ = job.load_ckpt(args.classifier, "classifier")
    _, test = _resolved(job, args.dataset)
    x, y = preprocess(subsample(test, job.cfg.caps.eval, job.cfg.seed))
    acc, preds = evaluate(enc, cls, x, y)
    cm = confusion(preds, y)
    job.out.mkdir(parents=True, exist_ok=True)
    emit_confusion_svg(cm, job.out / "confusion.svg")
    emit_csv(job.out / "confusion.csv",
             [f"pred_{j}" for j in range(10)], cm.normalized().tolist())
    print(f"accuracy {acc:.4f}")
    return job.finish("confusion")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adda",
        description="Adversarial domain adaptation workbench for digit classifiers",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--out", help="override output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", parents=[common], help="train and freeze a source model")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", parents=[common], help="adversarially adapt a target encoder")
    p.add_argument("source_model", help="directory with encoder.ckpt + classifier.ckpt")
    p.add_argument("source")
    p.add_argument("target")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", parents=[common], help="score a dataset through a model")
    p.add_argument("encoder")
    p.add_argument("classifier")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="full three-stage protocol with figures")
    p.add_argument("source")
    p.add_argument("target")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", parents=[common], help="write a shifted copy of a dataset")
    p.add_argument("dataset")
    p.add_argument("--kind", choices=["invert", "gaussian_noise", "translate"])
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--dx", type=int, default=0)
    p.add_argument("--dy", type=int, default=0)
    p.add_argument("--shift-seed", type=int, default=0)
    p.add_argument("--name", help="name of the shifted dataset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tsne", parents=[common], help="embed encoder features in 2-D")
    p.add_argument("encoder")
    p.add_argument("dataset")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.set_defaults(func=cmd_tsne)

    p = sub.add_parser("confusion", parents=[common], help="confusion matrix of a model")
    p.add_argument("encoder")
    p.add_argument("classifier")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_confusion)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as e:
        print(f"missing-input: {e}", file=sys.stderr)
        return 1
    except FormatError as e:
        print(str(e), file=sys.stderr)  # already "reason: detail"
        return 2
    except (ValidationError, DimensionError) as e:
        print(f"invalid-input: {e}", file=sys.stderr)
        return 2
    except NumericsError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
