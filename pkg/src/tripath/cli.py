"""Command-line entry point.

Commands: generate (synthetic dataset to disk), train, eval (metrics,
optional truncation sweep and timing), gradcheck (finite-difference
verification suites) and inspect (checkpoint summary). Every run is
reproducible from its config file and seed alone; the effective config is
archived into the output directory. Exit codes: 0 success, 1 runtime
failure, 2 usage or configuration error.
"""

import argparse
import dataclasses
import pathlib
import sys

import numpy as np

from . import data as D
from . import evalreport as E
from . import gradcheck as G
from .config import (
    RunConfig,
    apply_overrides,
    config_to_flat,
    load_config,
    save_config,
)
from .errors import ConfigError, InputError, ParamError
from .model import WIRINGS, MultiPathNet, load_checkpoint
from .tensor import Tensor
from .training import fit


def _load_run_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "out", None) is not None:
        overrides.append(f"out_dir={args.out}")
    if getattr(args, "wiring", None) is not None:
        overrides.append(f"model.wiring={args.wiring}")
    return apply_overrides(cfg, overrides)


def _model_rng(cfg):
    return np.random.default_rng(D.child_seed(cfg.seed, "init"))


def cmd_generate(args):
    cfg = _load_run_config(args)
    out = pathlib.Path(cfg.out_dir)
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"error: {out} exists and is not empty; pass --force to overwrite", file=sys.stderr)
        return 2
    clips = D.generate_synthetic(cfg.data, cfg.n_videos, seed=cfg.seed)
    splits = D.make_splits(clips, cfg.test_fraction, cfg.n_folds,
                           seed=D.child_seed(cfg.seed, "split"), val_fraction=cfg.val_fraction)
    D.save_dataset(clips, out)
    D.save_splits(splits, out)
    save_config(cfg, out / "run.config")
    n_t = sum(1 for c in clips if c.label == D.CLASS_T)
    print(f"wrote {len(clips)} videos to {out}: {n_t} T, {len(clips) - n_t} NT, "
          f"{cfg.n_folds} fold(s)")
    return 0


def _resolve_split(dataset_dir, fold):
    clips = D.load_dataset(dataset_dir)
    splits = D.load_splits(dataset_dir)
    matches = [s for s in splits if s.fold == fold]
    if not matches:
        raise InputError(f"{dataset_dir}: no fold {fold} in splits.json "
                         f"(folds: {[s.fold for s in splits]})")
    return clips, matches[0]


def cmd_train(args):
    cfg = _load_run_config(args)
    if args.data is None:
        print("error: --data DATASET_DIR is required", file=sys.stderr)
        return 2
    clips, split = _resolve_split(args.data, args.fold)
    by_id = {c.id: c for c in clips}
    train_videos = [by_id[i] for i in split.train if i in by_id]
    val_videos = [by_id[i] for i in split.validation if i in by_id]
    if len(train_videos) < len(split.train) or len(val_videos) < len(split.validation):
        raise InputError(f"{args.data}: splits.json references videos missing from the manifest")

    if cfg.expansion_factor > 1:
        train_videos = D.expand_training_set(train_videos, cfg.expansion_factor,
                                             seed=D.child_seed(cfg.seed, "augment"))
    split = D.DatasetSplit(fold=split.fold,
                           train=tuple(c.id for c in train_videos),
                           validation=split.validation, test=split.test)

    out = pathlib.Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "run.config")
    model = MultiPathNet(cfg.model, rng=_model_rng(cfg))
    train_cfg = dataclasses.replace(cfg.train, seed=cfg.seed)
    run = fit(model, train_videos + val_videos, split, train_cfg, out)
    E.write_summary_json(out / "summary.json", {
        "config": cfg.to_dict(),
        "best_epoch": run.best_epoch,
        "best_val_accuracy": run.best_val_accuracy,
        "stopped_epoch": run.stopped_epoch,
        "best_checkpoint": run.best_checkpoint,
        "swa_checkpoint": run.swa_checkpoint,
    })
    print(f"trained {run.stopped_epoch} epoch(s); best val acc "
          f"{run.best_val_accuracy:.4f} at epoch {run.best_epoch}; artifacts in {out}")
    return 0


def cmd_eval(args):
    model, meta = load_checkpoint(args.checkpoint)
    if args.config:
        cfg = _load_run_config(args)
        ours = cfg.model.to_dict()
        theirs = model.config.to_dict()
        if ours != theirs:
            diff = sorted(k for k in ours if ours[k] != theirs.get(k))
            raise ConfigError(f"checkpoint model config disagrees with {args.config} on: {diff}")
    clips, split = _resolve_split(args.data, args.fold)
    by_id = {c.id: c for c in clips}
    wanted = getattr(split, args.split)
    videos = [by_id[i] for i in wanted if i in by_id]
    if not videos:
        raise InputError(f"{args.data}: split {args.split!r} resolves to no videos")

    out = pathlib.Path(args.out or "eval")
    out.mkdir(parents=True, exist_ok=True)
    clip_len = args.clip_len
    timing = None
    if args.time:
        probe = D.sample_clip(videos[0], clip_len)
        timing = E.time_inference(model, Tensor(probe.data[None]),
                                  repetitions=args.repetitions)
    metrics = E.evaluate_videos(model, videos, clip_len=clip_len)
    if timing is not None:
        metrics = dataclasses.replace(metrics, seconds_per_video=timing.seconds_mean)
    E.write_metrics_csv(out / "metrics.csv", {args.variant: [metrics]})

    summary = {
        "checkpoint": str(args.checkpoint),
        "checkpoint_meta": meta,
        "split": args.split,
        "n_videos": len(videos),
        "metrics": metrics.as_dict(),
        "config": {"model": model.config.to_dict()},
    }
    if timing is not None:
        summary["timing"] = dataclasses.asdict(timing)
    if args.sweep:
        sweep = E.truncation_sweep(model, videos, clip_len=clip_len)
        E.write_sweep_csv(out / "sweep.csv", [sweep])
        summary["sweep"] = [{"frames_kept": p.frames_kept, "acc": p.metrics.acc,
                             "n_videos": p.n_videos, "n_skipped": p.n_skipped}
                            for p in sweep]
    E.write_summary_json(out / "summary.json", summary)
    acc = "n/a" if metrics.acc is None else f"{metrics.acc:.4f}"
    print(f"evaluated {len(videos)} videos from split {args.split!r}: acc {acc}; "
          f"report in {out}")
    return 0


def cmd_gradcheck(args):
    scopes = ("ops", "layers", "model") if args.scope == "all" else (args.scope,)
    ok = True
    for scope in scopes:
        passed, lines, elapsed = G.run_suite(scope, seeds=args.seeds, step=args.step,
                                             tolerance=args.tolerance)
        for line in lines:
            print(line)
        print(f"[{scope}] {'PASS' if passed else 'FAIL'} in {elapsed:.1f}s")
        ok = ok and passed
    return 0 if ok else 1


def cmd_inspect(args):
    model, meta = load_checkpoint(args.checkpoint)
    total = sum(int(np.prod(p.data.shape)) for _, p in model.named_parameters())
    print(f"checkpoint: {args.checkpoint}")
    print(f"epoch: {meta.get('epoch')}  val_accuracy: {meta.get('val_accuracy')}")
    print(f"parameters: {total}")
    for key, value in sorted(model.config.to_dict().items()):
        print(f"model.{key}={value}")
    if args.params:
        for name, p in model.named_parameters():
            print(f"{name}  {tuple(p.data.shape)}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tripath",
        description="Three-pathway video classifier: data generation, training, "
                    "evaluation and verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="run config file (flat key=value lines)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config entry (repeatable)")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        if seed:
            p.add_argument("--seed", type=int, help="global seed override")

    p = sub.add_parser("generate", help="write a synthetic dataset to disk")
    common(p)
    p.add_argument("--force", action="store_true", help="overwrite a non-empty directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    common(p)
    p.add_argument("--data", help="dataset directory from `tripath generate`")
    p.add_argument("--fold", type=int, default=0, help="fold index (default 0)")
    p.add_argument("--wiring", choices=WIRINGS,
                   help="lateral wiring; 'none' trains the late-fusion variant")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p.add_argument("--clip-len", type=int, default=64, dest="clip_len")
    p.add_argument("--variant", default="model", help="row label in metrics.csv")
    p.add_argument("--sweep", action="store_true", help="add the truncation sweep")
    p.add_argument("--time", action="store_true", help="add inference timing")
    p.add_argument("--repetitions", type=int, default=1000)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--scope", choices=("ops", "layers", "model", "all"), default="all")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--params", action="store_true", help="list every parameter tensor")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, ParamError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures keep their diagnostics
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
