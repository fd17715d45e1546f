"""Operator-facing command surface.

Subcommands: degrade, split, train, infer, eval, param-count, gradcheck.
Exit codes: 0 success, 1 validation error, 2 runtime/numeric error; every
failure prints one ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as datamod
from .checkpoint import CheckpointError, load_model
from .gradcheck import check_gradients
from .model import BlockCounts, MlpComparison, Model, ModelConfig, build, forward, param_count
from .tensor import NumericError, Tensor
from .training import AdamState, TrainConfig, bicubic_baseline, evaluate, l1_loss, train

DATA_ROOT_ENV = "SFSR_DATA_ROOT"

_MODEL_KEYS = {
    "scale": int,
    "embed_channels": int,
    "window": int,
    "heads": int,
    "n_irstb": int,
    "n_dca": int,
    "n_sca": int,
    "n_stlc_per_irstb": int,
    "convmlp_expansion": int,
}
_TRAIN_KEYS = {
    "lr": float,
    "beta1": float,
    "beta2": float,
    "adam_eps": float,
    "batch": int,
    "epochs": int,
    "patch_lr": int,
    "seed": int,
    "eval_every": int,
}
_PATH_KEYS = {"data_root": str, "dataset": str, "checkpoint": str, "log": str}
_ALL_KEYS = {**_MODEL_KEYS, **_TRAIN_KEYS, **_PATH_KEYS}


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; '#' comments; unknown keys rejected."""
    values: dict = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _ALL_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown key '{key}'")
        try:
            values[key] = _ALL_KEYS[key](value)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad value for '{key}': {exc}") from exc
    return values


def model_config_from(values: dict) -> ModelConfig:
    if "scale" not in values:
        raise ValueError("config must set 'scale' (2 or 4)")
    defaults = {"embed_channels": 60, "window": 8, "heads": 6, "convmlp_expansion": 2}
    counts = BlockCounts(
        n_irstb=values.get("n_irstb", 4),
        n_dca=values.get("n_dca", 4),
        n_sca=values.get("n_sca", 4),
        n_stlc_per_irstb=values.get("n_stlc_per_irstb", 6),
    )
    return ModelConfig(
        scale=values["scale"],
        embed_channels=values.get("embed_channels", defaults["embed_channels"]),
        window=values.get("window", defaults["window"]),
        heads=values.get("heads", defaults["heads"]),
        counts=counts,
        convmlp_expansion=values.get("convmlp_expansion", defaults["convmlp_expansion"]),
    )


def train_config_from(values: dict) -> TrainConfig:
    return TrainConfig(
        batch=values.get("batch", 2),
        epochs=values.get("epochs", 200),
        patch_lr=values.get("patch_lr", 64),
        seed=values.get("seed", 0),
        eval_every=values.get("eval_every", 0),
        checkpoint_path=values.get("checkpoint"),
        log_path=values.get("log"),
        alpha=values.get("lr", 0.0002),
        beta1=values.get("beta1", 0.9),
        beta2=values.get("beta2", 0.999),
        adam_eps=values.get("adam_eps", 1e-8),
    )


def _resolve_root(arg_root: str | None) -> Path:
    root = arg_root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise ValueError(f"--root not given and {DATA_ROOT_ENV} unset")
    return Path(root)


def _check_scale(scale: int) -> int:
    if scale not in (2, 4):
        raise ValueError(f"scale must be 2 or 4, got {scale}")
    return scale


def cmd_degrade(args) -> int:
    root = _resolve_root(args.root)
    scale = _check_scale(args.scale)
    src = datamod.hr_dir(root, args.dataset)
    if not src.is_dir():
        raise ValueError(f"HR directory not found: {src}")
    ids = datamod.list_ids(src)
    if not ids:
        raise ValueError(f"no images in {src}")
    dst = datamod.lr_dir(root, args.dataset, scale)
    dst.mkdir(parents=True, exist_ok=True)
    manifest = []
    failures = []
    for pair_id in ids:
        try:
            hr = datamod.load_image(src / f"{pair_id}.png")
            pair = datamod.make_pair(hr, scale, pair_id)
        except Exception as exc:
            failures.append(f"{pair_id}: {exc}")
            continue
        out_path = dst / f"{pair_id}.png"
        datamod.save_image(pair.lr, out_path)
        digest = hashlib.sha256(out_path.read_bytes()).hexdigest()
        h, w = pair.lr.data.shape[-2:]
        manifest.append({"id": pair_id, "height": h, "width": w, "sha256": digest})
    if failures:
        for line in failures:
            print(f"error: degrade failed for {line}", file=sys.stderr)
        return 1
    (dst / "manifest.json").write_text(json.dumps({"scale": scale, "images": manifest}, indent=2, sort_keys=True) + "\n")
    print(f"degraded {len(manifest)} images to {dst}")
    return 0


def _split_path(root: Path, dataset: str, seed: int) -> Path:
    return root / dataset / f"split_seed{seed}.json"


def cmd_split(args) -> int:
    root = _resolve_root(args.root)
    src = datamod.hr_dir(root, args.dataset)
    ids = datamod.list_ids(src)
    plan = datamod.split_dataset(ids, args.seed)
    out = Path(args.out) if args.out else _split_path(root, args.dataset, args.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(plan.to_json() + "\n")
    print(f"split {len(ids)} ids into {len(plan.train_ids)} train / {len(plan.test_ids)} test -> {out}")
    return 0


def cmd_train(args) -> int:
    values = parse_config_file(args.config)
    mc = model_config_from(values)
    tc = train_config_from(values)
    if args.epochs is not None:
        tc.epochs = args.epochs
    if args.seed is not None:
        tc.seed = args.seed
    if args.checkpoint is not None:
        tc.checkpoint_path = args.checkpoint
    if args.log is not None:
        tc.log_path = args.log
    if not (0 <= args.fold < datamod.SplitPlan.N_FOLDS):
        raise ValueError(f"--fold must be in [0, {datamod.SplitPlan.N_FOLDS}), got {args.fold}")
    root = _resolve_root(args.root or values.get("data_root"))
    dataset = args.dataset or values.get("dataset")
    if not dataset:
        raise ValueError("dataset not set (config key 'dataset' or --dataset)")
    split_file = _split_path(root, dataset, tc.seed) if args.split is None else Path(args.split)
    if not split_file.is_file():
        raise ValueError(f"split file not found: {split_file}")
    plan = datamod.SplitPlan.from_json(split_file.read_text())
    val_ids = plan.fold_members(args.fold)
    train_ids = [i for i in plan.train_ids if plan.folds[i] != args.fold]
    train_pairs = datamod.load_pairs(root, dataset, mc.scale, train_ids)
    val_pairs = datamod.load_pairs(root, dataset, mc.scale, val_ids)
    model = build(mc, seed=tc.seed)
    result = train(model, train_pairs, tc, val_pairs=val_pairs or None)
    last = result.rows[-1].loss if result.rows else float("nan")
    print(f"trained {len(result.rows)} steps (final loss {last}); checkpoint: {tc.checkpoint_path}")
    return 0


def cmd_infer(args) -> int:
    model, _, _ = load_model(args.checkpoint)
    in_path = Path(args.input)
    paths = sorted(in_path.glob("*.png")) if in_path.is_dir() else [in_path]
    if not paths:
        raise ValueError(f"no PNG inputs under {in_path}")
    out_path = Path(args.output)
    multi = len(paths) > 1
    if multi:
        out_path.mkdir(parents=True, exist_ok=True)
    for p in paths:
        img = datamod.load_image(p)
        out = forward(model, Tensor(img[None]), clamp=True)
        target = out_path / p.name if multi or out_path.is_dir() else out_path
        datamod.save_image(out.data[0], target)
        print(f"{p} -> {target}")
    return 0


def _load_eval_pairs(args, scale: int) -> list:
    root = _resolve_root(args.root)
    if args.split:
        plan = datamod.SplitPlan.from_json(Path(args.split).read_text())
        ids = plan.test_ids
    else:
        ids = datamod.list_ids(datamod.lr_dir(root, args.dataset, scale))
    if not ids:
        raise ValueError(f"no evaluation images for dataset '{args.dataset}' at scale {scale}")
    return datamod.load_pairs(root, args.dataset, scale, ids)


def cmd_eval(args) -> int:
    scale = _check_scale(args.scale)
    pairs = _load_eval_pairs(args, scale)
    if args.checkpoint:
        model, _, _ = load_model(args.checkpoint)
        if model.config.scale != scale:
            raise ValueError(f"checkpoint scale {model.config.scale} != requested {scale}")
        report = evaluate(model, pairs)
        title = f"{args.dataset} x{scale} (checkpoint)"
    else:
        report = bicubic_baseline(pairs)
        title = f"{args.dataset} x{scale} (bicubic baseline)"
    for line in report.table_lines(title):
        print(line)
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        Path(args.csv).write_text("\n".join(report.csv_lines()) + "\n")
    return 0


def cmd_param_count(args) -> int:
    values = parse_config_file(args.config)
    mc = model_config_from(values)
    report = param_count(mc)
    for line in report.lines():
        print(line)
    cmp = MlpComparison(depth=args.tokens, c_in=mc.embed_channels, c_out=mc.mlp_hidden)
    print(
        f"token-map weights over {cmp.depth} tokens: shared conv {cmp.conv_params:,}"
        f" vs unshared dense {cmp.dense_params:,} (ratio {cmp.ratio}x)"
    )
    return 0


def cmd_gradcheck(args) -> int:
    values = parse_config_file(args.config)
    mc = model_config_from(values)
    model = build(mc, seed=args.seed, dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    h = w = max(args.size, mc.window)
    x = Tensor(rng.uniform(0.0, 1.0, size=(1, 3, h, w)))
    y = Tensor(rng.uniform(0.0, 1.0, size=(1, 3, h * mc.scale, w * mc.scale)))

    def loss():
        return l1_loss(forward(model, x), y)

    corrupt = None
    if args.corrupt:
        first = next(iter(model.named_parameters()))

        def corrupt(name, g):
            return g * 1.5 + 1.0 if name == first else g

    report = check_gradients(loss, model.named_parameters(), step=args.step, tolerance=args.tolerance, corrupt_adjoint=corrupt)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfsr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="cache bicubic LR copies of an HR dataset")
    p.add_argument("--root", default=None)
    p.add_argument("--dataset", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.set_defaults(fn=cmd_degrade)

    p = sub.add_parser("split", help="write a deterministic 80/20 + 5-fold split plan")
    p.add_argument("--root", default=None)
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="train from a config file on one fold")
    p.add_argument("--config", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--root", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--log", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="upscale PNG(s) with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="score a checkpoint (or bicubic baseline) on a dataset")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--root", default=None)
    p.add_argument("--dataset", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("param-count", help="print the exact parameter breakdown")
    p.add_argument("--config", required=True)
    p.add_argument("--tokens", type=int, default=4096)
    p.set_defaults(fn=cmd_param_count)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (NumericError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
