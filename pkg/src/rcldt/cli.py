"""Command line pipeline: synth / pretrain / finetune / classify / generate /
reconstruct / sweep-z0 / eval-frechet.

Runs are driven by a JSON config file (sections "model", "train",
"classifier") with flags overriding individual fields. Every run writes a
manifest.json next to its primary output capturing the resolved
configuration, the seed, and content hashes of the inputs, so a run is
reproducible from its manifest alone.

Errors exit with code 1 and a single machine-parsable line on stderr:
``<category>: <message>``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import ClassifierConfig, evaluate
from .config import ModelConfig
from .data import (SyntheticSpec, generate_synthetic, load_dataset,
                   save_dataset, split)
from .errors import ConfigError, InputError, RcldtError, UsageError
from .metrics import extract_features, frechet_distance
from .sampler import (partial_denoise, sample, save_image_set, save_sweep_grid,
                      z0_prediction_sweep)
from .training import (TrainConfig, finetune, load_checkpoint, pretrain,
                       save_checkpoint)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _content_hash(path) -> str:
    """sha256 of a file, or of the sorted (name, hash) listing of a directory."""
    path = Path(path)
    if path.is_file():
        return _file_hash(path)
    if path.is_dir():
        h = hashlib.sha256()
        for p in sorted(path.rglob("*")):
            if p.is_file():
                h.update(p.relative_to(path).as_posix().encode())
                h.update(_file_hash(p).encode())
        return h.hexdigest()
    raise InputError(f"input path does not exist: {path}")


def _write_manifest(out_base: Path, command: str, resolved: dict, seed,
                    inputs: dict, outputs: list) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "resolved": resolved,
        "seed": seed,
        "inputs": {str(k): _content_hash(v) for k, v in inputs.items()},
        "outputs": [str(o) for o in outputs],
        "package_version": __version__,
    }
    path = out_base.with_suffix(".manifest.json") if out_base.suffix else out_base / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            cfg = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return cfg


def _model_config(cfg: dict, **overrides) -> ModelConfig:
    fields = dict(cfg.get("model", {}))
    fields.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ModelConfig(**fields)
    except TypeError as e:
        raise ConfigError(f"bad model config: {e}") from e


def _train_config(cfg: dict, **overrides) -> TrainConfig:
    fields = dict(cfg.get("train", {}))
    fields.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig(**fields)
    except TypeError as e:
        raise ConfigError(f"bad train config: {e}") from e


def _classifier_config(cfg: dict, **overrides) -> ClassifierConfig:
    fields = dict(cfg.get("classifier", {}))
    fields.update({k: v for k, v in overrides.items() if v is not None})
    if "t_values" in fields and fields["t_values"] is not None:
        fields["t_values"] = tuple(fields["t_values"])
    try:
        return ClassifierConfig(**fields)
    except TypeError as e:
        raise ConfigError(f"bad classifier config: {e}") from e


def _parse_t_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as e:
        raise UsageError(f"--t expects comma-separated integers, got {text!r}") from e


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("RCLDT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as e:
            raise ConfigError(f"RCLDT_THREADS must be an integer, got {env!r}") from e
    return 1


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    try:
        with open(args.spec) as f:
            spec = SyntheticSpec.from_json(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read spec {args.spec}: {e}") from e
    dataset = generate_synthetic(spec)
    out = Path(args.out)
    save_dataset(dataset, out, with_labels=True)
    with open(out / "spec.json", "w") as f:
        f.write(spec.to_json() + "\n")
    _write_manifest(out, "synth", {"synthetic": json.loads(spec.to_json())}, spec.seed,
                    {"spec": args.spec}, [out])
    print(f"wrote {len(dataset)} images to {out}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _load_config_file(args.config)
    model_cfg = _model_config(cfg, conditioning=args.mode)
    train_cfg = _train_config(cfg, steps=args.steps, seed=args.seed,
                              batch_size=args.batch_size, lr=args.lr,
                              precision=args.precision)
    dataset = load_dataset(args.data, labels_csv=None, split="pretrain")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt, curve = pretrain(train_cfg, model_cfg, dataset)
    save_checkpoint(ckpt, out)
    curve.to_csv(out.with_suffix(".loss.csv"))
    _write_manifest(out, "pretrain",
                    {"model": json.loads(model_cfg.to_json()), "train": asdict(train_cfg)},
                    train_cfg.seed, {"data": args.data},
                    [out, out.with_suffix(".loss.csv")])
    print(f"pretrained {train_cfg.steps} steps; final loss {curve.losses[-1]:.6f}; wrote {out}")
    return 0


def _cmd_finetune(args) -> int:
    cfg = _load_config_file(args.config)
    train_cfg = _train_config(cfg, steps=args.steps, seed=args.seed,
                              batch_size=args.batch_size, lr=args.lr)
    ckpt = load_checkpoint(args.ckpt)
    labeled = load_dataset(args.data, labels_csv=Path(args.data) / "labels.csv", split="train")
    rng = np.random.default_rng(train_cfg.seed)
    order = rng.permutation(len(labeled))
    n_valid = max(1, int(args.valid_frac * len(labeled))) if args.valid_frac > 0 else 0
    valid = labeled.subset([int(i) for i in order[:n_valid]], split="valid") if n_valid else None
    train = labeled.subset([int(i) for i in order[n_valid:]], split="train")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tuned, curve, val_curve = finetune(ckpt, train_cfg, train, valid_set=valid,
                                       num_classes=args.classes)
    save_checkpoint(tuned, out)
    curve.to_csv(out.with_suffix(".loss.csv"))
    outputs = [out, out.with_suffix(".loss.csv")]
    if val_curve is not None:
        val_curve.to_csv(out.with_suffix(".val_loss.csv"))
        outputs.append(out.with_suffix(".val_loss.csv"))
    _write_manifest(out, "finetune",
                    {"train": asdict(train_cfg), "classes": args.classes,
                     "valid_frac": args.valid_frac},
                    train_cfg.seed, {"ckpt": args.ckpt, "data": args.data}, outputs)
    print(f"finetuned {train_cfg.steps} steps; final loss {curve.losses[-1]:.6f}; wrote {out}")
    return 0


def _cmd_classify(args) -> int:
    cfg = _load_config_file(args.config)
    cls_cfg = _classifier_config(
        cfg, num_mc_samples=args.mc, t_strategy=args.t_strategy,
        scoring_space=args.space, seed=args.seed,
        t_values=tuple(_parse_t_list(args.t)) if args.t else None)
    ckpt = load_checkpoint(args.ckpt)
    test_set = load_dataset(args.data, labels_csv=Path(args.data) / "labels.csv", split="test")
    schedule = ckpt.build_schedule()
    report = evaluate(ckpt, schedule, test_set, cls_cfg, threads=_threads(args))
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report.to_json(report_path)
    outputs = [report_path]
    if args.scores:
        from .classifier import ScoreMatrix
        ScoreMatrix(report.scores, np.asarray(report.predictions),
                    cls_cfg.scoring_space).to_csv(args.scores, labels=test_set.labels)
        outputs.append(Path(args.scores))
    _write_manifest(report_path, "classify",
                    {"classifier": asdict(cls_cfg)}, cls_cfg.seed,
                    {"ckpt": args.ckpt, "data": args.data}, outputs)
    print(report.to_json())
    return 0


def _cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    schedule = ckpt.build_schedule()
    ref = None
    if args.ref_data:
        ref_set = load_dataset(args.ref_data, split="test")
        ref = ref_set.stack(range(min(args.n, len(ref_set))))
        if ref.shape[0] < args.n:
            raise InputError(f"need {args.n} reference images, found {ref.shape[0]}")
    images = sample(ckpt, schedule, args.n, args.seed, class_id=args.class_id,
                    ref_images=ref)
    cond = ckpt.config.conditioning if args.class_id is None else f"class={args.class_id}"
    meta = [(args.seed, schedule.T - 1, cond) for _ in range(args.n)]
    out = Path(args.out)
    save_image_set(images, out, "sample", meta)
    _write_manifest(out, "generate", {"n": args.n, "class_id": args.class_id},
                    args.seed, {"ckpt": args.ckpt}, [out])
    print(f"wrote {args.n} samples to {out}")
    return 0


def _cmd_reconstruct(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    schedule = ckpt.build_schedule()
    data = load_dataset(args.data, split="test")
    n = min(args.n, len(data))
    originals = data.stack(range(n))
    recon = partial_denoise(ckpt, schedule, originals, args.t_start,
                            class_id=args.class_id, seed=args.seed)
    out = Path(args.out)
    cond = ckpt.config.conditioning
    save_image_set(recon, out, "recon", [(args.seed, args.t_start, cond)] * n)
    err = float(np.mean((originals - recon) ** 2))
    _write_manifest(out, "reconstruct",
                    {"t_start": args.t_start, "n": n, "mse": err},
                    args.seed, {"ckpt": args.ckpt, "data": args.data}, [out])
    print(f"reconstructed {n} images at t_start={args.t_start}; mse={err:.6f}")
    return 0


def _cmd_sweep_z0(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    schedule = ckpt.build_schedule()
    data = load_dataset(args.data, split="test")
    t_list = _parse_t_list(args.t)
    if not (0 <= args.index < len(data)):
        raise InputError(f"--index {args.index} outside the {len(data)}-image dataset")
    sweep = z0_prediction_sweep(ckpt, schedule, data.image(args.index), t_list,
                                class_id=args.class_id, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_sweep_grid(sweep, out)
    _write_manifest(out, "sweep-z0", {"t": t_list, "index": args.index},
                    args.seed, {"ckpt": args.ckpt, "data": args.data}, [out])
    print(f"wrote sweep grid {out}")
    return 0


def _cmd_eval_frechet(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    real = load_dataset(args.real, split="test")
    fake = load_dataset(args.fake, split="test")
    fd = frechet_distance(extract_features(ckpt, real), extract_features(ckpt, fake))
    result = {"frechet_distance": fd, "n_real": len(real), "n_fake": len(fake)}
    text = json.dumps(result, indent=2, sort_keys=True)
    outputs = []
    if args.report:
        report = Path(args.report)
        report.parent.mkdir(parents=True, exist_ok=True)
        with open(report, "w") as f:
            f.write(text + "\n")
        outputs.append(report)
        _write_manifest(report, "eval-frechet", result, None,
                        {"ckpt": args.ckpt, "real": args.real, "fake": args.fake}, outputs)
    print(text)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    p = _Parser(prog="rcldt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic blob-detection dataset")
    sp.add_argument("--spec", required=True, help="SyntheticSpec JSON file")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=_cmd_synth)

    sp = sub.add_parser("pretrain", help="self-supervised pretraining")
    sp.add_argument("--config", default=None)
    sp.add_argument("--data", required=True)
    sp.add_argument("--mode", choices=["unconditional", "representation"], default=None)
    sp.add_argument("--out", required=True, help="checkpoint output path")
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--precision", choices=["f32", "f64"], default=None)
    sp.set_defaults(fn=_cmd_pretrain)

    sp = sub.add_parser("finetune", help="swap to class conditioning and tune")
    sp.add_argument("--config", default=None)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True, help="directory with PGMs + labels.csv")
    sp.add_argument("--classes", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--valid-frac", type=float, default=0.1, dest="valid_frac")
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    sp.add_argument("--lr", type=float, default=None)
    sp.set_defaults(fn=_cmd_finetune)

    sp = sub.add_parser("classify", help="zero-shot classification over a labeled set")
    sp.add_argument("--config", default=None)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--mc", type=int, default=None, help="Monte Carlo pairs per sample")
    sp.add_argument("--t-strategy", choices=["uniform-random", "fixed-list", "stratified"],
                    default=None, dest="t_strategy")
    sp.add_argument("--t", default=None, help="comma-separated t values for fixed-list")
    sp.add_argument("--space", choices=["z0", "epsilon"], default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--report", required=True, help="metrics JSON output")
    sp.add_argument("--scores", default=None, help="per-sample score CSV output")
    sp.add_argument("--threads", type=int, default=None)
    sp.set_defaults(fn=_cmd_classify)

    sp = sub.add_parser("generate", help="sample images from pure noise")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--n", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--class-id", type=int, default=None, dest="class_id")
    sp.add_argument("--ref-data", default=None, dest="ref_data",
                    help="reference images for representation conditioning")
    sp.set_defaults(fn=_cmd_generate)

    sp = sub.add_parser("reconstruct", help="partial denoising from an intermediate timestep")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--t-start", type=int, required=True, dest="t_start")
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--class-id", type=int, default=None, dest="class_id")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=_cmd_reconstruct)

    sp = sub.add_parser("sweep-z0", help="z_t and predicted z0 across timesteps")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--t", required=True, help="comma-separated timesteps")
    sp.add_argument("--index", type=int, default=0, help="image index within --data")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--class-id", type=int, default=None, dest="class_id")
    sp.add_argument("--out", required=True, help="output grid PGM")
    sp.set_defaults(fn=_cmd_sweep_z0)

    sp = sub.add_parser("eval-frechet", help="feature-space Fréchet distance")
    sp.add_argument("--ckpt", required=True, help="checkpoint providing the encoder")
    sp.add_argument("--real", required=True)
    sp.add_argument("--fake", required=True)
    sp.add_argument("--report", default=None)
    sp.set_defaults(fn=_cmd_eval_frechet)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except RcldtError as e:
        print(f"{e.category}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
