"""Single-executable command line: data, training, sampling, filtering,
metrics, and experiments.

    rangediff gen-data --out DIR --seed S --per-cell N --size 64
    rangediff train --manifest FILE --out CKPT ...
    rangediff sample --checkpoint CKPT --class NAME --distance METERS \
        --steps N --eta E --guidance W --count K --out DIR
    rangediff label --images DIR --generation-manifest FILE --out labels.jsonl
    rangediff train-filter --labels labels.jsonl --out CKPT
    rangediff filter --checkpoint CKPT --images DIR --tau T --out results.jsonl
    rangediff metrics --real M1 --generated M2 --extractor ID --out report.json
    rangediff train-recognizer --manifest FILE --out CKPT
    rangediff experiment {compare|budget-sweep|amount-sweep|ablation} --config FILE

Worker parallelism is capped by the DUR_NUM_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np
import torch

from . import __version__
from .checkpoint import (
    load_filter_checkpoint,
    load_generator_checkpoint,
    save_filter_checkpoint,
    save_generator_checkpoint,
    save_recognizer_checkpoint,
)
from .conditioning import ConditionPair
from .datapipe import (
    DatasetManifest,
    Sample,
    array_to_image,
    denormalize,
    load_image,
    load_manifest,
    load_split_tensors,
    normalize,
    image_to_array,
    save_manifest,
)
from .diffusion import SamplerConfig, sample, sample_batch, save_trajectory
from .harness import (
    experiment_config_from_json,
    get_extractor,
    run_experiment,
)
from .metrics import compute_metric_report
from .quality import FilterConfig, read_labels, score, train_filter, write_labels, QualityLabel
from .recognizer import RecognizerConfig, train_recognizer
from .toyworld import ToyWorldConfig, generate_toy_dataset, toy_quality_label, toy_vocabulary
from .training import GeneratorTrainConfig, train_generator

logger = logging.getLogger(__name__)


def _cmd_gen_data(args) -> int:
    config = ToyWorldConfig(
        image_size=args.size,
        s_ref=args.s_ref if args.s_ref is not None else args.size * 0.625,
        distances=tuple(args.distances) if args.distances else tuple(range(4, 26)),
        seed=args.seed,
    )
    manifest = generate_toy_dataset(
        config, args.per_cell, args.out, test_fraction=args.test_fraction
    )
    print(f"wrote {len(manifest)} samples under {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = GeneratorTrainConfig(
        image_size=args.size,
        base_width=args.width,
        depth=args.depth,
        embedding_dim=args.embedding_dim,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        p_drop=args.p_drop,
        schedule_type=args.schedule,
        T=args.timesteps,
        enhancer=args.enhancer,
        seed=args.seed,
    )
    manifest = load_manifest(args.manifest, toy_vocabulary())
    model, schedule, history = train_generator(manifest, config)
    sampler = SamplerConfig(
        num_steps=args.sample_steps, image_shape=(3, args.size, args.size)
    )
    save_generator_checkpoint(
        args.out, model, schedule, sampler,
        extra={"history": {k: history[k] for k in ("initial_loss", "final_loss", "n_train")}},
    )
    print(
        f"trained generator: loss {history['initial_loss']:.4f} -> "
        f"{history['final_loss']:.4f}; checkpoint at {args.out}"
    )
    return 0


def _cmd_sample(args) -> int:
    model, schedule, sampler, _ = load_generator_checkpoint(args.checkpoint)
    vocab = model.vocab
    if args.steps:
        sampler.num_steps = args.steps
    sampler.eta = args.eta
    sampler.guidance_weight = args.guidance
    condition = ConditionPair(
        vocab.class_id(args.class_name), vocab.distance_token(args.distance)
    )
    os.makedirs(args.out, exist_ok=True)
    samples = []
    for i in range(args.count):
        rng = torch.Generator().manual_seed(args.seed + i)
        record = args.trajectory and i == 0
        img, traj = sample(model, condition, sampler, schedule, rng, record_trajectory=record)
        name = f"sample_{i:04}.png"
        array_to_image(denormalize(img)).save(os.path.join(args.out, name))
        samples.append(
            Sample(
                path=os.path.join(args.out, name),
                class_id=condition.class_token,
                distance_m=float(args.distance),
                split="train",
            )
        )
        if traj is not None:
            save_trajectory(traj, os.path.join(args.out, "trajectory"), vocab)
    save_manifest(
        DatasetManifest(samples=samples, vocab=vocab),
        os.path.join(args.out, "manifest.jsonl"),
    )
    print(f"wrote {args.count} samples to {args.out}")
    return 0


def _cmd_label(args) -> int:
    records = []
    if args.mode == "oracle":
        if not args.generation_manifest:
            raise SystemExit("oracle labeling needs --generation-manifest for the conditions")
        manifest = load_manifest(args.generation_manifest, toy_vocabulary())
        world = ToyWorldConfig(image_size=args.size, s_ref=args.size * 0.625)
        for s in manifest:
            image = load_image(s.path)
            label = toy_quality_label(
                image, s.class_id, expected_distance=s.distance_m, config=world
            )
            records.append((s.path, label))
    else:
        names = sorted(
            f for f in os.listdir(args.images) if f.lower().endswith(".png")
        )
        for name in names:
            path = os.path.join(args.images, name)
            answer = ""
            while answer not in ("p", "f"):
                answer = input(f"{name} [p]ass/[f]ail: ").strip().lower()
            reason = input("reason (optional): ").strip() or None
            records.append((path, QualityLabel("pass" if answer == "p" else "fail", reason)))
    write_labels(records, args.out)
    n_fail = sum(1 for _, lab in records if not lab.passed)
    print(f"labeled {len(records)} images ({n_fail} failed) -> {args.out}")
    return 0


def _cmd_train_filter(args) -> int:
    labeled = []
    for path, label in read_labels(args.labels):
        labeled.append((normalize(image_to_array(load_image(path))), label))
    config = FilterConfig(
        num_blocks=args.blocks,
        width=args.width,
        input_size=args.size,
        threshold=args.tau,
        epochs=args.epochs,
        seed=args.seed,
    )
    model = train_filter(labeled, config)
    save_filter_checkpoint(args.out, model)
    print(
        f"filter held-out accuracy {model.report['holdout_accuracy']:.3f}; "
        f"checkpoint at {args.out}"
    )
    return 0


def _cmd_filter(args) -> int:
    model = load_filter_checkpoint(args.checkpoint)
    names = sorted(f for f in os.listdir(args.images) if f.lower().endswith(".png"))
    kept = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for name in names:
            path = os.path.join(args.images, name)
            s = score(model, normalize(image_to_array(load_image(path))))
            keep = s >= args.tau
            kept += int(keep)
            fh.write(json.dumps({"path": path, "score": s, "kept": keep}) + "\n")
    print(f"kept {kept}/{len(names)} images (tau={args.tau}) -> {args.out}")
    return 0


def _cmd_metrics(args) -> int:
    vocab = toy_vocabulary()
    real = load_manifest(args.real, vocab)
    gen = load_manifest(args.generated, vocab)
    size = args.size
    real_images, _, _ = load_split_tensors(real, target_size=size)
    gen_images, _, _ = load_split_tensors(gen, target_size=size)
    extractor = get_extractor(args.extractor, num_classes=vocab.num_classes)
    report = compute_metric_report(
        np.stack([denormalize(x) for x in real_images]),
        np.stack([denormalize(x) for x in gen_images]),
        extractor,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    if args.csv:
        exists = os.path.exists(args.csv)
        with open(args.csv, "a", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=sorted(report.to_dict()))
            if not exists:
                writer.writeheader()
            writer.writerow(report.to_dict())
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_train_recognizer(args) -> int:
    manifest = load_manifest(args.manifest, toy_vocabulary())
    images, labels, _ = load_split_tensors(manifest, split="train", target_size=args.size)
    config = RecognizerConfig(
        num_classes=manifest.vocab.num_classes,
        image_size=args.size,
        width=args.width,
        epochs=args.epochs,
    )
    model = train_recognizer(images, labels, config, seed=args.seed)
    save_recognizer_checkpoint(args.out, model)
    print(f"recognizer checkpoint at {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    cfg = experiment_config_from_json(args.config)
    if args.out:
        cfg.out_dir = args.out
    report = run_experiment(args.kind, cfg)
    for flag in report.trend_flags:
        status = {True: "reproduced", False: "not-reproduced", None: "n/a"}[flag["reproduced"]]
        print(f"[{status}] {flag['claim']}")
    print(f"report written under {os.path.join(cfg.out_dir, args.kind)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rangediff", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render the shapes-at-distance dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-cell", type=int, default=10, dest="per_cell")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--s-ref", type=float, default=None, dest="s_ref")
    p.add_argument("--test-fraction", type=float, default=0.0)
    p.add_argument("--distances", type=int, nargs="*", default=None)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train the conditional generator")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--embedding-dim", type=int, default=64)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--p-drop", type=float, default=0.1)
    p.add_argument("--schedule", choices=("linear", "cosine"), default="linear")
    p.add_argument("--timesteps", type=int, default=1000)
    p.add_argument("--enhancer", choices=("identity", "median"), default="identity")
    p.add_argument("--sample-steps", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sample", help="generate images from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--class", required=True, dest="class_name")
    p.add_argument("--distance", type=float, required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--guidance", type=float, default=1.0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trajectory", action="store_true")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("label", help="record pass/fail verdicts for generated images")
    p.add_argument("--images", default=None)
    p.add_argument("--generation-manifest", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("oracle", "interactive"), default="oracle")
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("train-filter", help="train the quality filter from labels")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--blocks", type=int, default=8)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_filter)

    p = sub.add_parser("filter", help="score a directory of images with the filter")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("metrics", help="IS/FID/SSIM between two manifests")
    p.add_argument("--real", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--extractor", default="random-projection")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("train-recognizer", help="train the reference recognizer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_recognizer)

    p = sub.add_parser("experiment", help="run a full experiment from a JSON config")
    p.add_argument("kind", choices=("compare", "budget-sweep", "amount-sweep", "ablation"))
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_experiment)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
