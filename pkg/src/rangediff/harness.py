"""End-to-end experiment runner.

Builds (or reuses) the toy dataset, trains the generator and quality
filter, produces filtered synthetic corpora, trains the downstream
recognizer on real vs. synthetic data, and emits report JSON, CSV rows,
and plots for the data-source comparison, data-budget sweep,
synthetic-amount sweep, and ablation study.

Directional claims from the source experiments (synthetic beats direct
training, more synthetic data helps, every component contributes) are
*reported* with reproduced/not-reproduced flags, never asserted: toy-scale
stochastic training cannot guarantee them.

Every experiment is a pure function of (config, seeds, checkpoints); all
result numbers reproduce bit-for-bit on re-run.  Wall-clock fields are the
one exception and are excluded from that contract.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
import zlib
from dataclasses import dataclass, field

import numpy as np
import torch

from . import __version__
from .checkpoint import (
    load_filter_checkpoint,
    load_generator_checkpoint,
    save_filter_checkpoint,
    save_generator_checkpoint,
)
from .conditioning import ConditionPair
from .datapipe import (
    DatasetManifest,
    denormalize,
    load_manifest,
    load_split_tensors,
)
from .diffusion import SamplerConfig, sample, sample_batch, worker_cap
from .metrics import (
    FilterTrunkExtractor,
    MetricReport,
    RandomProjectionExtractor,
    compute_metric_report,
)
from .quality import FilterConfig, FilterModel, QualityLabel, score_batch, train_filter
from .recognizer import RecognizerConfig, evaluate_recognizer, train_recognizer
from .schedule import schedule_to_metadata
from .toyworld import ToyWorldConfig, generate_toy_dataset, toy_quality_label, toy_vocabulary
from .training import GeneratorTrainConfig, resolve_detector, resolve_enhancer, train_generator

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------- configs


@dataclass
class DataConfig:
    dir: str = "toy-data"
    image_size: int = 32
    s_ref: float = 20.0
    distances: tuple = tuple(range(4, 26))
    per_cell: int = 10
    test_per_cell: int = 2
    clutter_range: tuple = (0, 2)
    seed: int = 0

    def toyworld(self) -> ToyWorldConfig:
        return ToyWorldConfig(
            image_size=self.image_size,
            s_ref=self.s_ref,
            distances=tuple(self.distances),
            clutter_range=tuple(self.clutter_range),
            seed=self.seed,
        )


@dataclass
class SamplerSettings:
    num_steps: int = 30
    eta: float = 0.0
    guidance_weight: float = 1.0


@dataclass
class FilterSettings:
    enabled: bool = True
    tau: float = 0.5
    train_count: int = 240
    num_blocks: int = 4
    width: int = 16
    epochs: int = 6
    seed: int = 0


@dataclass
class RecognizerSettings:
    width: int = 24
    epochs: int = 8
    batch_size: int = 64
    lr: float = 1e-3


@dataclass
class ExperimentConfig:
    out_dir: str = "runs/experiment"
    seeds: tuple = (0, 1, 2, 3, 4)
    data: DataConfig = field(default_factory=DataConfig)
    train: GeneratorTrainConfig = field(default_factory=lambda: GeneratorTrainConfig(
        image_size=32, epochs=20, enhancer="median"))
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    filter: FilterSettings = field(default_factory=FilterSettings)
    recognizer: RecognizerSettings = field(default_factory=RecognizerSettings)
    enhancer: str = "median"            # real-image preprocessing for recognition
    comparison_budget: int = 240
    real_budgets: tuple = (120, 240)
    synthetic_count: int = 240          # generated-set size for the budget sweep
    synthetic_amounts: tuple = (60, 120, 240)
    ablation_generation_count: int = 240
    oversample: float = 1.5
    num_workers: int = 2
    generator_checkpoint: str | None = None
    filter_checkpoint: str | None = None

    def __post_init__(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if any(b <= 0 for b in self.real_budgets) or self.comparison_budget <= 0:
            raise ValueError("budgets must be positive")


def _update_dataclass(obj, data: dict) -> None:
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise ValueError(f"unknown config key {key!r} for {type(obj).__name__}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            _update_dataclass(current, value)
        elif isinstance(current, tuple) and isinstance(value, (list, tuple)):
            setattr(obj, key, tuple(value))
        else:
            setattr(obj, key, value)


def experiment_config_from_dict(data: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    _update_dataclass(cfg, data)
    cfg.__post_init__()
    return cfg


def experiment_config_from_json(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return experiment_config_from_dict(json.load(fh))


def resolved_config(cfg) -> dict:
    return dataclasses.asdict(cfg)


def derive_seed(*parts) -> int:
    """Stable 31-bit seed from a tuple of ints/strings (process-independent)."""
    ints = [
        zlib.crc32(p.encode("utf-8")) if isinstance(p, str) else int(p) % (2**32)
        for p in parts
    ]
    return int(np.random.SeedSequence(ints).generate_state(1)[0] % (2**31))


# ---------------------------------------------------------------- pipeline


def ensure_dataset(cfg: ExperimentConfig) -> DatasetManifest:
    """Generate the toy dataset once (or load it if already present)."""
    data_dir = cfg.data.dir
    if not os.path.isabs(data_dir):
        data_dir = os.path.join(cfg.out_dir, data_dir)
    snapshot_path = os.path.join(data_dir, "data_config.json")
    wanted = dataclasses.asdict(cfg.data)
    manifest_path = os.path.join(data_dir, "manifest.jsonl")
    if os.path.exists(manifest_path):
        with open(snapshot_path, "r", encoding="utf-8") as fh:
            have = json.load(fh)
        if json.loads(json.dumps(wanted)) != have:
            raise ValueError(
                f"{data_dir} holds a dataset generated from a different config; "
                "point data.dir at a fresh directory"
            )
        return load_manifest(manifest_path, toy_vocabulary())
    n = cfg.data.per_cell + cfg.data.test_per_cell
    manifest = generate_toy_dataset(
        cfg.data.toyworld(), n, data_dir, test_fraction=cfg.data.test_per_cell / n
    )
    with open(snapshot_path, "w", encoding="utf-8") as fh:
        json.dump(json.loads(json.dumps(wanted)), fh, indent=2)
    return manifest


def stratified_indices(labels: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Class-balanced subset of size count (deterministic given rng state)."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if count > len(labels):
        raise ValueError(f"requested {count} samples from {len(labels)}")
    base, extra = divmod(count, len(classes))
    chosen = []
    for i, c in enumerate(classes):
        pool = np.nonzero(labels == c)[0]
        take = base + (1 if i < extra else 0)
        if take > len(pool):
            raise ValueError(f"class {c} has only {len(pool)} samples, need {take}")
        chosen.append(rng.choice(pool, size=take, replace=False))
    return np.sort(np.concatenate(chosen))


def condition_grid(vocab, distances, count: int, seed: int) -> list:
    """Class-balanced (class, distance) condition list of the requested length.

    Classes are interleaved round-robin so every prefix of length >= m
    covers all classes; distances are shuffled near-uniformly per class.
    """
    if count < 1:
        raise ValueError("need at least one condition")
    m = vocab.num_classes
    rng = np.random.Generator(np.random.PCG64(seed))
    per_class = -(-count // m)
    columns = []
    for c in range(m):
        pool = np.array([vocab.distance_token(float(d)) for d in distances])
        reps = -(-per_class // len(pool))
        cells = np.tile(pool, reps)
        order = rng.permutation(len(cells))[:per_class]
        columns.append([ConditionPair(c, int(cells[i])) for i in order])
    out = []
    for i in range(per_class):
        for c in range(m):
            if len(out) < count:
                out.append(columns[c][i])
    return out


class Pipeline:
    """Caches the dataset, trained models, and preprocessed tensors for one config."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        os.makedirs(cfg.out_dir, exist_ok=True)
        self.manifest = ensure_dataset(cfg)
        self.vocab = self.manifest.vocab
        self._generators: dict = {}
        self._filter: FilterModel | None = None
        self._tensors: dict = {}

    # -- data ---------------------------------------------------------

    def real_tensors(self, split: str):
        """Preprocessed real images (full frame + configured enhancer)."""
        if split not in self._tensors:
            images, labels, distances = load_split_tensors(
                self.manifest,
                split=split,
                enhancer=resolve_enhancer(self.cfg.enhancer),
                target_size=self.cfg.train.image_size,
            )
            self._tensors[split] = (images, labels, distances)
        return self._tensors[split]

    # -- generator and filter ------------------------------------------

    def train_variant_config(self, variant: str) -> GeneratorTrainConfig:
        tc = dataclasses.replace(self.cfg.train)
        if variant == "no_enhancer":
            tc.enhancer = "identity"
        elif variant == "no_cfdg":
            tc.p_drop = 0.0
        elif variant != "full":
            raise ValueError(f"unknown generator variant {variant!r}")
        return tc

    def generator(self, variant: str = "full"):
        """(model, schedule, history) for a generator variant, trained once."""
        if variant not in self._generators:
            if variant == "full" and self.cfg.generator_checkpoint:
                model, schedule, _, meta = load_generator_checkpoint(
                    self.cfg.generator_checkpoint
                )
                self._generators[variant] = (model, schedule, meta.get("extra", {}))
            else:
                tc = self.train_variant_config(variant)
                model, schedule, history = train_generator(self.manifest, tc)
                ckpt_dir = os.path.join(self.cfg.out_dir, "generators", variant)
                save_generator_checkpoint(
                    ckpt_dir,
                    model,
                    schedule,
                    self.sampler_config(),
                    extra={"history": {k: history[k] for k in ("initial_loss", "final_loss", "n_train")}},
                )
                self._generators[variant] = (model, schedule, history)
        return self._generators[variant]

    def sampler_config(self, guidance: float | None = None) -> SamplerConfig:
        s = self.cfg.sampler
        size = self.cfg.train.image_size
        return SamplerConfig(
            num_steps=s.num_steps,
            eta=s.eta,
            guidance_weight=s.guidance_weight if guidance is None else guidance,
            image_shape=(3, size, size),
        )

    def quality_filter(self) -> FilterModel:
        """Filter trained on oracle-labeled generations from the full generator."""
        if self._filter is None:
            if self.cfg.filter_checkpoint:
                self._filter = load_filter_checkpoint(self.cfg.filter_checkpoint)
                return self._filter
            fs = self.cfg.filter
            model, schedule, _ = self.generator("full")
            conditions = condition_grid(
                self.vocab, self.cfg.data.distances, fs.train_count,
                derive_seed(fs.seed, "filter-conditions"),
            )
            images = sample_batch(
                model, conditions, self.sampler_config(), schedule,
                base_seed=derive_seed(fs.seed, "filter-gen"),
                num_workers=self.cfg.num_workers,
            )
            labeled = []
            world = self.cfg.data.toyworld()
            for img, cond in zip(images, conditions):
                arr = denormalize(img).transpose(1, 2, 0)
                label = toy_quality_label(
                    arr, cond.class_token,
                    expected_distance=self.vocab.token_distance(cond.distance_token),
                    config=world,
                )
                labeled.append((img, label))
            verdicts = {lab.verdict for _, lab in labeled}
            if len(verdicts) < 2:
                labeled.extend(self._synthetic_label_fallback(missing="fail" not in verdicts))
            fc = FilterConfig(
                num_blocks=fs.num_blocks, width=fs.width, input_size=self.cfg.train.image_size,
                threshold=fs.tau, epochs=fs.epochs, seed=fs.seed,
            )
            self._filter = train_filter(labeled, fc)
            save_filter_checkpoint(os.path.join(self.cfg.out_dir, "filter"), self._filter)
        return self._filter

    def _synthetic_label_fallback(self, missing: bool) -> list:
        """Guarantee both verdicts exist: real images pass, corrupted ones fail."""
        images, _, _ = self.real_tensors("train")
        rng = np.random.Generator(np.random.PCG64(derive_seed(self.cfg.filter.seed, "fallback")))
        idx = rng.choice(len(images), size=min(32, len(images)), replace=False)
        out = []
        for i in idx:
            img = images[int(i)].clone()
            if missing:  # need failures: delete a quadrant
                h, w = img.shape[-2:]
                img[:, : h // 2, : w // 2] = -1.0
                out.append((img, QualityLabel("fail", reason="synthetic corruption")))
            else:
                out.append((img, QualityLabel("pass")))
        return out

    # -- synthetic corpora ---------------------------------------------

    def synthetic_set(
        self,
        count: int,
        seed: int,
        use_filter: bool,
        variant: str = "full",
        exact_count: bool = True,
        guidance: float | None = None,
    ):
        """Generate a labeled synthetic training set.

        With exact_count, oversamples and tops up from dropped images if the
        filter is too strict (recorded in stats).  Without it, returns
        exactly what survives filtering of `count` generated candidates.
        """
        model, schedule, _ = self.generator(variant)
        n_gen = int(np.ceil(count * self.cfg.oversample)) if (use_filter and exact_count) else count
        conditions = condition_grid(
            self.vocab, self.cfg.data.distances, n_gen, derive_seed(seed, "conditions", variant)
        )
        images = sample_batch(
            model, conditions, self.sampler_config(guidance), schedule,
            base_seed=derive_seed(seed, "gen", variant), num_workers=self.cfg.num_workers,
        )
        stack = torch.stack(images)
        labels = np.array([c.class_token for c in conditions])
        stats = {"generated": n_gen, "filtered": bool(use_filter)}
        if use_filter:
            scores = score_batch(self.quality_filter(), stack).numpy()
            keep = scores >= self.cfg.filter.tau
            kept_idx = np.nonzero(keep)[0]
            stats["kept"] = int(keep.sum())
            if exact_count:
                if len(kept_idx) < count:
                    dropped_idx = np.nonzero(~keep)[0]
                    top_up = dropped_idx[np.argsort(-scores[dropped_idx])][: count - len(kept_idx)]
                    stats["unfiltered_top_up"] = int(len(top_up))
                    kept_idx = np.sort(np.concatenate([kept_idx, top_up]))
                else:
                    kept_idx = kept_idx[:count]
            stack, labels = stack[kept_idx], labels[kept_idx]
        stats["n_train"] = int(len(stack))
        return stack, labels, stats

    # -- recognizer -----------------------------------------------------

    def recognizer_config(self) -> RecognizerConfig:
        r = self.cfg.recognizer
        return RecognizerConfig(
            num_classes=self.vocab.num_classes,
            image_size=self.cfg.train.image_size,
            width=r.width,
            epochs=r.epochs,
            batch_size=r.batch_size,
            lr=r.lr,
        )

    def fit_and_score(self, images, labels, seed: int):
        """Train the reference recognizer and evaluate on the real test split."""
        model = train_recognizer(images, labels, self.recognizer_config(), seed=seed)
        test_images, test_labels, _ = self.real_tensors("test")
        accuracy, confusion = evaluate_recognizer(model, test_images, test_labels)
        return accuracy, confusion


# ---------------------------------------------------------------- reports


@dataclass
class ExperimentReport:
    name: str
    rows: list
    trend_flags: list
    config: dict
    version: str = __version__
    metric_report: dict | None = None
    wall_clock: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def comparable_dict(self) -> dict:
        """Report content subject to the bit-reproducibility contract."""
        d = self.to_dict()
        d.pop("wall_clock", None)
        return d

    def save(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        flat = [
            {k: v for k, v in row.items() if not isinstance(v, (list, dict))}
            for row in self.rows
        ]
        if flat:
            with open(os.path.join(out_dir, "rows.csv"), "w", encoding="utf-8", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=sorted({k for r in flat for k in r}))
                writer.writeheader()
                writer.writerows(flat)


def _row_summary(label: str, accuracies: list, confusions: list, **extra) -> dict:
    return {
        "label": label,
        "accuracy_mean": float(np.mean(accuracies)),
        "accuracy_std": float(np.std(accuracies)),
        "n_seeds": len(accuracies),
        "per_seed_accuracy": [float(a) for a in accuracies],
        "confusions": [c.tolist() for c in confusions],
        **extra,
    }


def _plot_curves(path, x_label, series: dict, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (xs, means, stds) in series.items():
        ax.errorbar(xs, means, yerr=stds, marker="o", capsize=3, label=label)
    ax.set_xlabel(x_label)
    ax.set_ylabel("recognition accuracy")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------- quality eval


def get_extractor(spec: str = "random-projection", num_classes: int = 6):
    """Extractor registry: 'random-projection[:seed]' or 'filter:<checkpoint>'."""
    if spec.startswith("random-projection"):
        parts = spec.split(":")
        seed = int(parts[1]) if len(parts) > 1 else 0
        return RandomProjectionExtractor(seed=seed, num_classes=num_classes)
    if spec.startswith("filter:"):
        return FilterTrunkExtractor(load_filter_checkpoint(spec.split(":", 1)[1]))
    raise ValueError(f"unknown extractor {spec!r}")


def run_quality_eval(
    generator_dir,
    test_manifest: DatasetManifest,
    extractor,
    filter_model: FilterModel | None = None,
    base_seed: int = 0,
    num_workers: int = 1,
    max_attempts: int = 4,
    enhancer: str = "identity",
    sampler: SamplerConfig | None = None,
) -> dict:
    """Generate |test| filtered samples matched to the test histogram; score them.

    Per condition, resamples up to max_attempts times until the filter
    passes; conditions that never pass keep their last draw and are counted
    under unfiltered_fallbacks.
    """
    model, schedule, ckpt_sampler, _ = load_generator_checkpoint(generator_dir)
    sampler = sampler or ckpt_sampler
    vocab = model.vocab
    conditions = [
        ConditionPair(s.class_id, vocab.distance_token(s.distance_m)) for s in test_manifest
    ]
    tau = filter_model.threshold if filter_model is not None else 0.0
    fallbacks = 0
    generated = []
    prev_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        def one(i: int) -> torch.Tensor:
            nonlocal fallbacks
            img = None
            for attempt in range(max_attempts):
                rng = torch.Generator().manual_seed(derive_seed(base_seed, i, attempt))
                img, _ = sample(model, conditions[i], sampler, schedule, rng)
                if filter_model is None:
                    return img
                from .quality import score as filter_score

                if filter_score(filter_model, img) >= tau:
                    return img
            fallbacks += 1
            return img

        from concurrent.futures import ThreadPoolExecutor

        workers = worker_cap(num_workers)
        if workers == 1:
            generated = [one(i) for i in range(len(conditions))]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                generated = list(pool.map(one, range(len(conditions))))
    finally:
        torch.set_num_threads(prev_threads)

    size = generated[0].shape[-1]
    real_images, _, _ = load_split_tensors(
        test_manifest, enhancer=resolve_enhancer(enhancer), target_size=size
    )
    real_u8 = np.stack([denormalize(img) for img in real_images])
    gen_u8 = np.stack([denormalize(img) for img in generated])
    report = compute_metric_report(real_u8, gen_u8, extractor)
    return {
        "metrics": report.to_dict(),
        "sample_count": len(generated),
        "unfiltered_fallbacks": fallbacks,
        "schedule": schedule_to_metadata(schedule),
    }


# ---------------------------------------------------------------- experiments


def _stage(wall_clock: dict, name: str, started: float) -> float:
    now = time.perf_counter()
    wall_clock[name] = round(now - started, 3)
    return now


def run_data_source_comparison(
    cfg: ExperimentConfig, pipeline: Pipeline | None = None
) -> ExperimentReport:
    """Direct-real vs. generator-synthetic training at equal set sizes."""
    wall, t0 = {}, time.perf_counter()
    pipe = pipeline or Pipeline(cfg)
    train_images, train_labels, _ = pipe.real_tensors("train")
    t0 = _stage(wall, "setup", t0)

    budget = cfg.comparison_budget
    real_accs, real_confs, syn_accs, syn_confs, syn_stats = [], [], [], [], []
    filter_on = cfg.filter.enabled
    for seed in cfg.seeds:
        rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "real-subset")))
        idx = stratified_indices(train_labels, min(budget, len(train_images)), rng)
        acc, conf = pipe.fit_and_score(train_images[idx], train_labels[idx], seed)
        real_accs.append(acc)
        real_confs.append(conf)
    t0 = _stage(wall, "direct_real", t0)

    first_seed_synthetic = None
    for seed in cfg.seeds:
        images, labels, stats = pipe.synthetic_set(budget, seed=seed, use_filter=filter_on)
        if first_seed_synthetic is None:
            first_seed_synthetic = images
        acc, conf = pipe.fit_and_score(images, labels, seed)
        syn_accs.append(acc)
        syn_confs.append(conf)
        syn_stats.append(stats)
    t0 = _stage(wall, "synthetic", t0)

    test_images, _, _ = pipe.real_tensors("test")
    real_u8 = np.stack([denormalize(img) for img in test_images])
    gen_u8 = np.stack([denormalize(img) for img in first_seed_synthetic])
    metric_report = compute_metric_report(
        real_u8, gen_u8, RandomProjectionExtractor(num_classes=pipe.vocab.num_classes)
    ).to_dict()
    _stage(wall, "metrics", t0)

    rows = [
        _row_summary("direct-real", real_accs, real_confs, n_train=budget),
        _row_summary("synthetic", syn_accs, syn_confs, n_train=budget, stats=syn_stats),
    ]
    flags = [
        {
            "claim": "training on generated data outperforms direct real training",
            "reproduced": bool(np.mean(syn_accs) > np.mean(real_accs)),
            "synthetic_mean": float(np.mean(syn_accs)),
            "direct_mean": float(np.mean(real_accs)),
        }
    ]
    report = ExperimentReport(
        name="data-source-comparison",
        rows=rows,
        trend_flags=flags,
        config=resolved_config(cfg),
        metric_report=metric_report,
        wall_clock=wall,
    )
    return report


def run_data_budget_sweep(
    cfg: ExperimentConfig, pipeline: Pipeline | None = None
) -> ExperimentReport:
    """Accuracy vs. amount of real data: spent directly or on generator training."""
    wall, t0 = {}, time.perf_counter()
    pipe = pipeline or Pipeline(cfg)
    train_images, train_labels, _ = pipe.real_tensors("train")
    t0 = _stage(wall, "setup", t0)

    rows = []
    curves = {"direct-real": ([], [], []), "synthetic": ([], [], [])}
    for budget in cfg.real_budgets:
        budget = min(budget, len(train_images))
        direct_accs, direct_confs = [], []
        for seed in cfg.seeds:
            rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "budget-real", budget)))
            idx = stratified_indices(train_labels, budget, rng)
            acc, conf = pipe.fit_and_score(train_images[idx], train_labels[idx], seed)
            direct_accs.append(acc)
            direct_confs.append(conf)
        rows.append(
            _row_summary(f"direct-real@{budget}", direct_accs, direct_confs,
                         budget=budget, source="direct-real")
        )

        # generator trained only on this budget's subset
        rng = np.random.Generator(np.random.PCG64(derive_seed(0, "budget-gen-subset", budget)))
        idx = stratified_indices(train_labels, budget, rng)
        sub_manifest = DatasetManifest(
            samples=[s for s in pipe.manifest if s.split == "train"], vocab=pipe.vocab
        ).subset(indices=idx.tolist())
        model, schedule, _ = train_generator(sub_manifest, pipe.train_variant_config("full"))
        syn_accs, syn_confs = [], []
        for seed in cfg.seeds:
            conditions = condition_grid(
                pipe.vocab, cfg.data.distances, cfg.synthetic_count,
                derive_seed(seed, "budget-cond", budget),
            )
            images = sample_batch(
                model, conditions, pipe.sampler_config(), schedule,
                base_seed=derive_seed(seed, "budget-gen", budget),
                num_workers=cfg.num_workers,
            )
            labels = np.array([c.class_token for c in conditions])
            acc, conf = pipe.fit_and_score(torch.stack(images), labels, seed)
            syn_accs.append(acc)
            syn_confs.append(conf)
        rows.append(
            _row_summary(f"synthetic@{budget}", syn_accs, syn_confs,
                         budget=budget, source="synthetic", n_generated=cfg.synthetic_count)
        )
        curves["direct-real"][0].append(budget)
        curves["direct-real"][1].append(float(np.mean(direct_accs)))
        curves["direct-real"][2].append(float(np.std(direct_accs)))
        curves["synthetic"][0].append(budget)
        curves["synthetic"][1].append(float(np.mean(syn_accs)))
        curves["synthetic"][2].append(float(np.std(syn_accs)))
        t0 = _stage(wall, f"budget_{budget}", t0)

    syn_means, direct_means = curves["synthetic"][1], curves["direct-real"][1]
    flags = [
        {
            "claim": "investing real data in the generator beats direct training at the largest budget",
            "reproduced": bool(syn_means[-1] > direct_means[-1]),
        },
        {
            "claim": "generator-synthetic training wins at every budget",
            "reproduced": bool(all(s > d for s, d in zip(syn_means, direct_means))),
        },
    ]
    report = ExperimentReport(
        name="data-budget-sweep",
        rows=rows,
        trend_flags=flags,
        config=resolved_config(cfg),
        wall_clock=wall,
    )
    out_dir = os.path.join(cfg.out_dir, "budget-sweep")
    os.makedirs(out_dir, exist_ok=True)
    _plot_curves(
        os.path.join(out_dir, "accuracy_vs_budget.png"),
        "real training images", curves, "real-data budget sweep",
    )
    return report


def run_synthetic_amount_sweep(
    cfg: ExperimentConfig, pipeline: Pipeline | None = None
) -> ExperimentReport:
    """Accuracy vs. number of synthetic samples from one trained generator."""
    wall, t0 = {}, time.perf_counter()
    pipe = pipeline or Pipeline(cfg)
    pipe.generator("full")
    t0 = _stage(wall, "setup", t0)

    rows = []
    xs, means, stds = [], [], []
    for amount in cfg.synthetic_amounts:
        accs, confs = [], []
        for seed in cfg.seeds:
            images, labels, _ = pipe.synthetic_set(
                amount, seed=derive_seed(seed, "amount", amount),
                use_filter=cfg.filter.enabled,
            )
            acc, conf = pipe.fit_and_score(images, labels, seed)
            accs.append(acc)
            confs.append(conf)
        rows.append(_row_summary(f"synthetic@{amount}", accs, confs, amount=amount))
        xs.append(amount)
        means.append(float(np.mean(accs)))
        stds.append(float(np.std(accs)))
        t0 = _stage(wall, f"amount_{amount}", t0)

    adjacent = [means[i + 1] >= means[i] for i in range(len(means) - 1)]
    flags = [
        {
            "claim": "accuracy is non-decreasing as synthetic data grows (>= 70% of adjacent pairs)",
            "reproduced": bool(adjacent and np.mean(adjacent) >= 0.7),
            "non_decreasing_fraction": float(np.mean(adjacent)) if adjacent else 1.0,
        }
    ]
    report = ExperimentReport(
        name="synthetic-amount-sweep",
        rows=rows,
        trend_flags=flags,
        config=resolved_config(cfg),
        wall_clock=wall,
    )
    out_dir = os.path.join(cfg.out_dir, "amount-sweep")
    os.makedirs(out_dir, exist_ok=True)
    _plot_curves(
        os.path.join(out_dir, "accuracy_vs_amount.png"),
        "synthetic training images", {"synthetic": (xs, means, stds)},
        "synthetic amount sweep",
    )
    return report


def run_ablation(cfg: ExperimentConfig, pipeline: Pipeline | None = None) -> ExperimentReport:
    """Five rows: full, no-enhancer, no-guidance, no-filter, failed-data."""
    wall, t0 = {}, time.perf_counter()
    pipe = pipeline or Pipeline(cfg)
    g = cfg.ablation_generation_count
    rows = []

    ablations = [
        ("full", "full", True, None),
        ("no-enhancer", "no_enhancer", True, None),
        ("no-cfdg", "no_cfdg", True, 0.0),
        ("no-filter", "full", False, None),
    ]
    for label, variant, use_filter, guidance in ablations:
        accs, confs, stats_list = [], [], []
        for seed in cfg.seeds:
            images, labels, stats = pipe.synthetic_set(
                g, seed=derive_seed(seed, "ablation", label),
                use_filter=use_filter, variant=variant,
                exact_count=False, guidance=guidance,
            )
            acc, conf = pipe.fit_and_score(images, labels, seed)
            accs.append(acc)
            confs.append(conf)
            stats_list.append(stats)
        rows.append(_row_summary(label, accs, confs, stats=stats_list))
        t0 = _stage(wall, label, t0)

    rows.append(_failed_data_row(pipe, g))
    t0 = _stage(wall, "failed-data", t0)

    full_mean = rows[0]["accuracy_mean"]
    flags = [
        {
            "claim": f"full pipeline outperforms {rows[i]['label']}",
            "reproduced": bool(full_mean > rows[i]["accuracy_mean"])
            if rows[i]["accuracy_mean"] is not None
            else None,
        }
        for i in range(1, 4)
    ]
    failed_acc = rows[4]["accuracy_mean"]
    chance = 1.0 / max(2, rows[4].get("n_classes") or pipe.vocab.num_classes)
    flags.append(
        {
            "claim": "class information stays recognizable even in failed generations",
            "reproduced": bool(failed_acc is not None and failed_acc > 2 * chance),
            "failed_accuracy": failed_acc,
            "chance_level": chance,
        }
    )
    return ExperimentReport(
        name="ablation",
        rows=rows,
        trend_flags=flags,
        config=resolved_config(cfg),
        wall_clock=wall,
    )


def _failed_data_row(pipe: Pipeline, generation_count: int) -> dict:
    """Recognizer trained and tested on oracle-failed generations only."""
    cfg = pipe.cfg
    model, schedule, _ = pipe.generator("full")
    conditions = condition_grid(
        pipe.vocab, cfg.data.distances, 2 * generation_count, derive_seed(0, "failed-cond")
    )
    images = sample_batch(
        model, conditions, pipe.sampler_config(), schedule,
        base_seed=derive_seed(0, "failed-gen"), num_workers=cfg.num_workers,
    )
    world = cfg.data.toyworld()
    failed_imgs, failed_labels = [], []
    for img, cond in zip(images, conditions):
        arr = denormalize(img).transpose(1, 2, 0)
        verdict = toy_quality_label(
            arr, cond.class_token,
            expected_distance=pipe.vocab.token_distance(cond.distance_token),
            config=world,
        )
        if not verdict.passed:
            failed_imgs.append(img)
            failed_labels.append(cond.class_token)
    failed_labels = np.asarray(failed_labels)

    present = [
        c for c in range(pipe.vocab.num_classes)
        if np.sum(failed_labels == c) >= 4
    ]
    if len(present) < 2:
        return {
            "label": "failed-data",
            "accuracy_mean": None,
            "accuracy_std": None,
            "n_seeds": 0,
            "per_seed_accuracy": [],
            "confusions": [],
            "note": f"only {len(failed_imgs)} failed generations; not enough classes",
        }
    remap = {c: i for i, c in enumerate(present)}
    keep = np.isin(failed_labels, present)
    imgs = torch.stack([im for im, k in zip(failed_imgs, keep) if k])
    labels = np.array([remap[c] for c in failed_labels[keep]])
    # alternate within each class so both halves cover every class
    train_idx = np.zeros(len(labels), dtype=bool)
    for c in range(len(present)):
        where = np.nonzero(labels == c)[0]
        train_idx[where[: len(where) // 2]] = True
    rc = dataclasses.replace(pipe.recognizer_config(), num_classes=len(present))
    accs, confs = [], []
    for seed in cfg.seeds:
        model_r = train_recognizer(imgs[torch.from_numpy(train_idx)], labels[train_idx], rc, seed=seed)
        acc, conf = evaluate_recognizer(model_r, imgs[torch.from_numpy(~train_idx)], labels[~train_idx])
        accs.append(acc)
        confs.append(conf)
    row = _row_summary("failed-data", accs, confs)
    row["n_classes"] = len(present)
    row["classes"] = [pipe.vocab.class_name(c) for c in present]
    row["n_failed"] = int(len(failed_imgs))
    return row


EXPERIMENTS = {
    "compare": run_data_source_comparison,
    "budget-sweep": run_data_budget_sweep,
    "amount-sweep": run_synthetic_amount_sweep,
    "ablation": run_ablation,
}


def run_experiment(
    kind: str, cfg: ExperimentConfig, pipeline: Pipeline | None = None
) -> ExperimentReport:
    if kind not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {kind!r}; choose from {sorted(EXPERIMENTS)}")
    out_dir = os.path.join(cfg.out_dir, kind)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.json"), "w", encoding="utf-8") as fh:
        json.dump(resolved_config(cfg), fh, indent=2)
    report = EXPERIMENTS[kind](cfg, pipeline)
    report.save(out_dir)
    logger.info("experiment %s written to %s", kind, out_dir)
    return report
