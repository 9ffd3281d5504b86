"""Ablation experiments: anatomy stage and pathology stage comparison tables.

Both studies follow the same plan per seed: generate a fresh phantom dataset,
pretrain the shape prior on the training split, train every variant, evaluate
each case of the held-out split, then aggregate case means per seed and report
mean and sample std across seeds.

The experiment phantoms are deliberately harsher than the generator defaults:
degraded cine contrast, signal-dropout bites, single-modality enhancement
look-alikes and per-case noisy channels. Those corruptions are what separate
the variants; on clean discs every architecture saturates and the comparison
says nothing.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .anatomy import ANATOMY_VARIANTS, extract_candidate, train_anatomy
from .checkpoint import weights_hash
from .dae import CorruptionSpec, train_dae
from .data import lv_mask_from_labels
from .errors import ConfigError, TrainingDivergedError, ValidationError
from .losses import LossWeights
from .metrics import MetricsRecord, N_A, aggregate, evaluate_case
from .pathology import PATHOLOGY_VARIANTS, predict_labels, train_pathology
from .phantom import PhantomParams, generate_dataset
from .trainer import TrainConfig
from .viz import overlay_labels, side_by_side

# Corruption mix used by the comparison tables (see module docstring).
EXPERIMENT_CORRUPTIONS = {
    "bssfp_degrade_prob": 0.35,
    "occlusion_prob": 0.4,
    "lge_distractor_prob": 0.5,
    "t2_distractor_prob": 0.5,
    "modality_noise_boost_prob": 0.5,
}


def experiment_phantom_params(seed: int, image_size: int = 128, **overrides) -> PhantomParams:
    """Phantom parameters for ablation runs: generator defaults plus corruptions."""
    kwargs = dict(EXPERIMENT_CORRUPTIONS)
    kwargs.update(overrides)
    return PhantomParams(image_size=image_size, seed=seed, **kwargs)


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for one ablation study."""

    seeds: tuple = (0, 1, 2, 3, 4)
    n_cases: int = 45
    image_size: int = 128
    dae_epochs: int = 200
    assn_epochs: int = 30
    prsn_epochs: int = 25
    batch_size: int = 8
    lr: float = 1e-3
    base_channels: int = 16
    latent_dim: int = 64
    candidate_source: str = "predicted"  # or "gold": a stage-two ceiling study
    anatomy_variants: tuple = ANATOMY_VARIANTS
    pathology_variants: tuple = tuple(PATHOLOGY_VARIANTS)
    phantom_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be unique, got {self.seeds}")
        if self.n_cases < 3:
            raise ConfigError(f"n_cases must be >= 3, got {self.n_cases}")
        if self.candidate_source not in ("predicted", "gold"):
            raise ConfigError(f"candidate_source must be 'predicted' or 'gold', got {self.candidate_source!r}")
        for v in self.anatomy_variants:
            if v not in ANATOMY_VARIANTS:
                raise ConfigError(f"unknown anatomy variant {v!r}")
        for v in self.pathology_variants:
            if v not in PATHOLOGY_VARIANTS:
                raise ConfigError(f"unknown pathology variant {v!r}")
        # fail fast on bad overrides or epoch counts
        experiment_phantom_params(0, self.image_size, **self.phantom_overrides)
        self.train_config(0, 1)

    def phantom_params(self, seed: int) -> PhantomParams:
        return experiment_phantom_params(seed, self.image_size, **self.phantom_overrides)

    def train_config(self, seed: int, epochs: int) -> TrainConfig:
        return TrainConfig(
            epochs=epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=seed,
            base_channels=self.base_channels,
            latent_dim=self.latent_dim,
        )

    def config_hash(self) -> str:
        canonical = json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


@dataclass
class VariantRun:
    """One (variant, seed) training run with its held-out per-case records."""

    variant: str
    seed: int
    records: list
    train_wall_s: float
    ckpt_hash: str = ""


@dataclass
class AblationResult:
    kind: str  # "anatomy" or "pathology"
    config: ExperimentConfig
    runs: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    overlays: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    def variants(self) -> list:
        seen = []
        for run in self.runs:
            if run.variant not in seen:
                seen.append(run.variant)
        return seen

    def seed_means(self, variant: str, metric: str) -> list:
        """Per-seed case means of one metric for one variant (seed order)."""
        means = []
        for run in self.runs:
            if run.variant != variant:
                continue
            mean, _, n = aggregate(run.records, metric)
            if n:
                means.append(mean)
        return means

    def cross_seed(self, variant: str, metric: str) -> tuple:
        """(mean, std, n_seeds) of the per-seed means; std is ddof=1."""
        import numpy as np

        means = self.seed_means(variant, metric)
        if not means:
            return float("nan"), float("nan"), 0
        arr = np.asarray(means, dtype=float)
        std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        return float(arr.mean()), std, len(arr)

    def summary_rows(self) -> list:
        metrics = (
            ("dice_lv", "hd_lv_mm") if self.kind == "anatomy" else ("dice_scar", "dice_scar_edema")
        )
        rows = []
        for variant in self.variants():
            row = {"variant": variant}
            for m in metrics:
                mean, std, n = self.cross_seed(variant, m)
                row[f"{m}_mean"] = N_A if n == 0 else f"{mean:.4f}"
                row[f"{m}_std"] = N_A if n == 0 else f"{std:.4f}"
                row[f"{m}_seeds"] = n
            rows.append(row)
        return rows


def _split_cases(cfg: ExperimentConfig, seed: int):
    cases, manifest = generate_dataset(cfg.phantom_params(seed), cfg.n_cases)
    by_id = {img.id: (img, lab) for img, lab in cases}
    splits = manifest["splits"]
    return tuple([by_id[i] for i in splits[s]] for s in ("train", "val", "test"))


def run_anatomy_ablation(cfg: ExperimentConfig) -> AblationResult:
    """Train and score the anatomy variants on the validation split, per seed."""
    result = AblationResult(kind="anatomy", config=cfg)
    t0 = time.monotonic()
    for seed in cfg.seeds:
        train_cases, val_cases, _ = _split_cases(cfg, seed)
        dae_net, _ = train_dae(
            train_cases, cfg.train_config(seed, cfg.dae_epochs), CorruptionSpec(seed=seed)
        )
        for variant in cfg.anatomy_variants:
            tcfg = cfg.train_config(seed, cfg.assn_epochs)
            try:
                net, log = train_anatomy(
                    train_cases, variant, tcfg,
                    dae_net=dae_net if variant == "full" else None,
                )
            except TrainingDivergedError as e:
                result.failures.append(f"anatomy/{variant}/seed={seed}: {e}")
                continue
            refine = variant == "full"
            records = []
            for img, lab in val_cases:
                _, cand = extract_candidate(net, img, dae_net=dae_net if refine else None,
                                            refine=refine)
                records.append(evaluate_case(img.id, cand, lab))
            result.runs.append(VariantRun(variant, seed, records, log.wall_time_s,
                                          weights_hash(net, "anatomy")))
            if seed == cfg.seeds[0] and not result.overlays.get(f"anatomy_{variant}"):
                img, lab = val_cases[0]
                _, cand = extract_candidate(net, img, dae_net=dae_net if refine else None,
                                            refine=refine)
                result.overlays[f"anatomy_{variant}"] = side_by_side([
                    overlay_labels(img.bssfp, lv_mask_from_labels(lab)),
                    overlay_labels(img.bssfp, cand),
                ])
    result.wall_time_s = time.monotonic() - t0
    return result


def run_pathology_ablation(cfg: ExperimentConfig) -> AblationResult:
    """Train and score the pathology variants on the test split, per seed.

    Masked variants consume stage-one candidates; with
    ``candidate_source='predicted'`` those come from a freshly trained full
    anatomy stage, exactly as the cascade runs in deployment.
    """
    result = AblationResult(kind="pathology", config=cfg)
    t0 = time.monotonic()
    for seed in cfg.seeds:
        train_cases, _, test_cases = _split_cases(cfg, seed)
        need_masks = any(PATHOLOGY_VARIANTS[v].masked for v in cfg.pathology_variants)
        train_cands = test_cands = None
        dae_net = None
        if need_masks:
            if cfg.candidate_source == "gold":
                train_cands = [lv_mask_from_labels(lab) for _, lab in train_cases]
                test_cands = [lv_mask_from_labels(lab) for _, lab in test_cases]
            else:
                dae_net, _ = train_dae(
                    train_cases, cfg.train_config(seed, cfg.dae_epochs), CorruptionSpec(seed=seed)
                )
                assn_net, _ = train_anatomy(
                    train_cases, "full", cfg.train_config(seed, cfg.assn_epochs), dae_net=dae_net
                )
                train_cands = [extract_candidate(assn_net, img, dae_net=dae_net)[1]
                               for img, _ in train_cases]
                test_cands = [extract_candidate(assn_net, img, dae_net=dae_net)[1]
                              for img, _ in test_cases]
        for variant in cfg.pathology_variants:
            spec = PATHOLOGY_VARIANTS[variant]
            tcfg = cfg.train_config(seed, cfg.prsn_epochs)
            try:
                net, log = train_pathology(
                    train_cases, variant, tcfg, LossWeights(),
                    candidates=train_cands if spec.masked else None,
                )
            except TrainingDivergedError as e:
                result.failures.append(f"pathology/{variant}/seed={seed}: {e}")
                continue
            records = []
            for i, (img, lab) in enumerate(test_cases):
                pred = predict_labels(net, img, variant,
                                      test_cands[i] if spec.masked else None)
                records.append(evaluate_case(img.id, pred, lab,
                                             predicted_classes=spec.predicted_classes))
            kind = "pathology" if spec.fusion is not None else "pathology-single"
            result.runs.append(VariantRun(variant, seed, records, log.wall_time_s,
                                          weights_hash(net, kind)))
            if seed == cfg.seeds[0] and not result.overlays.get(f"pathology_{variant}"):
                img, lab = test_cases[0]
                pred = predict_labels(net, img, variant,
                                      test_cands[0] if spec.masked else None)
                result.overlays[f"pathology_{variant}"] = side_by_side([
                    overlay_labels(img.lge, lab),
                    overlay_labels(img.lge, pred),
                ])
    result.wall_time_s = time.monotonic() - t0
    return result


def write_records_csv(path, result: AblationResult) -> Path:
    """Per-case metric rows for every (variant, seed) run; deterministic bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["variant", "seed", "case_id", "ckpt_hash", "config_hash", *MetricsRecord.FIELDS]
    config_hash = result.config.config_hash()
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for run in result.runs:
            for rec in run.records:
                row = rec.as_row()
                row.update(variant=run.variant, seed=run.seed,
                           ckpt_hash=run.ckpt_hash, config_hash=config_hash)
                writer.writerow(row)
    return path


def write_summary_csv(path, result: AblationResult) -> Path:
    rows = result.summary_rows()
    if not rows:
        raise ValidationError("result has no runs to summarize")
    config_hash = result.config.config_hash()
    for row in rows:
        row["config_hash"] = config_hash
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


def render_report(results: dict, out_dir) -> Path:
    """Write CSV tables, overlay PNGs and a markdown summary for each study.

    ``results`` maps study names (e.g. "anatomy") to result objects; returns
    the path of the markdown report.
    """
    from .viz import save_png

    if not results:
        raise ValidationError("no results to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["# Ablation report", ""]
    for name in sorted(results):
        result = results[name]
        write_records_csv(out_dir / f"{name}_per_case.csv", result)
        write_summary_csv(out_dir / f"{name}_summary.csv", result)
        rows = result.summary_rows()
        lines.append(f"## {name}")
        lines.append("")
        lines.append(f"config hash `{result.config.config_hash()}`, "
                     f"seeds {list(result.config.seeds)}, wall time {result.wall_time_s:.0f}s")
        lines.append("")
        header = list(rows[0])
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "|".join("---" for _ in header) + "|")
        for row in rows:
            lines.append("| " + " | ".join(str(row[h]) for h in header) + " |")
        lines.append("")
        if result.failures:
            lines.append("Failed runs: " + "; ".join(result.failures))
            lines.append("")
        for key in sorted(result.overlays):
            png = save_png(result.overlays[key], out_dir / f"{key}.png")
            lines.append(f"![{key}]({png.name})")
        lines.append("")
    report = out_dir / "report.md"
    report.write_text("\n".join(lines))
    return report
