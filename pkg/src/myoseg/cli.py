"""Command line entry point.

Subcommands cover the whole pipeline: ``generate`` a phantom dataset,
``train-dae`` / ``train-assn`` / ``train-prsn`` for the three training stages,
``predict`` (full cascade) and ``predict-lv`` (stage one only), ``evaluate``
predictions against gold labels, and ``report`` to run the ablation studies.

Option precedence: an explicit command line flag beats the same key in a
``--config`` JSON file, which beats the built-in default.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checkpoint as ckpt
from .anatomy import ANATOMY_VARIANTS, extract_candidate, train_anatomy
from .dae import CorruptionSpec, train_dae
from .data import (
    lv_mask_from_labels,
    load_split,
    read_case,
    read_labels,
    read_manifest,
)
from .errors import ConfigError
from .experiments import (
    ExperimentConfig,
    render_report,
    run_anatomy_ablation,
    run_pathology_ablation,
)
from .losses import LossWeights
from .metrics import MetricsRecord, aggregate, evaluate_case
from .pathology import PATHOLOGY_VARIANTS, predict_labels, train_pathology
from .phantom import PhantomParams, generate_dataset
from .trainer import TrainConfig
from .viz import overlay_labels, save_png, side_by_side


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return cfg


def _resolve(args, config: dict, key: str, default):
    """flag > config file > default (flags are declared with default=None)."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _train_config(args, config) -> TrainConfig:
    return TrainConfig(
        epochs=int(_resolve(args, config, "epochs", 20)),
        batch_size=int(_resolve(args, config, "batch-size", 8)),
        lr=float(_resolve(args, config, "lr", 1e-3)),
        seed=int(_resolve(args, config, "seed", 0)),
        base_channels=int(_resolve(args, config, "base-channels", 16)),
        latent_dim=int(_resolve(args, config, "latent-dim", 64)),
    )


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--config", help="JSON file with defaults for the flags below")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--base-channels", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--split", default="train", choices=("train", "val", "test", "all"),
                   help="which split to train on (default train)")


def _train_cases(args):
    if args.split == "all":
        from .data import read_dataset

        return read_dataset(args.data)
    return load_split(args.data, args.split)


def _find_case(data_dir, case_id: str):
    case_dir = Path(data_dir) / case_id
    if not case_dir.is_dir():
        raise ConfigError(f"no case directory {case_dir}")
    return read_case(case_dir)


def _cmd_generate(args) -> int:
    config = _load_config(args.config)
    overrides = dict(config.get("params", {}))
    if args.experiment_corruptions:
        from .experiments import EXPERIMENT_CORRUPTIONS

        for k, v in EXPERIMENT_CORRUPTIONS.items():
            overrides.setdefault(k, v)
    params = PhantomParams(
        image_size=int(_resolve(args, config, "image-size", 128)),
        seed=int(_resolve(args, config, "seed", 0)),
        **overrides,
    )
    n = int(_resolve(args, config, "n-cases", 45))
    _, manifest = generate_dataset(params, n, out_dir=args.out)
    sizes = {k: len(v) for k, v in manifest["splits"].items()}
    print(f"wrote {n} cases to {args.out} (splits {sizes})")
    return 0


def _cmd_train_dae(args) -> int:
    config = _load_config(args.config)
    cases = _train_cases(args)
    cfg = _train_config(args, config)
    spec = CorruptionSpec(seed=int(_resolve(args, config, "corruption-seed", cfg.seed)))
    net, log = train_dae(cases, cfg, spec)
    path = ckpt.save_checkpoint(args.out, net, "dae", ckpt.train_metadata(log))
    print(f"trained shape prior for {log.epochs} epochs "
          f"(final loss {log.loss_history[-1]:.5f}); saved {path}")
    return 0


def _cmd_train_assn(args) -> int:
    config = _load_config(args.config)
    cases = _train_cases(args)
    cfg = _train_config(args, config)
    dae_net = None
    if args.variant == "full":
        if not args.dae_ckpt:
            raise ConfigError("variant 'full' requires --dae-ckpt")
        dae_net, _ = ckpt.load_checkpoint(args.dae_ckpt, expected_kind="dae")
    beta = float(_resolve(args, config, "beta", LossWeights().beta))
    net, log = train_anatomy(cases, args.variant, cfg,
                             weights=LossWeights(beta=beta), dae_net=dae_net)
    path = ckpt.save_checkpoint(args.out, net, "anatomy", ckpt.train_metadata(log))
    print(f"trained anatomy/{args.variant} for {log.epochs} epochs "
          f"(final loss {log.loss_history[-1]:.5f}); saved {path}")
    return 0


def _candidates_for(args, cases, want: str):
    if args.gold_candidates:
        return [lv_mask_from_labels(lab) for _, lab in cases]
    if not args.assn_ckpt:
        raise ConfigError(f"{want} needs --assn-ckpt (or --gold-candidates)")
    assn_net, _ = ckpt.load_checkpoint(args.assn_ckpt, expected_kind="anatomy")
    dae_net = None
    refine = not args.no_refine
    if refine:
        if not args.dae_ckpt:
            raise ConfigError("candidate refinement needs --dae-ckpt (or pass --no-refine)")
        dae_net, _ = ckpt.load_checkpoint(args.dae_ckpt, expected_kind="dae")
    return [extract_candidate(assn_net, img, dae_net=dae_net, refine=refine)[1]
            for img, _ in cases]


def _cmd_train_prsn(args) -> int:
    config = _load_config(args.config)
    cases = _train_cases(args)
    cfg = _train_config(args, config)
    spec = PATHOLOGY_VARIANTS[args.variant]
    candidates = _candidates_for(args, cases, f"variant {args.variant!r}") if spec.masked else None
    weights = LossWeights(
        lambda_bssfp=float(_resolve(args, config, "lambda-bssfp", LossWeights().lambda_bssfp)),
        lambda_lge=float(_resolve(args, config, "lambda-lge", LossWeights().lambda_lge)),
        lambda_t2=float(_resolve(args, config, "lambda-t2", LossWeights().lambda_t2)),
    )
    net, log = train_pathology(cases, args.variant, cfg, weights, candidates=candidates)
    kind = "pathology" if spec.fusion is not None else "pathology-single"
    path = ckpt.save_checkpoint(args.out, net, kind,
                                {**ckpt.train_metadata(log), "variant": args.variant})
    print(f"trained pathology/{args.variant} for {log.epochs} epochs "
          f"(final loss {log.loss_history[-1]:.5f}); saved {path}")
    return 0


def _cmd_predict_lv(args) -> int:
    image, labels = _find_case(args.data, args.case)
    net, _ = ckpt.load_checkpoint(args.ckpt, expected_kind="anatomy")
    dae_net = None
    refine = not args.no_refine
    if refine:
        if not args.dae_ckpt:
            raise ConfigError("refined prediction needs --dae-ckpt (or pass --no-refine)")
        dae_net, _ = ckpt.load_checkpoint(args.dae_ckpt, expected_kind="dae")
    _, cand = extract_candidate(net, image, dae_net=dae_net, refine=refine,
                                threshold=args.threshold)
    rec = evaluate_case(image.id, cand, labels)
    panel = side_by_side([
        overlay_labels(image.bssfp, lv_mask_from_labels(labels)),
        overlay_labels(image.bssfp, cand),
    ])
    save_png(panel, args.overlay)
    print(f"case {image.id}: LV dice {rec.dice_lv:.4f}, HD {rec.hd_lv_mm:.2f} mm; "
          f"overlay (gold | predicted) saved to {args.overlay}")
    return 0


def _cmd_predict(args) -> int:
    from .data import write_labels
    from .pathology import predict_pathology

    if args.case:
        case_ids = [args.case]
    else:
        case_ids = read_manifest(args.data)["splits"][args.split]
    assn_net, _ = ckpt.load_checkpoint(args.assn_ckpt, expected_kind="anatomy")
    header = ckpt.read_header(args.prsn_ckpt)
    variant = header.get("metadata", {}).get("variant", "full")
    expected = "pathology" if PATHOLOGY_VARIANTS[variant].fusion is not None else "pathology-single"
    prsn_net, _ = ckpt.load_checkpoint(args.prsn_ckpt, expected_kind=expected)
    dae_net = None
    refine = not args.no_refine
    if refine:
        if not args.dae_ckpt:
            raise ConfigError("refined prediction needs --dae-ckpt (or pass --no-refine)")
        dae_net, _ = ckpt.load_checkpoint(args.dae_ckpt, expected_kind="dae")
    out_dir = Path(args.out_dir)
    for case_id in case_ids:
        image, _ = _find_case(args.data, case_id)
        pred, cand = predict_pathology(assn_net, prsn_net, image, dae_net=dae_net,
                                       variant=variant, refine=refine)
        write_labels(out_dir, case_id, pred)
        if args.overlays:
            panel = side_by_side([
                overlay_labels(image.bssfp, pred),
                overlay_labels(image.lge, pred),
                overlay_labels(image.t2, pred),
            ])
            save_png(panel, out_dir / case_id / "overlay.png")
    print(f"predicted {len(case_ids)} case(s) with pathology/{variant} into {out_dir}")
    return 0


def _cmd_evaluate(args) -> int:
    import csv

    pred_root = Path(args.pred_dir)
    case_dirs = sorted(d for d in pred_root.iterdir()
                       if d.is_dir() and (d / "meta.json").exists())
    if not case_dirs:
        raise ConfigError(f"no predictions under {pred_root}")
    predicted_classes = None
    if args.classes:
        predicted_classes = tuple(int(c) for c in args.classes.split(","))
    records = []
    for d in case_dirs:
        pred = read_labels(d)
        _, gold = _find_case(args.data, d.name)
        records.append(evaluate_case(d.name, pred, gold, predicted_classes=predicted_classes))
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["case_id", *MetricsRecord.FIELDS],
                                lineterminator="\n")
        writer.writeheader()
        for rec in records:
            writer.writerow(rec.as_row())
    parts = []
    for metric in MetricsRecord.FIELDS:
        mean, _, n = aggregate(records, metric)
        if n:
            parts.append(f"{metric} {mean:.4f} (n={n})")
    print(f"evaluated {len(records)} case(s): " + ", ".join(parts))
    print(f"per-case table written to {args.out}")
    return 0


def _cmd_report(args) -> int:
    config = _load_config(args.config)
    seeds = _resolve(args, config, "seeds", "0,1,2,3,4")
    if isinstance(seeds, str):
        seeds = tuple(int(s) for s in seeds.split(","))
    else:
        seeds = tuple(int(s) for s in seeds)
    cfg = ExperimentConfig(
        seeds=seeds,
        n_cases=int(_resolve(args, config, "n-cases", 45)),
        image_size=int(_resolve(args, config, "image-size", 128)),
        dae_epochs=int(_resolve(args, config, "dae-epochs", ExperimentConfig.dae_epochs)),
        assn_epochs=int(_resolve(args, config, "assn-epochs", ExperimentConfig.assn_epochs)),
        prsn_epochs=int(_resolve(args, config, "prsn-epochs", ExperimentConfig.prsn_epochs)),
        batch_size=int(_resolve(args, config, "batch-size", 8)),
        lr=float(_resolve(args, config, "lr", 1e-3)),
        base_channels=int(_resolve(args, config, "base-channels", 16)),
        latent_dim=int(_resolve(args, config, "latent-dim", 64)),
        candidate_source=_resolve(args, config, "candidate-source", "predicted"),
        phantom_overrides=config.get("phantom_overrides", {}),
    )
    results = {}
    if args.study in ("anatomy", "both"):
        results["anatomy"] = run_anatomy_ablation(cfg)
    if args.study in ("pathology", "both"):
        results["pathology"] = run_pathology_ablation(cfg)
    report = render_report(results, args.out_dir)
    for name in sorted(results):
        for row in results[name].summary_rows():
            print(f"[{name}] " + ", ".join(f"{k}={v}" for k, v in row.items()))
    print(f"report written to {report}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="myoseg",
        description="Cascade multi-sequence myocardial pathology segmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config; generator params under 'params'")
    p.add_argument("--n-cases", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--image-size", type=int)
    p.add_argument("--experiment-corruptions", action="store_true",
                   help="apply the ablation studies' corruption mix")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train-dae", help="pretrain the shape prior auto-encoder")
    _add_train_flags(p)
    p.add_argument("--corruption-seed", type=int)
    p.set_defaults(func=_cmd_train_dae)

    p = sub.add_parser("train-assn", help="train an anatomy segmentation variant")
    _add_train_flags(p)
    p.add_argument("--variant", default="full", choices=ANATOMY_VARIANTS)
    p.add_argument("--dae-ckpt", help="shape prior checkpoint (required for 'full')")
    p.add_argument("--beta", type=float, help="shape prior loss weight")
    p.set_defaults(func=_cmd_train_assn)

    p = sub.add_parser("train-prsn", help="train a pathology segmentation variant")
    _add_train_flags(p)
    p.add_argument("--variant", default="full", choices=tuple(PATHOLOGY_VARIANTS))
    p.add_argument("--assn-ckpt", help="anatomy checkpoint for candidate masks")
    p.add_argument("--dae-ckpt", help="shape prior checkpoint for candidate refinement")
    p.add_argument("--gold-candidates", action="store_true",
                   help="use gold LV masks instead of stage-one predictions")
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--lambda-bssfp", type=float)
    p.add_argument("--lambda-lge", type=float)
    p.add_argument("--lambda-t2", type=float)
    p.set_defaults(func=_cmd_train_prsn)

    p = sub.add_parser("predict-lv", help="stage one only: LV candidate for one case")
    p.add_argument("--ckpt", required=True, help="anatomy checkpoint")
    p.add_argument("--case", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--overlay", required=True, help="output PNG path")
    p.add_argument("--dae-ckpt")
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=_cmd_predict_lv)

    p = sub.add_parser("predict", help="full cascade prediction")
    p.add_argument("--assn-ckpt", required=True)
    p.add_argument("--prsn-ckpt", required=True)
    p.add_argument("--dae-ckpt")
    p.add_argument("--data", required=True)
    p.add_argument("--case", help="single case id (default: whole split)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--overlays", action="store_true", help="also write overlay PNGs")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold labels")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--classes", help="comma-separated class codes the model emits")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="run the ablation studies and write the report")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--study", default="both", choices=("anatomy", "pathology", "both"))
    p.add_argument("--config")
    p.add_argument("--seeds", help="comma-separated, e.g. 0,1,2,3,4")
    p.add_argument("--n-cases", type=int)
    p.add_argument("--image-size", type=int)
    p.add_argument("--dae-epochs", type=int)
    p.add_argument("--assn-epochs", type=int)
    p.add_argument("--prsn-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--base-channels", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--candidate-source", choices=("predicted", "gold"))
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
