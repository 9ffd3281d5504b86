"""Stage two: scar and edema inside the candidate region, with gate readout.

Uses gold candidate masks so the demo isolates the fusion behaviour from
stage-one quality. After training, prints the per-level channel-attention
gate statistics for one case: each fused decoder level carries one gate per
concatenated channel, all strictly inside (0, 1).
"""

import argparse
from pathlib import Path

import numpy as np
import torch

from myoseg.data import lv_mask_from_labels
from myoseg.experiments import experiment_phantom_params
from myoseg.losses import LossWeights
from myoseg.metrics import evaluate_case
from myoseg.pathology import PATHOLOGY_VARIANTS, predict_labels, train_pathology, variant_input
from myoseg.phantom import generate_dataset
from myoseg.trainer import TrainConfig
from myoseg.viz import overlay_labels, save_png, side_by_side


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_out/pathology_fusion")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)

    cases, manifest = generate_dataset(experiment_phantom_params(args.seed), 27)
    by_id = {img.id: (img, lab) for img, lab in cases}
    train_cases = [by_id[i] for i in manifest["splits"]["train"]]
    test_cases = [by_id[i] for i in manifest["splits"]["test"]][:5]

    candidates = [lv_mask_from_labels(lab) for _, lab in train_cases]
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed)
    print(f"training pathology net (channel-attention fusion), {cfg.epochs} epochs ...")
    net, log = train_pathology(train_cases, "full", cfg, LossWeights(), candidates=candidates)
    print(f"  {log.wall_time_s:.0f}s, final loss {log.loss_history[-1]:.5f}")

    for img, lab in test_cases:
        cand = lv_mask_from_labels(lab)
        pred = predict_labels(net, img, "full", cand)
        rec = evaluate_case(img.id, pred, lab)
        print(f"  {img.id}: scar dice {rec.dice_scar:.3f}, "
              f"scar+edema dice {rec.dice_scar_edema:.3f}")
        panel = side_by_side([
            overlay_labels(img.lge, lab, alpha=0.6),
            overlay_labels(img.lge, pred, alpha=0.6),
        ])
        save_png(panel, out / f"{img.id}.png")

    # gate statistics for the first test case
    img, lab = test_cases[0]
    x = torch.from_numpy(
        variant_input(PATHOLOGY_VARIANTS["full"], img, lv_mask_from_labels(lab)))[None]
    net.eval()
    with torch.no_grad():
        _, gates = net(x, return_gates=True)
    print(f"channel-attention gates for {img.id}:")
    for lvl, g in enumerate(gates):
        arr = g.numpy().ravel()
        print(f"  level {lvl}: {arr.size} channels, "
              f"min {arr.min():.3f} max {arr.max():.3f} mean {arr.mean():.3f}")
    print(f"panels in {out} (gold | predicted, on LGE)")


if __name__ == "__main__":
    main()
