"""Acceptance gate: nine end-to-end criteria, one test each.

Every test prints one `ACCEPTANCE C<n>: PASS/FAIL` line straight to the
terminal (capture disabled) so the verdicts are visible in any pytest run.
The later criteria retrain everything from scratch at full desk scale; the
whole module is CPU-bound for roughly an hour and a half.

C1  dice / Hausdorff match independent brute-force oracles exactly
C2  finite-difference gradient checks on losses and the fusion block
C3  composite losses collapse to their plain forms at zero weights
C4  shape prior reconstruction quality on corrupted held-out masks
C5  anatomy table ordering across 5 seeds
C6  pathology table ordering across 5 seeds
C7  gate range, containment, softmax normalization invariants
C8  bit-identical pipeline double run
C9  end-to-end smoke through the command line
"""

import csv
import math
import time

import numpy as np
import pytest
import torch

from myoseg.anatomy import train_anatomy
from myoseg.checkpoint import checkpoint_bytes
from myoseg.cli import main
from myoseg.dae import (
    CorruptionSpec,
    DenoisingAutoencoder,
    corrupt_label,
    dae_forward,
    train_dae,
)
from myoseg.data import CLASS_EDEMA, CLASS_SCAR, lv_mask_from_labels
from myoseg.experiments import (
    ExperimentConfig,
    run_anatomy_ablation,
    run_pathology_ablation,
)
from myoseg.fusion import ChannelAttentionFusion
from myoseg.losses import (
    LossWeights,
    assn_total_loss,
    one_hot_targets,
    prsn_total_loss,
    soft_dice_loss,
    soft_dice_loss_binary,
)
from myoseg.metrics import dice_score, hausdorff_distance
from myoseg.pathology import PathologyNet, predict_labels, train_pathology
from myoseg.phantom import PhantomParams, generate_dataset
from myoseg.trainer import TrainConfig


def _verdict(capfd, n: int, ok: bool, detail: str = ""):
    with capfd.disabled():
        suffix = f"  ({detail})" if detail else ""
        print(f"\nACCEPTANCE C{n}: {'PASS' if ok else 'FAIL'}{suffix}")
    assert ok, f"criterion C{n} failed {detail}"


# --- C1 ------------------------------------------------------------------

def _brute_dice(p: np.ndarray, g: np.ndarray) -> float:
    inter = 0
    np_, ng = 0, 0
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            if p[i, j]:
                np_ += 1
            if g[i, j]:
                ng += 1
            if p[i, j] and g[i, j]:
                inter += 1
    return 1.0 if np_ + ng == 0 else 2.0 * inter / (np_ + ng)


def _brute_boundary(m: np.ndarray):
    h, w = m.shape
    pts = []
    for i in range(h):
        for j in range(w):
            if not m[i, j]:
                continue
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == 0 and dj == 0:
                        continue
                    ii, jj = i + di, j + dj
                    if ii < 0 or jj < 0 or ii >= h or jj >= w or not m[ii, jj]:
                        break
                else:
                    continue
                break
            else:
                continue
            pts.append((i, j))
    return pts


def _brute_hausdorff(p: np.ndarray, g: np.ndarray, spacing) -> float:
    dy, dx = float(spacing[0]), float(spacing[1])
    pb = _brute_boundary(p)
    gb = _brute_boundary(g)

    def directed(src, dst):
        di = np.asarray([q[0] for q in dst], dtype=np.float64)
        dj = np.asarray([q[1] for q in dst], dtype=np.float64)
        worst = 0.0
        for (i, j) in src:
            d2 = (dy * (i - di)) ** 2 + (dx * (j - dj)) ** 2
            worst = max(worst, float(d2.min()))
        return worst

    return float(np.sqrt(max(directed(pb, gb), directed(gb, pb))))


def test_c1_metric_oracles(capfd):
    rng = np.random.default_rng(11)
    t0 = time.monotonic()
    n_pairs = 200
    for k in range(n_pairs):
        h = int(rng.integers(1, 17))
        w = int(rng.integers(1, 17))
        density = rng.uniform(0.05, 0.9)
        p = rng.random((h, w)) < density
        g = rng.random((h, w)) < density
        assert dice_score(p, g) == _brute_dice(p, g)
        if not p.any():
            p[rng.integers(h), rng.integers(w)] = True
        if not g.any():
            g[rng.integers(h), rng.integers(w)] = True
        spacing = (float(rng.uniform(0.5, 3.0)), float(rng.uniform(0.5, 3.0)))
        assert hausdorff_distance(p, g, spacing) == _brute_hausdorff(p, g, spacing)
    # degenerate corner stays exact too
    z = np.zeros((4, 4), dtype=bool)
    assert dice_score(z, z) == _brute_dice(z, z) == 1.0
    wall = time.monotonic() - t0
    _verdict(capfd, 1, wall < 10.0, f"{n_pairs} pairs exact in {wall:.1f}s")


# --- C2 ------------------------------------------------------------------

def _max_rel_err(x: torch.Tensor, scalar_fn, n_coords: int, rng) -> float:
    """Central finite differences against autograd on sampled coordinates."""
    x = x.detach().clone().requires_grad_(True)
    loss = scalar_fn(x)
    (grad,) = torch.autograd.grad(loss, x)
    worst = 0.0
    flat = x.detach().reshape(-1)
    for _ in range(n_coords):
        idx = int(rng.integers(flat.numel()))
        h = 1e-6 * max(1.0, abs(float(flat[idx])))
        for sign, store in ((1.0, "hi"), (-1.0, "lo")):
            bumped = flat.clone()
            bumped[idx] += sign * h
            val = float(scalar_fn(bumped.reshape(x.shape)))
            if store == "hi":
                hi = val
            else:
                lo = val
        fd = (hi - lo) / (2.0 * h)
        auto = float(grad.reshape(-1)[idx])
        denom = max(abs(fd) + abs(auto), 1e-10)
        worst = max(worst, abs(fd - auto) / denom)
    return worst


def test_c2_gradient_checks(capfd):
    torch.manual_seed(2)
    rng = np.random.default_rng(2)
    t0 = time.monotonic()
    n_inst = 20
    tight, loose = 1e-4, 1e-3
    worst = {"dice": 0.0, "prsn": 0.0, "cafb": 0.0, "assn": 0.0}

    for _ in range(n_inst):
        pred = torch.rand(2, 3, 6, 6, dtype=torch.float64) * 0.9 + 0.05
        target = one_hot_targets(rng.integers(0, 3, size=(2, 6, 6)), 3, dtype=torch.float64)
        worst["dice"] = max(worst["dice"], _max_rel_err(
            pred, lambda x: soft_dice_loss(x, target, class_indices=(1, 2)), 3, rng))

    for _ in range(n_inst):
        shapes = {"main": 4, "bssfp": 2, "lge": 3, "t2": 3}
        probs = {b: torch.rand(2, k, 5, 5, dtype=torch.float64) + 0.05
                 for b, k in shapes.items()}
        targets = {b: one_hot_targets(rng.integers(0, k, size=(2, 5, 5)), k,
                                      dtype=torch.float64)
                   for b, k in shapes.items()}
        weights = LossWeights(lambda_bssfp=0.3, lambda_lge=0.5, lambda_t2=0.5)

        def prsn_fn(x):
            return prsn_total_loss((x, targets["main"]),
                                   (probs["bssfp"], targets["bssfp"]),
                                   (probs["lge"], targets["lge"]),
                                   (probs["t2"], targets["t2"]), weights)

        worst["prsn"] = max(worst["prsn"], _max_rel_err(probs["main"], prsn_fn, 3, rng))

    cafb = ChannelAttentionFusion((3, 3, 3, 3), 4, reduction=2).double()
    for _ in range(n_inst):
        feats = [torch.randn(2, 3, 4, 4, dtype=torch.float64) for _ in range(4)]
        w_out = torch.randn(2, 4, 4, 4, dtype=torch.float64)

        def cafb_fn(x):
            return (w_out * cafb((x, feats[1], feats[2], feats[3]))).sum()

        worst["cafb"] = max(worst["cafb"], _max_rel_err(feats[0], cafb_fn, 3, rng))

    dae = DenoisingAutoencoder(image_size=16, base_channels=4, latent_dim=8).double()
    dae.eval()
    for p in dae.parameters():
        p.requires_grad_(False)
    weights = LossWeights(beta=0.2)
    for _ in range(n_inst):
        seg = torch.rand(1, 1, 16, 16, dtype=torch.float64) * 0.9 + 0.05
        gold = torch.from_numpy(
            rng.integers(0, 2, size=(1, 1, 16, 16)).astype(np.float64))

        def assn_fn(x):
            return assn_total_loss(x, dae_forward(dae, x), gold, weights)

        worst["assn"] = max(worst["assn"], _max_rel_err(seg, assn_fn, 3, rng))

    wall = time.monotonic() - t0
    ok = (worst["dice"] < tight and worst["prsn"] < tight and worst["cafb"] < tight
          and worst["assn"] < loose and wall < 60.0)
    _verdict(capfd, 2, ok,
             f"max rel err dice {worst['dice']:.2e}, prsn {worst['prsn']:.2e}, "
             f"cafb {worst['cafb']:.2e}, full-objective {worst['assn']:.2e}, {wall:.0f}s")


# --- C3 ------------------------------------------------------------------

def test_c3_reduction_identities(capfd):
    torch.manual_seed(3)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(25):
        seg = torch.rand(2, 1, 8, 8, dtype=torch.float64)
        gold = torch.from_numpy(rng.integers(0, 2, size=(2, 1, 8, 8)).astype(np.float64))
        recon = torch.rand(2, 1, 8, 8, dtype=torch.float64)
        a = assn_total_loss(seg, recon, gold, LossWeights(beta=0.0))
        b = soft_dice_loss_binary(seg, gold)
        worst = max(worst, abs(float(a) - float(b)))

        shapes = {"main": 4, "bssfp": 2, "lge": 3, "t2": 3}
        pairs = {}
        for name, k in shapes.items():
            probs = torch.rand(2, k, 6, 6, dtype=torch.float64) + 0.01
            target = one_hot_targets(rng.integers(0, k, size=(2, 6, 6)), k,
                                     dtype=torch.float64)
            pairs[name] = (probs, target)
        zero = LossWeights(lambda_bssfp=0.0, lambda_lge=0.0, lambda_t2=0.0)
        c = prsn_total_loss(pairs["main"], pairs["bssfp"], pairs["lge"], pairs["t2"], zero)
        d = soft_dice_loss(pairs["main"][0], pairs["main"][1],
                           class_indices=range(1, shapes["main"]))
        worst = max(worst, abs(float(c) - float(d)))
    _verdict(capfd, 3, worst <= 1e-10, f"max deviation {worst:.2e}")


# --- C4 ------------------------------------------------------------------

def test_c4_shape_prior_reconstruction(capfd):
    t0 = time.monotonic()
    cases, manifest = generate_dataset(PhantomParams(seed=0), 45)
    by_id = {img.id: (img, lab) for img, lab in cases}
    train_cases = [by_id[i] for i in manifest["splits"]["train"]]
    held_out = [by_id[i] for i in manifest["splits"]["test"]]
    assert len(train_cases) == 20

    cfg = TrainConfig(epochs=1200, batch_size=8, lr=1e-3, seed=0,
                      base_channels=16, latent_dim=64)
    net, _ = train_dae(train_cases, cfg, CorruptionSpec(seed=0))

    corrupted, clean = [], []
    for i, (_, lab) in enumerate(held_out):
        gold = lv_mask_from_labels(lab)
        clean.append(dice_score(
            dae_forward(net, gold.mask.astype(np.float32)) > 0.5, gold.mask))
        noisy = corrupt_label(gold, CorruptionSpec(), np.random.default_rng([9, i]))
        corrupted.append(dice_score(
            dae_forward(net, noisy.astype(np.float32)) > 0.5, gold.mask))
    wall = time.monotonic() - t0
    mean_corr = float(np.mean(corrupted))
    mean_clean = float(np.mean(clean))
    ok = mean_corr >= 0.95 and wall < 600.0
    _verdict(capfd, 4, ok,
             f"corrupted mean dice {mean_corr:.4f} (clean {mean_clean:.4f}), "
             f"{len(held_out)} held-out masks, {wall:.0f}s")


# --- C5 ------------------------------------------------------------------

def test_c5_anatomy_table_ordering(capfd):
    cfg = ExperimentConfig()
    result = run_anatomy_ablation(cfg)
    assert not result.failures, result.failures
    dice_full, _, n1 = result.cross_seed("full", "dice_lv")
    dice_bssfp, _, n2 = result.cross_seed("bssfp-unet", "dice_lv")
    hd_full, _, n3 = result.cross_seed("full", "hd_lv_mm")
    hd_wo, _, n4 = result.cross_seed("wo-dae", "hd_lv_mm")
    assert n1 == n2 == n3 == n4 == len(cfg.seeds)
    ok = (dice_full >= dice_bssfp and hd_full <= hd_wo
          and result.wall_time_s < 45 * 60)
    _verdict(capfd, 5, ok,
             f"dice {dice_full:.4f} vs bssfp-unet {dice_bssfp:.4f}; "
             f"hd {hd_full:.2f} vs wo-dae {hd_wo:.2f} mm; "
             f"{len(cfg.seeds)} seeds in {result.wall_time_s/60:.1f} min")


# --- C6 ------------------------------------------------------------------

def test_c6_pathology_table_ordering(capfd):
    cfg = ExperimentConfig()
    result = run_pathology_ablation(cfg)
    assert not result.failures, result.failures
    scar_full, _, _ = result.cross_seed("full", "dice_scar")
    scar_mfb, _, _ = result.cross_seed("mfb", "dice_scar")
    mono_means = [result.cross_seed(v, "dice_scar")[0] for v in ("lge-only", "t2-only")]
    scar_mono = max(m for m in mono_means if not math.isnan(m))
    se_full, _, _ = result.cross_seed("full", "dice_scar_edema")
    se_fusion_unet, _, _ = result.cross_seed("fusion-unet", "dice_scar_edema")
    ok = (scar_full >= scar_mfb >= scar_mono
          and se_full >= se_fusion_unet
          and result.wall_time_s < 90 * 60)
    _verdict(capfd, 6, ok,
             f"scar {scar_full:.4f} >= mfb {scar_mfb:.4f} >= mono {scar_mono:.4f}; "
             f"scar+edema {se_full:.4f} vs fusion-unet {se_fusion_unet:.4f}; "
             f"{len(cfg.seeds)} seeds in {result.wall_time_s/60:.1f} min")


# --- C7 ------------------------------------------------------------------

def test_c7_structural_invariants(capfd):
    torch.manual_seed(7)
    block = ChannelAttentionFusion((8, 8, 8, 8), 8)
    block.eval()
    lo, hi = 1.0, 0.0
    with torch.no_grad():
        for _ in range(10):
            feats = tuple(torch.randn(100, 8, 6, 6) for _ in range(4))
            g = block.channel_gates(feats)
            lo = min(lo, float(g.min()))
            hi = max(hi, float(g.max()))
    gates_ok = 0.0 < lo and hi < 1.0

    # containment and normalization on real cascade predictions
    params = PhantomParams(seed=7, image_size=64, pool_radius_range=(8.0, 12.0),
                           myo_thickness_range=(5.0, 8.0), center_offset_max=5.0)
    cases, _ = generate_dataset(params, 9)
    cands = [lv_mask_from_labels(lab) for _, lab in cases]
    tc = TrainConfig(epochs=3, batch_size=4, seed=7, base_channels=4, latent_dim=16)
    net, _ = train_pathology(cases, "full", tc, LossWeights(), candidates=cands)
    violations = 0
    for i, (img, _) in enumerate(cases):
        pred = predict_labels(net, img, "full", cands[i])
        outside = ~cands[i].astype_bool()
        pathology = (pred.classes == CLASS_SCAR) | (pred.classes == CLASS_EDEMA)
        violations += int((pathology & outside).sum())

    worst_sum = 0.0
    net.eval()
    with torch.no_grad():
        for _ in range(20):
            x = torch.randn(2, 3, 64, 64)
            outs = net(x)
            for probs in outs.values():
                worst_sum = max(worst_sum, float((probs.sum(dim=1) - 1.0).abs().max()))
    ok = gates_ok and violations == 0 and worst_sum < 1e-5
    _verdict(capfd, 7, ok,
             f"gates in [{lo:.4f}, {hi:.4f}], containment violations {violations}, "
             f"softmax deviation {worst_sum:.1e}")


# --- C8 ------------------------------------------------------------------

def _pipeline_once(root):
    data = root / "data"
    gen = ["generate", "--out", str(data), "--n-cases", "9", "--image-size", "64",
           "--seed", "0"]
    flags = ["--epochs", "2", "--batch-size", "4", "--base-channels", "4",
             "--latent-dim", "16"]
    assert main(gen) == 0
    assert main(["train-dae", "--data", str(data), "--out", str(root / "dae.ckpt"),
                 *flags]) == 0
    assert main(["train-assn", "--data", str(data), "--out", str(root / "assn.ckpt"),
                 "--variant", "full", "--dae-ckpt", str(root / "dae.ckpt"), *flags]) == 0
    assert main(["train-prsn", "--data", str(data), "--out", str(root / "prsn.ckpt"),
                 "--variant", "full", "--gold-candidates", *flags]) == 0
    assert main(["predict", "--assn-ckpt", str(root / "assn.ckpt"),
                 "--prsn-ckpt", str(root / "prsn.ckpt"),
                 "--dae-ckpt", str(root / "dae.ckpt"), "--data", str(data),
                 "--split", "test", "--out-dir", str(root / "pred")]) == 0
    assert main(["evaluate", "--pred-dir", str(root / "pred"), "--data", str(data),
                 "--out", str(root / "metrics.csv")]) == 0
    return {name: (root / name).read_bytes()
            for name in ("dae.ckpt", "assn.ckpt", "prsn.ckpt", "metrics.csv")}


def test_c8_pipeline_determinism(capfd, tmp_path):
    t0 = time.monotonic()
    first = _pipeline_once(tmp_path / "run1")
    second = _pipeline_once(tmp_path / "run2")
    same = {name: first[name] == second[name] for name in first}
    wall = time.monotonic() - t0
    _verdict(capfd, 8, all(same.values()),
             f"bit-identical: {', '.join(f'{k}={v}' for k, v in same.items())}, "
             f"{wall:.0f}s")


# --- C9 ------------------------------------------------------------------

def test_c9_end_to_end_smoke(capfd, tmp_path):
    t0 = time.monotonic()
    data = tmp_path / "data"
    flags = ["--epochs", "2"]
    assert main(["generate", "--out", str(data), "--n-cases", "10", "--seed", "1"]) == 0
    assert main(["train-dae", "--data", str(data), "--out", str(tmp_path / "dae.ckpt"),
                 *flags]) == 0
    assert main(["train-assn", "--data", str(data), "--out", str(tmp_path / "assn.ckpt"),
                 "--variant", "full", "--dae-ckpt", str(tmp_path / "dae.ckpt"),
                 *flags]) == 0
    assert main(["train-prsn", "--data", str(data), "--out", str(tmp_path / "prsn.ckpt"),
                 "--variant", "full", "--gold-candidates", *flags]) == 0
    assert main(["predict", "--assn-ckpt", str(tmp_path / "assn.ckpt"),
                 "--prsn-ckpt", str(tmp_path / "prsn.ckpt"),
                 "--dae-ckpt", str(tmp_path / "dae.ckpt"), "--data", str(data),
                 "--split", "test", "--out-dir", str(tmp_path / "pred")]) == 0
    assert main(["evaluate", "--pred-dir", str(tmp_path / "pred"), "--data", str(data),
                 "--out", str(tmp_path / "metrics.csv")]) == 0

    with open(tmp_path / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows, "evaluate wrote no rows"
    finite = True
    scored = 0
    for row in rows:
        for key, value in row.items():
            if key == "case_id" or value == "N/A":
                continue
            scored += 1
            if not math.isfinite(float(value)):
                finite = False
    wall = time.monotonic() - t0
    ok = finite and scored > 0 and wall < 300.0
    _verdict(capfd, 9, ok,
             f"{len(rows)} cases, {scored} finite metric values, {wall:.0f}s")
