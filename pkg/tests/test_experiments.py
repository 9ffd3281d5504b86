"""Ablation harness at miniature scale, plus overlay rendering checks."""

import csv

import numpy as np
import pytest

from myoseg.data import CLASS_SCAR, LabelMap
from myoseg.errors import ConfigError, ValidationError
from myoseg.experiments import (
    EXPERIMENT_CORRUPTIONS,
    AblationResult,
    ExperimentConfig,
    experiment_phantom_params,
    render_report,
    run_anatomy_ablation,
    run_pathology_ablation,
    write_records_csv,
    write_summary_csv,
)
from myoseg.metrics import N_A
from myoseg.viz import LABEL_COLORS, overlay_labels, save_png, side_by_side, to_uint8_gray

TINY = dict(
    n_cases=9,
    image_size=64,
    dae_epochs=2,
    assn_epochs=2,
    prsn_epochs=2,
    batch_size=4,
    base_channels=4,
    latent_dim=16,
    phantom_overrides=dict(
        pool_radius_range=(8.0, 12.0),
        myo_thickness_range=(5.0, 8.0),
        center_offset_max=5.0,
    ),
)


def test_config_validation_and_hash():
    cfg = ExperimentConfig(seeds=(0, 1), **TINY)
    assert cfg.config_hash() == ExperimentConfig(seeds=(0, 1), **TINY).config_hash()
    assert cfg.config_hash() != ExperimentConfig(seeds=(0, 2), **TINY).config_hash()
    with pytest.raises(ConfigError):
        ExperimentConfig(seeds=())
    with pytest.raises(ConfigError):
        ExperimentConfig(anatomy_variants=("resnet",))
    with pytest.raises(ConfigError):
        ExperimentConfig(pathology_variants=("gan",))
    with pytest.raises(ConfigError):
        ExperimentConfig(candidate_source="oracle")


def test_experiment_phantom_params_apply_corruptions():
    params = experiment_phantom_params(seed=3)
    assert params.seed == 3
    assert params.bssfp_degrade_prob == EXPERIMENT_CORRUPTIONS["bssfp_degrade_prob"]
    assert params.occlusion_prob == EXPERIMENT_CORRUPTIONS["occlusion_prob"]
    quiet = experiment_phantom_params(seed=3, occlusion_prob=0.0)
    assert quiet.occlusion_prob == 0.0


@pytest.fixture(scope="module")
def anatomy_result():
    cfg = ExperimentConfig(seeds=(0,), **TINY)
    return cfg, run_anatomy_ablation(cfg)


def test_anatomy_ablation_smoke(anatomy_result):
    cfg, result = anatomy_result
    assert result.kind == "anatomy"
    assert not result.failures
    assert result.variants() == list(cfg.anatomy_variants)
    rows = result.summary_rows()
    assert len(rows) == 3  # one table row per variant
    for row in rows:
        assert float(row["dice_lv_mean"]) >= 0.0
        assert row["dice_lv_seeds"] == 1
    for run in result.runs:
        assert len(run.ckpt_hash) == 16
        assert len(run.records) == 1  # 9 cases -> 4/1/4 split, val has 1
    assert result.overlays  # first-seed qualitative panels captured


def test_csv_and_report_outputs(tmp_path, anatomy_result):
    cfg, result = anatomy_result
    per_case = write_records_csv(tmp_path / "per_case.csv", result)
    with open(per_case, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(result.runs)  # one val case per run here
    assert set(rows[0]) >= {"variant", "seed", "case_id", "ckpt_hash", "config_hash",
                            "dice_lv", "hd_lv_mm"}
    assert all(r["config_hash"] == cfg.config_hash() for r in rows)

    summary = write_summary_csv(tmp_path / "summary.csv", result)
    with open(summary, newline="") as fh:
        srows = list(csv.DictReader(fh))
    assert len(srows) == 3
    assert all(r["config_hash"] == cfg.config_hash() for r in srows)

    report = render_report({"anatomy": result}, tmp_path / "report")
    text = report.read_text()
    assert cfg.config_hash() in text
    assert "| variant |" in text
    assert (tmp_path / "report" / "anatomy_summary.csv").exists()
    assert any(p.suffix == ".png" for p in (tmp_path / "report").iterdir())


def test_csv_bytes_deterministic(tmp_path, anatomy_result):
    _, result = anatomy_result
    a = write_records_csv(tmp_path / "a.csv", result)
    b = write_records_csv(tmp_path / "b.csv", result)
    assert a.read_bytes() == b.read_bytes()


def test_pathology_ablation_smoke_gold_candidates():
    cfg = ExperimentConfig(seeds=(0,), candidate_source="gold",
                           pathology_variants=("full", "unet-scar", "t2-only"), **TINY)
    result = run_pathology_ablation(cfg)
    assert not result.failures
    rows = result.summary_rows()
    assert len(rows) == 3
    by_variant = {r["variant"]: r for r in rows}
    # scar-only and edema-only rows leave the other column to the N/A convention
    assert by_variant["unet-scar"]["dice_scar_edema_mean"] == N_A
    assert by_variant["t2-only"]["dice_scar_mean"] == N_A
    assert by_variant["full"]["dice_scar_mean"] != N_A
    assert by_variant["full"]["dice_scar_edema_mean"] != N_A


def test_render_report_rejects_empty(tmp_path):
    with pytest.raises(ValidationError):
        render_report({}, tmp_path)
    empty = AblationResult(kind="anatomy", config=ExperimentConfig(seeds=(0,), **TINY))
    with pytest.raises(ValidationError):
        write_summary_csv(tmp_path / "s.csv", empty)


def test_overlay_palette_exact():
    image = np.zeros((6, 6), dtype=np.float32)
    grid = np.zeros((6, 6), dtype=np.uint8)
    grid[2, 2] = CLASS_SCAR
    rgb = overlay_labels(image, LabelMap(grid), alpha=1.0)
    assert tuple(rgb[2, 2]) == LABEL_COLORS[CLASS_SCAR]
    assert tuple(rgb[0, 0]) == (0, 0, 0)  # unlabeled pixels keep the image
    half = overlay_labels(np.ones((6, 6), dtype=np.float32), LabelMap(grid), alpha=0.5)
    expected = tuple(round(0.5 * 255 + 0.5 * c) for c in LABEL_COLORS[CLASS_SCAR])
    assert tuple(half[2, 2]) == expected


def test_to_uint8_and_side_by_side(tmp_path):
    g = to_uint8_gray(np.linspace(0.0, 1.0, 16).reshape(4, 4))
    assert g.dtype == np.uint8 and g[0, 0] == 0 and g[-1, -1] == 255
    a = np.zeros((4, 4, 3), dtype=np.uint8)
    b = np.full((4, 4, 3), 40, dtype=np.uint8)
    panel = side_by_side([a, b], pad=2)
    assert panel.shape == (4, 10, 3)
    assert (panel[:, 4:6] == 255).all()  # gutter
    out = save_png(panel, tmp_path / "panel.png")
    assert out.exists() and out.stat().st_size > 0
