"""Reduced-scale rerun of the two comparison tables.

Trains every anatomy and pathology variant on corrupted phantoms for one
seed and renders the markdown report with summary tables, per-case CSVs and
qualitative overlays. The library defaults (5 seeds, 45 cases, longer
schedules) reproduce the orderings more reliably; this demo trades margin
for a run time of a few minutes.
"""

import argparse

from myoseg.experiments import (
    ExperimentConfig,
    render_report,
    run_anatomy_ablation,
    run_pathology_ablation,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_out/ablation_tables")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = ExperimentConfig(
        seeds=(args.seed,),
        n_cases=18,
        dae_epochs=80,
        assn_epochs=12,
        prsn_epochs=8,
    )
    print(f"anatomy study (3 variants) ...")
    anatomy = run_anatomy_ablation(cfg)
    print(f"  {anatomy.wall_time_s:.0f}s")
    print(f"pathology study (7 variants) ...")
    pathology = run_pathology_ablation(cfg)
    print(f"  {pathology.wall_time_s:.0f}s")

    report = render_report({"anatomy": anatomy, "pathology": pathology}, args.out)
    for name, result in (("anatomy", anatomy), ("pathology", pathology)):
        print(f"[{name}]")
        for row in result.summary_rows():
            print("  " + ", ".join(f"{k}={v}" for k, v in row.items()))
    print(f"report written to {report}")


if __name__ == "__main__":
    main()
