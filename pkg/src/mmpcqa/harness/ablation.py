"""Ablation studies: modality contributions, patch-up vs global FPS,
sub-model/projection count sweeps.

Every variant shares the same seeds and the same leave-one-content-out split
so rows differ only in the ablated factor.  Metric differences between rows
are recorded as observations; they are dataset-dependent, not asserted.
"""

import csv
import io
from dataclasses import replace
from pathlib import Path

from ..evalkit import evaluate_run
from ..synthdata import DatasetManifest
from .config import RunConfig
from .training import evaluate, fold_plan, train

MODALITY_VARIANTS = ("p", "i", "p+i", "full")
COUNT_SWEEP = (2, 4, 6, 8)


def _with_model(config: RunConfig, **model_kwargs) -> RunConfig:
    return replace(config, model=replace(config.model, **model_kwargs))


def _run_variant(label, config, plan, manifest, out_dir):
    fold_dir = Path(out_dir) / label.replace("+", "_")
    train(config, plan.train_contents(0), fold_dir, manifest=manifest)
    ps = evaluate(fold_dir / "final.ckpt", config, plan.folds[0],
                  manifest=manifest)
    metrics = evaluate_run([ps]).fold_metrics[0]
    return {"variant": label, "srcc": metrics.srcc, "krcc": metrics.krcc,
            "plcc": metrics.plcc, "rmse": metrics.rmse}


def ablate(config: RunConfig, study: str, out_dir,
           manifest: DatasetManifest = None) -> list[dict]:
    """Run one study; returns rows and writes ablation_<study>.csv."""
    if manifest is None:
        manifest = DatasetManifest.load(config.manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = fold_plan(config, k=len(manifest.content_ids()), manifest=manifest)

    rows = []
    if study == "modality":
        for variant in MODALITY_VARIANTS:
            cfg = _with_model(config, variant=variant)
            rows.append(_run_variant(variant, cfg, plan, manifest, out_dir))
    elif study == "patching":
        for sampling in ("patch_up", "fps_groups"):
            cfg = replace(config, sampling=sampling)
            rows.append(_run_variant(sampling, cfg, plan, manifest, out_dir))
    elif study == "counts":
        for n_p in COUNT_SWEEP:
            cfg = _with_model(config, variant="p", n_p=n_p)
            rows.append(_run_variant(f"p.n_p={n_p}", cfg, plan, manifest, out_dir))
        for n_i in COUNT_SWEEP:
            cfg = _with_model(config, variant="i", n_i=n_i)
            rows.append(_run_variant(f"i.n_i={n_i}", cfg, plan, manifest, out_dir))
    else:
        raise ValueError(f"unknown study {study!r} "
                         "(expected modality, patching or counts)")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "srcc", "krcc", "plcc", "rmse"])
    for row in rows:
        writer.writerow([row["variant"], repr(row["srcc"]), repr(row["krcc"]),
                         repr(row["plcc"]), repr(row["rmse"])])
    (out_dir / f"ablation_{study}.csv").write_text(buf.getvalue())
    return rows
