"""Run directories: what the CLI writes and reads between commands.

A run directory contains ``config.yaml``, ``run.json`` (dataset paths and
checkpoint names), the stage checkpoints and their CSV logs, and after
``report`` a ``report/`` folder with ``metrics.json``, ``metrics.csv``,
``panels.png`` and ``training.png``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any

from .config import ExperimentConfig, save_config
from .data.manifest import load_dataset
from .metrics import MetricsReport, write_report_csv, write_report_json
from .report import plot_training_log, save_panels
from .train import TrainResult, evaluate_model, finetune_stage2, model_from_checkpoint, train_stage1

RUN_FILE = "run.json"


def read_run(run_dir: str | os.PathLike) -> dict[str, Any]:
    path = Path(run_dir) / RUN_FILE
    if not path.is_file():
        raise FileNotFoundError(f"not a run directory (missing {path})")
    return json.loads(path.read_text(encoding="utf-8"))


def _update_run(run_dir: Path, **fields) -> dict[str, Any]:
    path = run_dir / RUN_FILE
    data = json.loads(path.read_text(encoding="utf-8")) if path.is_file() else {}
    data.update(fields)
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    return data


def run_train(data_dir, out_dir, cfg: ExperimentConfig, val_dir=None, resume_from=None) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(data_dir)
    val = load_dataset(val_dir) if val_dir else None
    save_config(cfg, out_dir / "config.yaml")
    result = train_stage1(dataset, cfg, out_dir, val, resume_from)
    _update_run(
        out_dir,
        dataset=str(Path(data_dir).resolve()),
        val_dataset=str(Path(val_dir).resolve()) if val_dir else None,
        stage1=result.best_checkpoint.name,
        checkpoint=result.best_checkpoint.name,
        label_names={str(k): v for k, v in dataset.label_names.items()},
    )
    return result


def run_finetune(checkpoint, data_dir, out_dir, cfg: ExperimentConfig | None = None, val_dir=None) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(data_dir)
    val = load_dataset(val_dir) if val_dir else None
    result = finetune_stage2(checkpoint, dataset, cfg, out_dir, val)
    _update_run(
        out_dir,
        dataset=str(Path(data_dir).resolve()),
        stage2=result.best_checkpoint.name,
        checkpoint=result.best_checkpoint.name,
        label_names={str(k): v for k, v in dataset.label_names.items()},
    )
    return result


def run_eval(checkpoint, data_dir, out_dir=None, postprocess: bool = False, crf_params=None) -> MetricsReport:
    dataset = load_dataset(data_dir)
    model, _, _ = model_from_checkpoint(checkpoint)
    rep, _ = evaluate_model(model, dataset, postprocess, crf_params)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_report_json(rep, out_dir / "metrics.json")
        write_report_csv(rep, out_dir / "metrics.csv")
    return rep


def run_report(run_dir, data_dir=None, out_dir=None, num_panels: int = 8, postprocess: bool = False) -> dict[str, Path]:
    """Evaluate the run's current checkpoint and write the report folder."""
    run_dir = Path(run_dir)
    run = read_run(run_dir)
    ckpt = run_dir / run["checkpoint"]
    data_dir = data_dir or run.get("eval_dataset") or run["dataset"]
    out = Path(out_dir) if out_dir else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(data_dir)
    model, _, _ = model_from_checkpoint(ckpt)
    reports = {}
    rep, preds = evaluate_model(model, dataset)
    reports[ckpt.stem] = rep
    if postprocess:
        reports[ckpt.stem + "+crf_post"], _ = evaluate_model(model, dataset, postprocess=True)
    write_report_json(rep, out / "metrics.json")
    write_report_csv(reports, out / "metrics.csv")
    panels = save_panels(
        dataset, preds["binary_masks"], out / "panels.png", range(min(num_panels, len(dataset))), preds["probabilities"]
    )
    paths = {"metrics_json": out / "metrics.json", "metrics_csv": out / "metrics.csv", "panels": panels}
    curves = plot_training_log([run_dir / "stage1_log.csv", run_dir / "stage2_log.csv"], out / "training.png")
    if curves is not None:
        paths["training"] = curves
    return paths
