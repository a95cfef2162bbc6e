"""Two-stage training, evaluation and prediction."""

from __future__ import annotations

import copy
import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .config import ConfigError, CrfParams, ExperimentConfig, ModelConfig, config_from_dict
from .crf import postprocess_crf
from .data.dataset import PairDataset
from .losses import total_loss
from .metrics import (
    ConfusionCounts,
    MetricsReport,
    accuracy,
    average_precision,
    confusion,
    iou,
    kappa_dice_totalacc,
    miou,
    semantic_average_precision,
    topk_accuracy,
)
from .model import WCDNet, build_model, load_checkpoint, load_weights, save_checkpoint
from .model.checkpoint import CheckpointError, load_optimizer_state

log = logging.getLogger(__name__)

LOG_FIELDS = [
    "epoch",
    "loss",
    "image_label_loss",
    "mask_loss",
    "train_top1",
    "val_top1",
    "val_miou",
    "val_change_iou",
    "lr",
    "seconds",
]


class DatasetContractError(ValueError):
    """The dataset is incompatible with the requested model variant."""


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    history: list[dict[str, Any]] = field(default_factory=list)
    best_metric: float = float("-inf")


def set_deterministic(enabled: bool = True) -> None:
    torch.use_deterministic_algorithms(enabled, warn_only=True)
    if enabled:
        torch.set_num_threads(1)


def make_optimizer(model: torch.nn.Module, cfg, lr: float) -> torch.optim.Optimizer:
    params = [p for p in model.parameters() if p.requires_grad]
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=lr, betas=tuple(cfg.betas), weight_decay=cfg.weight_decay)
    return torch.optim.SGD(params, lr=lr, momentum=0.9, weight_decay=cfg.weight_decay)


def split_train_val(dataset: PairDataset, fraction: float, seed: int) -> tuple[PairDataset, PairDataset | None]:
    """Deterministic stratified hold-out of ``fraction`` of every label."""
    if fraction <= 0 or len(dataset) < 2:
        return dataset, None
    rng = np.random.default_rng([seed, 0x5A1])
    val_idx = []
    for label in np.unique(dataset.labels):
        idx = np.nonzero(dataset.labels == label)[0]
        k = int(round(len(idx) * fraction))
        val_idx.extend(rng.permutation(idx)[:k].tolist())
    val_idx = np.sort(np.asarray(val_idx, dtype=int))
    train_idx = np.setdiff1d(np.arange(len(dataset)), val_idx)
    if len(val_idx) == 0:
        return dataset, None
    return dataset.subset(train_idx), dataset.subset(val_idx)


def _augment(prev, curr, masks, rng: np.random.Generator, jitter: float):
    """Flips and brightness jitter applied identically to both images (and mask)."""
    if rng.random() < 0.5:
        prev, curr = prev.flip(-1), curr.flip(-1)
        masks = masks.flip(-1) if masks is not None else None
    if rng.random() < 0.5:
        prev, curr = prev.flip(-2), curr.flip(-2)
        masks = masks.flip(-2) if masks is not None else None
    delta = float(rng.uniform(-jitter, jitter))
    return (prev + delta).clamp(0, 1), (curr + delta).clamp(0, 1), masks


def check_dataset(model_cfg: ModelConfig, dataset: PairDataset, mode: str) -> None:
    if not model_cfg.residual_block_enabled and dataset.has_unchanged():
        raise DatasetContractError(
            "a model without the residual block can only be trained on changed pairs; "
            "the dataset contains unchanged pairs"
        )
    if int(dataset.labels.max(initial=0)) >= model_cfg.num_classes:
        raise DatasetContractError(
            f"dataset label {int(dataset.labels.max())} exceeds num_classes={model_cfg.num_classes}"
        )
    if tuple(dataset.image_size) != tuple(model_cfg.input_size):
        raise DatasetContractError(
            f"dataset image size {dataset.image_size} differs from model input {model_cfg.input_size}"
        )
    if mode == "full_multitask" and (dataset.masks is None or not dataset.has_mask.all()):
        raise DatasetContractError("full_multitask training needs a ground-truth mask for every pair")


@torch.no_grad()
def run_inference(model: WCDNet, dataset: PairDataset, batch_size: int = 16) -> dict[str, np.ndarray]:
    """Forward every pair in eval mode; returns probabilities, soft and raw masks."""
    was_training = model.training
    model.eval()
    probs, masks, raws = [], [], []
    dtype = next(model.parameters()).dtype
    try:
        for start in range(0, len(dataset), batch_size):
            idx = np.arange(start, min(start + batch_size, len(dataset)))
            prev, curr, _, _ = dataset.batch(idx, dtype)
            out = model(prev, curr)
            probs.append(out.class_probabilities.double().numpy())
            masks.append(out.change_mask[:, 0].double().numpy())
            raws.append(out.raw_mask[:, 0].double().numpy())
    finally:
        model.train(was_training)
    if not probs:
        h, w = dataset.image_size
        n = model.config.num_classes
        return {"probabilities": np.zeros((0, n)), "soft_masks": np.zeros((0, h, w)), "raw_masks": np.zeros((0, h, w))}
    return {
        "probabilities": np.concatenate(probs),
        "soft_masks": np.concatenate(masks),
        "raw_masks": np.concatenate(raws),
    }


def binary_masks(probabilities: np.ndarray, soft_masks: np.ndarray, threshold: float, unchanged_label_id: int | None) -> np.ndarray:
    """Threshold soft masks; pairs predicted as unchanged get an empty mask."""
    masks = soft_masks >= threshold
    if unchanged_label_id is not None:
        unchanged = probabilities.argmax(axis=1) == unchanged_label_id
        masks[unchanged] = False
    return masks


def report_from_predictions(
    probabilities: np.ndarray,
    masks: np.ndarray,
    dataset: PairDataset,
    unchanged_label_id: int | None = None,
) -> MetricsReport:
    """Metrics from recorded predictions; ``masks`` are the binary change masks."""
    uid = dataset.unchanged_label_id if unchanged_label_id is None else unchanged_label_id
    labels = np.asarray(dataset.labels)
    n, num_classes = probabilities.shape
    rep = MetricsReport(num_pairs=int(n))
    if n == 0:
        return rep
    pred = probabilities.argmax(axis=1)
    rep.top1 = topk_accuracy(probabilities, labels, 1)
    rep.top5 = topk_accuracy(probabilities, labels, min(5, num_classes))
    try:
        rep.semantic_ap = semantic_average_precision(probabilities, labels)
    except ValueError:
        rep.semantic_ap = None
    changed_gt = labels != uid
    changed_pred = pred != uid
    rep.accuracy = accuracy(changed_pred, changed_gt)
    try:
        rep.ap = average_precision(1.0 - probabilities[:, uid], changed_gt)
    except ValueError:
        rep.ap = None  # no changed pairs in the split
    if dataset.masks is not None and dataset.has_mask.any():
        sel = np.nonzero(dataset.has_mask)[0]
        counts = ConfusionCounts(0, 0, 0, 0)
        for i in sel:
            counts = counts + confusion(masks[i], dataset.masks[i])
        rep.num_masked_pairs = int(len(sel))
        rep.miou = miou(counts)
        rep.miou_change_class = iou(counts)
        rep.kappa, rep.dice, rep.total_accuracy = kappa_dice_totalacc(counts)
    return rep.validate()


def evaluate_model(
    model: WCDNet,
    dataset: PairDataset,
    postprocess: bool = False,
    crf_params: CrfParams | None = None,
    gate_unchanged: bool = True,
) -> tuple[MetricsReport, dict[str, np.ndarray]]:
    """Run the model on ``dataset`` and score it.

    With ``postprocess`` the soft masks are refined by the non-learned CRF
    (guided by the current image) before thresholding.
    """
    preds = run_inference(model, dataset)
    soft = preds["soft_masks"]
    if postprocess:
        soft = postprocess_crf(soft, dataset.current.astype(np.float64), crf_params)
        preds["soft_masks"] = soft
    uid = dataset.unchanged_label_id if (gate_unchanged and model.config.residual_block_enabled) else None
    masks = binary_masks(preds["probabilities"], soft, model.config.mask_threshold, uid)
    preds["binary_masks"] = masks
    rep = report_from_predictions(preds["probabilities"], masks, dataset)
    rep.crf_postprocessed = bool(postprocess)
    return rep, preds


def _config_meta(cfg: ExperimentConfig, **extra) -> dict[str, Any]:
    meta = {"config": cfg.to_dict()}
    meta.update(extra)
    return meta


def config_from_checkpoint(ckpt: dict[str, Any]) -> ExperimentConfig:
    try:
        return config_from_dict(ckpt["meta"]["config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError("checkpoint carries no experiment config") from exc


def model_from_checkpoint(path: str | os.PathLike) -> tuple[WCDNet, ExperimentConfig, dict[str, Any]]:
    ckpt = load_checkpoint(path)
    cfg = config_from_checkpoint(ckpt)
    model = build_model(cfg.model, cfg.crf)
    load_weights(model, ckpt, allow_missing_prefixes=())
    model.eval()
    return model, cfg, ckpt


def _fit(
    model: WCDNet,
    dataset: PairDataset,
    cfg: ExperimentConfig,
    out_dir: Path,
    lr: float,
    val_dataset: PairDataset | None,
    resume: dict[str, Any] | None = None,
    tag: str = "stage1",
) -> TrainResult:
    tcfg = cfg.train
    mode = cfg.model.supervision_mode
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / f"{tag}_best.ckpt"
    last_path = out_dir / f"{tag}_last.ckpt"
    log_path = out_dir / f"{tag}_log.csv"
    optimizer = make_optimizer(model, tcfg, lr)
    history: list[dict[str, Any]] = []
    start_epoch = 0
    best = float("-inf")
    stale = 0
    if resume is not None:
        load_optimizer_state(optimizer, resume)
        state = resume["meta"].get("train_state", {})
        start_epoch = int(state.get("epoch", 0))
        best = float(state.get("best_metric", float("-inf")))
        stale = int(state.get("stale_epochs", 0))
        history = list(state.get("history", []))
    dtype = next(model.parameters()).dtype
    names = {str(k): v for k, v in dataset.label_names.items()}
    n = len(dataset)
    for epoch in range(start_epoch, tcfg.max_epochs):
        t0 = time.perf_counter()
        model.train()
        rng = np.random.default_rng([tcfg.seed, epoch, 0xE9])
        order = rng.permutation(n)
        sums = np.zeros(3)
        correct = 0
        for start in range(0, n, tcfg.batch_size):
            idx = np.sort(order[start : start + tcfg.batch_size])
            if len(idx) < 2 and n >= 2:
                continue  # batch norm needs more than one sample
            prev, curr, labels, masks = dataset.batch(idx, dtype)
            if tcfg.augment:
                prev, curr, masks = _augment(prev, curr, masks, rng, tcfg.brightness_jitter)
            out = model(prev, curr)
            bundle = total_loss(
                out.class_probabilities,
                labels,
                out.change_mask,
                masks,
                mode,
                tcfg.image_label_weight,
                tcfg.mask_loss_weight,
            )
            optimizer.zero_grad(set_to_none=True)
            bundle.total.backward()
            optimizer.step()
            k = len(idx)
            sums += k * np.array([bundle.total.item(), bundle.image_label_loss.item(), bundle.mask_loss.item()])
            correct += int((out.class_probabilities.argmax(1) == labels).sum())
        row: dict[str, Any] = {
            "epoch": epoch + 1,
            "loss": float(sums[0] / n),
            "image_label_loss": float(sums[1] / n),
            "mask_loss": float(sums[2] / n),
            "train_top1": correct / n,
            "val_top1": None,
            "val_miou": None,
            "val_change_iou": None,
            "lr": lr,
        }
        if not all(np.isfinite(sums)):
            raise FloatingPointError(f"non-finite training loss at epoch {epoch + 1}")
        if val_dataset is not None and len(val_dataset):
            rep, _ = evaluate_model(model, val_dataset)
            row["val_top1"], row["val_miou"], row["val_change_iou"] = rep.top1, rep.miou, rep.miou_change_class
            metric = rep.top1
        else:
            metric = row["train_top1"]
        row["seconds"] = time.perf_counter() - t0
        history.append(row)
        log.info("%s epoch %d: %s", tag, epoch + 1, {k: v for k, v in row.items() if k != "epoch"})
        # ties go to the later epoch: masks keep sharpening after accuracy saturates
        improved = metric >= best
        if improved:
            best = metric
            stale = 0
        else:
            stale += 1
        state = {
            "epoch": epoch + 1,
            "best_metric": best,
            "stale_epochs": stale,
            "history": history,
            "stage": tag,
        }
        meta = _config_meta(cfg, train_state=state, label_names=names)
        if improved:
            save_checkpoint(best_path, model, meta)
        save_checkpoint(last_path, model, meta, optimizer)
        if stale >= tcfg.early_stop_patience:
            break
    _write_log(log_path, history)
    if not best_path.exists():
        save_checkpoint(
            best_path, model, _config_meta(cfg, train_state={"epoch": start_epoch, "history": history}, label_names=names)
        )
    if not last_path.exists():
        save_checkpoint(
            last_path, model, _config_meta(cfg, train_state={"epoch": start_epoch}, label_names=names), optimizer
        )
    return TrainResult(best_path, last_path, history, best)


def _write_log(path: Path, history: list[dict[str, Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in LOG_FIELDS})


def train_stage1(
    dataset: PairDataset,
    cfg: ExperimentConfig,
    out_dir: str | os.PathLike,
    val_dataset: PairDataset | None = None,
    resume_from: str | os.PathLike | None = None,
) -> TrainResult:
    """Stage 1: train without the CRF layer at ``alpha_train``.

    Without an explicit ``val_dataset`` a stratified ``val_fraction`` of
    ``dataset`` is held out for checkpoint selection.
    """
    cfg = copy.deepcopy(cfg).validate()
    if cfg.model.crf_enabled:
        raise ConfigError("stage 1 trains without the CRF layer; set crf_enabled=false")
    cfg.model.alpha = cfg.train.alpha_train
    cfg.train.stage = "train"
    set_deterministic(cfg.train.deterministic)
    check_dataset(cfg.model, dataset, cfg.model.supervision_mode)
    if val_dataset is None:
        dataset, val_dataset = split_train_val(dataset, cfg.train.val_fraction, cfg.train.seed)
    model = build_model(cfg.model, cfg.crf, seed=cfg.train.seed)
    resume = None
    if resume_from is not None:
        resume = load_checkpoint(resume_from)
        load_weights(model, resume, allow_missing_prefixes=())
    return _fit(model, dataset, cfg, Path(out_dir), cfg.train.learning_rate, val_dataset, resume, "stage1")


def stage2_model(stage1_checkpoint: str | os.PathLike, cfg: ExperimentConfig | None = None) -> tuple[WCDNet, ExperimentConfig]:
    """Rebuild the network with the CRF layer and load all stage-1 weights.

    CRF parameters start from their configured initial values.
    """
    ckpt = load_checkpoint(stage1_checkpoint)
    base = config_from_checkpoint(ckpt)
    cfg = copy.deepcopy(cfg or base).validate()
    if _architecture(cfg.model) != _architecture(base.model):
        raise CheckpointError("stage-1 checkpoint architecture does not match the finetuning config")
    cfg.model.crf_enabled = True
    cfg.model.alpha = cfg.train.alpha_finetune
    cfg.train.stage = "finetune"
    model = build_model(cfg.model, cfg.crf, seed=cfg.train.seed)
    load_weights(model, ckpt, allow_missing_prefixes=("crf.",), ignore_prefixes=("crf.",))
    return model, cfg


def _architecture(m: ModelConfig) -> tuple:
    return (
        tuple(m.input_size),
        m.num_classes,
        tuple(m.filter_schedule),
        m.residual_block_enabled,
        m.encoder_width,
        m.head_width,
        m.residual_width,
        m.fusion_hidden,
    )


def finetune_stage2(
    stage1_checkpoint: str | os.PathLike,
    dataset: PairDataset,
    cfg: ExperimentConfig | None,
    out_dir: str | os.PathLike,
    val_dataset: PairDataset | None = None,
) -> TrainResult:
    """Stage 2: insert the CRF layer and train end to end at a reduced learning rate."""
    model, cfg = stage2_model(stage1_checkpoint, cfg)
    set_deterministic(cfg.train.deterministic)
    check_dataset(cfg.model, dataset, cfg.model.supervision_mode)
    if val_dataset is None:
        dataset, val_dataset = split_train_val(dataset, cfg.train.val_fraction, cfg.train.seed)
    lr = cfg.train.learning_rate * cfg.train.finetune_lr_factor
    return _fit(model, dataset, cfg, Path(out_dir), lr, val_dataset, None, "stage2")


def evaluate(
    checkpoint: str | os.PathLike,
    dataset: PairDataset,
    postprocess: bool = False,
    crf_params: CrfParams | None = None,
) -> MetricsReport:
    model, _, _ = model_from_checkpoint(checkpoint)
    rep, _ = evaluate_model(model, dataset, postprocess, crf_params)
    return rep


def predict(
    checkpoint: str | os.PathLike,
    previous: np.ndarray,
    current: np.ndarray,
    out_dir: str | os.PathLike,
    name: str = "prediction",
    label_names: dict[int, str] | None = None,
) -> dict[str, Any]:
    """Classify one pair and write ``<name>_soft.png``, ``<name>_mask.png`` and ``<name>.json``.

    Images are (H, W, 3) uint8 or float arrays in [0, 1] at the model input size.
    """
    from .data.manifest import write_gray_png, to_chw_float

    model, cfg, ckpt = model_from_checkpoint(checkpoint)
    prev = to_chw_float(previous)
    curr = to_chw_float(current)
    ds = PairDataset(prev[None], curr[None], np.zeros(1, dtype=np.int64), label_names=label_names or {})
    preds = run_inference(model, ds)
    probs = preds["probabilities"][0]
    uid = cfg.model.unchanged_label_id if cfg.model.residual_block_enabled else None
    mask = binary_masks(preds["probabilities"], preds["soft_masks"], cfg.model.mask_threshold, uid)[0]
    label = int(probs.argmax())
    names = label_names or ckpt["meta"].get("label_names") or {}
    names = {int(k): v for k, v in names.items()}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    soft = preds["soft_masks"][0]
    write_gray_png(out_dir / f"{name}_soft.png", np.clip(np.rint(soft * 255), 0, 255).astype(np.uint8))
    write_gray_png(out_dir / f"{name}_mask.png", mask.astype(np.uint8) * 255)
    record = {
        "label_id": label,
        "label_name": names.get(label, str(label)),
        "probabilities": probs.tolist(),
        "soft_mask": f"{name}_soft.png",
        "binary_mask": f"{name}_mask.png",
    }
    (out_dir / f"{name}.json").write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    record["soft"] = soft
    record["mask"] = mask
    return record
