"""Checkpoints: one ``.npz`` archive of named arrays keyed by layer path.

Layout of the archive:

``__version__``
    format version string
``__meta__``
    JSON document with the experiment config and training state
``param/<layer path>``
    model parameters and buffers (``state_dict`` keys)
``optim/<index>/<name>``
    optional optimizer state
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any

import numpy as np
import torch

CHECKPOINT_VERSION = "wcdnet-ckpt-1"


class CheckpointError(RuntimeError):
    """Unreadable checkpoint or one that does not fit the model."""


def save_checkpoint(
    path: str | os.PathLike,
    model: torch.nn.Module,
    meta: dict[str, Any] | None = None,
    optimizer: torch.optim.Optimizer | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {
        "__version__": np.array(CHECKPOINT_VERSION),
        "__meta__": np.array(json.dumps(meta or {}, sort_keys=True)),
    }
    for name, tensor in model.state_dict().items():
        arrays[f"param/{name}"] = tensor.detach().cpu().numpy()
    if optimizer is not None:
        state = optimizer.state_dict()
        for idx, slots in state["state"].items():
            for slot, value in slots.items():
                arrays[f"optim/{idx}/{slot}"] = torch.as_tensor(value).cpu().numpy()
        groups = [{k: v for k, v in g.items() if k != "params"} for g in state["param_groups"]]
        arrays["__optim_groups__"] = np.array(json.dumps(groups))
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> dict[str, Any]:
    """Read an archive into ``{'version', 'meta', 'params', 'optim', 'optim_groups'}``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            files = {k: data[k] for k in data.files}
    except Exception as exc:  # zip/npy parse errors
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    version = str(files.pop("__version__", ""))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version!r}")
    meta = json.loads(str(files.pop("__meta__")))
    groups = json.loads(str(files.pop("__optim_groups__"))) if "__optim_groups__" in files else None
    params = {k[len("param/"):]: v for k, v in files.items() if k.startswith("param/")}
    optim: dict[int, dict[str, np.ndarray]] = {}
    for k, v in files.items():
        if k.startswith("optim/"):
            _, idx, slot = k.split("/", 2)
            optim.setdefault(int(idx), {})[slot] = v
    return {"version": version, "meta": meta, "params": params, "optim": optim, "optim_groups": groups}


def load_weights(model: torch.nn.Module, ckpt: dict[str, Any], allow_missing_prefixes=("crf.",), ignore_prefixes=()) -> list[str]:
    """Copy checkpoint arrays into ``model``.

    Model entries missing from the checkpoint are tolerated only under
    ``allow_missing_prefixes`` and keep their fresh initialisation.
    Checkpoint entries under ``ignore_prefixes`` are skipped. Returns the
    names that were left at their initial values.
    """
    params = ckpt["params"]
    state = model.state_dict()
    missing = [k for k in state if k not in params]
    bad = [k for k in missing if not k.startswith(tuple(allow_missing_prefixes))]
    if bad:
        raise CheckpointError(f"checkpoint lacks entries for: {', '.join(bad[:5])}")
    extra = [k for k in params if k not in state and not k.startswith(tuple(ignore_prefixes))]
    if extra:
        raise CheckpointError(f"checkpoint has entries the model does not: {', '.join(extra[:5])}")
    new_state = {}
    for k, v in state.items():
        if k in params:
            arr = params[k]
            if tuple(arr.shape) != tuple(v.shape):
                raise CheckpointError(
                    f"shape mismatch for {k}: checkpoint {tuple(arr.shape)} vs model {tuple(v.shape)}"
                )
            new_state[k] = torch.from_numpy(np.array(arr)).to(v.dtype)
        else:
            new_state[k] = v
    model.load_state_dict(new_state)
    return missing


def load_optimizer_state(optimizer: torch.optim.Optimizer, ckpt: dict[str, Any]) -> None:
    if not ckpt["optim"]:
        return
    state = optimizer.state_dict()
    for idx, slots in ckpt["optim"].items():
        state["state"][idx] = {k: torch.from_numpy(np.array(v)) for k, v in slots.items()}
    if ckpt["optim_groups"]:
        for group, saved in zip(state["param_groups"], ckpt["optim_groups"]):
            group.update({k: (tuple(v) if isinstance(v, list) else v) for k, v in saved.items()})
    optimizer.load_state_dict(state)


def load_pretrained_encoder(module: torch.nn.Module, path: str | os.PathLike) -> None:
    """Load user-supplied encoder weights (``.npz`` of named arrays or a torch state dict)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"weight file not found: {path}")
    if path.suffix == ".npz":
        with np.load(path) as data:
            params = {k: data[k] for k in data.files}
    else:
        params = {k: v.numpy() for k, v in torch.load(path, map_location="cpu").items()}
    load_weights(module, {"params": params}, allow_missing_prefixes=("",))
