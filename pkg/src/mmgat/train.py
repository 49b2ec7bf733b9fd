"""Training loop: random modality dropout, Adam, cosine learning-rate decay.

One ``numpy.random.default_rng(seed)`` stream drives a run, drawn in this
order: parameter initialisation, then per epoch a sample permutation, then
per step the dropped-modality count followed by the dropped subset.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .autodiff import NonFiniteError, Tape
from .checkpoint import load_tensors, save_tensors
from .pipeline import ModelConfig, init_params, total_loss
from .synthetic import Dataset
from .topology import ModalityMask

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Loss or gradients became non-finite."""


# -- modality dropout ------------------------------------------------------------

def sample_dropout(num_modalities: int, rng: np.random.Generator) -> ModalityMask:
    """Drop ``d ~ U{0..N-1}`` modalities, chosen uniformly among size-``d`` subsets."""
    if num_modalities < 1:
        raise ValueError("num_modalities must be >= 1")
    d = int(rng.integers(0, num_modalities))
    dropped = {int(x) for x in rng.choice(num_modalities, size=d, replace=False)} if d else set()
    return ModalityMask(tuple(m not in dropped for m in range(num_modalities)))


# -- optimiser -------------------------------------------------------------------

def cosine_lr(step: int, total_steps: int, lr0: float = 2e-4, lr_min: float = 0.0) -> float:
    if total_steps <= 0:
        return lr0
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def ensure(self, params: Mapping[str, np.ndarray]) -> None:
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: Mapping[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name}")
    state.ensure(params)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# -- loop ------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr0: float = 2e-4
    lr_min: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    static_graph: bool = False
    log_every: int = 50
    checkpoint_every: int = 0  # 0 keeps only the final checkpoint

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.lr0 < 0 or self.lr_min < 0:
            raise ValueError("learning rates must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    optimizer: AdamState
    history: list[dict] = field(default_factory=list)   # one entry per step
    epochs: list[dict] = field(default_factory=list)    # per-epoch means


def save_checkpoint(root: str | Path, params: Mapping[str, np.ndarray],
                    opt: AdamState | None = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    save_tensors(params, root / "params")
    if opt is not None:
        save_tensors(opt.m, root / "adam_m")
        save_tensors(opt.v, root / "adam_v")
        meta = {"step": opt.step, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps}
        (root / "optimizer.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    return root


def load_checkpoint(root: str | Path) -> tuple[dict[str, np.ndarray], AdamState | None]:
    root = Path(root)
    params = load_tensors(root / "params")
    opt = None
    if (root / "optimizer.json").exists():
        meta = json.loads((root / "optimizer.json").read_text())
        opt = AdamState(meta["beta1"], meta["beta2"], meta["eps"], meta["step"],
                        load_tensors(root / "adam_m"), load_tensors(root / "adam_v"))
    return params, opt


def train(model_cfg: ModelConfig, cfg: TrainConfig, dataset: Dataset,
          out_dir: str | Path | None = None,
          on_step: Callable[[dict], None] | None = None) -> TrainResult:
    """Batch-size-1 training with per-sample modality dropout.

    With ``out_dir`` set, writes ``metrics.jsonl`` (one JSON object per
    logged step and per epoch) and checkpoints under ``ckpt_<step>/`` plus
    the final one under ``final/``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    n_mod = model_cfg.num_modalities
    if dataset.config.num_modalities != n_mod or dataset.config.grid != model_cfg.grid:
        raise ValueError("dataset does not match the model configuration")

    rng = np.random.default_rng(cfg.seed)
    params = init_params(model_cfg, rng)
    opt = AdamState(cfg.beta1, cfg.beta2, cfg.adam_eps)
    result = TrainResult(params, opt)

    out = Path(out_dir) if out_dir is not None else None
    metrics = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics = (out / "metrics.jsonl").open("w")

    def emit(record: dict) -> None:
        if metrics is not None:
            metrics.write(json.dumps(record, sort_keys=True) + "\n")

    try:
        step = 0
        epoch = 0
        while step < cfg.steps:
            order = rng.permutation(len(dataset))
            epoch_terms: list[dict] = []
            for idx in order:
                if step >= cfg.steps:
                    break
                mask = sample_dropout(n_mod, rng)
                lr = cosine_lr(step, cfg.steps, cfg.lr0, cfg.lr_min)
                sample = dataset[int(idx)]
                tape = Tape()
                leaves = {k: tape.var(v) for k, v in params.items()}
                try:
                    terms = total_loss(sample.images, sample.labels, mask, leaves,
                                       model_cfg, static_graph=cfg.static_graph)
                except NonFiniteError as exc:
                    raise TrainingError(f"step {step}, sample {int(idx)}, mask {mask.bits()}: "
                                        f"{exc}") from exc
                breakdown = terms.breakdown()
                if not math.isfinite(breakdown["total"]):
                    raise TrainingError(f"non-finite loss at step {step}: {breakdown}")
                grads = tape.backward(terms.total)
                adam_step(opt, params, {k: grads[v] for k, v in leaves.items()}, lr)

                record = {"step": step, "epoch": epoch, "lr": lr, "mask": mask.bits(),
                          "sample": int(idx), **breakdown}
                result.history.append(record)
                epoch_terms.append(breakdown)
                if on_step is not None:
                    on_step(record)
                if cfg.log_every and step % cfg.log_every == 0:
                    emit({"kind": "step", **record})
                    log.debug("step %d lr %.3g loss %.4f", step, lr, breakdown["total"])
                step += 1
                if out is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    save_checkpoint(out / f"ckpt_{step:06d}", params, opt)
            if epoch_terms:
                means = {k: float(np.mean([t[k] for t in epoch_terms])) for k in epoch_terms[0]}
                summary = {"epoch": epoch, "steps": len(epoch_terms), **means}
                result.epochs.append(summary)
                emit({"kind": "epoch", **summary})
            epoch += 1
    finally:
        if metrics is not None:
            metrics.close()

    if out is not None:
        save_checkpoint(out / "final", params, opt)
    return result


def init_only(model_cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Parameters exactly as :func:`train` would start from."""
    return init_params(model_cfg, np.random.default_rng(seed))


__all__ = ["AdamState", "TrainConfig", "TrainResult", "TrainingError",
           "adam_step", "cosine_lr", "init_only", "load_checkpoint", "sample_dropout",
           "save_checkpoint", "train"]
