"""Dice tables over every non-empty modality subset."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .pipeline import ModelConfig, predict
from .synthetic import Dataset
from .topology import ModalityMask, enumerate_subsets


def hard_dice(pred: np.ndarray, truth: np.ndarray, cls: int) -> float:
    """Dice of one class between two label grids; 1.0 when both are empty."""
    p = pred == cls
    g = truth == cls
    denom = p.sum() + g.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(p, g).sum() / denom)


@dataclass
class SubsetRow:
    mask: ModalityMask
    dice: list[float]  # foreground classes 1..L-1

    @property
    def mean(self) -> float:
        return float(np.mean(self.dice))


@dataclass
class SubsetReport:
    num_classes: int
    rows: list[SubsetRow] = field(default_factory=list)

    @property
    def class_names(self) -> list[str]:
        return [f"class{c}" for c in range(1, self.num_classes)]

    def mean_row(self) -> list[float]:
        return [float(v) for v in np.mean([r.dice for r in self.rows], axis=0)]

    @property
    def grand_mean(self) -> float:
        return float(np.mean(self.mean_row()))

    def row(self, mask: ModalityMask) -> SubsetRow:
        for r in self.rows:
            if r.mask == mask:
                return r
        raise KeyError(mask.bits())

    def missing_subset_mean(self) -> float:
        """Mean Dice over rows with at least one modality missing."""
        rows = [r.mean for r in self.rows if not r.mask.is_full]
        return float(np.mean(rows)) if rows else float("nan")

    def to_json(self) -> dict:
        return {"classes": self.class_names,
                "rows": [{"mask": r.mask.bits(), "label": r.mask.label(), "dice": r.dice,
                          "mean": r.mean} for r in self.rows],
                "mean": {"dice": self.mean_row(), "mean": self.grand_mean}}

    def to_csv(self) -> str:
        buf = io.StringIO()
        n = len(self.rows[0].mask) if self.rows else 0
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"m{m}" for m in range(n)] + self.class_names + ["mean"])
        for r in self.rows:
            writer.writerow([int(b) for b in r.mask.available]
                            + [f"{d:.4f}" for d in r.dice] + [f"{r.mean:.4f}"])
        writer.writerow(["mean"] + [""] * (n - 1)
                        + [f"{d:.4f}" for d in self.mean_row()] + [f"{self.grand_mean:.4f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        head = "mods  " + " ".join(f"{c:>7}" for c in self.class_names) + "    mean"
        lines = [head]
        for r in self.rows:
            lines.append(f"{r.mask.label():<5} " + " ".join(f"{d:7.3f}" for d in r.dice)
                         + f" {r.mean:7.3f}")
        lines.append(f"{'Mean':<5} " + " ".join(f"{d:7.3f}" for d in self.mean_row())
                     + f" {self.grand_mean:7.3f}")
        return "\n".join(lines)

    def write(self, out_dir: str | Path, stem: str = "report") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(json.dumps(self.to_json(), indent=2) + "\n")
        (out / f"{stem}.csv").write_text(self.to_csv())


def evaluate_mask(params: Mapping[str, np.ndarray], cfg: ModelConfig, dataset: Dataset,
                  mask: ModalityMask, static_graph: bool = False) -> list[float]:
    """Per-class Dice (foreground classes) averaged over samples."""
    scores = np.zeros((len(dataset), cfg.num_classes - 1))
    for i, sample in enumerate(dataset):
        pred = predict(sample.images, mask, params, cfg, static_graph).argmax(axis=-1)
        scores[i] = [hard_dice(pred, sample.labels, c) for c in range(1, cfg.num_classes)]
    return [float(v) for v in scores.mean(axis=0)]


def evaluate_subsets(params: Mapping[str, np.ndarray], cfg: ModelConfig, dataset: Dataset,
                     static_graph: bool = False) -> SubsetReport:
    if dataset.config.num_modalities != cfg.num_modalities or dataset.config.grid != cfg.grid:
        raise ValueError("dataset does not match the model configuration")
    report = SubsetReport(cfg.num_classes)
    for mask in enumerate_subsets(cfg.num_modalities):
        report.rows.append(SubsetRow(mask, evaluate_mask(params, cfg, dataset, mask, static_graph)))
    return report
