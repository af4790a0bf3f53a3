"""Metrics, cross-generator evaluation grid, last-five-epoch stability and feature export."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .data import Sample, preprocess_eval
from .nngrad import ModelParams

THRESHOLD = 0.5
STABILITY_WINDOW = 5


def accuracy(scores, labels, threshold: float = THRESHOLD) -> float:
    """Fraction of items where ``score >= threshold`` agrees with ``label == 1``."""
    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    if scores.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean((scores >= threshold) == (labels == 1)))


def average_precision(scores, labels) -> float:
    """Step-interpolated AP, ``sum_k (R_k - R_{k-1}) * P_k`` over the descending ranking.

    Ties keep their input order (stable sort), so every item is its own cut.
    """
    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    positives = int(np.sum(labels == 1))
    if positives == 0:
        raise ValueError("AP undefined: no positive labels")
    order = np.argsort(-scores, kind="stable")
    hits = (labels[order] == 1).astype(np.float64)
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, hits.size + 1)
    return float(np.sum(precision * hits) / positives)


def predict_scores(params: ModelParams, samples: Sequence[Sample], crop: int,
                   batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic eval-path scores (center crop, no masks, no augmentation)."""
    scores, labels = [], []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        x = np.stack([preprocess_eval(s.image, crop) for s in chunk])
        scores.append(params.predict(x))
        labels += [s.label for s in chunk]
    if not scores:
        return np.zeros(0), np.zeros(0, dtype=int)
    return np.concatenate(scores), np.asarray(labels)


def evaluate_subset(params: ModelParams, samples: Sequence[Sample], crop: int) -> dict[str, float]:
    if not samples:
        raise ValueError("cannot evaluate an empty test set")
    scores, labels = predict_scores(params, samples, crop)
    return {"acc": accuracy(scores, labels), "ap": average_precision(scores, labels)}


def evaluate_sets(params: ModelParams, test_sets: Mapping[str, Sequence[Sample]], crop: int,
                  exclude: Sequence[str] = ()) -> dict[str, dict[str, float]]:
    return {name: evaluate_subset(params, samples, crop)
            for name, samples in test_sets.items() if name not in exclude}


def mean_metrics(per_subset: Mapping[str, Mapping[str, float]]) -> dict[str, float]:
    if not per_subset:
        raise ValueError("no subsets to average")
    return {
        "acc": float(np.mean([m["acc"] for m in per_subset.values()])),
        "ap": float(np.mean([m["ap"] for m in per_subset.values()])),
    }


@dataclass
class EvalMatrix:
    """Rows: training subset. Columns: test subset. Cells: {"acc", "ap"}."""

    train_subsets: list[str]
    test_subsets: list[str]
    cells: dict[str, dict[str, dict[str, float]]]

    def row_average(self, train_subset: str) -> dict[str, float]:
        return mean_metrics(self.cells[train_subset])

    def grid(self, metric: str = "acc") -> np.ndarray:
        return np.array([[self.cells[r][c][metric] for c in self.test_subsets] for r in self.train_subsets])

    def to_records(self) -> list[dict]:
        recs = []
        for r in self.train_subsets:
            for c in self.test_subsets:
                recs.append({"train": r, "test": c, **self.cells[r][c]})
            recs.append({"train": r, "test": "avg", **self.row_average(r)})
        return recs

    def to_table(self, metric: str = "acc") -> str:
        head = ["train \\ test"] + self.test_subsets + ["avg"]
        rows = [head]
        for r in self.train_subsets:
            vals = [f"{100 * self.cells[r][c][metric]:.1f}" for c in self.test_subsets]
            rows.append([r] + vals + [f"{100 * self.row_average(r)[metric]:.1f}"])
        widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
        return "\n".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in rows)


def cross_subset_matrix(checkpoints: Mapping[str, ModelParams], test_sets: Mapping[str, Sequence[Sample]],
                        crop: int) -> EvalMatrix:
    """Evaluate the model trained on each subset against every test subset."""
    for name, samples in test_sets.items():
        if not samples:
            raise ValueError(f"test set {name!r} is empty")
    cells = {train: evaluate_sets(_params(ckpt), test_sets, crop) for train, ckpt in checkpoints.items()}
    return EvalMatrix(list(checkpoints), list(test_sets), cells)


def _params(ckpt) -> ModelParams:
    return ckpt if isinstance(ckpt, ModelParams) else ckpt.params


@dataclass
class StabilityReport:
    """Mean and population std of the averaged metrics over the last five checkpoints."""

    train_subset: str
    avg_acc: list[float]
    avg_ap: list[float]
    mean_acc: float = field(init=False)
    std_acc: float = field(init=False)
    mean_ap: float = field(init=False)
    std_ap: float = field(init=False)

    def __post_init__(self):
        if len(self.avg_acc) != STABILITY_WINDOW or len(self.avg_ap) != STABILITY_WINDOW:
            raise ValueError(f"stability needs exactly {STABILITY_WINDOW} checkpoints")
        self.mean_acc, self.std_acc = float(np.mean(self.avg_acc)), float(np.std(self.avg_acc))
        self.mean_ap, self.std_ap = float(np.mean(self.avg_ap)), float(np.std(self.avg_ap))

    def to_record(self) -> dict:
        return {
            "train_subset": self.train_subset,
            "avg_acc": self.avg_acc,
            "avg_ap": self.avg_ap,
            "mean_acc": self.mean_acc,
            "std_acc": self.std_acc,
            "mean_ap": self.mean_ap,
            "std_ap": self.std_ap,
        }

    def to_table_row(self) -> str:
        return (f"{self.train_subset}: acc {100 * self.mean_acc:.1f} (+-{100 * self.std_acc:.1f})  "
                f"ap {100 * self.mean_ap:.1f} (+-{100 * self.std_ap:.1f})")


STABILITY_SCHEMA = {
    "type": "object",
    "required": ["train_subset", "avg_acc", "avg_ap", "mean_acc", "std_acc", "mean_ap", "std_ap"],
    "properties": {
        "train_subset": {"type": "string"},
        "avg_acc": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
                    "minItems": STABILITY_WINDOW, "maxItems": STABILITY_WINDOW},
        "avg_ap": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
                   "minItems": STABILITY_WINDOW, "maxItems": STABILITY_WINDOW},
        "mean_acc": {"type": "number"}, "std_acc": {"type": "number", "minimum": 0},
        "mean_ap": {"type": "number"}, "std_ap": {"type": "number", "minimum": 0},
    },
}


def stability_report(last5: Sequence, test_sets: Mapping[str, Sequence[Sample]], crop: int,
                     train_subset: str = "", exclude: Sequence[str] = ()) -> StabilityReport:
    if len(last5) != STABILITY_WINDOW:
        raise ValueError(f"stability needs exactly {STABILITY_WINDOW} checkpoints, got {len(last5)}")
    accs, aps = [], []
    for ckpt in last5:
        m = mean_metrics(evaluate_sets(_params(ckpt), test_sets, crop, exclude))
        accs.append(m["acc"])
        aps.append(m["ap"])
    return StabilityReport(train_subset, accs, aps)


def export_features(params, samples: Sequence[Sample], path: str | Path, crop: int,
                    delimiter: str = ",") -> Path:
    """Write one row per sample: feature_0..feature_{d-1}, label, subset_id."""
    params = _params(params)
    path = Path(path)
    dim = params.trunk_channels
    header = [f"f{i}" for i in range(dim)] + ["label", "subset_id"]
    lines = [delimiter.join(header)]
    for s in samples:
        feat = params.features(preprocess_eval(s.image, crop)[None])[0]
        lines.append(delimiter.join([repr(float(v)) for v in feat] + [str(s.label), s.subset_id]))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_records(path: str | Path, records: Sequence[dict]) -> Path:
    path = Path(path)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    return path
