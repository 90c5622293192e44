"""Node-level precision, recall and F1 per key-value class."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any

import numpy as np
from sklearn.metrics import precision_recall_fscore_support

from fsdag.document import Document
from fsdag.model.graph import predict
from fsdag.model.params import ModelParams

logger = logging.getLogger(__name__)


@dataclass
class ClassScore:
    name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    """Per-class scores over the key-value classes (the background class is excluded).

    Attributes:
        per_class: One entry per class index >= 1
        macro_f1: Unweighted mean F1 over classes with support > 0
        clean_macro_f1: Macro F1 on unperturbed pages (robustness reports)
        drop: clean_macro_f1 - macro_f1 (robustness reports), never clamped
        seed: Seed of the perturbation, if any
        p: OCR error probability, if any
    """

    per_class: list[ClassScore] = field(default_factory=list)
    macro_f1: float = 0.0
    clean_macro_f1: float | None = None
    drop: float | None = None
    seed: int = 0
    p: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        if self.clean_macro_f1 is None:
            del data["clean_macro_f1"]
        if self.drop is None:
            del data["drop"]
        return data

    def score(self, name: str) -> ClassScore:
        for entry in self.per_class:
            if entry.name == name:
                return entry
        raise KeyError(name)


def score_predictions(y_true: np.ndarray, y_pred: np.ndarray, labels: tuple[str, ...]) -> EvalReport:
    """Per-class P/R/F1 for classes 1..C-1; undefined ratios count as 0."""
    classes = list(range(1, len(labels)))
    precision, recall, f1, support = precision_recall_fscore_support(
        np.asarray(y_true), np.asarray(y_pred), labels=classes, average=None, zero_division=0
    )
    per_class = [
        ClassScore(labels[c], float(p), float(r), float(f), int(s))
        for c, p, r, f, s in zip(classes, precision, recall, f1, support)
    ]
    supported = [entry.f1 for entry in per_class if entry.support > 0]
    macro = float(np.mean(supported)) if supported else 0.0
    return EvalReport(per_class=per_class, macro_f1=macro)


def collect_predictions(
    params: ModelParams, docs: list[Document], threads: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Gold and predicted labels of every region, concatenated in corpus order.

    Raises:
        ValueError: a document is unlabeled or uses a different label set
    """
    for doc in docs:
        if not doc.is_labeled():
            raise ValueError(f"document {doc.name or '<unnamed>'} is not fully labeled")
        if doc.labels is not None and tuple(doc.labels.names) != params.labels:
            raise ValueError(
                f"document {doc.name or '<unnamed>'} labels {list(doc.labels.names)} "
                f"do not match the model's {list(params.labels)}"
            )

    if threads > 1 and len(docs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            predictions = list(pool.map(lambda d: predict(d, params), docs))
    else:
        predictions = [predict(doc, params) for doc in docs]

    y_true = np.array([r.label for doc in docs for r in doc.by_id()], dtype=np.intp)
    y_pred = np.array([c for pred in predictions for c in pred], dtype=np.intp)
    return y_true, y_pred


def evaluate(params: ModelParams, docs: list[Document], threads: int = 1) -> EvalReport:
    """Argmax prediction per region, then per-class and macro F1.

    Raises:
        ValueError: empty or unlabeled corpus, or label sets disagree
    """
    if not docs:
        raise ValueError("evaluate needs at least one document")
    y_true, y_pred = collect_predictions(params, docs, threads)
    report = score_predictions(y_true, y_pred, params.labels)
    logger.info(f"Evaluated {len(docs)} documents ({len(y_true)} regions): macro F1 {report.macro_f1:.4f}")
    return report


def write_report(report: EvalReport, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
