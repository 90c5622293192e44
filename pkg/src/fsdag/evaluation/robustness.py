"""Clean versus OCR-perturbed evaluation with a shared model."""

from __future__ import annotations

import logging

from fsdag.document import Document
from fsdag.evaluation.metrics import EvalReport
from fsdag.evaluation.metrics import evaluate
from fsdag.evaluation.ocr_noise import ConfusionTable
from fsdag.evaluation.ocr_noise import perturb_corpus
from fsdag.model.params import ModelParams

logger = logging.getLogger(__name__)


def robustness_report(
    params: ModelParams,
    docs: list[Document],
    p: float = 0.1,
    table: ConfusionTable | None = None,
    seed: int = 0,
    threads: int = 1,
) -> EvalReport:
    """Evaluate clean and perturbed copies; drop = clean macro F1 - perturbed macro F1.

    The returned report carries the perturbed scores; the drop is never
    clamped and can be negative.
    """
    table = table or ConfusionTable()
    clean = evaluate(params, docs, threads)
    noisy_docs = perturb_corpus(docs, p, table, seed)
    report = evaluate(params, noisy_docs, threads)
    report.clean_macro_f1 = clean.macro_f1
    report.drop = clean.macro_f1 - report.macro_f1
    report.seed = seed
    report.p = p
    logger.info(f"Robustness at p={p}: clean {clean.macro_f1:.4f}, perturbed {report.macro_f1:.4f}, drop {report.drop:.4f}")
    return report
