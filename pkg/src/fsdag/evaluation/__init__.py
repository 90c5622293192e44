"""Per-class F1 evaluation and OCR-error robustness."""
