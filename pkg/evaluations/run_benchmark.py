#!/usr/bin/env python3
"""Synthetic few-shot benchmark - learning, robustness and ablation direction.

Runs three checks on the built-in basic8 template (25 documents, 5 train / 20 test per seed):

1. Few-shot learning: full model, 300 epochs, test macro F1 >= 0.95 in at least 4 of 5 seeds
2. Robustness direction: at p=0.1 the full model's mean macro-F1 drop is no larger than
   that of the same model without visual and positional features; p=0 gives a drop of exactly 0
3. Ablation direction: with 60 epochs, mean macro F1 of skeleton <= +positional <= full,
   and full - skeleton >= 0.02

Usage:
    python evaluations/run_benchmark.py
    python evaluations/run_benchmark.py --seeds 0 1 --check learning

Environment:
    FSDAG_THREADS - evaluation worker threads (default: CPU count)
"""

import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import click
import numpy as np

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s",
    handlers=[logging.StreamHandler(sys.stdout)],
)
logger = logging.getLogger(__name__)

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from fsdag.config import worker_count  # noqa: E402
from fsdag.evaluation.metrics import evaluate  # noqa: E402
from fsdag.evaluation.robustness import robustness_report  # noqa: E402
from fsdag.model.config import ModelConfig  # noqa: E402
from fsdag.model.config import resolve_preset  # noqa: E402
from fsdag.synthgen import generate  # noqa: E402
from fsdag.synthgen import split  # noqa: E402
from fsdag.template_registry import TemplateRegistry  # noqa: E402
from fsdag.training.trainer import TrainConfig  # noqa: E402
from fsdag.training.trainer import train  # noqa: E402

N_DOCS = 25
N_TRAIN = 5
LEARNING_EPOCHS = 300
ABLATION_EPOCHS = 60
LEARNING_F1 = 0.95
LEARNING_MIN_SEEDS = 4
ABLATION_MIN_GAIN = 0.02
OCR_P = 0.1


def benchmark_split(seed: int):
    """The 5/20 split of a seeded basic8 corpus."""
    spec = TemplateRegistry().load_template("basic8")
    return split(generate(spec, N_DOCS, seed), N_TRAIN, seed)


def train_and_score(model: ModelConfig, seed: int, epochs: int):
    train_docs, test_docs = benchmark_split(seed)
    started = time.time()
    result = train(train_docs, TrainConfig(epochs=epochs, seed=seed), model)
    f1 = evaluate(result.params, test_docs, threads=worker_count()).macro_f1
    logger.info(f"seed {seed}: test macro F1 {f1:.4f} ({time.time() - started:.1f}s)")
    return result.params, test_docs, f1


def check_learning(seeds: list[int]) -> dict:
    print(f"\n{'=' * 60}\nFew-shot learning ({LEARNING_EPOCHS} epochs)\n{'=' * 60}")
    scores = {seed: train_and_score(ModelConfig(), seed, LEARNING_EPOCHS)[2] for seed in seeds}
    passing = sum(f1 >= LEARNING_F1 for f1 in scores.values())
    needed = min(LEARNING_MIN_SEEDS, len(seeds))
    for seed, f1 in scores.items():
        print(f"  seed {seed}: {f1:.4f}")
    return {"macro_f1": scores, "passing_seeds": passing, "passed": passing >= needed}


def check_robustness(seeds: list[int]) -> dict:
    print(f"\n{'=' * 60}\nRobustness direction (p={OCR_P})\n{'=' * 60}")
    full = ModelConfig()
    text_only = dataclasses.replace(full, use_visual=False, use_positional=False)
    drops: dict[str, list[float]] = {"full": [], "text_only": []}
    zero_drop_exact = True
    for seed in seeds:
        for name, model in (("full", full), ("text_only", text_only)):
            params, test_docs, _ = train_and_score(model, seed, LEARNING_EPOCHS)
            drops[name].append(robustness_report(params, test_docs, p=OCR_P, seed=seed, threads=worker_count()).drop)
            zero_drop_exact &= robustness_report(params, test_docs, p=0.0, seed=seed).drop == 0.0
    means = {name: float(np.mean(values)) for name, values in drops.items()}
    print(f"  mean drop full:      {means['full']:.4f}")
    print(f"  mean drop text-only: {means['text_only']:.4f}")
    print(f"  p=0 drop exactly 0:  {zero_drop_exact}")
    return {"drops": drops, "mean_drop": means, "passed": means["full"] <= means["text_only"] and zero_drop_exact}


def check_ablation(seeds: list[int]) -> dict:
    print(f"\n{'=' * 60}\nAblation direction ({ABLATION_EPOCHS} epochs)\n{'=' * 60}")
    means = {}
    for row in ("#1", "#2d", "#5"):
        model = resolve_preset(row).apply(ModelConfig())
        means[row] = float(np.mean([train_and_score(model, seed, ABLATION_EPOCHS)[2] for seed in seeds]))
        print(f"  {row:<4} {resolve_preset(row).description:<24} {means[row]:.4f}")
    ordered = means["#1"] <= means["#2d"] <= means["#5"]
    gain = means["#5"] - means["#1"]
    return {"mean_macro_f1": means, "gain": gain, "passed": ordered and gain >= ABLATION_MIN_GAIN}


CHECKS = {"learning": check_learning, "robustness": check_robustness, "ablation": check_ablation}


@click.command()
@click.option("--seeds", "seeds", type=int, multiple=True, default=(0, 1, 2, 3, 4), show_default=True)
@click.option("--check", "checks", type=click.Choice(list(CHECKS)), multiple=True, help="Run only these checks (default: all)")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), default=Path("benchmark_results.json"), show_default=True)
def main(seeds: tuple[int, ...], checks: tuple[str, ...], out_path: Path):
    """Run the synthetic benchmark and save a JSON summary."""
    seed_list = list(seeds)
    selected = list(checks) or list(CHECKS)
    started = time.time()
    results = {}
    try:
        for name in selected:
            results[name] = CHECKS[name](seed_list)
    except KeyboardInterrupt:
        logger.warning("Benchmark interrupted by user")
        sys.exit(130)

    print(f"\n{'=' * 60}")
    for name, outcome in results.items():
        print(f"{'✅' if outcome['passed'] else '❌'} {name}")
    print(f"{'=' * 60}")

    out_path.write_text(
        json.dumps(
            {"timestamp": time.strftime("%Y-%m-%d %H:%M:%S"), "seeds": seed_list, "elapsed_s": time.time() - started, "results": results},
            indent=2,
            default=str,
        )
        + "\n"
    )
    print(f"\nResults saved to: {out_path}")
    if not all(outcome["passed"] for outcome in results.values()):
        sys.exit(1)


if __name__ == "__main__":
    main()
