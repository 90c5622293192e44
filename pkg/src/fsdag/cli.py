"""
Command-line interface: generate corpora, train, evaluate, stress with OCR noise, ablate.

Every command is deterministic given its flags and seed; every artifact goes
under the directory passed with --out.
"""

import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from fsdag.config import RunConfig
from fsdag.config import flatten
from fsdag.config import resolve_run_config
from fsdag.config import worker_count
from fsdag.config import write_resolved_config
from fsdag.core.tensor import ContractViolation
from fsdag.document import Document
from fsdag.document import DocumentParseError
from fsdag.document import DocumentValidationError
from fsdag.document import load_corpus
from fsdag.encoders.text import EmbeddingFormatError
from fsdag.encoders.text import EmbeddingLookupError
from fsdag.encoders.visual import RasterSizeError
from fsdag.evaluation.metrics import EvalReport
from fsdag.evaluation.metrics import evaluate
from fsdag.evaluation.metrics import write_report
from fsdag.evaluation.ocr_noise import ConfusionTable
from fsdag.evaluation.ocr_noise import load_confusion_table
from fsdag.evaluation.robustness import robustness_report
from fsdag.model.config import ABLATION_PRESETS
from fsdag.model.config import DEFAULT_ABLATION_ROWS
from fsdag.model.config import ConfigError
from fsdag.model.config import resolve_preset
from fsdag.model.graph import DegenerateGraphError
from fsdag.model.params import CheckpointError
from fsdag.model.params import load_checkpoint
from fsdag.model.params import save_checkpoint
from fsdag.synthgen import CorpusManifest
from fsdag.synthgen import GenerationError
from fsdag.synthgen import generate
from fsdag.synthgen import split
from fsdag.synthgen import write_corpus
from fsdag.template_registry import TemplateNotFoundError
from fsdag.template_registry import TemplateRegistry
from fsdag.template_registry import TemplateValidationError
from fsdag.training.trainer import TrainResult
from fsdag.training.trainer import train

logger = logging.getLogger(__name__)

# errors that mean "bad data or bad run settings": exit 1 with a message
RUN_ERRORS = (
    ConfigError,
    CheckpointError,
    ContractViolation,
    DegenerateGraphError,
    DocumentParseError,
    DocumentValidationError,
    EmbeddingFormatError,
    EmbeddingLookupError,
    GenerationError,
    RasterSizeError,
    ValueError,
    OSError,
)


def _fail(message: str) -> None:
    click.echo(f"Error: {message}", err=True)
    raise click.Abort()


def _split_corpus(docs: list[Document], n_train: int | None, seed: int) -> tuple[list[Document], list[Document]]:
    """Seeded train/test split; n_train None or equal to the corpus size trains on everything."""
    if n_train is None or n_train == len(docs):
        return docs, []
    return split(docs, n_train, seed)


def _write_split(train_docs: list[Document], test_docs: list[Document], out_dir: Path) -> Path:
    path = out_dir / "split.json"
    payload = {"train": [d.name for d in train_docs], "test": [d.name for d in test_docs]}
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


def _train_run(run: RunConfig, train_docs: list[Document], out_dir: Path) -> TrainResult:
    """Train one configuration into out_dir: config.json, train_log.jsonl, model.ckpt."""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(run, out_dir)
    checkpoint_dir = out_dir / "checkpoints" if run.train.checkpoint_every else None
    result = train(
        train_docs,
        run.train,
        run.model,
        log_path=out_dir / "train_log.jsonl",
        checkpoint_dir=checkpoint_dir,
    )
    save_checkpoint(result.params, out_dir / "model.ckpt")
    return result


def _final_train_f1(result: TrainResult, train_docs: list[Document]) -> float:
    if result.log:
        return result.log[-1].macro_f1
    return evaluate(result.params, train_docs).macro_f1


def _print_report(report: EvalReport) -> None:
    for entry in report.per_class:
        click.echo(
            f"  {entry.name:<16} P {entry.precision:.4f}  R {entry.recall:.4f}  "
            f"F1 {entry.f1:.4f}  support {entry.support}"
        )


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log progress (epochs, corpus sizes, evaluation totals)")
def cli(verbose: bool):
    """Few-shot key information extraction on document graphs.

    \b
    Quick Start:
      # Generate a synthetic corpus
      $ fsdag synth --template basic8 --n 25 --seed 7 --out corpus/

      # Train on five documents
      $ fsdag train --corpus corpus/ --split 5 --seed 7 --out run1/

      # Evaluate on the held-out documents
      $ fsdag eval --checkpoint run1/model.ckpt --corpus corpus/ --split 5 --seed 7 --out run1/eval.json
    """
    if verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")


@cli.command("synth")
@click.option("--template", "template_name", default="basic8", show_default=True, help="Built-in template name or path to a template JSON file")
@click.option("--n", "n_docs", type=click.IntRange(min=1), default=25, show_default=True, help="Number of documents")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), help="Corpus directory")
@click.option("--split", "n_train", type=click.IntRange(min=1), default=None, help="Also record a seeded train/test split with this many training documents")
@click.option("--list", "list_templates", is_flag=True, help="List built-in templates and exit")
def synth(template_name: str, n_docs: int, seed: int, out_dir: Path | None, n_train: int | None, list_templates: bool):
    """Generate a synthetic form corpus (document JSON + PGM raster per page).

    \b
    Examples:
      $ fsdag synth --list
      $ fsdag synth --template basic8 --n 25 --seed 7 --out corpus/
      $ fsdag synth --template my_form.json --n 10 --out corpus/
    """
    registry = TemplateRegistry()

    if list_templates:
        templates = registry.list_templates()
        if not templates:
            click.echo("No templates available in registry.")
            return
        click.echo("\nAvailable templates:\n")
        for spec in templates:
            click.echo(f"  {spec.name}")
            if spec.description:
                click.echo(f"    {spec.description}")
            click.echo(
                f"    Classes: {spec.n_classes} | Distractors: {spec.distractor_count} | "
                f"Page: {spec.page_width}x{spec.page_height}"
            )
            click.echo()
        return

    if out_dir is None:
        raise click.UsageError("Missing option '--out'.")

    try:
        spec = registry.resolve(template_name)
    except TemplateNotFoundError as e:
        click.echo(f"Error: {e}", err=True)
        click.echo("\nRun 'fsdag synth --list' to see available templates.", err=True)
        raise click.Abort()
    except TemplateValidationError as e:
        _fail(str(e))

    try:
        docs = generate(spec, n_docs, seed)
        manifest = CorpusManifest(seed=seed, template=spec.name, n_docs=n_docs)
        train_docs: list[Document] = []
        test_docs: list[Document] = []
        if n_train is not None:
            train_docs, test_docs = split(docs, n_train, seed)
            manifest.n_train, manifest.n_test = len(train_docs), len(test_docs)
        write_corpus(docs, out_dir, manifest)
        if n_train is not None:
            _write_split(train_docs, test_docs, out_dir)
    except RUN_ERRORS as e:
        _fail(str(e))

    regions = sum(len(doc) for doc in docs)
    click.echo(f"✅ Wrote {n_docs} '{spec.name}' documents to {out_dir}")
    click.echo(f"   Classes: {spec.n_classes} + background | Regions: {regions} | Seed: {seed}")
    if n_train is not None:
        click.echo(f"   Split: {manifest.n_train} train / {manifest.n_test} test")


@cli.command("train")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--split", "n_train", type=click.IntRange(min=1), default=5, show_default=True, help="Number of training documents")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="JSON or YAML config with dotted keys")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Seed for split, initialization and augmentation")
@click.option("--epochs", type=click.IntRange(min=0), default=None)
@click.option("--lr", type=click.FloatRange(min=0.0), default=None)
@click.option("--ablate", default=None, help="Ablation preset: a row id (#1 … #5) or alias such as no-positional")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override any config key, e.g. --set model.heads=2")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
def train_cmd(
    corpus_dir: Path,
    n_train: int,
    config_path: Path | None,
    seed: int | None,
    epochs: int | None,
    lr: float | None,
    ablate: str | None,
    overrides: tuple[str, ...],
    out_dir: Path,
):
    """Train on the first --split documents of a seeded shuffle of the corpus.

    \b
    Writes to --out:
      model.ckpt        final parameters
      train_log.jsonl   one {epoch, loss, macro_f1, wallclock_ms} record per epoch
      config.json       every resolved setting
      split.json        training and held-out document names
    """
    try:
        run = resolve_run_config(config_path, overrides, seed=seed, epochs=epochs, lr=lr, ablate=ablate)
        docs = load_corpus(corpus_dir)
        train_docs, test_docs = _split_corpus(docs, n_train, run.train.seed)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_split(train_docs, test_docs, out_dir)
        result = _train_run(run, train_docs, out_dir)
        final_f1 = _final_train_f1(result, train_docs)
    except RUN_ERRORS as e:
        _fail(str(e))

    if run.ablate:
        click.echo(f"Ablation preset: {run.ablate} ({resolve_preset(run.ablate).description})")
    click.echo(f"✅ Trained on {len(train_docs)} documents for {run.train.epochs} epochs")
    click.echo(f"   Checkpoint: {out_dir / 'model.ckpt'}")
    click.echo(f"Final train macro F1: {final_f1:.4f}")


@cli.command("eval")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--split", "n_train", type=click.IntRange(min=1), default=None, help="Evaluate only the held-out part of this split")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True, help="Split seed")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False, path_type=Path), help="Report JSON path")
def eval_cmd(checkpoint_path: Path, corpus_dir: Path, n_train: int | None, seed: int, out_path: Path):
    """Per-class precision/recall/F1 and macro F1 of a checkpoint on a labeled corpus."""
    if not checkpoint_path.exists():
        _fail(f"Checkpoint not found: {checkpoint_path}")
    try:
        params = load_checkpoint(checkpoint_path)
        docs = load_corpus(corpus_dir)
        if n_train is not None:
            _, docs = split(docs, n_train, seed)
        report = evaluate(params, docs, threads=worker_count())
        write_report(report, out_path)
    except RUN_ERRORS as e:
        _fail(str(e))

    _print_report(report)
    click.echo(f"Macro F1: {report.macro_f1:.4f}")
    click.echo(f"Report: {out_path}")


@cli.command("robust")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--split", "n_train", type=click.IntRange(min=1), default=None, help="Evaluate only the held-out part of this split")
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True, help="Split and perturbation seed")
@click.option("--p", "p", type=click.FloatRange(0.0, 1.0), default=0.1, show_default=True, help="Per-word OCR error probability")
@click.option("--confusions", "confusions_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="JSON confusion table; built-in table by default")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False, path_type=Path), help="Report JSON path")
def robust_cmd(
    checkpoint_path: Path,
    corpus_dir: Path,
    n_train: int | None,
    seed: int,
    p: float,
    confusions_path: Path | None,
    out_path: Path,
):
    """Clean versus OCR-perturbed evaluation; the report carries the macro-F1 drop."""
    if not checkpoint_path.exists():
        _fail(f"Checkpoint not found: {checkpoint_path}")
    try:
        table = load_confusion_table(confusions_path) if confusions_path else ConfusionTable()
        params = load_checkpoint(checkpoint_path)
        docs = load_corpus(corpus_dir)
        if n_train is not None:
            _, docs = split(docs, n_train, seed)
        report = robustness_report(params, docs, p=p, table=table, seed=seed, threads=worker_count())
        write_report(report, out_path)
    except RUN_ERRORS as e:
        _fail(str(e))

    _print_report(report)
    click.echo(f"Clean macro F1:     {report.clean_macro_f1:.4f}")
    click.echo(f"Perturbed macro F1: {report.macro_f1:.4f} (p={p})")
    click.echo(f"Drop:               {report.drop:.4f}")
    click.echo(f"Report: {out_path}")


@dataclass
class AblationRun:
    row: str
    seed: int
    out_dir: Path
    macro_f1: float = 0.0


def _run_ablation(base: RunConfig, row: str, seed: int, train_docs: list[Document], test_docs: list[Document], out_dir: Path) -> AblationRun:
    preset = resolve_preset(row)
    run = RunConfig(model=preset.apply(base.model), train=dataclasses.replace(base.train, seed=seed), ablate=preset.row)
    run_dir = out_dir / f"row{preset.row.lstrip('#')}-seed{seed}"
    result = _train_run(run, train_docs, run_dir)
    report = evaluate(result.params, test_docs)
    write_report(report, run_dir / "report.json")
    logger.info(f"Ablation {preset.row} seed {seed}: test macro F1 {report.macro_f1:.4f}")
    return AblationRun(row=preset.row, seed=seed, out_dir=run_dir, macro_f1=report.macro_f1)


def ablation_table(runs: list[AblationRun], rows: list[str], seeds: list[int]) -> dict:
    """Mean macro F1 per row and its gain over the first row."""
    by_row = {row: {r.seed: r.macro_f1 for r in runs if r.row == row} for row in rows}
    means = {row: float(np.mean([by_row[row][s] for s in seeds])) for row in rows}
    baseline = means[rows[0]]
    return {
        "seeds": seeds,
        "rows": [
            {
                "row": row,
                "description": ABLATION_PRESETS[row].description,
                "macro_f1": {str(s): by_row[row][s] for s in seeds},
                "mean_macro_f1": means[row],
                "delta": means[row] - baseline,
            }
            for row in rows
        ],
    }


def ablation_markdown(table: dict) -> str:
    seeds = table["seeds"]
    header = "| Row | Components | " + " | ".join(f"seed {s}" for s in seeds) + " | Mean macro F1 | Gain |"
    lines = [header, "|" + "---|" * (len(seeds) + 4)]
    for entry in table["rows"]:
        scores = " | ".join(f"{entry['macro_f1'][str(s)]:.4f}" for s in seeds)
        lines.append(
            f"| {entry['row']} | {entry['description']} | {scores} | "
            f"{entry['mean_macro_f1']:.4f} | {entry['delta']:+.4f} |"
        )
    return "\n".join(lines) + "\n"


@cli.command("ablate")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--split", "n_train", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--rows", "row_names", multiple=True, help=f"Ablation rows to run (default: {' '.join(DEFAULT_ABLATION_ROWS)})")
@click.option("--seed", "seeds", type=click.IntRange(min=0), multiple=True, help="Seeds shared by every row (default: 0)")
@click.option("--epochs", type=click.IntRange(min=0), default=None)
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
def ablate_cmd(
    corpus_dir: Path,
    n_train: int,
    config_path: Path | None,
    row_names: tuple[str, ...],
    seeds: tuple[int, ...],
    epochs: int | None,
    overrides: tuple[str, ...],
    out_dir: Path,
):
    """Train and evaluate each ablation row with shared seeds; write ablation.json and ablation.md.

    Each seed fixes the train/test split, so every row sees the same documents.
    Runs execute concurrently (FSDAG_THREADS caps the workers), each in its
    own directory under --out.
    """
    seed_list = list(seeds) or [0]
    try:
        rows = [resolve_preset(name).row for name in (row_names or DEFAULT_ABLATION_ROWS)]
        base = resolve_run_config(config_path, overrides, epochs=epochs)
        docs = load_corpus(corpus_dir)
        splits = {seed: _split_corpus(docs, n_train, seed) for seed in seed_list}
        if any(not test for _, test in splits.values()):
            raise ConfigError("ablation needs held-out documents; lower --split")
        out_dir.mkdir(parents=True, exist_ok=True)
        write_resolved_config(base, out_dir)

        jobs = [(row, seed) for row in rows for seed in seed_list]
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            futures = [pool.submit(_run_ablation, base, row, seed, *splits[seed], out_dir) for row, seed in jobs]
            runs = [f.result() for f in futures]
    except RUN_ERRORS as e:
        _fail(str(e))

    table = ablation_table(runs, rows, seed_list)
    table["base_config"] = flatten(base)
    (out_dir / "ablation.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    markdown = ablation_markdown(table)
    (out_dir / "ablation.md").write_text(markdown, encoding="utf-8")
    click.echo(markdown)
    click.echo(f"✅ {len(runs)} runs written to {out_dir}")


if __name__ == "__main__":
    cli()
