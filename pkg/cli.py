"""Command-line entry point: train, decode, eval, gradcheck, gentask.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from core.config import apply_overrides, parse_config
from core.errors import NMTError, NumericError
from services.gradcheck import GRADCHECK_TOLERANCE, check_model, parse_dims
from services.trainer import prepare_data, train_loop
from services.translator import Translator
from utils.corpus import ParallelCorpus, read_lines
from utils.metrics import bleu
from utils.tasks import SyntheticTaskSettings, TaskName, generate_task

logger = logging.getLogger("cli")

VARIANTS = ["attention", "2d-seq2seq", "2d-seq2seq-weighted", "coverage", "fertility"]


def setup_logging(level: str) -> None:
    root = logging.getLogger()
    for handler in [h for h in root.handlers if isinstance(h, RichHandler)]:
        root.removeHandler(handler)
    handler = RichHandler(console=Console(stderr=True), show_path=False)
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    root.addHandler(handler)
    root.setLevel(level.upper())


@click.group()
@click.option("--log-level", default="info", show_default=True, help="Python logging level.")
def cli(log_level: str) -> None:
    """2DLSTM and attention sequence-to-sequence translation."""
    setup_logging(log_level)


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(path_type=Path))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--seed", type=int, default=None, help="Overrides seed= in the config.")
@click.option("--workers", type=click.IntRange(min=1), default=None)
@click.option("--epochs", type=click.IntRange(min=1), default=None)
def train(config_path: Path, out_dir: Path, seed: Optional[int], workers: Optional[int], epochs: Optional[int]) -> None:
    """Train a model; writes checkpoints, avg.ckpt and metrics.jsonl to OUT_DIR."""
    config = apply_overrides(
        parse_config(config_path), {"seed": seed, "workers": workers, "epochs": epochs}
    )
    result = train_loop(config, prepare_data(config), out_dir)
    last = result.metrics[-1]
    Console().print(
        f"trained {config.variant}: step {last.step}, dev ppl {last.dev_ppl:.4f}, "
        f"averaged model {result.average_path}"
    )


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(path_type=Path),
              help="Run directory (uses avg.ckpt) or a checkpoint file inside one.")
@click.option("--input", "input_path", required=True, type=click.Path(path_type=Path))
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--beam", type=click.IntRange(min=1), default=None)
@click.option("--max-len", type=click.IntRange(min=1), default=None)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--recompute", is_flag=True, help="Rebuild the whole grid each step (slow debug path).")
@click.option("--alignments", "alignments_path", type=click.Path(dir_okay=False, path_type=Path),
              default=None, help="Write per-step attention weights as JSON lines.")
def decode(
    model_path: Path,
    input_path: Path,
    output_path: Path,
    beam: Optional[int],
    max_len: Optional[int],
    workers: int,
    recompute: bool,
    alignments_path: Optional[Path],
) -> None:
    """Beam-search translate INPUT line by line into OUTPUT."""
    translator = Translator.load(model_path, recompute=recompute)
    translator.decode_file(input_path, output_path, beam, max_len, workers, alignments_path)


@cli.command(name="eval")
@click.option("--hyps", "hyps_path", type=click.Path(path_type=Path), default=None)
@click.option("--refs", "refs_path", type=click.Path(path_type=Path), default=None)
@click.option("--model", "model_path", type=click.Path(path_type=Path), default=None)
@click.option("--corpus", default=None, help="Corpus prefix; reads PREFIX.src and PREFIX.tgt.")
@click.option("--beam", type=click.IntRange(min=1), default=None)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
def evaluate(
    hyps_path: Optional[Path],
    refs_path: Optional[Path],
    model_path: Optional[Path],
    corpus: Optional[str],
    beam: Optional[int],
    workers: int,
) -> None:
    """Corpus BLEU of HYPS against REFS, or perplexity and BLEU of MODEL on CORPUS."""
    console = Console()
    if hyps_path is not None and refs_path is not None:
        result = bleu(read_lines(hyps_path), read_lines(refs_path))
        console.print(f"BLEU {result.score:.2f}")
        return
    if model_path is None or corpus is None:
        raise click.UsageError("give either --hyps and --refs, or --model and --corpus")
    translator = Translator.load(model_path)
    pairs = ParallelCorpus.read(Path(f"{corpus}.src"), Path(f"{corpus}.tgt"))
    ppl = translator.perplexity(pairs, workers)
    result = translator.bleu(pairs, beam, workers)
    console.print(f"perplexity {ppl:.4f}")
    console.print(f"BLEU {result.score:.2f}")


@cli.command()
@click.option("--variant", type=click.Choice(VARIANTS), required=True)
@click.option("--dims", default="3x4x5", show_default=True, help="JxIxn")
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--epsilon", type=float, default=1e-5, show_default=True)
@click.option("--tolerance", type=float, default=GRADCHECK_TOLERANCE, show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
def gradcheck(variant: str, dims: str, seed: int, epsilon: float, tolerance: float, workers: int) -> None:
    """Compare tape gradients with central finite differences."""
    J, I, n = parse_dims(dims)
    report = check_model(variant, J, I, n, seed, epsilon, tolerance, grid_workers=workers)

    table = Table(title=f"gradcheck {variant} J={J} I={I} n={n}")
    table.add_column("parameter")
    table.add_column("size", justify="right")
    table.add_column("max rel error", justify="right")
    table.add_column("refined", justify="right")
    table.add_column("status")
    for entry in report.entries:
        table.add_row(
            entry.name,
            str(entry.size),
            f"{entry.max_rel_error:.3e}",
            str(entry.refined),
            "PASS" if entry.passed else "[red]FAIL[/red]",
        )
    console = Console()
    console.print(table)
    console.print("PASS" if report.passed else "FAIL")
    if not report.passed:
        worst = report.worst
        raise NumericError(f"gradient check failed: {worst.name} max rel error {worst.max_rel_error:.3e}")


@cli.command()
@click.option("--task", type=click.Choice([t.value for t in TaskName]), required=True)
@click.option("--out", required=True, help="Output prefix; writes OUT.src and OUT.tgt.")
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--size", type=click.IntRange(min=1), default=5000, show_default=True)
@click.option("--vocab-size", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--min-len", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--max-len", type=click.IntRange(min=1), default=10, show_default=True)
def gentask(task: str, out: str, seed: int, size: int, vocab_size: int, min_len: int, max_len: int) -> None:
    """Generate a synthetic parallel corpus."""
    if min_len > max_len:
        raise click.UsageError("--min-len must not exceed --max-len")
    settings = SyntheticTaskSettings(
        task=TaskName(task),
        vocab_size=vocab_size,
        min_length=min_len,
        max_length=max_len,
        samples=size,
        seed=seed,
    )
    corpus = generate_task(settings)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    corpus.save(Path(f"{out}.src"), Path(f"{out}.tgt"))
    logger.info("[DATA] wrote %d %s pairs to %s.src / %s.tgt", len(corpus), task, out, out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        code = cli.main(args=list(argv) if argv is not None else None, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except NMTError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    return code if isinstance(code, int) else 0


if __name__ == "__main__":
    sys.exit(main())
