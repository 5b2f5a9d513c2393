import sys
import logging
import argparse
from pathlib import Path

if sys.platform == 'win32':
    try:
        sys.stdout.reconfigure(encoding='utf-8')
        sys.stderr.reconfigure(encoding='utf-8')
    except Exception:
        pass

from rich.panel import Panel

from seamdec.app import SeamApp
from seamdec.config import ConfigManager
from seamdec.constants import APP_NAME, APP_VERSION, EXIT_OK, EXIT_STAGE, LOG_FILE, console, init_logging
from seamdec.errors import ConfigError, SeamError, StageError


# ============================================================================
# ARGUMENTS
# ============================================================================
def _levels(text: str):
    return [int(part) for part in text.split(",") if part.strip()]


def _names(text: str):
    return [part.strip() for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="Path to the JSON configuration (default: config.json)")
    common.add_argument("--seed", type=int, help="Override the configured seed")
    common.add_argument("--report", metavar="FILE", help="Write the JSON report to FILE")
    common.add_argument("--output-dir", metavar="DIR", help="Override the configured output directory")
    common.add_argument("--workers", type=int, help="Worker processes for corpus generation")
    common.add_argument("--verbose", action="store_true", help="Enable verbose (DEBUG) logging")

    parser = argparse.ArgumentParser(prog="./seamdec", description=f"{APP_NAME}: neural decompiler for -O0 x86-64")
    parser.add_argument("-v", "--version", action="version", version=f"%(prog)s {APP_VERSION}",
                        help="Show version information and exit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", parents=[common], help="Generate a paired corpus of C and assembly")
    p.add_argument("--backend", choices=["reference", "gcc"], help="Code generator backend")
    p.add_argument("--size", type=int, help="Number of samples across all strata")
    p.add_argument("--corpus", metavar="DIR", help="Output directory (default: <output_dir>/corpus)")

    for name, what in (("train-translator", "the instruction-to-SeamCode translator"),
                       ("train-segmenter", "the boundary classifier"),
                       ("train-namer", "the identifier generator")):
        p = sub.add_parser(name, parents=[common], help=f"Train {what}")
        p.add_argument("--corpus", metavar="DIR", help="Corpus directory (default: <output_dir>/corpus)")
        p.add_argument("--checkpoint", metavar="FILE", help="Where to write the best checkpoint")
        p.add_argument("--epochs", type=int, help="Override the configured epoch count")
        if name == "train-namer":
            p.add_argument("--pairs", metavar="FILE", help="Train from a JSONL file of (tokens, identifiers)")

    p = sub.add_parser("segment", parents=[common], help="Predict source-line boundaries for one function")
    p.add_argument("asm", help="Assembly file (.s)")
    p.add_argument("--segmenter", metavar="FILE", help="Segmenter checkpoint")
    p.add_argument("--function", metavar="NAME", help="Function to pick from a multi-function listing")
    p.add_argument("--oracle", action="store_true", help="Use the .loc line boundaries instead of the model")

    p = sub.add_parser("decompile", parents=[common], help="Decompile one function to C")
    p.add_argument("asm", help="Assembly file (.s)")
    p.add_argument("--checkpoint", metavar="FILE", help="Translator checkpoint")
    p.add_argument("--segmenter", metavar="FILE", help="Segmenter checkpoint")
    p.add_argument("--namer", metavar="FILE", help="Namer checkpoint; omit to keep v<k>/l<k>/u<k> names")
    p.add_argument("--function", metavar="NAME", help="Function to pick from a multi-function listing")
    p.add_argument("--oracle", action="store_true", help="Segment with the .loc line boundaries")
    p.add_argument("--with-name", action="store_true", help="Wrap the body in a named function")
    p.add_argument("--attention-csv", metavar="FILE", help="Export attention weights per segment as CSV")
    p.add_argument("-o", "--output", metavar="FILE", help="Write the C text to FILE")
    p.add_argument("--timing", action="store_true", help="Include wall-clock timing in the report")

    p = sub.add_parser("eval", parents=[common], help="Measure translation accuracy on a corpus split")
    p.add_argument("--corpus", metavar="DIR", help="Corpus directory (default: <output_dir>/corpus)")
    p.add_argument("--checkpoint", metavar="FILE", help="Translator checkpoint")
    p.add_argument("--split", choices=["train", "validation", "test"], default="test")
    p.add_argument("--kinds", type=_names, help="Comma-separated statement kinds to keep")
    p.add_argument("--levels", type=_levels, help="Comma-separated levels to keep")
    p.add_argument("--limit", type=int, help="Evaluate at most this many samples")
    p.add_argument("--end-to-end", action="store_true", help="Also decompile whole functions and compare ASTs")
    p.add_argument("--segmenter", metavar="FILE", help="Segmenter for --end-to-end (default: oracle segmentation)")
    p.add_argument("--namer", metavar="FILE", help="Namer checkpoint for --end-to-end")
    p.add_argument("--timing", action="store_true", help="Include per-line runtime in the report")

    p = sub.add_parser("ablate", parents=[common], help="Train and compare translator variants")
    p.add_argument("--corpus", metavar="DIR", help="Corpus directory (default: <output_dir>/corpus)")
    p.add_argument("--out", metavar="DIR", help="Checkpoint directory for the variants")
    p.add_argument("--epochs", type=int, help="Epoch budget shared by every variant")
    p.add_argument("--distances", type=_levels, help="Comma-separated clip distances to sweep")
    return parser


def _path(value):
    return Path(value) if value else None


def run(args: argparse.Namespace) -> dict:
    config = ConfigManager.load(_path(args.config))
    if args.seed is not None:
        config.seed = args.seed
    if args.output_dir:
        config.output_dir = Path(args.output_dir)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError([f"workers: must be >= 1, got {args.workers}"])
        config.workers = args.workers

    app = SeamApp(config, _path(args.report), getattr(args, "timing", False))
    cmd = args.command
    if cmd == "gen-corpus":
        return app.gen_corpus(_path(args.corpus), args.size, args.backend)
    if cmd == "train-translator":
        return app.train_translator(_path(args.corpus), _path(args.checkpoint), args.epochs)
    if cmd == "train-segmenter":
        return app.train_segmenter(_path(args.corpus), _path(args.checkpoint), args.epochs)
    if cmd == "train-namer":
        return app.train_namer(_path(args.corpus), _path(args.checkpoint), _path(args.pairs), args.epochs)
    if cmd == "segment":
        return app.segment(Path(args.asm), _path(args.segmenter), args.oracle, args.function)
    if cmd == "decompile":
        return app.decompile(Path(args.asm), _path(args.checkpoint), _path(args.segmenter), _path(args.namer),
                             args.oracle, args.with_name, args.function, _path(args.attention_csv),
                             _path(args.output))
    if cmd == "eval":
        return app.evaluate(_path(args.corpus), _path(args.checkpoint), args.split, args.kinds, args.levels,
                            args.end_to_end, args.segmenter is None, _path(args.segmenter), _path(args.namer),
                            args.limit)
    if cmd == "ablate":
        if args.distances:
            return app.ablate(_path(args.corpus), _path(args.out), args.epochs, args.distances)
        return app.ablate(_path(args.corpus), _path(args.out), args.epochs)
    raise SeamError(f"unknown command {cmd}")


# ============================================================================
# MAIN ENTRY POINT
# ============================================================================
def main(argv=None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    init_logging(logging.DEBUG if args.verbose else logging.INFO)
    logging.info(f"{APP_NAME} {APP_VERSION}: {args.command}")

    try:
        run(args)
        return EXIT_OK
    except KeyboardInterrupt:
        console.print("\n\n[yellow]Interrupt received. Shutting down...[/yellow]")
        return EXIT_STAGE
    except ConfigError as e:
        console.print(Panel(str(e), title="[bold red]Configuration Error[/bold red]", border_style="red", expand=False))
        return e.exit_code
    except SeamError as e:
        title = f"Stage Failed: {e.stage}" if isinstance(e, StageError) else "Command Failed"
        console.print(Panel(f"[bold red]{e}[/bold red]", title=f"[bold red]{title}[/bold red]",
                            border_style="red", expand=False))
        logging.error(f"{args.command} failed: {e}", exc_info=True)
        return e.exit_code
    except Exception as e:
        msg = f"[bold red]An unexpected crash occurred:[/bold red]\n{e}\n\n[dim]Please check {LOG_FILE} for the full traceback.[/dim]"
        console.print(Panel(msg, title="[bold red]Application Crash[/bold red]", border_style="red", expand=False))
        logging.critical(f"Fatal error: {e}", exc_info=True)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
