import logging
from pathlib import Path
from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional, Sequence

from rich.panel import Panel
from rich.table import Table
from rich.progress import BarColumn, MofNCompleteColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn

from seamdec.asmtext import parse_function, strip_frame, canonicalize
from seamdec.binseg import Segmenter, SegmenterConfig, train_segmenter
from seamdec.bintran import BinTranConfig, Translator, train_translator, write_attention_csv
from seamdec.config import ConfigManager
from seamdec.constants import CHECKPOINT_SUFFIX, CORPUS_FILE, POSITIONS_FILE, console
from seamdec.corpus import build_corpus, collect_position_stats, label_boundaries, load_positions, save_corpus
from seamdec.decompiler import DecompileOptions, decompile_function, segment_body
from seamdec.errors import MissingInput, SeamError, StageError
from seamdec.metrics import write_report
from seamdec.models import CorpusStats, EvalReport
from seamdec.orchestrator import DISTANCE_SWEEP, SIZE_SWEEP, Orchestrator
from seamdec.progress import RichProgressReporter
from seamdec.positions import PositionTable
from seamdec.semrec import Namer, NamerConfig, namer_pairs, read_namer_jsonl, train_namer, write_namer_jsonl

NAMER_PAIRS_FILE = "namer.jsonl"


def _require(path: Optional[Path], what: str) -> Path:
    if path is None or not Path(path).exists():
        raise MissingInput(what, path)
    return Path(path)


class SeamApp:
    """Command implementations behind main.py; every command returns its JSON payload."""

    def __init__(self, config: ConfigManager, report_path: Optional[Path] = None, timing: bool = False):
        self.config = config
        self.report_path = Path(report_path) if report_path else None
        self.timing = timing

    # paths
    @property
    def corpus_dir(self) -> Path:
        return self.config.output_dir / "corpus"

    def checkpoint(self, name: str, override: Optional[Path] = None) -> Path:
        return Path(override) if override else self.config.output_dir / f"{name}{CHECKPOINT_SUFFIX}"

    @contextmanager
    def progress(self) -> Iterator[RichProgressReporter]:
        prog = Progress(
            SpinnerColumn(),
            TextColumn("[bold blue]{task.description}"),
            BarColumn(),
            MofNCompleteColumn(),
            TimeElapsedColumn(),
            TextColumn("[dim]{task.fields[status]}"),
            console=console,
            transient=True,
        )
        with prog:
            yield RichProgressReporter(prog)

    def finish(self, payload: dict, table: Optional[Table] = None) -> dict:
        if table is not None:
            console.print(table)
        if self.report_path is not None:
            write_report(self.report_path, payload)
            console.print(f"[dim]Report written to {self.report_path}[/dim]")
        return payload

    def _orchestrator(self, reporter=None) -> Orchestrator:
        return Orchestrator(self.config, reporter)

    # gen-corpus
    def gen_corpus(self, out_dir: Optional[Path] = None, size: Optional[int] = None,
                   backend: Optional[str] = None) -> dict:
        out_dir = Path(out_dir) if out_dir else self.corpus_dir
        console.print(f"[info]Generating corpus into {out_dir}[/info]")
        with self.progress() as reporter:
            samples, split, stats = build_corpus(self.config.corpus, size, self.config.seed, backend,
                                                 self.config.compiler, self.config.workers, reporter)
        positions = collect_position_stats(samples)
        save_corpus(out_dir, samples, split, positions)
        write_namer_jsonl(out_dir / NAMER_PAIRS_FILE, namer_pairs(samples))

        payload = {
            "directory": str(out_dir),
            "samples": len(samples),
            "generated": stats.generated,
            "duplicates": stats.duplicates,
            "rejected": stats.rejected,
            "per_stratum": dict(sorted(stats.per_stratum.items())),
            "seconds": round(stats.elapsed, 3),
            "split": {"train": len(split.train), "validation": len(split.validation), "test": len(split.test)},
            "backend": samples[0].provenance.get("backend") if samples else None,
            "boundary_bits": {"ones": sum(sum(s.boundaries) for s in samples),
                              "zeros": sum(len(s.boundaries) - sum(s.boundaries) for s in samples)},
        }
        return self.finish(payload, self._corpus_table(stats))

    @staticmethod
    def _corpus_table(stats: CorpusStats) -> Table:
        table = Table(show_header=True, header_style="bold magenta", title="Corpus")
        table.add_column("Stratum")
        table.add_column("Accepted", justify="right")
        for stratum, count in sorted(stats.per_stratum.items()):
            table.add_row(stratum, str(count))
        table.add_row("[yellow]Duplicates[/yellow]", str(stats.duplicates))
        table.add_row("[red]Rejected[/red]", str(stats.rejected))
        return table

    # training
    def _splits(self, corpus_dir: Optional[Path]) -> Dict[str, list]:
        corpus_dir = Path(corpus_dir) if corpus_dir else self.corpus_dir
        _require(corpus_dir / CORPUS_FILE, "corpus")
        return self._orchestrator().load_splits(corpus_dir)

    @staticmethod
    def _history_table(title: str, header: Sequence[str], rows: List[Sequence]) -> Table:
        table = Table(show_header=True, header_style="bold cyan", title=title)
        for name in header:
            table.add_column(name, justify="right")
        for row in rows:
            table.add_row(*[f"{v:.4f}" if isinstance(v, float) else str(v) for v in row])
        return table

    def train_translator(self, corpus_dir: Optional[Path] = None, checkpoint: Optional[Path] = None,
                         epochs: Optional[int] = None) -> dict:
        splits = self._splits(corpus_dir)
        settings = self.config.translator
        if epochs is not None:
            settings = settings.model_copy(update={"epochs": epochs})
        cfg = BinTranConfig.from_settings(settings, self.config.seed)
        path = self.checkpoint("translator", checkpoint)
        with self.progress() as reporter:
            result = train_translator(splits["train"], splits["validation"], cfg, settings, path,
                                      self.config.deterministic, reporter)
        history = [[r.epoch, r.loss, r.val_loss, r.val_word_accuracy, r.val_sequence_accuracy]
                   for r in result.history]
        payload = {
            "checkpoint": str(result.checkpoint),
            "config": cfg.to_dict(),
            "best_epoch": result.best_epoch,
            "best_sequence_accuracy": round(result.best_sequence_accuracy, 6),
            "skipped_pairs": result.skipped,
            "history": [[e, round(a, 6), round(b, 6), round(c, 6), round(d, 6)] for e, a, b, c, d in history],
        }
        console.print(f"[success]Translator saved to {result.checkpoint}[/success]")
        return self.finish(payload, self._history_table(
            "Translator training", ["Epoch", "Loss", "Val loss", "Val word", "Val seq"], history))

    def train_segmenter(self, corpus_dir: Optional[Path] = None, checkpoint: Optional[Path] = None,
                        epochs: Optional[int] = None) -> dict:
        splits = self._splits(corpus_dir)
        settings = self.config.segmenter
        if epochs is not None:
            settings = settings.model_copy(update={"epochs": epochs})
        cfg = SegmenterConfig.from_settings(settings, self.config.seed)
        path = self.checkpoint("segmenter", checkpoint)
        ones = sum(sum(s.boundaries) for s in splits["train"])
        total = sum(len(s.boundaries) for s in splits["train"])
        with self.progress() as reporter:
            result = train_segmenter(splits["train"], splits["validation"], cfg, settings, path,
                                     self.config.deterministic, reporter)
        payload = {
            "checkpoint": str(result.checkpoint),
            "best_epoch": result.best_epoch,
            "best_f1": round(result.best_f1, 6),
            "labels": {"ones": ones, "zeros": total - ones},
            "history": [[h.epoch, round(h.loss, 6), round(h.val_f1, 6)] for h in result.history],
        }
        console.print(f"[success]Segmenter saved to {result.checkpoint}[/success]")
        return self.finish(payload, self._history_table(
            "Segmenter training", ["Epoch", "Loss", "Val F1"], [[h.epoch, h.loss, h.val_f1] for h in result.history]))

    def train_namer(self, corpus_dir: Optional[Path] = None, checkpoint: Optional[Path] = None,
                    pairs_path: Optional[Path] = None, epochs: Optional[int] = None) -> dict:
        settings = self.config.namer
        if epochs is not None:
            settings = settings.model_copy(update={"epochs": epochs})
        cfg = NamerConfig.from_settings(settings, self.config.seed)
        positions = PositionTable()
        if pairs_path is not None:
            train = read_namer_jsonl(_require(pairs_path, "namer pairs"))
            validation = []
        else:
            splits = self._splits(corpus_dir)
            train, validation = namer_pairs(splits["train"]), namer_pairs(splits["validation"])
            corpus = Path(corpus_dir) if corpus_dir else self.corpus_dir
            positions = load_positions(corpus) if (corpus / POSITIONS_FILE).exists() \
                else collect_position_stats(splits["train"])
        path = self.checkpoint("namer", checkpoint)
        with self.progress() as reporter:
            result = train_namer(train, validation, cfg, settings, path, positions,
                                 self.config.deterministic, reporter)
        payload = {
            "checkpoint": str(result.checkpoint),
            "best_epoch": result.best_epoch,
            "best_exact": round(result.best_exact, 6),
            "history": [[e, round(loss, 6), round(x, 6)] for e, loss, x in result.history],
        }
        console.print(f"[success]Namer saved to {result.checkpoint}[/success]")
        return self.finish(payload, self._history_table(
            "Namer training", ["Epoch", "Loss", "Exact"], [list(h) for h in result.history]))

    # inference
    def segment(self, asm_path: Path, checkpoint: Optional[Path] = None, oracle: bool = False,
                function: Optional[str] = None) -> dict:
        text = _require(asm_path, "assembly file").read_text(encoding="utf-8")
        func = parse_function(text, function)
        body = strip_frame(func)
        canon, _ = canonicalize(body, func.strings)
        segmenter = None
        if oracle:
            probabilities = [float(b) for b in label_boundaries(body)]
        else:
            segmenter = Segmenter.load(_require(self.checkpoint("segmenter", checkpoint), "segmenter checkpoint"))
            probabilities = segmenter.probabilities([c.tokens for c in canon])
        ranges = segment_body(canon, body, segmenter, oracle)
        closing = {end - 1 for _, end in ranges}
        payload = {
            "function": func.name,
            "instructions": [{"text": c.text, "probability": round(p, 6), "boundary": i in closing}
                             for i, (c, p) in enumerate(zip(canon, probabilities))],
            "segments": [list(r) for r in ranges],
        }
        table = Table(show_header=True, header_style="bold blue", title=f"Segments of {func.name}")
        table.add_column("#", style="dim", width=4)
        table.add_column("Instruction")
        table.add_column("p(boundary)", justify="right")
        for i, row in enumerate(payload["instructions"]):
            mark = "[success]|[/success]" if row["boundary"] else ""
            table.add_row(str(i), row["text"], f"{row['probability']:.3f} {mark}")
        return self.finish(payload, table)

    def _models(self, translator_ckpt: Optional[Path], segmenter_ckpt: Optional[Path],
                namer_ckpt: Optional[Path], oracle: bool):
        translator = Translator.load(_require(self.checkpoint("translator", translator_ckpt), "translator checkpoint"))
        segmenter = None
        if not oracle:
            segmenter = Segmenter.load(_require(self.checkpoint("segmenter", segmenter_ckpt), "segmenter checkpoint"))
        namer = None
        if namer_ckpt is not None:
            namer = Namer.load(_require(namer_ckpt, "namer checkpoint"))
        return translator, segmenter, namer

    def decompile(self, asm_path: Path, translator_ckpt: Optional[Path] = None,
                  segmenter_ckpt: Optional[Path] = None, namer_ckpt: Optional[Path] = None,
                  oracle: bool = False, with_name: bool = False, function: Optional[str] = None,
                  attention_csv: Optional[Path] = None, output: Optional[Path] = None) -> dict:
        text = _require(asm_path, "assembly file").read_text(encoding="utf-8")
        translator, segmenter, namer = self._models(translator_ckpt, segmenter_ckpt, namer_ckpt, oracle)
        options = DecompileOptions(oracle_segmentation=oracle, with_function_name=with_name, function=function)
        result = decompile_function(text, translator, segmenter, namer, options)
        if output is not None:
            Path(output).write_text(result.c_text, encoding="utf-8")
        if attention_csv is not None:
            self._export_attention(text, function, result.segments, translator, Path(attention_csv))

        console.print(Panel(result.c_text.rstrip() or "[dim](empty)[/dim]", title="Decompiled",
                            border_style="green", expand=False))
        for message in result.diagnostics:
            console.print(f"[warning]! {message}[/warning]")
        return self.finish(result.to_dict(self.timing))

    @staticmethod
    def _export_attention(text: str, function: Optional[str], segments, translator: Translator, path: Path) -> None:
        func = parse_function(text, function)
        canon, _ = canonicalize(strip_frame(func), func.strings)
        for g, (start, end) in enumerate(segments):
            insns = [c.tokens for c in canon[start:end]]
            result = translator.translate(insns, with_attention=True)
            write_attention_csv(path.with_name(f"{path.stem}.seg{g}{path.suffix}"), insns, result)
        logging.info(f"Attention weights for {len(segments)} segments exported next to {path}")

    # evaluation
    @staticmethod
    def _eval_table(report: EvalReport) -> Table:
        table = Table(show_header=True, header_style="bold magenta", title="Translation accuracy")
        table.add_column("Kind")
        table.add_column("Level", justify="right")
        table.add_column("Lines", justify="right")
        table.add_column("Word acc.", justify="right")
        table.add_column("Seq. acc.", justify="right")
        for row in report.breakdown:
            table.add_row(row.kind, str(row.level), str(row.count),
                          f"{row.word_accuracy:.4f}", f"{row.sequence_accuracy:.4f}")
        table.add_row("[bold]all[/bold]", "", str(report.total),
                      f"[metric]{report.word_accuracy:.4f}[/metric]", f"[metric]{report.sequence_accuracy:.4f}[/metric]")
        return table

    def evaluate(self, corpus_dir: Optional[Path] = None, translator_ckpt: Optional[Path] = None,
                 split: str = "test", kinds: Optional[Sequence[str]] = None, levels: Optional[Sequence[int]] = None,
                 end_to_end: bool = False, oracle: bool = True, segmenter_ckpt: Optional[Path] = None,
                 namer_ckpt: Optional[Path] = None, limit: Optional[int] = None) -> dict:
        samples = Orchestrator.filter_levels(self._splits(corpus_dir)[split], kinds, levels)
        if limit is not None:
            samples = samples[:limit]
        if not samples:
            raise SeamError(f"no samples in the {split} split match the filters")
        translator, segmenter, namer = self._models(translator_ckpt, segmenter_ckpt, namer_ckpt, oracle)
        with self.progress() as reporter:
            orc = self._orchestrator(reporter)
            report = orc.evaluate(translator, samples, self.timing)
            payload = report.to_dict(self.timing)
            payload["split"] = split
            if end_to_end:
                payload["end_to_end"] = orc.end_to_end(translator, samples, segmenter, namer)
        table = self._eval_table(report)
        if end_to_end:
            e2e = payload["end_to_end"]
            console.print(f"[info]End-to-end: {e2e['structurally_equal']}/{e2e['functions']} structurally equal, "
                          f"literal restoration {e2e['literal_restoration']:.4f}[/info]")
        self.finish(payload, table)
        if end_to_end and payload["end_to_end"]["stage_failures"]:
            e2e = payload["end_to_end"]
            raise StageError("decompile", SeamError(
                f"{e2e['stage_failures']} of {e2e['functions']} functions failed to decompile"))
        return payload

    def ablate(self, corpus_dir: Optional[Path] = None, out_dir: Optional[Path] = None,
               epochs: Optional[int] = None, distances: Sequence[int] = DISTANCE_SWEEP,
               sizes: Sequence[float] = SIZE_SWEEP) -> dict:
        splits = self._splits(corpus_dir)
        if epochs is not None:
            self.config.translator = self.config.translator.model_copy(update={"epochs": epochs})
        base = BinTranConfig.from_settings(self.config.translator, self.config.seed)
        out_dir = Path(out_dir) if out_dir else self.config.output_dir / "ablate"
        with self.progress() as reporter:
            rows = self._orchestrator(reporter).ablate(splits["train"], splits["validation"], out_dir, base,
                                                       distances, sizes)
        table = Table(show_header=True, header_style="bold magenta", title="Ablation")
        for name in ("Variant", "Train", "Word acc.", "Seq. acc."):
            table.add_column(name, justify="left" if name == "Variant" else "right")
        for row in rows:
            table.add_row(row["variant"], str(row["train_samples"]),
                          f"{row['word_accuracy']:.4f}", f"{row['sequence_accuracy']:.4f}")
        return self.finish({"epochs": self.config.translator.epochs, "runs": rows}, table)
