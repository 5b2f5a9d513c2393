import time
import logging
from pathlib import Path
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

from seamdec import csubset as cs
from seamdec.binseg import Segmenter
from seamdec.bintran import BinTranConfig, Translator, train_translator, translation_pairs
from seamdec.config import ConfigManager
from seamdec.corpus import load_corpus, select
from seamdec.decompiler import DecompileOptions, decompile_function
from seamdec.errors import SeamError
from seamdec.metrics import compute_metrics
from seamdec.models import EvalReport, SamplePair
from seamdec.progress import NullProgressReporter, ProgressReporter
from seamdec.seamcode import normalize_identifiers
from seamdec.semrec import Namer

DISTANCE_SWEEP = (15, 20, 25, 30)
SIZE_SWEEP = (0.25, 0.5, 1.0)
MAX_E2E_FAILURES = 20


def comparator_swap(pred: Sequence[str], ref: Sequence[str]) -> bool:
    """Prediction differs from the reference only in which comparison operator it uses."""
    if len(pred) != len(ref) or list(pred) == list(ref):
        return False
    return all(a == b or (a in cs.COMPARE_OPS and b in cs.COMPARE_OPS) for a, b in zip(pred, ref))


def structurally_equal(decompiled: str, source: str) -> bool:
    """AST equality once both sides are renamed to v<k>/l<k>/u<k>."""
    try:
        left, _ = normalize_identifiers(cs.parse_c(decompiled))
        right, _ = normalize_identifiers(cs.parse_c(source))
    except SeamError:
        return False
    return left == right


class Orchestrator:
    """Runs evaluations, ablations and end-to-end checks over a persisted corpus."""

    def __init__(self, config: ConfigManager, reporter: Optional[ProgressReporter] = None):
        self.config = config
        self.reporter = reporter or NullProgressReporter()
        self.failures: List[Tuple[str, str]] = []

    def load_splits(self, corpus_dir: Path) -> Dict[str, List[SamplePair]]:
        samples, split = load_corpus(corpus_dir)
        return {
            "train": select(samples, split.train),
            "validation": select(samples, split.validation),
            "test": select(samples, split.test),
        }

    @staticmethod
    def filter_levels(samples: Sequence[SamplePair], kinds: Optional[Sequence[str]] = None,
                      levels: Optional[Sequence[int]] = None) -> List[SamplePair]:
        return [s for s in samples
                if (not kinds or s.kind in kinds) and (levels is None or s.level in levels)]

    # evaluation
    def evaluate(self, translator: Translator, samples: Sequence[SamplePair], timing: bool = False) -> EvalReport:
        """Line-level word/sequence accuracy under oracle segmentation."""
        cfg = translator.cfg
        pairs = [p for p in translation_pairs(samples, cfg.target_form) if 0 < len(p.insns) <= cfg.max_source]
        if not pairs:
            raise SeamError("no evaluable line pairs in the selected samples")
        task = self.reporter.add_task("Evaluating", total=len(pairs))
        predictions: List[List[str]] = []
        started = time.perf_counter()
        batch = self.config.translator.batch_size
        for start in range(0, len(pairs), batch):
            chunk = pairs[start:start + batch]
            predictions += [r.tokens for r in translator.translate_many([p.insns for p in chunk], batch)]
            self.reporter.update_task(task, advance=len(chunk))
        elapsed = time.perf_counter() - started
        self.reporter.remove_task(task)

        report = compute_metrics(predictions, [p.target for p in pairs],
                                 [(p.kind, p.level) for p in pairs],
                                 [f"{p.sample_id}#{i}" for i, p in enumerate(pairs)])
        report.extra["comparator_swaps"] = float(sum(comparator_swap(a, p.target)
                                                     for a, p in zip(predictions, pairs)))
        if timing:
            report.runtime = {"lines": len(pairs), "seconds": round(elapsed, 6),
                              "mean_seconds_per_line": round(elapsed / len(pairs), 9)}
        logging.info(f"Evaluated {len(pairs)} lines: word={report.word_accuracy:.4f} "
                     f"seq={report.sequence_accuracy:.4f}")
        return report

    def end_to_end(self, translator: Translator, samples: Sequence[SamplePair],
                   segmenter: Optional[Segmenter] = None, namer: Optional[Namer] = None) -> dict:
        """decompile_function over whole samples; oracle segmentation unless a segmenter is given."""
        options = DecompileOptions(oracle_segmentation=segmenter is None)
        equal = failed = harvested = restored = 0
        exemplars: List[dict] = []
        task = self.reporter.add_task("Decompiling", total=len(samples))
        for sample in samples:
            try:
                result = decompile_function(sample.asm, translator, segmenter, namer, options)
            except SeamError as e:
                failed += 1
                self.failures.append((sample.id, str(e)))
                if len(exemplars) < MAX_E2E_FAILURES:
                    exemplars.append({"id": sample.id, "error": str(e)})
                self.reporter.update_task(task, advance=1)
                continue
            harvested += result.literals_harvested
            restored += result.literals_restored
            if structurally_equal(result.c_text, sample.source):
                equal += 1
            elif len(exemplars) < MAX_E2E_FAILURES:
                exemplars.append({"id": sample.id, "decompiled": result.c_text, "source": sample.source})
            self.reporter.update_task(task, advance=1)
        self.reporter.remove_task(task)
        total = len(samples)
        return {
            "functions": total,
            "structurally_equal": equal,
            "structural_rate": round(equal / total, 6) if total else 0.0,
            "stage_failures": failed,
            "literals_harvested": harvested,
            "literals_restored": restored,
            "literal_restoration": round(restored / harvested, 6) if harvested else 1.0,
            "segmentation": "oracle" if segmenter is None else "model",
            "failures": exemplars,
        }

    # ablation
    def variants(self, base: BinTranConfig, distances: Sequence[int] = DISTANCE_SWEEP) -> List[Tuple[str, BinTranConfig]]:
        out = [
            ("seamcode/relative", replace(base, target_form="seamcode", position_mode="relative",
                                          mask_mode="dependency")),
            ("src/relative", replace(base, target_form="src", position_mode="relative", mask_mode="dependency")),
            ("seamcode/absolute", replace(base, target_form="seamcode", position_mode="absolute",
                                          mask_mode="dependency")),
            ("vanilla", replace(base, target_form="seamcode", position_mode="absolute", mask_mode="none")),
        ]
        out += [(f"distance={d}", replace(base, target_form="seamcode", position_mode="relative",
                                          mask_mode="dependency", max_distance=d)) for d in distances]
        return out

    def ablate(self, train: Sequence[SamplePair], validation: Sequence[SamplePair], out_dir: Path,
               base: BinTranConfig, distances: Sequence[int] = DISTANCE_SWEEP,
               sizes: Sequence[float] = SIZE_SWEEP) -> List[dict]:
        """Train every variant on the same data, seed and epoch budget; compare on validation."""
        settings = self.config.translator
        rows = []
        runs = [(name, cfg, 1.0) for name, cfg in self.variants(base, distances)]
        runs += [(f"train_size={frac:g}", replace(base, target_form="seamcode", position_mode="relative",
                                                  mask_mode="dependency"), frac)
                 for frac in sizes if frac < 1.0]
        for name, cfg, fraction in runs:
            subset = list(train[: max(1, int(len(train) * fraction))])
            checkpoint = Path(out_dir) / (name.replace("/", "_").replace("=", "_") + ".ckpt")
            logging.info(f"Ablation run '{name}' on {len(subset)} training samples")
            result = train_translator(subset, validation, cfg, settings, checkpoint,
                                      self.config.deterministic, self.reporter)
            translator = Translator.load(result.checkpoint)
            report = self.evaluate(translator, validation)
            rows.append({
                "variant": name,
                "target_form": cfg.target_form,
                "position_mode": cfg.position_mode,
                "mask_mode": cfg.mask_mode,
                "max_distance": cfg.max_distance,
                "train_samples": len(subset),
                "best_epoch": result.best_epoch,
                "word_accuracy": round(report.word_accuracy, 6),
                "sequence_accuracy": round(report.sequence_accuracy, 6),
            })
        return rows
