import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path
from rich.console import Console
from rich.theme import Theme

APP_VERSION = "v1.0.0"
APP_NAME = "SEAM DECOMPILER"

CONFIG_FILE = Path("config.json")
LOG_FILE = Path("seam.log")
COMPILER_ENV = "SEAM_CC"

CORPUS_FILE = "corpus.jsonl"
SPLIT_FILE = "split.json"
POSITIONS_FILE = "positions.json"
CHECKPOINT_SUFFIX = ".ckpt"
SIDECAR_SUFFIX = ".json"

# Exit codes surfaced by main.py
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

MAX_VARS_PER_TYPE = 16
MAX_EXPR_DEPTH = 5
POSITION_COUNT = 26

# Assembly stream separator between instructions
INSN_SEP = ";"

GCC_FLAGS = [
    "-S", "-O0", "-g", "-masm=intel",
    "-fno-asynchronous-unwind-tables", "-fcf-protection=none",
]


def init_logging(level: int = logging.INFO) -> None:
    """Configure application logging with RotatingFileHandler safely."""
    try:
        log_handler = RotatingFileHandler(
            LOG_FILE, maxBytes=5 * 1024 * 1024, backupCount=3, encoding='utf-8'
        )
        log_formatter = logging.Formatter(
            fmt='%(asctime)s | %(levelname)s | [%(name)s] %(message)s',
            datefmt='%H:%M:%S'
        )
        log_handler.setFormatter(log_formatter)

        root_logger = logging.getLogger()
        root_logger.setLevel(level)
        for h in root_logger.handlers[:]:
            root_logger.removeHandler(h)
        root_logger.addHandler(log_handler)
    except Exception:
        pass


theme = Theme({
    "info": "cyan",
    "warning": "yellow",
    "error": "bold red",
    "success": "bold green",
    "dim": "dim white",
    "stage": "bright_magenta",
    "metric": "bright_cyan",
})
console = Console(theme=theme)
