import os
import json
import logging
from pathlib import Path
from typing import List, Literal, Optional, Tuple
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from seamdec.constants import CONFIG_FILE, COMPILER_ENV
from seamdec.csubset import StmtKind
from seamdec.errors import ConfigError


class CorpusSettings(BaseModel):
    size: int = Field(default=20000, gt=0)
    kinds: List[StmtKind] = Field(default_factory=lambda: list(StmtKind))
    levels: List[int] = Field(default_factory=lambda: [0, 1, 2])
    max_statements: int = Field(default=3, ge=1, le=10)
    return_rate: float = Field(default=0.2, ge=0.0, le=1.0)
    split: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    backend: Literal["reference", "gcc"] = "reference"
    attempts_factor: int = Field(default=4, ge=1)

    @field_validator("levels")
    @classmethod
    def _levels_known(cls, v: List[int]) -> List[int]:
        bad = [x for x in v if x not in (0, 1, 2)]
        if bad or not v:
            raise ValueError(f"levels must be a non-empty subset of [0, 1, 2], got {v}")
        return v

    @field_validator("kinds")
    @classmethod
    def _kinds_nonempty(cls, v: List[StmtKind]) -> List[StmtKind]:
        if not v:
            raise ValueError("at least one statement kind is required")
        return v

    @field_validator("split")
    @classmethod
    def _split_sums_to_one(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(x < 0 for x in v) or abs(sum(v) - 1.0) > 1e-6:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {list(v)}")
        return v


class TranslatorSettings(BaseModel):
    d_model: int = Field(default=128, gt=0)
    heads: int = Field(default=4, gt=0)
    ffn: int = Field(default=256, gt=0)
    max_distance: int = Field(default=20, ge=1)
    max_source: int = Field(default=64, gt=0)
    max_target: int = Field(default=48, gt=1)
    position_mode: Literal["relative", "absolute"] = "relative"
    mask_mode: Literal["dependency", "none", "literal"] = "dependency"
    target_form: Literal["seamcode", "src"] = "seamcode"
    beam_width: int = Field(default=1, ge=1)
    optimizer: Literal["sgd", "adam"] = "adam"
    lr: float = Field(default=1e-3, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    lr_step: int = Field(default=10, ge=1)
    lr_gamma: float = Field(default=0.5, gt=0.0, le=1.0)
    clip_norm: float = Field(default=1.0, gt=0.0)
    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=64, ge=1)

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "TranslatorSettings":
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by heads ({self.heads})")
        if self.d_model % 2 != 0:
            raise ValueError("d_model must be even (instruction embedding concatenates two halves)")
        return self


class SegmenterSettings(BaseModel):
    d_model: int = Field(default=64, gt=0)
    heads: int = Field(default=4, gt=0)
    ffn: int = Field(default=128, gt=0)
    max_distance: int = Field(default=20, ge=1)
    mask_mode: Literal["dependency", "none", "literal"] = "dependency"
    threshold: float = Field(default=0.5, gt=0.0, lt=1.0)
    optimizer: Literal["sgd", "adam"] = "adam"
    lr: float = Field(default=1e-3, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    lr_step: int = Field(default=10, ge=1)
    lr_gamma: float = Field(default=0.5, gt=0.0, le=1.0)
    clip_norm: float = Field(default=1.0, gt=0.0)
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=32, ge=1)

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "SegmenterSettings":
        if self.d_model % self.heads != 0 or self.d_model % 2 != 0:
            raise ValueError(f"d_model ({self.d_model}) must be even and divisible by heads ({self.heads})")
        return self


class NamerSettings(BaseModel):
    embed: int = Field(default=64, gt=0)
    vector: int = Field(default=256, gt=0)
    hidden: int = Field(default=256, gt=0)
    max_len: int = Field(default=12, gt=0)
    encoder: str = "mean"
    optimizer: Literal["sgd", "adam"] = "adam"
    lr: float = Field(default=2e-3, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    lr_step: int = Field(default=20, ge=1)
    lr_gamma: float = Field(default=0.5, gt=0.0, le=1.0)
    clip_norm: float = Field(default=1.0, gt=0.0)
    epochs: int = Field(default=40, ge=1)
    batch_size: int = Field(default=32, ge=1)


class ConfigSchema(BaseModel):
    seed: int = Field(default=1, ge=0)
    output_dir: str = Field(default="runs")
    compiler: Optional[str] = Field(default=None)
    workers: int = Field(default=1, ge=1, le=64)
    deterministic: bool = Field(default=True)
    corpus: CorpusSettings = Field(default_factory=CorpusSettings)
    translator: TranslatorSettings = Field(default_factory=TranslatorSettings)
    segmenter: SegmenterSettings = Field(default_factory=SegmenterSettings)
    namer: NamerSettings = Field(default_factory=NamerSettings)


def _format_loc(loc: tuple) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


class ConfigManager:
    """Manages application configuration."""
    def __init__(self, data: ConfigSchema = None, path: Path = CONFIG_FILE):
        if data is None:
            data = ConfigSchema()
        self.path = Path(path)
        self.seed = data.seed
        self.output_dir = Path(data.output_dir)
        self.compiler = os.environ.get(COMPILER_ENV) or data.compiler
        self.workers = data.workers
        self.deterministic = data.deterministic
        self.corpus = data.corpus
        self.translator = data.translator
        self.segmenter = data.segmenter
        self.namer = data.namer

    @classmethod
    def load(cls, path: Optional[Path] = None) -> 'ConfigManager':
        """Load configuration from file or fall back to defaults when it does not exist."""
        path = Path(path) if path is not None else CONFIG_FILE
        if not path.exists():
            logging.info(f"No config at {path}, using defaults")
            return cls(path=path)
        try:
            with open(path, 'r', encoding='utf-8') as f:
                raw_data = json.load(f)
        except (json.JSONDecodeError, IOError) as e:
            logging.error(f"Config load error: {e}")
            raise ConfigError([f"{path}: {e}"])
        return cls.from_dict(raw_data, path)

    @classmethod
    def from_dict(cls, raw_data: dict, path: Path = CONFIG_FILE) -> 'ConfigManager':
        try:
            schema = ConfigSchema(**raw_data)
        except ValidationError as e:
            logging.error("Configuration validation failed!")
            messages = []
            for err in e.errors():
                field = _format_loc(err['loc'])
                logging.error(f"  Field '{field}': {err['msg']}")
                messages.append(f"{field}: {err['msg']}")
            raise ConfigError(messages)
        return cls(schema, path)

    def to_schema(self) -> ConfigSchema:
        return ConfigSchema(
            seed=self.seed,
            output_dir=str(self.output_dir),
            compiler=self.compiler,
            workers=self.workers,
            deterministic=self.deterministic,
            corpus=self.corpus,
            translator=self.translator,
            segmenter=self.segmenter,
            namer=self.namer,
        )

    def save(self, path: Optional[Path] = None) -> None:
        """Save configuration to file."""
        target = Path(path) if path is not None else self.path
        try:
            with open(target, 'w', encoding='utf-8') as f:
                json.dump(self.to_schema().model_dump(mode="json"), f, indent=4, ensure_ascii=False)
        except IOError as e:
            logging.error(f"Failed to save config: {e}")
