"""
Configuration module for the FinCARDS backend.

Pipeline parameters come from one declarative JSON file; environment
variables prefixed with ``FINCARDS_`` (nested keys joined by ``__``) fill
anything the file leaves out, and CLI flags override individual keys.
"""

import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from fincards_backend.exceptions import ConfigError


class Variant(str, Enum):
    STAGE1 = "stage1"
    ZEROSHOT_RERANK = "zeroshot_rerank"
    S1_S3 = "s1_s3"
    S1_S2 = "s1_s2"
    FULL = "full"

    @property
    def runs_stage2(self) -> bool:
        return self in (Variant.S1_S2, Variant.FULL)

    @property
    def runs_stage3(self) -> bool:
        return self in (Variant.S1_S3, Variant.FULL)


class GroupingMode(str, Enum):
    ROUND_ROBIN = "round_robin"
    FIXED = "fixed"


class Aggregation(str, Enum):
    BORDA = "borda"
    MEAN_RANK = "mean_rank"
    VOTING = "voting"


class JudgeBackend(str, Enum):
    ORACLE = "oracle"
    NOISY_ORACLE = "noisy_oracle"
    REMOTE = "remote"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CutoffPolicy(_Section):
    """Length-adaptive Stage-1 budget N = clamp(ceil(r*L), n_min, n_max)."""
    ratio: float = 0.5
    n_min: int = 60
    n_max: int = 150

    @model_validator(mode="after")
    def _check_bounds(self) -> "CutoffPolicy":
        if not 0 < self.ratio <= 1:
            raise ValueError(f"ratio must be in (0, 1], got {self.ratio}")
        if not 0 < self.n_min <= self.n_max:
            raise ValueError(f"need 0 < n_min <= n_max, got {self.n_min}, {self.n_max}")
        return self


class LexicalConfig(_Section):
    k1: float = Field(default=1.2, ge=0)
    b: float = Field(default=0.75, ge=0, le=1)
    cutoff: CutoffPolicy = CutoffPolicy()


class Stage2Config(_Section):
    group_size: int = 25
    k_min: int = 3
    k_max: int = 8
    retention_threshold: float = 0.8
    max_retries: int = Field(default=2, ge=0)
    quotas_enabled: bool = True
    grouping_mode: GroupingMode = GroupingMode.ROUND_ROBIN

    @model_validator(mode="after")
    def _check_bounds(self) -> "Stage2Config":
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError(f"need 1 <= k_min <= k_max, got {self.k_min}, {self.k_max}")
        if self.group_size < self.k_max:
            raise ValueError(f"group_size ({self.group_size}) must be >= k_max ({self.k_max})")
        if not 0 < self.retention_threshold <= 1:
            raise ValueError("retention_threshold must be in (0, 1]")
        return self


class Stage3Config(_Section):
    min_group_size: int = 15
    max_group_size: int = 25
    max_rounds: int = Field(default=5, ge=1)
    min_rounds: int = 2
    jaccard_threshold: float = 0.9
    k: int = Field(default=10, ge=1)
    output_size: int = Field(default=25, ge=1)
    base_seed: int = Field(default=0, ge=0)
    aggregation: Aggregation = Aggregation.BORDA
    early_stop: bool = True
    regroup: bool = True

    @model_validator(mode="after")
    def _check_bounds(self) -> "Stage3Config":
        if not 15 <= self.min_group_size <= self.max_group_size <= 25:
            raise ValueError("stage-3 group bounds must satisfy 15 <= min <= max <= 25")
        if self.early_stop and self.min_rounds < 2:
            raise ValueError("min_rounds must be >= 2 when early_stop is enabled")
        if not 0 <= self.jaccard_threshold <= 1:
            raise ValueError("jaccard_threshold must be in [0, 1]")
        return self


class OracleWeights(_Section):
    """Fixed weights of the rule-based judge; golden tests depend on the defaults."""
    metric: float = 4.0
    period: float = 3.0
    entity: float = 2.0
    evidence_type: float = 2.0
    keyword: float = 1.0
    boilerplate_penalty: float = 3.0


class JudgeConfig(_Section):
    backend: JudgeBackend = JudgeBackend.ORACLE
    endpoint: Optional[str] = None
    model: Optional[str] = None
    timeout: float = Field(default=60.0, gt=0)
    max_retries: int = Field(default=2, ge=0)
    max_in_flight: int = Field(default=4, ge=1)
    temperature: float = 0.0
    noise_scale: float = Field(default=0.0, ge=0)
    noise_seed: int = Field(default=0, ge=0)

    @field_validator("temperature")
    @classmethod
    def _deterministic_decoding(cls, value: float) -> float:
        if value != 0:
            raise ValueError("temperature is fixed at 0")
        return value

    @model_validator(mode="after")
    def _check_remote(self) -> "JudgeConfig":
        if self.backend == JudgeBackend.REMOTE and not (self.endpoint and self.model):
            raise ValueError("remote judge requires endpoint and model")
        return self


class CardMask(_Section):
    drop_temporal: bool = False
    drop_metrics: bool = False
    drop_tables: bool = False
    drop_scope: bool = False
    summary_only: bool = False
    raw_chunks: bool = False

    @property
    def active(self) -> bool:
        return any(self.model_dump().values())

    @property
    def label(self) -> str:
        names = [name for name, on in self.model_dump().items() if on]
        return "+".join(names) if names else "full_card"


class PathsConfig(_Section):
    chunks: Optional[Path] = None
    cards: Optional[Path] = None
    intents: Optional[Path] = None
    qrels: Optional[Path] = None
    output_dir: Path = Path("out")


class PipelineConfig(BaseSettings):
    """Everything one rerank run needs; a snapshot goes into every audit trace."""

    model_config = SettingsConfigDict(
        env_prefix="FINCARDS_",
        env_nested_delimiter="__",
        extra="forbid",
        frozen=True,
    )

    doc_id: Optional[str] = None
    variant: Variant = Variant.FULL
    paths: PathsConfig = PathsConfig()
    lexical: LexicalConfig = LexicalConfig()
    stage2: Stage2Config = Stage2Config()
    stage3: Stage3Config = Stage3Config()
    judge: JudgeConfig = JudgeConfig()
    oracle_weights: OracleWeights = OracleWeights()
    card_mask: CardMask = CardMask()

    @model_validator(mode="after")
    def _check_variant(self) -> "PipelineConfig":
        if self.card_mask.active and not self.variant.runs_stage2:
            raise ValueError(f"card masks require a variant that runs Stage 2, got {self.variant.value}")
        return self

    def snapshot(self) -> Dict[str, Any]:
        """JSON-ready view of every parameter, without filesystem paths."""
        data = self.model_dump(mode="json", exclude={"paths"})
        return data


class Settings(BaseSettings):
    """Main application settings."""

    model_config = SettingsConfigDict(env_prefix="FINCARDS_", env_file=".env", extra="ignore")

    app_name: str = "FinCARDS Backend"
    environment: str = "development"
    log_level: str = "INFO"
    judge_api_key: Optional[str] = None


def _deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_pipeline_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """
    Load the pipeline config file and apply overrides.

    Args:
        path: JSON config file (optional; defaults everywhere if absent)
        overrides: nested dict of keys to replace, e.g. {"stage3": {"base_seed": 7}}

    Returns:
        PipelineConfig: validated configuration
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    data = _deep_merge(data, overrides or {})
    try:
        return PipelineConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"invalid pipeline config: {e}") from e


# Create a global settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get the application settings."""
    return settings
