"""
Chunk Card and Query Intent records.

Cards describe what a chunk can serve as evidence for; intents describe
what a question demands. Both validate strictly (unknown fields rejected)
and are immutable once built.
"""

import re
from enum import Enum
from typing import Annotated, Any, Iterable, List, Optional, Tuple

from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    WithJsonSchema,
    field_validator,
    model_validator,
)

from fincards_backend.services.schema.periods import PeriodValue, parse_period

SCHEMA_VERSION = "1"


def _serialize_period(value: PeriodValue) -> str:
    return value.canonical()


Period = Annotated[
    PeriodValue,
    BeforeValidator(parse_period),
    PlainSerializer(_serialize_period, return_type=str),
    WithJsonSchema({"type": "string", "description": "FYyyyy, yyyy-Qn, yyyy-mm, [yyyy-mm, yyyy-mm] or latest marker"}),
]

_WS_RE = re.compile(r"\s+")


def normalize_term(value: str) -> str:
    """Matching key: lowercase, whitespace collapsed."""
    return _WS_RE.sub(" ", value).strip().lower()


def _canonical_set(values: Iterable[str]) -> Tuple[str, ...]:
    seen = {}
    for value in values:
        cleaned = _WS_RE.sub(" ", value).strip()
        key = cleaned.lower()
        if cleaned and key not in seen:
            seen[key] = cleaned
    return tuple(seen[key] for key in sorted(seen))


def _ordered_unique(values: Iterable[str]) -> Tuple[str, ...]:
    seen = {}
    for value in values:
        cleaned = _WS_RE.sub(" ", value).strip()
        if cleaned and cleaned.lower() not in seen:
            seen[cleaned.lower()] = cleaned
    return tuple(seen.values())


class Topic(str, Enum):
    REVENUE = "Revenue"
    COSTS = "Costs/Expenses"
    PROFITABILITY = "Profitability"
    LIQUIDITY = "Liquidity"
    GUIDANCE = "Guidance/Outlook"
    RISK = "Risk"
    GOVERNANCE = "Governance"
    OTHER = "Other"


class Relation(str, Enum):
    LOOKUP = "lookup"
    TREND = "trend"
    COMPARISON = "comparison"
    EXPLANATION = "explanation"
    DEFINITION = "definition"
    POLICY = "policy"


class ClaimRole(str, Enum):
    PRIMARY_EVIDENCE = "primary_evidence"
    SUPPORTING_CONTEXT = "supporting_context"
    DEFINITION = "definition"
    CAVEAT = "caveat"
    BOILERPLATE = "boilerplate"
    STRUCTURAL_HEADING = "structural_heading"


class EvidenceType(str, Enum):
    TABLE_NUMERIC = "table_numeric"
    NARRATIVE_NUMERIC = "narrative_numeric"
    QUALITATIVE_EXPLANATION = "qualitative_explanation"
    POLICY_TEXT = "policy_text"
    GUIDANCE = "guidance"
    NONE = "none"


class AnswerabilityProfile(str, Enum):
    SINGLE_FACT = "single_fact"
    COMPARISON = "comparison"
    TREND = "trend"
    AGGREGATION = "aggregation"
    ATTRIBUTION = "attribution"


class MeasurementBasis(str, Enum):
    GAAP = "GAAP"
    NON_GAAP = "non-GAAP"
    ADJUSTED = "adjusted"
    REPORTED = "reported"
    UNKNOWN = "unknown"


class TemporalQuality(str, Enum):
    EXPLICIT = "explicit"
    INFERRED = "inferred"
    NONE = "none"


class Granularity(str, Enum):
    YEAR = "year"
    QUARTER = "quarter"
    MONTH = "month"
    INTERVAL = "interval"
    NONE = "none"


CARD_FIELDS = ("topic", "entities", "metrics", "numeric_spans", "period", "section", "derived_triple")


class _Record(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class EvidenceSpan(_Record):
    """Character range [start, end) of the chunk text supporting one card field."""

    field: str
    start: int = Field(ge=0)
    end: int

    @field_validator("field")
    @classmethod
    def _known_field(cls, value: str) -> str:
        if value not in CARD_FIELDS:
            raise ValueError(f"span field must be one of {', '.join(CARD_FIELDS)}")
        return value

    @model_validator(mode="after")
    def _ordered(self) -> "EvidenceSpan":
        if self.start >= self.end:
            raise ValueError(f"span start ({self.start}) must be < end ({self.end})")
        return self


class DerivedTriple(_Record):
    entity: Optional[str] = None
    metric: Optional[str] = None
    period: Optional[Period] = None


class TemporalAnchor(_Record):
    quality: TemporalQuality = TemporalQuality.NONE
    span: Optional[Period] = None


class ScopeSignature(_Record):
    entity_scope: str = "unknown"
    geography: str = "unknown"
    product: str = "unknown"


class Verifiability(_Record):
    numeric_claims: bool = False
    table_present: bool = False
    comparison_cues: bool = False


class RiskSignals(_Record):
    boilerplate_likelihood: float = Field(default=0.0, ge=0.0, le=1.0)
    limitations: Tuple[str, ...] = ()


class CardAux(_Record):
    """Auxiliary cues; never part of the alignment core."""

    claim_role: ClaimRole = ClaimRole.SUPPORTING_CONTEXT
    evidence_type: EvidenceType = EvidenceType.NONE
    answerability_profile: Tuple[AnswerabilityProfile, ...] = ()
    temporal_anchor: TemporalAnchor = TemporalAnchor()
    scope_signature: ScopeSignature = ScopeSignature()
    measurement_basis: MeasurementBasis = MeasurementBasis.UNKNOWN
    verifiability: Verifiability = Verifiability()
    risk_signals: RiskSignals = RiskSignals()
    semantic_sketch: str = ""

    @property
    def table_present(self) -> bool:
        return self.verifiability.table_present

    @property
    def is_boilerplate(self) -> bool:
        return self.claim_role == ClaimRole.BOILERPLATE or self.risk_signals.boilerplate_likelihood >= 0.5


class ChunkCard(_Record):
    chunk_id: str = Field(min_length=1)
    topic: Topic
    entities: Tuple[str, ...]
    metrics: Tuple[str, ...]
    numeric_spans: Tuple[str, ...]
    period: Optional[Period]
    section: str
    derived_triple: Optional[DerivedTriple] = None
    evidence_spans: Tuple[EvidenceSpan, ...] = ()
    aux: CardAux = CardAux()

    @field_validator("entities", "metrics")
    @classmethod
    def _as_set(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        return _canonical_set(value)

    @model_validator(mode="after")
    def _headings_carry_no_evidence(self) -> "ChunkCard":
        if self.aux.claim_role == ClaimRole.STRUCTURAL_HEADING and (self.metrics or self.numeric_spans):
            raise ValueError("structural headings must have empty metrics and numeric_spans")
        return self

    def spans_for(self, field: str) -> List[EvidenceSpan]:
        return [span for span in self.evidence_spans if span.field == field]


def _null_to(default: Any):
    def convert(value: Any) -> Any:
        return default() if value is None else value

    return BeforeValidator(convert)


class TemporalScope(_Record):
    periods: Tuple[Period, ...] = ()
    granularity: Granularity = Granularity.NONE

    @model_validator(mode="before")
    @classmethod
    def _accept_bare_list(cls, value: Any) -> Any:
        if isinstance(value, (list, tuple)):
            return {"periods": list(value)}
        return value


class QueryIntent(_Record):
    """
    Demand-side view of a question.

    Every field must be present; a present-but-null field takes the
    conservative default (Other, empty, false).
    """

    topic: Annotated[Topic, _null_to(lambda: Topic.OTHER)]
    entities: Annotated[Tuple[str, ...], _null_to(tuple)]
    metrics: Annotated[Tuple[str, ...], _null_to(tuple)]
    relation: Annotated[Relation, _null_to(lambda: Relation.LOOKUP)]
    temporal: Annotated[TemporalScope, _null_to(TemporalScope)]
    numeric_required: Annotated[bool, _null_to(lambda: False)]
    keywords: Annotated[Tuple[str, ...], _null_to(tuple)]

    @field_validator("entities", "metrics")
    @classmethod
    def _as_set(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        return _canonical_set(value)

    @field_validator("keywords")
    @classmethod
    def _dedupe_keywords(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        return _ordered_unique(value)

    @property
    def periods(self) -> Tuple[PeriodValue, ...]:
        return self.temporal.periods

    @property
    def is_empty(self) -> bool:
        return not (self.entities or self.metrics or self.periods or self.keywords)
