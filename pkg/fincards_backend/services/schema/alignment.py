from typing import List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict

from fincards_backend.services.schema.models import (
    ChunkCard,
    DerivedTriple,
    EvidenceSpan,
    Period,
    QueryIntent,
    Topic,
    normalize_term,
)
from fincards_backend.services.schema.periods import PeriodValue, period_compatible


class CardCore(BaseModel):
    """The alignment projection of a card: T, E, M, N, P, S, D and the audit spans."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    chunk_id: str
    topic: Topic
    entities: Tuple[str, ...]
    metrics: Tuple[str, ...]
    numeric_spans: Tuple[str, ...]
    period: Optional[Period]
    section: str
    derived_triple: Optional[DerivedTriple] = None
    evidence_spans: Tuple[EvidenceSpan, ...] = ()


def alignment_core(card: Union[ChunkCard, CardCore]) -> CardCore:
    if isinstance(card, CardCore):
        return card
    return CardCore(
        chunk_id=card.chunk_id,
        topic=card.topic,
        entities=card.entities,
        metrics=card.metrics,
        numeric_spans=card.numeric_spans,
        period=card.period,
        section=card.section,
        derived_triple=card.derived_triple,
        evidence_spans=card.evidence_spans,
    )


class MatchedTerm(BaseModel):
    model_config = ConfigDict(frozen=True)

    field: str
    value: str
    spans: Tuple[Tuple[int, int], ...] = ()


class FieldMatch(BaseModel):
    """Which intent demands a card satisfies, with the supporting spans."""

    model_config = ConfigDict(frozen=True)

    metrics: Tuple[MatchedTerm, ...] = ()
    entities: Tuple[MatchedTerm, ...] = ()
    period: Optional[MatchedTerm] = None

    @property
    def any_match(self) -> bool:
        return bool(self.metrics or self.entities or self.period)


def _overlap(intent_terms: Sequence[str], card_terms: Sequence[str]) -> List[str]:
    wanted = {normalize_term(t) for t in intent_terms}
    return [t for t in card_terms if normalize_term(t) in wanted]


def _spans(core: CardCore, field: str) -> Tuple[Tuple[int, int], ...]:
    return tuple((s.start, s.end) for s in core.evidence_spans if s.field == field)


def match_fields(
    card: Union[ChunkCard, CardCore],
    intent: QueryIntent,
    theta: Optional[Sequence[PeriodValue]] = None,
) -> FieldMatch:
    """
    Match the alignment core of a card against an intent.

    Args:
        card: card or its core projection
        intent: the query intent
        theta: resolved temporal constraints (defaults to the intent's own)

    Returns:
        FieldMatch: matched metrics, entities and period, with evidence spans
    """
    core = alignment_core(card)
    theta = intent.periods if theta is None else theta
    period = None
    if theta and period_compatible(core.period, theta):
        period = MatchedTerm(field="period", value=core.period.canonical(), spans=_spans(core, "period"))
    return FieldMatch(
        metrics=tuple(
            MatchedTerm(field="metrics", value=m, spans=_spans(core, "metrics"))
            for m in _overlap(intent.metrics, core.metrics)
        ),
        entities=tuple(
            MatchedTerm(field="entities", value=e, spans=_spans(core, "entities"))
            for e in _overlap(intent.entities, core.entities)
        ),
        period=period,
    )
