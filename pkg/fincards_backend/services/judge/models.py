from typing import Callable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from fincards_backend.services.schema.models import ChunkCard, ClaimRole, EvidenceType, QueryIntent, Relation


class JudgeItem(BaseModel):
    """
    What the judge sees of one candidate.

    ``card`` is the (possibly masked) chunk card; ``text`` replaces it for
    raw-text judging (raw_chunks ablation, zero-shot baseline).
    """

    model_config = ConfigDict(frozen=True)

    chunk_id: str
    chunk_index: int
    stage1_score: float = 0.0
    card: Optional[ChunkCard] = None
    text: Optional[str] = None

    @model_validator(mode="after")
    def _has_content(self) -> "JudgeItem":
        if self.card is None and self.text is None:
            raise ValueError(f"judge item {self.chunk_id} needs a card or text")
        return self


EXPLANATORY_TYPES = (EvidenceType.QUALITATIVE_EXPLANATION, EvidenceType.POLICY_TEXT)


def satisfies_temporal_table(card: Optional[ChunkCard]) -> bool:
    return card is not None and card.period is not None and card.aux.table_present


def is_explanatory(card: Optional[ChunkCard]) -> bool:
    return card is not None and (
        card.aux.evidence_type in EXPLANATORY_TYPES or card.aux.claim_role == ClaimRole.DEFINITION
    )


class CoverageQuotas(BaseModel):
    """Hard coverage constraints for one Stage-2 group."""

    model_config = ConfigDict(frozen=True)

    require_temporal_table: bool = False
    require_explanatory: bool = False

    @classmethod
    def for_intent(cls, intent: QueryIntent, enabled: bool = True) -> "CoverageQuotas":
        if not enabled:
            return cls()
        return cls(
            require_temporal_table=intent.relation == Relation.TREND,
            require_explanatory=intent.relation in (Relation.DEFINITION, Relation.POLICY),
        )

    @property
    def any(self) -> bool:
        return self.require_temporal_table or self.require_explanatory

    def describe(self) -> List[str]:
        lines = []
        if self.require_temporal_table:
            lines.append("Retain at least one temporally grounded, table-bearing card.")
        if self.require_explanatory:
            lines.append("Retain at least one explanatory card (definition, policy or qualitative explanation).")
        return lines

    def checks(self) -> List[Tuple[str, Callable[[Optional[ChunkCard]], bool]]]:
        """(name, predicate) for every active quota."""
        active = []
        if self.require_temporal_table:
            active.append(("temporal_table", satisfies_temporal_table))
        if self.require_explanatory:
            active.append(("explanatory", is_explanatory))
        return active

    def missing(self, selected: Sequence[Optional[ChunkCard]]) -> List[str]:
        """Names of the active quotas no selected card satisfies."""
        return [name for name, satisfies in self.checks() if not any(satisfies(card) for card in selected)]


class SelectedChunk(BaseModel):
    model_config = ConfigDict(frozen=True)

    chunk_id: str
    reasons: Tuple[str, ...] = ()
    relevance: int = Field(ge=0, le=100)


class SelectionResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    selected: Tuple[SelectedChunk, ...]
    quota_unmet: bool = False

    @property
    def chunk_ids(self) -> List[str]:
        return [s.chunk_id for s in self.selected]


class RankedChunk(BaseModel):
    model_config = ConfigDict(frozen=True)

    chunk_id: str
    rank: int = Field(ge=1)
    reason: str = ""


class RankingResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    ranked: Tuple[RankedChunk, ...]

    @property
    def order(self) -> List[str]:
        return [r.chunk_id for r in sorted(self.ranked, key=lambda r: r.rank)]

    def rank_of(self, chunk_id: str) -> int:
        for r in self.ranked:
            if r.chunk_id == chunk_id:
                return r.rank
        raise KeyError(chunk_id)


def check_selection(result: SelectionResult, group_ids: Sequence[str], k_min: int, k_max: int) -> None:
    """Raise ValueError when a selection breaks its structural contract."""
    ids = result.chunk_ids
    if not k_min <= len(ids) <= k_max:
        raise ValueError(f"selected {len(ids)} chunks, expected between {k_min} and {k_max}")
    if len(set(ids)) != len(ids):
        raise ValueError("selected chunk_ids are not unique")
    unknown = [cid for cid in ids if cid not in set(group_ids)]
    if unknown:
        raise ValueError(f"selected chunk_ids not in the group: {', '.join(unknown)}")
    relevance = [s.relevance for s in result.selected]
    if any(a < b for a, b in zip(relevance, relevance[1:])):
        raise ValueError("relevance must be non-increasing along the selection")


def check_ranking(result: RankingResult, group_ids: Sequence[str]) -> None:
    """Raise ValueError unless the ranking is a permutation of the group with ranks 1..n."""
    ids = [r.chunk_id for r in result.ranked]
    if sorted(ids) != sorted(group_ids) or len(set(ids)) != len(ids):
        raise ValueError("ranking is not a permutation of the group")
    ranks = sorted(r.rank for r in result.ranked)
    if ranks != list(range(1, len(group_ids) + 1)):
        raise ValueError(f"ranks must form 1..{len(group_ids)}")
