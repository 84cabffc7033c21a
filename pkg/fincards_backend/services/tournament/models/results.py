from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, model_validator


class Stage2Candidate(BaseModel):
    """A Stage-2 survivor with the best relevance it earned in any group."""

    model_config = ConfigDict(frozen=True)

    chunk_id: str
    chunk_index: int
    stage1_score: float
    stage1_rank: int
    relevance: int
    reasons: Tuple[str, ...] = ()
    null_card: bool = False


class RankedItem(BaseModel):
    model_config = ConfigDict(frozen=True)

    chunk_id: str
    chunk_index: int
    rank: int
    score: float
    stage1_score: float
    stage2_relevance: Optional[int] = None
    borda: Optional[float] = None


class RankedList(BaseModel):
    """Final ordering pi_1..pi_k with per-item provenance."""

    model_config = ConfigDict(frozen=True)

    query_id: str
    variant: str
    items: Tuple[RankedItem, ...]

    @model_validator(mode="after")
    def _no_duplicates(self) -> "RankedList":
        ids = [item.chunk_id for item in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("ranked list contains duplicate chunk ids")
        return self

    @property
    def chunk_ids(self) -> List[str]:
        return [item.chunk_id for item in self.items]

    def __len__(self) -> int:
        return len(self.items)
