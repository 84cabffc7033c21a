from fincards_backend.config.config import CardMask
from fincards_backend.services.schema.models import (
    CardAux,
    ChunkCard,
    EvidenceType,
    ScopeSignature,
    TemporalAnchor,
    Topic,
)


def _drop_spans(card: ChunkCard, *fields: str) -> tuple:
    return tuple(s for s in card.evidence_spans if s.field not in fields)


def apply_card_mask(card: ChunkCard, mask: CardMask) -> ChunkCard:
    """
    Remove the card fields an ablation hides from the judge.

    raw_chunks is not a card transform; the tournament swaps the card for
    the chunk text instead, so it leaves the card untouched here.
    """
    if not mask.active:
        return card

    if mask.summary_only:
        return ChunkCard(
            chunk_id=card.chunk_id,
            topic=Topic.OTHER,
            entities=(),
            metrics=(),
            numeric_spans=(),
            period=None,
            section="",
            aux=CardAux(semantic_sketch=card.aux.semantic_sketch),
        )

    update = {}
    aux_update = {}
    triple = card.derived_triple

    if mask.drop_temporal:
        update["period"] = None
        aux_update["temporal_anchor"] = TemporalAnchor()
        if triple is not None:
            triple = triple.model_copy(update={"period": None})
    if mask.drop_metrics:
        update["metrics"] = ()
        update["numeric_spans"] = ()
        aux_update["verifiability"] = card.aux.verifiability.model_copy(update={"numeric_claims": False})
        if triple is not None:
            triple = triple.model_copy(update={"metric": None})
    if mask.drop_tables:
        verifiability = aux_update.get("verifiability", card.aux.verifiability)
        aux_update["verifiability"] = verifiability.model_copy(update={"table_present": False})
        if card.aux.evidence_type == EvidenceType.TABLE_NUMERIC:
            aux_update["evidence_type"] = EvidenceType.NONE
    if mask.drop_scope:
        update["entities"] = ()
        aux_update["scope_signature"] = ScopeSignature()
        if triple is not None:
            triple = triple.model_copy(update={"entity": None})

    dropped = [
        field
        for field, on in (
            ("period", mask.drop_temporal),
            ("metrics", mask.drop_metrics),
            ("numeric_spans", mask.drop_metrics),
            ("entities", mask.drop_scope),
        )
        if on
    ]
    if dropped:
        update["evidence_spans"] = _drop_spans(card, *dropped, "derived_triple")
    if triple is not None:
        update["derived_triple"] = triple
    if aux_update:
        update["aux"] = card.aux.model_copy(update=aux_update)
    return card.model_copy(update=update)
