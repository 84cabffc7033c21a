"""
Tests for the rule-based judge: card and intent extraction, field-weighted
scoring, group selection with quotas and listwise ranking.
"""

import pytest

from fincards_backend.config.config import JudgeBackend, JudgeConfig
from fincards_backend.services.corpus.service import Chunk
from fincards_backend.services.judge.models import CoverageQuotas, JudgeItem, check_ranking, check_selection
from fincards_backend.services.judge.providers.oracle_provider import (
    NoisyOracleProvider,
    OracleProvider,
    extract_card,
    extract_intent,
    max_possible_score,
    oracle_score,
    score_breakdown,
    text_score,
)
from fincards_backend.services.judge.service import JudgeService
from fincards_backend.services.schema.models import ClaimRole, EvidenceType, Granularity, Relation, Topic

TEST_QUESTION = "What was the revenue of the Cloud segment in fiscal 2023?"


def card_items(store, cards, ids=None):
    chunks = [c for c in store if ids is None or c.chunk_index in ids]
    return [JudgeItem(chunk_id=c.chunk_id, chunk_index=c.chunk_index, card=cards[c.chunk_id]) for c in chunks]


def test_extract_card_fields(toy_cards):
    card = toy_cards["acme-10k-2023#0"]
    assert card.metrics == ("revenue",)
    assert card.entities == ("Cloud",)
    assert card.numeric_spans == ("$3.2 billion", "12%")
    assert card.period.canonical() == "FY2023"
    assert card.topic == Topic.REVENUE
    assert card.section == "Item 7. Management Discussion"
    assert card.aux.claim_role == ClaimRole.PRIMARY_EVIDENCE
    assert card.aux.evidence_type == EvidenceType.NARRATIVE_NUMERIC
    assert card.derived_triple.metric == "revenue"


def test_extract_card_boilerplate(toy_cards):
    card = toy_cards["acme-10k-2023#3"]
    assert card.topic == Topic.RISK
    assert card.aux.claim_role == ClaimRole.BOILERPLATE
    assert card.aux.is_boilerplate


def test_extract_card_heading_has_no_evidence():
    chunk = Chunk(chunk_id="d#0", doc_id="d", chunk_index=0, text="RESULTS OF OPERATIONS 2023")
    card = extract_card(chunk)
    assert card.aux.claim_role == ClaimRole.STRUCTURAL_HEADING
    assert card.metrics == () and card.numeric_spans == ()


def test_extract_intent(revenue_intent):
    assert revenue_intent.metrics == ("revenue",)
    assert revenue_intent.entities == ("Cloud",)
    assert [p.canonical() for p in revenue_intent.periods] == ["FY2023"]
    assert revenue_intent.temporal.granularity == Granularity.YEAR
    assert revenue_intent.relation == Relation.LOOKUP
    assert revenue_intent.numeric_required is True
    assert revenue_intent.keywords == ("segment",)
    assert revenue_intent.topic == Topic.REVENUE


def test_extract_intent_relative_and_relations():
    trend = extract_intent("How did revenue change over the last quarter?")
    assert [p.canonical() for p in trend.periods] == ["latest_quarter"]
    assert trend.relation == Relation.TREND
    assert trend.temporal.granularity == Granularity.QUARTER
    assert "change" not in trend.keywords

    policy = extract_intent("What is the revenue recognition policy?")
    assert policy.relation == Relation.POLICY
    assert CoverageQuotas.for_intent(policy).require_explanatory
    assert not CoverageQuotas.for_intent(policy, enabled=False).any


def test_oracle_scores(toy_cards, revenue_intent):
    """Test the weighted scores of the toy cards against the revenue intent."""
    context = list(toy_cards.values())
    scores = {cid: oracle_score(card, revenue_intent, context) for cid, card in toy_cards.items()}
    assert scores == {
        "acme-10k-2023#0": 12.0,
        "acme-10k-2023#1": 9.0,
        "acme-10k-2023#2": 0.0,
        "acme-10k-2023#3": 1.0,
        "acme-10k-2023#4": 4.0,
    }
    assert max_possible_score(revenue_intent) == 12.0
    parts = score_breakdown(toy_cards["acme-10k-2023#0"], revenue_intent)
    assert parts == {"metric": 4.0, "period": 3.0, "entity": 2.0, "evidence_type": 2.0, "keyword": 1.0, "boilerplate": 0.0}


def test_boilerplate_penalty_waived_without_metric_competition(toy_cards, revenue_intent):
    card = toy_cards["acme-10k-2023#3"]
    assert oracle_score(card, revenue_intent) == 1.0
    assert oracle_score(card, revenue_intent, [card, toy_cards["acme-10k-2023#2"]]) == 4.0


def test_text_score(toy_store, revenue_intent):
    assert text_score(toy_store.get_chunk("acme-10k-2023#0").text, revenue_intent) == 7.0
    assert text_score(toy_store.get_chunk("acme-10k-2023#2").text, revenue_intent) == 0.0


def test_empty_intent_scores_zero(toy_cards):
    empty = extract_intent("Is it?")
    assert empty.is_empty
    assert oracle_score(toy_cards["acme-10k-2023#0"], empty) == 0.0


def test_select_takes_eligible_cards(toy_store, toy_cards, revenue_intent):
    items = card_items(toy_store, toy_cards)
    result = OracleProvider().select(items, revenue_intent, 3, 8)
    assert result.chunk_ids == ["acme-10k-2023#0", "acme-10k-2023#1", "acme-10k-2023#3"]
    assert [s.relevance for s in result.selected] == [100, 75, 8]
    assert "period:FY2023" in result.selected[0].reasons
    assert "boilerplate_penalty" in result.selected[2].reasons
    check_selection(result, [i.chunk_id for i in items], 3, 8)


def test_select_clamps_bounds_to_group(toy_store, toy_cards, revenue_intent):
    items = card_items(toy_store, toy_cards, ids={2, 4})
    result = OracleProvider().select(items, revenue_intent, 3, 8)
    assert sorted(result.chunk_ids) == ["acme-10k-2023#2", "acme-10k-2023#4"]


def test_select_identical_cards_takes_first_k_min(toy_store, revenue_intent):
    """Test that a group with no score separation keeps only the first k_min chunks."""
    text = toy_store.get_chunk("acme-10k-2023#0").text
    items = []
    for i in range(10):
        chunk = Chunk(chunk_id=f"d#{i}", doc_id="d", chunk_index=i, text=text)
        items.append(JudgeItem(chunk_id=chunk.chunk_id, chunk_index=i, card=extract_card(chunk)))
    result = OracleProvider().select(items, revenue_intent, 3, 8)
    assert result.chunk_ids == ["d#0", "d#1", "d#2"]
    check_selection(result, [i.chunk_id for i in items], 3, 8)


def test_temporal_table_quota_swaps_in_table_card(toy_store, toy_cards):
    """Test that a trend question keeps one dated table card even when it is not eligible."""
    table = Chunk(
        chunk_id="acme-10k-2023#5",
        doc_id="acme-10k-2023",
        chunk_index=5,
        text="Fiscal 2023 | Fiscal 2022\nHeadcount | 1,200 | 1,100",
    )
    table_card = extract_card(table)
    assert table_card.aux.table_present and table_card.period is not None
    intent = extract_intent("How did revenue of the Cloud segment change in fiscal 2023?")
    quotas = CoverageQuotas.for_intent(intent)
    assert quotas.require_temporal_table

    items = card_items(toy_store, toy_cards) + [JudgeItem(chunk_id=table.chunk_id, chunk_index=5, card=table_card)]
    result = OracleProvider().select(items, intent, 3, 3, quotas)
    assert "acme-10k-2023#5" in result.chunk_ids
    assert "acme-10k-2023#3" not in result.chunk_ids
    assert result.quota_unmet is False


def test_unmeetable_quota_is_flagged(toy_store, toy_cards):
    intent = extract_intent("What is the revenue recognition policy of the Cloud segment?")
    items = card_items(toy_store, toy_cards, ids={0, 1, 2})
    result = OracleProvider().select(items, intent, 1, 2, CoverageQuotas.for_intent(intent))
    assert result.quota_unmet is True


def test_rank_orders_by_score_then_index(toy_store, toy_cards, revenue_intent):
    items = card_items(toy_store, toy_cards)
    result = OracleProvider().rank(items, revenue_intent)
    assert result.order == [
        "acme-10k-2023#0",
        "acme-10k-2023#1",
        "acme-10k-2023#4",
        "acme-10k-2023#3",
        "acme-10k-2023#2",
    ]
    check_ranking(result, [i.chunk_id for i in items])
    assert OracleProvider().rank(list(reversed(items)), revenue_intent).order == result.order


def test_noisy_oracle_is_seeded_by_presentation(toy_store, toy_cards, revenue_intent):
    items = card_items(toy_store, toy_cards)
    noisy = NoisyOracleProvider(noise_scale=2.0, seed=3)
    first = noisy.score_items(items, revenue_intent)
    assert noisy.score_items(items, revenue_intent) == first
    assert NoisyOracleProvider(noise_scale=2.0, seed=4).score_items(items, revenue_intent) != first
    silent = NoisyOracleProvider(noise_scale=0.0, seed=3).score_items(items, revenue_intent)
    assert silent == OracleProvider().score_items(items, revenue_intent)


def test_service_picks_backend():
    assert JudgeService().name == "oracle"
    noisy = JudgeService(JudgeConfig(backend=JudgeBackend.NOISY_ORACLE, noise_scale=1.0))
    assert noisy.name == "noisy_oracle"
    assert noisy.deterministic


@pytest.mark.asyncio
async def test_service_counts_calls(oracle_judge, toy_store, toy_cards, revenue_intent):
    items = card_items(toy_store, toy_cards)
    await oracle_judge.select_group(items, revenue_intent, TEST_QUESTION, 3, 8, stage="stage2/attempt-0")
    await oracle_judge.rank_group(items, revenue_intent, TEST_QUESTION, stage="stage3/round-1")
    await oracle_judge.rank_group(items[:2], revenue_intent, TEST_QUESTION, stage="stage3/round-1")
    assert oracle_judge.calls == {"stage2/attempt-0": 1, "stage3/round-1": 2}
    with pytest.raises(ValueError):
        await oracle_judge.rank_group(items[:1], revenue_intent, TEST_QUESTION)
    oracle_judge.reset_calls()
    assert not oracle_judge.calls


@pytest.mark.asyncio
async def test_service_extracts_cards_and_intents(oracle_judge, toy_store):
    entries = await oracle_judge.extract_cards(toy_store)
    assert [e.chunk_id for e in entries] == [c.chunk_id for c in toy_store]
    assert all(e.card is not None for e in entries)
    assert oracle_judge.calls["extract_card"] == 5

    intents = await oracle_judge.extract_intents({"q2": "What were net sales in FY2022?", "q1": TEST_QUESTION})
    assert list(intents) == ["q1", "q2"]
    assert intents["q2"].intent.metrics == ("revenue",)
