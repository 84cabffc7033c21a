"""
Tests for the card and intent schema: period grammar, validation, masks,
field matching and the card / intent files.
"""

import json

import pytest

from fincards_backend.config.config import CardMask
from fincards_backend.exceptions import SchemaValidationError
from fincards_backend.services.schema.alignment import alignment_core, match_fields
from fincards_backend.services.schema.io import (
    CardEntry,
    IntentEntry,
    card_to_record,
    load_cards,
    load_intents,
    load_questions,
    validate_card,
    validate_intent,
    write_cards,
    write_intents,
)
from fincards_backend.services.schema.masks import apply_card_mask
from fincards_backend.services.schema.models import ChunkCard, ClaimRole, Granularity, QueryIntent, Relation, Topic
from fincards_backend.services.schema.periods import (
    PeriodKind,
    latest_anchor,
    parse_period,
    period_compatible,
    resolve_relative,
)

NULL_INTENT = {
    "topic": None,
    "entities": None,
    "metrics": None,
    "relation": None,
    "temporal": None,
    "numeric_required": None,
    "keywords": None,
}


def periods(*texts):
    return [parse_period(t) for t in texts]


@pytest.mark.parametrize(
    "text,canonical,kind",
    [
        ("FY2023", "FY2023", PeriodKind.FISCAL_YEAR),
        ("fy2023", "FY2023", PeriodKind.FISCAL_YEAR),
        ("2023-q2", "2023-Q2", PeriodKind.FISCAL_QUARTER),
        ("2023-06", "2023-06", PeriodKind.MONTH),
        ("[2023-01,2023-06]", "[2023-01, 2023-06]", PeriodKind.INTERVAL),
        ("latest_quarter", "latest_quarter", PeriodKind.RELATIVE),
    ],
)
def test_parse_period(text, canonical, kind):
    period = parse_period(text)
    assert period.canonical() == canonical
    assert period.kind == kind


@pytest.mark.parametrize("text", ["2023-13", "FY23", "[2023-06, 2023-01]", "last week", ""])
def test_parse_period_rejects(text):
    with pytest.raises(ValueError):
        parse_period(text)


@pytest.mark.parametrize(
    "card_period,theta,expected",
    [
        ("FY2023", ["FY2023"], True),
        ("2023-Q2", ["FY2023"], True),
        ("FY2023", ["2023-06"], True),
        ("FY2022", ["FY2023"], False),
        ("[2022-10, 2023-03]", ["FY2023"], True),
        ("[2022-01, 2022-12]", ["2023-Q1"], False),
        ("2023-Q4", ["latest_quarter"], True),
        ("FY2023", ["latest_quarter"], False),
        ("FY2023", ["latest_year"], True),
        ("FY2021", ["FY2023", "FY2021"], True),
    ],
)
def test_period_compatible(card_period, theta, expected):
    assert period_compatible(parse_period(card_period), periods(*theta)) is expected


def test_empty_theta_and_null_period():
    assert period_compatible(None, []) is True
    assert period_compatible(parse_period("FY2020"), []) is True
    assert period_compatible(None, periods("FY2023")) is False


def test_latest_anchor_prefers_narrowest_on_tied_end():
    anchor = latest_anchor(periods("FY2022", "FY2023", "2023-Q4", "latest") + [None])
    assert anchor.canonical() == "2023-Q4"
    assert latest_anchor([None]) is None


def test_resolve_relative():
    theta = periods("latest_quarter", "latest_year", "latest", "FY2020")
    resolved = resolve_relative(theta, parse_period("2023-Q3"))
    assert [p.canonical() for p in resolved] == ["2023-Q3", "FY2023", "2023-Q3", "FY2020"]
    assert resolve_relative(theta, None) == theta


def test_null_intent_fields_take_conservative_defaults():
    intent = validate_intent(NULL_INTENT)
    assert intent.topic == Topic.OTHER
    assert intent.relation == Relation.LOOKUP
    assert intent.numeric_required is False
    assert intent.temporal.granularity == Granularity.NONE
    assert intent.is_empty


def test_intent_requires_every_field():
    with pytest.raises(SchemaValidationError) as excinfo:
        validate_intent({"topic": "Revenue"})
    assert "entities" in excinfo.value.paths
    with pytest.raises(SchemaValidationError):
        validate_intent({**NULL_INTENT, "priority": "high"})
    with pytest.raises(SchemaValidationError):
        validate_intent({**NULL_INTENT, "relation": "forecast"})


def test_intent_normalizes_sets_and_periods():
    intent = validate_intent(
        {
            **NULL_INTENT,
            "entities": ["Cloud", "cloud ", "Devices"],
            "metrics": ["revenue"],
            "temporal": ["FY2023", "2023-Q1"],
            "keywords": ["segment", "Segment", "growth"],
        }
    )
    assert intent.entities == ("Cloud", "Devices")
    assert [p.canonical() for p in intent.periods] == ["FY2023", "2023-Q1"]
    assert intent.keywords == ("segment", "growth")
    assert not intent.is_empty


def test_card_round_trip_against_chunk(toy_store, toy_cards):
    chunk = toy_store.get_chunk("acme-10k-2023#0")
    card = toy_cards[chunk.chunk_id]
    assert validate_card(card_to_record(card), chunk) == card
    assert card.period.canonical() == "FY2023"
    assert "$3.2 billion" in card.numeric_spans


def test_card_numeric_spans_must_be_verbatim(toy_store, toy_cards):
    chunk = toy_store.get_chunk("acme-10k-2023#0")
    record = card_to_record(toy_cards[chunk.chunk_id])
    record["numeric_spans"] = ["$3.2 billion", "$4.0 billion"]
    with pytest.raises(SchemaValidationError) as excinfo:
        validate_card(record, chunk)
    assert excinfo.value.paths == ["numeric_spans.1"]


def test_card_spans_are_bounds_checked(toy_store, toy_cards):
    chunk = toy_store.get_chunk("acme-10k-2023#0")
    record = card_to_record(toy_cards[chunk.chunk_id])
    record["evidence_spans"] = [{"field": "metrics", "start": 0, "end": len(chunk.text) + 5}]
    with pytest.raises(SchemaValidationError) as excinfo:
        validate_card(record, chunk)
    assert excinfo.value.paths == ["evidence_spans.0"]

    record["evidence_spans"] = [{"field": "metrics", "start": 5, "end": 5}]
    with pytest.raises(SchemaValidationError):
        validate_card(record)


def test_card_rejects_unknown_fields_and_bad_enums(toy_cards):
    record = card_to_record(toy_cards["acme-10k-2023#0"])
    with pytest.raises(SchemaValidationError):
        validate_card({**record, "confidence": 0.9})
    with pytest.raises(SchemaValidationError) as excinfo:
        validate_card({**record, "topic": "Sales"})
    assert "topic" in excinfo.value.paths


def test_structural_heading_carries_no_evidence():
    with pytest.raises(ValueError):
        ChunkCard(
            chunk_id="d#0",
            topic=Topic.OTHER,
            entities=(),
            metrics=("revenue",),
            numeric_spans=(),
            period=None,
            section="",
            aux={"claim_role": ClaimRole.STRUCTURAL_HEADING},
        )


def test_match_fields_reports_spans(toy_store, toy_cards, revenue_intent):
    chunk = toy_store.get_chunk("acme-10k-2023#0")
    match = match_fields(toy_cards[chunk.chunk_id], revenue_intent)
    assert [m.value for m in match.metrics] == ["revenue"]
    assert [e.value for e in match.entities] == ["Cloud"]
    assert match.period.value == "FY2023"
    start = chunk.text.index("revenue")
    assert (start, start + len("revenue")) in match.metrics[0].spans
    assert match.any_match


def test_match_fields_period_mismatch(toy_cards, revenue_intent):
    match = match_fields(toy_cards["acme-10k-2023#1"], revenue_intent)
    assert match.period is None
    assert [m.value for m in match.metrics] == ["revenue"]
    assert match_fields(toy_cards["acme-10k-2023#2"], revenue_intent).any_match is False


def test_alignment_core_drops_aux(toy_cards):
    core = alignment_core(toy_cards["acme-10k-2023#0"])
    assert "aux" not in core.model_dump()
    assert alignment_core(core) is core


def test_mask_drop_temporal(toy_cards):
    card = toy_cards["acme-10k-2023#0"]
    masked = apply_card_mask(card, CardMask(drop_temporal=True))
    assert masked.period is None
    assert masked.aux.temporal_anchor.span is None
    assert not masked.spans_for("period")
    assert masked.derived_triple is None or masked.derived_triple.period is None
    assert masked.metrics == card.metrics


def test_mask_drop_metrics_and_scope(toy_cards):
    card = toy_cards["acme-10k-2023#0"]
    masked = apply_card_mask(card, CardMask(drop_metrics=True, drop_scope=True))
    assert masked.metrics == ()
    assert masked.numeric_spans == ()
    assert masked.entities == ()
    assert masked.aux.verifiability.numeric_claims is False
    assert masked.aux.scope_signature.entity_scope == "unknown"
    assert masked.period == card.period


def test_mask_summary_only_keeps_sketch(toy_cards):
    card = toy_cards["acme-10k-2023#0"]
    masked = apply_card_mask(card, CardMask(summary_only=True))
    assert masked.aux.semantic_sketch == card.aux.semantic_sketch
    assert masked.metrics == () and masked.period is None and masked.section == ""


def test_inactive_and_raw_masks_leave_card(toy_cards):
    card = toy_cards["acme-10k-2023#0"]
    assert apply_card_mask(card, CardMask()) is card
    assert apply_card_mask(card, CardMask(raw_chunks=True)) == card


def test_card_file_round_trip(tmp_path, toy_cards):
    path = tmp_path / "cards.jsonl"
    entries = [CardEntry(chunk_id=cid, card=card) for cid, card in toy_cards.items()]
    entries.append(CardEntry(chunk_id="acme-10k-2023#5", card=None, error="judge returned invalid JSON"))
    write_cards(path, entries)
    loaded = load_cards(path)
    assert loaded["acme-10k-2023#0"].card == toy_cards["acme-10k-2023#0"]
    assert loaded["acme-10k-2023#5"].card is None
    assert loaded["acme-10k-2023#5"].error == "judge returned invalid JSON"


def test_card_file_checked_against_filing(tmp_path, toy_store, toy_cards):
    """Test that a stale card whose number is not in its chunk is refused when loading with the filing."""
    path = tmp_path / "cards.jsonl"
    stale = toy_cards["acme-10k-2023#0"].model_copy(update={"numeric_spans": ("$9,999 trillion",)})
    entries = [CardEntry(chunk_id=cid, card=card) for cid, card in toy_cards.items()]
    entries[0] = CardEntry(chunk_id="acme-10k-2023#0", card=stale)
    write_cards(path, entries)
    with pytest.raises(SchemaValidationError) as excinfo:
        load_cards(path, toy_store)
    assert "line 1" in str(excinfo.value)
    assert excinfo.value.paths == ["numeric_spans.0"]


def test_card_file_record_ids(tmp_path, toy_store, toy_cards):
    path = tmp_path / "cards.jsonl"
    card = card_to_record(toy_cards["acme-10k-2023#0"])
    cases = [
        {"schema_version": "1", "chunk_id": None, "card": card, "error": None},
        {"schema_version": "1", "chunk_id": "acme-10k-2023#1", "card": card, "error": None},
        {"schema_version": "1", "chunk_id": "acme-10k-2023#9", "card": None, "error": "timeout"},
    ]
    for record in cases:
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(SchemaValidationError):
            load_cards(path, toy_store)


def test_card_file_rejects_schema_version(tmp_path, toy_cards):
    path = tmp_path / "cards.jsonl"
    record = {"schema_version": "0", "chunk_id": "x", "card": None, "error": None}
    path.write_text(json.dumps(record) + "\n")
    with pytest.raises(SchemaValidationError):
        load_cards(path)


def test_intent_file_round_trip(tmp_path, revenue_intent):
    path = tmp_path / "intents.jsonl"
    write_intents(path, [IntentEntry(query_id="q1", question="What was the revenue?", intent=revenue_intent)])
    loaded = load_intents(path)
    assert loaded["q1"].intent == revenue_intent
    assert isinstance(loaded["q1"].intent, QueryIntent)


def test_load_questions(tmp_path):
    path = tmp_path / "questions.jsonl"
    path.write_text('{"query_id": 1, "question": "What was revenue?"}\n\n{"query_id": "q2", "question": "Why?"}\n')
    assert load_questions(path) == {"1": "What was revenue?", "q2": "Why?"}
