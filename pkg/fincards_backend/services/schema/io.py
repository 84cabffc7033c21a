"""
Validation entry points and the card / intent file formats.

Card file: JSONL, one record per chunk
    {"schema_version": "1", "chunk_id": ..., "card": {...} | null, "error": null | "..."}
Intent file: JSONL, one record per query
    {"schema_version": "1", "query_id": ..., "question": ..., "intent": {...}}
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, ValidationError

from fincards_backend.exceptions import CorpusParseError, SchemaValidationError
from fincards_backend.services.corpus.service import Chunk, ChunkStore
from fincards_backend.services.schema.models import SCHEMA_VERSION, ChunkCard, QueryIntent

logger = logging.getLogger(__name__)


def _path(loc: Tuple[Any, ...]) -> str:
    return ".".join(str(part) for part in loc) or "<record>"


def _wrap(kind: str, error: ValidationError) -> SchemaValidationError:
    errors = [{"path": _path(e["loc"]), "message": e["msg"]} for e in error.errors()]
    summary = "; ".join(f"{e['path']}: {e['message']}" for e in errors)
    return SchemaValidationError(f"invalid {kind}: {summary}", errors)


def validate_card(raw: Mapping[str, Any], chunk: Optional[Chunk] = None) -> ChunkCard:
    """
    Validate a raw card record.

    Args:
        raw: parsed card object
        chunk: source chunk; when given, spans are bounds-checked and numeric
            spans must occur verbatim in its text

    Returns:
        ChunkCard: the typed card
    """
    try:
        card = ChunkCard.model_validate(raw)
    except ValidationError as e:
        raise _wrap("card", e) from e
    if chunk is None:
        return card

    errors: List[Dict[str, str]] = []
    if card.chunk_id != chunk.chunk_id:
        errors.append({"path": "chunk_id", "message": f"card for {card.chunk_id!r} paired with chunk {chunk.chunk_id!r}"})
    length = len(chunk.text)
    for i, span in enumerate(card.evidence_spans):
        if span.end > length:
            errors.append({"path": f"evidence_spans.{i}", "message": f"span [{span.start}, {span.end}) exceeds text length {length}"})
    for i, number in enumerate(card.numeric_spans):
        if number not in chunk.text:
            errors.append({"path": f"numeric_spans.{i}", "message": f"{number!r} does not appear verbatim in the chunk text"})
    if errors:
        summary = "; ".join(f"{e['path']}: {e['message']}" for e in errors)
        raise SchemaValidationError(f"invalid card: {summary}", errors)
    return card


def validate_intent(raw: Mapping[str, Any]) -> QueryIntent:
    try:
        return QueryIntent.model_validate(raw)
    except ValidationError as e:
        raise _wrap("intent", e) from e


def card_to_record(card: ChunkCard) -> Dict[str, Any]:
    return card.model_dump(mode="json")


def intent_to_record(intent: QueryIntent) -> Dict[str, Any]:
    return intent.model_dump(mode="json")


class CardEntry(BaseModel):
    """One line of a card file; ``card`` is None when extraction failed."""

    model_config = ConfigDict(frozen=True)

    chunk_id: str
    card: Optional[ChunkCard] = None
    error: Optional[str] = None


class IntentEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_id: str
    question: str
    intent: QueryIntent


def _read_jsonl(path: Union[str, Path]):
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusParseError(f"{path} line {line_number}: invalid JSON ({e.msg})", line_number) from e
            if record.get("schema_version") != SCHEMA_VERSION:
                raise SchemaValidationError(
                    f"{path} line {line_number}: unsupported schema_version {record.get('schema_version')!r}",
                    [{"path": "schema_version", "message": f"expected {SCHEMA_VERSION!r}"}],
                )
            yield line_number, record


def _write_jsonl(path: Union[str, Path], records: List[Dict[str, Any]]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")


def load_cards(path: Union[str, Path], store: Optional[ChunkStore] = None) -> Dict[str, CardEntry]:
    """
    Read a card file.

    Args:
        path: card JSONL file
        store: the filing the cards were extracted from; when given, every
            record must name one of its chunks and each card is checked
            against that chunk's text

    Returns:
        Dict[str, CardEntry]: entries keyed by chunk id
    """
    entries: Dict[str, CardEntry] = {}
    for line_number, record in _read_jsonl(path):
        chunk_id = record.get("chunk_id")
        if not isinstance(chunk_id, str) or not chunk_id:
            raise SchemaValidationError(
                f"{path} line {line_number}: record has no chunk_id", [{"path": "chunk_id", "message": "missing"}]
            )
        if chunk_id in entries:
            raise SchemaValidationError(
                f"{path} line {line_number}: duplicate card for {chunk_id!r}", [{"path": "chunk_id", "message": "duplicate"}]
            )
        chunk = None
        if store is not None:
            if chunk_id not in store:
                raise SchemaValidationError(
                    f"{path} line {line_number}: {chunk_id!r} is not a chunk of {store.doc_id}",
                    [{"path": "chunk_id", "message": "unknown chunk"}],
                )
            chunk = store.get_chunk(chunk_id)
        raw = record.get("card")
        try:
            card = validate_card(raw, chunk) if raw is not None else None
        except SchemaValidationError as e:
            raise SchemaValidationError(f"{path} line {line_number}: {e}", e.errors) from e
        if card is not None and card.chunk_id != chunk_id:
            raise SchemaValidationError(
                f"{path} line {line_number}: card for {card.chunk_id!r} filed under {chunk_id!r}",
                [{"path": "card.chunk_id", "message": "does not match the record chunk_id"}],
            )
        entries[chunk_id] = CardEntry(chunk_id=chunk_id, card=card, error=record.get("error"))
    null_cards = sum(1 for entry in entries.values() if entry.card is None)
    if null_cards:
        logger.warning(f"{path}: {null_cards} of {len(entries)} chunks have no card")
    return entries


def write_cards(path: Union[str, Path], entries: List[CardEntry]) -> None:
    _write_jsonl(
        path,
        [
            {
                "schema_version": SCHEMA_VERSION,
                "chunk_id": entry.chunk_id,
                "card": card_to_record(entry.card) if entry.card is not None else None,
                "error": entry.error,
            }
            for entry in entries
        ],
    )


def load_intents(path: Union[str, Path]) -> Dict[str, IntentEntry]:
    entries: Dict[str, IntentEntry] = {}
    for line_number, record in _read_jsonl(path):
        try:
            intent = validate_intent(record.get("intent"))
        except SchemaValidationError as e:
            raise SchemaValidationError(f"{path} line {line_number}: {e}", e.errors) from e
        query_id = str(record.get("query_id"))
        entries[query_id] = IntentEntry(query_id=query_id, question=record.get("question", ""), intent=intent)
    return entries


def write_intents(path: Union[str, Path], entries: List[IntentEntry]) -> None:
    _write_jsonl(
        path,
        [
            {
                "schema_version": SCHEMA_VERSION,
                "query_id": entry.query_id,
                "question": entry.question,
                "intent": intent_to_record(entry.intent),
            }
            for entry in entries
        ],
    )


def load_questions(path: Union[str, Path]) -> Dict[str, str]:
    """Question file: JSONL with ``query_id`` and ``question``."""
    questions: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusParseError(f"{path} line {line_number}: invalid JSON ({e.msg})", line_number) from e
            questions[str(record["query_id"])] = record["question"]
    return questions
