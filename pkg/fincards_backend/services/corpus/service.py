import json
import logging
import re
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from fincards_backend.exceptions import (
    ChunkNotFoundError,
    CorpusIntegrityError,
    CorpusParseError,
    EmptyCorpusError,
)

logger = logging.getLogger(__name__)


class Chunk(BaseModel):
    """One contiguous text unit of a filing; the atomic retrieval item."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    chunk_id: str = Field(min_length=1)
    doc_id: str
    chunk_index: int = Field(ge=0)
    section_path: Tuple[str, ...] = ()
    text: str

    @field_validator("text")
    @classmethod
    def _non_blank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("text is empty after trimming")
        return value

    def to_record(self) -> Dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "chunk_index": self.chunk_index,
            "section_path": list(self.section_path),
            "text": self.text,
        }


class ChunkStore:
    """
    Immutable, index-ordered collection of the chunks of one filing.

    Iteration order equals chunk_index order; chunk ids are case-sensitive.
    """

    def __init__(self, doc_id: str, chunks: Sequence[Chunk]):
        ordered = tuple(sorted(chunks, key=lambda c: c.chunk_index))
        for position, chunk in enumerate(ordered):
            if chunk.chunk_index != position:
                raise CorpusIntegrityError(
                    f"chunk_index values must form 0..{len(ordered) - 1}; "
                    f"missing index {position}"
                )
        self._doc_id = doc_id
        self._chunks = ordered
        self._by_id: Dict[str, Chunk] = {c.chunk_id: c for c in ordered}
        if len(self._by_id) != len(ordered):
            raise CorpusIntegrityError("duplicate chunk_id in store")

    @property
    def doc_id(self) -> str:
        return self._doc_id

    @property
    def chunks(self) -> Tuple[Chunk, ...]:
        return self._chunks

    @property
    def length(self) -> int:
        """L, the number of chunks in the filing."""
        return len(self._chunks)

    def __len__(self) -> int:
        return len(self._chunks)

    def __iter__(self) -> Iterator[Chunk]:
        return iter(self._chunks)

    def __contains__(self, chunk_id: object) -> bool:
        return chunk_id in self._by_id

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ChunkStore):
            return NotImplemented
        return self._doc_id == other._doc_id and self._chunks == other._chunks

    def get_chunk(self, chunk_id: str) -> Chunk:
        try:
            return self._by_id[chunk_id]
        except KeyError:
            raise ChunkNotFoundError(f"chunk {chunk_id!r} not found in {self._doc_id}") from None

    def index_of(self, chunk_id: str) -> int:
        return self.get_chunk(chunk_id).chunk_index


def load_chunks(path: Union[str, Path], doc_id: Optional[str] = None) -> ChunkStore:
    """
    Load a chunk JSONL file into a store.

    Args:
        path: chunk file, one JSON object per line
        doc_id: expected document id; inferred from the first record when omitted

    Returns:
        ChunkStore: store with every record of the file
    """
    records: List[Chunk] = []
    first_line_of: Dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusParseError(f"line {line_number}: invalid JSON ({e.msg})", line_number) from e
            try:
                chunk = Chunk.model_validate(raw)
            except ValidationError as e:
                fields = ", ".join(".".join(str(p) for p in err["loc"]) or "<record>" for err in e.errors())
                raise CorpusParseError(f"line {line_number}: invalid chunk record ({fields})", line_number) from e

            if chunk.chunk_id in first_line_of:
                first = first_line_of[chunk.chunk_id]
                raise CorpusIntegrityError(
                    f"duplicate chunk_id {chunk.chunk_id!r} on lines {first} and {line_number}",
                    [first, line_number],
                )
            first_line_of[chunk.chunk_id] = line_number

            if doc_id is None:
                doc_id = chunk.doc_id
            elif chunk.doc_id != doc_id:
                raise CorpusIntegrityError(
                    f"line {line_number}: doc_id {chunk.doc_id!r} does not match {doc_id!r}",
                    [line_number],
                )
            records.append(chunk)

    if not records:
        raise EmptyCorpusError()

    store = ChunkStore(doc_id, records)
    logger.info(f"Loaded {store.length} chunks for {store.doc_id} from {path}")
    return store


def get_chunk(store: ChunkStore, chunk_id: str) -> Chunk:
    return store.get_chunk(chunk_id)


def dump_chunks(store: ChunkStore, path: Union[str, Path]) -> None:
    """Write the store back out in chunk_index order (LF endings, UTF-8)."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for chunk in store:
            f.write(json.dumps(chunk.to_record(), ensure_ascii=False) + "\n")


# Filing headings: "PART II", "Item 7.", or short all-caps lines.
_PART_RE = re.compile(r"^part\s+[ivx]+\b", re.IGNORECASE)
_ITEM_RE = re.compile(r"^item\s+\d+[a-z]?\b", re.IGNORECASE)


def _heading_level(paragraph: str) -> Optional[int]:
    if "\n" in paragraph or len(paragraph.split()) > 12:
        return None
    if _PART_RE.match(paragraph):
        return 0
    if _ITEM_RE.match(paragraph):
        return 1
    letters = [c for c in paragraph if c.isalpha()]
    if letters and all(c.isupper() for c in letters) and not paragraph.endswith("."):
        return 2
    return None


def split_filing(text: str, doc_id: str) -> ChunkStore:
    """
    Split raw filing text into paragraph chunks.

    Paragraphs are separated by blank lines. Heading paragraphs update the
    section path of the chunks after them and are kept as chunks themselves.
    Chunk ids follow "<doc_id>#<chunk_index>".
    """
    paragraphs = [p.strip() for p in re.split(r"\n\s*\n", text.replace("\r\n", "\n")) if p.strip()]
    if not paragraphs:
        raise EmptyCorpusError()

    path: List[str] = []
    chunks: List[Chunk] = []
    for paragraph in paragraphs:
        level = _heading_level(paragraph)
        if level is not None:
            path = path[:level] + [paragraph]
        index = len(chunks)
        chunks.append(
            Chunk(
                chunk_id=f"{doc_id}#{index}",
                doc_id=doc_id,
                chunk_index=index,
                section_path=tuple(path),
                text=paragraph,
            )
        )
    return ChunkStore(doc_id, chunks)
