"""
TREC run and qrels files.

Qrels lines are ``qid 0 chunk_id grade``; run lines are
``qid Q0 chunk_id rank score tag``. Both are whitespace separated.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

from fincards_backend.exceptions import SchemaValidationError
from fincards_backend.services.tournament.models.results import RankedList

logger = logging.getLogger(__name__)

Qrels = Dict[str, Dict[str, int]]
Run = Dict[str, List[str]]


def _field(value: str, name: str, where: str) -> None:
    if not value or any(c.isspace() for c in value):
        raise SchemaValidationError(
            f"{where}: {name} {value!r} is empty or contains whitespace",
            [{"path": f"{where}.{name}", "message": "not a single TREC field"}],
        )


def load_qrels(path: Union[str, Path]) -> Qrels:
    """
    Read a qrels file.

    Args:
        path: qrels file

    Returns:
        Qrels: query id -> chunk id -> grade
    """
    qrels: Qrels = {}
    seen: Dict[Tuple[str, str], int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise SchemaValidationError(
                    f"{path}:{line_number}: expected 'qid 0 chunk_id grade'",
                    [{"path": f"line {line_number}", "message": "wrong field count"}],
                )
            qid, _, chunk_id, grade = parts
            try:
                value = int(grade)
            except ValueError:
                value = -1
            if value < 0:
                raise SchemaValidationError(
                    f"{path}:{line_number}: grade must be a non-negative integer, got {grade!r}",
                    [{"path": f"line {line_number}", "message": "bad grade"}],
                )
            if (qid, chunk_id) in seen:
                first = seen[(qid, chunk_id)]
                raise SchemaValidationError(
                    f"{path}:{line_number}: duplicate judgment for {qid} {chunk_id} (first on line {first})",
                    [{"path": f"line {line_number}", "message": f"duplicates line {first}"}],
                )
            seen[(qid, chunk_id)] = line_number
            qrels.setdefault(qid, {})[chunk_id] = value
    logger.debug(f"Loaded qrels for {len(qrels)} queries from {path}")
    return qrels


def write_qrels(qrels: Qrels, path: Union[str, Path]) -> None:
    lines = []
    for qid in sorted(qrels):
        _field(qid, "qid", "qrels")
        for chunk_id, grade in sorted(qrels[qid].items()):
            _field(chunk_id, "chunk_id", f"qrels {qid}")
            lines.append(f"{qid} 0 {chunk_id} {grade}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(lines)


def load_run(path: Union[str, Path]) -> Run:
    """Read a run file into query id -> chunk ids in rank order."""
    rows: Dict[str, List[Tuple[int, str]]] = {}
    seen: Dict[Tuple[str, str], int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise SchemaValidationError(
                    f"{path}:{line_number}: expected 'qid Q0 chunk_id rank score tag'",
                    [{"path": f"line {line_number}", "message": "wrong field count"}],
                )
            qid, _, chunk_id, rank, _, _ = parts
            if (qid, chunk_id) in seen:
                raise SchemaValidationError(
                    f"{path}:{line_number}: query {qid} lists {chunk_id} twice (first on line {seen[(qid, chunk_id)]})",
                    [{"path": f"line {line_number}", "message": "duplicate chunk"}],
                )
            seen[(qid, chunk_id)] = line_number
            try:
                rows.setdefault(qid, []).append((int(rank), chunk_id))
            except ValueError as e:
                raise SchemaValidationError(
                    f"{path}:{line_number}: rank must be an integer",
                    [{"path": f"line {line_number}", "message": str(e)}],
                ) from e
    run: Run = {}
    for qid, entries in rows.items():
        run[qid] = [chunk_id for _, chunk_id in sorted(entries)]
    return run


def format_run(ranked_lists: Iterable[RankedList], tag: str) -> str:
    _field(tag, "tag", "run")
    lines = []
    for ranked in sorted(ranked_lists, key=lambda r: r.query_id):
        _field(ranked.query_id, "qid", "run")
        for item in ranked.items:
            _field(item.chunk_id, "chunk_id", f"run {ranked.query_id} rank {item.rank}")
            lines.append(f"{ranked.query_id} Q0 {item.chunk_id} {item.rank} {item.score:.6f} {tag}")
    return "\n".join(lines) + ("\n" if lines else "")


def write_run(ranked_lists: Iterable[RankedList], path: Union[str, Path], tag: str) -> None:
    """Write final lists as one TREC run file, queries in id order."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_run(ranked_lists, tag))


def run_from_lists(ranked_lists: Iterable[RankedList]) -> Run:
    return {ranked.query_id: ranked.chunk_ids for ranked in ranked_lists}
