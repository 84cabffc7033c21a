"""
Per-query decision trace.

The trace is an append-only list of events from a closed vocabulary. Event
payloads are canonicalized on entry (floats to 9 significant digits, tuples
to lists), and serialization sorts keys, so two identical runs produce
byte-identical trace files.
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Set, Union

from pydantic import BaseModel, ConfigDict

from fincards_backend.exceptions import SchemaValidationError, TraceNotFoundError

logger = logging.getLogger(__name__)

TRACE_SCHEMA_VERSION = "1"
BORDA_SUM_TOLERANCE = 1e-6


class EventKind(str, Enum):
    RUN_STARTED = "run_started"
    INTENT_RESOLVED = "intent_resolved"
    STAGE1_POOL = "stage1_pool"
    TIE_BREAK = "tie_break"
    NULL_CARD = "null_card"
    STAGE2_ATTEMPT = "stage2_attempt"
    STAGE2_GROUP_SELECTED = "stage2_group_selected"
    STAGE2_RETENTION = "stage2_retention"
    STAGE2_RETRY = "stage2_retry"
    STAGE2_OUTPUT = "stage2_output"
    STAGE3_ROUND_STARTED = "stage3_round_started"
    STAGE3_GROUP_RANKED = "stage3_group_ranked"
    STAGE3_ROUND_COMPLETED = "stage3_round_completed"
    STAGE3_STOPPED = "stage3_stopped"
    STAGE3_SKIPPED = "stage3_skipped"
    ZEROSHOT_RANKED = "zeroshot_ranked"
    JUDGE_CALLS = "judge_calls"
    STAGE_FAILED = "stage_failed"
    FINAL_RANKING = "final_ranking"


def canonicalize(value: Any) -> Any:
    """JSON-ready copy of value with floats fixed to 9 significant digits."""
    if isinstance(value, BaseModel):
        return canonicalize(value.model_dump(mode="json"))
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, int):
        return int(value)
    if isinstance(value, float):
        return float(f"{value:.9g}")
    if isinstance(value, dict):
        return {str(k): canonicalize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [canonicalize(v) for v in value]
    if hasattr(value, "item"):  # numpy scalars
        return canonicalize(value.item())
    raise TypeError(f"cannot put {type(value).__name__} into a trace")


@dataclass(frozen=True)
class AuditEvent:
    seq: int
    kind: EventKind
    data: Dict[str, Any]

    def to_record(self) -> Dict[str, Any]:
        return {"seq": self.seq, "kind": self.kind.value, "data": self.data}


class AuditTrace:
    """Append-only, single-writer event log for one query."""

    def __init__(self, query_id: str, config: Optional[Dict[str, Any]] = None):
        self.query_id = query_id
        self.config = canonicalize(config or {})
        self._events: List[AuditEvent] = []

    @property
    def events(self) -> List[AuditEvent]:
        return list(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[AuditEvent]:
        return iter(list(self._events))

    def of_kind(self, kind: Union[EventKind, str]) -> List[AuditEvent]:
        kind = EventKind(kind)
        return [e for e in self._events if e.kind == kind]

    def last(self, kind: Union[EventKind, str]) -> Optional[AuditEvent]:
        matching = self.of_kind(kind)
        return matching[-1] if matching else None

    def append(self, kind: Union[EventKind, str], data: Optional[Dict[str, Any]] = None) -> AuditEvent:
        try:
            kind = EventKind(kind)
        except ValueError:
            raise ValueError(f"unknown trace event kind {kind!r}") from None
        event = AuditEvent(seq=len(self._events), kind=kind, data=canonicalize(data or {}))
        self._events.append(event)
        return event

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": TRACE_SCHEMA_VERSION,
            "query_id": self.query_id,
            "config": self.config,
            "events": [e.to_record() for e in self._events],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "AuditTrace":
        if raw.get("schema_version") != TRACE_SCHEMA_VERSION:
            raise SchemaValidationError(
                f"unsupported trace schema_version {raw.get('schema_version')!r}",
                [{"path": "schema_version", "message": f"expected {TRACE_SCHEMA_VERSION!r}"}],
            )
        trace = cls(raw["query_id"], raw.get("config"))
        for i, record in enumerate(raw.get("events", [])):
            try:
                kind = EventKind(record["kind"])
            except (KeyError, ValueError):
                raise SchemaValidationError(
                    f"event {i} has unknown kind {record.get('kind')!r}",
                    [{"path": f"events.{i}.kind", "message": "unknown event kind"}],
                ) from None
            # keep recorded seq numbers so validation can check them
            trace._events.append(AuditEvent(seq=record.get("seq", i), kind=kind, data=record.get("data", {})))
        return trace

    @classmethod
    def from_json(cls, text: str) -> "AuditTrace":
        return cls.from_dict(json.loads(text))

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AuditTrace":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def record_event(trace: AuditTrace, kind: Union[EventKind, str], data: Optional[Dict[str, Any]] = None) -> AuditTrace:
    trace.append(kind, data)
    return trace


class RoundRank(BaseModel):
    model_config = ConfigDict(frozen=True)

    round: int
    group_index: int
    rank: int
    group_size: int
    borda: float


class SurvivalStep(BaseModel):
    model_config = ConfigDict(frozen=True)

    stage: str
    detail: Dict[str, Any]


class Explanation(BaseModel):
    """How one chunk reached its final rank."""

    model_config = ConfigDict(frozen=True)

    query_id: str
    chunk_id: str
    final_rank: int
    final_score: float
    matched_fields: Dict[str, Any]
    survival_path: List[SurvivalStep]
    round_ranks: List[RoundRank]
    score_decomposition: Dict[str, Any]
    tie_breaks: List[Dict[str, Any]]

    def render(self) -> str:
        lines = [f"query {self.query_id} / chunk {self.chunk_id}: final rank {self.final_rank} (score {self.final_score:g})"]
        lines.append("matched fields:")
        matches = self.matched_fields
        if not any(matches.get(k) for k in ("metrics", "entities", "period")):
            lines.append("  (none)")
        for field in ("metrics", "entities"):
            for term in matches.get(field) or []:
                lines.append(f"  {field}: {term['value']} spans={term.get('spans', [])}{_snippets(term)}")
        if matches.get("period"):
            term = matches["period"]
            lines.append(f"  period: {term['value']} spans={term.get('spans', [])}{_snippets(term)}")
        lines.append("survival path:")
        for step in self.survival_path:
            detail = ", ".join(f"{k}={v}" for k, v in sorted(step.detail.items()))
            lines.append(f"  {step.stage}: {detail}")
        if self.round_ranks:
            lines.append("stage-3 ranks:")
            for r in self.round_ranks:
                lines.append(f"  round {r.round} group {r.group_index}: rank {r.rank}/{r.group_size} borda={r.borda:.4f}")
        if self.tie_breaks:
            lines.append("tie-breaks:")
            for tie in self.tie_breaks:
                lines.append(f"  {tie['stage']}: {' then '.join(tie['rules'])} among {len(tie['chunk_ids'])} tied chunks")
        lines.append("score decomposition: " + json.dumps(self.score_decomposition, sort_keys=True))
        return "\n".join(lines)


def _snippets(term: Dict[str, Any]) -> str:
    texts = term.get("texts")
    return f" text={texts}" if texts else ""


def _mentions(data: Any, chunk_id: str) -> bool:
    if isinstance(data, str):
        return data == chunk_id
    if isinstance(data, dict):
        return chunk_id in data or any(_mentions(v, chunk_id) for v in data.values())
    if isinstance(data, list):
        return any(_mentions(v, chunk_id) for v in data)
    return False


def explain(trace: AuditTrace, chunk_id: str, chunk_text: Optional[str] = None) -> Explanation:
    """
    Explain a chunk of the final list.

    Args:
        trace: a completed trace
        chunk_id: chunk in the final ranking
        chunk_text: source text, to quote the matched spans

    Returns:
        Explanation: matched fields, survival path, per-round ranks, score
            decomposition and the tie-break rules applied
    """
    final = trace.last(EventKind.FINAL_RANKING)
    items = {item["chunk_id"]: item for item in (final.data["items"] if final else [])}
    if chunk_id not in items:
        last_seq = None
        for event in trace:
            if _mentions(event.data, chunk_id):
                last_seq = event.seq
        where = f"; last seen in event {last_seq}" if last_seq is not None else "; never in the trace"
        raise TraceNotFoundError(f"chunk {chunk_id!r} is not in the final list of query {trace.query_id}{where}", last_seq)

    item = items[chunk_id]
    matched = dict(final.data.get("field_matches", {}).get(chunk_id, {}))
    if chunk_text is not None:
        for field in ("metrics", "entities"):
            matched[field] = [
                {**term, "texts": [chunk_text[s:e] for s, e in term.get("spans", [])]} for term in matched.get(field) or []
            ]
        if matched.get("period"):
            term = matched["period"]
            matched["period"] = {**term, "texts": [chunk_text[s:e] for s, e in term.get("spans", [])]}

    path: List[SurvivalStep] = []
    pool = trace.last(EventKind.STAGE1_POOL)
    if pool:
        for cand in pool.data["candidates"]:
            if cand["chunk_id"] == chunk_id:
                path.append(SurvivalStep(stage="stage1", detail={"rank": cand["rank"], "score": cand["score"], "pool_size": len(pool.data["candidates"])}))
    stage2 = trace.last(EventKind.STAGE2_OUTPUT)
    if stage2:
        for cand in stage2.data["candidates"]:
            if cand["chunk_id"] == chunk_id:
                detail = {"relevance": cand["relevance"], "attempt": stage2.data["attempt"]}
                groups = [
                    e.data["group_index"]
                    for e in trace.of_kind(EventKind.STAGE2_GROUP_SELECTED)
                    if e.data["attempt"] == stage2.data["attempt"] and any(s["chunk_id"] == chunk_id for s in e.data["selected"])
                ]
                if groups:
                    detail["selected_in_group"] = groups[0]
                if cand.get("null_card"):
                    detail["null_card"] = True
                path.append(SurvivalStep(stage="stage2", detail=detail))

    round_ranks: List[RoundRank] = []
    for event in trace.of_kind(EventKind.STAGE3_GROUP_RANKED):
        for entry in event.data["ranking"]:
            if entry["chunk_id"] == chunk_id:
                round_ranks.append(
                    RoundRank(
                        round=event.data["round"],
                        group_index=event.data["group_index"],
                        rank=entry["rank"],
                        group_size=len(event.data["ranking"]),
                        borda=entry["borda"],
                    )
                )
    if round_ranks:
        path.append(SurvivalStep(stage="stage3", detail={"rounds": len(round_ranks), "accumulated": item.get("borda")}))
    zeroshot = trace.last(EventKind.ZEROSHOT_RANKED)
    if zeroshot:
        for entry in zeroshot.data["ranking"]:
            if entry["chunk_id"] == chunk_id:
                path.append(SurvivalStep(stage="zeroshot", detail={"rank": entry["rank"]}))
    path.append(SurvivalStep(stage="final", detail={"rank": item["rank"], "score": item["score"]}))

    decomposition: Dict[str, Any] = {
        "final_score": item["score"],
        "stage2_relevance": item.get("stage2_relevance"),
        "stage1_score": item["stage1_score"],
    }
    if round_ranks:
        decomposition["borda_by_round"] = {str(r.round): r.borda for r in round_ranks}
        decomposition["borda_total"] = float(f"{sum(r.borda for r in round_ranks):.9g}")

    ties = [e.data for e in trace.of_kind(EventKind.TIE_BREAK) if chunk_id in e.data.get("chunk_ids", [])]
    return Explanation(
        query_id=trace.query_id,
        chunk_id=chunk_id,
        final_rank=item["rank"],
        final_score=item["score"],
        matched_fields=matched,
        survival_path=path,
        round_ranks=round_ranks,
        score_decomposition=decomposition,
        tie_breaks=ties,
    )


class TraceReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_id: str
    passed: bool
    violations: List[str]
    checks: int

    def render(self) -> str:
        if self.passed:
            return f"trace {self.query_id}: PASS ({self.checks} checks)"
        return "\n".join([f"trace {self.query_id}: FAIL ({len(self.violations)} violations)"] + [f"  - {v}" for v in self.violations])


def validate_trace(trace: AuditTrace) -> TraceReport:
    """
    Check the structural invariants of a trace.

    Sequence numbers must run 0..n-1; every chunk reranked after Stage 1 must
    come from the Stage-1 pool; every Stage-3 group ranking must be a
    permutation with ranks 1..n whose Borda scores sum to n/2; every Stage-3
    candidate must appear in exactly one group per round.
    """
    violations: List[str] = []
    checks = 0

    for i, event in enumerate(trace):
        checks += 1
        if event.seq != i:
            violations.append(f"event {i}: sequence number {event.seq} breaks monotonic order")

    pool_event = trace.last(EventKind.STAGE1_POOL)
    pool: Set[str] = {c["chunk_id"] for c in pool_event.data["candidates"]} if pool_event else set()
    if pool_event is None:
        violations.append("trace has no stage1_pool event")

    def fairness(ids, where: str) -> None:
        nonlocal checks
        for cid in ids:
            checks += 1
            if cid not in pool:
                violations.append(f"fairness: {cid} in {where} is not in the Stage-1 pool")

    for event in trace.of_kind(EventKind.STAGE2_ATTEMPT):
        fairness([cid for group in event.data["groups"] for cid in group], f"stage2 attempt {event.data['attempt']} groups")
    for event in trace.of_kind(EventKind.STAGE2_GROUP_SELECTED):
        fairness([s["chunk_id"] for s in event.data["selected"]], f"stage2 group {event.data['group_index']} selection")
    for event in trace.of_kind(EventKind.STAGE2_OUTPUT):
        fairness([c["chunk_id"] for c in event.data["candidates"]], "stage2 output")
    for event in trace.of_kind(EventKind.ZEROSHOT_RANKED):
        fairness([r["chunk_id"] for r in event.data["ranking"]], "zero-shot ranking")
    final = trace.last(EventKind.FINAL_RANKING)
    if final:
        fairness([item["chunk_id"] for item in final.data["items"]], "final ranking")

    rounds: Dict[int, Dict[str, Any]] = {}
    for event in trace.of_kind(EventKind.STAGE3_ROUND_STARTED):
        rounds[event.data["round"]] = {"groups": event.data["groups"], "ranked": {}}
        members = [cid for group in event.data["groups"] for cid in group]
        fairness(members, f"stage3 round {event.data['round']}")
        candidates = event.data.get("candidates", members)
        checks += 1
        if sorted(members) != sorted(candidates):
            violations.append(f"coverage: round {event.data['round']} groups do not cover each candidate exactly once")

    for event in trace.of_kind(EventKind.STAGE3_GROUP_RANKED):
        r, g = event.data["round"], event.data["group_index"]
        ranking = event.data["ranking"]
        n = len(ranking)
        ids = [entry["chunk_id"] for entry in ranking]
        checks += 3
        if r not in rounds or g >= len(rounds[r]["groups"]):
            violations.append(f"rank integrity: round {r} group {g} ranked without a recorded group")
            continue
        rounds[r]["ranked"][g] = True
        expected = rounds[r]["groups"][g]
        if sorted(ids) != sorted(expected) or len(set(ids)) != len(ids):
            violations.append(f"rank integrity: round {r} group {g} ranking is not a permutation of its group")
        if sorted(entry["rank"] for entry in ranking) != list(range(1, n + 1)):
            violations.append(f"rank integrity: round {r} group {g} ranks do not form 1..{n}")
        total = sum(entry["borda"] for entry in ranking)
        if abs(total - n / 2) > BORDA_SUM_TOLERANCE:
            violations.append(f"borda: round {r} group {g} scores sum to {total:g}, expected {n / 2:g}")

    for r, info in sorted(rounds.items()):
        checks += 1
        missing = [g for g in range(len(info["groups"])) if g not in info["ranked"]]
        completed = any(e.data["round"] == r for e in trace.of_kind(EventKind.STAGE3_ROUND_COMPLETED))
        if missing and completed:
            violations.append(f"coverage: round {r} completed without ranks for groups {missing}")

    report = TraceReport(query_id=trace.query_id, passed=not violations, violations=violations, checks=checks)
    if not report.passed:
        logger.warning(f"Trace {trace.query_id} failed validation with {len(violations)} violations")
    return report
