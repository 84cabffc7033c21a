import logging
import math
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from fincards_backend.exceptions import NoRelevantJudgmentsError
from fincards_backend.services.audit.service import AuditTrace, EventKind
from fincards_backend.services.eval.trec import Qrels, Run

logger = logging.getLogger(__name__)

DEFAULT_K = 10


def _judged(ranking: Sequence[str], grades: Mapping[str, int]) -> List[int]:
    if len(set(ranking)) != len(ranking):
        raise ValueError("ranking contains duplicate chunk ids")
    if not any(g > 0 for g in grades.values()):
        raise NoRelevantJudgmentsError("query has no positive relevance grade")
    return [grades.get(chunk_id, 0) for chunk_id in ranking]


def ndcg_at_k(ranking: Sequence[str], grades: Mapping[str, int], k: int = DEFAULT_K, linear_gain: bool = False) -> float:
    """
    nDCG@k with gain 2^grade - 1 (or grade, with linear_gain) and discount log2(rank + 1).

    Args:
        ranking: chunk ids, best first
        grades: chunk id -> relevance grade for one query
        k: cutoff
        linear_gain: use the grade itself as gain

    Returns:
        float: value in [0, 1]
    """
    observed = _judged(ranking, grades)

    def gain(grade: int) -> float:
        return float(grade) if linear_gain else float(2 ** grade - 1)

    dcg = sum(gain(g) / math.log2(rank + 1) for rank, g in enumerate(observed[:k], start=1))
    ideal = sorted((g for g in grades.values() if g > 0), reverse=True)[:k]
    idcg = sum(gain(g) / math.log2(rank + 1) for rank, g in enumerate(ideal, start=1))
    return dcg / idcg


def map_at_k(ranking: Sequence[str], grades: Mapping[str, int], k: int = DEFAULT_K) -> float:
    """Average precision truncated at k, normalized by min(k, #relevant); relevance is grade > 0."""
    observed = _judged(ranking, grades)
    relevant_total = sum(1 for g in grades.values() if g > 0)
    hits, total = 0, 0.0
    for rank, g in enumerate(observed[:k], start=1):
        if g > 0:
            hits += 1
            total += hits / rank
    return total / min(k, relevant_total)


def mrr_at_k(ranking: Sequence[str], grades: Mapping[str, int], k: int = DEFAULT_K) -> float:
    observed = _judged(ranking, grades)
    for rank, g in enumerate(observed[:k], start=1):
        if g > 0:
            return 1.0 / rank
    return 0.0


class QueryMetrics(BaseModel):
    query_id: str
    ndcg: float = Field(ge=0, le=100)
    map: float = Field(ge=0, le=100)
    mrr: float = Field(ge=0, le=100)


class MetricReport(BaseModel):
    """Per-query and mean metrics of one run, scaled by 100."""

    run_name: str
    k: int = DEFAULT_K
    linear_gain: bool = False
    per_query: Dict[str, QueryMetrics] = {}
    excluded: List[str] = []
    candidate_sizes: Dict[str, float] = {}
    rank_variance: Optional[float] = None

    def mean(self, metric: str) -> float:
        if not self.per_query:
            return 0.0
        return float(np.mean([getattr(q, metric) for q in self.per_query.values()]))

    @property
    def means(self) -> Dict[str, float]:
        return {
            f"nDCG@{self.k}": self.mean("ndcg"),
            f"MAP@{self.k}": self.mean("map"),
            f"MRR@{self.k}": self.mean("mrr"),
        }

    def to_text(self) -> str:
        lines = [f"run: {self.run_name}  (queries scored: {len(self.per_query)}, excluded: {len(self.excluded)})"]
        lines += [f"  {name:<10} {value:7.2f}" for name, value in self.means.items()]
        for stage, size in self.candidate_sizes.items():
            lines.append(f"  |{stage}| {size:7.1f}")
        if self.rank_variance is not None:
            lines.append(f"  rank variance {self.rank_variance:.4f}")
        if self.excluded:
            lines.append(f"  excluded (no positive grade): {', '.join(self.excluded)}")
        return "\n".join(lines)


def evaluate_run(
    run: Run,
    qrels: Qrels,
    k: int = DEFAULT_K,
    linear_gain: bool = False,
    run_name: str = "run",
    traces: Optional[Iterable[AuditTrace]] = None,
) -> MetricReport:
    """
    Score every query of a run.

    Queries without a positive grade are excluded and listed, never scored
    as 0. A query with judgments but no run entry scores 0.

    Args:
        run: query id -> ranked chunk ids
        qrels: graded judgments
        k: metric cutoff
        linear_gain: nDCG gain equal to the grade instead of 2^grade - 1
        run_name: label in reports and comparison tables
        traces: audit traces of the run, for candidate sizes and rank variance

    Returns:
        MetricReport: the run's report
    """
    report = MetricReport(run_name=run_name, k=k, linear_gain=linear_gain)
    for qid in sorted(set(run) | set(qrels)):
        grades = qrels.get(qid, {})
        ranking = run.get(qid, [])
        try:
            report.per_query[qid] = QueryMetrics(
                query_id=qid,
                ndcg=100.0 * ndcg_at_k(ranking, grades, k, linear_gain),
                map=100.0 * map_at_k(ranking, grades, k),
                mrr=100.0 * mrr_at_k(ranking, grades, k),
            )
        except NoRelevantJudgmentsError:
            report.excluded.append(qid)
    if report.excluded:
        logger.warning(f"{len(report.excluded)} queries excluded from {run_name}: no positive relevance grade")

    if traces is not None:
        traces = list(traces)
        sizes = [candidate_sizes(trace) for trace in traces]
        for stage in ("stage1", "stage2", "final"):
            values = [s[stage] for s in sizes if stage in s]
            if values:
                report.candidate_sizes[stage] = float(np.mean(values))
        variances = [v for v in (rank_variance(trace) for trace in traces) if v is not None]
        report.rank_variance = float(np.mean(variances)) if variances else None
    return report


def _completed_rounds(trace: AuditTrace) -> List[int]:
    return sorted(e.data["round"] for e in trace.of_kind(EventKind.STAGE3_ROUND_COMPLETED))


def rank_variance(trace: AuditTrace) -> Optional[float]:
    """
    Mean per-candidate variance of normalized within-group position across Stage-3 rounds.

    The position of a candidate ranked rho in a group of n is (rho - 1) / (n - 1).
    Candidates seen in fewer than two rounds are left out. Returns None when
    the trace has fewer than two completed rounds.
    """
    completed = set(_completed_rounds(trace))
    if len(completed) < 2:
        return None
    positions: Dict[str, List[float]] = {}
    for event in trace.of_kind(EventKind.STAGE3_GROUP_RANKED):
        if event.data["round"] not in completed:
            continue
        n = len(event.data["ranking"])
        for entry in event.data["ranking"]:
            positions.setdefault(entry["chunk_id"], []).append((entry["rank"] - 1) / (n - 1))
    variances = [float(np.var(p)) for p in positions.values() if len(p) >= 2]
    return float(np.mean(variances)) if variances else None


def replicate_rank_variance(orders: Sequence[Sequence[str]]) -> Optional[float]:
    """
    Mean per-candidate variance of normalized final position across repeated runs.

    Args:
        orders: final orderings of the same query from runs with different seeds

    Returns:
        Optional[float]: None with fewer than two orderings
    """
    if len(orders) < 2:
        return None
    positions: Dict[str, List[float]] = {}
    for order in orders:
        span = max(len(order) - 1, 1)
        for pos, chunk_id in enumerate(order):
            positions.setdefault(chunk_id, []).append(pos / span)
    variances = [float(np.var(p)) for p in positions.values() if len(p) >= 2]
    return float(np.mean(variances)) if variances else None


def candidate_sizes(trace: AuditTrace) -> Dict[str, int]:
    sizes: Dict[str, int] = {}
    pool = trace.last(EventKind.STAGE1_POOL)
    if pool:
        sizes["stage1"] = len(pool.data["candidates"])
    stage2 = trace.last(EventKind.STAGE2_OUTPUT)
    if stage2:
        sizes["stage2"] = len(stage2.data["candidates"])
    final = trace.last(EventKind.FINAL_RANKING)
    if final:
        sizes["final"] = len(final.data["items"])
    return sizes


class GoldDiagnostic(BaseModel):
    """Where one gold chunk stood at every stage of a query."""

    chunk_id: str
    stage1_rank: Optional[int] = None
    stage1_score: Optional[float] = None
    stage2_relevance: Optional[int] = None
    survived_stage2: Optional[bool] = None
    final_rank: Optional[int] = None
    top5_rounds: int = 0
    rounds: int = 0
    borda: Optional[float] = None


def gold_diagnostics(trace: AuditTrace, gold_ids: Iterable[str]) -> List[GoldDiagnostic]:
    """
    Stage-wise fate of each gold chunk: Stage-1 rank and score, Stage-2
    survival, final rank, and how many Stage-3 rounds held it in the
    cumulative top 5.
    """
    pool = trace.last(EventKind.STAGE1_POOL)
    stage1 = {c["chunk_id"]: c for c in pool.data["candidates"]} if pool else {}
    stage2_event = trace.last(EventKind.STAGE2_OUTPUT)
    stage2 = {c["chunk_id"]: c for c in stage2_event.data["candidates"]} if stage2_event else None
    final_event = trace.last(EventKind.FINAL_RANKING)
    final = {item["chunk_id"]: item for item in final_event.data["items"]} if final_event else {}
    completed = list(trace.of_kind(EventKind.STAGE3_ROUND_COMPLETED))

    diagnostics = []
    for chunk_id in sorted(set(gold_ids)):
        entry = GoldDiagnostic(chunk_id=chunk_id, rounds=len(completed))
        if chunk_id in stage1:
            entry.stage1_rank = stage1[chunk_id]["rank"]
            entry.stage1_score = stage1[chunk_id]["score"]
        if stage2 is not None:
            entry.survived_stage2 = chunk_id in stage2
            if chunk_id in stage2:
                entry.stage2_relevance = stage2[chunk_id]["relevance"]
        if chunk_id in final:
            entry.final_rank = final[chunk_id]["rank"]
            entry.borda = final[chunk_id].get("borda")
        entry.top5_rounds = sum(1 for e in completed if chunk_id in e.data["top_k"][:5])
        diagnostics.append(entry)
    return diagnostics


def comparison_table(reports: Sequence[MetricReport]) -> pd.DataFrame:
    """One row per run with mean metrics and mean candidate sizes per stage."""
    rows = []
    for report in reports:
        row = {"run": report.run_name, **report.means, "queries": len(report.per_query), "excluded": len(report.excluded)}
        for stage, size in report.candidate_sizes.items():
            row[f"|{stage}|"] = size
        if report.rank_variance is not None:
            row["rank_variance"] = report.rank_variance
        rows.append(row)
    frame = pd.DataFrame(rows)
    if not frame.empty:
        frame = frame.set_index("run")
    return frame


def format_table(frame: pd.DataFrame) -> str:
    if frame.empty:
        return "(no runs)"
    return frame.round(2).to_string()
