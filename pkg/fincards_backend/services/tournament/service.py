import asyncio
import logging
from collections import Counter
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from fincards_backend.config.config import GroupingMode, PipelineConfig, Variant
from fincards_backend.exceptions import JudgeError, StageError
from fincards_backend.services.audit.service import AuditTrace, EventKind
from fincards_backend.services.corpus.service import ChunkStore
from fincards_backend.services.judge.models import CoverageQuotas, JudgeItem, RankingResult, SelectionResult
from fincards_backend.services.judge.service import JudgeService
from fincards_backend.services.lexical.service import LexicalIndex, ScoredCandidate, build_index, retrieve
from fincards_backend.services.schema.alignment import match_fields
from fincards_backend.services.schema.masks import apply_card_mask
from fincards_backend.services.schema.models import ChunkCard, QueryIntent, Topic
from fincards_backend.services.schema.periods import latest_anchor, resolve_relative
from fincards_backend.services.tournament.models.aggregation import (
    aggregate_alternatives,
    borda_score,
    jaccard,
    ordering_value,
    top_k,
)
from fincards_backend.services.tournament.models.grouping import (
    contiguous_partition,
    fixed_partition,
    round_robin_partition,
    seeded_shuffle,
    stage2_retry_seed,
    stage3_group_size,
    stage3_round_seed,
)
from fincards_backend.services.tournament.models.results import RankedItem, RankedList, Stage2Candidate

logger = logging.getLogger(__name__)

STAGE1_REFERENCE_SIZE = 10

CardMap = Mapping[str, Optional[ChunkCard]]


def _record_ties(
    trace: AuditTrace,
    stage: str,
    ordered: Sequence[str],
    primary: Callable[[str], float],
    rules: List[str],
) -> None:
    """Record every run of equal primary keys that the secondary rules had to order."""
    start = 0
    while start < len(ordered):
        end = start + 1
        while end < len(ordered) and primary(ordered[end]) == primary(ordered[start]):
            end += 1
        if end - start > 1:
            trace.append(
                EventKind.TIE_BREAK,
                {"stage": stage, "value": primary(ordered[start]), "rules": rules, "chunk_ids": list(ordered[start:end])},
            )
        start = end


def resolve_intent(intent: QueryIntent, cards: CardMap) -> Tuple[QueryIntent, Optional[str]]:
    """Replace relative periods with absolute ones anchored on the filing's latest card period."""
    if not any(p.is_relative for p in intent.periods):
        return intent, None
    anchor = latest_anchor(card.period for card in cards.values() if card is not None)
    resolved = resolve_relative(intent.periods, anchor)
    temporal = intent.temporal.model_copy(update={"periods": tuple(resolved)})
    return intent.model_copy(update={"temporal": temporal}), anchor.canonical() if anchor else None


class TournamentService:
    """
    Stage 2 card screening and Stage 3 bootstrap stabilization over a Stage-1 pool.

    Every reranking variant consumes exactly the Stage-1 pool, and every
    decision lands in the per-query audit trace.
    """

    def __init__(self, judge: JudgeService, config: Optional[PipelineConfig] = None):
        """
        Initialize the tournament.

        Args:
            judge: judge service used for selection and ranking
            config: pipeline configuration (stage parameters, variant, masks)
        """
        self.judge = judge
        self.config = config or PipelineConfig()

    def _item(self, chunk_id: str, chunk_index: int, stage1_score: float, card: Optional[ChunkCard], store: ChunkStore) -> JudgeItem:
        mask = self.config.card_mask
        if mask.raw_chunks:
            return JudgeItem(chunk_id=chunk_id, chunk_index=chunk_index, stage1_score=stage1_score, text=store.get_chunk(chunk_id).text)
        if card is None:
            card = placeholder_card(chunk_id, store)
        return JudgeItem(chunk_id=chunk_id, chunk_index=chunk_index, stage1_score=stage1_score, card=apply_card_mask(card, mask))

    async def _gather(self, coros: Iterable) -> list:
        return list(await asyncio.gather(*coros))

    async def stage2_screen(
        self,
        pool: Sequence[ScoredCandidate],
        cards: CardMap,
        store: ChunkStore,
        intent: QueryIntent,
        question: str,
        trace: AuditTrace,
        gold_ids: Optional[Iterable[str]] = None,
        calls: Optional[Counter] = None,
    ) -> List[Stage2Candidate]:
        """
        Card-based group screening of the Stage-1 pool.

        Args:
            pool: Stage-1 candidates in rank order
            cards: chunk id -> card (None for chunks without a card)
            store: the filing, for raw-text judging
            intent: resolved query intent
            question: question text for the judge prompt
            trace: audit trace to record into
            gold_ids: relevant chunk ids (evaluation mode retention reference)
            calls: judge call counter to update

        Returns:
            List[Stage2Candidate]: deduplicated finalists, relevance desc,
                then stage1 score desc, then chunk_index asc
        """
        cfg = self.config.stage2
        base_seed = self.config.stage3.base_seed
        calls = calls if calls is not None else Counter()
        if not pool:
            raise StageError("stage 2 needs a non-empty pool", "stage2", trace)

        pool_ids = [c.chunk_id for c in pool]
        if gold_ids is not None:
            gold = set(gold_ids)
            reference = [cid for cid in pool_ids if cid in gold]
            reference_mode = "gold"
        else:
            reference = pool_ids[:STAGE1_REFERENCE_SIZE]
            reference_mode = "stage1_top10"

        by_id = {c.chunk_id: c for c in pool}
        null_ids = [cid for cid in pool_ids if cards.get(cid) is None and not self.config.card_mask.raw_chunks]
        for cid in null_ids:
            trace.append(EventKind.NULL_CARD, {"chunk_id": cid, "stage": "stage2"})
        if null_ids:
            logger.warning(f"{len(null_ids)} pool members have no card; kept with relevance 0")
        quotas = CoverageQuotas.for_intent(intent, cfg.quotas_enabled)

        best: Optional[Tuple[float, int, Dict[str, Stage2Candidate]]] = None
        previous_retention: Optional[float] = None
        for attempt in range(cfg.max_retries + 1):
            if attempt == 0:
                seed, order = None, list(pool)
            else:
                seed = stage2_retry_seed(base_seed, attempt - 1)
                order = seeded_shuffle(list(pool), seed)
            partition = round_robin_partition if cfg.grouping_mode == GroupingMode.ROUND_ROBIN else fixed_partition
            groups = partition(order, cfg.group_size)
            trace.append(
                EventKind.STAGE2_ATTEMPT,
                {
                    "attempt": attempt,
                    "seed": seed,
                    "grouping_mode": cfg.grouping_mode,
                    "group_size": cfg.group_size,
                    "groups": [[c.chunk_id for c in group] for group in groups],
                },
            )

            judged_groups = [
                [self._item(c.chunk_id, c.chunk_index, c.stage1_score, cards.get(c.chunk_id), store) for c in group if c.chunk_id not in null_ids]
                for group in groups
            ]
            label = f"stage2/attempt-{attempt}"

            async def select(items: List[JudgeItem]) -> Optional[SelectionResult]:
                if not items:
                    return None
                calls[label] += 1
                return await self.judge.select_group(items, intent, question, cfg.k_min, cfg.k_max, quotas)

            try:
                results = await self._gather(select(items) for items in judged_groups)
            except JudgeError as e:
                trace.append(EventKind.STAGE_FAILED, {"stage": "stage2", "attempt": attempt, "error": str(e)})
                logger.error(f"Stage 2 failed on attempt {attempt}: {e}")
                raise StageError(f"stage 2 judge failure: {e}", "stage2", trace) from e

            merged: Dict[str, Stage2Candidate] = {}
            for group_index, result in enumerate(results):
                if result is None:
                    continue
                trace.append(
                    EventKind.STAGE2_GROUP_SELECTED,
                    {
                        "attempt": attempt,
                        "group_index": group_index,
                        "quota_unmet": result.quota_unmet,
                        "selected": [
                            {"chunk_id": s.chunk_id, "relevance": s.relevance, "reasons": list(s.reasons)} for s in result.selected
                        ],
                    },
                )
                for s in result.selected:
                    current = merged.get(s.chunk_id)
                    if current is None or s.relevance > current.relevance:
                        c = by_id[s.chunk_id]
                        merged[s.chunk_id] = Stage2Candidate(
                            chunk_id=c.chunk_id,
                            chunk_index=c.chunk_index,
                            stage1_score=c.stage1_score,
                            stage1_rank=c.stage1_rank,
                            relevance=s.relevance,
                            reasons=s.reasons,
                        )
            for cid in null_ids:
                c = by_id[cid]
                merged[cid] = Stage2Candidate(
                    chunk_id=cid,
                    chunk_index=c.chunk_index,
                    stage1_score=c.stage1_score,
                    stage1_rank=c.stage1_rank,
                    relevance=0,
                    null_card=True,
                )

            retained = [cid for cid in reference if cid in merged]
            retention = len(retained) / len(reference) if reference else 1.0
            trace.append(
                EventKind.STAGE2_RETENTION,
                {
                    "attempt": attempt,
                    "reference_mode": reference_mode,
                    "reference_size": len(reference),
                    "retained": retained,
                    "retention": retention,
                },
            )
            if attempt > 0:
                trace.append(
                    EventKind.STAGE2_RETRY,
                    {"attempt": attempt, "seed": seed, "previous_retention": previous_retention, "retention": retention},
                )
                logger.info(f"Stage 2 retry {attempt}: retention {previous_retention:.3f} -> {retention:.3f}")
            if best is None or retention > best[0]:
                best = (retention, attempt, merged)
            previous_retention = retention
            if retention >= cfg.retention_threshold:
                break

        retention, chosen_attempt, merged = best
        ordered = sorted(merged.values(), key=lambda c: (-c.relevance, -c.stage1_score, c.chunk_index))
        relevance = {c.chunk_id: c.relevance for c in ordered}
        _record_ties(trace, "stage2", [c.chunk_id for c in ordered], lambda cid: relevance[cid], ["stage1_score_desc", "chunk_index_asc"])
        trace.append(
            EventKind.STAGE2_OUTPUT,
            {
                "attempt": chosen_attempt,
                "retention": retention,
                "candidates": [
                    {
                        "chunk_id": c.chunk_id,
                        "relevance": c.relevance,
                        "stage1_score": c.stage1_score,
                        "null_card": c.null_card,
                    }
                    for c in ordered
                ],
            },
        )
        logger.info(f"Stage 2 kept {len(ordered)} of {len(pool)} candidates (attempt {chosen_attempt}, retention {retention:.3f})")
        return ordered

    async def stage3_stabilize(
        self,
        candidates: Sequence[Stage2Candidate],
        cards: CardMap,
        store: ChunkStore,
        intent: QueryIntent,
        question: str,
        trace: AuditTrace,
        calls: Optional[Counter] = None,
    ) -> List[Tuple[Stage2Candidate, float]]:
        """
        Bootstrap listwise ranking with normalized Borda accumulation.

        Each round shuffles the candidates with seed base_seed + r, splits
        them into contiguous groups, ranks every group and accumulates the
        scores. From min_rounds on, the round stops the loop once the
        Jaccard overlap of consecutive cumulative top-k sets exceeds the
        threshold.

        Returns:
            List[Tuple[Stage2Candidate, float]]: candidates in final order with their aggregate
        """
        cfg = self.config.stage3
        calls = calls if calls is not None else Counter()
        m = len(candidates)
        by_id = {c.chunk_id: c for c in candidates}
        tiebreak = {c.chunk_id: (-c.relevance, -c.stage1_score, c.chunk_index) for c in candidates}

        if m < 2:
            trace.append(EventKind.STAGE3_SKIPPED, {"reason": "fewer than 2 candidates", "candidates": m})
            return [(c, 0.0) for c in candidates]

        g = stage3_group_size(m, cfg.min_group_size, cfg.max_group_size)
        rounds: List[List[List[str]]] = []
        previous_top: Optional[List[str]] = None
        fixed_groups: Optional[List[List[Stage2Candidate]]] = None
        aggregate: Dict[str, float] = {}
        stop_reason, last_jaccard, round_number = "max_rounds", None, 0

        for round_number in range(1, cfg.max_rounds + 1):
            seed = stage3_round_seed(cfg.base_seed, round_number)
            if cfg.regroup or fixed_groups is None:
                groups = contiguous_partition(seeded_shuffle(list(candidates), seed), g)
                fixed_groups = groups
            else:
                groups = fixed_groups
            trace.append(
                EventKind.STAGE3_ROUND_STARTED,
                {
                    "round": round_number,
                    "seed": seed,
                    "group_size": g,
                    "regroup": cfg.regroup,
                    "candidates": [c.chunk_id for c in candidates],
                    "groups": [[c.chunk_id for c in group] for group in groups],
                },
            )
            label = f"stage3/round-{round_number}"

            async def rank(group: List[Stage2Candidate]) -> RankingResult:
                items = [self._item(c.chunk_id, c.chunk_index, c.stage1_score, cards.get(c.chunk_id), store) for c in group]
                calls[label] += 1
                return await self.judge.rank_group(items, intent, question)

            try:
                results = await self._gather(rank(group) for group in groups)
            except JudgeError as e:
                trace.append(EventKind.STAGE_FAILED, {"stage": "stage3", "round": round_number, "error": str(e)})
                logger.error(f"Stage 3 failed in round {round_number}: {e}")
                raise StageError(f"stage 3 judge failure in round {round_number}: {e}", "stage3", trace) from e

            round_rankings: List[List[str]] = []
            for group_index, result in enumerate(results):
                order = result.order
                n = len(order)
                reasons = {r.chunk_id: r.reason for r in result.ranked}
                trace.append(
                    EventKind.STAGE3_GROUP_RANKED,
                    {
                        "round": round_number,
                        "group_index": group_index,
                        "ranking": [
                            {"chunk_id": cid, "rank": rho, "borda": borda_score(rho, n), "reason": reasons[cid]}
                            for rho, cid in enumerate(order, start=1)
                        ],
                    },
                )
                round_rankings.append(order)
            rounds.append(round_rankings)

            aggregate = aggregate_alternatives(rounds, cfg.aggregation)
            current_top = top_k(aggregate, cfg.aggregation, cfg.k, tiebreak)
            last_jaccard = jaccard(previous_top, current_top) if previous_top is not None else None
            trace.append(
                EventKind.STAGE3_ROUND_COMPLETED,
                {"round": round_number, "aggregate": aggregate, "top_k": current_top, "jaccard": last_jaccard},
            )
            if cfg.early_stop and round_number >= cfg.min_rounds and last_jaccard is not None and last_jaccard > cfg.jaccard_threshold:
                stop_reason = "jaccard"
                break
            previous_top = current_top

        trace.append(EventKind.STAGE3_STOPPED, {"round": round_number, "reason": stop_reason, "jaccard": last_jaccard})
        logger.info(f"Stage 3 stopped after {round_number} rounds ({stop_reason}) over {m} candidates in groups of {g}")

        mode = cfg.aggregation
        ordered = sorted(by_id, key=lambda cid: (-ordering_value(mode, aggregate[cid]),) + tiebreak[cid])
        _record_ties(trace, "stage3", ordered, lambda cid: aggregate[cid], ["stage2_relevance_desc", "stage1_score_desc", "chunk_index_asc"])
        return [(by_id[cid], aggregate[cid]) for cid in ordered]

    async def zeroshot_rerank(
        self,
        pool: Sequence[ScoredCandidate],
        store: ChunkStore,
        intent: QueryIntent,
        question: str,
        trace: AuditTrace,
        calls: Optional[Counter] = None,
    ) -> List[Tuple[ScoredCandidate, float]]:
        """Single listwise pass over the raw text of the whole pool, no cards, no bootstrap."""
        calls = calls if calls is not None else Counter()
        if len(pool) < 2:
            return [(c, 1.0) for c in pool]
        items = [
            JudgeItem(chunk_id=c.chunk_id, chunk_index=c.chunk_index, stage1_score=c.stage1_score, text=store.get_chunk(c.chunk_id).text)
            for c in pool
        ]
        calls["zeroshot"] += 1
        try:
            result = await self.judge.rank_group(items, intent, question, template="zeroshot_rank", stage="zeroshot")
        except JudgeError as e:
            trace.append(EventKind.STAGE_FAILED, {"stage": "zeroshot", "error": str(e)})
            raise StageError(f"zero-shot judge failure: {e}", "zeroshot", trace) from e
        order = result.order
        n = len(order)
        trace.append(
            EventKind.ZEROSHOT_RANKED,
            {"ranking": [{"chunk_id": cid, "rank": rho} for rho, cid in enumerate(order, start=1)]},
        )
        by_id = {c.chunk_id: c for c in pool}
        return [(by_id[cid], borda_score(rho, n)) for rho, cid in enumerate(order, start=1)]

    async def run_pipeline(
        self,
        query_id: str,
        question: str,
        intent: QueryIntent,
        store: ChunkStore,
        cards: CardMap,
        index: Optional[LexicalIndex] = None,
        gold_ids: Optional[Iterable[str]] = None,
    ) -> Tuple[RankedList, AuditTrace]:
        """
        Run Stage 1 and the configured reranking variant for one query.

        Args:
            query_id: query identifier
            question: question text
            intent: query intent (relative periods are resolved here)
            store: the filing
            cards: chunk id -> card (None for chunks without a card)
            index: prebuilt lexical index (built from the store when omitted)
            gold_ids: relevant chunk ids; switches Stage-2 retention to gold mode

        Returns:
            Tuple[RankedList, AuditTrace]: the final list and its trace
        """
        variant = self.config.variant
        output_size = self.config.stage3.output_size
        trace = AuditTrace(query_id, self.config.snapshot())
        calls: Counter = Counter()
        trace.append(
            EventKind.RUN_STARTED,
            {"query_id": query_id, "question": question, "doc_id": store.doc_id, "variant": variant, "judge": self.judge.name},
        )

        resolved, anchor = resolve_intent(intent, cards)
        trace.append(
            EventKind.INTENT_RESOLVED,
            {"intent": intent, "anchor": anchor, "resolved_periods": [p.canonical() for p in resolved.periods]},
        )

        index = index or build_index(store, config=self.config.lexical)
        pool = retrieve(index, question, self.config.lexical.cutoff)
        trace.append(
            EventKind.STAGE1_POOL,
            {
                "doc_length": store.length,
                "cutoff": len(pool),
                "candidates": [
                    {"chunk_id": c.chunk_id, "chunk_index": c.chunk_index, "rank": c.stage1_rank, "score": c.stage1_score}
                    for c in pool
                ],
            },
        )
        scores = {c.chunk_id: c.stage1_score for c in pool}
        _record_ties(trace, "stage1", [c.chunk_id for c in pool], lambda cid: scores[cid], ["chunk_index_asc"])
        logger.info(f"[{query_id}] Stage 1 pool: {len(pool)} of {store.length} chunks")

        stage2_relevance: Dict[str, int] = {}
        borda: Dict[str, float] = {}
        if variant == Variant.STAGE1:
            final = [(c.chunk_id, c.chunk_index, c.stage1_score, c.stage1_score) for c in pool]
        elif variant == Variant.ZEROSHOT_RERANK:
            ranked = await self.zeroshot_rerank(pool, store, resolved, question, trace, calls)
            final = [(c.chunk_id, c.chunk_index, c.stage1_score, score) for c, score in ranked]
        else:
            if variant.runs_stage2:
                candidates = await self.stage2_screen(pool, cards, store, resolved, question, trace, gold_ids, calls)
                stage2_relevance = {c.chunk_id: c.relevance for c in candidates}
            else:
                candidates = [
                    Stage2Candidate(
                        chunk_id=c.chunk_id,
                        chunk_index=c.chunk_index,
                        stage1_score=c.stage1_score,
                        stage1_rank=c.stage1_rank,
                        relevance=0,
                    )
                    for c in pool
                ]
            if variant.runs_stage3:
                ranked = await self.stage3_stabilize(candidates, cards, store, resolved, question, trace, calls)
                borda = {c.chunk_id: score for c, score in ranked}
                final = [(c.chunk_id, c.chunk_index, c.stage1_score, score) for c, score in ranked]
            else:
                final = [(c.chunk_id, c.chunk_index, c.stage1_score, float(c.relevance)) for c in candidates]

        final = final[:output_size]
        items = tuple(
            RankedItem(
                chunk_id=cid,
                chunk_index=chunk_index,
                rank=rank,
                score=score,
                stage1_score=stage1_score,
                stage2_relevance=stage2_relevance.get(cid),
                borda=borda.get(cid),
            )
            for rank, (cid, chunk_index, stage1_score, score) in enumerate(final, start=1)
        )
        field_matches = {}
        for item in items:
            card = cards.get(item.chunk_id)
            if card is not None:
                field_matches[item.chunk_id] = match_fields(card, resolved).model_dump(mode="json")

        trace.append(EventKind.JUDGE_CALLS, {"calls": dict(sorted(calls.items())), "total": sum(calls.values())})
        trace.append(
            EventKind.FINAL_RANKING,
            {"items": [item.model_dump(mode="json") for item in items], "field_matches": field_matches},
        )
        ranked_list = RankedList(query_id=query_id, variant=variant.value, items=items)
        return ranked_list, trace

    async def rerank_all(
        self,
        questions: Mapping[str, Tuple[str, QueryIntent]],
        store: ChunkStore,
        cards: CardMap,
        qrels: Optional[Mapping[str, Mapping[str, int]]] = None,
    ) -> List[Tuple[RankedList, AuditTrace]]:
        """
        Run the pipeline for every query of one filing, in query id order.

        Args:
            questions: query id -> (question, intent)
            store: the filing
            cards: chunk id -> card
            qrels: judgments; positive grades become the Stage-2 gold reference

        Returns:
            List[Tuple[RankedList, AuditTrace]]: one result per query
        """
        index = build_index(store, config=self.config.lexical)
        results = []
        for query_id in sorted(questions):
            question, intent = questions[query_id]
            gold_ids = None
            if qrels is not None:
                gold_ids = [cid for cid, grade in qrels.get(query_id, {}).items() if grade > 0]
            results.append(await self.run_pipeline(query_id, question, intent, store, cards, index, gold_ids))
        logger.info(f"Reranked {len(results)} queries with variant {self.config.variant.value}")
        return results


def placeholder_card(chunk_id: str, store: ChunkStore) -> ChunkCard:
    """Empty card standing in for a chunk whose card could not be extracted."""
    chunk = store.get_chunk(chunk_id)
    return ChunkCard(
        chunk_id=chunk_id,
        topic=Topic.OTHER,
        entities=(),
        metrics=(),
        numeric_spans=(),
        period=None,
        section=" > ".join(chunk.section_path),
    )
