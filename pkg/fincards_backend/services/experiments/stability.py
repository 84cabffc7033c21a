"""
Stage-3 stability experiments with a seeded noisy judge.

Stage 2 runs once per query with the exact oracle; the Stage-3 bootstrap
then runs repeatedly with different base seeds under each setting, and the
spread of each candidate's final position across those replicates is the
stability measure.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from fincards_backend.config.config import JudgeBackend, JudgeConfig, PipelineConfig
from fincards_backend.services.audit.service import AuditTrace
from fincards_backend.services.corpus.service import ChunkStore
from fincards_backend.services.eval.service import rank_variance, replicate_rank_variance
from fincards_backend.services.experiments.synthetic import SyntheticFiling
from fincards_backend.services.judge.providers.oracle_provider import extract_card, extract_intent
from fincards_backend.services.judge.service import JudgeService
from fincards_backend.services.lexical.service import build_index, retrieve
from fincards_backend.services.schema.models import ChunkCard, QueryIntent
from fincards_backend.services.tournament.models.results import Stage2Candidate
from fincards_backend.services.tournament.service import TournamentService, resolve_intent

logger = logging.getLogger(__name__)

REPLICATE_SEED_STRIDE = 100


class StabilitySetting(BaseModel):
    name: str
    rounds: int
    regroup: bool = True


DEFAULT_SETTINGS: Tuple[StabilitySetting, ...] = (
    StabilitySetting(name="single_round", rounds=1),
    StabilitySetting(name="bootstrap", rounds=5),
    StabilitySetting(name="fixed_grouping", rounds=5, regroup=False),
)


class StabilityResult(BaseModel):
    setting: StabilitySetting
    replicate_variance: float
    within_run_variance: Optional[float] = None
    per_query: Dict[str, float] = {}


async def _stage2_candidates(
    filing: SyntheticFiling, base: PipelineConfig
) -> List[Tuple[str, str, QueryIntent, Dict[str, ChunkCard], ChunkStore, List[Stage2Candidate]]]:
    cards = {chunk.chunk_id: extract_card(chunk) for chunk in filing.store}
    index = build_index(filing.store, config=base.lexical)
    tournament = TournamentService(JudgeService(base.judge, base.oracle_weights), base)
    prepared = []
    for query in filing.queries:
        intent, _ = resolve_intent(extract_intent(query.question), cards)
        pool = retrieve(index, query.question, base.lexical.cutoff)
        trace = AuditTrace(query.query_id)
        candidates = await tournament.stage2_screen(pool, cards, filing.store, intent, query.question, trace, query.gold_ids)
        prepared.append((f"{filing.store.doc_id}-{filing.seed}/{query.query_id}", query.question, intent, cards, filing.store, candidates))
    return prepared


async def run_stability(
    filings: Sequence[SyntheticFiling],
    settings: Sequence[StabilitySetting] = DEFAULT_SETTINGS,
    replicates: int = 5,
    noise_scale: float = 1.5,
    noise_seed: int = 0,
    base: Optional[PipelineConfig] = None,
) -> Dict[str, StabilityResult]:
    """
    Compare Stage-3 stability across bootstrap settings.

    Args:
        filings: synthetic filings supplying the queries
        settings: bootstrap settings to compare (rounds, regrouping)
        replicates: Stage-3 runs per query and setting, base seeds 0, 100, 200, ...
        noise_scale: standard deviation of the judge noise
        noise_seed: judge noise seed
        base: configuration for Stage 1 and Stage 2

    Returns:
        Dict[str, StabilityResult]: results keyed by setting name
    """
    base = base or PipelineConfig()
    prepared = []
    for filing in filings:
        prepared.extend(await _stage2_candidates(filing, base))

    noisy = JudgeService(JudgeConfig(backend=JudgeBackend.NOISY_ORACLE, noise_scale=noise_scale, noise_seed=noise_seed), base.oracle_weights)
    results: Dict[str, StabilityResult] = {}
    for setting in settings:
        per_query: Dict[str, float] = {}
        within: List[float] = []
        for key, question, intent, cards, store, candidates in prepared:
            orders = []
            for replicate in range(replicates):
                stage3 = base.stage3.model_copy(
                    update={
                        "max_rounds": setting.rounds,
                        "early_stop": False,
                        "regroup": setting.regroup,
                        "base_seed": replicate * REPLICATE_SEED_STRIDE,
                    }
                )
                config = base.model_copy(update={"stage3": stage3})
                trace = AuditTrace(key)
                ranked = await TournamentService(noisy, config).stage3_stabilize(
                    candidates, cards, store, intent, question, trace
                )
                orders.append([c.chunk_id for c, _ in ranked])
                variance = rank_variance(trace)
                if variance is not None:
                    within.append(variance)
            value = replicate_rank_variance(orders)
            if value is not None:
                per_query[key] = value
        result = StabilityResult(
            setting=setting,
            replicate_variance=float(np.mean(list(per_query.values()))) if per_query else 0.0,
            within_run_variance=float(np.mean(within)) if within else None,
            per_query=per_query,
        )
        logger.info(f"Stability {setting.name}: replicate variance {result.replicate_variance:.4f}")
        results[setting.name] = result
    return results
