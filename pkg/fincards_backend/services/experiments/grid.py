"""
Experiment grid: every system variant, and optionally every card mask, over
one configuration, scored into one comparison table.
"""

import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import pandas as pd

from fincards_backend.config.config import CardMask, PipelineConfig, Variant
from fincards_backend.services.audit.service import AuditTrace
from fincards_backend.services.corpus.service import ChunkStore
from fincards_backend.services.eval.service import MetricReport, comparison_table, evaluate_run
from fincards_backend.services.eval.trec import Qrels, run_from_lists, write_run
from fincards_backend.services.judge.service import JudgeService
from fincards_backend.services.schema.models import ChunkCard, QueryIntent
from fincards_backend.services.tournament.models.results import RankedList
from fincards_backend.services.tournament.service import TournamentService

logger = logging.getLogger(__name__)

CARD_MASKS: Dict[str, CardMask] = {
    "w/o temporal": CardMask(drop_temporal=True),
    "w/o metrics": CardMask(drop_metrics=True),
    "w/o tables": CardMask(drop_tables=True),
    "w/o scope": CardMask(drop_scope=True),
    "summary only": CardMask(summary_only=True),
    "raw chunks": CardMask(raw_chunks=True),
}


def grid_configs(base: PipelineConfig, include_masks: bool = False) -> List[Tuple[str, PipelineConfig]]:
    """Named configurations of the grid, all sharing the base Stage-1/2/3 budgets."""
    configs = [(variant.value, base.model_copy(update={"variant": variant, "card_mask": CardMask()})) for variant in Variant]
    if include_masks:
        for name, mask in CARD_MASKS.items():
            configs.append((f"full {name}", base.model_copy(update={"variant": Variant.FULL, "card_mask": mask})))
    return configs


async def run_grid(
    store: ChunkStore,
    cards: Mapping[str, Optional[ChunkCard]],
    questions: Mapping[str, Tuple[str, QueryIntent]],
    qrels: Qrels,
    base: PipelineConfig,
    include_masks: bool = False,
    out_dir: Optional[Path] = None,
    judge: Optional[JudgeService] = None,
) -> Tuple[List[MetricReport], pd.DataFrame]:
    """
    Run and score every grid configuration.

    Args:
        store: the filing
        cards: chunk id -> card
        questions: query id -> (question, intent)
        qrels: judgments (also the Stage-2 gold retention reference)
        base: shared configuration
        include_masks: add the full pipeline under every card mask
        out_dir: when given, one run file per configuration is written here
        judge: judge to use; built from the base configuration when omitted

    Returns:
        Tuple[List[MetricReport], pd.DataFrame]: reports and the comparison table
    """
    judge = judge or JudgeService(base.judge, base.oracle_weights)
    reports: List[MetricReport] = []
    for name, config in grid_configs(base, include_masks):
        results: List[Tuple[RankedList, AuditTrace]] = await TournamentService(judge, config).rerank_all(questions, store, cards, qrels)
        lists = [ranked for ranked, _ in results]
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            write_run(lists, Path(out_dir) / f"{name.replace(' ', '_').replace('/', '')}.run", tag=name.replace(" ", "_"))
        report = evaluate_run(run_from_lists(lists), qrels, run_name=name, traces=[trace for _, trace in results])
        logger.info(f"Grid {name}: nDCG@10 {report.mean('ndcg'):.2f}")
        reports.append(report)
    return reports, comparison_table(reports)
