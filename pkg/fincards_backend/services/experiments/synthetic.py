"""
Seeded synthetic filings for offline experiments.

Each query asks for one metric of one business segment in fiscal 2023. The
filing holds, per query, five gold chunks that match metric, entity and
period; five distractors that differ from gold only by period; three
boilerplate chunks; and filler prose that matches nothing. In the
lexical-gap variant the gold chunks say the same thing with aliases, so
they share at most one token with the question.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from fincards_backend.services.corpus.service import Chunk, ChunkStore
from fincards_backend.services.eval.trec import Qrels

logger = logging.getLogger(__name__)

GOLD_PER_QUERY = 5
PERIOD_DISTRACTORS_PER_QUERY = 5
BOILERPLATE_PER_QUERY = 3
ALIGNED_PER_QUERY = GOLD_PER_QUERY + PERIOD_DISTRACTORS_PER_QUERY + BOILERPLATE_PER_QUERY
TARGET_YEAR = 2023

# question phrase, alias sharing no token with the question phrase
METRICS: Tuple[Tuple[str, str], ...] = (
    ("revenue", "net sales"),
    ("net income", "profit attributable"),
    ("operating income", "earnings from operations"),
    ("capital expenditures", "capex"),
    ("research and development", "r&d"),
    ("free cash flow", "fcf"),
    ("total debt", "borrowings"),
    ("dividends", "shareholder distributions"),
    ("backlog", "unfilled orders"),
    ("earnings per share", "eps"),
)

ENTITIES: Tuple[str, ...] = (
    "Aerospace", "Healthcare", "Mobility", "Energy", "Software", "Logistics", "Consumer", "Industrial",
    "Defense", "Pharma", "Semiconductor", "Agriculture", "Hospitality", "Telecom", "Insurance",
    "Mining", "Retail", "Biotech", "Automotive", "Packaging",
)

_GOLD_TAILS = (
    "reflecting steady order intake",
    "supported by pricing actions",
    "helped by stronger deliveries",
    "with mix improving through year end",
    "as new programs ramped up",
)

_GAP_TAILS = (
    "on steady order intake",
    "after pricing actions",
    "on stronger deliveries",
    "as mix improved late",
    "as new programs ramped up",
)

_FILLER_SUBJECTS = ("Management", "Our board", "Internal audit", "Procurement staff", "Facilities teams", "Human resources")
_FILLER_VERBS = ("reviewed", "updated", "monitored", "documented", "assessed", "streamlined")
_FILLER_OBJECTS = (
    "supplier contracts", "workplace safety programs", "information security controls", "training curricula",
    "lease arrangements", "travel guidelines", "vendor onboarding steps", "records retention practices",
)
_FILLER_CLOSERS = (
    "across all sites.", "during periodic planning cycles.", "with support from outside advisors.",
    "during routine oversight.", "under existing charters.", "alongside regional leadership.",
)


@dataclass(frozen=True)
class SyntheticQuery:
    query_id: str
    question: str
    metric: str
    entity: str
    gold_ids: Tuple[str, ...]


@dataclass
class SyntheticFiling:
    store: ChunkStore
    queries: List[SyntheticQuery]
    lexical_gap: bool
    seed: int
    roles: Dict[str, str] = field(default_factory=dict)

    @property
    def questions(self) -> Dict[str, str]:
        return {q.query_id: q.question for q in self.queries}

    @property
    def qrels(self) -> Qrels:
        return {q.query_id: {cid: 1 for cid in q.gold_ids} for q in self.queries}


def _money(rng: np.random.Generator) -> str:
    return f"${int(rng.integers(120, 980))} million"


def _pct(rng: np.random.Generator) -> str:
    return f"{int(rng.integers(2, 19))}%"


def gold_text(metric: str, alias: str, entity: str, variant: int, rng: np.random.Generator, lexical_gap: bool) -> str:
    if lexical_gap:
        return f"FY{TARGET_YEAR} {entity} division {alias} reached {_money(rng)}, up {_pct(rng)} {_GAP_TAILS[variant]}."
    return (
        f"The {entity} segment reported {metric} of {_money(rng)} for FY{TARGET_YEAR}, "
        f"up {_pct(rng)}, {_GOLD_TAILS[variant]}."
    )


def period_distractor_text(metric: str, entity: str, year: int, variant: int, rng: np.random.Generator) -> str:
    return (
        f"The {entity} segment reported {metric} of {_money(rng)} for fiscal {year}, "
        f"up {_pct(rng)}, {_GOLD_TAILS[variant]}."
    )


def boilerplate_text(metric: str, entity: str, variant: int) -> str:
    openers = (
        "This report contains forward-looking statements",
        "Statements herein are forward-looking statements",
        "Certain disclosures are forward-looking statements",
    )
    return (
        f"{openers[variant]} about the {entity} segment and its {metric} in fiscal {TARGET_YEAR}; "
        "readers should not place undue reliance on them."
    )


def filler_text(rng: np.random.Generator) -> str:
    return " ".join(
        (
            _FILLER_SUBJECTS[int(rng.integers(len(_FILLER_SUBJECTS)))],
            _FILLER_VERBS[int(rng.integers(len(_FILLER_VERBS)))],
            _FILLER_OBJECTS[int(rng.integers(len(_FILLER_OBJECTS)))],
            _FILLER_CLOSERS[int(rng.integers(len(_FILLER_CLOSERS)))],
        )
    )


def question_text(metric: str, entity: str) -> str:
    return f"What was the {metric} of the {entity} segment in fiscal {TARGET_YEAR}?"


def generate_filing(
    seed: int = 0,
    n_queries: int = 10,
    n_chunks: int = 300,
    lexical_gap: bool = False,
    doc_id: str = "synthetic",
) -> SyntheticFiling:
    """
    Build a synthetic filing with its questions and qrels.

    Args:
        seed: generator seed; the same seed and flags always give the same filing
        n_queries: number of questions (at most the number of metrics)
        n_chunks: filing length; the remainder after aligned chunks is filler
        lexical_gap: rewrite gold chunks to share at most one token with their question
        doc_id: document id and chunk id prefix

    Returns:
        SyntheticFiling: store, queries with gold ids, chunk roles
    """
    if n_queries > len(METRICS):
        raise ValueError(f"at most {len(METRICS)} queries per filing, got {n_queries}")
    if n_chunks < n_queries * ALIGNED_PER_QUERY:
        raise ValueError(f"{n_chunks} chunks cannot hold {n_queries} queries of {ALIGNED_PER_QUERY} aligned chunks")

    rng = np.random.default_rng(seed)
    metric_order = rng.permutation(len(METRICS))[:n_queries]
    entity_order = rng.permutation(len(ENTITIES))[:n_queries]

    # (role, query number, text) in generation order, placed by a seeded permutation
    drafts: List[Tuple[str, int, str]] = []
    plans = []
    for q, (mi, ei) in enumerate(zip(metric_order, entity_order)):
        metric, alias = METRICS[int(mi)]
        entity = ENTITIES[int(ei)]
        plans.append((metric, entity))
        for v in range(GOLD_PER_QUERY):
            drafts.append(("gold", q, gold_text(metric, alias, entity, v, rng, lexical_gap)))
        for v in range(PERIOD_DISTRACTORS_PER_QUERY):
            year = TARGET_YEAR - 1 - (v % 2)
            drafts.append(("period_distractor", q, period_distractor_text(metric, entity, year, v, rng)))
        for v in range(BOILERPLATE_PER_QUERY):
            drafts.append(("boilerplate", q, boilerplate_text(metric, entity, v)))
    while len(drafts) < n_chunks:
        drafts.append(("filler", -1, filler_text(rng)))

    positions = rng.permutation(n_chunks)
    placed: List[Tuple[str, int, str]] = [("", -1, "")] * n_chunks
    for draft, position in zip(drafts, positions):
        placed[int(position)] = draft

    chunks: List[Chunk] = []
    roles: Dict[str, str] = {}
    gold: Dict[int, List[str]] = {q: [] for q in range(n_queries)}
    for index, (role, q, text) in enumerate(placed):
        chunk_id = f"{doc_id}#{index}"
        section = ("Item 1A. Risk Factors",) if role == "boilerplate" else ("Item 7. Management Discussion",)
        chunks.append(Chunk(chunk_id=chunk_id, doc_id=doc_id, chunk_index=index, section_path=section, text=text))
        roles[chunk_id] = role
        if role == "gold":
            gold[q].append(chunk_id)

    queries = [
        SyntheticQuery(
            query_id=f"q{q + 1:02d}",
            question=question_text(metric, entity),
            metric=metric,
            entity=entity,
            gold_ids=tuple(gold[q]),
        )
        for q, (metric, entity) in enumerate(plans)
    ]
    logger.debug(f"Generated synthetic filing {doc_id} (seed {seed}, gap={lexical_gap}) with {n_chunks} chunks")
    return SyntheticFiling(store=ChunkStore(doc_id, chunks), queries=queries, lexical_gap=lexical_gap, seed=seed, roles=roles)


def filing_text(filing: SyntheticFiling) -> str:
    """The filing as blank-line separated paragraphs."""
    return "\n\n".join(chunk.text for chunk in filing.store) + "\n"


def roles_of(filing: SyntheticFiling, chunk_ids: Sequence[str]) -> List[str]:
    return [filing.roles[cid] for cid in chunk_ids]
