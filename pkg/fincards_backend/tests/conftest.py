"""
Shared fixtures for the FinCARDS test suite.

Synthetic filings are generated once per session; every other fixture is
cheap and rebuilt per test.
"""

from typing import Dict, Tuple

import pytest

from fincards_backend.config.config import PipelineConfig
from fincards_backend.services.corpus.service import Chunk, ChunkStore
from fincards_backend.services.experiments.synthetic import SyntheticFiling, generate_filing
from fincards_backend.services.judge.providers.oracle_provider import extract_card, extract_intent
from fincards_backend.services.judge.service import JudgeService
from fincards_backend.services.schema.models import ChunkCard, QueryIntent

TEST_DOC_ID = "acme-10k-2023"

TEST_PARAGRAPHS = [
    ("Item 7. Management Discussion",),
    ("Item 7. Management Discussion",),
    ("Item 7. Management Discussion",),
    ("Item 1A. Risk Factors",),
    ("Item 7. Management Discussion",),
]

TEST_TEXTS = [
    "The Cloud segment reported revenue of $3.2 billion in fiscal 2023, up 12% from the prior year.",
    "The Cloud segment reported revenue of $2.9 billion in fiscal 2022.",
    "Management reviewed supplier contracts across all sites.",
    "This report contains forward-looking statements about revenue; readers should not place undue reliance on them.",
    "Operating expenses increased primarily due to higher headcount in the Devices segment during fiscal 2023.",
]


@pytest.fixture
def toy_store() -> ChunkStore:
    """Create a five-chunk filing with one gold revenue chunk."""
    chunks = [
        Chunk(
            chunk_id=f"{TEST_DOC_ID}#{i}",
            doc_id=TEST_DOC_ID,
            chunk_index=i,
            section_path=path,
            text=text,
        )
        for i, (path, text) in enumerate(zip(TEST_PARAGRAPHS, TEST_TEXTS))
    ]
    return ChunkStore(TEST_DOC_ID, chunks)


@pytest.fixture
def toy_cards(toy_store) -> Dict[str, ChunkCard]:
    """Oracle cards for the toy filing."""
    return {chunk.chunk_id: extract_card(chunk) for chunk in toy_store}


@pytest.fixture
def revenue_intent() -> QueryIntent:
    """Intent of the toy revenue question."""
    return extract_intent("What was the revenue of the Cloud segment in fiscal 2023?")


@pytest.fixture
def oracle_judge() -> JudgeService:
    """Create the deterministic oracle judge."""
    return JudgeService()


@pytest.fixture
def pipeline_config() -> PipelineConfig:
    """Default pipeline configuration."""
    return PipelineConfig()


@pytest.fixture(scope="session")
def synthetic_filing() -> SyntheticFiling:
    """300-chunk synthetic filing with 10 queries."""
    return generate_filing(seed=0, n_queries=10, n_chunks=300)


@pytest.fixture(scope="session")
def gap_filing() -> SyntheticFiling:
    """Lexical-gap variant of the synthetic filing."""
    return generate_filing(seed=0, n_queries=10, n_chunks=300, lexical_gap=True, doc_id="synthetic-gap")


def cards_for(filing: SyntheticFiling) -> Dict[str, ChunkCard]:
    return {chunk.chunk_id: extract_card(chunk) for chunk in filing.store}


def questions_for(filing: SyntheticFiling) -> Dict[str, Tuple[str, QueryIntent]]:
    return {q.query_id: (q.question, extract_intent(q.question)) for q in filing.queries}


@pytest.fixture(scope="session")
def synthetic_cards(synthetic_filing) -> Dict[str, ChunkCard]:
    return cards_for(synthetic_filing)


@pytest.fixture(scope="session")
def synthetic_questions(synthetic_filing) -> Dict[str, Tuple[str, QueryIntent]]:
    return questions_for(synthetic_filing)
