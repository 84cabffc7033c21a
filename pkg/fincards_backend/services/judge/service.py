import asyncio
import logging
from collections import Counter
from typing import Dict, List, Mapping, Optional, Sequence

import httpx

from fincards_backend.config.config import JudgeBackend, JudgeConfig, OracleWeights, get_settings
from fincards_backend.exceptions import JudgeError, SchemaValidationError
from fincards_backend.services.corpus.service import ChunkStore
from fincards_backend.services.judge.models import CoverageQuotas, JudgeItem, RankingResult, SelectionResult
from fincards_backend.services.judge.providers.oracle_provider import NoisyOracleProvider, OracleProvider
from fincards_backend.services.judge.providers.remote_provider import RemoteJudgeProvider
from fincards_backend.services.schema.io import CardEntry, IntentEntry
from fincards_backend.services.schema.models import QueryIntent

logger = logging.getLogger(__name__)


class JudgeService:
    """
    Single entry point for group selection, listwise ranking and extraction.

    Wraps one provider (oracle, noisy oracle or remote) and counts judge calls
    per stage label so runs can be checked against the one-call-per-group
    cost model.
    """

    def __init__(
        self,
        config: Optional[JudgeConfig] = None,
        weights: Optional[OracleWeights] = None,
        api_key: Optional[str] = None,
        client: Optional[httpx.AsyncClient] = None,
        provider=None,
    ):
        """
        Initialize the judge.

        Args:
            config: judge configuration (backend, endpoint, limits)
            weights: oracle field weights
            api_key: remote judge credential; read from settings when omitted
            client: optional shared httpx client for the remote backend
            provider: explicit provider, overriding the configured backend
        """
        self.config = config or JudgeConfig()
        self.calls: Counter = Counter()

        if provider is not None:
            self.provider = provider
        elif self.config.backend == JudgeBackend.REMOTE:
            key = api_key if api_key is not None else get_settings().judge_api_key
            self.provider = RemoteJudgeProvider(self.config, api_key=key, client=client)
        elif self.config.backend == JudgeBackend.NOISY_ORACLE:
            self.provider = NoisyOracleProvider(weights, noise_scale=self.config.noise_scale, seed=self.config.noise_seed)
        else:
            self.provider = OracleProvider(weights)
        logger.debug(f"Judge backend: {self.provider.name}")

    @property
    def name(self) -> str:
        return self.provider.name

    @property
    def deterministic(self) -> bool:
        return self.provider.name in ("oracle", "noisy_oracle")

    def reset_calls(self) -> None:
        self.calls.clear()

    async def select_group(
        self,
        items: Sequence[JudgeItem],
        intent: QueryIntent,
        question: str,
        k_min: int,
        k_max: int,
        quotas: Optional[CoverageQuotas] = None,
        stage: str = "stage2",
    ) -> SelectionResult:
        self.calls[stage] += 1
        return await self.provider.select_group(items, intent, question, k_min, k_max, quotas)

    async def rank_group(
        self,
        items: Sequence[JudgeItem],
        intent: QueryIntent,
        question: str,
        template: str = "stage3_rank",
        stage: str = "stage3",
    ) -> RankingResult:
        if len(items) < 2:
            raise ValueError("rank_group needs at least 2 items")
        self.calls[stage] += 1
        return await self.provider.rank_group(items, intent, question, template)

    async def extract_cards(self, store: ChunkStore) -> List[CardEntry]:
        """
        Build a card for every chunk of a filing.

        A chunk whose card cannot be produced gets a null-card entry carrying
        the error instead of failing the whole filing.
        """
        semaphore = asyncio.Semaphore(self.config.max_in_flight)

        async def one(chunk) -> CardEntry:
            async with semaphore:
                try:
                    card = await self.provider.extract_card(chunk)
                    return CardEntry(chunk_id=chunk.chunk_id, card=card)
                except (JudgeError, SchemaValidationError) as e:
                    logger.warning(f"Card extraction failed for {chunk.chunk_id}: {e}")
                    return CardEntry(chunk_id=chunk.chunk_id, card=None, error=str(e))

        self.calls["extract_card"] += store.length
        return list(await asyncio.gather(*(one(chunk) for chunk in store)))

    async def extract_intents(self, questions: Mapping[str, str]) -> Dict[str, IntentEntry]:
        """Map every question to an intent; failed questions are logged and left out."""
        entries: Dict[str, IntentEntry] = {}
        for query_id in sorted(questions):
            question = questions[query_id]
            self.calls["extract_intent"] += 1
            try:
                intent = await self.provider.extract_intent(question)
            except (JudgeError, SchemaValidationError) as e:
                logger.warning(f"Intent extraction failed for query {query_id}: {e}")
                continue
            entries[query_id] = IntentEntry(query_id=query_id, question=question, intent=intent)
        return entries
