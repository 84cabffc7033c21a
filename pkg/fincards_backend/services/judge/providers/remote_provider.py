import asyncio
import json
import logging
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import httpx
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from tenacity import AsyncRetrying, RetryError, retry_if_exception_type, stop_after_attempt, wait_exponential

from fincards_backend.config.config import JudgeConfig
from fincards_backend.exceptions import JudgeResponseError, JudgeTransportError, SchemaValidationError
from fincards_backend.services.corpus.service import Chunk
from fincards_backend.services.judge.models import (
    CoverageQuotas,
    JudgeItem,
    RankedChunk,
    RankingResult,
    SelectedChunk,
    SelectionResult,
    check_ranking,
    check_selection,
)
from fincards_backend.services.judge.prompts import corrective_message, render_prompt
from fincards_backend.services.schema.io import validate_card, validate_intent
from fincards_backend.services.schema.models import ChunkCard, QueryIntent

logger = logging.getLogger(__name__)

T = TypeVar("T")


class _SelectionWireItem(BaseModel):
    model_config = ConfigDict(extra="forbid")

    chunk_id: str
    selection_reasons: List[str] = Field(default_factory=list)
    relevance_score: int = Field(ge=0, le=100)


class _SelectionWire(BaseModel):
    model_config = ConfigDict(extra="forbid")

    selected_chunks: List[_SelectionWireItem]


class _RankingWireItem(BaseModel):
    model_config = ConfigDict(extra="forbid")

    chunk_id: str
    rank: int = Field(ge=1)
    reason: str = ""


class _RankingWire(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ranked_chunks: List[_RankingWireItem]


class _ServerError(Exception):
    """Retryable HTTP status (5xx or 429)."""


class RemoteJudgeProvider:
    """
    Chat-model judge behind an OpenAI-compatible chat completions endpoint.

    Requests always use temperature 0 and a JSON-schema response format.
    Transport failures and 5xx replies are retried; a schema-invalid reply
    gets one corrective re-prompt before the call fails.
    """

    def __init__(self, config: JudgeConfig, api_key: Optional[str] = None, client: Optional[httpx.AsyncClient] = None):
        self.name = "remote"
        self.endpoint = config.endpoint
        self.model = config.model
        self.timeout = config.timeout
        self.max_retries = config.max_retries
        self.api_key = api_key
        self._client = client
        self._semaphore = asyncio.Semaphore(config.max_in_flight)
        self.reprompts = 0
        self.retry_wait = 0.5

        if not api_key:
            logger.warning("Remote judge API key not provided; requests are sent without credentials.")

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    async def _send(self, client: httpx.AsyncClient, body: Dict[str, Any]) -> Dict[str, Any]:
        response = await client.post(self.endpoint, json=body, headers=self._headers(), timeout=self.timeout)
        if response.status_code >= 500 or response.status_code == 429:
            raise _ServerError(f"judge endpoint returned {response.status_code}")
        response.raise_for_status()
        return response.json()

    async def _post(self, messages: List[Dict[str, str]], schema_name: str, schema: Dict[str, Any]) -> str:
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": 0,
            "response_format": {
                "type": "json_schema",
                "json_schema": {"name": schema_name, "schema": schema, "strict": True},
            },
        }
        async with self._semaphore:
            try:
                async for attempt in AsyncRetrying(
                    stop=stop_after_attempt(self.max_retries + 1),
                    wait=wait_exponential(multiplier=self.retry_wait, max=8),
                    retry=retry_if_exception_type((httpx.TransportError, _ServerError)),
                    reraise=False,
                ):
                    with attempt:
                        if self._client is not None:
                            data = await self._send(self._client, body)
                        else:
                            async with httpx.AsyncClient() as client:
                                data = await self._send(client, body)
            except RetryError as e:
                raise JudgeTransportError(f"judge endpoint unreachable after {self.max_retries + 1} attempts: {e.last_attempt.exception()}") from e
            except httpx.HTTPStatusError as e:
                raise JudgeTransportError(f"judge endpoint rejected the request: {e.response.status_code}") from e
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise JudgeResponseError("judge response has no choices[0].message.content") from e

    async def _ask(
        self,
        messages: List[Dict[str, str]],
        schema_name: str,
        schema: Dict[str, Any],
        parse: Callable[[Any], T],
    ) -> Tuple[T, int]:
        """Send, parse, and re-prompt once on invalid output. Returns (result, calls made)."""
        content = await self._post(messages, schema_name, schema)
        try:
            return parse(json.loads(content)), 1
        except (ValueError, ValidationError, SchemaValidationError) as first_error:
            logger.warning(f"Judge returned invalid {schema_name} output, re-prompting: {first_error}")
            self.reprompts += 1
            retry_messages = messages + [{"role": "assistant", "content": content}, corrective_message(str(first_error))]
            content = await self._post(retry_messages, schema_name, schema)
            try:
                return parse(json.loads(content)), 2
            except (ValueError, ValidationError, SchemaValidationError) as e:
                raise JudgeResponseError(f"judge {schema_name} output invalid after re-prompt: {e}") from e

    async def select_group(
        self,
        items: Sequence[JudgeItem],
        intent: QueryIntent,
        question: str,
        k_min: int,
        k_max: int,
        quotas: Optional[CoverageQuotas] = None,
    ) -> SelectionResult:
        quotas = quotas or CoverageQuotas()
        n = len(items)
        k_min, k_max = min(k_min, n), min(k_max, n)
        group_ids = [item.chunk_id for item in items]
        cards = {item.chunk_id: item.card for item in items}
        reachable = {name for name, satisfies in quotas.checks() if any(satisfies(card) for card in cards.values())}
        messages = render_prompt(
            "stage2_select",
            {"question": question, "items": list(items), "k_min": k_min, "k_max": k_max, "quotas": quotas.describe()},
        )

        def parse(raw: Any) -> SelectionResult:
            wire = _SelectionWire.model_validate(raw)
            result = SelectionResult(
                selected=tuple(
                    SelectedChunk(chunk_id=s.chunk_id, reasons=tuple(s.selection_reasons), relevance=s.relevance_score)
                    for s in wire.selected_chunks
                )
            )
            check_selection(result, group_ids, k_min, k_max)
            missing = quotas.missing([cards[cid] for cid in result.chunk_ids])
            ignored = [name for name in missing if name in reachable]
            if ignored:
                raise ValueError(f"selection misses the {', '.join(ignored)} quota that the group can meet")
            if missing:
                logger.warning(f"Coverage quota cannot be met within group of {n}")
                return result.model_copy(update={"quota_unmet": True})
            return result

        result, _ = await self._ask(messages, "stage2_selection", _SelectionWire.model_json_schema(), parse)
        return result

    async def rank_group(
        self,
        items: Sequence[JudgeItem],
        intent: QueryIntent,
        question: str,
        template: str = "stage3_rank",
    ) -> RankingResult:
        group_ids = [item.chunk_id for item in items]
        messages = render_prompt(template, {"question": question, "items": list(items)})

        def parse(raw: Any) -> RankingResult:
            wire = _RankingWire.model_validate(raw)
            result = RankingResult(
                ranked=tuple(RankedChunk(chunk_id=r.chunk_id, rank=r.rank, reason=r.reason) for r in wire.ranked_chunks)
            )
            check_ranking(result, group_ids)
            return result

        result, _ = await self._ask(messages, "listwise_ranking", _RankingWire.model_json_schema(), parse)
        return result

    async def extract_card(self, chunk: Chunk) -> ChunkCard:
        messages = render_prompt(
            "card_extract",
            {
                "chunk_id": chunk.chunk_id,
                "chunk_index": chunk.chunk_index,
                "section_path": list(chunk.section_path),
                "text": chunk.text,
            },
        )
        card, _ = await self._ask(messages, "chunk_card", ChunkCard.model_json_schema(), lambda raw: validate_card(raw, chunk))
        return card

    async def extract_intent(self, question: str) -> QueryIntent:
        messages = render_prompt("intent_extract", {"question": question})
        intent, _ = await self._ask(messages, "query_intent", QueryIntent.model_json_schema(), validate_intent)
        return intent
