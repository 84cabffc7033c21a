"""
Prompt templates for card extraction, intent mapping, Stage-2 selection and
Stage-3 ranking, rendered as chat message lists.

Rendering is deterministic: payload objects are serialized as JSON with
sorted keys, so identical payloads give byte-identical prompts.
"""

import json
from typing import Any, Dict, List, Mapping, Sequence

from fincards_backend.exceptions import PromptPayloadError
from fincards_backend.services.judge.models import JudgeItem

SYSTEM_ANALYST = "Financial document analysis expert."
SYSTEM_INTENT = "Financial QA intent extractor for questions over SEC filings."

TABLE_HANDLING_WARNING = (
    "Table-based chunks require additional verification of structure, headers, "
    "temporal coverage, and metric relevance. Sequential or continuous tables must "
    "be interpreted cautiously and should not be selected solely due to the "
    "presence of tabular data."
)

_CARD_EXTRACT = """Task: Given a document chunk extracted from a 10-K filing, generate a structured Chunk Card that specifies under what conditions the chunk can serve as evidence for reranking.

Chunk:
  chunk_id: {chunk_id}
  chunk_index: {chunk_index}
  section_path: {section_path}
  text:
{text}

Output Format (JSON only), fields:
  chunk_id, topic (Revenue, Costs/Expenses, Profitability, Liquidity, Guidance/Outlook, Risk, Governance, Other),
  entities, metrics, numeric_spans (copied verbatim from the text), period (FYyyyy, yyyy-Qn, yyyy-mm, [yyyy-mm, yyyy-mm] or null),
  section, derived_triple, evidence_spans (field, start, end character offsets),
  aux: claim_role (primary_evidence, supporting_context, definition, caveat, boilerplate, structural_heading),
       evidence_type (table_numeric, narrative_numeric, qualitative_explanation, policy_text, guidance, none),
       answerability_profile (single_fact, comparison, trend, aggregation, attribution),
       temporal_anchor (quality and normalized span), scope_signature (entity_scope, geography, product),
       measurement_basis (GAAP, non-GAAP, adjusted, reported, unknown),
       verifiability (numeric_claims, table_present, comparison_cues),
       risk_signals (boilerplate_likelihood, limitations), semantic_sketch (one-sentence claim summary).

Constraints:
- Output must be valid JSON.
- Structural headings have zero evidence capability.
- Temporal fields use YYYY-MM or null.
- Use unknown if scope or measurement basis is uncertain."""

_INTENT_EXTRACT = """Task: Given a user question, produce a structured Query Intent that captures the information need of the question.

Question: {question}

Output Format (JSON only), fields:
  topic (e.g., Revenue, Costs/Expenses, Profitability, Liquidity, Guidance/Outlook, Risk, Governance, Other),
  entities (explicitly mentioned companies or segments, if any),
  metrics (requested financial metrics),
  temporal (periods: normalized periods, granularity: year, quarter, month, interval or none),
  numeric_required (true / false),
  relation (lookup, trend, comparison, explanation, definition, policy),
  keywords (salient lexical cues)

Constraints:
- Output must be valid JSON.
- If uncertain, use conservative defaults (e.g., Other, none, or []).
- Temporal expressions should prefer fiscal normalization (e.g., FY2023, latest_quarter)."""

_CRITERIA = """Criteria:
- Metric matching between the question and chunk content
- Temporal alignment with the question requirements
- Scope consistency (entity, segment, or region)
- Content type suitability (table vs. narrative)
- Overall relevance inferred from card summaries and signals"""

_STAGE2_SELECT = """Task: Given a user question and a group of candidate document chunks, select the most relevant evidence chunks to answer the question. Selection must be based exclusively on the provided Chunk Cards.

Question: {question}

Select between {k_min} and {k_max} chunks.

Coverage quotas (hard constraints):
{quotas}

""" + _CRITERIA + """

Table Handling Warning:
""" + TABLE_HANDLING_WARNING + """

Candidates:
{items}

Output Format (JSON only):
{{"selected_chunks": [{{"chunk_id": "...", "selection_reasons": ["..."], "relevance_score": 0}}]}}

Constraints:
- Selection must satisfy mandatory coverage quotas, if provided.
- Chunks are evaluated purely on card information.
- Results are ordered by descending relevance."""

_STAGE3_RANK = """Task: Given a user question and a group of candidate evidence chunks, rank all chunks from most relevant to least relevant for answering the question. Ranking must rely exclusively on the provided Chunk Cards.

Question: {question}

""" + _CRITERIA + """

Table Handling Warning:
""" + TABLE_HANDLING_WARNING + """

Critical Constraints:
- Do not access the original chunk text.
- Do not perform numerical calculations.
- Do not assign absolute relevance scores.
- Rank all chunks in the group using relative ordering only.

Candidates:
{items}

Output Format (JSON only):
{{"ranked_chunks": [{{"chunk_id": "...", "rank": 1, "reason": "..."}}]}}"""

_ZEROSHOT_RANK = """Task: Given a user question and a group of candidate passages from a 10-K filing, rank all passages from most relevant to least relevant for answering the question.

Question: {question}

Critical Constraints:
- Do not perform numerical calculations.
- Do not assign absolute relevance scores.
- Rank all passages using relative ordering only.

Passages:
{items}

Output Format (JSON only):
{{"ranked_chunks": [{{"chunk_id": "...", "rank": 1, "reason": "..."}}]}}"""

TEMPLATES: Dict[str, Dict[str, Any]] = {
    "card_extract": {
        "system": SYSTEM_ANALYST,
        "user": _CARD_EXTRACT,
        "fields": ("chunk_id", "chunk_index", "section_path", "text"),
    },
    "intent_extract": {
        "system": SYSTEM_INTENT,
        "user": _INTENT_EXTRACT,
        "fields": ("question",),
    },
    "stage2_select": {
        "system": SYSTEM_ANALYST,
        "user": _STAGE2_SELECT,
        "fields": ("question", "items", "k_min", "k_max", "quotas"),
    },
    "stage3_rank": {
        "system": SYSTEM_ANALYST,
        "user": _STAGE3_RANK,
        "fields": ("question", "items"),
    },
    "zeroshot_rank": {
        "system": SYSTEM_ANALYST,
        "user": _ZEROSHOT_RANK,
        "fields": ("question", "items"),
    },
}


def item_payload(item: JudgeItem) -> Dict[str, Any]:
    """Card projection of a candidate, or its text for raw-text judging."""
    if item.card is not None:
        card = item.card.model_dump(mode="json", exclude={"evidence_spans"})
        return {"chunk_id": item.chunk_id, "card": card}
    return {"chunk_id": item.chunk_id, "text": item.text}


def _format_items(items: Sequence[Any]) -> str:
    rendered = []
    for i, item in enumerate(items, start=1):
        if isinstance(item, JudgeItem):
            item = item_payload(item)
        rendered.append(f"[{i}] " + json.dumps(item, sort_keys=True, ensure_ascii=False))
    return "\n".join(rendered)


def _format_value(name: str, value: Any) -> str:
    if name == "items":
        return _format_items(value)
    if name == "quotas":
        return "\n".join(f"- {q}" for q in value) if value else "- none"
    if name == "section_path":
        return " > ".join(value) if value else "(none)"
    return str(value)


def render_prompt(template: str, payload: Mapping[str, Any]) -> List[Dict[str, str]]:
    """
    Render a template into chat messages.

    Args:
        template: one of card_extract, intent_extract, stage2_select, stage3_rank, zeroshot_rank
        payload: values for every field the template names

    Returns:
        List[Dict[str, str]]: system and user messages
    """
    if template not in TEMPLATES:
        raise ValueError(f"unknown prompt template {template!r}")
    entry = TEMPLATES[template]
    missing = [name for name in entry["fields"] if name not in payload]
    if missing:
        raise PromptPayloadError(f"{template} payload is missing: {', '.join(missing)}")
    values = {name: _format_value(name, payload[name]) for name in entry["fields"]}
    return [
        {"role": "system", "content": entry["system"]},
        {"role": "user", "content": entry["user"].format(**values)},
    ]


def corrective_message(error: str) -> Dict[str, str]:
    return {
        "role": "user",
        "content": f"Your previous output was rejected: {error}. Reply again with valid JSON only, following the output format exactly.",
    }
