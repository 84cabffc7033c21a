"""
Deterministic rule-based judge.

Scores a card against an intent with fixed field weights, selects and ranks
groups from those scores, and extracts cards and intents with regex rules.
It stands in for the chat-model judge in tests and offline experiments.
"""

import logging
import re
import zlib
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from fincards_backend.config.config import OracleWeights
from fincards_backend.services.corpus.service import Chunk
from fincards_backend.services.judge.models import (
    EXPLANATORY_TYPES,
    CoverageQuotas,
    JudgeItem,
    RankedChunk,
    RankingResult,
    SelectedChunk,
    SelectionResult,
    is_explanatory,
    satisfies_temporal_table,
)
from fincards_backend.services.lexical.service import tokenize
from fincards_backend.services.schema.alignment import match_fields
from fincards_backend.services.schema.models import (
    AnswerabilityProfile,
    CardAux,
    ChunkCard,
    ClaimRole,
    DerivedTriple,
    EvidenceSpan,
    EvidenceType,
    Granularity,
    MeasurementBasis,
    QueryIntent,
    Relation,
    RiskSignals,
    ScopeSignature,
    TemporalAnchor,
    TemporalQuality,
    TemporalScope,
    Topic,
    Verifiability,
    normalize_term,
)
from fincards_backend.services.schema.periods import (
    PeriodKind,
    PeriodValue,
    fiscal_quarter,
    fiscal_year,
    month,
    relative,
)

logger = logging.getLogger(__name__)

# canonical metric -> surface forms
METRIC_LEXICON: Dict[str, Tuple[str, ...]] = {
    "revenue": ("revenue", "revenues", "net sales", "total sales"),
    "net income": ("net income", "profit attributable", "net earnings"),
    "operating income": ("operating income", "earnings from operations", "income from operations"),
    "gross margin": ("gross margin", "gross profit"),
    "capital expenditures": ("capital expenditures", "capex", "capital spending"),
    "research and development": ("research and development", "r&d"),
    "free cash flow": ("free cash flow", "fcf"),
    "total debt": ("total debt", "borrowings"),
    "dividends": ("dividends", "dividend", "shareholder distributions"),
    "sg&a": ("sg&a", "selling, general and administrative"),
    "backlog": ("backlog", "unfilled orders"),
    "earnings per share": ("earnings per share", "eps"),
    "cash and cash equivalents": ("cash and cash equivalents",),
    "operating expenses": ("operating expenses", "opex"),
}

METRIC_TOPICS: Dict[str, Topic] = {
    "revenue": Topic.REVENUE,
    "backlog": Topic.REVENUE,
    "net income": Topic.PROFITABILITY,
    "operating income": Topic.PROFITABILITY,
    "gross margin": Topic.PROFITABILITY,
    "earnings per share": Topic.PROFITABILITY,
    "capital expenditures": Topic.LIQUIDITY,
    "free cash flow": Topic.LIQUIDITY,
    "total debt": Topic.LIQUIDITY,
    "dividends": Topic.LIQUIDITY,
    "cash and cash equivalents": Topic.LIQUIDITY,
    "research and development": Topic.COSTS,
    "sg&a": Topic.COSTS,
    "operating expenses": Topic.COSTS,
}

_SECTION_TOPICS = (
    ("risk factors", Topic.RISK),
    ("governance", Topic.GOVERNANCE),
    ("directors", Topic.GOVERNANCE),
    ("executive compensation", Topic.GOVERNANCE),
    ("liquidity", Topic.LIQUIDITY),
    ("outlook", Topic.GUIDANCE),
    ("guidance", Topic.GUIDANCE),
)


def _alias_pattern(alias: str) -> str:
    return r"(?<![a-z0-9])" + re.escape(alias) + r"(?![a-z0-9])"


_METRIC_RES = [
    (canonical, re.compile(_alias_pattern(alias), re.IGNORECASE))
    for canonical, aliases in METRIC_LEXICON.items()
    for alias in sorted(aliases, key=len, reverse=True)
]

_ENTITY_RE = re.compile(r"\b([A-Z][A-Za-z]+) (?:segment|division|business|operations|unit)\b")
_ENTITY_STOP = {"The", "Our", "This", "That", "Each", "Its", "Their", "Such", "Other", "Reportable", "Operating", "Every", "Which"}

_NUMBER_RE = re.compile(
    r"\$\s?\d(?:[\d,]*\d)?(?:\.\d+)?(?: (?:million|billion|thousand|trillion))?"
    r"|\d(?:[\d,]*\d)?(?:\.\d+)?\s?(?:%|percent\b)"
    r"|\d(?:[\d,]*\d)?(?:\.\d+)? (?:million|billion|thousand|trillion)\b"
    r"|\b\d{1,3}(?:,\d{3})+(?:\.\d+)?\b"
)

_MONTHS = ("january", "february", "march", "april", "may", "june", "july", "august",
           "september", "october", "november", "december")
_MONTH_ALT = "|".join(m.capitalize() for m in _MONTHS)
_ORDINALS = {"first": 1, "second": 2, "third": 3, "fourth": 4}

_YEAR_ENDED_RE = re.compile(r"\b(?:fiscal )?years? ended (?:(?:" + _MONTH_ALT + r") \d{1,2}, )?(\d{4})\b", re.IGNORECASE)
_FISCAL_RE = re.compile(r"\bfiscal (?:year )?(\d{4})\b", re.IGNORECASE)
_FY_RE = re.compile(r"\bFY ?(\d{4})\b")
_QUARTER_WORD_RE = re.compile(r"\b(first|second|third|fourth) (?:fiscal )?quarter (?:of )?(?:fiscal )?(\d{4})\b", re.IGNORECASE)
_QUARTER_CODE_RE = re.compile(r"\bQ([1-4]) (?:fiscal )?(\d{4})\b|\b(\d{4})-Q([1-4])\b")
_QUARTER_ENDED_RE = re.compile(r"\b(?:three months|quarter) ended (" + _MONTH_ALT + r") \d{1,2}, (\d{4})\b")
_AS_OF_RE = re.compile(r"\bas of (" + _MONTH_ALT + r") \d{1,2}, (\d{4})\b")
_MONTH_YEAR_RE = re.compile(r"\b(" + _MONTH_ALT + r") (\d{4})\b")

_LATEST_QUARTER_RE = re.compile(r"\b(?:last|latest|most recent|prior) (?:fiscal )?quarter\b", re.IGNORECASE)
_LATEST_YEAR_RE = re.compile(r"\b(?:last|latest|most recent|prior) (?:fiscal )?year\b", re.IGNORECASE)

_BOILERPLATE_RE = re.compile(
    r"forward-looking statements|safe harbor|private securities litigation reform act|undue reliance",
    re.IGNORECASE,
)
_DEFINITION_RE = re.compile(r"\b(?:means|is defined as|are defined as|refers to|we define)\b", re.IGNORECASE)
_CAVEAT_RE = re.compile(r"\b(?:however|except|subject to|may not|no assurance)\b", re.IGNORECASE)
_POLICY_RE = re.compile(r"\b(?:policy|policies|we recognize|is recognized|accounting for|in accordance with)\b", re.IGNORECASE)
_GUIDANCE_RE = re.compile(r"\b(?:expect|expects|outlook|anticipate|anticipates|guidance|forecast)\b", re.IGNORECASE)
_EXPLANATION_RE = re.compile(r"\b(?:due to|because|driven by|primarily|as a result|attributable to)\b", re.IGNORECASE)
_COMPARISON_RE = re.compile(r"\b(?:compared to|compared with|increase|increased|decrease|decreased|versus|higher|lower)\b", re.IGNORECASE)
_AGGREGATION_RE = re.compile(r"\b(?:total|aggregate|combined|cumulative)\b", re.IGNORECASE)
_GEOGRAPHY_RE = re.compile(r"\b(United States|North America|Europe|Asia Pacific|Asia|China|Latin America|International)\b")
_TABLE_LINE_RE = re.compile(r"\|")

_RELATION_RULES = (
    (Relation.DEFINITION, re.compile(r"\b(?:define|defined|definition|what is meant by|meaning of)\b", re.IGNORECASE)),
    (Relation.POLICY, re.compile(r"\b(?:policy|policies|how does the company (?:recognize|account))\b", re.IGNORECASE)),
    (Relation.EXPLANATION, re.compile(r"\b(?:why|explain|reason|reasons|drove|drivers?|what caused)\b", re.IGNORECASE)),
    (Relation.COMPARISON, re.compile(r"\b(?:compare|compared|comparison|versus|vs\.?|relative to|difference between)\b", re.IGNORECASE)),
    (Relation.TREND, re.compile(r"\b(?:change|changed|trend|grow|grew|growth|increase|decrease|decline|evolve|over time)\b", re.IGNORECASE)),
)

_NUMERIC_QUESTION_RE = re.compile(r"\b(?:how much|how many|what was the|what were the|amount|total)\b", re.IGNORECASE)

STOPWORDS = frozenset(
    "a an and are as at be by did do does for from had has have how in is it its of on or the their this "
    "to was were what when which who why with during company s".split()
)
_PERIOD_WORD_RE = re.compile(r"^(?:fiscal|year|years|quarter|quarters|month|months|last|latest|recent|most|fy\d{4}|\d{4}|q[1-4])$")


def _month_number(name: str) -> int:
    return _MONTHS.index(name.lower()) + 1


def scan_periods(text: str) -> List[Tuple[PeriodValue, int, int]]:
    """Absolute period mentions in text, with character spans, in text order."""
    found: List[Tuple[PeriodValue, int, int]] = []
    for m in _YEAR_ENDED_RE.finditer(text):
        found.append((fiscal_year(int(m.group(1))), m.start(), m.end()))
    for m in _FISCAL_RE.finditer(text):
        found.append((fiscal_year(int(m.group(1))), m.start(), m.end()))
    for m in _FY_RE.finditer(text):
        found.append((fiscal_year(int(m.group(1))), m.start(), m.end()))
    for m in _QUARTER_WORD_RE.finditer(text):
        found.append((fiscal_quarter(int(m.group(2)), _ORDINALS[m.group(1).lower()]), m.start(), m.end()))
    for m in _QUARTER_CODE_RE.finditer(text):
        if m.group(1):
            found.append((fiscal_quarter(int(m.group(2)), int(m.group(1))), m.start(), m.end()))
        else:
            found.append((fiscal_quarter(int(m.group(3)), int(m.group(4))), m.start(), m.end()))
    for m in _QUARTER_ENDED_RE.finditer(text):
        quarter = (_month_number(m.group(1)) - 1) // 3 + 1
        found.append((fiscal_quarter(int(m.group(2)), quarter), m.start(), m.end()))
    for m in _AS_OF_RE.finditer(text):
        found.append((month(int(m.group(2)), _month_number(m.group(1))), m.start(), m.end()))
    for m in _MONTH_YEAR_RE.finditer(text):
        found.append((month(int(m.group(2)), _month_number(m.group(1))), m.start(), m.end()))

    # drop mentions nested inside a longer one ("fiscal 2023" inside "fiscal years ended ... 2023")
    found.sort(key=lambda f: (f[1], -(f[2] - f[1])))
    kept: List[Tuple[PeriodValue, int, int]] = []
    for period, start, end in found:
        if kept and start < kept[-1][2]:
            continue
        kept.append((period, start, end))
    return kept


def combine_periods(periods: Sequence[PeriodValue]) -> Optional[PeriodValue]:
    """One period as-is; several distinct ones become the covering interval."""
    distinct = {p.canonical(): p for p in periods}
    if not distinct:
        return None
    if len(distinct) == 1:
        return next(iter(distinct.values()))
    values = list(distinct.values())
    return PeriodValue(kind=PeriodKind.INTERVAL, start=min(p.start for p in values), end=max(p.end for p in values))


def find_metrics(text: str) -> List[Tuple[str, int, int]]:
    hits: List[Tuple[str, int, int]] = []
    taken: List[Tuple[int, int]] = []
    for canonical, pattern in _METRIC_RES:
        for m in pattern.finditer(text):
            if any(m.start() < e and s < m.end() for s, e in taken):
                continue
            taken.append((m.start(), m.end()))
            hits.append((canonical, m.start(), m.end()))
    return sorted(hits, key=lambda h: h[1])


def find_entities(text: str) -> List[Tuple[str, int, int]]:
    return [
        (m.group(1), m.start(1), m.end(1))
        for m in _ENTITY_RE.finditer(text)
        if m.group(1) not in _ENTITY_STOP
    ]


def _unique(values: Iterable[str]) -> List[str]:
    return list(dict.fromkeys(values))


def _is_heading(text: str) -> bool:
    stripped = text.strip()
    if "\n" in stripped or len(stripped.split()) > 12 or stripped.endswith("."):
        return False
    letters = [c for c in stripped if c.isalpha()]
    return bool(letters) and (all(c.isupper() for c in letters) or stripped.lower().startswith(("item ", "part ")))


def _first_sentence(text: str) -> str:
    sentence = re.split(r"(?<=[.!?])\s+", " ".join(text.split()), maxsplit=1)[0]
    return sentence[:240]


def _is_table(text: str) -> bool:
    lines = [line for line in text.splitlines() if line.strip()]
    piped = sum(1 for line in lines if _TABLE_LINE_RE.search(line))
    return piped >= 2 or "\t" in text


def extract_card(chunk: Chunk) -> ChunkCard:
    """
    Rule-based card for a chunk.

    Numeric spans are verbatim regex matches, periods come from a scan of
    fiscal/quarter/month expressions, metrics from a fixed lexicon and the
    topic from the section path before the metrics.
    """
    text = chunk.text
    heading = _is_heading(text)
    boilerplate = bool(_BOILERPLATE_RE.search(text))

    metric_hits = [] if heading else find_metrics(text)
    entity_hits = find_entities(text)
    number_hits = [] if heading else [(m.group(0).strip(), m.start(), m.start() + len(m.group(0).strip())) for m in _NUMBER_RE.finditer(text)]
    period_hits = scan_periods(text)

    metrics = _unique(h[0] for h in metric_hits)
    entities = _unique(h[0] for h in entity_hits)
    numeric_spans = [h[0] for h in number_hits]
    period = combine_periods([h[0] for h in period_hits])

    section = " > ".join(chunk.section_path)
    topic = Topic.OTHER
    section_lower = section.lower()
    for needle, mapped in _SECTION_TOPICS:
        if needle in section_lower:
            topic = mapped
            break
    else:
        for metric in metrics:
            if metric in METRIC_TOPICS:
                topic = METRIC_TOPICS[metric]
                break
        else:
            if boilerplate:
                topic = Topic.RISK

    table = _is_table(text) and bool(numeric_spans)
    comparison = bool(_COMPARISON_RE.search(text))

    if heading:
        claim_role = ClaimRole.STRUCTURAL_HEADING
    elif boilerplate:
        claim_role = ClaimRole.BOILERPLATE
    elif _DEFINITION_RE.search(text):
        claim_role = ClaimRole.DEFINITION
    elif numeric_spans and metrics:
        claim_role = ClaimRole.PRIMARY_EVIDENCE
    elif _CAVEAT_RE.search(text):
        claim_role = ClaimRole.CAVEAT
    else:
        claim_role = ClaimRole.SUPPORTING_CONTEXT

    if heading or boilerplate:
        evidence_type = EvidenceType.NONE
    elif table:
        evidence_type = EvidenceType.TABLE_NUMERIC
    elif numeric_spans:
        evidence_type = EvidenceType.NARRATIVE_NUMERIC
    elif _POLICY_RE.search(text):
        evidence_type = EvidenceType.POLICY_TEXT
    elif _GUIDANCE_RE.search(text):
        evidence_type = EvidenceType.GUIDANCE
    elif _EXPLANATION_RE.search(text) or claim_role == ClaimRole.DEFINITION:
        evidence_type = EvidenceType.QUALITATIVE_EXPLANATION
    else:
        evidence_type = EvidenceType.NONE

    profile: List[AnswerabilityProfile] = []
    if not heading and not boilerplate:
        if numeric_spans and period is not None:
            profile.append(AnswerabilityProfile.SINGLE_FACT)
        if comparison:
            profile.append(AnswerabilityProfile.COMPARISON)
        if period is not None and period.kind == PeriodKind.INTERVAL:
            profile.append(AnswerabilityProfile.TREND)
        if _AGGREGATION_RE.search(text) and numeric_spans:
            profile.append(AnswerabilityProfile.AGGREGATION)
        if _EXPLANATION_RE.search(text):
            profile.append(AnswerabilityProfile.ATTRIBUTION)

    lowered = text.lower()
    if "non-gaap" in lowered:
        basis = MeasurementBasis.NON_GAAP
    elif "adjusted" in lowered:
        basis = MeasurementBasis.ADJUSTED
    elif "gaap" in lowered:
        basis = MeasurementBasis.GAAP
    elif "reported" in lowered:
        basis = MeasurementBasis.REPORTED
    else:
        basis = MeasurementBasis.UNKNOWN

    geography = _GEOGRAPHY_RE.search(text)
    aux = CardAux(
        claim_role=claim_role,
        evidence_type=evidence_type,
        answerability_profile=tuple(profile),
        temporal_anchor=TemporalAnchor(
            quality=TemporalQuality.EXPLICIT if period is not None else TemporalQuality.NONE,
            span=period,
        ),
        scope_signature=ScopeSignature(
            entity_scope=entities[0] if entities else "unknown",
            geography=geography.group(1) if geography else "unknown",
        ),
        measurement_basis=basis,
        verifiability=Verifiability(numeric_claims=bool(numeric_spans), table_present=table, comparison_cues=comparison),
        risk_signals=RiskSignals(
            boilerplate_likelihood=0.9 if boilerplate else 0.0,
            limitations=("forward-looking",) if boilerplate else (),
        ),
        semantic_sketch=_first_sentence(text),
    )

    spans = (
        [EvidenceSpan(field="metrics", start=s, end=e) for _, s, e in metric_hits]
        + [EvidenceSpan(field="entities", start=s, end=e) for _, s, e in entity_hits]
        + [EvidenceSpan(field="numeric_spans", start=s, end=e) for _, s, e in number_hits]
        + [EvidenceSpan(field="period", start=s, end=e) for _, s, e in period_hits]
    )
    spans.sort(key=lambda s: (s.start, s.field))

    triple = None
    if metrics and (entities or period is not None):
        triple = DerivedTriple(entity=entities[0] if entities else None, metric=metrics[0], period=period)

    return ChunkCard(
        chunk_id=chunk.chunk_id,
        topic=topic,
        entities=tuple(entities),
        metrics=tuple(metrics),
        numeric_spans=tuple(numeric_spans),
        period=period,
        section=section,
        derived_triple=triple,
        evidence_spans=tuple(spans),
        aux=aux,
    )


def extract_intent(question: str) -> QueryIntent:
    """
    Rule-based intent for a question.

    "last quarter" style phrases become relative markers; keywords are the
    question tokens left after removing stopwords, period words and the
    tokens already captured as metrics or entities.
    """
    metric_hits = find_metrics(question)
    entity_hits = find_entities(question)
    metrics = _unique(h[0] for h in metric_hits)
    entities = _unique(h[0] for h in entity_hits)

    periods: List[PeriodValue] = [h[0] for h in scan_periods(question)]
    if _LATEST_QUARTER_RE.search(question):
        periods.append(relative("latest_quarter"))
    elif _LATEST_YEAR_RE.search(question):
        periods.append(relative("latest_year"))
    periods = list({p.canonical(): p for p in periods}.values())

    if not periods:
        granularity = Granularity.NONE
    elif any(p.kind == PeriodKind.INTERVAL for p in periods):
        granularity = Granularity.INTERVAL
    elif any(p.kind == PeriodKind.MONTH for p in periods):
        granularity = Granularity.MONTH
    elif any(p.kind == PeriodKind.FISCAL_QUARTER or p.marker == "latest_quarter" for p in periods):
        granularity = Granularity.QUARTER
    else:
        granularity = Granularity.YEAR

    relation = Relation.LOOKUP
    for candidate, pattern in _RELATION_RULES:
        if pattern.search(question):
            relation = candidate
            break

    numeric_required = relation in (Relation.LOOKUP, Relation.TREND, Relation.COMPARISON) and (
        bool(metrics) or bool(_NUMERIC_QUESTION_RE.search(question))
    )

    topic = Topic.OTHER
    for metric in metrics:
        if metric in METRIC_TOPICS:
            topic = METRIC_TOPICS[metric]
            break
    else:
        lowered = question.lower()
        if "risk" in lowered:
            topic = Topic.RISK
        elif "guidance" in lowered or "outlook" in lowered:
            topic = Topic.GUIDANCE

    covered = set()
    for _, start, end in metric_hits + entity_hits:
        covered.update(tokenize(question[start:end]))
    keywords = [
        token
        for token in tokenize(question)
        if token not in STOPWORDS and token not in covered and not _PERIOD_WORD_RE.match(token)
    ]
    keywords = [k for k in keywords if k not in {"change", "changed", "trend"}]

    return QueryIntent(
        topic=topic,
        entities=tuple(entities),
        metrics=tuple(metrics),
        relation=relation,
        temporal=TemporalScope(periods=tuple(periods), granularity=granularity),
        numeric_required=numeric_required,
        keywords=tuple(keywords),
    )


_NUMERIC_TYPES = (EvidenceType.TABLE_NUMERIC, EvidenceType.NARRATIVE_NUMERIC)
_EXPLANATORY_RELATIONS = (Relation.EXPLANATION, Relation.DEFINITION, Relation.POLICY)


def _keyword_hits(intent: QueryIntent, sketch: str) -> List[str]:
    sketch_tokens = set(tokenize(sketch))
    return [k for k in intent.keywords if tokenize(k) and set(tokenize(k)) <= sketch_tokens]


def _evidence_suitable(card: ChunkCard, intent: QueryIntent) -> bool:
    kind = card.aux.evidence_type
    if intent.numeric_required and kind in _NUMERIC_TYPES:
        return True
    return intent.relation in _EXPLANATORY_RELATIONS and kind in EXPLANATORY_TYPES


def _matches_any_metric(card: ChunkCard, intent: QueryIntent) -> bool:
    wanted = {normalize_term(m) for m in intent.metrics}
    return any(normalize_term(m) in wanted for m in card.metrics)


def score_breakdown(
    card: ChunkCard,
    intent: QueryIntent,
    context: Optional[Sequence[ChunkCard]] = None,
    weights: Optional[OracleWeights] = None,
) -> Dict[str, float]:
    """Per-component oracle score; the components sum to oracle_score."""
    weights = weights or OracleWeights()
    parts = {"metric": 0.0, "period": 0.0, "entity": 0.0, "evidence_type": 0.0, "keyword": 0.0, "boilerplate": 0.0}
    if intent.is_empty:
        return parts
    match = match_fields(card, intent)
    parts["metric"] = weights.metric * len(match.metrics)
    parts["period"] = weights.period if match.period is not None else 0.0
    parts["entity"] = weights.entity * len(match.entities)
    parts["evidence_type"] = weights.evidence_type if _evidence_suitable(card, intent) else 0.0
    parts["keyword"] = weights.keyword * len(_keyword_hits(intent, card.aux.semantic_sketch))
    if card.aux.is_boilerplate:
        others = [c for c in (context or ()) if c.chunk_id != card.chunk_id]
        exempt = context is not None and not any(_matches_any_metric(c, intent) for c in others)
        if not exempt:
            parts["boilerplate"] = -weights.boilerplate_penalty
    return parts


def oracle_score(
    card: ChunkCard,
    intent: QueryIntent,
    context: Optional[Sequence[ChunkCard]] = None,
    weights: Optional[OracleWeights] = None,
) -> float:
    """
    Weighted field-match score of a card for an intent.

    Args:
        card: candidate card (possibly masked)
        intent: query intent with relative periods already resolved
        context: the other cards judged alongside; the boilerplate penalty is
            waived when none of them matches an intent metric
        weights: field weights

    Returns:
        float: metric 4/match + period 3 + entity 2/match + evidence type 2
            + keyword 1/match - boilerplate 3 (default weights)
    """
    return float(sum(score_breakdown(card, intent, context, weights).values()))


def _literal_hits(text: str, terms: Sequence[str]) -> List[str]:
    lowered = normalize_term(text)
    return [t for t in terms if re.search(_alias_pattern(normalize_term(t)), lowered)]


def text_score(text: str, intent: QueryIntent, weights: Optional[OracleWeights] = None) -> float:
    """Literal matching on raw text: intent metric and entity phrases and keywords only."""
    weights = weights or OracleWeights()
    if intent.is_empty:
        return 0.0
    tokens = set(tokenize(text))
    score = weights.metric * len(_literal_hits(text, intent.metrics))
    score += weights.entity * len(_literal_hits(text, intent.entities))
    score += weights.keyword * sum(1 for k in intent.keywords if tokenize(k) and set(tokenize(k)) <= tokens)
    return float(score)


def max_possible_score(intent: QueryIntent, weights: Optional[OracleWeights] = None, raw_text: bool = False) -> float:
    weights = weights or OracleWeights()
    if intent.is_empty:
        return 0.0
    total = weights.metric * len(intent.metrics) + weights.entity * len(intent.entities) + weights.keyword * len(intent.keywords)
    if not raw_text:
        total += weights.period if intent.periods else 0.0
        total += weights.evidence_type if (intent.numeric_required or intent.relation in _EXPLANATORY_RELATIONS) else 0.0
    return float(total)


def _relevance(score: float, maximum: float) -> int:
    if maximum <= 0:
        return 0
    return int(min(100, max(0, round(100.0 * score / maximum))))


class OracleProvider:
    """Rule-based judge; a pure function of its inputs and weights."""

    def __init__(self, weights: Optional[OracleWeights] = None):
        self.name = "oracle"
        self.weights = weights or OracleWeights()

    def score_items(self, items: Sequence[JudgeItem], intent: QueryIntent) -> List[float]:
        cards = [item.card for item in items if item.card is not None]
        return [
            oracle_score(item.card, intent, cards, self.weights)
            if item.card is not None
            else text_score(item.text, intent, self.weights)
            for item in items
        ]

    def _reasons(self, item: JudgeItem, intent: QueryIntent, context: Sequence[ChunkCard]) -> List[str]:
        if item.card is None:
            return ["text_match"]
        match = match_fields(item.card, intent)
        reasons = [f"metric:{m.value}" for m in match.metrics]
        if match.period is not None:
            reasons.append(f"period:{match.period.value}")
        reasons += [f"entity:{e.value}" for e in match.entities]
        parts = score_breakdown(item.card, intent, context, self.weights)
        if parts["evidence_type"]:
            reasons.append(f"evidence_type:{item.card.aux.evidence_type.value}")
        reasons += [f"keyword:{k}" for k in _keyword_hits(intent, item.card.aux.semantic_sketch)]
        if parts["boilerplate"]:
            reasons.append("boilerplate_penalty")
        return reasons

    def _eligible(self, item: JudgeItem, intent: QueryIntent, score: float) -> bool:
        if not (intent.metrics or intent.entities):
            return score > 0
        if item.card is None:
            return bool(_literal_hits(item.text, intent.metrics) or _literal_hits(item.text, intent.entities))
        match = match_fields(item.card, intent)
        return bool(match.metrics or match.entities)

    def _order(self, items: Sequence[JudgeItem], scores: Sequence[float]) -> List[int]:
        return sorted(range(len(items)), key=lambda i: (-scores[i], items[i].chunk_index))

    def select(
        self,
        items: Sequence[JudgeItem],
        intent: QueryIntent,
        k_min: int,
        k_max: int,
        quotas: Optional[CoverageQuotas] = None,
    ) -> SelectionResult:
        """
        Select between k_min and k_max items (bounds clamped to the group size).

        Items matching an intent metric or entity are eligible and taken
        first; the count is the eligible count clamped to the bounds, or k_min
        when every item scores the same. Quotas swap in the best satisfying
        item when the selection lacks one.
        """
        quotas = quotas or CoverageQuotas()
        n = len(items)
        k_min, k_max = min(k_min, n), min(k_max, n)
        scores = self.score_items(items, intent)
        eligible = [self._eligible(item, intent, s) for item, s in zip(items, scores)]
        count = min(max(sum(eligible), k_min), k_max)
        if n and len(set(scores)) == 1:
            # nothing separates the group
            count = k_min
        order = sorted(range(n), key=lambda i: (not eligible[i], -scores[i], items[i].chunk_index))
        chosen = order[:count]

        quota_unmet = False
        for required, satisfies in (
            (quotas.require_temporal_table, satisfies_temporal_table),
            (quotas.require_explanatory, is_explanatory),
        ):
            if not required or any(satisfies(items[i].card) for i in chosen):
                continue
            candidates = [i for i in order if i not in chosen and satisfies(items[i].card)]
            if not candidates:
                quota_unmet = True
                logger.warning(f"Coverage quota cannot be met within group of {n}")
                continue
            if len(chosen) < k_max:
                chosen.append(candidates[0])
            else:
                replaceable = [i for i in reversed(chosen) if not (
                    (quotas.require_temporal_table and satisfies_temporal_table(items[i].card))
                    or (quotas.require_explanatory and is_explanatory(items[i].card))
                )]
                if not replaceable:
                    quota_unmet = True
                    continue
                chosen[chosen.index(replaceable[0])] = candidates[0]

        chosen.sort(key=lambda i: (-scores[i], items[i].chunk_index))
        maximum = max_possible_score(intent, self.weights, raw_text=all(item.card is None for item in items))
        context = [item.card for item in items if item.card is not None]
        return SelectionResult(
            selected=tuple(
                SelectedChunk(
                    chunk_id=items[i].chunk_id,
                    reasons=tuple(self._reasons(items[i], intent, context)),
                    relevance=_relevance(scores[i], maximum),
                )
                for i in chosen
            ),
            quota_unmet=quota_unmet,
        )

    def rank_with_scores(self, items: Sequence[JudgeItem], intent: QueryIntent, scores: Sequence[float]) -> RankingResult:
        context = [item.card for item in items if item.card is not None]
        order = self._order(items, scores)
        return RankingResult(
            ranked=tuple(
                RankedChunk(
                    chunk_id=items[i].chunk_id,
                    rank=rank,
                    reason=", ".join(self._reasons(items[i], intent, context)) or "no field match",
                )
                for rank, i in enumerate(order, start=1)
            )
        )

    def rank(self, items: Sequence[JudgeItem], intent: QueryIntent) -> RankingResult:
        return self.rank_with_scores(items, intent, self.score_items(items, intent))

    async def select_group(self, items, intent, question, k_min, k_max, quotas=None) -> SelectionResult:
        return self.select(items, intent, k_min, k_max, quotas)

    async def rank_group(self, items, intent, question, template: str = "stage3_rank") -> RankingResult:
        return self.rank(items, intent)

    async def extract_card(self, chunk: Chunk) -> ChunkCard:
        return extract_card(chunk)

    async def extract_intent(self, question: str) -> QueryIntent:
        return extract_intent(question)


class NoisyOracleProvider(OracleProvider):
    """
    Oracle scores plus seeded Gaussian noise.

    The noise stream is seeded from the judge seed and the group's member
    ids in presentation order, so a given group presentation always gets the
    same noise while reshuffled presentations get fresh draws.
    """

    def __init__(self, weights: Optional[OracleWeights] = None, noise_scale: float = 1.0, seed: int = 0):
        super().__init__(weights)
        self.name = "noisy_oracle"
        self.noise_scale = noise_scale
        self.seed = seed

    def _noise(self, items: Sequence[JudgeItem]) -> np.ndarray:
        key = zlib.crc32("|".join(item.chunk_id for item in items).encode("utf-8"))
        rng = np.random.default_rng([self.seed, key])
        return rng.normal(0.0, self.noise_scale, size=len(items))

    def score_items(self, items: Sequence[JudgeItem], intent: QueryIntent) -> List[float]:
        base = super().score_items(items, intent)
        if self.noise_scale == 0:
            return base
        return [float(s) for s in np.asarray(base) + self._noise(items)]
