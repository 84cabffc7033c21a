"""
Period grammar shared by cards and intents.

    FY2023            fiscal_year
    2023-Q2           fiscal_quarter
    2023-06           month
    [2023-01, 2023-06] interval (inclusive month pair)
    latest | latest_quarter | latest_year   relative-latest

Fiscal years are treated as calendar years; absolute periods compare by
their inclusive month ranges.
"""

import re
from enum import Enum
from typing import Any, Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, model_validator


class PeriodKind(str, Enum):
    FISCAL_YEAR = "fiscal_year"
    FISCAL_QUARTER = "fiscal_quarter"
    MONTH = "month"
    INTERVAL = "interval"
    RELATIVE = "relative-latest"


RELATIVE_MARKERS = ("latest", "latest_quarter", "latest_year")

_FY_RE = re.compile(r"^FY(\d{4})$", re.IGNORECASE)
_QUARTER_RE = re.compile(r"^(\d{4})-Q([1-4])$", re.IGNORECASE)
_MONTH_RE = re.compile(r"^(\d{4})-(0[1-9]|1[0-2])$")
_INTERVAL_RE = re.compile(r"^\[\s*(\d{4})-(0[1-9]|1[0-2])\s*,\s*(\d{4})-(0[1-9]|1[0-2])\s*\]$")


class PeriodValue(BaseModel):
    """A normalized period; ``start``/``end`` are month ordinals (year*12 + month-1)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: PeriodKind
    start: Optional[int] = None
    end: Optional[int] = None
    marker: Optional[str] = None

    @model_validator(mode="after")
    def _check_payload(self) -> "PeriodValue":
        if self.kind == PeriodKind.RELATIVE:
            if self.start is not None or self.end is not None:
                raise ValueError("relative periods carry no absolute payload")
            if self.marker not in RELATIVE_MARKERS:
                raise ValueError(f"unknown relative marker {self.marker!r}")
        else:
            if self.start is None or self.end is None:
                raise ValueError(f"{self.kind.value} period needs start and end")
            if self.start > self.end:
                raise ValueError("interval start must not be after end")
        return self

    @property
    def is_relative(self) -> bool:
        return self.kind == PeriodKind.RELATIVE

    def month_range(self) -> Optional[Tuple[int, int]]:
        if self.is_relative:
            return None
        return self.start, self.end

    def canonical(self) -> str:
        if self.is_relative:
            return self.marker
        year, month = divmod(self.start, 12)
        if self.kind == PeriodKind.FISCAL_YEAR:
            return f"FY{year}"
        if self.kind == PeriodKind.FISCAL_QUARTER:
            return f"{year}-Q{month // 3 + 1}"
        if self.kind == PeriodKind.MONTH:
            return f"{year}-{month + 1:02d}"
        end_year, end_month = divmod(self.end, 12)
        return f"[{year}-{month + 1:02d}, {end_year}-{end_month + 1:02d}]"

    def __str__(self) -> str:
        return self.canonical()


def _month(year: int, month: int) -> int:
    return year * 12 + month - 1


def fiscal_year(year: int) -> PeriodValue:
    return PeriodValue(kind=PeriodKind.FISCAL_YEAR, start=_month(year, 1), end=_month(year, 12))


def fiscal_quarter(year: int, quarter: int) -> PeriodValue:
    first = (quarter - 1) * 3 + 1
    return PeriodValue(kind=PeriodKind.FISCAL_QUARTER, start=_month(year, first), end=_month(year, first + 2))


def month(year: int, month_number: int) -> PeriodValue:
    m = _month(year, month_number)
    return PeriodValue(kind=PeriodKind.MONTH, start=m, end=m)


def interval(start: PeriodValue, end: PeriodValue) -> PeriodValue:
    return PeriodValue(kind=PeriodKind.INTERVAL, start=min(start.start, end.start), end=max(start.end, end.end))


def relative(marker: str) -> PeriodValue:
    return PeriodValue(kind=PeriodKind.RELATIVE, marker=marker)


def parse_period(value: Any) -> PeriodValue:
    """Parse a period string (or pass a PeriodValue / dict through)."""
    if isinstance(value, PeriodValue):
        return value
    if isinstance(value, dict):
        return PeriodValue.model_validate(value)
    if not isinstance(value, str):
        raise ValueError(f"period must be a string, got {type(value).__name__}")
    text = value.strip()
    if text.lower() in RELATIVE_MARKERS:
        return relative(text.lower())
    m = _FY_RE.match(text)
    if m:
        return fiscal_year(int(m.group(1)))
    m = _QUARTER_RE.match(text)
    if m:
        return fiscal_quarter(int(m.group(1)), int(m.group(2)))
    m = _MONTH_RE.match(text)
    if m:
        return month(int(m.group(1)), int(m.group(2)))
    m = _INTERVAL_RE.match(text)
    if m:
        start = _month(int(m.group(1)), int(m.group(2)))
        end = _month(int(m.group(3)), int(m.group(4)))
        if start > end:
            raise ValueError(f"interval {text!r} has start after end")
        return PeriodValue(kind=PeriodKind.INTERVAL, start=start, end=end)
    raise ValueError(f"unrecognized period {text!r}")


def _overlaps(a: Tuple[int, int], b: Tuple[int, int]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


_RELATIVE_ACCEPTS = {
    "latest_quarter": {PeriodKind.FISCAL_QUARTER, PeriodKind.MONTH},
    "latest_year": {PeriodKind.FISCAL_YEAR, PeriodKind.FISCAL_QUARTER, PeriodKind.MONTH, PeriodKind.INTERVAL},
    "latest": set(PeriodKind),
}


def _compatible_one(p: PeriodValue, t: PeriodValue) -> bool:
    if p.is_relative and t.is_relative:
        return p.marker == t.marker
    if t.is_relative:
        return p.kind in _RELATIVE_ACCEPTS[t.marker]
    if p.is_relative:
        return t.kind in _RELATIVE_ACCEPTS[p.marker]
    return _overlaps(p.month_range(), t.month_range())


def period_compatible(p: Optional[PeriodValue], theta: Sequence[PeriodValue]) -> bool:
    """
    Temporal compatibility of a card period with an intent's constraints.

    Exact match, containment and interval overlap all reduce to month-range
    overlap. An empty theta places no constraint; a null period is only
    compatible with an empty theta. Unresolved relative constraints accept
    any period of a fine enough granularity.
    """
    if not theta:
        return True
    if p is None:
        return False
    return any(_compatible_one(p, t) for t in theta)


def latest_anchor(periods: Iterable[Optional[PeriodValue]]) -> Optional[PeriodValue]:
    """The absolute period with the latest end month (ties: the narrowest one)."""
    best: Optional[PeriodValue] = None
    for p in periods:
        if p is None or p.is_relative:
            continue
        if best is None or (p.end, -(p.end - p.start)) > (best.end, -(best.end - best.start)):
            best = p
    return best


def resolve_relative(theta: Sequence[PeriodValue], anchor: Optional[PeriodValue]) -> List[PeriodValue]:
    """Replace relative markers with absolute periods derived from the anchor."""
    if anchor is None:
        return list(theta)
    year, month_index = divmod(anchor.end, 12)
    resolved: List[PeriodValue] = []
    for t in theta:
        if not t.is_relative:
            resolved.append(t)
        elif t.marker == "latest_quarter":
            resolved.append(fiscal_quarter(year, month_index // 3 + 1))
        elif t.marker == "latest_year":
            resolved.append(fiscal_year(year))
        else:
            resolved.append(anchor)
    return resolved
