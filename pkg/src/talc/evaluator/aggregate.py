"""Score aggregation, grouped report tables and human-rating import.

Means are exact fractions so that overall = (VC + TA) / 2 holds exactly;
rounding (half-up, one decimal, percent scale) happens only for display.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal, localcontext
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from ..errors import ParseError, UsageError
from .oracle import EvalScore

ENTITY_EXCLUDED = frozenset({"S2"})
MODE_ORDER = ("talc", "merge_captions", "merge_videos")
GROUPINGS = {
    "mode": ("mode",),
    "scenario": ("scenario", "mode"),
    "scenes": ("n_scenes", "mode"),
    "fine": ("scenario", "n_scenes", "mode"),
}


@dataclass(frozen=True)
class ScoredItem:
    score: EvalScore
    scenario: str
    n_scenes: int
    mode: str
    id: str = ""

    @property
    def entity_applicable(self) -> bool:
        return self.scenario not in ENTITY_EXCLUDED and self.score.entity is not None


def as_fraction(x) -> Fraction:
    """Exact value of ``x``; floats go through their shortest decimal repr."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(str(x)) if isinstance(x, Decimal) else Fraction(x)


def overall_score(vc, ta) -> Fraction:
    return (as_fraction(vc) + as_fraction(ta)) / 2


def round_half_up(x, places: int = 1) -> Decimal:
    f = as_fraction(x)
    with localcontext() as ctx:
        ctx.prec = 60
        d = Decimal(f.numerator) / Decimal(f.denominator)
        return d.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


def display(x, places: int = 1) -> str:
    return str(round_half_up(x, places))


def _mean(values: Sequence[Fraction]) -> Optional[Fraction]:
    return sum(values, Fraction(0)) / len(values) if values else None


@dataclass(frozen=True)
class GroupRow:
    key: Tuple
    count: int
    entity_count: int
    entity: Optional[Fraction]
    background: Fraction
    text_adherence: Fraction

    @property
    def visual_consistency(self) -> Fraction:
        parts = [v for v in (self.entity, self.background) if v is not None]
        return sum(parts, Fraction(0)) / len(parts)

    @property
    def overall(self) -> Fraction:
        return overall_score(self.visual_consistency, self.text_adherence)

    def percent(self) -> Dict[str, Optional[Fraction]]:
        vals = {"entity": self.entity, "background": self.background, "vc": self.visual_consistency,
                "ta": self.text_adherence, "overall": self.overall}
        return {k: (v * 100 if v is not None else None) for k, v in vals.items()}


def summarize(items: Sequence[ScoredItem], key: Tuple = ()) -> GroupRow:
    if not items:
        raise UsageError("cannot summarize an empty group")
    ent = [as_fraction(i.score.entity) for i in items if i.entity_applicable]
    bg = [as_fraction(i.score.background) for i in items]
    ta = [as_fraction(i.score.text_adherence) for i in items]
    return GroupRow(key, len(items), len(ent), _mean(ent), _mean(bg), _mean(ta))


def _sort_key(field: str, value):
    if field == "mode":
        return (MODE_ORDER.index(value) if value in MODE_ORDER else len(MODE_ORDER), str(value))
    return (0, value) if isinstance(value, int) else (1, str(value))


@dataclass
class AggregateReport:
    items: List[ScoredItem]
    tables: Dict[str, List[GroupRow]]
    flags: List[str]

    def row(self, grouping: str, *key) -> Optional[GroupRow]:
        for r in self.tables[grouping]:
            if r.key == tuple(key):
                return r
        return None

    def by_mode(self) -> Dict[str, GroupRow]:
        return {r.key[0]: r for r in self.tables["mode"]}

    def to_text(self) -> str:
        out = ["# multi-scene evaluation report (percent, half-up to one decimal)"]
        out += [f"# note: {f}" for f in self.flags]
        for name, fields in GROUPINGS.items():
            out.append("")
            out.append(f"== by {' x '.join(fields)} ==")
            header = list(fields) + ["videos", "entity", "background", "VC", "TA", "overall"]
            rows = []
            for r in self.tables[name]:
                p = r.percent()
                rows.append([str(k) for k in r.key] + [str(r.count)] + [
                    display(p[k]) if p[k] is not None else "n/a"
                    for k in ("entity", "background", "vc", "ta", "overall")])
            widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
                      for i, h in enumerate(header)]
            out.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
            for row in rows:
                out.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        return "\n".join(out) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["grouping", "scenario", "n_scenes", "mode", "videos", "entity", "background", "VC", "TA",
                    "overall"])
        for name, fields in GROUPINGS.items():
            for r in self.tables[name]:
                keyed = dict(zip(fields, r.key))
                p = r.percent()
                w.writerow([name, keyed.get("scenario", ""), keyed.get("n_scenes", ""), keyed.get("mode", ""),
                            r.count] + [display(p[k]) if p[k] is not None else ""
                                        for k in ("entity", "background", "vc", "ta", "overall")])
        return buf.getvalue()


def aggregate(items: Iterable, flags: Sequence[str] = ()) -> AggregateReport:
    """Group scores by mode, scenario and scene count. Empty groups produce no row."""
    items = [i if isinstance(i, ScoredItem) else ScoredItem(*i) for i in items]
    if not items:
        raise UsageError("no scores to aggregate")
    tables = {}
    for name, fields in GROUPINGS.items():
        groups: Dict[Tuple, List[ScoredItem]] = {}
        for it in items:
            groups.setdefault(tuple(getattr(it, f) for f in fields), []).append(it)
        keys = sorted(groups, key=lambda k: tuple(_sort_key(f, v) for f, v in zip(fields, k)))
        tables[name] = [summarize(groups[k], k) for k in keys]
    flags = sorted(set(flags))
    return AggregateReport(items, tables, list(flags))


HUMAN_COLUMNS = ("scenario", "n_scenes", "mode", "entity", "background", "text_adherence")
_HUMAN_LEVELS = {"yes": 1.0, "partially": 0.5, "partial": 0.5, "no": 0.0, "1": 1.0, "0.5": 0.5, "0": 0.0,
                 "1.0": 1.0, "0.0": 0.0}


def read_human_csv(text: str) -> List[ScoredItem]:
    """Import human three-level ratings (yes/partially/no or 1/0.5/0 per metric)."""
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in HUMAN_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise ParseError(f"human ratings CSV lacks columns {missing}", text)
    out = []
    for lineno, row in enumerate(reader, start=2):
        def level(name, optional=False):
            raw = (row[name] or "").strip().lower()
            if optional and raw in ("", "n/a", "na"):
                return None
            if raw not in _HUMAN_LEVELS:
                raise ParseError(f"line {lineno}: {name}={row[name]!r} is not a three-level answer", text)
            return _HUMAN_LEVELS[raw]

        entity = level("entity", optional=True)
        if row["scenario"] in ENTITY_EXCLUDED:
            entity = None
        score = EvalScore(entity, level("background"), level("text_adherence"), judge="human-import")
        out.append(ScoredItem(score, row["scenario"], int(row["n_scenes"]), row["mode"], row.get("id", "") or ""))
    return out
