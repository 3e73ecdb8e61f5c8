"""Structured attribute queries over a universe, in both tool formats.

Concise results return the single intersection of every condition;
verbose results return one unfiltered candidate list per queried section.
Both render to the exact JSON wire shapes the trajectories embed.
"""

from __future__ import annotations

import json
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from typing import Any, Union

from guessbench.universe import CATEGORICAL, NUMERIC, Item, Universe

COMPARATORS = ("<", "<=", "==", ">=", ">", "!=")


class QueryError(ValueError):
    """Invalid condition or query for the given schema."""


@dataclass(frozen=True)
class ValueCondition:
    section: str
    values: tuple[str, ...]
    exclude: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))


@dataclass(frozen=True)
class NumericCondition:
    section: str
    comparator: str
    threshold: int


Condition = Union[ValueCondition, NumericCondition]


@dataclass(frozen=True)
class ToolQuery:
    conditions: tuple[Condition, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))

    def sections(self) -> list[str]:
        """Queried sections in order of first mention."""
        seen: list[str] = []
        for c in self.conditions:
            if c.section not in seen:
                seen.append(c.section)
        return seen


@dataclass(frozen=True)
class ConciseResult:
    intersection: tuple[str, ...]


@dataclass(frozen=True)
class VerboseResult:
    per_section: tuple[tuple[str, tuple[Condition, ...], tuple[str, ...]], ...]
    # entries are (section, conditions applied, sorted candidate names)


def validate_condition(u: Universe, c: Condition) -> None:
    section = u.schema.section(c.section)  # raises on unknown section
    if isinstance(c, ValueCondition):
        if section.kind != CATEGORICAL:
            raise QueryError(f"value condition on non-categorical section {c.section!r}")
        if not c.values:
            raise QueryError(f"empty value list for section {c.section!r}")
        bad = set(c.values) - set(section.domain)
        if bad:
            raise QueryError(f"values {sorted(bad)} outside domain of {c.section!r}")
    else:
        if section.kind != NUMERIC:
            raise QueryError(f"numeric condition on non-numeric section {c.section!r}")
        if c.comparator not in COMPARATORS:
            raise QueryError(f"unknown comparator {c.comparator!r}")


def validate_query(u: Universe, q: ToolQuery) -> None:
    numeric_seen: set[str] = set()
    for c in q.conditions:
        validate_condition(u, c)
        if isinstance(c, NumericCondition):
            if c.section in numeric_seen:
                raise QueryError(f"more than one numeric condition for section {c.section!r}")
            numeric_seen.add(c.section)


def _compare(value: int, comparator: str, threshold: int) -> bool:
    if comparator == "<":
        return value < threshold
    if comparator == "<=":
        return value <= threshold
    if comparator == "==":
        return value == threshold
    if comparator == ">=":
        return value >= threshold
    if comparator == ">":
        return value > threshold
    if comparator == "!=":
        return value != threshold
    raise QueryError(f"unknown comparator {comparator!r}")


def match_item(item: Item, c: Condition) -> bool:
    """Single-item predicate; the set-based paths below must agree with this."""
    value = item.attrs.get(c.section)
    if value is None:
        raise QueryError(f"item {item.display_name!r} lacks section {c.section!r}")
    if isinstance(c, ValueCondition):
        if not isinstance(value, frozenset):
            raise QueryError(f"value condition on numeric section {c.section!r}")
        overlap = bool(value & set(c.values))
        return not overlap if c.exclude else overlap
    if not isinstance(value, int):
        raise QueryError(f"numeric condition on categorical section {c.section!r}")
    return _compare(value, c.comparator, c.threshold)


# ---------------------------------------------------------------------------
# Inverted index, built lazily once per universe

class _Index:
    def __init__(self, u: Universe):
        self.all_ids = frozenset(it.id for it in u.items)
        self.by_label: dict[str, dict[str, frozenset[int]]] = {}
        self.numeric: dict[str, tuple[list[int], list[int]]] = {}  # sorted values, ids
        for s in u.schema.sections:
            if s.kind == CATEGORICAL:
                buckets: dict[str, set[int]] = {}
                for it in u.items:
                    for label in it.attrs[s.name]:
                        buckets.setdefault(label, set()).add(it.id)
                self.by_label[s.name] = {k: frozenset(v) for k, v in buckets.items()}
            else:
                pairs = sorted((it.attrs[s.name], it.id) for it in u.items)
                self.numeric[s.name] = ([p[0] for p in pairs], [p[1] for p in pairs])

    def ids_matching(self, c: Condition) -> frozenset[int]:
        if isinstance(c, ValueCondition):
            buckets = self.by_label[c.section]
            hit: set[int] = set()
            for v in c.values:
                hit |= buckets.get(v, frozenset())
            return frozenset(self.all_ids - hit) if c.exclude else frozenset(hit)
        values, ids = self.numeric[c.section]
        if c.comparator == "<":
            cut = ids[: bisect_left(values, c.threshold)]
        elif c.comparator == "<=":
            cut = ids[: bisect_right(values, c.threshold)]
        elif c.comparator == "==":
            cut = ids[bisect_left(values, c.threshold): bisect_right(values, c.threshold)]
        elif c.comparator == ">=":
            cut = ids[bisect_left(values, c.threshold):]
        elif c.comparator == ">":
            cut = ids[bisect_right(values, c.threshold):]
        elif c.comparator == "!=":
            eq = set(ids[bisect_left(values, c.threshold): bisect_right(values, c.threshold)])
            return frozenset(self.all_ids - eq)
        else:
            raise QueryError(f"unknown comparator {c.comparator!r}")
        return frozenset(cut)


def _index(u: Universe) -> _Index:
    idx = getattr(u, "_query_index", None)
    if idx is None:
        idx = _Index(u)
        object.__setattr__(u, "_query_index", idx)
    return idx


def _names_sorted(u: Universe, ids: frozenset[int]) -> tuple[str, ...]:
    by_id = {it.id: it.display_name for it in u.items}
    return tuple(sorted(by_id[i] for i in ids))


def query_concise(u: Universe, q: ToolQuery) -> ConciseResult:
    """Items satisfying every condition; empty query matches the whole world."""
    validate_query(u, q)
    idx = _index(u)
    ids = idx.all_ids
    for c in q.conditions:
        ids = ids & idx.ids_matching(c)
    return ConciseResult(_names_sorted(u, ids))


def query_verbose(u: Universe, q: ToolQuery) -> VerboseResult:
    """One candidate list per queried section, filtered by that section only."""
    validate_query(u, q)
    idx = _index(u)
    grouped: dict[str, list[Condition]] = {}
    for c in q.conditions:
        grouped.setdefault(c.section, []).append(c)
    entries = []
    for section in q.sections():
        ids = idx.all_ids
        for c in grouped[section]:
            ids = ids & idx.ids_matching(c)
        entries.append((section, tuple(grouped[section]), _names_sorted(u, ids)))
    return VerboseResult(tuple(entries))


def candidate_ids(u: Universe, q: ToolQuery) -> frozenset[int]:
    validate_query(u, q)
    idx = _index(u)
    ids = idx.all_ids
    for c in q.conditions:
        ids = ids & idx.ids_matching(c)
    return ids


# ---------------------------------------------------------------------------
# Wire format (field names match the trajectory logs exactly)

def condition_to_obj(c: Condition, include_section: bool = True) -> dict[str, Any]:
    obj: dict[str, Any] = {"type": "value" if isinstance(c, ValueCondition) else "numeric"}
    if include_section:
        obj["section"] = c.section
    if isinstance(c, ValueCondition):
        obj["values"] = list(c.values)
        if c.exclude:
            obj["exclude"] = True
    else:
        obj["comparator"] = c.comparator
        obj["threshold"] = c.threshold
    return obj


def condition_from_obj(obj: dict[str, Any], section: str | None = None) -> Condition:
    kind = obj.get("type")
    sect = obj.get("section", section)
    if sect is None:
        raise QueryError(f"condition without section: {obj!r}")
    if kind == "value":
        return ValueCondition(sect, tuple(obj["values"]), bool(obj.get("exclude", False)))
    if kind == "numeric":
        return NumericCondition(sect, obj["comparator"], int(obj["threshold"]))
    raise QueryError(f"unknown condition type {kind!r}")


def query_to_obj(q: ToolQuery) -> dict[str, Any]:
    return {"conditions": [condition_to_obj(c) for c in q.conditions]}


def query_from_obj(obj: dict[str, Any]) -> ToolQuery:
    return ToolQuery(tuple(condition_from_obj(c) for c in obj["conditions"]))


def query_to_json(q: ToolQuery) -> str:
    return json.dumps(query_to_obj(q))


def query_from_json(text: str) -> ToolQuery:
    return query_from_obj(json.loads(text))


def concise_to_obj(r: ConciseResult) -> dict[str, Any]:
    return {"intersection": list(r.intersection)}


def verbose_to_obj(r: VerboseResult) -> dict[str, Any]:
    return {
        "per_section": [
            {
                "section": section,
                "conditions": [condition_to_obj(c, include_section=False) for c in conds],
                "candidates": list(cands),
            }
            for section, conds, cands in r.per_section
        ]
    }


def result_to_json(r: ConciseResult | VerboseResult) -> str:
    return json.dumps(concise_to_obj(r) if isinstance(r, ConciseResult) else verbose_to_obj(r))


def result_from_json(text: str) -> ConciseResult | VerboseResult:
    obj = json.loads(text)
    if "intersection" in obj:
        return ConciseResult(tuple(obj["intersection"]))
    entries = []
    for e in obj["per_section"]:
        conds = tuple(condition_from_obj(c, section=e["section"]) for c in e["conditions"])
        entries.append((e["section"], conds, tuple(e["candidates"])))
    return VerboseResult(tuple(entries))
