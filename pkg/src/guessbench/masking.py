"""Symbolic masking: bijective substitution of all world vocabulary.

Item names become Item_k, sections Attr_j, categorical labels AjVm, with
k/j/m drawn from seeded permutations so masked ids carry no ordering
information. Numeric values, comparators, judgments, and every structural
position are left untouched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Any

from guessbench.environment import Feedback, SectionFeedback
from guessbench.query import (
    ConciseResult,
    Condition,
    NumericCondition,
    ToolQuery,
    ValueCondition,
    VerboseResult,
)
from guessbench.rollout import KNOWLEDGE_FREE, RoundRecord, Trajectory
from guessbench.universe import CATEGORICAL, AttributeSchema, Item, Section, Universe
from guessbench.util import rng_for


class MaskingError(ValueError):
    pass


@dataclass(frozen=True)
class SymbolMap:
    item_map: dict[str, str]
    item_index: dict[str, int]       # original name -> dex assigned when masking
    source_dex: dict[str, int]       # original name -> dex before masking
    section_map: dict[str, str]
    value_map: dict[tuple[str, str], str]
    seed: int

    def inverse(self) -> "SymbolMap":
        inv_values = {}
        for (section, label), code in self.value_map.items():
            inv_values[(self.section_map[section], code)] = label
        return SymbolMap(
            item_map={v: k for k, v in self.item_map.items()},
            item_index={v: self.source_dex[k] for k, v in self.item_map.items()},
            source_dex={v: self.item_index[k] for k, v in self.item_map.items()},
            section_map={v: k for k, v in self.section_map.items()},
            value_map=inv_values,
            seed=self.seed,
        )

    def map_item(self, name: str) -> str:
        try:
            return self.item_map[name]
        except KeyError:
            raise MaskingError(f"item {name!r} not covered by the symbol map") from None

    def map_section(self, name: str) -> str:
        try:
            return self.section_map[name]
        except KeyError:
            raise MaskingError(f"section {name!r} not covered by the symbol map") from None

    def map_value(self, section: str, label: str) -> str:
        try:
            return self.value_map[(section, label)]
        except KeyError:
            raise MaskingError(f"label {label!r} of section {section!r} not covered") from None

    def to_obj(self) -> dict[str, Any]:
        values: dict[str, dict[str, str]] = {}
        for (section, label), code in self.value_map.items():
            values.setdefault(section, {})[label] = code
        return {
            "seed": self.seed,
            "dex_policy": "masked-item-index",
            "items": dict(self.item_map),
            "item_index": dict(self.item_index),
            "source_dex": dict(self.source_dex),
            "sections": dict(self.section_map),
            "values": values,
        }

    @classmethod
    def from_obj(cls, obj: dict[str, Any]) -> "SymbolMap":
        value_map = {}
        for section, labels in obj["values"].items():
            for label, code in labels.items():
                value_map[(section, label)] = code
        return cls(
            item_map=dict(obj["items"]),
            item_index={k: int(v) for k, v in obj["item_index"].items()},
            source_dex={k: int(v) for k, v in obj["source_dex"].items()},
            section_map=dict(obj["sections"]),
            value_map=value_map,
            seed=int(obj["seed"]),
        )


def _permutation(rng, count: int) -> list[int]:
    perm = rng.sample(range(1, count + 1), count)
    if count > 1 and perm == list(range(1, count + 1)):
        perm = perm[1:] + perm[:1]  # identity assignment would leak ordering
    return perm


def build_symbol_map(u: Universe, seed: int) -> SymbolMap:
    vocab = u.vocabulary()
    rng = rng_for(seed, "symbol-map")

    names = [it.display_name for it in u.items]
    n = len(names)
    perm = _permutation(rng, n)
    offset = n if any(f"Item_{k}" in vocab for k in range(1, n + 1)) else 0
    item_map = {name: f"Item_{k + offset}" for name, k in zip(names, perm)}
    item_index = {name: k + offset for name, k in zip(names, perm)}
    source_dex = {it.display_name: it.dex for it in u.items}

    sections = u.schema.section_names()
    s_count = len(sections)
    s_perm = _permutation(rng, s_count)
    s_offset = s_count if any(f"Attr_{j}" in vocab for j in range(1, s_count + 1)) else 0
    section_map = {name: f"Attr_{j + s_offset}" for name, j in zip(sections, s_perm)}
    section_idx = {name: j + s_offset for name, j in zip(sections, s_perm)}

    value_map: dict[tuple[str, str], str] = {}
    for s in u.schema.sections:
        if s.kind != CATEGORICAL:
            continue
        labels = sorted(s.domain)
        d = len(labels)
        j = section_idx[s.name]
        v_perm = _permutation(rng, d)
        v_offset = d if any(f"A{j}V{m}" in vocab for m in range(1, d + 1)) else 0
        for label, m in zip(labels, v_perm):
            value_map[(s.name, label)] = f"A{j}V{m + v_offset}"

    return SymbolMap(item_map, item_index, source_dex, section_map, value_map, seed=seed)


# ---------------------------------------------------------------------------
# Applying a map

def mask_universe(u: Universe, m: SymbolMap) -> Universe:
    sections = []
    for s in u.schema.sections:
        masked_name = m.map_section(s.name)
        if s.kind == CATEGORICAL:
            domain = tuple(sorted(m.map_value(s.name, label) for label in s.domain))
        else:
            domain = s.domain
        sections.append(Section(masked_name, s.kind, domain, masked_name.lower(), s.max_values))
    schema = AttributeSchema(tuple(sections))

    items = []
    for it in u.items:
        attrs: dict[str, Any] = {}
        for s in u.schema.sections:
            v = it.attrs[s.name]
            if s.kind == CATEGORICAL:
                attrs[m.map_section(s.name)] = frozenset(m.map_value(s.name, label) for label in v)
            else:
                attrs[m.map_section(s.name)] = v
        items.append(Item(
            id=it.id,
            display_name=m.map_item(it.display_name),
            dex_number=m.item_index[it.display_name],
            attrs=attrs,
        ))
    return Universe(schema, items)


def _mask_condition(c: Condition, m: SymbolMap) -> Condition:
    if isinstance(c, ValueCondition):
        return ValueCondition(
            m.map_section(c.section),
            tuple(m.map_value(c.section, v) for v in c.values),
            c.exclude,
        )
    return NumericCondition(m.map_section(c.section), c.comparator, c.threshold)


def _mask_query(q: ToolQuery, m: SymbolMap) -> ToolQuery:
    return ToolQuery(tuple(_mask_condition(c, m) for c in q.conditions))


def _mask_result(res, m: SymbolMap):
    # Positional substitution: list order is part of the recorded artifact.
    if res is None:
        return None
    if isinstance(res, ConciseResult):
        return ConciseResult(tuple(m.map_item(n) for n in res.intersection))
    entries = []
    for section, conds, cands in res.per_section:
        entries.append((
            m.map_section(section),
            tuple(_mask_condition(c, m) for c in conds),
            tuple(m.map_item(n) for n in cands),
        ))
    return VerboseResult(tuple(entries))


def _mask_feedback(fb: Feedback, m: SymbolMap) -> Feedback:
    sections = []
    for sec in fb.sections:
        if sec.kind == CATEGORICAL:
            entries = tuple((m.map_value(sec.section, label), j) for label, j in sec.entries)
        else:
            entries = sec.entries
        sections.append(SectionFeedback(m.map_section(sec.section), sec.kind, entries))
    return Feedback(
        round_index=fb.round_index,
        guessed_id=fb.guessed_id,
        guessed_name=m.map_item(fb.guessed_name),
        guessed_dex=m.item_index[fb.guessed_name],
        sections=tuple(sections),
        overall=fb.overall,
    )


def _mask_round(r: RoundRecord, m: SymbolMap) -> RoundRecord:
    return RoundRecord(
        index=r.index,
        tool_query=None if r.tool_query is None else _mask_query(r.tool_query, m),
        tool_result=_mask_result(r.tool_result, m),
        guess_id=r.guess_id,
        guess_name=m.map_item(r.guess_name),
        feedback=_mask_feedback(r.feedback, m),
    )


def _mask_text(text: str, tokens: dict[str, str]) -> str:
    # Longest-first single-pass substitution with word boundaries.
    if not tokens:
        return text
    ordered = sorted(tokens, key=len, reverse=True)
    pattern = re.compile(
        "|".join(f"(?<![A-Za-z0-9_]){re.escape(t)}(?![A-Za-z0-9_])" for t in ordered)
    )
    return pattern.sub(lambda mo: tokens[mo.group(0)], text)


def mask_trajectory(t: Trajectory, m: SymbolMap) -> Trajectory:
    meta = dict(t.meta)
    config = dict(meta.get("config", {}))
    config["setting"] = KNOWLEDGE_FREE
    meta["config"] = config
    meta["masked"] = True
    if "target_name" in meta:
        meta["target_name"] = m.map_item(meta["target_name"])
    return Trajectory(
        system_prompt=_mask_text(t.system_prompt, dict(m.section_map)),
        initial_guess=None if t.initial_guess is None else _mask_round(t.initial_guess, m),
        rounds=[_mask_round(r, m) for r in t.rounds],
        meta=meta,
    )


def mask(artifact, m: SymbolMap):
    """Mask a Universe or Trajectory. QA samples are regenerated from masked
    trajectories instead of being masked in place, so their golds stay typed."""
    if isinstance(artifact, Universe):
        return mask_universe(artifact, m)
    if isinstance(artifact, Trajectory):
        return mask_trajectory(artifact, m)
    raise MaskingError(f"cannot mask {type(artifact).__name__}")


# ---------------------------------------------------------------------------
# Leakage scanning

_WORD = re.compile(r"[A-Za-z0-9_]+")


def _is_wordchar(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


def _scan_text(text: str, by_first: dict[str, list[str]], odd: list[str]) -> list[str]:
    hits = []
    for mo in _WORD.finditer(text):
        for token in by_first.get(mo.group(0), ()):
            end = mo.start() + len(token)
            if text.startswith(token, mo.start()):
                if end >= len(text) or not _is_wordchar(text[end]):
                    hits.append(token)
    for token in odd:  # tokens that do not begin with a word character
        start = text.find(token)
        while start != -1:
            end = start + len(token)
            left_ok = start == 0 or not _is_wordchar(text[start - 1])
            right_ok = end >= len(text) or not _is_wordchar(text[end])
            if left_ok and right_ok:
                hits.append(token)
            start = text.find(token, start + 1)
    return hits


def artifact_texts(artifact) -> list[str]:
    """Rendered text of a maskable artifact, one entry per message/field."""
    if isinstance(artifact, Trajectory):
        from guessbench.harness import serialize_trajectory
        from guessbench.postprocess import message_payload

        return [message_payload(m) for m in serialize_trajectory(artifact)]
    if isinstance(artifact, Universe):
        return sorted(artifact.vocabulary())
    if isinstance(artifact, str):
        return [artifact]
    return list(artifact)


def leakage_check(artifact, original_vocabulary) -> list[dict[str, Any]]:
    """Report every original vocabulary token still present in a masked artifact."""
    texts = artifact_texts(artifact)
    by_first: dict[str, list[str]] = {}
    odd: list[str] = []
    for token in original_vocabulary:
        first = _WORD.match(token)
        if first:
            by_first.setdefault(first.group(0), []).append(token)
        else:
            odd.append(token)
    leaks = []
    for i, text in enumerate(texts):
        for token in _scan_text(text, by_first, odd):
            leaks.append({"token": token, "text_index": i})
    return leaks
