"""Closed-world item sets: schema, loading, synthesis, validation.

The world is a finite list of items, each carrying the same attribute
sections (categorical label sets or integer scalars). Every item's full
attribute profile is unique, which is what makes the guessing game and
all downstream gold answers well defined.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from guessbench.util import rng_for, sha256_text

CATEGORICAL = "categorical"
NUMERIC = "numeric"


class UniverseError(ValueError):
    """Raised for unloadable or invariant-violating item data."""


@dataclass(frozen=True)
class Section:
    """One attribute section of the schema.

    domain: tuple of labels (categorical) or (lo, hi) inclusive (numeric).
    column: source field name in item files.
    max_values: cap on labels per item for categorical sections.
    """

    name: str
    kind: str
    domain: tuple = ()
    column: str = ""
    max_values: int = 3

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, NUMERIC):
            raise UniverseError(f"section {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL and self.domain and len(self.domain) == 0:
            raise UniverseError(f"section {self.name!r}: empty categorical domain")
        if self.kind == NUMERIC and self.domain:
            lo, hi = self.domain
            if lo > hi:
                raise UniverseError(f"section {self.name!r}: numeric range {lo}..{hi} is empty")


@dataclass(frozen=True)
class AttributeSchema:
    sections: tuple[Section, ...]

    def __post_init__(self):
        names = [s.name for s in self.sections]
        if len(set(names)) != len(names):
            raise UniverseError(f"duplicate section names in schema: {names}")

    def section(self, name: str) -> Section:
        for s in self.sections:
            if s.name == name:
                return s
        raise UniverseError(f"unknown section {name!r}")

    def section_names(self) -> list[str]:
        return [s.name for s in self.sections]


@dataclass(frozen=True)
class Item:
    id: int
    display_name: str
    dex_number: int | None
    attrs: dict[str, Any]  # section name -> frozenset[str] | int

    @property
    def dex(self) -> int:
        return self.dex_number if self.dex_number is not None else self.id

    def profile(self, schema: AttributeSchema) -> tuple:
        out = []
        for s in schema.sections:
            v = self.attrs[s.name]
            out.append(tuple(sorted(v)) if s.kind == CATEGORICAL else v)
        return tuple(out)


@dataclass
class Universe:
    schema: AttributeSchema
    items: list[Item]
    name_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.name_index:
            self.name_index = {it.display_name: it.id for it in self.items}

    def item_by_id(self, item_id: int) -> Item:
        return self._id_index()[item_id]

    def item_by_name(self, name: str) -> Item:
        return self.item_by_id(self.name_index[name])

    def _id_index(self) -> dict[int, Item]:
        idx = getattr(self, "_ids", None)
        if idx is None:
            idx = {it.id: it for it in self.items}
            object.__setattr__(self, "_ids", idx)
        return idx

    def sorted_names(self) -> list[str]:
        return sorted(it.display_name for it in self.items)

    def vocabulary(self) -> set[str]:
        """Every item name, section name, and categorical label in the world."""
        vocab = {it.display_name for it in self.items}
        for s in self.schema.sections:
            vocab.add(s.name)
            if s.kind == CATEGORICAL:
                vocab.update(s.domain)
        return vocab

    def fingerprint(self) -> str:
        return sha256_text(json.dumps(universe_to_record(self), sort_keys=True))


# ---------------------------------------------------------------------------
# Schema configuration (JSON document listing sections, kinds, domains)

DEFAULT_SCHEMA_CONFIG: dict[str, Any] = {
    "sections": [
        {"name": "Type", "kind": CATEGORICAL, "column": "type_list", "max_values": 2},
        {"name": "Abilities", "kind": CATEGORICAL, "column": "ability_list", "max_values": 3},
        {"name": "Base Stats", "kind": NUMERIC, "column": "base_stat_total"},
        {"name": "Generation", "kind": NUMERIC, "column": "generation"},
    ]
}


def schema_from_config(config: dict[str, Any]) -> AttributeSchema:
    sections = []
    for entry in config["sections"]:
        kind = entry["kind"]
        domain: tuple = ()
        if kind == CATEGORICAL and entry.get("domain"):
            domain = tuple(entry["domain"])
        elif kind == NUMERIC and entry.get("range"):
            lo, hi = entry["range"]
            domain = (int(lo), int(hi))
        sections.append(
            Section(
                name=entry["name"],
                kind=kind,
                domain=domain,
                column=entry.get("column", entry["name"].lower().replace(" ", "_")),
                max_values=int(entry.get("max_values", 3)),
            )
        )
    return AttributeSchema(tuple(sections))


def schema_to_config(schema: AttributeSchema) -> dict[str, Any]:
    sections = []
    for s in schema.sections:
        entry: dict[str, Any] = {"name": s.name, "kind": s.kind, "column": s.column}
        if s.kind == CATEGORICAL:
            entry["max_values"] = s.max_values
            if s.domain:
                entry["domain"] = list(s.domain)
        elif s.domain:
            entry["range"] = list(s.domain)
        sections.append(entry)
    return {"sections": sections}


# ---------------------------------------------------------------------------
# Loading

def _check_token(text: str, what: str, where: str) -> str:
    # names and labels are embedded verbatim in the feedback wire format
    if "\n" in text or "; " in text:
        raise UniverseError(f'{where}: {what} {text!r} may not contain newlines or "; "')
    return text


def _parse_cell(section: Section, raw: Any, where: str):
    if section.kind == NUMERIC:
        try:
            return int(raw)
        except (TypeError, ValueError):
            raise UniverseError(f"{where}: {section.column}={raw!r} is not an integer") from None
    if isinstance(raw, str):
        labels = [part.strip() for part in raw.split("|") if part.strip()]
    elif isinstance(raw, Iterable):
        labels = [str(part) for part in raw]
    else:
        raise UniverseError(f"{where}: {section.column}={raw!r} is not a label list")
    if not labels:
        raise UniverseError(f"{where}: {section.column} has no labels")
    return frozenset(_check_token(label, "label", where) for label in labels)


def _records_from_file(path: Path) -> list[dict[str, Any]]:
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json" or text.lstrip().startswith("["):
        data = json.loads(text)
        if not isinstance(data, list):
            raise UniverseError(f"{path}: JSON item file must be an array of records")
        return data
    reader = csv.DictReader(text.splitlines())
    return [dict(row) for row in reader]


def build_universe(records: list[dict[str, Any]], schema: AttributeSchema) -> Universe:
    """Assemble and check a Universe from raw field records (file order kept)."""
    items: list[Item] = []
    names: dict[str, int] = {}
    profiles: dict[tuple, int] = {}
    derived: dict[str, set] = {s.name: set() for s in schema.sections}

    for row_no, rec in enumerate(records):
        where = f"record {row_no}"
        name = rec.get("name")
        if not name:
            raise UniverseError(f"{where}: missing item name")
        name = _check_token(str(name), "item name", where)
        if name in names:
            raise UniverseError(f"{where}: duplicate item name {name!r}")
        dex = rec.get("dex")
        dex_number = int(dex) if dex not in (None, "") else None
        attrs: dict[str, Any] = {}
        for s in schema.sections:
            if s.column not in rec:
                raise UniverseError(f"{where}: missing column {s.column!r}")
            value = _parse_cell(s, rec[s.column], where)
            if s.domain:
                if s.kind == CATEGORICAL:
                    bad = value - set(s.domain)
                    if bad:
                        raise UniverseError(f"{where}: {sorted(bad)} outside domain of {s.name!r}")
                else:
                    lo, hi = s.domain
                    if not lo <= value <= hi:
                        raise UniverseError(f"{where}: {value} outside range of {s.name!r}")
            if s.kind == CATEGORICAL:
                derived[s.name].update(value)
            else:
                derived[s.name].add(value)
            attrs[s.name] = value
        item = Item(id=row_no, display_name=name, dex_number=dex_number, attrs=attrs)
        key = item.profile(schema)
        if key in profiles:
            other = records[profiles[key]].get("name")
            raise UniverseError(f"{where}: attribute profile duplicates item {other!r}")
        profiles[key] = row_no
        names[name] = row_no
        items.append(item)

    # Close open domains over the observed vocabulary.
    sections = []
    for s in schema.sections:
        if s.domain:
            sections.append(s)
        elif s.kind == CATEGORICAL:
            sections.append(Section(s.name, s.kind, tuple(sorted(derived[s.name])), s.column, s.max_values))
        else:
            values = derived[s.name] or {0}
            sections.append(Section(s.name, s.kind, (min(values), max(values)), s.column, s.max_values))
    return Universe(AttributeSchema(tuple(sections)), items)


def load_universe(path: str | Path, schema_config: dict[str, Any] | None = None) -> Universe:
    """Load an item file (CSV or JSON array) against a schema configuration."""
    schema = schema_from_config(schema_config or DEFAULT_SCHEMA_CONFIG)
    return build_universe(_records_from_file(Path(path)), schema)


def universe_to_record(u: Universe) -> dict[str, Any]:
    rows = []
    for it in u.items:
        rec: dict[str, Any] = {"name": it.display_name}
        if it.dex_number is not None:
            rec["dex"] = it.dex_number
        for s in u.schema.sections:
            v = it.attrs[s.name]
            rec[s.column] = sorted(v) if s.kind == CATEGORICAL else v
        rows.append(rec)
    return {"schema": schema_to_config(u.schema), "items": rows}


def save_universe(u: Universe, path: str | Path) -> None:
    """Write the JSON-array item file form accepted by load_universe."""
    record = universe_to_record(u)
    Path(path).write_text(json.dumps(record["items"], indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Synthetic worlds

@dataclass(frozen=True)
class SyntheticSectionSpec:
    name: str
    kind: str
    n_labels: int = 0          # categorical: size of the label vocabulary
    max_values: int = 1        # categorical: labels per item, 1..max_values
    lo: int = 0                # numeric range, inclusive
    hi: int = 0
    labels: tuple[str, ...] = ()  # optional explicit label vocabulary


@dataclass(frozen=True)
class SyntheticSpec:
    n_items: int
    sections: tuple[SyntheticSectionSpec, ...]


def default_synthetic_spec(n_items: int = 256) -> SyntheticSpec:
    """Four-section world shaped like the canonical schema.

    The ability vocabulary is kept small so that any single known label
    still matches a broad slice of the world; highly selective labels
    collapse simulated episodes within a few rounds.
    """
    return SyntheticSpec(
        n_items=n_items,
        sections=(
            SyntheticSectionSpec("Type", CATEGORICAL, n_labels=18, max_values=2),
            SyntheticSectionSpec("Abilities", CATEGORICAL, n_labels=14, max_values=3),
            SyntheticSectionSpec("Base Stats", NUMERIC, lo=180, hi=720),
            SyntheticSectionSpec("Generation", NUMERIC, lo=1, hi=9),
        ),
    )


def _section_capacity(spec: SyntheticSectionSpec) -> int:
    if spec.kind == NUMERIC:
        return spec.hi - spec.lo + 1
    d = spec.n_labels or len(spec.labels)
    return sum(math.comb(d, i) for i in range(1, spec.max_values + 1))


def generate_synthetic_universe(spec: SyntheticSpec, seed: int) -> Universe:
    """Deterministically synthesize a profile-distinct world of n_items."""
    capacity = math.prod(_section_capacity(s) for s in spec.sections)
    if capacity < spec.n_items:
        raise UniverseError(
            f"spec admits only {capacity} distinct profiles but n_items={spec.n_items}"
        )

    sections = []
    vocabs: dict[str, list[str]] = {}
    for j, s in enumerate(spec.sections, start=1):
        if s.kind == CATEGORICAL:
            labels = list(s.labels) if s.labels else [f"A{j}V{m}" for m in range(1, s.n_labels + 1)]
            vocabs[s.name] = labels
            sections.append(Section(s.name, CATEGORICAL, tuple(sorted(labels)), s.name.lower().replace(" ", "_"), s.max_values))
        else:
            sections.append(Section(s.name, NUMERIC, (s.lo, s.hi), s.name.lower().replace(" ", "_")))
    schema = AttributeSchema(tuple(sections))

    rng = rng_for(seed, "synthetic-universe")
    items: list[Item] = []
    seen: set[tuple] = set()
    attempts = 0
    while len(items) < spec.n_items:
        attempts += 1
        if attempts > spec.n_items * 1000:
            raise UniverseError("synthetic sampling failed to find enough distinct profiles")
        attrs: dict[str, Any] = {}
        for s in spec.sections:
            if s.kind == CATEGORICAL:
                count = rng.randint(1, s.max_values)
                attrs[s.name] = frozenset(rng.sample(vocabs[s.name], count))
            else:
                attrs[s.name] = rng.randint(s.lo, s.hi)
        k = len(items)
        item = Item(id=k, display_name=f"Item_{k + 1}", dex_number=k + 1, attrs=attrs)
        key = item.profile(schema)
        if key in seen:
            continue
        seen.add(key)
        items.append(item)
    return Universe(schema, items)


# ---------------------------------------------------------------------------
# Validation

def validate_universe(u: Universe) -> list[dict[str, Any]]:
    """Re-check every invariant; violations are returned, never raised."""
    report: list[dict[str, Any]] = []
    by_name: dict[str, int] = {}
    by_profile: dict[tuple, int] = {}
    section_names = set(u.schema.section_names())

    for it in u.items:
        if it.display_name in by_name:
            report.append({
                "rule": "duplicate-name",
                "item_ids": [by_name[it.display_name], it.id],
                "detail": it.display_name,
            })
        else:
            by_name[it.display_name] = it.id

        if set(it.attrs) != section_names:
            report.append({"rule": "section-mismatch", "item_ids": [it.id],
                           "detail": sorted(set(it.attrs) ^ section_names)})
            continue
        ok = True
        for s in u.schema.sections:
            v = it.attrs[s.name]
            if s.kind == CATEGORICAL:
                if not isinstance(v, frozenset) or not v:
                    report.append({"rule": "bad-categorical", "item_ids": [it.id], "detail": s.name})
                    ok = False
                elif s.domain and v - set(s.domain):
                    report.append({"rule": "outside-domain", "item_ids": [it.id], "detail": s.name})
                    ok = False
            else:
                if not isinstance(v, int):
                    report.append({"rule": "bad-numeric", "item_ids": [it.id], "detail": s.name})
                    ok = False
                elif s.domain and not s.domain[0] <= v <= s.domain[1]:
                    report.append({"rule": "outside-range", "item_ids": [it.id], "detail": s.name})
                    ok = False
        if not ok:
            continue
        key = it.profile(u.schema)
        if key in by_profile:
            report.append({"rule": "duplicate-profile", "item_ids": [by_profile[key], it.id]})
        else:
            by_profile[key] = it.id
    return report
