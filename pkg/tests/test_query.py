import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guessbench.query import (
    ConciseResult,
    NumericCondition,
    QueryError,
    ToolQuery,
    ValueCondition,
    match_item,
    query_concise,
    query_from_json,
    query_to_json,
    query_verbose,
    result_from_json,
    result_to_json,
)


def names(result):
    return list(result.intersection)


def test_match_exclude_overlap(u3):
    c = ValueCondition("Type", ("Poison",), exclude=True)
    assert match_item(u3.item_by_name("C"), c) is False  # C has Poison
    assert match_item(u3.item_by_name("A"), c) is True


def test_match_numeric_strict_greater(u3):
    # a 278-stat item is excluded by "> 278"
    c = NumericCondition("Stat", ">", 300)
    assert match_item(u3.item_by_name("A"), c) is False
    assert match_item(u3.item_by_name("C"), c) is True


def test_match_include_any_of(u3):
    c = ValueCondition("Type", ("Grass", "Fire"))
    assert match_item(u3.item_by_name("B"), c) is True


def test_concise_empty_query_returns_all(u3):
    assert names(query_concise(u3, ToolQuery())) == ["A", "B", "C"]


def test_concise_single_include(u3):
    q = ToolQuery((ValueCondition("Type", ("Grass",)),))
    assert names(query_concise(u3, q)) == ["A", "C"]


def test_concise_conjunction(u3):
    q = ToolQuery((
        NumericCondition("Stat", ">", 260),
        ValueCondition("Type", ("Poison",), exclude=True),
    ))
    assert names(query_concise(u3, q)) == ["A"]


def test_verbose_single_section(u3):
    q = ToolQuery((ValueCondition("Type", ("Grass",)),))
    res = query_verbose(u3, q)
    assert [(s, list(c)) for s, _, c in res.per_section] == [("Type", ["A", "C"])]


def test_verbose_no_cross_section_filtering(u3):
    q = ToolQuery((
        ValueCondition("Type", ("Grass",)),
        NumericCondition("Stat", ">", 260),
    ))
    res = query_verbose(u3, q)
    per = {s: list(c) for s, _, c in res.per_section}
    assert per["Type"] == ["A", "C"]
    assert per["Stat"] == ["A", "C"]  # B drops out of Stat by its own condition only


def test_verbose_empty_query(u3):
    assert query_verbose(u3, ToolQuery()).per_section == ()


def test_condition_validation_errors(u3):
    with pytest.raises(Exception):
        query_concise(u3, ToolQuery((ValueCondition("Nope", ("x",)),)))
    with pytest.raises(QueryError):
        query_concise(u3, ToolQuery((ValueCondition("Stat", ("Grass",)),)))
    with pytest.raises(QueryError):
        query_concise(u3, ToolQuery((NumericCondition("Type", ">", 1),)))
    with pytest.raises(QueryError):
        query_concise(u3, ToolQuery((ValueCondition("Type", ()),)))
    with pytest.raises(QueryError):
        query_concise(u3, ToolQuery((ValueCondition("Type", ("Dragonish",)),)))
    with pytest.raises(QueryError, match="more than one numeric"):
        query_concise(u3, ToolQuery((
            NumericCondition("Stat", ">", 1), NumericCondition("Stat", "<", 9),
        )))


# --- random-query properties against the per-item oracle ---

def _queries(u):
    sections = u.schema.sections
    cat = [s for s in sections if s.kind == "categorical"]
    num = [s for s in sections if s.kind == "numeric"]

    def value_cond(draw_section, labels, exclude):
        return ValueCondition(draw_section.name, tuple(labels), exclude)

    cat_strategy = st.builds(
        value_cond,
        st.sampled_from(cat),
        st.lists(st.sampled_from(sorted({l for s in cat for l in s.domain})), min_size=1,
                 max_size=3, unique=True),
        st.booleans(),
    ).filter(lambda c: set(c.values) <= set(u.schema.section(c.section).domain))
    num_strategy = st.builds(
        lambda s, cmp, t: NumericCondition(s.name, cmp, t),
        st.sampled_from(num),
        st.sampled_from(["<", "<=", "==", ">=", ">", "!="]),
        st.integers(150, 750),
    )
    return st.lists(st.one_of(cat_strategy, num_strategy), max_size=4).map(
        lambda conds: ToolQuery(tuple(_dedupe_numeric(conds)))
    )


def _dedupe_numeric(conds):
    seen = set()
    out = []
    for c in conds:
        if isinstance(c, NumericCondition):
            if c.section in seen:
                continue
            seen.add(c.section)
        out.append(c)
    return out


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_concise_matches_item_oracle(small_universe, data):
    q = data.draw(_queries(small_universe))
    got = set(query_concise(small_universe, q).intersection)
    brute = {
        it.display_name
        for it in small_universe.items
        if all(match_item(it, c) for c in q.conditions)
    }
    assert got == brute


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_cross_format_consistency(small_universe, data):
    q = data.draw(_queries(small_universe))
    concise = set(query_concise(small_universe, q).intersection)
    verbose = query_verbose(small_universe, q)
    if not verbose.per_section:
        assert concise == {it.display_name for it in small_universe.items}
    else:
        folded = set.intersection(*[set(c) for _, _, c in verbose.per_section])
        assert concise == folded


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_monotonicity_adding_condition(small_universe, data):
    q = data.draw(_queries(small_universe))
    extra = data.draw(_queries(small_universe).filter(lambda x: len(x.conditions) == 1))
    if any(isinstance(c, NumericCondition) for c in extra.conditions) and any(
        isinstance(c, NumericCondition) and c.section == extra.conditions[0].section
        for c in q.conditions
    ):
        return  # would violate the one-numeric-per-section rule
    bigger = ToolQuery(q.conditions + extra.conditions)
    a = set(query_concise(small_universe, q).intersection)
    b = set(query_concise(small_universe, bigger).intersection)
    assert b <= a


def test_rendering_deterministic(small_universe):
    q = ToolQuery((ValueCondition("Type", ("A1V3", "A1V7"), exclude=True),
                   NumericCondition("Base Stats", ">", 278)))
    a = result_to_json(query_concise(small_universe, q))
    b = result_to_json(query_concise(small_universe, q))
    assert a == b


# --- wire format ---

def test_query_wire_format_field_names():
    q = ToolQuery((
        ValueCondition("Abilities", ("Shed Skin",), exclude=True),
        ValueCondition("Type", ("Grass",)),
        NumericCondition("Base Stats", ">", 278),
    ))
    obj = json.loads(query_to_json(q))
    assert obj["conditions"][0] == {
        "type": "value", "section": "Abilities", "values": ["Shed Skin"], "exclude": True,
    }
    assert obj["conditions"][1] == {"type": "value", "section": "Type", "values": ["Grass"]}
    assert obj["conditions"][2] == {
        "type": "numeric", "section": "Base Stats", "comparator": ">", "threshold": 278,
    }
    assert query_from_json(query_to_json(q)) == q


def test_result_wire_round_trip(u3):
    q = ToolQuery((ValueCondition("Type", ("Grass",)), NumericCondition("Stat", ">", 260)))
    concise = query_concise(u3, q)
    assert json.loads(result_to_json(concise)) == {"intersection": ["A", "C"]}
    assert result_from_json(result_to_json(concise)) == concise

    verbose = query_verbose(u3, q)
    obj = json.loads(result_to_json(verbose))
    assert [e["section"] for e in obj["per_section"]] == ["Type", "Stat"]
    assert "section" not in obj["per_section"][0]["conditions"][0]
    assert result_from_json(result_to_json(verbose)) == verbose
