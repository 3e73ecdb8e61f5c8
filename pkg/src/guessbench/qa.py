"""Eight question generators with deterministic golds, evidence spans, ACL.

Every gold is computed from the recorded trajectory structure and is
independently recomputable from the rendered message text alone; the test
suite carries exactly that string-level oracle.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from guessbench.harness import serialize_to_wire
from guessbench.postprocess import (
    DEFAULT_COUNTER,
    BucketSpec,
    TokenCounter,
    TruncationError,
    count_tokens,
    truncate_whole_rounds,
    verify_final_guess,
)
from guessbench.query import ConciseResult, VerboseResult
from guessbench.rollout import CONCISE, RoundRecord, Trajectory
from guessbench.universe import CATEGORICAL, NUMERIC
from guessbench.util import derive_seed, rng_for

QUESTION_TYPES = (
    "count_frequency_tool",
    "find_duplicates",
    "find_target_offsets",
    "count_correctness",
    "count_frequency_env",
    "round_largest_value",
    "weighted_summation",
    "intersection",
)

TOOL_RESPONSE_TYPES = ("count_frequency_tool", "find_duplicates", "find_target_offsets")
ENV_RESPONSE_TYPES = (
    "count_correctness",
    "count_frequency_env",
    "round_largest_value",
    "weighted_summation",
)

# Question wording ships here so deployments can extend or restyle it; the
# braces are filled with plain str.format.
TEMPLATES = {
    "count_frequency_tool": (
        "How many times does {item} appear in the tool result lists of Round {round}? "
        "Answer with a single integer."
    ),
    "find_duplicates": (
        "Does {item} appear in the tool result values of both Round {i} and Round {j}? "
        "Answer yes or no."
    ),
    "find_target_offsets_concise": (
        "In the intersection list returned by the tool in Round {round}, which two items "
        "immediately follow the first occurrence of {item}? Answer with both names in "
        "order, separated by a comma."
    ),
    "find_target_offsets_verbose": (
        "In the {section} candidate list returned by the tool in Round {round}, which two "
        "items immediately follow the first occurrence of {item}? Answer with both names "
        "in order, separated by a comma."
    ),
    "count_correctness": (
        "In the feedback for Round {round}, how many attribute sections were judged fully "
        "correct (every listed label or value marked correct)? Answer with a single integer."
    ),
    "count_frequency_env": (
        "Across the feedback of all rounds, in how many rounds does the value {value} "
        "appear? Count each round at most once. Answer with a single integer."
    ),
    "round_largest_value": (
        "Which round's feedback reports the highest {section} value? If several rounds "
        "tie, answer the earliest such round. Answer with the round number."
    ),
    "weighted_summation": (
        "Score a round by summing the weights of the attribute sections judged fully "
        "correct in its feedback, using weights {weights}. What is the absolute "
        "difference between the scores of Round {i} and Round {j}? Answer with a single "
        "integer."
    ),
    "intersection_concise": (
        "Exactly one item appears in every tool result intersection of this episode. "
        "Which item is it? Answer with the item name."
    ),
    "intersection_verbose": (
        "Which items appear in every candidate list of the tool result in Round {round}? "
        "Answer with the item names separated by commas."
    ),
}

VERBOSE_INTERSECTION_MAX_GOLD = 12


class IneligibleSample(ValueError):
    """No eligible round/item for the requested question; the sampler retries."""


class QuotaError(RuntimeError):
    pass


@dataclass
class QASample:
    sample_id: str
    setting: str
    format: str
    bucket_limit: int
    question_type: str
    messages: list[dict]
    question_text: str
    gold: Any
    evidence_spans: list[int]
    acl_tokens: int
    seed: int
    weights_used: dict[str, int] | None = None

    def to_obj(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "setting": self.setting,
            "format": self.format,
            "bucket_limit": self.bucket_limit,
            "question_type": self.question_type,
            "messages": self.messages,
            "question_text": self.question_text,
            "gold": list(self.gold) if isinstance(self.gold, tuple) else self.gold,
            "evidence_spans": list(self.evidence_spans),
            "acl_tokens": self.acl_tokens,
            "seed": self.seed,
            "weights_used": self.weights_used,
        }

    @classmethod
    def from_obj(cls, obj: dict[str, Any]) -> "QASample":
        return cls(**obj)


@dataclass(frozen=True)
class WeightTable:
    weights: dict[str, int]

    def __post_init__(self):
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("weights must be non-negative")

    def text(self, section_order: list[str]) -> str:
        inner = ", ".join(f"{s}: {self.weights[s]}" for s in section_order)
        return "{" + inner + "}"


_POSITIONAL_WEIGHTS = (6, 5, 4)


def default_weights(section_names: list[str]) -> WeightTable:
    """6/5/4 for the first three sections, 1 elsewhere.

    Positional so the table survives symbol masking unchanged; on the
    canonical schema this is exactly Type 6, Abilities 5, Base Stats 4.
    """
    weights = {}
    for pos, name in enumerate(section_names):
        weights[name] = _POSITIONAL_WEIGHTS[pos] if pos < len(_POSITIONAL_WEIGHTS) else 1
    return WeightTable(weights)


@dataclass(frozen=True)
class QuotaConfig:
    cells: dict[int, dict[str, int]]  # bucket limit -> question type -> count

    def __post_init__(self):
        for bucket, row in self.cells.items():
            for qtype, count in row.items():
                if qtype not in QUESTION_TYPES:
                    raise ValueError(f"unknown question type {qtype!r}")
                if count < 0:
                    raise ValueError(f"negative quota for {bucket}/{qtype}")

    @classmethod
    def from_obj(cls, obj: dict[str, Any]) -> "QuotaConfig":
        cells = {}
        for bucket, row in obj["buckets"].items():
            cells[int(bucket)] = {q: int(n) for q, n in row.items()}
        return cls(cells)

    def to_obj(self) -> dict[str, Any]:
        return {"buckets": {str(b): dict(row) for b, row in sorted(self.cells.items())}}


# ---------------------------------------------------------------------------
# Sample context: one truncated trajectory, serialized, with index maps

_ROUND_HEADER = re.compile(r"^Round (\d+): ")


@dataclass
class SampleContext:
    trajectory: Trajectory
    messages: list[dict]
    msg_tokens: list[int]
    tokens_total: int
    records: dict[int, RoundRecord]      # display round index -> record
    feedback_msg: dict[int, int]         # display round index -> message index
    tool_msg: dict[int, int]             # display round index -> message index
    counter: TokenCounter = DEFAULT_COUNTER

    @property
    def format(self) -> str:
        return self.trajectory.meta.get("config", {}).get("format", CONCISE)

    @property
    def setting(self) -> str:
        return self.trajectory.meta.get("config", {}).get("setting", "knowledge-intensive")

    def tool_rounds(self) -> list[int]:
        return sorted(self.tool_msg)

    def all_rounds(self) -> list[int]:
        return sorted(self.feedback_msg)

    def result_names(self, round_index: int) -> list[str]:
        """Every name in the round's tool result (verbose: union of lists)."""
        res = self.records[round_index].tool_result
        if isinstance(res, ConciseResult):
            return list(res.intersection)
        names: list[str] = []
        for _, _, cands in res.per_section:
            names.extend(cands)
        return names


def make_context(
    t: Trajectory, counter: TokenCounter = DEFAULT_COUNTER
) -> SampleContext:
    messages = serialize_to_wire(t)
    msg_tokens = [count_tokens(m, counter) for m in messages]
    records = {r.index: r for r in t.all_rounds()}
    feedback_msg: dict[int, int] = {}
    tool_msg: dict[int, int] = {}
    for i, msg in enumerate(messages):
        if msg["role"] == "user":
            header = _ROUND_HEADER.match(msg["content"] or "")
            if header:
                feedback_msg[int(header.group(1))] = i
        elif msg["role"] == "tool":
            # the guess right after the tool result belongs to the same round
            header = _ROUND_HEADER.match(messages[i + 2]["content"] or "")
            tool_msg[int(header.group(1))] = i
    return SampleContext(
        trajectory=t,
        messages=messages,
        msg_tokens=msg_tokens,
        tokens_total=sum(msg_tokens),
        records=records,
        feedback_msg=feedback_msg,
        tool_msg=tool_msg,
        counter=counter,
    )


def compute_acl(sample: QASample, counter: TokenCounter = DEFAULT_COUNTER) -> int:
    return sum(count_tokens(sample.messages[i], counter) for i in sample.evidence_spans)


def _finish(
    ctx: SampleContext,
    question_type: str,
    question_text: str,
    gold: Any,
    evidence: list[int],
    *,
    sample_id: str = "",
    bucket_limit: int = 0,
    seed: int = 0,
    weights_used: dict[str, int] | None = None,
) -> QASample:
    evidence = sorted(evidence)
    return QASample(
        sample_id=sample_id,
        setting=ctx.setting,
        format=ctx.format,
        bucket_limit=bucket_limit,
        question_type=question_type,
        messages=ctx.messages,
        question_text=question_text,
        gold=gold,
        evidence_spans=evidence,
        acl_tokens=sum(ctx.msg_tokens[i] for i in evidence),
        seed=seed,
        weights_used=weights_used,
    )


# ---------------------------------------------------------------------------
# The eight generators

def _require_tool_round(ctx: SampleContext, round_index: int) -> RoundRecord:
    if round_index not in ctx.tool_msg:
        raise IneligibleSample(f"round {round_index} has no tool result")
    return ctx.records[round_index]


def gen_count_frequency_tool(ctx: SampleContext, round_index: int, item: str, **kw) -> QASample:
    rec = _require_tool_round(ctx, round_index)
    res = rec.tool_result
    if isinstance(res, ConciseResult):
        gold = 1 if item in res.intersection else 0
    else:
        gold = sum(1 for _, _, cands in res.per_section if item in cands)
    text = TEMPLATES["count_frequency_tool"].format(item=item, round=round_index)
    return _finish(ctx, "count_frequency_tool", text, gold, [ctx.tool_msg[round_index]], **kw)


def gen_find_duplicates(ctx: SampleContext, round_i: int, round_j: int, item: str, **kw) -> QASample:
    if round_i == round_j:
        raise IneligibleSample("duplicate detection needs two distinct rounds")
    _require_tool_round(ctx, round_i)
    _require_tool_round(ctx, round_j)
    gold = item in ctx.result_names(round_i) and item in ctx.result_names(round_j)
    text = TEMPLATES["find_duplicates"].format(item=item, i=round_i, j=round_j)
    evidence = [ctx.tool_msg[round_i], ctx.tool_msg[round_j]]
    return _finish(ctx, "find_duplicates", text, gold, evidence, **kw)


def gen_find_target_offsets(
    ctx: SampleContext, round_index: int, item: str, section: str | None = None, **kw
) -> QASample:
    rec = _require_tool_round(ctx, round_index)
    res = rec.tool_result
    if isinstance(res, ConciseResult):
        names = list(res.intersection)
        text = TEMPLATES["find_target_offsets_concise"].format(item=item, round=round_index)
    else:
        if section is None:
            raise IneligibleSample("verbose offsets need a designated section")
        per = {s: list(c) for s, _, c in res.per_section}
        if section not in per:
            raise IneligibleSample(f"round {round_index} did not query section {section!r}")
        names = per[section]
        text = TEMPLATES["find_target_offsets_verbose"].format(
            item=item, round=round_index, section=section
        )
    try:
        pos = names.index(item)
    except ValueError:
        raise IneligibleSample(f"{item!r} not in the designated list") from None
    if pos > len(names) - 3:
        raise IneligibleSample(f"{item!r} has fewer than two followers")
    gold = [names[pos + 1], names[pos + 2]]
    return _finish(ctx, "find_target_offsets", text, gold, [ctx.tool_msg[round_index]], **kw)


def gen_count_correctness(ctx: SampleContext, round_index: int, **kw) -> QASample:
    if round_index not in ctx.records:
        raise IneligibleSample(f"no round {round_index}")
    fb = ctx.records[round_index].feedback
    gold = sum(1 for sec in fb.sections if sec.fully_correct())
    text = TEMPLATES["count_correctness"].format(round=round_index)
    return _finish(ctx, "count_correctness", text, gold, [ctx.feedback_msg[round_index]], **kw)


def gen_count_frequency_env(ctx: SampleContext, value: str, **kw) -> QASample:
    gold = 0
    for idx in ctx.all_rounds():
        fb = ctx.records[idx].feedback
        seen = any(
            label == value
            for sec in fb.sections
            if sec.kind == CATEGORICAL
            for label, _ in sec.entries
        )
        gold += 1 if seen else 0
    text = TEMPLATES["count_frequency_env"].format(value=value)
    evidence = [ctx.feedback_msg[i] for i in ctx.all_rounds()]
    return _finish(ctx, "count_frequency_env", text, gold, evidence, **kw)


def gen_round_largest_value(ctx: SampleContext, section: str, **kw) -> QASample:
    best_round, best_value = None, None
    for idx in ctx.all_rounds():
        fb = ctx.records[idx].feedback
        for sec in fb.sections:
            if sec.section == section and sec.kind == NUMERIC:
                value = sec.entries[0][0]
                if best_value is None or value > best_value:
                    best_round, best_value = idx, value
    if best_round is None:
        raise IneligibleSample(f"no numeric section {section!r} in any feedback")
    text = TEMPLATES["round_largest_value"].format(section=section)
    evidence = [ctx.feedback_msg[i] for i in ctx.all_rounds()]
    return _finish(ctx, "round_largest_value", text, best_round, evidence, **kw)


def _round_score(ctx: SampleContext, round_index: int, w: WeightTable) -> int:
    fb = ctx.records[round_index].feedback
    return sum(w.weights[sec.section] for sec in fb.sections if sec.fully_correct())


def gen_weighted_summation(
    ctx: SampleContext, round_i: int, round_j: int, w: WeightTable, **kw
) -> QASample:
    for idx in (round_i, round_j):
        if idx not in ctx.records:
            raise IneligibleSample(f"no round {idx}")
    sections = [sec.section for sec in ctx.records[round_i].feedback.sections]
    missing = [s for s in sections if s not in w.weights]
    if missing:
        raise IneligibleSample(f"weight table lacks sections {missing}")
    gold = abs(_round_score(ctx, round_i, w) - _round_score(ctx, round_j, w))
    text = TEMPLATES["weighted_summation"].format(weights=w.text(sections), i=round_i, j=round_j)
    evidence = sorted({ctx.feedback_msg[round_i], ctx.feedback_msg[round_j]})
    return _finish(
        ctx, "weighted_summation", text, gold, evidence,
        weights_used=dict(w.weights), **kw,
    )


def gen_intersection(ctx: SampleContext, round_index: int | None = None, **kw) -> QASample:
    if ctx.format == CONCISE:
        report = verify_final_guess(ctx.trajectory)
        if not report["solvable"]:
            raise IneligibleSample("running intersection does not pin the target")
        gold = ctx.trajectory.meta["target_name"]
        text = TEMPLATES["intersection_concise"]
        evidence = [ctx.tool_msg[i] for i in ctx.tool_rounds()]
        return _finish(ctx, "intersection", text, gold, evidence, **kw)

    if round_index is None:
        raise IneligibleSample("verbose intersection needs a designated round")
    rec = _require_tool_round(ctx, round_index)
    res = rec.tool_result
    assert isinstance(res, VerboseResult)
    sets = [set(cands) for _, _, cands in res.per_section]
    if not sets:
        raise IneligibleSample("empty verbose result")
    shared = sorted(set.intersection(*sets))
    if not 1 <= len(shared) <= VERBOSE_INTERSECTION_MAX_GOLD:
        raise IneligibleSample(f"intersection of size {len(shared)} is not answerable")
    text = TEMPLATES["intersection_verbose"].format(round=round_index)
    return _finish(ctx, "intersection", text, shared, [ctx.tool_msg[round_index]], **kw)


# ---------------------------------------------------------------------------
# Parameter sampling per type

def _dedupe(items) -> list:
    seen = set()
    out = []
    for x in items:
        if x not in seen:
            seen.add(x)
            out.append(x)
    return out


def _all_seen_names(ctx: SampleContext) -> list[str]:
    # first-seen order, so sampling positions survive symbol masking
    return _dedupe(n for idx in ctx.tool_rounds() for n in ctx.result_names(idx))


def _seen_labels(ctx: SampleContext) -> list[str]:
    return _dedupe(
        label
        for idx in ctx.all_rounds()
        for sec in ctx.records[idx].feedback.sections
        if sec.kind == CATEGORICAL
        for label, _ in sec.entries
    )


def _numeric_sections(ctx: SampleContext) -> list[str]:
    first = ctx.records[min(ctx.records)].feedback
    return [sec.section for sec in first.sections if sec.kind == NUMERIC]


def draw_sample(ctx: SampleContext, qtype: str, rng, weights: WeightTable | None = None, **kw) -> QASample:
    """Pick parameters for one question and generate it (IneligibleSample on a bad draw)."""
    tool_rounds = ctx.tool_rounds()
    all_rounds = ctx.all_rounds()

    if qtype == "count_frequency_tool":
        if not tool_rounds:
            raise IneligibleSample("no tool rounds")
        r = tool_rounds[rng.randrange(len(tool_rounds))]
        names = ctx.result_names(r)
        if rng.random() < 0.25:
            pool = _all_seen_names(ctx)
        else:
            pool = names
        if not pool:
            raise IneligibleSample("no items to ask about")
        return gen_count_frequency_tool(ctx, r, pool[rng.randrange(len(pool))], **kw)

    if qtype == "find_duplicates":
        if len(tool_rounds) < 2:
            raise IneligibleSample("needs two tool rounds")
        i, j = sorted(rng.sample(tool_rounds, 2))
        pool = _dedupe(ctx.result_names(i) + ctx.result_names(j))
        return gen_find_duplicates(ctx, i, j, pool[rng.randrange(len(pool))], **kw)

    if qtype == "find_target_offsets":
        if not tool_rounds:
            raise IneligibleSample("no tool rounds")
        r = tool_rounds[rng.randrange(len(tool_rounds))]
        rec = ctx.records[r]
        section = None
        if isinstance(rec.tool_result, VerboseResult):
            entries = [(s, list(c)) for s, _, c in rec.tool_result.per_section]
            eligible = [(s, c) for s, c in entries if len(c) >= 3]
            if not eligible:
                raise IneligibleSample("all candidate lists too short")
            section, names = eligible[rng.randrange(len(eligible))]
        else:
            names = list(rec.tool_result.intersection)
            if len(names) < 3:
                raise IneligibleSample("intersection too short")
        item = names[rng.randrange(len(names) - 2)]
        return gen_find_target_offsets(ctx, r, item, section=section, **kw)

    if qtype == "count_correctness":
        r = all_rounds[rng.randrange(len(all_rounds))]
        return gen_count_correctness(ctx, r, **kw)

    if qtype == "count_frequency_env":
        labels = _seen_labels(ctx)
        if not labels:
            raise IneligibleSample("no categorical labels in feedback")
        return gen_count_frequency_env(ctx, labels[rng.randrange(len(labels))], **kw)

    if qtype == "round_largest_value":
        numerics = _numeric_sections(ctx)
        if not numerics:
            raise IneligibleSample("no numeric sections")
        return gen_round_largest_value(ctx, numerics[rng.randrange(len(numerics))], **kw)

    if qtype == "weighted_summation":
        if len(all_rounds) < 2:
            raise IneligibleSample("needs two rounds")
        i, j = sorted(rng.sample(all_rounds, 2))
        w = weights or default_weights(
            [sec.section for sec in ctx.records[all_rounds[0]].feedback.sections]
        )
        return gen_weighted_summation(ctx, i, j, w, **kw)

    if qtype == "intersection":
        if ctx.format == CONCISE:
            return gen_intersection(ctx, **kw)
        if not tool_rounds:
            raise IneligibleSample("no tool rounds")
        order = list(tool_rounds)
        start = rng.randrange(len(order))
        for k in range(len(order)):
            r = order[(start + k) % len(order)]
            try:
                return gen_intersection(ctx, round_index=r, **kw)
            except IneligibleSample:
                continue
        raise IneligibleSample("no verbose round with an answerable intersection")

    raise ValueError(f"unknown question type {qtype!r}")


# ---------------------------------------------------------------------------
# Dataset assembly

_SETTING_TAG = {"knowledge-intensive": "ki", "knowledge-free": "kf"}


def build_dataset(
    corpus: list[Trajectory],
    quota: QuotaConfig,
    seed: int,
    *,
    bucket_spec: BucketSpec | None = None,
    counter: TokenCounter = DEFAULT_COUNTER,
    weights: WeightTable | None = None,
    prefix_transform=None,
) -> list[QASample]:
    """Exact per-(bucket, type) quota counts, deterministically sampled.

    prefix_transform, when given, is applied to each truncated trajectory
    before question generation (e.g. symbol masking); eligibility and
    sampling positions are unchanged, so a transformed run yields samples
    structurally paired with the untransformed run.
    """
    spec = bucket_spec or BucketSpec()
    prepared: dict[tuple[int, int], SampleContext | None] = {}

    def prefix_for(traj_idx: int, limit: int) -> SampleContext | None:
        key = (traj_idx, limit)
        if key not in prepared:
            t = corpus[traj_idx]
            try:
                truncated = truncate_whole_rounds(t, limit, counter)
            except TruncationError:
                prepared[key] = None
                return None
            tokens = truncated.meta["truncated_tokens"]
            if tokens <= spec.fill_floor * limit:
                prepared[key] = None
            else:
                if prefix_transform is not None:
                    truncated = prefix_transform(truncated)
                prepared[key] = make_context(truncated, counter)
        return prepared[key]

    samples: list[QASample] = []
    for limit in sorted(quota.cells):
        for qtype in QUESTION_TYPES:
            count = quota.cells[limit].get(qtype, 0)
            for k in range(count):
                sample_seed = derive_seed(seed, "sample", limit, qtype, k)
                rng = rng_for(sample_seed, "draw")
                start = rng.randrange(len(corpus)) if corpus else 0
                sample = None
                for probe in range(len(corpus)):
                    ctx = prefix_for((start + probe) % len(corpus), limit)
                    if ctx is None:
                        continue
                    tag = _SETTING_TAG.get(ctx.setting, ctx.setting)
                    sid = f"{tag}-{ctx.format}-{limit}-{qtype}-{k:04d}"
                    try:
                        sample = draw_sample(
                            ctx, qtype, rng, weights=weights,
                            sample_id=sid, bucket_limit=limit, seed=sample_seed,
                        )
                        break
                    except IneligibleSample:
                        continue
                if sample is None:
                    raise QuotaError(
                        f"quota infeasible: bucket {limit}, type {qtype}, "
                        f"sample {k + 1} of {count} (corpus of {len(corpus)})"
                    )
                samples.append(sample)
    return samples


def save_dataset(samples: list[QASample], path) -> None:
    import json

    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            f.write(json.dumps(s.to_obj(), ensure_ascii=False) + "\n")


def load_dataset(path) -> list[QASample]:
    import json

    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(QASample.from_obj(json.loads(line)))
    return out
