"""Simulated agent rollouts: [tool call, tool result, guess, feedback] rounds.

The simulated player is deliberately imperfect. It remembers feedback
through a rolling window, forgets older constraints probabilistically,
masks whole sections of its query, and occasionally relaxes a numeric
bound, which keeps candidate lists broad and episodes long.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Any

from guessbench.environment import (
    CORRECT,
    TOO_HIGH,
    TOO_LOW,
    Feedback,
    SectionFeedback,
    feedback_on_guess,
    new_game,
    render_feedback,
)
from guessbench.query import (
    ConciseResult,
    Condition,
    NumericCondition,
    ToolQuery,
    ValueCondition,
    VerboseResult,
    concise_to_obj,
    condition_from_obj,
    query_concise,
    query_from_obj,
    query_to_json,
    query_to_obj,
    query_verbose,
    result_to_json,
    verbose_to_obj,
)
from guessbench.universe import NUMERIC, Universe
from guessbench.util import derive_seed, rng_for

CONCISE = "concise"
VERBOSE = "verbose"
KNOWLEDGE_INTENSIVE = "knowledge-intensive"
KNOWLEDGE_FREE = "knowledge-free"

TOOL_NAME = "query_pokemon"
THINK_TEXT = "<think>Thinking and calling query_pokemon.</think>"

# Message token accounting mirrored by postprocess.count_tokens: the payload
# of a message is its content plus any tool-call function name + arguments.
_PER_MESSAGE_OVERHEAD = 4


def _payload_tokens(payload: str) -> int:
    return (len(payload.encode("utf-8")) + 3) // 4 + _PER_MESSAGE_OVERHEAD


@dataclass(frozen=True)
class RolloutConfig:
    format: str = CONCISE
    setting: str = KNOWLEDGE_INTENSIVE
    max_rounds: int = 2010
    epsilon: float = 0.15
    history_window: int = 6
    forget_history_prob: float = 0.25
    mask_prob: float = 0.5
    max_mask_sections: int = 2
    seed: int = 0
    token_budget: int | None = None  # stop once the serialized episode crosses this

    def __post_init__(self):
        if self.format not in (CONCISE, VERBOSE):
            raise ValueError(f"unknown format {self.format!r}")
        if self.setting not in (KNOWLEDGE_INTENSIVE, KNOWLEDGE_FREE):
            raise ValueError(f"unknown setting {self.setting!r}")
        for name in ("epsilon", "forget_history_prob", "mask_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")
        if self.history_window < 1:
            raise ValueError("history_window must be >= 1")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.max_mask_sections < 0:
            raise ValueError("max_mask_sections must be >= 0")


@dataclass(frozen=True)
class RoundRecord:
    index: int
    tool_query: ToolQuery | None
    tool_result: ConciseResult | VerboseResult | None
    guess_id: int
    guess_name: str
    feedback: Feedback


@dataclass
class Trajectory:
    system_prompt: str
    initial_guess: RoundRecord | None
    rounds: list[RoundRecord]
    meta: dict[str, Any] = field(default_factory=dict)

    def all_rounds(self) -> list[RoundRecord]:
        head = [self.initial_guess] if self.initial_guess is not None else []
        return head + list(self.rounds)

    @property
    def total_rounds(self) -> int:
        return len(self.all_rounds())


def build_system_prompt(u: Universe, max_rounds: int, fmt: str) -> str:
    lines = [
        "You are playing a guess-the-Pokemon game. One hidden target has been "
        f"chosen from a closed world of {len(u.items)} items.",
        f"Each round you may call the {TOOL_NAME} tool with structured conditions "
        "over the attribute sections below, read its result, and then commit to "
        "exactly one guess written as <answer>Item Name</answer>.",
        "After every guess the environment reveals the guessed item's full profile, "
        "judging each categorical label and giving a direction (too low / too high) "
        "for each numeric value.",
        "",
        "Attribute sections:",
    ]
    for s in u.schema.sections:
        if s.kind == NUMERIC:
            lo, hi = s.domain if s.domain else (0, 0)
            lines.append(f" - {s.name}: numeric, {lo}..{hi}")
        else:
            lines.append(f" - {s.name}: categorical, {len(s.domain)} possible labels")
    if fmt == CONCISE:
        tool_line = ("The tool returns the single intersection of items satisfying "
                     "all conditions.")
    else:
        tool_line = ("The tool returns one unfiltered candidate list per queried "
                     "section; intersect them yourself.")
    lines += ["", tool_line, f"The game ends on a correct guess or after {max_rounds} rounds."]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Constraint derivation

@dataclass(frozen=True)
class _Fact:
    round_index: int
    section: str
    kind: str  # include | exclude | bound | exact
    label: str = ""
    direction: str = ""
    value: int = 0


def _facts_from_feedback(fb: Feedback) -> list[_Fact]:
    facts: list[_Fact] = []
    for sec in fb.sections:
        if sec.kind == NUMERIC:
            value, judgment = sec.entries[0]
            if judgment == CORRECT:
                facts.append(_Fact(fb.round_index, sec.section, "exact", value=value))
            elif judgment == TOO_LOW:
                facts.append(_Fact(fb.round_index, sec.section, "bound", direction=">", value=value))
            elif judgment == TOO_HIGH:
                facts.append(_Fact(fb.round_index, sec.section, "bound", direction="<", value=value))
        else:
            for label, judgment in sec.entries:
                kind = "include" if judgment == CORRECT else "exclude"
                facts.append(_Fact(fb.round_index, sec.section, kind, label=label))
    return facts


def _derive_from_facts(facts: list[_Fact], cfg: RolloutConfig, rng) -> ToolQuery:
    rounds_seen: list[int] = []
    for f in facts:
        if not rounds_seen or rounds_seen[-1] != f.round_index:
            rounds_seen.append(f.round_index)
    window = set(rounds_seen[-cfg.history_window:])

    surviving = [
        f for f in facts
        if f.round_index in window or rng.random() >= cfg.forget_history_prob
    ]

    # The queried direction per numeric section sticks to the first bound ever
    # learned (until an exact value is known), so that under zero noise each
    # query strictly implies the previous one.
    sticky: dict[str, str] = {}
    for f in facts:
        if f.kind == "bound" and f.section not in sticky:
            sticky[f.section] = f.direction

    section_order: list[str] = []
    includes: dict[str, set[str]] = {}
    excludes: dict[str, set[str]] = {}
    exacts: dict[str, list[_Fact]] = {}
    bounds: dict[str, list[_Fact]] = {}
    for f in surviving:
        if f.section not in section_order:
            section_order.append(f.section)
        if f.kind == "include":
            includes.setdefault(f.section, set()).add(f.label)
        elif f.kind == "exclude":
            excludes.setdefault(f.section, set()).add(f.label)
        elif f.kind == "exact":
            exacts.setdefault(f.section, []).append(f)
        else:
            bounds.setdefault(f.section, []).append(f)

    per_section: dict[str, list[Condition]] = {}
    bound_history: dict[str, list[int]] = {}
    for section in section_order:
        conds: list[Condition] = []
        if includes.get(section):
            # one any-of condition; a conjunction of single-label includes
            # would pin multi-valued sections to a handful of items
            conds.append(ValueCondition(section, tuple(sorted(includes[section])), exclude=False))
        if excludes.get(section):
            conds.append(ValueCondition(section, tuple(sorted(excludes[section])), exclude=True))
        direction = sticky.get(section, "")
        same_dir = sorted({f.value for f in bounds.get(section, []) if f.direction == direction})
        bound_history[section] = same_dir
        if exacts.get(section):
            latest = max(exacts[section], key=lambda f: f.round_index)
            conds.append(NumericCondition(section, "==", latest.value))
        elif same_dir:
            tightest = same_dir[-1] if direction == ">" else same_dir[0]
            conds.append(NumericCondition(section, direction, tightest))
        if conds:
            per_section[section] = conds

    masked = 0
    mask_order = list(per_section)
    rng.shuffle(mask_order)  # rotate which sections survive the cap
    for section in mask_order:
        if masked >= cfg.max_mask_sections:
            break
        if rng.random() < cfg.mask_prob:
            del per_section[section]
            masked += 1

    conditions: list[Condition] = []
    for section in section_order:
        conditions.extend(per_section.get(section, ()))

    numeric_idx = [i for i, c in enumerate(conditions) if isinstance(c, NumericCondition)]
    if numeric_idx and rng.random() < cfg.epsilon:
        i = numeric_idx[rng.randrange(len(numeric_idx))]
        cond = conditions[i]
        assert isinstance(cond, NumericCondition)
        history = bound_history.get(cond.section, [])
        direction = sticky.get(cond.section, "")
        looser: int | None = None
        if cond.comparator == "==":
            if history:
                looser = history[-1] if direction == ">" else history[0]
                cond = NumericCondition(cond.section, direction, looser)
                conditions[i] = cond
        else:
            prior = [v for v in history if (v < cond.threshold if direction == ">" else v > cond.threshold)]
            if prior:
                looser = prior[-1] if direction == ">" else prior[0]
                conditions[i] = NumericCondition(cond.section, direction, looser)

    return ToolQuery(tuple(conditions))


def derive_constraints(feedback_log: list[Feedback], cfg: RolloutConfig, rng) -> ToolQuery:
    """Build the next tool query from remembered feedback constraints."""
    if not feedback_log:
        raise ValueError("feedback log is empty")
    facts: list[_Fact] = []
    for fb in feedback_log:
        facts.extend(_facts_from_feedback(fb))
    return _derive_from_facts(facts, cfg, rng)


def select_guess(u: Universe, candidates: list[str], rng, exclude_ids=frozenset()) -> int:
    """Uniform seeded draw from the candidate names, never repeating a guess."""
    pool = [n for n in candidates if u.name_index[n] not in exclude_ids]
    if not pool:
        pool = [n for n in u.sorted_names() if u.name_index[n] not in exclude_ids]
    if not pool:
        pool = u.sorted_names()
    return u.name_index[pool[rng.randrange(len(pool))]]


def verbose_candidates(res: VerboseResult, u: Universe) -> list[str]:
    if not res.per_section:
        return u.sorted_names()
    sets = [set(cands) for _, _, cands in res.per_section]
    return sorted(set.intersection(*sets))


def simulate(u: Universe, cfg: RolloutConfig) -> Trajectory:
    """Run one full episode; fully deterministic for a given (u, cfg)."""
    rng = rng_for(cfg.seed, "rollout")
    game = new_game(u, cfg.seed, cfg.max_rounds)
    system_prompt = build_system_prompt(u, cfg.max_rounds, cfg.format)
    tokens = _payload_tokens(system_prompt)

    guessed: set[int] = set()
    facts: list[_Fact] = []

    def record_guess(guess_id: int) -> tuple[Feedback, int]:
        nonlocal tokens
        fb = feedback_on_guess(game, guess_id)
        guessed.add(guess_id)
        facts.extend(_facts_from_feedback(fb))
        guess_name = u.item_by_id(guess_id).display_name
        tokens += _payload_tokens(f"<answer>{guess_name}</answer>")
        tokens += _payload_tokens(render_feedback(fb, cfg.max_rounds - fb.round_index))
        return fb, tokens

    first_id = select_guess(u, u.sorted_names(), rng)
    first_fb, _ = record_guess(first_id)
    initial = RoundRecord(
        index=1, tool_query=None, tool_result=None,
        guess_id=first_id, guess_name=u.item_by_id(first_id).display_name,
        feedback=first_fb,
    )

    rounds: list[RoundRecord] = []
    solved = first_fb.overall == CORRECT
    while not solved and game.rounds_remaining > 0:
        if cfg.token_budget is not None and tokens >= cfg.token_budget:
            break
        q = _derive_from_facts(facts, cfg, rng)
        if cfg.format == CONCISE:
            result: ConciseResult | VerboseResult = query_concise(u, q)
            candidates = list(result.intersection)
        else:
            result = query_verbose(u, q)
            candidates = verbose_candidates(result, u)
        tokens += _payload_tokens(THINK_TEXT + TOOL_NAME + query_to_json(q))
        tokens += _payload_tokens(result_to_json(result))

        guess_id = select_guess(u, candidates, rng, exclude_ids=frozenset(guessed))
        fb, _ = record_guess(guess_id)
        rounds.append(RoundRecord(
            index=fb.round_index, tool_query=q, tool_result=result,
            guess_id=guess_id, guess_name=u.item_by_id(guess_id).display_name,
            feedback=fb,
        ))
        solved = fb.overall == CORRECT

    meta = {
        "config": asdict(cfg),
        "seed": cfg.seed,
        "universe_fingerprint": u.fingerprint(),
        "n_items": len(u.items),
        "target_id": game.target_id,
        "target_name": game.target.display_name,
        "solved": solved,
        "rounds": 1 + len(rounds),
        "approx_tokens": tokens,
    }
    return Trajectory(system_prompt=system_prompt, initial_guess=initial, rounds=rounds, meta=meta)


def generate_corpus(u: Universe, cfg: RolloutConfig, n_trajectories: int) -> list[Trajectory]:
    """n independent episodes; per-episode seeds derived so order is irrelevant."""
    out = []
    for i in range(n_trajectories):
        traj_cfg = replace(cfg, seed=derive_seed(cfg.seed, "trajectory", i))
        t = simulate(u, traj_cfg)
        t.meta["trajectory_index"] = i
        t.meta["trajectory_id"] = f"traj_{i:05d}"
        out.append(t)
    return out


# ---------------------------------------------------------------------------
# Disk form

def _feedback_to_obj(fb: Feedback) -> dict[str, Any]:
    return {
        "round_index": fb.round_index,
        "guessed_id": fb.guessed_id,
        "guessed_name": fb.guessed_name,
        "guessed_dex": fb.guessed_dex,
        "sections": [
            {"section": s.section, "kind": s.kind, "entries": [[v, j] for v, j in s.entries]}
            for s in fb.sections
        ],
        "overall": fb.overall,
    }


def _feedback_from_obj(obj: dict[str, Any]) -> Feedback:
    return Feedback(
        round_index=obj["round_index"],
        guessed_id=obj["guessed_id"],
        guessed_name=obj["guessed_name"],
        guessed_dex=obj["guessed_dex"],
        sections=tuple(
            SectionFeedback(s["section"], s["kind"], tuple((v, j) for v, j in s["entries"]))
            for s in obj["sections"]
        ),
        overall=obj["overall"],
    )


def _result_to_obj(res: ConciseResult | VerboseResult | None) -> dict[str, Any] | None:
    if res is None:
        return None
    if isinstance(res, ConciseResult):
        return {"kind": CONCISE, **concise_to_obj(res)}
    return {"kind": VERBOSE, **verbose_to_obj(res)}


def _result_from_obj(obj: dict[str, Any] | None) -> ConciseResult | VerboseResult | None:
    if obj is None:
        return None
    if obj["kind"] == CONCISE:
        return ConciseResult(tuple(obj["intersection"]))
    entries = []
    for e in obj["per_section"]:
        conds = tuple(condition_from_obj(c, section=e["section"]) for c in e["conditions"])
        entries.append((e["section"], conds, tuple(e["candidates"])))
    return VerboseResult(tuple(entries))


def _round_to_obj(r: RoundRecord) -> dict[str, Any]:
    return {
        "index": r.index,
        "tool_query": None if r.tool_query is None else query_to_obj(r.tool_query),
        "tool_result": _result_to_obj(r.tool_result),
        "guess_id": r.guess_id,
        "guess_name": r.guess_name,
        "feedback": _feedback_to_obj(r.feedback),
    }


def _round_from_obj(obj: dict[str, Any]) -> RoundRecord:
    return RoundRecord(
        index=obj["index"],
        tool_query=None if obj["tool_query"] is None else query_from_obj(obj["tool_query"]),
        tool_result=_result_from_obj(obj["tool_result"]),
        guess_id=obj["guess_id"],
        guess_name=obj["guess_name"],
        feedback=_feedback_from_obj(obj["feedback"]),
    )


def trajectory_to_obj(t: Trajectory) -> dict[str, Any]:
    return {
        "system_prompt": t.system_prompt,
        "meta": t.meta,
        "initial_guess": None if t.initial_guess is None else _round_to_obj(t.initial_guess),
        "rounds": [_round_to_obj(r) for r in t.rounds],
    }


def trajectory_from_obj(obj: dict[str, Any]) -> Trajectory:
    return Trajectory(
        system_prompt=obj["system_prompt"],
        initial_guess=None if obj["initial_guess"] is None else _round_from_obj(obj["initial_guess"]),
        rounds=[_round_from_obj(r) for r in obj["rounds"]],
        meta=dict(obj["meta"]),
    )


def save_trajectory(t: Trajectory, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(trajectory_to_obj(t), f, ensure_ascii=False)
        f.write("\n")


def load_trajectory(path) -> Trajectory:
    with open(path, encoding="utf-8") as f:
        return trajectory_from_obj(json.load(f))
