"""Deterministic game oracle: hidden target, predicate answers, guess feedback.

Feedback is attribute-wise: every categorical label of the guessed item is
judged against the target's label set, and numeric values carry a direction
(too low / too high) instead of a bare wrong.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from guessbench.query import Condition, match_item, validate_condition
from guessbench.universe import CATEGORICAL, Universe
from guessbench.util import rng_for

CORRECT = "correct"
WRONG = "wrong"
TOO_LOW = "too-low"
TOO_HIGH = "too-high"


class GameError(RuntimeError):
    pass


@dataclass(frozen=True)
class SectionFeedback:
    section: str
    kind: str
    entries: tuple[tuple[Any, str], ...]  # (label, correct|wrong) or (value, correct|too-low|too-high)

    def fully_correct(self) -> bool:
        return all(j == CORRECT for _, j in self.entries)


@dataclass(frozen=True)
class Feedback:
    round_index: int
    guessed_id: int
    guessed_name: str
    guessed_dex: int
    sections: tuple[SectionFeedback, ...]
    overall: str  # correct | wrong


@dataclass
class GameState:
    universe: Universe
    target_id: int
    round: int = 1
    rounds_remaining: int = 0
    feedback_log: list[Feedback] = field(default_factory=list)

    @property
    def target(self):
        return self.universe.item_by_id(self.target_id)


def new_game(u: Universe, seed: int, max_rounds: int) -> GameState:
    if not u.items:
        raise GameError("cannot start a game over an empty universe")
    if max_rounds < 1:
        raise GameError("max_rounds must be at least 1")
    rng = rng_for(seed, "target")
    target = u.items[rng.randrange(len(u.items))]
    return GameState(universe=u, target_id=target.id, round=1, rounds_remaining=max_rounds)


def respond_predicate(s: GameState, c: Condition) -> str:
    """Answer Yes/No about the hidden target. Does not consume a round."""
    validate_condition(s.universe, c)
    return "Yes" if match_item(s.target, c) else "No"


def feedback_on_guess(s: GameState, guess_id: int) -> Feedback:
    if s.rounds_remaining <= 0:
        raise GameError("no rounds remaining")
    try:
        guess = s.universe.item_by_id(guess_id)
    except KeyError:
        raise GameError(f"unknown item id {guess_id}") from None
    target = s.target

    sections = []
    for sec in s.universe.schema.sections:
        if sec.kind == CATEGORICAL:
            target_labels = target.attrs[sec.name]
            entries = tuple(
                (label, CORRECT if label in target_labels else WRONG)
                for label in sorted(guess.attrs[sec.name])
            )
        else:
            g, t = guess.attrs[sec.name], target.attrs[sec.name]
            judgment = CORRECT if g == t else (TOO_LOW if g < t else TOO_HIGH)
            entries = ((g, judgment),)
        sections.append(SectionFeedback(sec.name, sec.kind, entries))

    fb = Feedback(
        round_index=s.round,
        guessed_id=guess.id,
        guessed_name=guess.display_name,
        guessed_dex=guess.dex,
        sections=tuple(sections),
        overall=CORRECT if guess.id == target.id else WRONG,
    )
    s.feedback_log.append(fb)
    s.rounds_remaining -= 1
    s.round += 1
    return fb


_NUMERIC_TEXT = {CORRECT: "correct", TOO_LOW: "wrong, too low", TOO_HIGH: "wrong, too high"}


def render_feedback(f: Feedback, rounds_remaining: int) -> str:
    """Stable wire format consumed verbatim as user-role messages."""
    lines = [f"Round {f.round_index}: Guess {f.guessed_name} (#{f.guessed_dex:04d})", "Sections:"]
    for sec in f.sections:
        if sec.kind == CATEGORICAL:
            parts = "; ".join(f"{label} ({judgment})" for label, judgment in sec.entries)
            lines.append(f" - {sec.section}: {parts}")
        else:
            value, judgment = sec.entries[0]
            lines.append(f" - {sec.section}: {value} ({_NUMERIC_TEXT[judgment]})")
    lines.append(f"Result: {f.overall}")
    lines.append(f"Remaining rounds: {rounds_remaining}")
    return "\n".join(lines)
