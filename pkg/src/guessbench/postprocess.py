"""Token accounting, whole-round truncation, and final-guess solvability."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from guessbench.query import ConciseResult
from guessbench.rollout import Trajectory

PER_MESSAGE_OVERHEAD = 4

DEFAULT_BUCKET_LIMITS = (32768, 65536, 131072, 262144, 524288, 1048576, 2097152, 4194304)


class TruncationError(ValueError):
    pass


@dataclass(frozen=True)
class TokenCounter:
    """bytes/4-ceiling counter by default; exact counters plug in per model."""

    mode: str = "approximate"
    exact_fn: Callable[[str], int] | None = None

    def __post_init__(self):
        if self.mode not in ("approximate", "exact"):
            raise ValueError(f"unknown counter mode {self.mode!r}")
        if self.mode == "exact" and self.exact_fn is None:
            raise ValueError("exact mode requires a counter function")

    def text(self, text: str) -> int:
        if self.mode == "exact":
            return self.exact_fn(text)
        return (len(text.encode("utf-8")) + 3) // 4


DEFAULT_COUNTER = TokenCounter()


@dataclass(frozen=True)
class BucketSpec:
    limits: tuple[int, ...] = DEFAULT_BUCKET_LIMITS
    fill_floor: float = 0.9

    def __post_init__(self):
        if list(self.limits) != sorted(set(self.limits)):
            raise ValueError("bucket limits must be strictly increasing")
        if not 0.0 < self.fill_floor < 1.0:
            raise ValueError("fill_floor must be in (0, 1)")

    def bucket_for(self, tokens: int) -> int | None:
        """The unique limit L with fill_floor*L < tokens <= L, if any."""
        for limit in self.limits:
            if self.fill_floor * limit < tokens <= limit:
                return limit
        return None


def message_payload(msg: Any) -> str:
    """The counted text of a chat message: content plus tool-call name+arguments."""
    if isinstance(msg, dict):
        content = msg.get("content") or ""
        calls = msg.get("tool_calls") or []
        extra = "".join(c["function"]["name"] + c["function"]["arguments"] for c in calls)
    else:
        content = msg.content or ""
        extra = "".join(c.function_name + c.arguments for c in (msg.tool_calls or []))
    return content + extra


def count_tokens(x: Any, counter: TokenCounter = DEFAULT_COUNTER) -> int:
    """Tokens of a raw string, one message, a message list, or a Trajectory."""
    if isinstance(x, str):
        return counter.text(x)
    if isinstance(x, Trajectory):
        from guessbench.harness import serialize_trajectory

        return count_tokens(serialize_trajectory(x), counter)
    if isinstance(x, (list, tuple)):
        return sum(count_tokens(m, counter) for m in x)
    return counter.text(message_payload(x)) + PER_MESSAGE_OVERHEAD


def _message_groups(t: Trajectory) -> tuple[list, list, list[list]]:
    """Serialized messages split into (system, initial pair, per-round quads)."""
    from guessbench.harness import serialize_trajectory

    msgs = serialize_trajectory(t)
    pos = 1
    initial = []
    if t.initial_guess is not None:
        initial = msgs[1:3]
        pos = 3
    quads = [msgs[pos + 4 * i: pos + 4 * i + 4] for i in range(len(t.rounds))]
    return [msgs[0]], initial, quads


def truncate_whole_rounds(
    t: Trajectory, budget: int, counter: TokenCounter = DEFAULT_COUNTER
) -> Trajectory:
    """Longest whole-round prefix within the token budget.

    A round is the [tool call, tool result, guess, feedback] quadruple (the
    opening guess round is the guess+feedback pair); it is never split.
    """
    system, initial, quads = _message_groups(t)
    base = count_tokens(system, counter) + count_tokens(initial, counter)
    if t.initial_guess is None and quads:
        base += count_tokens(quads[0], counter)
        first_cost = base
        keep = 1
    else:
        first_cost = base
        keep = 0
    if first_cost > budget:
        raise TruncationError(
            f"budget {budget} cannot hold the system prompt and first round ({first_cost} tokens)"
        )
    total = first_cost
    for quad in quads[keep:]:
        cost = count_tokens(quad, counter)
        if total + cost > budget:
            break
        total += cost
        keep += 1

    meta = dict(t.meta)
    meta["truncated_tokens"] = total
    meta["truncated_rounds"] = (1 if t.initial_guess is not None else 0) + keep
    return Trajectory(
        system_prompt=t.system_prompt,
        initial_guess=t.initial_guess,
        rounds=list(t.rounds[:keep]),
        meta=meta,
    )


def verify_final_guess(t: Trajectory, min_candidates: int = 5) -> dict[str, Any]:
    """Fold the concise tool responses; solvable iff they pin exactly the target."""
    target = t.meta.get("target_name")
    running: set[str] | None = None
    trace: list[int] = []
    for r in t.rounds:
        if r.tool_result is None:
            continue
        if not isinstance(r.tool_result, ConciseResult):
            raise ValueError("final-guess verification applies to concise trajectories")
        names = set(r.tool_result.intersection)
        running = names if running is None else running & names
        trace.append(len(running))
    solvable = running is not None and running == {target}
    violations = [
        {"position": i, "running_size": size}
        for i, size in enumerate(trace[:-1])
        if size < min_candidates
    ]
    return {"solvable": solvable, "intersection_trace": trace, "violations": violations}


def validate_messages(messages: list) -> list[str]:
    """Chat-structure violations: role legality and tool-call pairing."""
    problems = []
    if not messages:
        return ["empty message list"]

    def role(i):
        m = messages[i]
        return m.get("role") if isinstance(m, dict) else m.role

    def tool_calls(i):
        m = messages[i]
        raw = m.get("tool_calls") if isinstance(m, dict) else m.tool_calls
        return raw or []

    def tool_call_id(i):
        m = messages[i]
        return m.get("tool_call_id") if isinstance(m, dict) else m.tool_call_id

    if role(0) != "system":
        problems.append("message 0 is not the system prompt")
    for i in range(len(messages)):
        r = role(i)
        if r not in ("system", "user", "assistant", "tool"):
            problems.append(f"message {i}: unknown role {r!r}")
        if r == "system" and i != 0:
            problems.append(f"message {i}: system prompt not first")
        calls = tool_calls(i)
        if calls:
            if r != "assistant":
                problems.append(f"message {i}: tool_calls on non-assistant message")
            ids = [c["id"] if isinstance(c, dict) else c.id for c in calls]
            if i + 1 >= len(messages) or role(i + 1) != "tool":
                problems.append(f"message {i}: tool call without following tool message")
            elif tool_call_id(i + 1) not in ids:
                problems.append(f"message {i + 1}: tool_call_id does not match the call")
        if r == "tool":
            prev_ok = i > 0 and role(i - 1) == "assistant" and tool_calls(i - 1)
            if not prev_ok:
                problems.append(f"message {i}: tool message without a preceding tool call")
    return problems
