"""Chat wire format, answer extraction/scoring, and endpoint evaluation."""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import httpx

from guessbench.environment import Feedback, SectionFeedback
from guessbench.query import query_from_json, query_to_json, result_to_json
from guessbench.rollout import THINK_TEXT, TOOL_NAME, Trajectory
from guessbench.universe import AttributeSchema, CATEGORICAL

API_KEY_ENV = "GUESSBENCH_API_KEY"


@dataclass(frozen=True)
class ToolCall:
    id: str
    function_name: str
    arguments: str


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str | None = None
    tool_calls: tuple[ToolCall, ...] | None = None
    tool_call_id: str | None = None
    name: str | None = None


def message_to_obj(msg: ChatMessage) -> dict[str, Any]:
    if msg.role == "tool":
        return {
            "role": "tool",
            "tool_call_id": msg.tool_call_id,
            "name": msg.name,
            "content": msg.content,
        }
    obj: dict[str, Any] = {"role": msg.role, "content": msg.content}
    if msg.tool_calls:
        obj["tool_calls"] = [
            {
                "id": c.id,
                "type": "function",
                "function": {"name": c.function_name, "arguments": c.arguments},
            }
            for c in msg.tool_calls
        ]
    return obj


def message_from_obj(obj: dict[str, Any]) -> ChatMessage:
    calls = None
    if obj.get("tool_calls"):
        calls = tuple(
            ToolCall(c["id"], c["function"]["name"], c["function"]["arguments"])
            for c in obj["tool_calls"]
        )
    return ChatMessage(
        role=obj["role"],
        content=obj.get("content"),
        tool_calls=calls,
        tool_call_id=obj.get("tool_call_id"),
        name=obj.get("name"),
    )


def serialize_trajectory(t: Trajectory) -> list[ChatMessage]:
    """System prompt, then per round: tool call, tool result, guess, feedback."""
    max_rounds = t.meta.get("config", {}).get("max_rounds")
    if max_rounds is None:
        max_rounds = max((r.index for r in t.all_rounds()), default=1)

    from guessbench.environment import render_feedback

    msgs: list[ChatMessage] = [ChatMessage(role="system", content=t.system_prompt)]
    if t.initial_guess is not None:
        r = t.initial_guess
        msgs.append(ChatMessage(role="assistant", content=f"<answer>{r.guess_name}</answer>"))
        msgs.append(ChatMessage(role="user", content=render_feedback(r.feedback, max_rounds - r.index)))
    for r in t.rounds:
        call_id = f"call_{len(msgs)}"
        msgs.append(ChatMessage(
            role="assistant",
            content=THINK_TEXT,
            tool_calls=(ToolCall(call_id, TOOL_NAME, query_to_json(r.tool_query)),),
        ))
        msgs.append(ChatMessage(
            role="tool",
            content=result_to_json(r.tool_result),
            tool_call_id=call_id,
            name=TOOL_NAME,
        ))
        msgs.append(ChatMessage(role="assistant", content=f"<answer>{r.guess_name}</answer>"))
        msgs.append(ChatMessage(role="user", content=render_feedback(r.feedback, max_rounds - r.index)))
    return msgs


def serialize_to_wire(t: Trajectory) -> list[dict[str, Any]]:
    return [message_to_obj(m) for m in serialize_trajectory(t)]


# ---------------------------------------------------------------------------
# Parsing the wire format back (round-trip and replay checks)

_HEADER = re.compile(r"Round (\d+): Guess (.+) \(#(\d+)\)")
_CAT_ENTRY = re.compile(r"^(.*) \((correct|wrong)\)$")
_NUM_ENTRY = re.compile(r"^(-?\d+) \((correct|wrong, too low|wrong, too high)\)$")
_NUM_JUDGMENT = {"correct": "correct", "wrong, too low": "too-low", "wrong, too high": "too-high"}


def parse_feedback(text: str, schema: AttributeSchema, name_index: dict[str, int] | None = None) -> Feedback:
    lines = text.split("\n")
    header = _HEADER.match(lines[0])
    if not header or lines[1] != "Sections:":
        raise ValueError(f"unparseable feedback header: {lines[0]!r}")
    round_index, guessed_name, dex = int(header.group(1)), header.group(2), int(header.group(3))

    sections: list[SectionFeedback] = []
    overall = None
    for line in lines[2:]:
        if line.startswith("Result: "):
            overall = line[len("Result: "):]
            continue
        if line.startswith("Remaining rounds: ") or not line.startswith(" - "):
            continue
        section, _, rest = line[3:].partition(": ")
        kind = schema.section(section).kind
        if kind == CATEGORICAL:
            entries = []
            for part in rest.split("; "):
                m = _CAT_ENTRY.match(part)
                if not m:
                    raise ValueError(f"unparseable feedback entry: {part!r}")
                entries.append((m.group(1), m.group(2)))
        else:
            m = _NUM_ENTRY.match(rest)
            if not m:
                raise ValueError(f"unparseable numeric entry: {rest!r}")
            entries = [(int(m.group(1)), _NUM_JUDGMENT[m.group(2)])]
        sections.append(SectionFeedback(section, kind, tuple(entries)))
    if overall is None:
        raise ValueError("feedback has no Result line")
    guessed_id = name_index.get(guessed_name, -1) if name_index else -1
    return Feedback(round_index, guessed_id, guessed_name, dex, tuple(sections), overall)


def parse_round_messages(messages: list[ChatMessage]):
    """Yield (tool_query, result_json, guess_name, feedback_text) per full round."""
    i = 0
    while i < len(messages):
        m = messages[i]
        if m.role == "assistant" and m.tool_calls:
            query = query_from_json(m.tool_calls[0].arguments)
            result_json = messages[i + 1].content
            guess = messages[i + 2].content
            feedback = messages[i + 3].content
            name = re.match(r"<answer>(.*)</answer>", guess).group(1)
            yield query, result_json, name, feedback
            i += 4
        else:
            i += 1


# ---------------------------------------------------------------------------
# Answer extraction and scoring

_ANSWER_TAG = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_INT = re.compile(r"-?\d+")


def _answer_span(response: str) -> str | None:
    tags = _ANSWER_TAG.findall(response or "")
    if tags:
        return tags[-1].strip()
    lines = [ln.strip() for ln in (response or "").splitlines() if ln.strip()]
    return lines[-1] if lines else None


def expected_kind(gold: Any) -> str:
    if isinstance(gold, bool):
        return "boolean"
    if isinstance(gold, int):
        return "integer"
    if isinstance(gold, (list, tuple)):
        return "list"
    return "name"


def extract_answer(response: str, kind: str) -> Any | None:
    """Typed answer from the last <answer> tag, or None on extraction failure."""
    span = _answer_span(response)
    if span is None:
        return None
    if kind in ("integer", "round"):
        m = _INT.search(span.replace(",", ""))
        return int(m.group(0)) if m else None
    if kind == "boolean":
        word = span.strip().strip(".").lower()
        if word in ("yes", "true"):
            return True
        if word in ("no", "false"):
            return False
        return None
    if kind == "list":
        parts = [p.strip() for p in span.split(",") if p.strip()]
        return parts or None
    return span or None


def _norm_name(name: str) -> str:
    return name.strip().casefold()


def score(sample: dict[str, Any] | Any, extracted: Any) -> bool:
    gold = sample["gold"] if isinstance(sample, dict) else sample.gold
    if extracted is None:
        return False
    kind = expected_kind(gold)
    if kind == "boolean":
        return isinstance(extracted, bool) and extracted == gold
    if kind == "integer":
        return not isinstance(extracted, bool) and extracted == gold
    if kind == "list":
        if not isinstance(extracted, (list, tuple)):
            return False
        return {_norm_name(x) for x in extracted} == {_norm_name(x) for x in gold}
    return isinstance(extracted, str) and _norm_name(extracted) == _norm_name(gold)


# ---------------------------------------------------------------------------
# Endpoint evaluation

@dataclass
class EvalResult:
    sample_id: str
    raw_response: str
    extracted: Any
    extraction_failed: bool
    correct: bool
    latency_ms: float
    endpoint: str
    model: str
    error: str | None = None

    def to_obj(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "raw_response": self.raw_response,
            "extracted": self.extracted,
            "extraction_failed": self.extraction_failed,
            "correct": self.correct,
            "latency_ms": self.latency_ms,
            "endpoint": self.endpoint,
            "model": self.model,
            "error": self.error,
        }


def _request_once(client: httpx.Client, endpoint: str, payload: dict, timeout: float) -> str:
    headers = {}
    key = os.environ.get(API_KEY_ENV) or os.environ.get("OPENAI_API_KEY")
    if key:
        headers["Authorization"] = f"Bearer {key}"
    resp = client.post(endpoint, json=payload, headers=headers, timeout=timeout)
    resp.raise_for_status()
    body = resp.json()
    try:
        return body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise ValueError(f"malformed endpoint response: {json.dumps(body)[:200]}") from None


def _evaluate_sample(client, sample: dict, endpoint: str, model: str,
                     temperature: float, timeout: float, retries: int) -> EvalResult:
    messages = list(sample["messages"]) + [{"role": "user", "content": sample["question_text"]}]
    payload = {"model": model, "messages": messages, "temperature": temperature}
    start = time.monotonic()
    error = None
    raw = None
    for attempt in range(retries + 1):
        try:
            raw = _request_once(client, endpoint, payload, timeout)
            error = None
            break
        except Exception as exc:  # transport or schema failure; retried
            error = f"{type(exc).__name__}: {exc}"
            if attempt < retries:
                time.sleep(min(0.25 * (2 ** attempt), 4.0))
    latency_ms = (time.monotonic() - start) * 1000.0
    if raw is None:
        return EvalResult(sample["sample_id"], "", None, True, False, latency_ms,
                          endpoint, model, error=error)
    extracted = extract_answer(raw, expected_kind(sample["gold"]))
    return EvalResult(
        sample_id=sample["sample_id"],
        raw_response=raw,
        extracted=extracted,
        extraction_failed=extracted is None,
        correct=score(sample, extracted),
        latency_ms=latency_ms,
        endpoint=endpoint,
        model=model,
    )


def load_jsonl(path: str | Path) -> list[dict[str, Any]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def run_eval(
    dataset: str | Path,
    endpoint: str,
    model: str,
    out_path: str | Path,
    *,
    max_concurrent: int = 4,
    timeout: float = 120.0,
    retries: int = 2,
    temperature: float = 0.7,
    stop_after: int | None = None,
) -> list[EvalResult]:
    """Evaluate every sample against a chat-completions endpoint.

    Results append to out_path as they complete; a rerun skips samples that
    already produced a response, so interrupted runs resume cleanly.
    """
    from concurrent.futures import ThreadPoolExecutor

    samples = load_jsonl(dataset)
    out_path = Path(out_path)
    done: set[str] = set()
    if out_path.exists():
        for rec in load_jsonl(out_path):
            if not rec.get("error"):
                done.add(rec["sample_id"])
    todo = [s for s in samples if s["sample_id"] not in done]
    if stop_after is not None:
        todo = todo[:stop_after]

    lock = threading.Lock()
    results: list[EvalResult] = []
    with httpx.Client() as client, open(out_path, "a", encoding="utf-8") as sink:
        def work(sample):
            res = _evaluate_sample(client, sample, endpoint, model, temperature, timeout, retries)
            with lock:
                sink.write(json.dumps(res.to_obj(), ensure_ascii=False) + "\n")
                sink.flush()
                results.append(res)
            return res

        with ThreadPoolExecutor(max_workers=max_concurrent) as pool:
            list(pool.map(work, todo))
    return results


# ---------------------------------------------------------------------------
# Aggregation

def aggregate(result_paths: Iterable[str | Path], dataset_path: str | Path) -> dict[str, Any]:
    """Accuracy matrix question_type x bucket, plus per-setting/format averages."""
    samples = {s["sample_id"]: s for s in load_jsonl(dataset_path)}
    latest: dict[str, dict] = {}
    for path in result_paths:
        for rec in load_jsonl(path):
            if rec["sample_id"] not in samples:
                raise ValueError(f"result for unknown sample {rec['sample_id']!r}")
            latest[rec["sample_id"]] = rec

    cells: dict[tuple[str, int], list[bool]] = {}
    groups: dict[str, list[bool]] = {}
    failures = 0
    for sid, rec in latest.items():
        s = samples[sid]
        correct = bool(rec.get("correct"))
        failures += 1 if rec.get("extraction_failed") else 0
        cells.setdefault((s["question_type"], s["bucket_limit"]), []).append(correct)
        groups.setdefault(f"setting:{s['setting']}", []).append(correct)
        groups.setdefault(f"format:{s['format']}", []).append(correct)

    matrix: dict[str, dict[str, float]] = {}
    for (qtype, bucket), vals in sorted(cells.items()):
        matrix.setdefault(qtype, {})[str(bucket)] = sum(vals) / len(vals)
    return {
        "n_results": len(latest),
        "n_samples": len(samples),
        "accuracy_matrix": matrix,
        "averages": {k: sum(v) / len(v) for k, v in sorted(groups.items())},
        "extraction_failures": failures,
    }


def report_to_csv(report: dict[str, Any]) -> str:
    buckets = sorted({b for row in report["accuracy_matrix"].values() for b in row}, key=int)
    lines = ["question_type," + ",".join(buckets)]
    for qtype, row in sorted(report["accuracy_matrix"].items()):
        cells = [f"{row[b]:.4f}" if b in row else "" for b in buckets]
        lines.append(qtype + "," + ",".join(cells))
    return "\n".join(lines) + "\n"
