"""Boxed-answer extraction and per-question splitting of batch completions."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from batchcot.prompts import BATCH, VANILLA, PromptEnvelope

WHITESPACE = "whitespace"
BYTES_OVER_4 = "bytes_over_4"

_BOXED = "\\boxed"

# Final-answer section marker: case-insensitive, tolerant of surrounding
# whitespace and markdown emphasis around the bracketed heading.
_FINAL_RE = re.compile(
    r"(?:\*{1,2}|_{1,2})?[ \t]*\[[ \t]*final[ \t]+answers?[ \t]*\][ \t]*(?:\*{1,2}|_{1,2})?",
    re.IGNORECASE,
)
_SOLUTION_RE = re.compile(
    r"(?:\*{1,2}|_{1,2})?[ \t]*\[[ \t]*solution[ \t]+process[ \t]*\][ \t]*(?:\*{1,2}|_{1,2})?",
    re.IGNORECASE,
)
# Per-problem heading at line start: optional Problem/Question prefix, an
# integer, and a [.):] delimiter.
_HEADING_RE = re.compile(
    r"^[ \t]*(?:\*{1,2}|#{1,6}[ \t]*)?(?:problem|question)?[ \t]*(\d+)[ \t]*[.):]",
    re.IGNORECASE | re.MULTILINE,
)
_ENTRY_RE = re.compile(r"(\d+)\s*[.):]\s*\$?\s*(?=\\boxed)")


class UnsplittableError(Exception):
    """Batch response could not be partitioned into per-question chains."""


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.6
    max_tokens: int = 32768
    seed: Optional[int] = None


@dataclass(frozen=True)
class CompletionRecord:
    envelope: PromptEnvelope
    raw_text: str
    counted_tokens: int
    reported_tokens: Optional[int] = None
    sampling: SamplingParams = field(default_factory=SamplingParams)
    endpoint: str = "mock"

    def __post_init__(self):
        if self.counted_tokens < 0:
            raise ValueError("counted_tokens must be >= 0")

    @property
    def effective_tokens(self) -> int:
        """Server-reported usage wins over the local fallback count."""
        return self.reported_tokens if self.reported_tokens is not None else self.counted_tokens


@dataclass(frozen=True)
class ChainOrigin:
    kind: str  # VANILLA or BATCH
    size: int = 1
    position: int = 1

    def __post_init__(self):
        if self.kind == BATCH and not 1 <= self.position <= self.size:
            raise ValueError("batch origin position must lie in 1..size")


@dataclass
class ReasoningChain:
    question_id: str
    text: str
    origin: ChainOrigin
    predicted_answer: Optional[str] = None
    verdict: Optional[str] = None


class FinalAnswers(NamedTuple):
    entries: list  # [(position, answer_string), ...] strictly increasing
    fallback: bool


def count_tokens(text: str, scheme: str = WHITESPACE) -> int:
    if scheme == WHITESPACE:
        return len(text.split())
    if scheme == BYTES_OVER_4:
        return (len(text.encode("utf-8")) + 3) // 4
    raise ValueError(f"unknown token scheme: {scheme!r}")


def _boxed_content_at(text: str, start: int):
    """Parse one balanced \\boxed{...} group whose backslash sits at `start`.

    Returns (content, end_index) or None when malformed/unterminated.
    """
    i = start + len(_BOXED)
    n = len(text)
    while i < n and text[i].isspace():
        i += 1
    if i >= n or text[i] != "{":
        return None
    depth = 1
    i += 1
    begin = i
    while i < n:
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[begin:i], i + 1
        i += 1
    return None


def extract_boxed(text: str) -> list:
    """All \\boxed{...} payloads in order, with brace matching balanced."""
    out = []
    i = 0
    while True:
        j = text.find(_BOXED, i)
        if j < 0:
            return out
        parsed = _boxed_content_at(text, j)
        if parsed is None:
            i = j + len(_BOXED)
        else:
            content, end = parsed
            out.append(content)
            i = end


def parse_final_answers(record: CompletionRecord) -> FinalAnswers:
    """Numbered boxed entries from the last final-answer block of a batch response.

    Falls back to the last k boxed occurrences anywhere in the text when no
    marker is present, flagged fallback=True.
    """
    if record.envelope.mode != BATCH:
        raise ValueError("parse_final_answers requires a batch completion")
    k = record.envelope.batch_size
    text = record.raw_text
    matches = list(_FINAL_RE.finditer(text))
    if not matches:
        boxes = extract_boxed(text)[-k:]
        return FinalAnswers([(i, b) for i, b in enumerate(boxes, 1)], fallback=True)
    tail = text[matches[-1].end():]
    entries = []
    last = 0
    for m in _ENTRY_RE.finditer(tail):
        pos = int(m.group(1))
        parsed = _boxed_content_at(tail, m.end())
        if parsed is None:
            continue
        if last < pos <= k:
            entries.append((pos, parsed[0]))
            last = pos
    return FinalAnswers(entries, fallback=False)


def split_batch_chains(record: CompletionRecord) -> list:
    """Partition the solution-process region into one chain per question.

    Raises UnsplittableError when the numbering-heading scan does not find
    exactly batch_size headings in strictly increasing order 1..k.
    """
    if record.envelope.mode != BATCH:
        raise ValueError("split_batch_chains requires a batch completion")
    k = record.envelope.batch_size
    text = record.raw_text

    sol = _SOLUTION_RE.search(text)
    finals = list(_FINAL_RE.finditer(text))
    region_start = sol.end() if sol else 0
    region_end = finals[-1].start() if finals else len(text)
    if region_end < region_start:
        region_end = len(text)
    region = text[region_start:region_end]

    marks = []
    expected = 1
    for m in _HEADING_RE.finditer(region):
        if int(m.group(1)) == expected:
            marks.append(m.start())
            expected += 1
            if expected > k:
                break
    if len(marks) != k:
        raise UnsplittableError(
            f"found {len(marks)} of {k} increasing problem headings"
        )

    boundaries = [0] + marks[1:] + [len(region)]
    answers = dict(parse_final_answers(record).entries)
    chains = []
    for pos in range(1, k + 1):
        segment = region[boundaries[pos - 1]:boundaries[pos]]
        predicted = answers.get(pos)
        if predicted is None:
            inner = extract_boxed(segment)
            predicted = inner[-1] if inner else None
        chains.append(
            ReasoningChain(
                question_id=record.envelope.question_ids[pos - 1],
                text=segment,
                origin=ChainOrigin(kind=BATCH, size=k, position=pos),
                predicted_answer=predicted,
            )
        )
    return chains


def vanilla_chain(record: CompletionRecord) -> ReasoningChain:
    """Whole response of a single-question completion as one chain."""
    if record.envelope.mode != VANILLA:
        raise ValueError("vanilla_chain requires a vanilla completion")
    boxes = extract_boxed(record.raw_text)
    return ReasoningChain(
        question_id=record.envelope.question_ids[0],
        text=record.raw_text,
        origin=ChainOrigin(kind=VANILLA),
        predicted_answer=boxes[-1] if boxes else None,
    )


# --- JSONL (de)serialization -------------------------------------------------

def chain_to_dict(chain: ReasoningChain, token_scheme: str = WHITESPACE) -> dict:
    d = {
        "question_id": chain.question_id,
        "text": chain.text,
        "origin": {
            "kind": chain.origin.kind,
            "size": chain.origin.size,
            "position": chain.origin.position,
        },
        "predicted_answer": chain.predicted_answer,
        "token_count": count_tokens(chain.text, token_scheme),
        "token_scheme": token_scheme,
    }
    if chain.verdict is not None:
        d["verdict"] = chain.verdict
    return d


def chain_from_dict(d: dict) -> ReasoningChain:
    origin = d["origin"]
    return ReasoningChain(
        question_id=d["question_id"],
        text=d["text"],
        origin=ChainOrigin(
            kind=origin["kind"], size=origin["size"], position=origin["position"]
        ),
        predicted_answer=d.get("predicted_answer"),
        verdict=d.get("verdict"),
    )


def write_chains(path, chains, token_scheme: str = WHITESPACE):
    with open(path, "w", encoding="utf-8") as fh:
        for chain in chains:
            fh.write(json.dumps(chain_to_dict(chain, token_scheme), sort_keys=True))
            fh.write("\n")


def read_chains(path) -> list:
    chains = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                chains.append(chain_from_dict(json.loads(line)))
    return chains


def completion_to_dict(record: CompletionRecord) -> dict:
    return {
        "envelope": {
            "text": record.envelope.text,
            "mode": record.envelope.mode,
            "batch_size": record.envelope.batch_size,
            "question_ids": list(record.envelope.question_ids),
        },
        "raw_text": record.raw_text,
        "reported_tokens": record.reported_tokens,
        "counted_tokens": record.counted_tokens,
        "sampling": {
            "temperature": record.sampling.temperature,
            "max_tokens": record.sampling.max_tokens,
            "seed": record.sampling.seed,
        },
        "endpoint": record.endpoint,
    }


def completion_from_dict(d: dict) -> CompletionRecord:
    env = d["envelope"]
    s = d["sampling"]
    return CompletionRecord(
        envelope=PromptEnvelope(
            text=env["text"],
            mode=env["mode"],
            batch_size=env["batch_size"],
            question_ids=tuple(env["question_ids"]),
        ),
        raw_text=d["raw_text"],
        counted_tokens=d["counted_tokens"],
        reported_tokens=d.get("reported_tokens"),
        sampling=SamplingParams(
            temperature=s["temperature"], max_tokens=s["max_tokens"], seed=s.get("seed")
        ),
        endpoint=d.get("endpoint", "mock"),
    )


def write_completions(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(completion_to_dict(record), sort_keys=True))
            fh.write("\n")


def read_completions(path) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(completion_from_dict(json.loads(line)))
    return records
