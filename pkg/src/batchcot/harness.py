"""Per-benchmark accuracy and token-usage evaluation with repeat sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass

from batchcot import verify
from batchcot.client import EndpointConfig, complete_many
from batchcot.parsing import extract_boxed, vanilla_chain
from batchcot.prompts import build_single_prompt, load_questions

NUMERIC = "numeric"
CHOICE_LETTER = "choice-letter"


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    corpus_path: str = ""
    samples_per_question: int = 1
    answer_kind: str = NUMERIC
    description: str = ""

    def __post_init__(self):
        if self.samples_per_question < 1:
            raise ValueError("samples_per_question must be >= 1")
        if self.answer_kind not in (NUMERIC, CHOICE_LETTER):
            raise ValueError(f"unknown answer kind: {self.answer_kind!r}")


# Registry of benchmark metadata; corpora themselves are user-supplied JSONL.
BENCHMARKS = {
    "gsm8k": BenchmarkSpec(
        name="GSM8K",
        description="Grade-school arithmetic word problems.",
    ),
    "math500": BenchmarkSpec(
        name="MATH-500",
        description="500 competition math problems across algebra, geometry "
                    "and number theory.",
    ),
    "aime2024": BenchmarkSpec(
        name="AIME 2024",
        samples_per_question=5,
        description="30 invitational competition problems; repeat-sampled x5 "
                    "for stability.",
    ),
    "aime2025": BenchmarkSpec(
        name="AIME 2025",
        samples_per_question=5,
        description="30 invitational competition problems; repeat-sampled x5 "
                    "for stability.",
    ),
    "amc2023": BenchmarkSpec(
        name="AMC 2023",
        description="40 competition problems at middle/high-school level.",
    ),
    "gpqa_diamond": BenchmarkSpec(
        name="GPQA-Diamond",
        answer_kind=CHOICE_LETTER,
        description="Hard graduate-level science multiple-choice questions; "
                    "graded by normalized answer letter.",
    ),
}


def registry_spec(key: str, corpus_path: str,
                  samples_per_question: int = None) -> BenchmarkSpec:
    if key not in BENCHMARKS:
        raise ValueError(
            f"unknown benchmark {key!r}; known: {sorted(BENCHMARKS)}"
        )
    base = BENCHMARKS[key]
    return BenchmarkSpec(
        name=base.name,
        corpus_path=corpus_path,
        samples_per_question=samples_per_question or base.samples_per_question,
        answer_kind=base.answer_kind,
        description=base.description,
    )


@dataclass(frozen=True)
class EvalAggregate:
    benchmark: str
    accuracy: float
    mean_tokens: float
    n_questions: int
    n_samples: int
    exclusions: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")
        if self.mean_tokens < 0:
            raise ValueError("mean_tokens must be >= 0")


def _normalize_letter(s):
    if s is None:
        return None
    s = s.strip()
    boxes = extract_boxed(s)
    if boxes:
        s = boxes[-1].strip()
    s = s.strip("()[].: ").upper()
    return s if len(s) == 1 and s.isalpha() else None


def grade_choice_letter(predicted, gold) -> str:
    p = _normalize_letter(predicted)
    if p is None:
        return verify.UNPARSEABLE
    g = _normalize_letter(gold)
    if g is None:
        raise ValueError(f"gold choice letter {gold!r} is not a single letter")
    return verify.CORRECT if p == g else verify.INCORRECT


def evaluate(spec: BenchmarkSpec, cfg: EndpointConfig, backend):
    """Repeat-sampled single-question evaluation: (records, EvalAggregate)."""
    questions = load_questions(
        spec.corpus_path, require_numeric=spec.answer_kind == NUMERIC
    )
    if not questions:
        raise ValueError(f"{spec.corpus_path}: corpus is empty")

    envelopes = []
    owners = []
    for q in questions:
        envelope = build_single_prompt(q)
        for _ in range(spec.samples_per_question):
            envelopes.append(envelope)
            owners.append(q)

    results = complete_many(envelopes, cfg, backend)
    records = []
    n_correct = 0
    exclusions = 0
    token_sum = 0.0
    for q, result in zip(owners, results):
        if isinstance(result, Exception):
            exclusions += 1
            continue
        chain = vanilla_chain(result)
        if spec.answer_kind == NUMERIC:
            verdict = verify.grade(chain, q)
        else:
            verdict = grade_choice_letter(chain.predicted_answer, q.gold_answer)
        tokens = result.effective_tokens
        token_sum += tokens
        if verdict == verify.CORRECT:
            n_correct += 1
        records.append({
            "question_id": q.id,
            "predicted_answer": chain.predicted_answer,
            "verdict": verdict,
            "tokens": tokens,
        })

    n_samples = len(questions) * spec.samples_per_question - exclusions
    aggregate = EvalAggregate(
        benchmark=spec.name,
        accuracy=n_correct / n_samples if n_samples else 0.0,
        mean_tokens=token_sum / n_samples if n_samples else 0.0,
        n_questions=len(questions),
        n_samples=n_samples,
        exclusions=exclusions,
    )
    return records, aggregate


def overall_mean(aggregates):
    """Plain mean over benchmarks: (accuracy, mean_tokens)."""
    n = len(aggregates)
    return (
        sum(a.accuracy for a in aggregates) / n,
        sum(a.mean_tokens for a in aggregates) / n,
    )


def overall_weighted(aggregates):
    """Sample-weighted mean over benchmarks: (accuracy, mean_tokens)."""
    total = sum(a.n_samples for a in aggregates)
    if total == 0:
        return 0.0, 0.0
    return (
        sum(a.accuracy * a.n_samples for a in aggregates) / total,
        sum(a.mean_tokens * a.n_samples for a in aggregates) / total,
    )


def token_delta_percent(baseline_tokens: float, method_tokens: float) -> float:
    return (method_tokens - baseline_tokens) / baseline_tokens * 100.0


def render_report(aggregates, baseline=None) -> str:
    """Plain-text table: Acc (percent, 2 decimals) and Tokens (2 decimals)."""
    aggregates = list(aggregates)
    lines = [f"{'Benchmark':<18} {'Acc':>8} {'Tokens':>12}"]
    for a in aggregates:
        lines.append(f"{a.benchmark:<18} {a.accuracy * 100:>7.2f}% {a.mean_tokens:>12.2f}")
    acc_m, tok_m = overall_mean(aggregates)
    acc_w, tok_w = overall_weighted(aggregates)
    lines.append(f"{'Overall (mean)':<18} {acc_m * 100:>7.2f}% {tok_m:>12.2f}")
    lines.append(f"{'Overall (weighted)':<18} {acc_w * 100:>7.2f}% {tok_w:>12.2f}")
    if baseline is not None:
        base_acc, base_tok = overall_mean(list(baseline))
        acc_delta = (acc_m - base_acc) * 100.0
        tok_delta = token_delta_percent(base_tok, tok_m)
        lines.append(
            f"Delta vs baseline (overall mean): "
            f"Acc {acc_delta:+.2f} pts, Tokens {tok_delta:+.2f}%"
        )
    return "\n".join(lines)


def aggregates_to_csv(aggregates) -> str:
    lines = ["benchmark,accuracy,mean_tokens,n_questions,n_samples,exclusions"]
    for a in aggregates:
        lines.append(
            f"{a.benchmark},{a.accuracy!r},{a.mean_tokens!r},"
            f"{a.n_questions},{a.n_samples},{a.exclusions}"
        )
    return "\n".join(lines) + "\n"


def aggregate_to_dict(a: EvalAggregate) -> dict:
    return {
        "benchmark": a.benchmark,
        "accuracy": a.accuracy,
        "mean_tokens": a.mean_tokens,
        "n_questions": a.n_questions,
        "n_samples": a.n_samples,
        "exclusions": a.exclusions,
    }


def aggregate_from_dict(d: dict) -> EvalAggregate:
    return EvalAggregate(
        benchmark=d["benchmark"],
        accuracy=d["accuracy"],
        mean_tokens=d["mean_tokens"],
        n_questions=d["n_questions"],
        n_samples=d["n_samples"],
        exclusions=d.get("exclusions", 0),
    )


def read_aggregates(path) -> list:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return [aggregate_from_dict(d) for d in data]


def write_aggregates(path, aggregates):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([aggregate_to_dict(a) for a in aggregates], fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
