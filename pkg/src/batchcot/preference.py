"""Construction of the A/B/C multiple-choice preference dataset."""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field

from batchcot import verify
from batchcot.prompts import BATCH, VANILLA

LABEL_A = "A"
LABEL_B = "B"
LABEL_C = "C"
LABELS = (LABEL_A, LABEL_B, LABEL_C)

OPTION_A = (
    "The reasoning process is correct, but I think there is a simpler "
    "and quicker way to approach it."
)
OPTION_B = (
    "The reasoning process is correct, and I believe the thinking is "
    "thorough and concise."
)
OPTION_C = "The reasoning process is wrong."
OPTIONS = (OPTION_A, OPTION_B, OPTION_C)

JUDGE_TEMPLATE_VERSION = "judge-prompt-v1"

PER_CHAIN = "per_chain"
PAIRED = "paired"


@dataclass(frozen=True)
class PreferenceSample:
    question_text: str
    cot_text: str
    gold_label: str
    provenance: dict
    options: tuple = field(default=OPTIONS)

    def __post_init__(self):
        if self.options != OPTIONS:
            raise ValueError("option strings must match the canonical sentences")
        if self.gold_label not in LABELS:
            raise ValueError(f"gold label must be one of {LABELS}")


def label_sample(origin_kind: str, verdict: str) -> str:
    """A for correct vanilla chains, B for correct batch chains, C otherwise."""
    if verdict == verify.CORRECT:
        return LABEL_A if origin_kind == VANILLA else LABEL_B
    return LABEL_C


def _resolve_verdict(chain, qmap):
    if chain.verdict is not None:
        return chain.verdict
    return verify.grade(chain, qmap[chain.question_id])


def build_dataset(vanilla_chains, batch_chains, questions, seed: int = 0,
                  mode: str = PER_CHAIN):
    """One labeled sample per graded chain, shuffled with a recorded seed.

    Returns (samples, manifest). In PAIRED mode only questions with at least
    one vanilla and one batch chain contribute, one chain of each kind.
    """
    if mode not in (PER_CHAIN, PAIRED):
        raise ValueError(f"unknown dataset mode: {mode!r}")
    qmap = {q.id: q for q in questions}
    chains = list(vanilla_chains) + list(batch_chains)
    unresolved = sorted({c.question_id for c in chains if c.question_id not in qmap})
    if unresolved:
        raise ValueError(f"chains reference unknown question ids: {unresolved}")

    chains.sort(key=lambda c: (c.question_id, c.origin.kind, c.origin.position))
    if mode == PAIRED:
        first = {}
        for c in chains:
            first.setdefault((c.question_id, c.origin.kind), c)
        chains = [
            c for (qid, kind), c in sorted(first.items())
            if (qid, VANILLA) in first and (qid, BATCH) in first
        ]
        chains.sort(key=lambda c: (c.question_id, c.origin.kind, c.origin.position))

    samples = []
    for chain in chains:
        q = qmap[chain.question_id]
        verdict = _resolve_verdict(chain, qmap)
        samples.append(
            PreferenceSample(
                question_text=q.text,
                cot_text=chain.text,
                gold_label=label_sample(chain.origin.kind, verdict),
                provenance={
                    "origin_kind": chain.origin.kind,
                    "batch_size": chain.origin.size,
                    "position": chain.origin.position,
                    "question_id": chain.question_id,
                },
            )
        )
    random.Random(seed).shuffle(samples)

    counts = Counter(s.gold_label for s in samples)
    manifest = {
        "seed": seed,
        "mode": mode,
        "n_samples": len(samples),
        "n_questions": len({s.provenance["question_id"] for s in samples}),
        "label_counts": {label: counts.get(label, 0) for label in LABELS},
        "template_version": JUDGE_TEMPLATE_VERSION,
    }
    return samples, manifest


def render_judge_prompt(sample: PreferenceSample) -> str:
    """Canonical single-prompt rendering of a sample for a judge model."""
    return (
        f"{sample.question_text}\n\n"
        f"{sample.cot_text}\n\n"
        "Evaluate the reasoning above and choose exactly one option:\n"
        f"A. {OPTION_A}\n"
        f"B. {OPTION_B}\n"
        f"C. {OPTION_C}\n\n"
        "Answer with a single letter: A, B, or C."
    )


def sample_to_dict(sample: PreferenceSample) -> dict:
    return {
        "question": sample.question_text,
        "cot": sample.cot_text,
        "options": list(sample.options),
        "gold_label": sample.gold_label,
        "provenance": sample.provenance,
    }


def sample_from_dict(d: dict) -> PreferenceSample:
    return PreferenceSample(
        question_text=d["question"],
        cot_text=d["cot"],
        gold_label=d["gold_label"],
        provenance=d["provenance"],
        options=tuple(d["options"]),
    )


def write_samples(path, samples):
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample_to_dict(sample), sort_keys=True))
            fh.write("\n")


def read_samples(path) -> list:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                samples.append(sample_from_dict(json.loads(line)))
    return samples
