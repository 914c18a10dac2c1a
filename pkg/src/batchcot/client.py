"""OpenAI-compatible completion client, deterministic mock engine, and the
batch-compression experiment protocol."""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, NamedTuple, Optional

import requests

from batchcot import verify
from batchcot.parsing import (
    WHITESPACE,
    ChainOrigin,
    CompletionRecord,
    ReasoningChain,
    SamplingParams,
    UnsplittableError,
    count_tokens,
    parse_final_answers,
    split_batch_chains,
    vanilla_chain,
)
from batchcot.prompts import (
    BATCH,
    VANILLA,
    PromptEnvelope,
    build_prompt,
    shuffle_and_group,
)


class TransportError(Exception):
    """All retry attempts exhausted; carries the per-attempt log."""

    def __init__(self, message, attempts):
        super().__init__(message)
        self.attempts = attempts


class RequestError(Exception):
    """Non-retryable client-side failure (HTTP 4xx other than 429)."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = ""
    model: str = "mock"
    api_key_env: str = "BATCHCOT_API_KEY"
    timeout: float = 120.0
    max_retries: int = 3
    max_concurrent: int = 4
    temperature: float = 0.6
    max_tokens: int = 32768
    seed: Optional[int] = None
    backoff_base: float = 0.5
    token_scheme: str = WHITESPACE

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def sampling(self) -> SamplingParams:
        return SamplingParams(
            temperature=self.temperature, max_tokens=self.max_tokens, seed=self.seed
        )


class RawCompletion(NamedTuple):
    text: str
    completion_tokens: Optional[int]
    attempts: list


def fingerprint(prompt_text: str) -> str:
    """Stable hash of a prompt's exact text."""
    return hashlib.sha256(prompt_text.encode("utf-8")).hexdigest()[:32]


class MockResponse(NamedTuple):
    text: str
    tokens: Optional[int] = None


def _default_response(prompt_text: str) -> MockResponse:
    return MockResponse("\\boxed{0}", None)


class MockScript:
    """Mapping from prompt fingerprints to canned responses.

    Unmatched prompts go through the default generator; the same fingerprint
    always yields the same response.
    """

    def __init__(self, responses=None,
                 default: Callable[[str], MockResponse] = _default_response):
        self.responses = dict(responses or {})
        self.default = default

    def add(self, prompt_text: str, text: str, tokens: Optional[int] = None):
        self.responses[fingerprint(prompt_text)] = MockResponse(text, tokens)

    def lookup(self, prompt_text: str) -> MockResponse:
        fp = fingerprint(prompt_text)
        if fp in self.responses:
            return self.responses[fp]
        return self.default(prompt_text)

    @classmethod
    def from_dir(cls, path) -> "MockScript":
        """Load fingerprint-named .txt response files (optional .tokens sidecar)."""
        responses = {}
        for name in sorted(os.listdir(path)):
            if not name.endswith(".txt"):
                continue
            fp = name[:-len(".txt")]
            with open(os.path.join(path, name), encoding="utf-8") as fh:
                text = fh.read()
            tokens = None
            sidecar = os.path.join(path, fp + ".tokens")
            if os.path.exists(sidecar):
                with open(sidecar, encoding="utf-8") as fh:
                    tokens = int(fh.read().strip())
            responses[fp] = MockResponse(text, tokens)
        return cls(responses=responses)

    def write_dir(self, path):
        os.makedirs(path, exist_ok=True)
        for fp, response in self.responses.items():
            with open(os.path.join(path, fp + ".txt"), "w", encoding="utf-8") as fh:
                fh.write(response.text)
            if response.tokens is not None:
                with open(os.path.join(path, fp + ".tokens"), "w", encoding="utf-8") as fh:
                    fh.write(str(response.tokens))


class MockBackend:
    """In-process scripted engine; no network involved."""

    def __init__(self, script: MockScript):
        self.script = script
        self.name = "mock"

    def send(self, prompt_text: str, cfg: EndpointConfig) -> RawCompletion:
        response = self.script.lookup(prompt_text)
        return RawCompletion(response.text, response.tokens,
                             [{"attempt": 1, "status": 200}])


class HttpBackend:
    """OpenAI-compatible chat-completions transport with retry and backoff."""

    def __init__(self, base_url: str, model: str):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.name = f"{self.base_url}#{model}"

    def send(self, prompt_text: str, cfg: EndpointConfig) -> RawCompletion:
        url = self.base_url + "/chat/completions"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt_text}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        if cfg.seed is not None:
            payload["seed"] = cfg.seed
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(cfg.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        attempts = []
        total = cfg.max_retries + 1
        for attempt in range(1, total + 1):
            try:
                resp = requests.post(url, json=payload, headers=headers,
                                     timeout=cfg.timeout)
            except requests.RequestException as exc:
                attempts.append({"attempt": attempt, "error": type(exc).__name__})
            else:
                if resp.status_code == 200:
                    attempts.append({"attempt": attempt, "status": 200})
                    data = resp.json()
                    text = data["choices"][0]["message"]["content"]
                    tokens = (data.get("usage") or {}).get("completion_tokens")
                    return RawCompletion(text, tokens, attempts)
                attempts.append({"attempt": attempt, "status": resp.status_code})
                if resp.status_code != 429 and resp.status_code < 500:
                    raise RequestError(
                        f"request rejected with HTTP {resp.status_code}",
                        status=resp.status_code,
                    )
            if attempt < total and cfg.backoff_base > 0:
                time.sleep(cfg.backoff_base * 2 ** (attempt - 1))
        raise TransportError(
            f"exhausted {total} attempts against {url}", attempts
        )


def complete(envelope: PromptEnvelope, cfg: EndpointConfig,
             backend) -> CompletionRecord:
    """One chat completion for a prompt envelope."""
    raw = backend.send(envelope.text, cfg)
    return CompletionRecord(
        envelope=envelope,
        raw_text=raw.text,
        counted_tokens=count_tokens(raw.text, cfg.token_scheme),
        reported_tokens=raw.completion_tokens,
        sampling=cfg.sampling(),
        endpoint=backend.name,
    )


def complete_many(envelopes, cfg: EndpointConfig, backend) -> list:
    """Concurrent completions, merged in input order.

    Failures are returned in place as exception objects, never raised here.
    """
    def one(envelope):
        try:
            return complete(envelope, cfg, backend)
        except (TransportError, RequestError) as exc:
            return exc

    with ThreadPoolExecutor(max_workers=cfg.max_concurrent) as pool:
        return list(pool.map(one, envelopes))


# --- batch-compression experiment ---------------------------------------------

@dataclass
class ExperimentRow:
    batch_size: int
    n_groups: int
    n_questions: int
    n_graded: int
    accuracy: float
    mean_tokens_per_question: float
    mean_tokens_split: Optional[float]
    n_failures: int
    n_unsplittable: int


@dataclass
class ExperimentReport:
    rows: list
    seed: int
    group_mode: str
    endpoint: str
    sampling: SamplingParams


def run_batch_experiment(questions, batch_sizes, cfg: EndpointConfig, backend,
                         seed: int = 0, group: str = "random") -> ExperimentReport:
    """Vanilla vs Batch-k token/accuracy comparison over a question corpus."""
    questions = list(questions)
    if not questions:
        raise ValueError("experiment needs a nonempty corpus")
    if any(k < 1 for k in batch_sizes):
        raise ValueError("batch sizes must all be >= 1")
    qmap = {q.id: q for q in questions}
    rows = []
    for k in batch_sizes:
        groups = shuffle_and_group(questions, k, seed=seed, group=group)
        envelopes = [build_prompt(g) for g in groups]
        results = complete_many(envelopes, cfg, backend)

        per_question_tokens = []
        split_tokens = []
        n_correct = 0
        n_graded = 0
        n_failures = 0
        n_unsplittable = 0
        for grp, result in zip(groups, results):
            if isinstance(result, Exception):
                n_failures += 1
                continue
            size = len(grp)
            total = result.effective_tokens
            per_question_tokens.extend([total / size] * size)
            if result.envelope.mode == VANILLA:
                chains = [vanilla_chain(result)]
                split_tokens.append(total)
            else:
                answers = dict(parse_final_answers(result).entries)
                chains = []
                for pos, q in enumerate(grp, 1):
                    chains.append(ReasoningChain(
                        question_id=q.id, text="",
                        origin=ChainOrigin(kind=BATCH, size=size, position=pos),
                        predicted_answer=answers.get(pos),
                    ))
                try:
                    for chain in split_batch_chains(result):
                        split_tokens.append(count_tokens(chain.text, cfg.token_scheme))
                except UnsplittableError:
                    n_unsplittable += 1
            for chain in chains:
                verdict = verify.grade(chain, qmap[chain.question_id])
                n_graded += 1
                if verdict == verify.CORRECT:
                    n_correct += 1

        rows.append(ExperimentRow(
            batch_size=k,
            n_groups=len(groups),
            n_questions=sum(len(g) for g in groups),
            n_graded=n_graded,
            accuracy=n_correct / n_graded if n_graded else 0.0,
            mean_tokens_per_question=(
                sum(per_question_tokens) / len(per_question_tokens)
                if per_question_tokens else 0.0
            ),
            mean_tokens_split=(
                sum(split_tokens) / len(split_tokens) if split_tokens else None
            ),
            n_failures=n_failures,
            n_unsplittable=n_unsplittable,
        ))
    return ExperimentReport(
        rows=rows, seed=seed, group_mode=group, endpoint=backend.name,
        sampling=cfg.sampling(),
    )


def render_experiment_table(report: ExperimentReport) -> str:
    lines = [
        f"{'Mode':<10} {'Acc':>8} {'Tokens/Q':>12} {'Tokens/Q(split)':>16} "
        f"{'Graded':>8} {'Fail':>6} {'Unsplit':>8}"
    ]
    for row in report.rows:
        mode = "Vanilla" if row.batch_size == 1 else f"Batch-{row.batch_size}"
        split = f"{row.mean_tokens_split:.2f}" if row.mean_tokens_split is not None else "-"
        lines.append(
            f"{mode:<10} {row.accuracy * 100:>7.2f}% "
            f"{row.mean_tokens_per_question:>12.2f} {split:>16} "
            f"{row.n_graded:>8} {row.n_failures:>6} {row.n_unsplittable:>8}"
        )
    return "\n".join(lines)


def experiment_rows_jsonl(report: ExperimentReport) -> str:
    lines = []
    for row in report.rows:
        lines.append(json.dumps({
            "batch_size": row.batch_size,
            "n_groups": row.n_groups,
            "n_questions": row.n_questions,
            "n_graded": row.n_graded,
            "accuracy": row.accuracy,
            "mean_tokens_per_question": row.mean_tokens_per_question,
            "mean_tokens_split": row.mean_tokens_split,
            "n_failures": row.n_failures,
            "n_unsplittable": row.n_unsplittable,
        }, sort_keys=True))
    return "\n".join(lines) + "\n"


# --- loopback HTTP mode for transport-path integration tests -------------------

@contextmanager
def mock_http_server(script: MockScript, host: str = "127.0.0.1", port: int = 0):
    """Serve a MockScript over an OpenAI-compatible loopback endpoint."""

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            if not self.path.endswith("/chat/completions"):
                self.send_error(404)
                return
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length))
            prompt_text = body["messages"][0]["content"]
            response = script.lookup(prompt_text)
            tokens = (response.tokens if response.tokens is not None
                      else count_tokens(response.text, WHITESPACE))
            payload = json.dumps({
                "choices": [{"message": {"role": "assistant",
                                         "content": response.text}}],
                "usage": {"completion_tokens": tokens},
            }).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer((host, port), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://{host}:{server.server_address[1]}/v1"
    finally:
        server.shutdown()
        thread.join()
