"""Subcommand front end wiring the pipeline stages into reproducible runs."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from batchcot import __version__, grpo, harness, preference, verify
from batchcot.client import (
    EndpointConfig,
    HttpBackend,
    MockBackend,
    MockScript,
    RequestError,
    TransportError,
    complete_many,
    experiment_rows_jsonl,
    render_experiment_table,
    run_batch_experiment,
)
from batchcot.parsing import (
    BATCH,
    UnsplittableError,
    read_chains,
    read_completions,
    split_batch_chains,
    vanilla_chain,
    write_chains,
    write_completions,
)
from batchcot.prompts import (
    VANILLA,
    build_prompt,
    load_questions,
    shuffle_and_group,
)

_ENV_PREFIX = "BATCHCOT_"
_ENDPOINT_KEYS = {
    "base_url": str,
    "model": str,
    "temperature": float,
    "max_tokens": int,
    "timeout": float,
    "max_retries": int,
    "max_concurrent": int,
}


def _read_config_file(path) -> dict:
    """Flat key=value config format; blank lines and # comments ignored."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected key=value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def resolve_endpoint_config(args) -> EndpointConfig:
    """Precedence: flags > config file > environment > defaults."""
    defaults = EndpointConfig()
    values = {}
    for key, cast in _ENDPOINT_KEYS.items():
        env = os.environ.get(_ENV_PREFIX + key.upper())
        if env is not None:
            values[key] = cast(env)
    if getattr(args, "config", None):
        for key, raw in _read_config_file(args.config).items():
            if key not in _ENDPOINT_KEYS:
                raise ValueError(f"unknown config key: {key!r}")
            values[key] = _ENDPOINT_KEYS[key](raw)
    for key, cast in _ENDPOINT_KEYS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = cast(flag)
    return EndpointConfig(
        base_url=values.get("base_url", defaults.base_url),
        model=values.get("model", defaults.model),
        temperature=values.get("temperature", defaults.temperature),
        max_tokens=values.get("max_tokens", defaults.max_tokens),
        timeout=values.get("timeout", defaults.timeout),
        max_retries=values.get("max_retries", defaults.max_retries),
        max_concurrent=values.get("max_concurrent", defaults.max_concurrent),
        seed=getattr(args, "seed", None),
    )


def _make_backend(args, cfg: EndpointConfig):
    if getattr(args, "mock", None):
        return MockBackend(MockScript.from_dir(args.mock))
    if not cfg.base_url:
        raise ValueError("no endpoint configured: pass --mock DIR or --base-url URL")
    return HttpBackend(cfg.base_url, cfg.model)


def write_run_manifest(path, command, argv, config, seed, inputs, outputs,
                       started, exclusions=None, extra=None):
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "inputs": list(inputs),
        "outputs": list(outputs),
        "tool_version": __version__,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "exclusions": exclusions or {},
    }
    if extra:
        manifest.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_snapshot(cfg: EndpointConfig) -> dict:
    return {
        "base_url": cfg.base_url,
        "model": cfg.model,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
        "timeout": cfg.timeout,
        "max_retries": cfg.max_retries,
        "max_concurrent": cfg.max_concurrent,
    }


def _add_endpoint_flags(p):
    p.add_argument("--mock", help="directory of fingerprint-named mock responses")
    p.add_argument("--base-url", dest="base_url")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", dest="max_tokens", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--max-retries", dest="max_retries", type=int)
    p.add_argument("--max-concurrent", dest="max_concurrent", type=int)
    p.add_argument("--config", help="flat key=value config file")


# --- subcommands ----------------------------------------------------------------

def cmd_gen(args, argv):
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    cfg = resolve_endpoint_config(args)
    backend = _make_backend(args, cfg)
    questions = load_questions(args.questions)
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = []
    for k in args.batch_size:
        groups = shuffle_and_group(questions, k, seed=args.seed, group=args.group)
        envelopes = [build_prompt(g) for g in groups]
        results = complete_many(envelopes, cfg, backend)
        records = [r for r in results if not isinstance(r, Exception)]
        failures = len(results) - len(records)
        out_path = os.path.join(args.out_dir, f"completions_k{k}.jsonl")
        write_completions(out_path, records)
        outputs.append(out_path)
        per_q = [
            r.effective_tokens / r.envelope.batch_size for r in records
            for _ in range(r.envelope.batch_size)
        ]
        mean = sum(per_q) / len(per_q) if per_q else 0.0
        mode = "vanilla" if k == 1 else f"batch-{k}"
        print(f"{mode}: {len(records)} completions, "
              f"mean tokens/question = {mean:.2f}, failures = {failures}")
    write_run_manifest(
        os.path.join(args.out_dir, "manifest.json"), "gen", argv,
        _config_snapshot(cfg), args.seed, [args.questions], outputs, started,
        extra={"group": args.group, "batch_sizes": args.batch_size},
    )
    return 0


def cmd_split(args, argv):
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    records = read_completions(args.infile)
    chains = []
    unsplittable = 0
    for record in records:
        if record.envelope.mode == VANILLA:
            chains.append(vanilla_chain(record))
        else:
            try:
                chains.extend(split_batch_chains(record))
            except UnsplittableError:
                unsplittable += 1
    write_chains(args.out, chains)
    rate = unsplittable / len(records) if records else 0.0
    print(f"{len(chains)} chains from {len(records)} completions; "
          f"unsplittable = {unsplittable} ({rate:.1%})")
    write_run_manifest(
        args.out + ".manifest.json", "split", argv, {}, None,
        [args.infile], [args.out], started,
        exclusions={"unsplittable": unsplittable},
    )
    return 0


def cmd_grade(args, argv):
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    questions = {q.id: q for q in load_questions(args.questions)}
    chains = read_chains(args.infile)
    missing = sorted({c.question_id for c in chains if c.question_id not in questions})
    if missing:
        raise ValueError(f"chains reference unknown question ids: {missing}")
    for chain in chains:
        chain.verdict = verify.grade(chain, questions[chain.question_id])
    write_chains(args.out, chains)
    counts = {}
    for chain in chains:
        counts[chain.verdict] = counts.get(chain.verdict, 0) + 1
    print(f"graded {len(chains)} chains: " +
          ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    write_run_manifest(
        args.out + ".manifest.json", "grade", argv, {}, None,
        [args.infile, args.questions], [args.out], started,
        extra={"verdict_counts": counts},
    )
    return 0


def cmd_label(args, argv):
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    questions = load_questions(args.questions)
    chains = []
    for path in args.infile:
        chains.extend(read_chains(path))
    vanilla_chains = [c for c in chains if c.origin.kind == VANILLA]
    batch_chains = [c for c in chains if c.origin.kind == BATCH]
    mode = preference.PAIRED if args.paired else preference.PER_CHAIN
    samples, manifest = preference.build_dataset(
        vanilla_chains, batch_chains, questions, seed=args.seed, mode=mode
    )
    preference.write_samples(args.out, samples)
    print(f"{manifest['n_samples']} samples; label counts: "
          + ", ".join(f"{k}={v}" for k, v in manifest["label_counts"].items()))
    write_run_manifest(
        args.out + ".manifest.json", "label", argv, {}, args.seed,
        list(args.infile) + [args.questions], [args.out], started,
        extra={"dataset": manifest},
    )
    return 0


def cmd_grpo_check(args, argv):
    results = grpo.run_verification_suite(seed=args.seed)
    failed = 0
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status} {result.name}: {result.detail}")
        if not result.passed:
            failed += 1
    return 0 if failed == 0 else 1


def cmd_grpo_train_toy(args, argv):
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    cfg = grpo.GrpoConfig(
        beta=args.beta, group_size=args.group_size, learning_rate=args.lr,
        steps=args.steps, advantage_mode=args.advantage_mode,
        objective_mode=args.objective_mode,
    )
    dataset = grpo.make_toy_dataset(n=args.samples, seed=args.seed)
    policy, curve = grpo.train_toy(dataset, cfg, seed=args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    curve_path = os.path.join(args.out_dir, "curve.csv")
    policy_path = os.path.join(args.out_dir, "policy.txt")
    grpo.write_curve_csv(curve_path, curve)
    grpo.save_policy(policy_path, policy, args.seed, cfg)
    final = curve[-1].mean_gold_prob if curve else 1 / 3
    print(f"trained {cfg.steps} steps; final mean gold-label probability = {final:.4f}")
    write_run_manifest(
        os.path.join(args.out_dir, "manifest.json"), "grpo-train-toy", argv,
        {"beta": cfg.beta, "group_size": cfg.group_size,
         "learning_rate": cfg.learning_rate, "steps": cfg.steps,
         "advantage_mode": cfg.advantage_mode,
         "objective_mode": cfg.objective_mode, "samples": args.samples},
        args.seed, [], [curve_path, policy_path], started,
    )
    return 0


def cmd_eval(args, argv):
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    cfg = resolve_endpoint_config(args)
    backend = _make_backend(args, cfg)
    spec = harness.registry_spec(
        args.benchmark, args.corpus, samples_per_question=args.samples_per_question
    )
    records, aggregate = harness.evaluate(spec, cfg, backend)
    os.makedirs(args.out_dir, exist_ok=True)
    results_path = os.path.join(args.out_dir, "results.jsonl")
    with open(results_path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    agg_path = os.path.join(args.out_dir, "aggregate.json")
    harness.write_aggregates(agg_path, [aggregate])
    report = harness.render_report([aggregate])
    report_path = os.path.join(args.out_dir, "report.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report + "\n")
    print(report)
    write_run_manifest(
        os.path.join(args.out_dir, "manifest.json"), "eval", argv,
        _config_snapshot(cfg), args.seed, [args.corpus],
        [results_path, agg_path, report_path], started,
        exclusions={"endpoint_failures": aggregate.exclusions},
    )
    return 0


def cmd_report(args, argv):
    aggregates = harness.read_aggregates(args.aggregates)
    baseline = harness.read_aggregates(args.baseline) if args.baseline else None
    report = harness.render_report(aggregates, baseline=baseline)
    print(report)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(harness.aggregates_to_csv(aggregates))
    return 0


def cmd_batch_experiment(args, argv):
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    cfg = resolve_endpoint_config(args)
    backend = _make_backend(args, cfg)
    questions = load_questions(args.questions)
    report = run_batch_experiment(
        questions, args.batch_size, cfg, backend, seed=args.seed, group=args.group
    )
    os.makedirs(args.out_dir, exist_ok=True)
    rows_path = os.path.join(args.out_dir, "experiment.jsonl")
    with open(rows_path, "w", encoding="utf-8") as fh:
        fh.write(experiment_rows_jsonl(report))
    table = render_experiment_table(report)
    table_path = os.path.join(args.out_dir, "experiment.txt")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)
    write_run_manifest(
        os.path.join(args.out_dir, "manifest.json"), "batch-experiment", argv,
        _config_snapshot(cfg), args.seed, [args.questions],
        [rows_path, table_path], started,
        exclusions={"request_failures": sum(r.n_failures for r in report.rows),
                    "unsplittable": sum(r.n_unsplittable for r in report.rows)},
        extra={"group": args.group, "batch_sizes": args.batch_size},
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="batchcot",
        description="Batch-inference reasoning-efficiency pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate vanilla and batch completions")
    p.add_argument("--questions", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--batch-size", action="append", type=int, required=True)
    p.add_argument("--group", choices=["random", "sequential"], default="random")
    p.add_argument("--seed", type=int, default=0)
    _add_endpoint_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("split", help="split completions into reasoning chains")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("grade", help="attach correctness verdicts to chains")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grade)

    p = sub.add_parser("label", help="build the A/B/C preference dataset")
    p.add_argument("--in", dest="infile", action="append", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paired", action="store_true",
                   help="one vanilla + one batch chain per question")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("grpo-check", help="run gradient/KL/advantage verification")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grpo_check)

    p = sub.add_parser("grpo-train-toy", help="train the toy label policy")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--group-size", type=int, default=16)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--advantage-mode", choices=[grpo.MEAN_STD, grpo.MEAN_ONLY],
                   default=grpo.MEAN_STD)
    p.add_argument("--objective-mode", choices=[grpo.SAMPLED, grpo.PAPER_LITERAL],
                   default=grpo.SAMPLED)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_grpo_train_toy)

    p = sub.add_parser("eval", help="evaluate a benchmark corpus")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--samples-per-question", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    _add_endpoint_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render an accuracy/token report")
    p.add_argument("--aggregates", required=True)
    p.add_argument("--baseline")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("batch-experiment",
                       help="vanilla vs batch-k token/accuracy comparison")
    p.add_argument("--questions", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--batch-size", action="append", type=int, required=True)
    p.add_argument("--group", choices=["random", "sequential"], default="random")
    p.add_argument("--seed", type=int, default=0)
    _add_endpoint_flags(p)
    p.set_defaults(func=cmd_batch_experiment)

    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args, argv)
    except (TransportError, RequestError) as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
