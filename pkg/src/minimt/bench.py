"""Token-budget batching and throughput measurement.

Throughput counts OUTPUT tokens only (generated target tokens, excluding the
forced language tag / bos and the terminating eos) divided by timed wall
seconds on a monotonic clock. Warmup batches run before timing starts and are
reported separately in total_seconds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .decode import translate_batch
from .vocab import detokenize, tokenize


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 3
    batch_token_budget: int = 1024
    max_output_length: int = 64
    length_penalty: float = 1.0
    worker_threads: int = 1

    def __post_init__(self):
        for name in ("beam_size", "batch_token_budget", "max_output_length",
                     "worker_threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def encoder_token_count(vocab):
    """Source cost of a record: characters + language tag + eos."""

    def count(record) -> int:
        return len(tokenize(record.src, vocab)) + 2

    return count


def batch_by_tokens(records, token_budget: int, token_count) -> list[list]:
    """Greedy packing in input order; each batch's summed source tokens stay
    within the budget. Concatenating the batches reproduces the input."""
    batches: list[list] = []
    current: list = []
    current_tokens = 0
    for i, r in enumerate(records):
        n = token_count(r)
        if n > token_budget:
            raise ValueError(
                f"record {i} ({r.src[:40]!r}) needs {n} tokens, over the "
                f"budget of {token_budget}")
        if current and current_tokens + n > token_budget:
            batches.append(current)
            current = []
            current_tokens = 0
        current.append(r)
        current_tokens += n
    if current:
        batches.append(current)
    return batches


@dataclass
class DecodeRun:
    hypotheses: list[str]
    output_tokens: int
    timed_seconds: float
    total_seconds: float
    n_batches: int


def decode_corpus(model, records, cfg: DecodeConfig, warmup_batches: int = 0,
                  clock=None) -> DecodeRun:
    """Decode a record list in token-budget batches. The first
    warmup_batches batches are decoded once untimed, then every batch is
    decoded inside the timed window."""
    clock = clock or time.monotonic
    batches = batch_by_tokens(records, cfg.batch_token_budget,
                              encoder_token_count(model.vocab))

    start_total = clock()
    for batch in batches[:warmup_batches]:
        translate_batch(model, [(r.src, r.src_lang, r.tgt_lang) for r in batch],
                        cfg.beam_size, cfg.max_output_length, cfg.length_penalty)

    hyps: list[str] = []
    output_tokens = 0
    start_timed = clock()
    for batch in batches:
        results = translate_batch(
            model, [(r.src, r.src_lang, r.tgt_lang) for r in batch],
            cfg.beam_size, cfg.max_output_length, cfg.length_penalty)
        for res in results:
            output_tokens += len(res.tokens)
            hyps.append(detokenize(res.tokens, model.vocab))
    end = clock()
    return DecodeRun(
        hypotheses=hyps,
        output_tokens=output_tokens,
        timed_seconds=end - start_timed,
        total_seconds=end - start_total,
        n_batches=len(batches),
    )


@dataclass
class BenchResult:
    tokens_per_second: float
    timed_seconds: float
    total_seconds: float
    output_tokens: int
    n_batches: int


def bench_throughput(model, testset, cfg: DecodeConfig,
                     warmup_batches: int = 1, clock=None) -> BenchResult:
    """Output tokens/second over a testset; zero tokens give throughput 0."""
    if not testset:
        raise ValueError("empty testset")
    run = decode_corpus(model, testset, cfg, warmup_batches=warmup_batches,
                        clock=clock)
    tput = run.output_tokens / run.timed_seconds if run.timed_seconds > 0 else 0.0
    if run.output_tokens == 0:
        tput = 0.0
    return BenchResult(
        tokens_per_second=tput,
        timed_seconds=run.timed_seconds,
        total_seconds=run.total_seconds,
        output_tokens=run.output_tokens,
        n_batches=run.n_batches,
    )
