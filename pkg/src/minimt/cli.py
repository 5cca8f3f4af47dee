"""Command-line surface: reproducible runs over JSON configs.

Every subcommand reads an optional JSON config (fields overridable with
repeated --set dotted.path=value flags), validates it before touching any
output, runs the corresponding pipeline, and publishes its artifacts plus a
RunManifest all-or-nothing (staged temp files, renamed together). Exit codes:
0 success, 2 usage/config error, 3 runtime failure; failures print a JSON
error record to stderr.

The MINIMT_CONFIG_DIR environment variable supplies the directory against
which bare config file names are resolved.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time

from . import __version__
from .bench import DecodeConfig, bench_throughput
from .checkpoint import load_checkpoint, save_checkpoint
from .compress import (
    DistillConfig,
    PruneConfig,
    distill,
    iterative_prune,
    middle_prune,
)
from .corpus import SplitSpec, read_corpus, write_corpus
from .filtering import (
    FilterConfig,
    ForcedLogProbQualityScorer,
    PivotTranslationEmbedder,
    ScorerSet,
    langid_scorers,
    run_pipeline,
)
from .langid import train_langid
from .metrics import evaluate_direction
from .model import ModelConfig, init_model, quantize_fp16
from .reports import (
    ArtifactSet,
    EvalReport,
    RunManifest,
    atomic_write_text,
    emit_report,
    quality_efficiency_csv,
)
from .rng import Rng
from .synthetic import (
    NoiseRates,
    ToyLanguageSpec,
    generate_synthetic_corpus,
    langid_seed_corpus,
)
from .training import TrainConfig, train
from .vocab import vocab_from_corpus

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3
ENV_CONFIG_DIR = "MINIMT_CONFIG_DIR"
SCHEMA_VERSION = 1


class ConfigError(Exception):
    pass


def _resolve_config_path(name: str) -> str:
    if os.path.exists(name):
        return name
    base = os.environ.get(ENV_CONFIG_DIR)
    if base and not os.path.isabs(name):
        candidate = os.path.join(base, name)
        if os.path.exists(candidate):
            return candidate
    raise ConfigError(f"config file not found: {name}")


def _parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"--set expects dotted.path=value, got {text!r}")
    path, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path.split("."), value


def load_config(path: str | None, overrides) -> dict:
    cfg: dict = {}
    if path:
        with open(_resolve_config_path(path)) as f:
            try:
                cfg = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config is not valid JSON: {e}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config root must be a JSON object")
        version = cfg.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
    for flag in overrides or ():
        keys, value = _parse_override(flag)
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {'.'.join(keys)} crosses a non-object")
        node[keys[-1]] = value
    return cfg


def _build(cls, obj: dict, what: str):
    try:
        return cls(**obj)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {what} config: {e}") from None


def _manifest(command: str, cfg: dict, seed) -> RunManifest:
    return RunManifest(command=command, config=cfg, seed=seed,
                       toolkit_version=__version__)


def _read(path):
    records, report = read_corpus(path)
    if report.n_malformed:
        print(f"warning: {report.n_malformed} malformed lines in {path}",
              file=sys.stderr)
    return records


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, args.set)
    seed = int(cfg.get("seed", 0))
    sizes = _build(SplitSpec, {
        "train_size": int(cfg.get("train_size", 2000)),
        "dev_size": int(cfg.get("dev_size", 200)),
        "devtest_size": int(cfg.get("devtest_size", 200)),
        "seed": seed,
    }, "split")
    noise = _build(NoiseRates, cfg.get("noise_rates", {}), "noise")
    spec = ToyLanguageSpec()
    manifest = _manifest("gen-data", cfg, seed)

    t0 = time.monotonic()
    corpus = generate_synthetic_corpus(spec, sizes, noise, seed)
    seeds = langid_seed_corpus(spec, int(cfg.get("langid_seed_size", 80)), seed)
    manifest.timings["wall_seconds"] = time.monotonic() - t0

    with ArtifactSet() as artifacts:
        for split in ("train", "dev", "devtest"):
            path = os.path.join(args.out_dir, f"{split}.jsonl")
            tmp = artifacts.stage(path, lambda t, s=split: write_corpus(
                getattr(corpus, s), t))
            manifest.add_output(path, content_path=tmp)
        flags_path = os.path.join(args.out_dir, "train_flags.jsonl")
        # ground-truth noise flags, sidecar only (never read by the pipeline)
        tmp = artifacts.stage_text(flags_path, "".join(
            json.dumps({"index": i, "flags": sorted(r.flags)}) + "\n"
            for i, r in enumerate(corpus.train) if r.flags))
        manifest.add_output(flags_path, content_path=tmp)
        seed_path = os.path.join(args.out_dir, "langid_seed.jsonl")
        tmp = artifacts.stage_text(seed_path, "".join(
            json.dumps({"lang": lang, "text": s}) + "\n"
            for lang in sorted(seeds) for s in seeds[lang]))
        manifest.add_output(seed_path, content_path=tmp)
        artifacts.stage_text(os.path.join(args.out_dir, "manifest.json"),
                             manifest.to_json())
    return EXIT_OK


def _load_langid_seed(path) -> dict[str, list[str]]:
    seeds: dict[str, list[str]] = {}
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            seeds.setdefault(obj["lang"], []).append(obj["text"])
    return seeds


def cmd_filter(args) -> int:
    cfg = load_config(args.config, args.set)
    fc = _build(FilterConfig, cfg.get("filter", {}), "filter")

    scorers = ScorerSet()
    if fc.enabled("language_detection"):
        if not args.langid_seed:
            raise ConfigError(
                "language detection is enabled: pass --langid-seed or disable "
                "the stage via filter.stages_enabled")
        scorers.langid = langid_scorers(train_langid(_load_langid_seed(args.langid_seed)))
    model = None
    if fc.enabled("semantic") or fc.enabled("quality_estimation"):
        if not args.model:
            raise ConfigError(
                "semantic/quality stages are enabled: pass --model or disable "
                "them via filter.stages_enabled")
        model = load_checkpoint(args.model)
    if fc.enabled("semantic"):
        pivot = cfg.get("semantic_pivot_lang")
        if not pivot:
            raise ConfigError("semantic stage needs semantic_pivot_lang in config")
        scorers.embedder = PivotTranslationEmbedder(model, pivot)
    if fc.enabled("quality_estimation"):
        qe_cfg = cfg.get("qe", {})
        scorers.qe = ForcedLogProbQualityScorer(
            model, midpoint=float(qe_cfg.get("midpoint", -1.5)),
            scale=float(qe_cfg.get("scale", 0.5)))

    manifest = _manifest("filter", cfg, None)
    manifest.add_input(args.infile)
    records = _read(args.infile)

    t0 = time.monotonic()
    kept, report = run_pipeline(records, fc, scorers)
    manifest.timings["wall_seconds"] = time.monotonic() - t0

    report_path = args.report or args.out + ".filter_report.json"
    with ArtifactSet() as artifacts:
        tmp = artifacts.stage(args.out, lambda t: write_corpus(kept, t))
        manifest.add_output(args.out, content_path=tmp)
        tmp = artifacts.stage_text(report_path, report.to_json())
        manifest.add_output(report_path, content_path=tmp)
        artifacts.stage_text(args.out + ".manifest.json", manifest.to_json())
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    seed = int(cfg.get("seed", 0))
    tc = _build(TrainConfig, {**cfg.get("train", {}), "seed": seed}, "train")

    train_records = _read(args.train_corpus)
    dev_records = _read(args.dev_corpus)
    if not train_records:
        raise ConfigError("training corpus is empty")
    vocab = vocab_from_corpus(train_records + dev_records)
    mc = _build(ModelConfig, {**cfg.get("model", {}), "vocab_size": len(vocab)},
                "model")

    manifest = _manifest("train", cfg, seed)
    manifest.add_input(args.train_corpus)
    manifest.add_input(args.dev_corpus)

    t0 = time.monotonic()
    model = init_model(mc, vocab, Rng(seed), metadata={"seed": str(seed)})
    best, log = train(model, train_records, dev_records, tc)
    manifest.timings["wall_seconds"] = time.monotonic() - t0

    best.metadata["stage"] = "trained"
    log_text = json.dumps({
        "stop_reason": log.stop_reason,
        "optimizer_steps": log.optimizer_steps,
        "best_step": log.best_step,
        "best_dev_loss": log.best_dev_loss,
        "evaluations": [{"step": e.step, "epoch": e.epoch,
                         "dev_loss": e.dev_loss, "improved": e.improved}
                        for e in log.entries],
    }, indent=2)
    with ArtifactSet() as artifacts:
        tmp = artifacts.stage(args.out, lambda t: save_checkpoint(best, t))
        manifest.add_output(args.out, content_path=tmp)
        log_path = args.out + ".train_log.json"
        tmp = artifacts.stage_text(log_path, log_text)
        manifest.add_output(log_path, content_path=tmp)
        artifacts.stage_text(args.out + ".manifest.json", manifest.to_json())
    return EXIT_OK


def cmd_distill(args) -> int:
    cfg = load_config(args.config, args.set)
    dc = _build(DistillConfig, cfg.get("distill", {}), "distill")
    teacher = load_checkpoint(args.teacher)
    authentic = _read(args.corpus)

    manifest = _manifest("distill", cfg, None)
    manifest.add_input(args.teacher)
    manifest.add_input(args.corpus)

    t0 = time.monotonic()
    kd = distill(teacher, authentic, dc, authentic)
    manifest.timings["wall_seconds"] = time.monotonic() - t0

    with ArtifactSet() as artifacts:
        tmp = artifacts.stage(args.out, lambda t: write_corpus(kd, t))
        manifest.add_output(args.out, content_path=tmp)
        artifacts.stage_text(args.out + ".manifest.json", manifest.to_json())
    return EXIT_OK


def cmd_prune(args) -> int:
    cfg = load_config(args.config, args.set)
    dev_records = _read(args.dev)
    prune_cfg_obj = dict(cfg.get("prune", {}))
    if args.strategy:
        prune_cfg_obj["strategy"] = args.strategy
    if args.n is not None:
        prune_cfg_obj["n"] = args.n
    if args.side:
        prune_cfg_obj["sides"] = args.side
    if "importance_directions" not in prune_cfg_obj:
        prune_cfg_obj["importance_directions"] = sorted(
            {(r.src_lang, r.tgt_lang) for r in dev_records})
    else:
        prune_cfg_obj["importance_directions"] = [
            tuple(d) for d in prune_cfg_obj["importance_directions"]]
    pc = _build(PruneConfig, prune_cfg_obj, "prune")

    model = load_checkpoint(args.ckpt)
    manifest = _manifest("prune", cfg, None)
    manifest.add_input(args.ckpt)
    manifest.add_input(args.dev)

    t0 = time.monotonic()
    if pc.strategy == "iterative":
        pruned, report = iterative_prune(model, pc, dev_records)
    else:
        pruned, report = middle_prune(model, pc)
    manifest.timings["wall_seconds"] = time.monotonic() - t0

    pruned.metadata.update({"stage": "pruned", "parent": model.fingerprint()})
    report_path = args.report or args.out + ".prune_report.json"
    with ArtifactSet() as artifacts:
        tmp = artifacts.stage(args.out, lambda t: save_checkpoint(pruned, t))
        manifest.add_output(args.out, content_path=tmp)
        tmp = artifacts.stage_text(report_path, report.to_json())
        manifest.add_output(report_path, content_path=tmp)
        artifacts.stage_text(args.out + ".manifest.json", manifest.to_json())
    return EXIT_OK


def cmd_quantize(args) -> int:
    model = load_checkpoint(args.ckpt)
    manifest = _manifest("quantize", {}, None)
    manifest.add_input(args.ckpt)
    q = quantize_fp16(model)
    q.metadata.update({"stage": "fp16", "parent": model.fingerprint()})
    with ArtifactSet() as artifacts:
        tmp = artifacts.stage(args.out, lambda t: save_checkpoint(q, t))
        manifest.add_output(args.out, content_path=tmp)
        artifacts.stage_text(args.out + ".manifest.json", manifest.to_json())
    return EXIT_OK


def _group_by_direction(records):
    groups: dict[str, list] = {}
    for r in records:
        groups.setdefault(r.direction, []).append(r)
    return groups


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.set)
    dc = _build(DecodeConfig, cfg.get("decode", {}), "decode")
    model = load_checkpoint(args.ckpt)
    testset = _read(args.testset)
    if not testset:
        raise ConfigError("testset is empty")

    manifest = _manifest("evaluate", cfg, None)
    manifest.add_input(args.ckpt)
    manifest.add_input(args.testset)

    t0 = time.monotonic()
    report = EvalReport()
    groups = _group_by_direction(testset)
    for direction in sorted(groups):
        report.rows.append(evaluate_direction(model, groups[direction], dc))
    manifest.timings["wall_seconds"] = time.monotonic() - t0

    with ArtifactSet() as artifacts:
        tmp = artifacts.stage_text(args.out, report.to_json())
        manifest.add_output(args.out, content_path=tmp)
        if args.csv:
            tmp = artifacts.stage_text(args.csv, report.to_csv())
            manifest.add_output(args.csv, content_path=tmp)
        artifacts.stage_text(args.out + ".manifest.json", manifest.to_json())
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = load_config(args.config, args.set)
    dc = _build(DecodeConfig, cfg.get("decode", {}), "decode")
    repetitions = int(cfg.get("repetitions", 3))
    warmup = int(cfg.get("warmup_batches", 1))
    model = load_checkpoint(args.ckpt)
    testset = _read(args.testset)
    if not testset:
        raise ConfigError("testset is empty")

    manifest = _manifest("bench", cfg, None)
    manifest.add_input(args.ckpt)
    manifest.add_input(args.testset)

    runs = []
    t0 = time.monotonic()
    for _ in range(repetitions):
        runs.append(bench_throughput(model, testset, dc, warmup_batches=warmup))
    manifest.timings["wall_seconds"] = time.monotonic() - t0

    bench_text = json.dumps({
        "model_id": model.model_id(),
        "decode": {"beam_size": dc.beam_size,
                   "batch_token_budget": dc.batch_token_budget,
                   "max_output_length": dc.max_output_length,
                   "worker_threads": dc.worker_threads},
        "repetitions": [{
            "tokens_per_second": r.tokens_per_second,
            "timed_seconds": r.timed_seconds,
            "total_seconds": r.total_seconds,
            "output_tokens": r.output_tokens,
        } for r in runs],
        "median_tokens_per_second": statistics.median(
            r.tokens_per_second for r in runs),
    }, indent=2, sort_keys=True)
    with ArtifactSet() as artifacts:
        tmp = artifacts.stage_text(args.out, bench_text)
        manifest.add_output(args.out, content_path=tmp)
        artifacts.stage_text(args.out + ".manifest.json", manifest.to_json())
    return EXIT_OK


def cmd_report(args) -> int:
    if args.chart:
        if args.chart != "quality-efficiency":
            raise ConfigError(f"unknown chart {args.chart!r}")
        labeled = []
        for path in args.infile:
            label = os.path.splitext(os.path.basename(path))[0]
            labeled.append((label, EvalReport.from_json(open(path).read())))
        atomic_write_text(args.out, quality_efficiency_csv(labeled))
        return EXIT_OK

    if len(args.infile) != 1:
        raise ConfigError("report conversion expects exactly one --in file")
    text = open(args.infile[0]).read()
    obj = json.loads(text)
    if "rows" in obj:
        report = EvalReport.from_json(text)
    elif "strategy" in obj:
        from .compress import PruneReport

        report = PruneReport.from_json(text)
    else:
        raise ConfigError("unrecognized report JSON shape")
    emit_report(report, args.format, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="minimt",
        description="desk-scale translation model compression toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", default=[],
                        metavar="PATH=VALUE", help="override a config field")

    sp = sub.add_parser("gen-data", help="generate the synthetic toy corpus")
    common(sp)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("filter", help="run the staged filtering pipeline")
    common(sp)
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--report")
    sp.add_argument("--langid-seed")
    sp.add_argument("--model", help="checkpoint for semantic/QE stages")
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("train", help="train a model from scratch")
    common(sp)
    sp.add_argument("--train-corpus", required=True)
    sp.add_argument("--dev-corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("distill", help="generate a KD corpus with a teacher")
    common(sp)
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_distill)

    sp = sub.add_parser("prune", help="layer-prune a checkpoint")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--dev", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--report")
    sp.add_argument("--strategy", choices=["iterative", "middle"])
    sp.add_argument("--n", type=int)
    sp.add_argument("--side", choices=["decoder", "encoder+decoder"])
    sp.set_defaults(func=cmd_prune)

    sp = sub.add_parser("quantize", help="store weights in half precision")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_quantize)

    sp = sub.add_parser("evaluate", help="score a checkpoint on a test set")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--testset", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("bench", help="measure decoding throughput")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--testset", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("report", help="convert or chart report files")
    sp.add_argument("--in", dest="infile", action="append", required=True)
    sp.add_argument("--format", choices=["json", "csv"], default="csv")
    sp.add_argument("--out", required=True)
    sp.add_argument("--chart", choices=["quality-efficiency"])
    sp.set_defaults(func=cmd_report)

    return p


def _error_record(kind: str, exc: BaseException):
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ConfigError as e:
        _error_record("config", e)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - CLI boundary
        _error_record(type(e).__name__, e)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
