"""Staged corpus filtering with pluggable scorers and per-stage accounting.

Stage order: rule-based, language detection, semantic similarity, quality
estimation. Keep-iff-score >= threshold for the three scored stages; one
threshold (default 0.6) governs all of them unless overridden per stage.
Output is always an order-preserving sub-list of the input; the only
mutation anywhere is HTML stripping in stage 1, and it is counted.
"""

from __future__ import annotations

import hashlib
import json
import re
import subprocess
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import ParallelRecord, dedup_key
from .langid import LangIdModel

STAGE_RULE = "rule_based"
STAGE_LANG = "language_detection"
STAGE_SEMANTIC = "semantic"
STAGE_QE = "quality_estimation"
STAGES = (STAGE_RULE, STAGE_LANG, STAGE_SEMANTIC, STAGE_QE)

_TAG_RE = re.compile(r"<[^>]*>")


@dataclass(frozen=True)
class FilterConfig:
    min_chars: int = 3
    max_chars: int = 200
    max_length_ratio: float = 2.0
    threshold: float = 0.6
    stage_thresholds: dict = field(default_factory=dict)
    skip_languages: dict = field(default_factory=dict)   # stage -> set of codes
    stages_enabled: dict = field(default_factory=dict)   # stage -> bool

    def __post_init__(self):
        if not 0 < self.min_chars <= self.max_chars:
            raise ValueError("need 0 < min_chars <= max_chars")
        if self.max_length_ratio <= 1.0:
            raise ValueError("max_length_ratio must be > 1")
        for t in (self.threshold, *self.stage_thresholds.values()):
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"threshold {t} outside [0, 1]")
        for stage in (*self.stage_thresholds, *self.skip_languages, *self.stages_enabled):
            if stage not in STAGES:
                raise ValueError(f"unknown stage {stage!r}")

    def threshold_for(self, stage: str) -> float:
        return self.stage_thresholds.get(stage, self.threshold)

    def skips(self, stage: str) -> frozenset:
        return frozenset(self.skip_languages.get(stage, ()))

    def enabled(self, stage: str) -> bool:
        return self.stages_enabled.get(stage, True)

    def fingerprint(self) -> str:
        blob = json.dumps({
            "min_chars": self.min_chars, "max_chars": self.max_chars,
            "max_length_ratio": self.max_length_ratio, "threshold": self.threshold,
            "stage_thresholds": dict(sorted(self.stage_thresholds.items())),
            "skip_languages": {k: sorted(v) for k, v in sorted(self.skip_languages.items())},
            "stages_enabled": dict(sorted(self.stages_enabled.items())),
            "cosine_mapping": "(1+cos)/2",
        }, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class StageReport:
    stage: str
    n_in: int = 0
    n_kept: int = 0
    drop_reasons: dict = field(default_factory=dict)
    warnings: dict = field(default_factory=dict)
    modified: int = 0
    samples: list = field(default_factory=list)

    def drop(self, record: ParallelRecord, reason: str):
        self.drop_reasons[reason] = self.drop_reasons.get(reason, 0) + 1
        if len(self.samples) < 5:
            self.samples.append({
                "reason": reason, "direction": record.direction,
                "src": record.src[:60], "tgt": record.tgt[:60],
            })

    def warn(self, kind: str):
        self.warnings[kind] = self.warnings.get(kind, 0) + 1

    def validate(self):
        dropped = sum(self.drop_reasons.values())
        if self.n_in != self.n_kept + dropped:
            raise AssertionError(
                f"{self.stage}: counts do not telescope "
                f"({self.n_in} != {self.n_kept} + {dropped})")

    def to_dict(self) -> dict:
        return {
            "stage": self.stage, "n_in": self.n_in, "n_kept": self.n_kept,
            "drop_reasons": dict(sorted(self.drop_reasons.items())),
            "warnings": dict(sorted(self.warnings.items())),
            "modified": self.modified, "samples": self.samples,
        }


@dataclass
class FilterReport:
    stages: list[StageReport]
    config_fingerprint: str

    @property
    def n_in(self) -> int:
        return self.stages[0].n_in if self.stages else 0

    @property
    def n_out(self) -> int:
        return self.stages[-1].n_kept if self.stages else 0

    def validate(self):
        for s in self.stages:
            s.validate()
        for prev, cur in zip(self.stages, self.stages[1:]):
            if cur.n_in != prev.n_kept:
                raise AssertionError("stage boundaries do not telescope")

    def to_json(self) -> str:
        return json.dumps({
            "config_fingerprint": self.config_fingerprint,
            "n_in": self.n_in, "n_out": self.n_out,
            "stages": [s.to_dict() for s in self.stages],
        }, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Scorer surfaces
# ---------------------------------------------------------------------------


def _check_score(value: float, who: str) -> float:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{who} returned out-of-range score {value}")
    return float(value)


class NaiveBayesLanguageScorer:
    """Posterior of one expected language under a LangIdModel."""

    def __init__(self, model: LangIdModel, lang: str):
        self.name = f"langid-nb:{lang}"
        self.model = model
        self.lang = lang

    def score_text(self, text: str) -> float:
        return _check_score(self.model.score(text, self.lang), self.name)


def langid_scorers(model: LangIdModel) -> dict[str, NaiveBayesLanguageScorer]:
    return {lang: NaiveBayesLanguageScorer(model, lang) for lang in model.languages}


class PivotTranslationEmbedder:
    """Embeds a sentence as the hashed word-bigram profile of its translation
    into a fixed pivot language under a trained model. Both sides of an
    aligned pair map to (nearly) the same pivot sentence, so cosine
    similarity separates aligned pairs from mismatched ones. Word bigrams
    (over boundary-padded tokens) keep unrelated same-language sentences
    nearly orthogonal, which character n-grams do not."""

    def __init__(self, model, pivot_lang: str, dim: int = 256,
                 beam_size: int = 1, max_len: int = 64):
        if pivot_lang not in model.vocab.language_tags:
            raise ValueError(f"pivot language {pivot_lang!r} unknown to the model")
        self.name = f"pivot-embed:{pivot_lang}"
        self.model = model
        self.pivot_lang = pivot_lang
        self.dim = dim
        self.beam_size = beam_size
        self.max_len = max_len

    def supports(self, lang: str) -> bool:
        return lang in self.model.vocab.language_tags

    def _profile(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        tokens = ["<s>", *text.split(), "</s>"]
        for a, b in zip(tokens, tokens[1:]):
            h = int(hashlib.blake2b(f"{a}\x1f{b}".encode(), digest_size=4).hexdigest(), 16)
            vec[h % self.dim] += 1.0
        return vec

    def embed_batch(self, texts: list[str], langs: list[str]) -> list[np.ndarray]:
        from .decode import translate_batch
        from .vocab import detokenize

        # pivot-language text is its own pivot translation
        todo = [i for i, l in enumerate(langs) if l != self.pivot_lang]
        pivot_texts = list(texts)
        if todo:
            results = translate_batch(
                self.model, [(texts[i], langs[i], self.pivot_lang) for i in todo],
                beam_size=self.beam_size, max_len=self.max_len)
            for i, r in zip(todo, results):
                pivot_texts[i] = detokenize(r.tokens, self.model.vocab)
        return [self._profile(t) for t in pivot_texts]

    def embed(self, text: str, lang: str) -> np.ndarray:
        return self.embed_batch([text], [lang])[0]


class ForcedLogProbQualityScorer:
    """Reference-free quality score: the model's length-normalized forced
    log-probability of tgt given src, squashed to [0, 1] by a logistic with
    midpoint/scale in mean-logprob units."""

    def __init__(self, model, midpoint: float = -1.5, scale: float = 0.5):
        self.name = "forced-logprob-qe"
        self.model = model
        self.midpoint = midpoint
        self.scale = scale

    def supports(self, src_lang: str, tgt_lang: str) -> bool:
        tags = self.model.vocab.language_tags
        return src_lang in tags and tgt_lang in tags

    def score_batch(self, records) -> list[float]:
        from .decode import forced_token_logprobs

        lp = forced_token_logprobs(self.model, records)
        return [_check_score(1.0 / (1.0 + np.exp(-(v - self.midpoint) / self.scale)),
                             self.name) for v in lp]

    def score(self, record) -> float:
        return self.score_batch([record])[0]


class SubprocessScorer:
    """External scorer over a line protocol: one JSON record per line in, one
    decimal score in [0, 1] per line out, strict one-in-one-out ordering."""

    def __init__(self, command: list[str], name: str = "subprocess"):
        self.name = name
        self._proc = subprocess.Popen(
            command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
            bufsize=1)

    def supports(self, src_lang: str, tgt_lang: str) -> bool:
        return True

    def score(self, record) -> float:
        payload = json.dumps({
            "src_lang": record.src_lang, "tgt_lang": record.tgt_lang,
            "src": record.src, "tgt": record.tgt, "origin": record.origin,
        }, ensure_ascii=False)
        assert self._proc.stdin and self._proc.stdout
        self._proc.stdin.write(payload + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise RuntimeError(f"{self.name}: scorer process closed its output")
        return _check_score(float(line.strip()), self.name)

    def close(self):
        if self._proc.stdin:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class ScorerSet:
    """Scorers consumed by the pipeline stages; any of them may be None when
    the corresponding stage is disabled."""

    langid: dict | None = None       # lang code -> LanguageScorer
    embedder: object | None = None   # PairEmbedder-like
    qe: object | None = None         # QualityScorer-like


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def _strip_html(text: str) -> tuple[str, bool]:
    if "<" not in text or not _TAG_RE.search(text):
        return text, False
    return _TAG_RE.sub("", text).strip(), True


def rule_based_filter(records, cfg: FilterConfig):
    """Strip HTML, then drop empty / out-of-length / misaligned-ratio /
    duplicate records, preserving the surviving order."""
    report = StageReport(stage=STAGE_RULE, n_in=len(records))
    kept = []
    seen = set()
    for r in records:
        src, src_changed = _strip_html(r.src)
        tgt, tgt_changed = _strip_html(r.tgt)
        if src_changed or tgt_changed:
            report.modified += 1
            r = replace(r, src=src, tgt=tgt)
        if not r.src.strip() or not r.tgt.strip():
            report.drop(r, "empty")
            continue
        ls, lt = len(r.src), len(r.tgt)
        if min(ls, lt) < cfg.min_chars:
            report.drop(r, "min_length")
            continue
        if max(ls, lt) > cfg.max_chars:
            report.drop(r, "max_length")
            continue
        if max(ls, lt) / min(ls, lt) > cfg.max_length_ratio:
            report.drop(r, "length_ratio")
            continue
        key = dedup_key(r)
        if key in seen:
            report.drop(r, "duplicate")
            continue
        seen.add(key)
        kept.append(r)
    report.n_kept = len(kept)
    report.validate()
    return kept, report


def language_detection_filter(records, scorer_by_lang: dict, cfg: FilterConfig):
    """Keep a record iff both sides score at least the threshold under their
    expected language's detector; skip-listed languages bypass their side."""
    report = StageReport(stage=STAGE_LANG, n_in=len(records))
    thr = cfg.threshold_for(STAGE_LANG)
    skips = cfg.skips(STAGE_LANG)
    kept = []
    for r in records:
        ok = True
        for side, lang, reason in ((r.src, r.src_lang, "src_language"),
                                   (r.tgt, r.tgt_lang, "tgt_language")):
            if lang in skips:
                continue
            scorer = scorer_by_lang.get(lang)
            if scorer is None:
                raise ValueError(
                    f"no language scorer for {lang!r} and it is not skip-listed")
            if scorer.score_text(side) < thr:
                report.drop(r, reason)
                ok = False
                break
        if ok:
            kept.append(r)
    report.n_kept = len(kept)
    report.validate()
    return kept, report


def _cosine(a: np.ndarray, b: np.ndarray, report: StageReport) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        report.warn("zero_vector")
        return -1.0  # maps to score 0.0
    return float(np.dot(a, b) / (na * nb))


def semantic_filter(records, embedder, cfg: FilterConfig):
    """Keep a record iff (1 + cosine(embed(src), embed(tgt))) / 2 reaches the
    threshold. Pairs with an unsupported or skip-listed language bypass."""
    report = StageReport(stage=STAGE_SEMANTIC, n_in=len(records))
    thr = cfg.threshold_for(STAGE_SEMANTIC)
    skips = cfg.skips(STAGE_SEMANTIC)

    scored_idx = []
    for i, r in enumerate(records):
        if (r.src_lang in skips or r.tgt_lang in skips
                or not embedder.supports(r.src_lang)
                or not embedder.supports(r.tgt_lang)):
            report.warn("skipped_language")
        else:
            scored_idx.append(i)

    embeddings: dict[int, tuple] = {}
    if scored_idx:
        texts, langs = [], []
        for i in scored_idx:
            texts.extend([records[i].src, records[i].tgt])
            langs.extend([records[i].src_lang, records[i].tgt_lang])
        if hasattr(embedder, "embed_batch"):
            vecs = embedder.embed_batch(texts, langs)
        else:
            vecs = [embedder.embed(t, l) for t, l in zip(texts, langs)]
        for j, i in enumerate(scored_idx):
            embeddings[i] = (vecs[2 * j], vecs[2 * j + 1])

    kept = []
    for i, r in enumerate(records):
        if i not in embeddings:
            kept.append(r)
            continue
        a, b = embeddings[i]
        score = (1.0 + _cosine(a, b, report)) / 2.0
        if score >= thr:
            kept.append(r)
        else:
            report.drop(r, "semantic")
    report.n_kept = len(kept)
    report.validate()
    return kept, report


def quality_estimation_filter(records, qe, cfg: FilterConfig):
    """Keep a record iff the reference-free quality score reaches the
    threshold; skip-listed language pairs bypass."""
    report = StageReport(stage=STAGE_QE, n_in=len(records))
    thr = cfg.threshold_for(STAGE_QE)
    skips = cfg.skips(STAGE_QE)

    scored_idx = [i for i, r in enumerate(records)
                  if r.src_lang not in skips and r.tgt_lang not in skips
                  and qe.supports(r.src_lang, r.tgt_lang)]
    bypass = len(records) - len(scored_idx)
    for _ in range(bypass):
        report.warn("skipped_language")

    scores: dict[int, float] = {}
    if scored_idx:
        subset = [records[i] for i in scored_idx]
        if hasattr(qe, "score_batch"):
            values = qe.score_batch(subset)
        else:
            values = [qe.score(r) for r in subset]
        for i, v in zip(scored_idx, values):
            scores[i] = _check_score(v, getattr(qe, "name", "qe"))

    kept = []
    for i, r in enumerate(records):
        if i not in scores or scores[i] >= thr:
            kept.append(r)
        else:
            report.drop(r, "quality")
    report.n_kept = len(kept)
    report.validate()
    return kept, report


def run_pipeline(records, cfg: FilterConfig, scorers: ScorerSet):
    """All enabled stages in order; returns (kept, FilterReport)."""
    stages: list[StageReport] = []
    current = list(records)

    if cfg.enabled(STAGE_RULE):
        current, rep = rule_based_filter(current, cfg)
        stages.append(rep)
    if cfg.enabled(STAGE_LANG):
        if scorers.langid is None:
            raise ValueError("language detection enabled but no langid scorers given")
        current, rep = language_detection_filter(current, scorers.langid, cfg)
        stages.append(rep)
    if cfg.enabled(STAGE_SEMANTIC):
        if scorers.embedder is None:
            raise ValueError("semantic stage enabled but no embedder given")
        current, rep = semantic_filter(current, scorers.embedder, cfg)
        stages.append(rep)
    if cfg.enabled(STAGE_QE):
        if scorers.qe is None:
            raise ValueError("quality estimation enabled but no QE scorer given")
        current, rep = quality_estimation_filter(current, scorers.qe, cfg)
        stages.append(rep)

    report = FilterReport(stages=stages, config_fingerprint=cfg.fingerprint())
    report.validate()
    return current, report
