import json
import sys

import numpy as np
import pytest

from minimt.corpus import ParallelRecord, SplitSpec
from minimt.filtering import (
    STAGE_LANG,
    STAGE_QE,
    STAGE_RULE,
    STAGE_SEMANTIC,
    FilterConfig,
    ScorerSet,
    SubprocessScorer,
    langid_scorers,
    language_detection_filter,
    quality_estimation_filter,
    rule_based_filter,
    run_pipeline,
    semantic_filter,
)
from minimt.langid import train_langid
from minimt.synthetic import (
    NoiseRates,
    ToyLanguageSpec,
    generate_synthetic_corpus,
    langid_seed_corpus,
)


def rec(src, tgt, sl="anu_Latn", tl="bnu_Latn", **kw):
    return ParallelRecord(src_lang=sl, tgt_lang=tl, src=src, tgt=tgt, **kw)


CLEAN = rec("zilo unat dumo trell", "nulo erin bidu sanim")


class TestRuleBased:
    def test_short_side_dropped_as_min_length(self):
        kept, report = rule_based_filter([rec("hi", "nulo erin")], FilterConfig())
        assert kept == []
        assert report.drop_reasons == {"min_length": 1}

    def test_ratio_violation_dropped(self):
        kept, report = rule_based_filter(
            [rec("a" * 30, "b" * 90)], FilterConfig())
        assert kept == []
        assert report.drop_reasons == {"length_ratio": 1}

    def test_clean_record_passes_unchanged(self):
        kept, report = rule_based_filter([CLEAN], FilterConfig())
        assert kept == [CLEAN]
        assert report.modified == 0

    def test_html_stripped_and_record_kept(self):
        tagged = rec("zilo <b>unat</b> dumo", "nulo erin bidu")
        kept, report = rule_based_filter([tagged], FilterConfig())
        assert len(kept) == 1
        assert kept[0].src == "zilo unat dumo"
        assert report.modified == 1

    def test_markup_only_side_dropped_as_empty(self):
        kept, report = rule_based_filter(
            [rec("<p><br/></p>", "nulo erin bidu")], FilterConfig())
        assert kept == []
        assert report.drop_reasons == {"empty": 1}

    def test_exact_duplicates_keep_first(self):
        a = rec("zilo unat dumo", "nulo erin bidu", origin="first")
        b = rec("zilo unat dumo", "nulo erin bidu", origin="second")
        kept, report = rule_based_filter([a, b], FilterConfig())
        assert kept == [a]
        assert report.drop_reasons == {"duplicate": 1}

    def test_max_length_dropped(self):
        kept, report = rule_based_filter(
            [rec("x" * 201, "y" * 201)], FilterConfig())
        assert report.drop_reasons == {"max_length": 1}

    def test_ratio_exactly_two_is_kept(self):
        kept, _ = rule_based_filter([rec("abcd", "efghijkl")], FilterConfig())
        assert len(kept) == 1


@pytest.fixture(scope="module")
def toy_setup():
    spec = ToyLanguageSpec()
    seeds = langid_seed_corpus(spec, 80, seed=4)
    detector = train_langid(seeds)
    return spec, langid_scorers(detector)


class TestLanguageDetection:
    def test_in_language_kept(self, toy_setup):
        spec, scorers = toy_setup
        r = rec(spec.render((1, 2, 3), "anu_Latn"), spec.render((1, 2, 3), "bnu_Latn"))
        kept, _ = language_detection_filter([r], scorers, FilterConfig())
        assert kept == [r]

    def test_wrong_language_dropped(self, toy_setup):
        spec, scorers = toy_setup
        # target labeled bnu but written in cnu
        r = rec(spec.render((1, 2, 3), "anu_Latn"), spec.render((1, 2, 3), "cnu_Latn"))
        kept, report = language_detection_filter([r], scorers, FilterConfig())
        assert kept == []
        assert report.drop_reasons == {"tgt_language": 1}

    def test_skip_listed_language_bypasses(self, toy_setup):
        spec, scorers = toy_setup
        cfg = FilterConfig(skip_languages={STAGE_LANG: {"bnu_Latn"}})
        r = rec(spec.render((1, 2), "anu_Latn"), spec.render((1, 2), "cnu_Latn"))
        kept, _ = language_detection_filter([r], scorers, cfg)
        assert kept == [r]

    def test_missing_scorer_errors(self, toy_setup):
        _, scorers = toy_setup
        r = rec("zilo", "nulo", sl="zzz_Latn")
        with pytest.raises(ValueError, match="zzz_Latn"):
            language_detection_filter([r], scorers, FilterConfig())


class FakeEmbedder:
    """Deterministic embedding table keyed by exact text."""

    name = "fake-embed"

    def __init__(self, table, supported=("anu_Latn", "bnu_Latn")):
        self.table = table
        self.supported = set(supported)

    def supports(self, lang):
        return lang in self.supported

    def embed(self, text, lang):
        return np.array(self.table[text], dtype=np.float64)


class TestSemantic:
    def test_identical_embeddings_kept(self):
        emb = FakeEmbedder({"a b c": [1.0, 0.0], "x y z": [1.0, 0.0]})
        kept, _ = semantic_filter([rec("a b c", "x y z")], emb, FilterConfig())
        assert len(kept) == 1

    def test_orthogonal_embeddings_dropped_at_06(self):
        emb = FakeEmbedder({"a b c": [1.0, 0.0], "x y z": [0.0, 1.0]})
        kept, report = semantic_filter([rec("a b c", "x y z")], emb, FilterConfig())
        assert kept == []
        assert report.drop_reasons == {"semantic": 1}

    def test_zero_vector_scores_zero_with_warning(self):
        emb = FakeEmbedder({"a b c": [0.0, 0.0], "x y z": [1.0, 0.0]})
        kept, report = semantic_filter([rec("a b c", "x y z")], emb, FilterConfig())
        assert kept == []
        assert report.warnings.get("zero_vector") == 1

    def test_unsupported_language_bypasses(self):
        emb = FakeEmbedder({}, supported=("anu_Latn",))
        r = rec("a b c", "x y z")  # tgt bnu unsupported
        kept, report = semantic_filter([r], emb, FilterConfig())
        assert kept == [r]
        assert report.warnings.get("skipped_language") == 1


class FakeQE:
    name = "fake-qe"

    def __init__(self, scores):
        self.scores = scores

    def supports(self, s, t):
        return True

    def score(self, record):
        return self.scores[record.src]


class TestQualityEstimation:
    def test_threshold_split(self):
        qe = FakeQE({"good": 0.9, "bad": 0.2})
        records = [rec("good", "t one"), rec("bad", "t two")]
        kept, report = quality_estimation_filter(records, qe, FilterConfig())
        assert [r.src for r in kept] == ["good"]
        assert report.drop_reasons == {"quality": 1}

    def test_skip_listed_pair_kept(self):
        qe = FakeQE({"bad": 0.0})
        cfg = FilterConfig(skip_languages={STAGE_QE: {"anu_Latn"}})
        kept, _ = quality_estimation_filter([rec("bad", "t")], qe, cfg)
        assert len(kept) == 1

    def test_out_of_range_score_is_error(self):
        qe = FakeQE({"x": 1.5})
        with pytest.raises(ValueError, match="out-of-range"):
            quality_estimation_filter([rec("x", "t")], qe, FilterConfig())


class TestPipeline:
    def test_all_stages_disabled_is_identity(self):
        cfg = FilterConfig(stages_enabled={s: False for s in
                                           (STAGE_RULE, STAGE_LANG, STAGE_SEMANTIC, STAGE_QE)})
        records = [rec("hi", "yo")]  # would be dropped by rules if enabled
        kept, report = run_pipeline(records, cfg, ScorerSet())
        assert kept == records
        assert report.n_in == 0 and report.stages == []

    def test_rule_detectable_flags_removed_with_full_recall(self, toy_setup):
        spec, scorers = toy_setup
        rates = NoiseRates(html=0.1, empty=0.1, short=0.1, long=0.1,
                           misaligned=0.1, duplicate=0.1)
        corpus = generate_synthetic_corpus(
            spec, SplitSpec(train_size=300, dev_size=10, devtest_size=10),
            rates, seed=21)
        cfg = FilterConfig(stages_enabled={STAGE_SEMANTIC: False, STAGE_QE: False})
        kept, report = run_pipeline(corpus.train, cfg, ScorerSet(langid=scorers))
        rule_flags = {"html", "empty", "short", "long", "misaligned", "duplicate"}
        assert not any(r.flags & rule_flags for r in kept)
        report.validate()

    def test_wrong_language_removed_at_90_percent(self, toy_setup):
        spec, scorers = toy_setup
        corpus = generate_synthetic_corpus(
            spec, SplitSpec(train_size=400, dev_size=10, devtest_size=10),
            NoiseRates(wrong_lang=0.1), seed=22)
        cfg = FilterConfig(stages_enabled={STAGE_SEMANTIC: False, STAGE_QE: False})
        kept, _ = run_pipeline(corpus.train, cfg, ScorerSet(langid=scorers))
        injected = sum(1 for r in corpus.train if "wrong_lang" in r.flags)
        survived = sum(1 for r in kept if "wrong_lang" in r.flags)
        assert injected > 0
        assert (injected - survived) / injected >= 0.9

    def test_pipeline_idempotent_on_own_output(self, toy_setup):
        spec, scorers = toy_setup
        corpus = generate_synthetic_corpus(
            spec, SplitSpec(train_size=200, dev_size=10, devtest_size=10),
            NoiseRates(html=0.1, duplicate=0.1, wrong_lang=0.1), seed=23)
        cfg = FilterConfig(stages_enabled={STAGE_SEMANTIC: False, STAGE_QE: False})
        once, _ = run_pipeline(corpus.train, cfg, ScorerSet(langid=scorers))
        twice, report2 = run_pipeline(once, cfg, ScorerSet(langid=scorers))
        assert twice == once
        assert all(not s.drop_reasons for s in report2.stages)

    def test_threshold_monotonicity(self, toy_setup):
        spec, scorers = toy_setup
        corpus = generate_synthetic_corpus(
            spec, SplitSpec(train_size=150, dev_size=10, devtest_size=10),
            NoiseRates(wrong_lang=0.15), seed=24)
        kept_sets = []
        for thr in (0.3, 0.6, 0.9):
            cfg = FilterConfig(threshold=thr,
                               stages_enabled={STAGE_SEMANTIC: False, STAGE_QE: False})
            kept, _ = run_pipeline(corpus.train, cfg, ScorerSet(langid=scorers))
            kept_sets.append({id(r) for r in kept})
        assert kept_sets[2] <= kept_sets[1] <= kept_sets[0]

    def test_missing_scorer_for_enabled_stage_errors(self):
        cfg = FilterConfig(stages_enabled={STAGE_SEMANTIC: False, STAGE_QE: False})
        with pytest.raises(ValueError, match="langid"):
            run_pipeline([CLEAN], cfg, ScorerSet())

    def test_report_json_shape(self, toy_setup):
        _, scorers = toy_setup
        cfg = FilterConfig(stages_enabled={STAGE_SEMANTIC: False, STAGE_QE: False})
        _, report = run_pipeline([CLEAN, rec("zz", "yy")], cfg,
                                 ScorerSet(langid=scorers))
        obj = json.loads(report.to_json())
        assert obj["n_in"] == 2
        assert [s["stage"] for s in obj["stages"]] == [STAGE_RULE, STAGE_LANG]


ECHO_SCORER = (
    "import sys, json\n"
    "for line in sys.stdin:\n"
    "    obj = json.loads(line)\n"
    "    print('0.9' if len(obj['src']) > 3 else '0.1', flush=True)\n"
)


class TestSubprocessScorer:
    def test_line_protocol_roundtrip(self):
        with SubprocessScorer([sys.executable, "-c", ECHO_SCORER]) as scorer:
            high = scorer.score(rec("long enough", "tgt text"))
            low = scorer.score(rec("ab", "tgt text"))
        assert high == 0.9
        assert low == 0.1

    def test_strict_ordering(self):
        with SubprocessScorer([sys.executable, "-c", ECHO_SCORER]) as scorer:
            values = [scorer.score(rec(f"text {i}", "t")) for i in range(10)]
        assert values == [0.9] * 10
