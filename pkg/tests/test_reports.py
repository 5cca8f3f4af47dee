import csv
import io
import json

import pytest

from minimt.filtering import FilterConfig, ScorerSet, run_pipeline
from minimt.corpus import ParallelRecord
from minimt.reports import (
    EvalReport,
    EvalRow,
    RunManifest,
    emit_report,
    quality_efficiency_csv,
)


def row(direction="anu_Latn-bnu_Latn", bleu=50.0, chrf=60.123456789, tput=1234.5):
    return EvalRow(direction=direction, model_id="m1", bleu=bleu, chrf_pp=chrf,
                   throughput_tokens_per_sec=tput, total_seconds=2.5,
                   output_tokens=100, beam_size=3, batch_token_budget=1024)


class TestEvalReport:
    def test_aggregates_are_means_of_rows(self):
        report = EvalReport(rows=[
            row(direction="anu_Latn-bnu_Latn", bleu=40.0),
            row(direction="cnu_Latn-bnu_Latn", bleu=60.0),
            row(direction="bnu_Latn-anu_Latn", bleu=10.0),
        ])
        aggs = {a["group"]: a for a in report.aggregates()}
        assert aggs["*-bnu_Latn"]["bleu"] == pytest.approx(50.0, abs=1e-12)
        assert aggs["overall"]["bleu"] == pytest.approx(110.0 / 3, abs=1e-12)
        report.validate()

    def test_empty_report_csv_is_header_only(self):
        assert EvalReport().to_csv().strip().count("\n") == 0

    def test_json_roundtrip_lossless(self):
        report = EvalReport(rows=[row(chrf=60.12345678901234)])
        back = EvalReport.from_json(report.to_json())
        assert back.rows[0].chrf_pp == report.rows[0].chrf_pp

    def test_json_csv_json_roundtrips_at_6_significant_digits(self):
        report = EvalReport(rows=[row()])
        parsed = list(csv.DictReader(io.StringIO(report.to_csv())))
        data_row = [p for p in parsed if p["kind"] == "row"][0]
        for col, value in (("bleu", report.rows[0].bleu),
                           ("chrf_pp", report.rows[0].chrf_pp)):
            assert float(data_row[col]) == pytest.approx(value, rel=1e-5)
            assert data_row[col] == format(value, ".6g")


class TestEmit:
    def test_eval_report_json_and_csv(self, tmp_path):
        report = EvalReport(rows=[row()])
        jp = emit_report(report, "json", tmp_path / "r.json")
        cp = emit_report(report, "csv", tmp_path / "r.csv")
        assert json.loads(open(jp).read())["rows"]
        assert open(cp).read().startswith("kind,direction")

    def test_filter_report_emission(self, tmp_path):
        records = [ParallelRecord(src_lang="anu_Latn", tgt_lang="bnu_Latn",
                                  src="zilo unat", tgt="nulo erin"),
                   ParallelRecord(src_lang="anu_Latn", tgt_lang="bnu_Latn",
                                  src="x", tgt="y")]
        cfg = FilterConfig(stages_enabled={"language_detection": False,
                                           "semantic": False,
                                           "quality_estimation": False})
        _, report = run_pipeline(records, cfg, ScorerSet())
        path = emit_report(report, "csv", tmp_path / "f.csv")
        text = open(path).read()
        assert "rule_based" in text and "min_length=1" in text

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report(EvalReport(), "xml", tmp_path / "x")


def test_quality_efficiency_chart_csv():
    a = EvalReport(rows=[row(chrf=55.0, tput=1000.0)])
    b = EvalReport(rows=[row(chrf=54.0, tput=1300.0)])
    text = quality_efficiency_csv([("baseline", a), ("pruned", b)])
    lines = text.strip().split("\n")
    assert lines[0] == "model,chrf_pp,throughput_tokens_per_sec"
    assert lines[1].startswith("baseline,55")
    assert lines[2].startswith("pruned,54")


class TestRunManifest:
    def test_run_id_deterministic_and_content_sensitive(self, tmp_path):
        f = tmp_path / "in.txt"
        f.write_text("hello")
        m1 = RunManifest(command="filter", config={"a": 1}, seed=3)
        m1.add_input(f)
        m2 = RunManifest(command="filter", config={"a": 1}, seed=3)
        m2.add_input(f)
        assert m1.run_id == m2.run_id
        m3 = RunManifest(command="filter", config={"a": 2}, seed=3)
        assert m3.run_id != m1.run_id

    def test_write_includes_output_hashes(self, tmp_path):
        out = tmp_path / "out.txt"
        out.write_text("payload")
        m = RunManifest(command="x", config={}, seed=None, toolkit_version="0.1.0")
        m.add_output(out)
        path = m.write(tmp_path / "manifest.json")
        obj = json.loads(open(path).read())
        assert obj["outputs"][str(out)]
        assert obj["run_id"] == m.run_id


class TestArtifactSet:
    def test_commit_publishes_everything(self, tmp_path):
        from minimt.reports import ArtifactSet

        with ArtifactSet() as artifacts:
            artifacts.stage_text(tmp_path / "a.txt", "alpha")
            artifacts.stage_text(tmp_path / "sub" / "b.txt", "beta")
            assert not (tmp_path / "a.txt").exists()  # nothing visible yet
        assert (tmp_path / "a.txt").read_text() == "alpha"
        assert (tmp_path / "sub" / "b.txt").read_text() == "beta"

    def test_failure_leaves_no_partial_outputs(self, tmp_path):
        from minimt.reports import ArtifactSet

        with pytest.raises(RuntimeError):
            with ArtifactSet() as artifacts:
                artifacts.stage_text(tmp_path / "a.txt", "alpha")
                raise RuntimeError("boom")
        assert not (tmp_path / "a.txt").exists()
        assert not any(p.name.startswith(".staged-") for p in tmp_path.iterdir())
