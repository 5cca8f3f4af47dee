"""Evaluation reports, run manifests, and JSON/CSV emission.

JSON is the lossless canonical form; CSV serializes numbers with 6
significant digits and has a documented, stable column order. The COMET
column is structurally absent from EvalRow; comet_note records why.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field

from .compress import PruneReport
from .filtering import FilterReport

EVAL_CSV_COLUMNS = [
    "kind", "direction", "model_id", "bleu", "chrf_pp",
    "throughput_tokens_per_sec", "total_seconds", "output_tokens",
    "beam_size", "batch_token_budget",
]


@dataclass
class EvalRow:
    direction: str
    model_id: str
    bleu: float
    chrf_pp: float
    throughput_tokens_per_sec: float
    total_seconds: float
    output_tokens: int
    beam_size: int
    batch_token_budget: int
    comet_note: str = "not computed (no neural scorer in this toolkit)"


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def aggregates(self) -> list[dict]:
        """Mean rows per target-language group plus an overall mean."""
        groups: dict[str, list[EvalRow]] = {}
        for r in self.rows:
            tgt = r.direction.split("-", 1)[1]
            groups.setdefault(f"*-{tgt}", []).append(r)
        if self.rows:
            groups["overall"] = list(self.rows)

        out = []
        for name in sorted(groups):
            members = groups[name]
            n = len(members)
            out.append({
                "group": name,
                "n_rows": n,
                "bleu": sum(r.bleu for r in members) / n,
                "chrf_pp": sum(r.chrf_pp for r in members) / n,
                "throughput_tokens_per_sec":
                    sum(r.throughput_tokens_per_sec for r in members) / n,
                "total_seconds": sum(r.total_seconds for r in members) / n,
            })
        return out

    def validate(self):
        """Aggregates must be recomputable from the rows (they are computed
        on demand, so this asserts the arithmetic is stable)."""
        for agg in self.aggregates():
            members = [r for r in self.rows
                       if agg["group"] == "overall"
                       or r.direction.endswith(agg["group"][1:])]
            assert abs(agg["bleu"] - sum(r.bleu for r in members) / len(members)) < 1e-9

    def to_json(self) -> str:
        return json.dumps({
            "rows": [asdict(r) for r in self.rows],
            "aggregates": self.aggregates(),
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        obj = json.loads(text)
        return cls(rows=[EvalRow(**r) for r in obj["rows"]])

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(EVAL_CSV_COLUMNS) + "\n")
        for r in self.rows:
            out.write(",".join([
                "row", r.direction, r.model_id, _g6(r.bleu), _g6(r.chrf_pp),
                _g6(r.throughput_tokens_per_sec), _g6(r.total_seconds),
                str(r.output_tokens), str(r.beam_size), str(r.batch_token_budget),
            ]) + "\n")
        for agg in self.aggregates():
            out.write(",".join([
                "aggregate", agg["group"], "", _g6(agg["bleu"]), _g6(agg["chrf_pp"]),
                _g6(agg["throughput_tokens_per_sec"]), _g6(agg["total_seconds"]),
                "", "", "",
            ]) + "\n")
        return out.getvalue()


def _g6(x: float) -> str:
    return format(float(x), ".6g")


def quality_efficiency_csv(labeled_reports) -> str:
    """Chart data: one (model label, chrF++, tokens/s) line per report,
    taken from the overall aggregate."""
    out = io.StringIO()
    out.write("model,chrf_pp,throughput_tokens_per_sec\n")
    for label, report in labeled_reports:
        overall = [a for a in report.aggregates() if a["group"] == "overall"]
        if not overall:
            continue
        a = overall[0]
        out.write(f"{label},{_g6(a['chrf_pp'])},{_g6(a['throughput_tokens_per_sec'])}\n")
    return out.getvalue()


def _prune_report_csv(report: PruneReport) -> str:
    out = io.StringIO()
    out.write("iteration,side,layer_id,chrf,chosen\n")
    for it in report.iterations:
        chosen = it.chosen or {}
        for c in it.candidates:
            is_chosen = (c["side"] == chosen.get("side")
                         and c["layer_id"] == chosen.get("layer_id"))
            out.write(f"{it.index},{c['side']},{c['layer_id']},"
                      f"{_g6(c['chrf'])},{int(is_chosen)}\n")
        if not it.candidates:
            for side, ids in sorted(it.removed.items()):
                for lid in ids:
                    out.write(f"{it.index},{side},{lid},,1\n")
    return out.getvalue()


def _filter_report_csv(report: FilterReport) -> str:
    out = io.StringIO()
    out.write("stage,n_in,n_kept,n_dropped,modified,drop_reasons\n")
    for s in report.stages:
        reasons = ";".join(f"{k}={v}" for k, v in sorted(s.drop_reasons.items()))
        out.write(f"{s.stage},{s.n_in},{s.n_kept},"
                  f"{sum(s.drop_reasons.values())},{s.modified},{reasons}\n")
    return out.getvalue()


def atomic_write_text(path, text: str) -> str:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".report-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


class ArtifactSet:
    """All-or-nothing artifact publication: every output is written to a
    temporary sibling first and renamed into place only when the whole set is
    ready, so a failing run leaves nothing at the declared paths."""

    def __init__(self):
        self._staged: list[tuple[str, str]] = []  # (tmp, final)

    def stage(self, final_path, write_fn) -> str:
        """write_fn(tmp_path) must create the file at tmp_path. Returns the
        temporary path so callers can hash the pending content."""
        final_path = os.fspath(final_path)
        directory = os.path.dirname(final_path) or "."
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".staged-")
        os.close(fd)
        try:
            write_fn(tmp)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self._staged.append((tmp, final_path))
        return tmp

    def stage_text(self, final_path, text: str) -> str:
        return self.stage(final_path,
                          lambda tmp: atomic_write_text(tmp, text))

    def commit(self) -> list[str]:
        published = []
        for tmp, final in self._staged:
            os.replace(tmp, final)
            published.append(final)
        self._staged.clear()
        return published

    def abort(self):
        for tmp, _ in self._staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        self._staged.clear()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.commit()
        else:
            self.abort()
        return False


def emit_report(report, format: str, path) -> str:
    """Write an EvalReport / PruneReport / FilterReport as json or csv."""
    if format == "json":
        if isinstance(report, EvalReport):
            text = report.to_json()
        elif isinstance(report, PruneReport):
            text = report.to_json()
        elif isinstance(report, FilterReport):
            text = report.to_json()
        else:
            raise TypeError(f"cannot emit report of type {type(report).__name__}")
    elif format == "csv":
        if isinstance(report, EvalReport):
            text = report.to_csv()
        elif isinstance(report, PruneReport):
            text = _prune_report_csv(report)
        elif isinstance(report, FilterReport):
            text = _filter_report_csv(report)
        else:
            raise TypeError(f"cannot emit report of type {type(report).__name__}")
    else:
        raise ValueError(f"unknown report format {format!r}")
    return atomic_write_text(path, text)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict = field(default_factory=dict)    # path -> sha256
    outputs: dict = field(default_factory=dict)   # path -> sha256
    timings: dict = field(default_factory=dict)   # label -> seconds
    toolkit_version: str = ""

    @property
    def run_id(self) -> str:
        blob = json.dumps({
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": dict(sorted(self.inputs.items())),
        }, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def add_input(self, path):
        self.inputs[os.fspath(path)] = sha256_file(path)

    def add_output(self, path, content_path=None):
        """Record an output path; content_path lets staged (not yet renamed)
        files be hashed under their final name."""
        self.outputs[os.fspath(path)] = sha256_file(content_path or path)

    def to_json(self) -> str:
        obj = {
            "run_id": self.run_id,
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "timings": self.timings,
            "toolkit_version": self.toolkit_version,
        }
        return json.dumps(obj, indent=2, sort_keys=True)

    def write(self, path) -> str:
        return atomic_write_text(path, self.to_json())
