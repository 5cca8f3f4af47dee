"""Parallel-data model and bookkeeping: JSONL/TSV IO, exact-pair dedup,
direction reversal, capped downsampling, and split accounting.

JSONL is the canonical on-disk format (fields src_lang, tgt_lang, src, tgt,
origin); TSV is ingestion-only. Noise flags are test-only metadata and are
never serialized.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
import unicodedata
from dataclasses import dataclass, field, replace

from .rng import Rng
from .vocab import validate_lang_code

# dev/devtest sizes of the public multilingual benchmark this toolkit's
# synthetic splits stand in for; desk-scale defaults below are smaller
REFERENCE_DEV_SIZE = 997
REFERENCE_DEVTEST_SIZE = 1012


@dataclass(frozen=True)
class ParallelRecord:
    """One bitext pair. flags carry injected-noise ground truth for tests and
    are invisible to serialization and to the filter pipeline."""

    src_lang: str
    tgt_lang: str
    src: str
    tgt: str
    origin: str = ""
    flags: frozenset = frozenset()

    def __post_init__(self):
        validate_lang_code(self.src_lang)
        validate_lang_code(self.tgt_lang)
        object.__setattr__(self, "src", unicodedata.normalize("NFC", self.src))
        object.__setattr__(self, "tgt", unicodedata.normalize("NFC", self.tgt))
        object.__setattr__(self, "flags", frozenset(self.flags))

    @property
    def direction(self) -> str:
        return f"{self.src_lang}-{self.tgt_lang}"


def dedup_key(record: ParallelRecord) -> tuple[str, str]:
    """Exact (src, tgt) pair after NFC + trim; used at every dedup point."""
    return (record.src.strip(), record.tgt.strip())


def split_key(record: ParallelRecord) -> tuple[str, str, str, str]:
    return (record.src_lang, record.tgt_lang, record.src, record.tgt)


def dedup_exact(records) -> list[ParallelRecord]:
    """Keep the first occurrence of each exact (src, tgt) pair."""
    seen = set()
    out = []
    for r in records:
        k = dedup_key(r)
        if k in seen:
            continue
        seen.add(k)
        out.append(r)
    return out


@dataclass
class ReadReport:
    path: str
    n_lines: int = 0
    errors: list = field(default_factory=list)  # (line_number, message)

    @property
    def n_malformed(self) -> int:
        return len(self.errors)


class CorpusFormatError(Exception):
    pass


_REQUIRED_FIELDS = ("src_lang", "tgt_lang", "src", "tgt")


def _record_from_fields(fields: dict) -> ParallelRecord:
    return ParallelRecord(
        src_lang=fields["src_lang"], tgt_lang=fields["tgt_lang"],
        src=fields["src"], tgt=fields["tgt"], origin=fields.get("origin", ""),
    )


def read_corpus(path, format: str = "jsonl"):
    """Streaming read. Malformed lines go into the report; more than 10%
    malformed (on a nonempty file) is a hard error.

    Returns (records, ReadReport).
    """
    path = os.fspath(path)
    report = ReadReport(path=path)
    records: list[ParallelRecord] = []
    with open(path, encoding="utf-8", newline="") as f:
        if format == "jsonl":
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                report.n_lines += 1
                try:
                    obj = json.loads(line)
                    if not isinstance(obj, dict):
                        raise ValueError("line is not a JSON object")
                    missing = [k for k in _REQUIRED_FIELDS if k not in obj]
                    if missing:
                        raise ValueError(f"missing fields: {missing}")
                    records.append(_record_from_fields(obj))
                except (json.JSONDecodeError, ValueError, TypeError) as e:
                    report.errors.append((lineno, str(e)))
        elif format == "tsv":
            # Excel-style quoting: a field wrapped in double quotes may
            # contain tabs and doubled quotes
            reader = csv.reader(f, delimiter="\t", quotechar='"')
            for row in reader:
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                report.n_lines += 1
                try:
                    if len(row) not in (4, 5):
                        raise ValueError(f"expected 4 or 5 columns, got {len(row)}")
                    fields = dict(zip(_REQUIRED_FIELDS, row[:4]))
                    if len(row) == 5:
                        fields["origin"] = row[4]
                    records.append(_record_from_fields(fields))
                except ValueError as e:
                    report.errors.append((reader.line_num, str(e)))
        else:
            raise ValueError(f"unknown corpus format {format!r}")

    if report.n_lines and report.n_malformed / report.n_lines > 0.10:
        raise CorpusFormatError(
            f"{path}: {report.n_malformed}/{report.n_lines} lines malformed (> 10%)")
    return records, report


def record_to_json(record: ParallelRecord) -> str:
    obj = {
        "src_lang": record.src_lang, "tgt_lang": record.tgt_lang,
        "src": record.src, "tgt": record.tgt, "origin": record.origin,
    }
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def write_corpus(records, path) -> str:
    """Canonical JSONL, atomically written."""
    path = os.fspath(path)
    buf = io.StringIO()
    for r in records:
        buf.write(record_to_json(r))
        buf.write("\n")
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".corpus-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def reverse_directions(records) -> list[ParallelRecord]:
    """Original records plus their swapped copies; output is exactly 2x."""
    out = list(records)
    for r in records:
        out.append(replace(r, src_lang=r.tgt_lang, tgt_lang=r.src_lang,
                           src=r.tgt, tgt=r.src))
    return out


def downsample(records, per_direction_cap: int, seed: int) -> list[ParallelRecord]:
    """Uniform sample without replacement per direction over the cap;
    directions at or under the cap pass through. Keeps input order."""
    if per_direction_cap < 0:
        raise ValueError("cap must be >= 0")
    by_dir: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        by_dir.setdefault(r.direction, []).append(i)

    keep = set()
    root = Rng(seed)
    for direction, idxs in by_dir.items():
        if len(idxs) <= per_direction_cap:
            keep.update(idxs)
        else:
            rng = root.split(f"downsample:{direction}")
            chosen = rng.choice(len(idxs), per_direction_cap)
            keep.update(idxs[int(c)] for c in chosen)
    return [r for i, r in enumerate(records) if i in keep]


@dataclass(frozen=True)
class SplitSpec:
    """train/dev/devtest sizes. dev doubles as validation and the layer
    importance set; devtest is held out for final evaluation."""

    train_size: int = 2000
    dev_size: int = 200
    devtest_size: int = 200
    seed: int = 0

    def __post_init__(self):
        for n in (self.train_size, self.dev_size, self.devtest_size):
            if n < 0:
                raise ValueError("split sizes must be >= 0")


@dataclass
class DirectionCounts:
    initial: int
    processed: int
    sampled: int

    def __post_init__(self):
        if not self.processed <= self.initial:
            raise ValueError("processed must be <= initial")
        if not self.sampled <= self.processed:
            raise ValueError("sampled must be <= processed")


@dataclass
class CorpusManifest:
    directions: dict[str, DirectionCounts]
    provenance: list[str]
    per_direction_cap: int | None = None

    def to_json(self) -> str:
        obj = {
            "directions": {
                d: {"initial": c.initial, "processed": c.processed, "sampled": c.sampled}
                for d, c in sorted(self.directions.items())
            },
            "provenance": list(self.provenance),
            "per_direction_cap": self.per_direction_cap,
        }
        return json.dumps(obj, indent=2, sort_keys=True)

    @classmethod
    def from_stages(cls, initial, processed, sampled, provenance=(), cap=None):
        """Build per-direction counts from the three corpus snapshots."""

        def count(records):
            out: dict[str, int] = {}
            for r in records:
                out[r.direction] = out.get(r.direction, 0) + 1
            return out

        ci, cp, cs = count(initial), count(processed), count(sampled)
        directions = {
            d: DirectionCounts(ci.get(d, 0), cp.get(d, 0), cs.get(d, 0))
            for d in sorted(set(ci) | set(cp) | set(cs))
        }
        return cls(directions=directions, provenance=sorted(set(provenance)),
                   per_direction_cap=cap)
