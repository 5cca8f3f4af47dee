"""Generates tests/data/sample.tsv with csv.writer, independently of the
corpus reader. Run once; the fixture is committed. A quoted field containing a
literal tab exercises the Excel-style quoting rule."""

import csv
import pathlib

ROWS = [
    ["anu_Latn", "bnu_Latn", "zilo unat", "nulo erin", "fixture"],
    ["anu_Latn", "bnu_Latn", "trel\tkvar", "sani ropa", "fixture"],  # tab inside field
    ["bnu_Latn", "anu_Latn", 'she said "hi"', "quote test", "fixture"],
    ["anu_Latn", "bnu_Latn", "sest", "gesa"],  # origin column omitted
]


def main():
    out = pathlib.Path(__file__).parent.parent / "data" / "sample.tsv"
    out.parent.mkdir(exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, delimiter="\t", quotechar='"')
        writer.writerows(ROWS)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
