#!/usr/bin/env python3
"""Convert the public acute-heart-failure study table to metareg's input CSV.

Download the spreadsheet from https://osf.io/cxv5k/ and export the sheet
holding one row per study to CSV (any spreadsheet tool will do). Column
names in the export differ between versions, so pass them explicitly:

    python3 scripts/prepare_dataset.py export.csv data/one_year_mortality.csv \
        --id "Study" --total "N 1y mortality" --events "Deaths 1y" \
        --year "Recruitment year" --age "Mean age"

If the sheet reports a mortality proportion (or percentage) instead of a
death count, use --rate (and --percent) in place of --events; counts are
then rounded from rate * total.

Rows without a one-year mortality outcome are dropped. Rows with a
missing year or age are kept with an empty cell, so that metareg's
complete-case filtering decides which studies enter each model.
"""

import argparse
import csv
import sys


def number(text):
    text = (text or "").strip().replace(",", ".")
    if text == "" or text.upper() in {"NA", "N/A", "NAN", "."}:
        return None
    try:
        return float(text)
    except ValueError:
        return None


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("source")
    ap.add_argument("dest")
    ap.add_argument("--id", required=True, help="study identifier column")
    ap.add_argument("--total", required=True, help="patients followed for one-year mortality")
    grp = ap.add_mutually_exclusive_group(required=True)
    grp.add_argument("--events", help="one-year death count column")
    grp.add_argument("--rate", help="one-year mortality proportion column")
    ap.add_argument("--percent", action="store_true", help="--rate is in percent")
    ap.add_argument("--year", required=True, help="(median) year of recruitment column")
    ap.add_argument("--age", required=True, help="mean patient age column")
    ap.add_argument("--delimiter", default=",")
    args = ap.parse_args(argv)

    with open(args.source, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh, delimiter=args.delimiter)
        wanted = [args.id, args.total, args.events or args.rate, args.year, args.age]
        missing = [c for c in wanted if c not in (reader.fieldnames or [])]
        if missing:
            sys.exit(f"missing columns {missing}; available: {reader.fieldnames}")
        rows = list(reader)

    out = []
    for row in rows:
        total = number(row[args.total])
        if total is None or total <= 0:
            continue
        if args.events:
            events = number(row[args.events])
        else:
            rate = number(row[args.rate])
            events = None if rate is None else rate / (100.0 if args.percent else 1.0) * total
        if events is None:
            continue
        events, total = round(events), round(total)
        if not 0 <= events <= total:
            sys.exit(f"study {row[args.id]}: events {events} outside [0, {total}]")
        year, age = number(row[args.year]), number(row[args.age])
        out.append([row[args.id].strip(), events, total,
                    "" if year is None else repr(year), "" if age is None else repr(age)])

    with open(args.dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["study_id", "events", "total", "year", "age"])
        w.writerows(out)
    complete = sum(1 for r in out if r[3] != "" and r[4] != "")
    print(f"wrote {len(out)} studies ({complete} with both year and age) to {args.dest}", file=sys.stderr)


if __name__ == "__main__":
    main()
