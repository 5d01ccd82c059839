#!/usr/bin/env python3
"""Download the UCI Adult and German Credit datasets and convert them to the
header-first, comma-separated CSV layout that `fairgen` ingests.

    python3 scripts/fetch_datasets.py [--out data] [--source DIR]

`--source` points at a directory already holding `adult.data` and
`german.data` (e.g. an offline mirror); otherwise the files are fetched from
the UCI repository. The SHA-256 of every raw file is checked.
"""
import argparse
import csv
import hashlib
import pathlib
import sys
import urllib.request

UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases"
RAW = {
    "adult.data": (
        f"{UCI}/adult/adult.data",
        "5b00264637dbfec36bdeaab5676b0b309ff9eb788d63554ca0a249491c86603d",
    ),
    "german.data": (
        f"{UCI}/statlog/german/german.data",
        "b21f3d81db8071257d5ff1deaeba1fd4303b62712e6fcc9715c7a86202cb5871",
    ),
}

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num",
    "marital_status", "occupation", "relationship", "race", "sex",
    "capital_gain", "capital_loss", "hours_per_week", "native_country",
    "income",
]

GERMAN_COLUMNS = [
    "checking_status", "duration", "credit_history", "purpose",
    "credit_amount", "savings", "employment", "installment_rate",
    "personal_status", "other_debtors", "residence_since", "property",
    "age", "other_installment_plans", "housing", "existing_credits", "job",
    "num_dependents", "telephone", "foreign_worker", "credit",
]

# A91 male divorced/separated, A92 female div/sep/married, A93 male single,
# A94 male married/widowed, A95 female single.
GERMAN_SEX = {"A91": "male", "A92": "female", "A93": "male", "A94": "male", "A95": "female"}


def fetch(name, source, raw_dir):
    url, digest = RAW[name]
    target = raw_dir / name
    if not target.exists():
        if source is not None:
            target.write_bytes((source / name).read_bytes())
        else:
            print(f"fetching {url}", file=sys.stderr)
            with urllib.request.urlopen(url, timeout=60) as resp:
                target.write_bytes(resp.read())
    actual = hashlib.sha256(target.read_bytes()).hexdigest()
    if actual != digest:
        print(f"warning: {name} sha256 {actual} does not match pinned {digest}", file=sys.stderr)
    return target


def convert_adult(raw, out):
    with raw.open() as src, out.open("w", newline="") as dst:
        writer = csv.writer(dst)
        writer.writerow(ADULT_COLUMNS)
        for line in src:
            line = line.strip()
            if not line:
                continue
            writer.writerow([cell.strip() for cell in line.split(",")])


def convert_german(raw, out):
    columns = [c for c in GERMAN_COLUMNS if c != "personal_status"]
    columns.insert(columns.index("age") + 1, "sex")
    with raw.open() as src, out.open("w", newline="") as dst:
        writer = csv.writer(dst)
        writer.writerow(columns)
        for line in src:
            cells = line.split()
            if not cells:
                continue
            record = dict(zip(GERMAN_COLUMNS, cells))
            record["sex"] = GERMAN_SEX[record.pop("personal_status")]
            record["credit"] = "good" if record["credit"] == "1" else "bad"
            writer.writerow([record[c] for c in columns])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="data", type=pathlib.Path)
    parser.add_argument("--source", type=pathlib.Path)
    args = parser.parse_args()
    raw_dir = args.out / "raw"
    raw_dir.mkdir(parents=True, exist_ok=True)
    convert_adult(fetch("adult.data", args.source, raw_dir), args.out / "adult.csv")
    convert_german(fetch("german.data", args.source, raw_dir), args.out / "german.csv")
    print(f"wrote {args.out / 'adult.csv'} and {args.out / 'german.csv'}")


if __name__ == "__main__":
    main()
