"""Convert the raw German Credit and COMPAS files into schema'd CSVs under data/.

Usage: python3 tools/convert_raw.py RAW_DIR OUT_DIR

RAW_DIR must contain ``german.data`` (UCI Statlog, space separated, no
header) and ``compas-scores-two-years.csv`` (ProPublica). Both ship, for
instance, inside the ``responsibly`` wheel under ``responsibly/dataset``.
"""

from __future__ import annotations

import sys
from pathlib import Path

import pandas as pd

GERMAN_COLUMNS = [
    ("checking_status", "categorical"),
    ("duration_months", "numeric"),
    ("credit_history", "categorical"),
    ("purpose", "categorical"),
    ("credit_amount", "numeric"),
    ("savings", "categorical"),
    ("employment_since", "categorical"),
    ("installment_rate", "numeric"),
    ("personal_status_sex", "categorical"),
    ("other_debtors", "categorical"),
    ("residence_since", "numeric"),
    ("property", "categorical"),
    ("age", "numeric"),
    ("other_installment_plans", "categorical"),
    ("housing", "categorical"),
    ("existing_credits", "numeric"),
    ("job", "categorical"),
    ("people_liable", "numeric"),
    ("telephone", "categorical"),
    ("foreign_worker", "categorical"),
]

COMPAS_NUMERIC = ["age", "priors_count", "length_of_stay", "juv_fel_count",
                  "juv_misd_count", "juv_other_count", "two_year_recid"]
COMPAS_CATEGORICAL = ["c_charge_degree", "race", "sex"]


def write_schema(path: Path, columns, label: str, positive: str) -> None:
    lines = ["[label]", f"column = {label}", f"positive = {positive}", "", "[columns]"]
    lines += [f"{name} = {kind}" for name, kind in columns]
    lines.append(f"{label} = label")
    path.write_text("\n".join(lines) + "\n")


def convert_german(raw: Path, out: Path) -> None:
    df = pd.read_csv(raw / "german.data", sep=" ", header=None,
                     names=[c for c, _ in GERMAN_COLUMNS] + ["credit_risk"])
    df["credit_risk"] = df["credit_risk"].map({1: "good", 2: "bad"})
    df.to_csv(out / "german_credit.csv", index=False)
    write_schema(out / "german_credit.schema", GERMAN_COLUMNS, "credit_risk", "good")


def convert_compas(raw: Path, out: Path) -> None:
    df = pd.read_csv(raw / "compas-scores-two-years.csv")
    # the standard ProPublica filters (6172 rows)
    df = df[(df.days_b_screening_arrest <= 30) & (df.days_b_screening_arrest >= -30)
            & (df.is_recid != -1) & (df.c_charge_degree != "O") & (df.score_text != "N/A")]
    stay = pd.to_datetime(df.c_jail_out) - pd.to_datetime(df.c_jail_in)
    df = df.assign(length_of_stay=stay.dt.total_seconds() / 86400.0)
    df = df.assign(risk=(df.score_text == "High").map({True: "high", False: "not_high"}))
    cols = COMPAS_NUMERIC + COMPAS_CATEGORICAL
    df[cols + ["risk"]].to_csv(out / "compas.csv", index=False)
    write_schema(out / "compas.schema",
                 [(c, "numeric") for c in COMPAS_NUMERIC]
                 + [(c, "categorical") for c in COMPAS_CATEGORICAL],
                 "risk", "not_high")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print(__doc__, file=sys.stderr)
        return 1
    raw, out = Path(argv[0]), Path(argv[1])
    out.mkdir(parents=True, exist_ok=True)
    convert_german(raw, out)
    convert_compas(raw, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
