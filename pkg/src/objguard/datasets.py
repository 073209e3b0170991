"""Synthetic datasets for the three use cases, each with a plaintext sidecar.

* employees: a JSON object with one repeated ``"employee"`` member per
  record (name, identification.SSN, salary), the salary encrypted under the
  owner's homomorphic key.
* covid: a JSON object with one repeated ``"facility"`` member per
  healthcare facility. Each carries a year of weekly capacity reports in
  plaintext and one encrypted pediatric-bed sum.
* adult: a CSV of 14 columns (record id, then census attributes 1-13) whose
  occupation column (7) holds one search ciphertext per cell.

Each generator also writes ``<name>.truth.json`` (the plaintext values the
acceptance oracles compare against) and ``<name>.policy.json``. Generation is
deterministic for a fixed seed and fixed keys.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Sequence

from objguard.crypto.hom import HomPublicKey, hom_encrypt
from objguard.crypto.peks import PeksPublicKey, peks_encrypt
from objguard.errors import MissingKeys

logger = logging.getLogger(__name__)

KINDS = ("employees", "covid", "adult")

PEDIATRIC_FIELD = "total_pediatric_patients_hospitalized_confirmed_covid_7_day_sum"
COVID_OUTPUT = "pediatric_covid_sum"

ADULT_COLUMNS = (
    "id",
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
)
OCCUPATION_COLUMN = 7
SENSITIVE_COLUMNS = (2, 6, 7)

WORKCLASSES = ("Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov", "Local-gov", "State-gov", "Without-pay")
EDUCATION = (
    ("Bachelors", 13), ("Some-college", 10), ("11th", 7), ("HS-grad", 9), ("Prof-school", 15),
    ("Assoc-acdm", 12), ("Assoc-voc", 11), ("9th", 5), ("Masters", 14), ("Doctorate", 16),
)
MARITAL = ("Married-civ-spouse", "Divorced", "Never-married", "Separated", "Widowed", "Married-spouse-absent")
OCCUPATIONS = (
    "Tech-support", "Craft-repair", "Other-service", "Sales", "Exec-managerial", "Prof-specialty",
    "Handlers-cleaners", "Machine-op-inspct", "Adm-clerical", "Farming-fishing", "Transport-moving",
    "Priv-house-serv", "Protective-serv", "Armed-Forces",
)
RELATIONSHIPS = ("Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried")
RACES = ("White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black")

# weekly metrics carried by each covid report, in plaintext
COVID_METRICS = (
    "total_beds_7_day_avg",
    "all_adult_hospital_beds_7_day_avg",
    "all_adult_hospital_inpatient_beds_7_day_avg",
    "inpatient_beds_used_7_day_avg",
    "all_adult_hospital_inpatient_bed_occupied_7_day_avg",
    "total_adult_patients_hospitalized_confirmed_and_suspected_covid_7_day_avg",
    "total_adult_patients_hospitalized_confirmed_covid_7_day_avg",
    "total_pediatric_patients_hospitalized_confirmed_and_suspected_covid_7_day_avg",
    "inpatient_beds_7_day_avg",
    "total_icu_beds_7_day_avg",
    "total_staffed_adult_icu_beds_7_day_avg",
    "icu_beds_used_7_day_avg",
    "staffed_adult_icu_bed_occupancy_7_day_avg",
    "staffed_icu_adult_patients_confirmed_and_suspected_covid_7_day_avg",
    "staffed_icu_adult_patients_confirmed_covid_7_day_avg",
    "total_patients_hospitalized_confirmed_influenza_7_day_avg",
    "icu_patients_confirmed_influenza_7_day_avg",
    "total_patients_hospitalized_confirmed_influenza_and_covid_7_day_avg",
    "previous_day_admission_adult_covid_confirmed_7_day_sum",
    "previous_day_admission_adult_covid_suspected_7_day_sum",
    "previous_day_admission_pediatric_covid_confirmed_7_day_sum",
    "previous_day_admission_pediatric_covid_suspected_7_day_sum",
    "previous_day_total_ed_visits_7_day_sum",
    "previous_day_covid_ed_visits_7_day_sum",
    "previous_day_admission_influenza_confirmed_7_day_sum",
    "total_personnel_covid_vaccinated_doses_one_7_day",
    "total_personnel_covid_vaccinated_doses_all_7_day",
    "total_patients_hospitalized_confirmed_influenza_7_day_sum",
    "inpatient_beds_used_covid_7_day_avg",
    "staffed_icu_pediatric_patients_confirmed_covid_7_day_avg",
)
STATES = ("AL", "AK", "AZ", "CA", "CO", "FL", "GA", "IL", "NY", "OH", "PA", "TX", "WA")
WEEKS_PER_YEAR = 52


@dataclass
class DatasetKeys:
    """Public keys the generators encrypt under."""

    owner: HomPublicKey | None = None
    searchers: Sequence[PeksPublicKey] = field(default_factory=tuple)
    owner_name: str = "Alice"


@dataclass
class DatasetFiles:
    data: str
    truth: str
    policy: str
    size: int


def _require_owner(keys: DatasetKeys, kind: str) -> HomPublicKey:
    if keys.owner is None:
        raise MissingKeys(f"the {kind} dataset needs the owner's homomorphic public key")
    return keys.owner


# -- employees -------------------------------------------------------------


def employees_data(records: int, keys: DatasetKeys, rng: random.Random, salaries: Sequence[int] | None = None) -> tuple[bytes, dict]:
    owner = _require_owner(keys, "employees")
    if salaries is None:
        salaries = [rng.randrange(20_000, 200_000) for _ in range(records)]
    elif len(salaries) != records:
        raise ValueError("one salary per record is required")
    members = []
    for i, salary in enumerate(salaries):
        record = {
            "name": f"Employee {i:05d}",
            "identification": {"SSN": f"{rng.randrange(100, 900):03d}-{rng.randrange(10, 100):02d}-{rng.randrange(0, 10000):04d}"},
            "salary": hom_encrypt(owner, salary, rng=rng).to_b64(),
        }
        members.append('"employee":' + json.dumps(record))
    data = ("{\n" + ",\n".join(members) + "\n}\n").encode()
    total = sum(salaries)
    truth = {
        "kind": "employees",
        "records": records,
        "salaries": list(salaries),
        "sum": total,
        "count": records,
        "average": str(Fraction(total, records)) if records else None,
    }
    return data, truth


def employees_policy(owner_name: str = "Alice", object_name: str = "employees.json") -> dict:
    return {
        "Id": "employee.policy",
        "Object": f"v1/{{account}}/{{container}}/{object_name}",
        "Condition": {"DateNotEquals": {"Day": ["Sat", "Sun"]}},
        "Action": {
            "StartAt": "Step1",
            "Steps": {
                "Step1": {
                    "Id": "CLAC",
                    "EventType": {
                        "Type": "JSONPathMarkerEvent",
                        "Input": [{"Predicate": "$.employee.salary", "olabel": "sensitive"}],
                    },
                    "Input": [{"ulabel": "treasurer", "olabel": "sensitive"}],
                    "Next": "Step2",
                },
                "Step2": {
                    "Id": "SUM",
                    "EventType": {"Type": "JSONPathEvent", "Input": [{"Predicate": "$.employee.salary"}]},
                    "Input": [
                        {"average": True},
                        {"keyOwner": f"meta://{owner_name}/keys/hom"},
                        {"output": "$.average_salary"},
                    ],
                    "Next": "Step3",
                },
                "Step3": {
                    "Id": "PRE",
                    "EventType": {"Type": "JSONPathEvent", "Input": [{"Predicate": "$.average_salary"}]},
                    "Next": "End",
                },
            },
        },
    }


# -- covid -----------------------------------------------------------------


def _covid_report(rng: random.Random, week: int, beds: int) -> dict:
    report: dict[str, Any] = {"collection_week": f"2020-{1 + week // 4:02d}-{1 + (week % 4) * 7:02d}"}
    for name in COVID_METRICS:
        report[name] = round(rng.uniform(0, beds), 1)
    return report


def covid_data(records: int, keys: DatasetKeys, rng: random.Random) -> tuple[bytes, dict]:
    owner = _require_owner(keys, "covid")
    members = []
    values = []
    for i in range(records):
        beds = rng.randrange(20, 900)
        pediatric = rng.randrange(0, 5000)
        values.append(pediatric)
        facility = {
            "hospital_pk": f"{rng.randrange(10**5, 10**6)}",
            "hospital_name": f"Facility {i:05d} Medical Center",
            "address": f"{rng.randrange(1, 9999)} Main Street",
            "city": f"City {rng.randrange(1000)}",
            "state": rng.choice(STATES),
            "zip": f"{rng.randrange(10000, 99999)}",
            "hospital_subtype": rng.choice(("Short Term", "Critical Access Hospitals", "Childrens Hospitals")),
            "fips_code": f"{rng.randrange(1000, 99999)}",
            "is_metro_micro": rng.random() < 0.7,
            "reports": [_covid_report(rng, w, beds) for w in range(WEEKS_PER_YEAR)],
            PEDIATRIC_FIELD: hom_encrypt(owner, pediatric, rng=rng).to_b64(),
        }
        members.append('"facility":' + json.dumps(facility))
    data = ("{\n" + ",\n".join(members) + "\n}\n").encode()
    truth = {"kind": "covid", "records": records, "values": values, "sum": sum(values), "count": records}
    return data, truth


def covid_policy(owner_name: str = "Alice", object_name: str = "covid.json") -> dict:
    """Only the aggregate survives: each facility is dropped whole, after its
    pediatric sum has been fed to SUM (for state coordinators only)."""
    return {
        "Id": "covid.policy",
        "Object": f"v1/{{account}}/{{container}}/{object_name}",
        "Action": {
            "StartAt": "Step1",
            "Steps": {
                "Step1": {
                    "Id": "CLAC",
                    "EventType": {
                        "Type": "JSONPathMarkerEvent",
                        "Input": [
                            {"Predicate": f"$.facility.{PEDIATRIC_FIELD}", "olabel": "sensitive"},
                            {"Predicate": "$.facility", "olabel": "facility-detail"},
                        ],
                    },
                    "Input": [{"ulabel": "state coordinator", "olabel": "sensitive"}],
                    "Next": "Step2",
                },
                "Step2": {
                    "Id": "SUM",
                    "EventType": {"Type": "JSONPathEvent", "Input": [{"Predicate": f"$.facility.{PEDIATRIC_FIELD}"}]},
                    "Input": [{"keyOwner": f"meta://{owner_name}/keys/hom"}, {"output": f"$.{COVID_OUTPUT}"}],
                    "Next": "Step3",
                },
                "Step3": {
                    "Id": "PRE",
                    "EventType": {"Type": "JSONPathEvent", "Input": [{"Predicate": f"$.{COVID_OUTPUT}"}]},
                    "Next": "End",
                },
            },
        },
    }


# -- adult -----------------------------------------------------------------


def adult_data(records: int, keys: DatasetKeys, rng: random.Random) -> tuple[bytes, dict]:
    if not keys.searchers:
        raise MissingKeys("the adult dataset needs at least one searcher's PEKS public key")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ADULT_COLUMNS)
    occupations = []
    for i in range(records):
        education, edu_num = rng.choice(EDUCATION)
        occupation = rng.choice(OCCUPATIONS)
        occupations.append(occupation)
        gain = rng.choice((0, 0, 0, rng.randrange(1, 99999)))
        writer.writerow(
            (
                i,
                rng.randrange(17, 91),
                rng.choice(WORKCLASSES),
                rng.randrange(12285, 1490400),
                education,
                edu_num,
                rng.choice(MARITAL),
                peks_encrypt(keys.searchers, [occupation], rng=rng).to_b64(),
                rng.choice(RELATIONSHIPS),
                rng.choice(RACES),
                rng.choice(("Male", "Female")),
                gain,
                rng.choice((0, 0, 0, rng.randrange(1, 4357))),
                rng.randrange(1, 100),
            )
        )
    truth = {"kind": "adult", "records": records, "columns": list(ADULT_COLUMNS), "occupations": occupations}
    return buf.getvalue().encode(), truth


def adult_policy(object_name: str = "adult.csv") -> dict:
    return {
        "Id": "adult.policy",
        "Object": f"v1/{{account}}/{{container}}/{object_name}",
        "Action": {
            "StartAt": "Step1",
            "Steps": {
                "Step1": {
                    "Id": "CLAC",
                    "EventType": {"Type": "ColumnMarkerEvent", "Input": [{"columns": list(SENSITIVE_COLUMNS), "olabel": "sensitive"}]},
                    "Input": [{"ulabel": "HR manager", "olabel": "sensitive"}],
                    "Next": "Step2",
                },
                "Step2": {
                    "Id": "SEARCH",
                    "EventType": {"Type": "ColumnEvent", "Input": [{"column": OCCUPATION_COLUMN}]},
                    "Next": "End",
                },
            },
        },
    }


def noop_policy(object_name: str, length: int = 1, predicate: str = "$.*", policy_id: str | None = None) -> dict:
    """A chain of ``length`` NOOP steps over ``predicate`` (a column index for CSV)."""
    if length < 1:
        raise ValueError("a NOOP chain needs at least one step")
    if object_name.lower().endswith(".csv"):
        event = {"Type": "ColumnEvent", "Input": [{"column": 0}]}
    else:
        event = {"Type": "JSONPathEvent", "Input": [{"Predicate": predicate}]}
    steps = {}
    for i in range(1, length + 1):
        steps[f"Step{i}"] = {"Id": "NOOP", "EventType": event, "Next": f"Step{i + 1}" if i < length else "End"}
    return {
        "Id": policy_id or f"noop-{length}.{object_name}",
        "Object": f"v1/{{account}}/{{container}}/{object_name}",
        "Action": {"StartAt": "Step1", "Steps": steps},
    }


# -- entry point -----------------------------------------------------------


def generate(kind: str, records: int, keys: DatasetKeys, seed: int = 0) -> tuple[bytes, dict, dict]:
    """``(data, truth, policy)`` for one dataset kind."""
    if records < 0:
        raise ValueError("record count must be >= 0")
    rng = random.Random(seed)
    if kind == "employees":
        data, truth = employees_data(records, keys, rng)
        return data, truth, employees_policy(keys.owner_name)
    if kind == "covid":
        data, truth = covid_data(records, keys, rng)
        return data, truth, covid_policy(keys.owner_name)
    if kind == "adult":
        data, truth = adult_data(records, keys, rng)
        return data, truth, adult_policy()
    raise ValueError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")


def default_name(kind: str) -> str:
    return {"employees": "employees.json", "covid": "covid.json", "adult": "adult.csv"}[kind]


def gen_dataset(kind: str, records: int, keys: DatasetKeys, out_dir: str, seed: int = 0, name: str | None = None) -> DatasetFiles:
    data, truth, policy = generate(kind, records, keys, seed)
    name = name or default_name(kind)
    if name != default_name(kind):
        policy["Object"] = f"v1/{{account}}/{{container}}/{name}"
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, name)
    with open(stem, "wb") as fh:
        fh.write(data)
    with open(stem + ".truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh)
    with open(stem + ".policy.json", "w", encoding="utf-8") as fh:
        json.dump(policy, fh, indent=1)
    logger.info("wrote %s (%d records, %d bytes)", stem, records, len(data))
    return DatasetFiles(stem, stem + ".truth.json", stem + ".policy.json", len(data))


__all__ = [
    "ADULT_COLUMNS",
    "COVID_OUTPUT",
    "DatasetFiles",
    "DatasetKeys",
    "KINDS",
    "OCCUPATIONS",
    "OCCUPATION_COLUMN",
    "PEDIATRIC_FIELD",
    "SENSITIVE_COLUMNS",
    "adult_data",
    "adult_policy",
    "covid_data",
    "covid_policy",
    "employees_data",
    "employees_policy",
    "gen_dataset",
    "generate",
    "noop_policy",
]
