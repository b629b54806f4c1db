"""Ingestion of aggregate name/demographic data and associated-name pools.

Three delimiter-separated schemas are supported (UTF-8, comma-separated,
header row required):

* ``LAR``    -- ``name,raw_group,count``: aggregate given names with one
  observation count per demographic group.
* ``NYC``    -- ``name,raw_group,sex,count``: as LAR, plus a sex column so
  names can also be associated with a gender.
* ``ROSTER`` -- ``given_name,family_name,raw_group,gender``: one row per
  person; names are handled as full "Given Family" strings.

Raw group labels are mapped onto a fixed canonical label set.  A name is
admitted to a pool only when the share of its observations belonging to one
canonical group strictly exceeds the association threshold.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Iterable, Mapping, Optional, Sequence, Union

logger = logging.getLogger(__name__)

GROUP_LABELS = (
    "Asian and Pacific Islander",
    "Black",
    "Hispanic",
    "Indigenous",
    "Multi-race",
    "White",
)

# Groups that never reach reliable support in the source data; they stay in
# the pools and reports but are excluded from formal significance testing.
DEFAULT_LOW_SUPPORT = frozenset({"Indigenous", "Multi-race"})

GENDERS = ("F", "M", "Other", "Unknown")

DATASET_KINDS = ("LAR", "NYC", "ROSTER")

_SCHEMA_COLUMNS = {
    "LAR": ("name", "raw_group", "count"),
    "NYC": ("name", "raw_group", "sex", "count"),
    "ROSTER": ("given_name", "family_name", "raw_group", "gender"),
}

_LABEL_MAPS: dict[str, dict[str, str]] = {
    "LAR": {
        "NH Asian or Native Hawaiian or Other Pacific Islander": "Asian and Pacific Islander",
        "NH Black or African American": "Black",
        "Hispanic or Latino": "Hispanic",
        "NH American Indian or Alaska Native": "Indigenous",
        "NH Multi-race": "Multi-race",
        "NH White": "White",
    },
    "NYC": {
        "Asian and Pacific Islander": "Asian and Pacific Islander",
        "Black": "Black",
        "Hispanic White": "Hispanic",
        "NH White": "White",
    },
    "ROSTER": {
        "Asian": "Asian and Pacific Islander",
        "Black": "Black",
        "Hispanic": "Hispanic",
        "Indigenous": "Indigenous",
        "White/Other": "White",
    },
}

_GENDER_ALIASES = {"f": "F", "female": "F", "m": "M", "male": "M"}


class DatasetFormatError(ValueError):
    """A row (or the header) does not match the declared schema."""

    def __init__(self, message: str, line: int, column: str = ""):
        at = f"line {line}" + (f", column '{column}'" if column else "")
        super().__init__(f"{message} ({at})")
        self.line = line
        self.column = column


class UnknownLabelError(ValueError):
    """A raw group label is not listed for the schema."""

    def __init__(self, schema: str, raw: str, permitted: Sequence[str]):
        super().__init__(
            f"unknown {schema} group label {raw!r}; permitted labels: "
            + ", ".join(sorted(permitted))
        )
        self.schema = schema
        self.raw = raw


@dataclass(frozen=True)
class CanonicalGroup:
    """One of the fixed demographic group labels used across datasets."""

    label: str
    low_support: bool = False

    def __post_init__(self):
        if self.label not in GROUP_LABELS:
            raise ValueError(
                f"not a canonical group label: {self.label!r}; "
                f"expected one of {GROUP_LABELS}"
            )


@dataclass(frozen=True)
class AggregateNameRecord:
    """One name with per-group observation counts from a source dataset."""

    name: str
    group_counts: Mapping[str, int]
    gender_counts: Optional[Mapping[str, int]] = None
    total: int = 0

    def __post_init__(self):
        if not self.name.strip():
            raise ValueError("record name is empty")
        for label, count in self.group_counts.items():
            if count < 0:
                raise ValueError(f"negative count for {label!r} on {self.name!r}")
        if self.gender_counts is not None:
            for label, count in self.gender_counts.items():
                if count < 0:
                    raise ValueError(f"negative count for {label!r} on {self.name!r}")
        if self.total != sum(self.group_counts.values()):
            raise ValueError(
                f"total {self.total} != sum of group counts for {self.name!r}"
            )


@dataclass(frozen=True)
class AssociatedName:
    """A name admitted to a pool with its winning group and metadata."""

    name: str
    group: CanonicalGroup
    gender: str
    frequency: int
    source_dataset: str = ""

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise ValueError(f"invalid gender label {self.gender!r}")
        if self.frequency < 0:
            raise ValueError("frequency must be non-negative")


def schema_label_map(schema: str, overrides: Mapping[str, str] | None = None) -> dict[str, str]:
    """Raw-label -> canonical-label table for a schema, with optional overrides."""
    if schema not in _LABEL_MAPS:
        raise ValueError(f"unknown dataset kind {schema!r}; expected one of {DATASET_KINDS}")
    table = dict(_LABEL_MAPS[schema])
    for raw, canonical in (overrides or {}).items():
        if canonical not in GROUP_LABELS:
            raise ValueError(
                f"label override {raw!r} -> {canonical!r} does not target a "
                f"canonical group; expected one of {GROUP_LABELS}"
            )
        table[raw] = canonical
    return table


def map_group_label(schema: str, raw: str, overrides: Mapping[str, str] | None = None) -> CanonicalGroup:
    """Map a dataset's raw group label to its canonical group.

    No fuzzy matching: an unlisted label raises UnknownLabelError.
    """
    table = schema_label_map(schema, overrides)
    if raw not in table:
        raise UnknownLabelError(schema, raw, tuple(table))
    label = table[raw]
    return CanonicalGroup(label, low_support=label in DEFAULT_LOW_SUPPORT)


def _open_text(source: Union[str, Path, bytes, IO]) -> Iterable[str]:
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8").splitlines()
    if isinstance(source, bytes):
        return source.decode("utf-8").splitlines()
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return data.splitlines()


def _parse_count(value: str, line: int, column: str) -> int:
    try:
        count = int(value)
    except ValueError:
        raise DatasetFormatError(f"count is not an integer: {value!r}", line, column) from None
    if count < 0:
        raise DatasetFormatError(f"count is negative: {count}", line, column)
    return count


def _normalize_gender(value: str, line: int, column: str) -> str:
    gender = _GENDER_ALIASES.get(value.strip().lower())
    if gender is None:
        raise DatasetFormatError(f"unrecognized gender value {value!r} (use F or M)", line, column)
    return gender


def load_aggregate_dataset(
    source: Union[str, Path, bytes, IO],
    schema: str,
    label_overrides: Mapping[str, str] | None = None,
) -> list[AggregateNameRecord]:
    """Parse a dataset into one record per distinct name.

    Names differing only by case are merged with counts summed; the casing
    kept is the variant with the largest observation total (ties broken
    lexicographically).  Output is sorted by name so ingestion is
    deterministic regardless of row order.
    """
    if schema not in _SCHEMA_COLUMNS:
        raise ValueError(f"unknown dataset kind {schema!r}; expected one of {DATASET_KINDS}")
    columns = _SCHEMA_COLUMNS[schema]
    permitted = schema_label_map(schema, label_overrides)

    reader = csv.reader(_open_text(source))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetFormatError("missing header row", 1) from None
    if tuple(cell.strip().lower() for cell in header) != columns:
        raise DatasetFormatError(
            f"header {header!r} does not match schema columns {','.join(columns)}", 1
        )

    group_counts: dict[str, Counter] = defaultdict(Counter)
    gender_counts: dict[str, Counter] = defaultdict(Counter)
    casings: dict[str, Counter] = defaultdict(Counter)
    has_gender = schema in ("NYC", "ROSTER")

    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(columns):
            raise DatasetFormatError(
                f"expected {len(columns)} fields, got {len(row)}", line_no, columns[0]
            )
        if schema == "ROSTER":
            given, family, raw_group, gender = (cell.strip() for cell in row)
            name = f"{given} {family}".strip()
            count = 1
            gender_label = _normalize_gender(gender, line_no, "gender")
        elif schema == "NYC":
            name, raw_group, sex, count_s = (cell.strip() for cell in row)
            count = _parse_count(count_s, line_no, "count")
            gender_label = _normalize_gender(sex, line_no, "sex")
        else:
            name, raw_group, count_s = (cell.strip() for cell in row)
            count = _parse_count(count_s, line_no, "count")
            gender_label = None
        if not name:
            raise DatasetFormatError("empty name", line_no, columns[0])
        if raw_group not in permitted:
            raise UnknownLabelError(schema, raw_group, tuple(permitted))

        key = name.casefold()
        group_counts[key][raw_group] += count
        casings[key][name] += count
        if has_gender and gender_label is not None:
            gender_counts[key][gender_label] += count

    records = []
    for key in sorted(group_counts):
        # Most frequent casing wins; ties go to the lexicographically
        # smallest variant so merging stays order-independent.
        name = _canonical_casing(casings[key])
        counts = dict(group_counts[key])
        records.append(
            AggregateNameRecord(
                name=name,
                group_counts=counts,
                gender_counts=dict(gender_counts[key]) if has_gender else None,
                total=sum(counts.values()),
            )
        )
    records.sort(key=lambda r: r.name)
    return records


def _canonical_casing(variants: Counter) -> str:
    top = max(variants.values())
    return min(v for v, n in variants.items() if n == top)


def associate(record: AggregateNameRecord, dimension: str, threshold: float) -> Optional[str]:
    """Return the label whose observation share strictly exceeds threshold.

    Returns None when no label clears the bar.  The inequality is strict: a
    share exactly at the threshold does not associate.
    """
    if dimension == "race":
        counts = record.group_counts
    elif dimension == "gender":
        if record.gender_counts is None:
            raise ValueError(f"record {record.name!r} has no gender counts")
        counts = record.gender_counts
    else:
        raise ValueError(f"unknown dimension {dimension!r}; expected 'race' or 'gender'")
    total = sum(counts.values())
    if total <= 0:
        raise ValueError(f"record {record.name!r} has no observations on {dimension}")
    # Deterministic regardless of mapping order: highest count wins, ties
    # broken by label.
    label = min(counts, key=lambda lab: (-counts[lab], lab))
    if counts[label] / total > threshold:
        return label
    return None


def _canonicalize_record(
    record: AggregateNameRecord, schema: str | None, overrides: Mapping[str, str] | None
) -> AggregateNameRecord:
    if schema is None:
        for label in record.group_counts:
            if label not in GROUP_LABELS:
                raise UnknownLabelError("canonical", label, GROUP_LABELS)
        return record
    folded: Counter = Counter()
    for raw, count in record.group_counts.items():
        folded[map_group_label(schema, raw, overrides).label] += count
    return replace(record, group_counts=dict(folded))


def build_name_pool(
    records: Sequence[AggregateNameRecord],
    race_threshold: float = 0.75,
    gender_threshold: float = 0.90,
    frequency_table: Mapping[str, int] | None = None,
    *,
    schema: str | None = None,
    source_dataset: str = "",
    min_group_names: int = 20,
    label_overrides: Mapping[str, str] | None = None,
) -> list[AssociatedName]:
    """Derive the demographically associated name pool from aggregate records.

    Only race-associated names are included.  Gender is assigned per the
    gender threshold ('Other' when no gender clears it, 'Unknown' when the
    source has no gender data).  Population frequency is joined from
    frequency_table; missing names get frequency 0 and a warning.  Groups
    with fewer than min_group_names names are flagged low-support, never
    dropped.
    """
    for label, value in (("race", race_threshold), ("gender", gender_threshold)):
        if not 0.5 < value <= 1.0:
            raise ValueError(f"{label} threshold {value} outside (0.5, 1.0]")
    frequency_table = frequency_table or {}

    pool: list[AssociatedName] = []
    missing_frequency = 0
    for record in records:
        canonical = _canonicalize_record(record, schema, label_overrides)
        group_label = associate(canonical, "race", race_threshold)
        if group_label is None:
            continue
        if canonical.gender_counts is None:
            gender = "Unknown"
        else:
            gender = associate(canonical, "gender", gender_threshold) or "Other"
        frequency = frequency_table.get(record.name.casefold(), 0)
        if frequency == 0:
            missing_frequency += 1
            logger.debug("no frequency entry for name %r", record.name)
        pool.append(
            AssociatedName(
                name=record.name,
                group=CanonicalGroup(group_label, low_support=group_label in DEFAULT_LOW_SUPPORT),
                gender=gender,
                frequency=frequency,
                source_dataset=source_dataset,
            )
        )

    if frequency_table and missing_frequency:
        logger.warning(
            "%d of %d pooled names missing from the frequency table (frequency set to 0)",
            missing_frequency,
            len(pool),
        )
    pool.sort(key=lambda n: (n.name, n.group.label))
    return flag_low_support(pool, min_group_names)


def flag_low_support(pool: Sequence[AssociatedName], min_group_names: int) -> list[AssociatedName]:
    """Recompute low-support flags: default low-support groups plus any group
    currently under the minimum-names floor."""
    sizes = Counter(n.group.label for n in pool)
    for label, size in sorted(sizes.items()):
        if size < min_group_names and label not in DEFAULT_LOW_SUPPORT:
            logger.warning(
                "group %r has %d names, under the %d-name floor; flagged low-support",
                label,
                size,
                min_group_names,
            )
    out = []
    for entry in pool:
        low = entry.group.label in DEFAULT_LOW_SUPPORT or sizes[entry.group.label] < min_group_names
        if entry.group.low_support != low:
            entry = replace(entry, group=CanonicalGroup(entry.group.label, low_support=low))
        out.append(entry)
    return out


def load_frequency_table(source: Union[str, Path, bytes, IO]) -> dict[str, int]:
    """Load a name,count table; keys are casefolded for lookup."""
    reader = csv.reader(_open_text(source))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetFormatError("missing header row", 1) from None
    if tuple(cell.strip().lower() for cell in header) != ("name", "count"):
        raise DatasetFormatError(f"header {header!r} does not match 'name,count'", 1)
    table: dict[str, int] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 2:
            raise DatasetFormatError(f"expected 2 fields, got {len(row)}", line_no, "name")
        name, count_s = (cell.strip() for cell in row)
        if not name:
            raise DatasetFormatError("empty name", line_no, "name")
        table[name.casefold()] = table.get(name.casefold(), 0) + _parse_count(count_s, line_no, "count")
    return table
