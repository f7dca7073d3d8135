"""Deterministic result files: trial CSVs and run summaries.

Floats are written with repr (shortest round-trip form), bools as
true/false, and rows in the order given, so identical inputs produce
byte-identical CSV files across reruns and platforms.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["TrialRecord", "format_value", "write_records", "write_summary"]


@dataclass
class TrialRecord:
    """One result row; ``values`` is an ordered column -> value mapping."""

    values: dict = field(default_factory=dict)


def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def _as_mapping(record):
    return record.values if isinstance(record, TrialRecord) else record


def write_records(path, records, columns=None):
    """CSV writer with a fixed column set shared by every record."""
    records = [_as_mapping(r) for r in records]
    if columns is None:
        if not records:
            raise ValueError("columns are required for an empty record set")
        columns = list(records[0].keys())
    columns = list(columns)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for record in records:
            if set(record.keys()) != set(columns):
                raise ValueError("record columns do not match the header")
            writer.writerow([format_value(record[c]) for c in columns])


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_summary(path, payload):
    """Sorted-keys JSON summary; a summary may embed timings, so only the
    CSVs carry the byte-identical rerun guarantee."""
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=_json_default)
        handle.write("\n")
