"""CSV and JSON writers with provenance headers and round-trip float formatting."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1


def fmt(value) -> str:
    """Shortest round-trip text for floats; plain text for everything else."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def jsonable(obj):
    """Plain JSON types; non-finite floats become strings so the output stays strict JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def header_lines(version: str, config_json: str, seed: int, command: str) -> list[str]:
    return [f"artifact: assocsip {version}", f"command: {command}", f"seed: {seed}", f"config: {config_json}"]


def write_csv(path, header: Sequence[str], columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    """'#'-prefixed provenance lines, one column-name row, then data rows."""
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    _atomic_write(path, buf.getvalue())


def read_csv(path) -> tuple[list[str], list[dict]]:
    """(header lines, rows as dicts of strings)."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    header = [l[2:] for l in lines if l.startswith("# ")]
    body = [l for l in lines if not l.startswith("#")]
    return header, list(csv.DictReader(body))


def write_json(path, version: str, config: dict, seed: int, command: str, data: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, "artifact": f"assocsip {version}", "command": command,
               "seed": seed, "config": config, "data": jsonable(data)}
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def index_columns(prefix: str, d: int) -> list[str]:
    return [f"{prefix}_{s + 1}" for s in range(d)]
