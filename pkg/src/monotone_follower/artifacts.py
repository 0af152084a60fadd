"""Deterministic artifact writing: JSON, CSV, plan documents and the run manifest."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .costs import ControlPlan

PLAN_SCHEMA = "monotone-follower/plan/1"
MANIFEST_SCHEMA = "monotone-follower/manifest/1"


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(doc) -> str:
    return json.dumps(_clean(doc), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def atomic_write(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, doc) -> Path:
    return atomic_write(path, dumps(doc).encode("utf-8"))


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r[c]) for c in columns])
    return buf.getvalue()


def write_csv(path, columns, rows) -> Path:
    return atomic_write(path, csv_text(columns, rows).encode("utf-8"))


def plan_to_dict(plan: ControlPlan) -> dict:
    return {
        "schema": PLAN_SCHEMA,
        "initial_jump": plan.initial_jump.tolist(),
        "increments": plan.increments.tolist(),
        "levels": plan.levels().tolist(),
        "cap_per_step": None if plan.cap_per_step is None else plan.cap_per_step.tolist(),
    }


def plan_from_dict(tree, doc: dict) -> ControlPlan:
    if doc.get("schema") != PLAN_SCHEMA:
        raise ValueError(f"unsupported plan schema {doc.get('schema')!r}")
    return ControlPlan(tree, doc["initial_jump"], doc["increments"], doc.get("cap_per_step"))


def write_manifest(out_dir, command: str, written) -> Path:
    """Sorted list of artifacts with their SHA-256; independent of completion order."""
    out_dir = Path(out_dir)
    entries = []
    for p in sorted({Path(p).name for p in written}):
        digest = hashlib.sha256((out_dir / p).read_bytes()).hexdigest()
        entries.append({"file": p, "sha256": digest})
    return write_json(out_dir / "manifest.json",
                      {"schema": MANIFEST_SCHEMA, "command": command, "artifacts": entries})
