"""CSV/JSON report tables with fixed column order and float formatting."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Mapping, Sequence

from .render import atomic_write

LOCAL_COLUMNS = ("dataset", "model_id", "method", "ed_bar", "of_bar", "coverage", "n_changes", "n_of_pairs", "n_empty_pairs",
                 "sign_ties")
ITEM_COLUMNS = ("dataset", "model_id", "method", "example_id", "change", "ed_cosine", "ed_l2", "ed_norm_diff",
                "ed_mean")
GLOBAL_COLUMNS = ("dataset", "model_id", "method", "n_concepts", "global_of")
IMPORTANCE_COLUMNS = ("dataset", "model_id", "method", "concept", "importance")
SENSITIVITY_COLUMNS = ("dataset", "model_id", "concept", "sensitivity", "n_items")
TRUE_EFFECT_COLUMNS = ("dataset", "concept", "true_effect", "identifiable", "mode", "n_samples", "seed")

REPORT_FILES = {
    "local.csv": LOCAL_COLUMNS,
    "local_items.csv": ITEM_COLUMNS,
    "global.csv": GLOBAL_COLUMNS,
    "global_importance.csv": IMPORTANCE_COLUMNS,
    "sensitivity.csv": SENSITIVITY_COLUMNS,
}


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def table_text(columns: Sequence[str], rows: Sequence[Mapping]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def read_table(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_tables(directory: str | Path, tables: Mapping[str, Sequence[Mapping]], provenance: Mapping) -> dict:
    """Write every table (header-only when empty) plus ``manifest.json`` with file digests.

    ``true_effects.csv`` is produced by its own stage; when it is already in
    the directory its digest is recorded too.
    """
    d = Path(directory)
    files = {}
    for name, columns in REPORT_FILES.items():
        text = table_text(columns, tables.get(name, ()))
        atomic_write(d / name, text)
        files[name] = hashlib.sha256(text.encode("utf-8")).hexdigest()
    te = d / "true_effects.csv"
    if te.is_file():
        files["true_effects.csv"] = sha256_file(te)
    manifest = dict(provenance)
    manifest["files"] = dict(sorted(files.items()))
    manifest["digest"] = hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()
    atomic_write(d / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def write_true_effects(directory: str | Path, rows: Sequence[Mapping], provenance: Mapping) -> dict:
    d = Path(directory)
    text = table_text(TRUE_EFFECT_COLUMNS, rows)
    atomic_write(d / "true_effects.csv", text)
    info = dict(provenance)
    info["file_digest"] = hashlib.sha256(text.encode("utf-8")).hexdigest()
    atomic_write(d / "true_effects.json", json.dumps(info, indent=2, sort_keys=True) + "\n")
    return info
