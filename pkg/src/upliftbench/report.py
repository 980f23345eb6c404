"""Render aggregated results as CSV or JSON tables.

Output is byte-stable: floats are written with ``repr`` and keys in a fixed
order, so identical results give identical files.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .harness import ResultsTable, aggregate, rank_correlation_table
from .metrics import METRICS, PRACTICAL

FORMATS = ("csv", "json")


def column_label(setting: str, knob: str) -> str:
    return f"{setting}:{knob}"


def _num(value: float):
    return None if math.isnan(value) else float(value)


def _k_label(k: float) -> str:
    return f"{round(k * 100):d}"


def build_tables(results: ResultsTable) -> dict[str, dict]:
    """Named tables, each {"columns": [...], "rows": [[label, *values], ...]}."""
    columns = [column_label(s, kn) for s, kn in results.cells]
    tables = {}
    for k in results.k_list:
        for metric in METRICS:
            for stat, source in (("mean", results.mean), ("std", results.std)):
                rows = [
                    [model] + [_num(source[(s, kn, model, k, metric)]) for s, kn in results.cells]
                    for model in results.models
                ]
                tables[f"{stat}_{metric}_{_k_label(k)}"] = {"columns": ["model"] + columns, "rows": rows}
            rows = [
                [model] + [results.ranks[(s, kn, k, metric)][model] for s, kn in results.cells]
                for model in results.models
            ]
            tables[f"radar_{metric}_{_k_label(k)}"] = {"columns": ["model"] + columns, "rows": rows}

    practical = [m for m in results.models if m != "oracle"]
    if len(practical) >= 2:
        corr = rank_correlation_table(results)
        rows = []
        for k in results.k_list:
            for metric in PRACTICAL:
                cells = [corr[(s, kn, k, metric)] for s, kn in results.cells]
                rows.append([f"{metric}_{_k_label(k)}"] + [_num(c.value) for c in cells])
                rows.append([f"{metric}_{_k_label(k)}_excluded_runs"] + [c.n_excluded for c in cells])
        tables["rank_correlation"] = {"columns": ["metric"] + columns, "rows": rows}
    return tables


def _csv_text(table: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table["columns"])
    for row in table["rows"]:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def emit_report(rows: list[dict], fmt: str, path: str | Path, models: list[str] | None = None) -> list[Path]:
    """Aggregate long-format rows and write tables under ``path``; returns the files written.

    CSV gives one file per table in the directory ``path``; JSON gives a
    single file.
    """
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")
    tables = build_tables(aggregate(rows, models))
    path = Path(path)
    if fmt == "json":
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(tables, indent=1, allow_nan=False) + "\n", encoding="utf-8")
        return [path]
    path.mkdir(parents=True, exist_ok=True)
    written = []
    for name, table in tables.items():
        out = path / f"{name}.csv"
        out.write_text(_csv_text(table), encoding="utf-8")
        written.append(out)
    return written
