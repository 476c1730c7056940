"""Comparison tables rendered from result files.

Every command that produces numbers writes a ``*.result.json`` record::

    {"kind": "...", "provenance": {...}, "rows": [{"method": ..., "class": ..., <metrics>}]}

``build_report`` collects all records below a directory (sorted by path, so
the output depends only on the files) and renders one row per
(experiment, method) with metrics averaged over classes.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .metrics import METRIC_DIRECTION

RESULT_SUFFIX = ".result.json"
COLUMNS = ("is_mean", "frechet", "accuracy", "ms_ssim", "perceptual")
HEADERS = {
    "is_mean": "IS",
    "frechet": "Frechet",
    "accuracy": "Accuracy",
    "ms_ssim": "MS-SSIM",
    "perceptual": "Perceptual",
}
ARROW = {"higher=better": "↑", "lower=better": "↓", "": ""}


def write_result(path, kind: str, rows: list[dict], provenance: dict | None = None) -> Path:
    path = Path(path)
    if not path.name.endswith(RESULT_SUFFIX):
        path = path.with_name(path.name + RESULT_SUFFIX)
    path.parent.mkdir(parents=True, exist_ok=True)
    record = {"kind": kind, "provenance": provenance or {}, "rows": rows}
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=_jsonable))
    return path


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def find_results(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(root.rglob("*" + RESULT_SUFFIX))


def build_report(root) -> dict:
    """Aggregate every result file under ``root``.

    Raises:
        ConfigurationError: if no result files exist.
    """
    files = find_results(root)
    if not files:
        raise ConfigurationError(f"no results found in {root}", "results")
    groups: dict = {}
    for path in files:
        record = json.loads(path.read_text())
        for row in record.get("rows", []):
            key = (record.get("kind", path.stem), str(row.get("method", "")))
            groups.setdefault(key, []).append(row)
    table = []
    for (kind, method), rows in sorted(groups.items()):
        entry = {"experiment": kind, "method": method, "n_classes": len({r.get("class") for r in rows})}
        for col in COLUMNS:
            vals = [r[col] for r in rows if r.get(col) is not None]
            entry[col] = float(np.mean(vals)) if vals else None
        table.append(entry)
    return {"columns": list(COLUMNS), "directions": {c: METRIC_DIRECTION[c] for c in COLUMNS}, "rows": table,
            "sources": [str(p.relative_to(root)) for p in files]}


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.4f}"


def to_markdown(report: dict) -> str:
    heads = [f"{HEADERS[c]} {ARROW[report['directions'][c]]}".strip() for c in report["columns"]]
    lines = [
        "| Experiment | Method | Classes | " + " | ".join(heads) + " |",
        "|" + "---|" * (3 + len(heads)),
    ]
    for r in report["rows"]:
        cells = [r["experiment"], r["method"], str(r["n_classes"])] + [_fmt(r[c]) for c in report["columns"]]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def to_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["experiment", "method", "n_classes"] + list(report["columns"]))
    for r in report["rows"]:
        w.writerow([r["experiment"], r["method"], r["n_classes"]] + [r[c] for c in report["columns"]])
    return buf.getvalue()


def write_report(root, out_dir=None) -> dict:
    """Write report.json, report.csv and report.md; return the report dict."""
    report = build_report(root)
    out = Path(out_dir) if out_dir is not None else Path(root)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    (out / "report.csv").write_text(to_csv(report))
    (out / "report.md").write_text(to_markdown(report))
    return report
