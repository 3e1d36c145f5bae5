"""Report files: JSON-lines rows, delimited CSV, and an aligned text table.

The table layout mirrors the evaluation tables this toolkit targets; a MOS
column is reserved so externally collected human scores can be merged without
changing the format.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

_COLUMNS = ("variant", "mos", "cer", "secs", "sed", "recall1", "n")


def _cell(row: dict, key: str) -> str:
    if key not in row or row[key] is None:
        return "-"
    value = row[key]
    return f"{value:.2f}" if isinstance(value, float) else str(value)


def render_table(rows: list[dict], title: str = "") -> str:
    """Aligned text table with one line per report row."""
    header = [c.upper() for c in _COLUMNS]
    body = [[_cell(row, c) for c in _COLUMNS] for row in rows]
    widths = [max(len(header[i]), *(len(r[i]) for r in body)) if body else len(header[i])
              for i in range(len(_COLUMNS))]
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(header)))
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(_COLUMNS))))
    return "\n".join(lines) + "\n"


def write_report(out_dir, name: str, rows: list[dict], title: str = "") -> dict[str, Path]:
    """Write <name>.json (JSON-lines), <name>.csv, and <name>.txt; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / f"{name}.json",
        "csv": out / f"{name}.csv",
        "txt": out / f"{name}.txt",
    }
    with open(paths["json"], "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    with open(paths["csv"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(_COLUMNS), restval="", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    paths["txt"].write_text(render_table(rows, title=title), encoding="utf-8")
    return paths
