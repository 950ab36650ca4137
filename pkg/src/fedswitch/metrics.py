"""Per-round metrics tables: CSV emission and parse-back.

The column order is fixed. Floats use 17 significant digits so a parsed
table reproduces the emitted one exactly, and re-emitting it is
byte-identical.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

__all__ = ["COLUMNS", "format_float", "row_dict", "emit_metrics", "parse_metrics", "write_rows"]

COLUMNS = (
    "round", "seed", "strategy", "phi_measured", "bound_total",
    "bound_term1", "bound_term2", "bound_term3", "bound_term4",
    "energy_total_J", "success_rate", "E_t_s", "inner_iters", "flags",
    # extras, after the stable prefix
    "risk_ensemble", "energy_comm_J", "power_mean_W", "A_n", "B_n", "config_hash",
)
_INT = {"round", "seed", "inner_iters"}
_STR = {"strategy", "flags", "config_hash"}
_VEC = {"A_n", "B_n"}


def format_float(x) -> str:
    return "%.17g" % float(x)


def row_dict(metrics, config_hash: str = "") -> dict:
    """Flatten a RoundMetrics into CSV-ready values."""
    d = {c: getattr(metrics, c) for c in COLUMNS if c not in ("bound_total", "config_hash")}
    d["bound_total"] = metrics.bound_total
    d["config_hash"] = config_hash
    return d


def _cell(key, value) -> str:
    if key in _STR:
        return str(value)
    if key in _INT:
        return str(int(value))
    if key in _VEC:
        return ";".join(format_float(v) for v in value)
    return format_float(value)


def _render(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in table:
        w.writerow([_cell(c, row[c]) for c in COLUMNS])
    return buf.getvalue()


def emit_metrics(table, path) -> Path:
    """Write rows (dicts keyed by COLUMNS) to ``path``; an empty table gives a header-only file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_render(table).encode("utf-8"))
    return path


def write_rows(rows, path, config_hash: str) -> Path:
    """Emit RoundMetrics rows."""
    return emit_metrics([row_dict(r, config_hash) for r in rows], path)


def _parse(key, text):
    if key in _STR:
        return text
    if key in _INT:
        return int(text)
    if key in _VEC:
        return tuple(float(v) for v in text.split(";")) if text else ()
    return float(text)


def parse_metrics(path) -> list:
    """Read a metrics CSV back into a list of dicts."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != COLUMNS:
            raise ValueError(f"{path}: unexpected header {header!r}")
        return [{k: _parse(k, v) for k, v in zip(COLUMNS, rec)} for rec in reader]
