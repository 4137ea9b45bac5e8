"""Run reports and plot-data tables.

The report is one JSON document with sorted keys.  Nothing in it depends
on the clock, the worker count or the output location, so two runs with
the same config, data and seed write identical bytes; those run details
go to a separate ``run_meta.json``.  Floats are written with ``repr`` so
tables load back without loss.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Iterable

from . import __version__

SCHEMA_VERSION = 1

# per-sweep plot data: name, unit
SWEEP_COLUMNS = (
    ("mediator", "name"),
    ("rank", "1 = largest reduction"),
    ("point", "outcome units"),
    ("mc_se", "outcome units"),
    ("ci_low", "outcome units"),
    ("ci_high", "outcome units"),
    ("reduction", "% of gap"),
    ("reduction_ci_low", "% of gap"),
    ("reduction_ci_high", "% of gap"),
    ("component_exposed", "% of gap"),
    ("component_control", "% of gap"),
    ("error", "text"),
)


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, tuples become lists."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def to_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def fingerprint(text: str | bytes) -> str:
    data = text.encode() if isinstance(text, str) else text
    return hashlib.sha256(data).hexdigest()


def file_fingerprint(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def software_fingerprint() -> str:
    """Hash of the package sources, so a report names the exact code that made it."""
    root = Path(__file__).parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def software() -> dict:
    return {"name": "intervgap", "version": __version__, "fingerprint": software_fingerprint()}


# ---------------------------------------------------------------------------
# Tables


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v).replace("\t", " ").replace("\n", " ")


def sweep_rows(members: Iterable[tuple[str, dict]]) -> list[dict]:
    """Rows of a sweep table from (mediator, estimate dict) pairs, in working order."""
    members = list(members)
    ok = [(m, e) for m, e in members if e.get("error") is None]
    # ranks by reduction (percent of gap), largest first; ties keep working order
    order = sorted(range(len(ok)), key=lambda i: -ok[i][1]["percent_of_gap"])
    rank = {ok[i][0]: r + 1 for r, i in enumerate(order)}
    rows = []
    for m, e in members:
        comps = e.get("components", {})
        ci = e.get("ci") or [None, None]
        pci = e.get("percent_ci") or [None, None]
        rows.append({
            "mediator": m,
            "rank": rank.get(m),
            "point": e.get("point"),
            "mc_se": e.get("mc_se"),
            "ci_low": ci[0],
            "ci_high": ci[1],
            "reduction": e.get("percent_of_gap"),
            "reduction_ci_low": pci[0],
            "reduction_ci_high": pci[1],
            "component_exposed": comps.get("exposed", {}).get("percent_of_gap"),
            "component_control": comps.get("control", {}).get("percent_of_gap"),
            "error": e.get("error"),
        })
    return rows


def write_table(path, rows: list[dict], columns=SWEEP_COLUMNS) -> None:
    """Tab-separated table; the header row carries ``name [unit]``."""
    with open(path, "w", newline="") as fh:
        fh.write("\t".join(f"{c} [{u}]" for c, u in columns) + "\n")
        for r in rows:
            fh.write("\t".join(_fmt(r.get(c)) for c, _ in columns) + "\n")


def read_table(path) -> list[dict]:
    """Load a table written by :func:`write_table`; numbers come back as floats."""
    with open(path, newline="") as fh:
        lines = fh.read().split("\n")
    header = [h.split(" [", 1)[0] for h in lines[0].split("\t")]
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        row = {}
        for name, cell in zip(header, line.split("\t")):
            if cell == "":
                row[name] = None
            elif name in ("mediator", "error", "query"):
                row[name] = cell
            elif name == "rank":
                row[name] = int(cell)
            else:
                row[name] = float(cell)
        rows.append(row)
    return rows


COMPONENT_COLUMNS = (
    ("query", "name"),
    ("component_exposed", "% of gap"),
    ("component_control", "% of gap"),
    ("total", "% of gap"),
)


def component_rows(estimates: dict) -> list[dict]:
    """Exposed / control split for every whole-population estimate."""
    rows = []
    for name in sorted(estimates):
        e = estimates[name]
        comps = e.get("components") or {}
        if "exposed" in comps and "control" in comps:
            rows.append({
                "query": name,
                "component_exposed": comps["exposed"]["percent_of_gap"],
                "component_control": comps["control"]["percent_of_gap"],
                "total": e["percent_of_gap"],
            })
    return rows
