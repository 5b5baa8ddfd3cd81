"""On-disk artifacts: metadata.json, trajectory CSV/JSON, rates.csv, report.json."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .bounds import BoundInputs, kn_optimal_rate, q_factor, q_limit
from .forms import Eigenproblem, SpectralMetadata
from .iteration import StepRecord, Trajectory, records_from_csv

SCHEMA_VERSION = 1
RATES_HEADER = ("k", "lambda_minus_lambda1", "empirical_ratio", "q_of_lambda_k", "q_limit", "kn_optimal")
TIMESTAMP_KEY = "generated_at"


def fmt(x) -> str:
    """Locale-free, round-trippable number formatting for CSV cells."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    Path(path).write_text(buf.getvalue())


def dump_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")


def timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def metadata_doc(p: Eigenproblem, generator: Optional[Dict] = None) -> Dict:
    meta = p.require_metadata()
    res = meta.residuals(p.A, p.M)
    return {
        "schema_version": SCHEMA_VERSION,
        "dim": p.dim,
        "lambda1": meta.lambda1,
        "lambda2": meta.lambda2,
        "multiplicity": meta.multiplicity,
        "residuals": [float(r) for r in res],
        "max_residual": float(res.max()),
        "generator": generator,
        "e1_basis": [[float(x) for x in col] for col in meta.e1_basis.T],
    }


def read_metadata(path) -> Dict:
    """Load metadata.json; only ``lambda1`` and ``lambda2`` are required."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: metadata must be a JSON object")
    for key in ("lambda1", "lambda2"):
        if not isinstance(doc.get(key), (int, float)):
            raise ValueError(f"{path}: missing numeric {key!r}")
    if not 0 < doc["lambda1"] < doc["lambda2"]:
        raise ValueError(f"{path}: need 0 < lambda1 < lambda2")
    return doc


def metadata_from_doc(doc: Dict) -> SpectralMetadata:
    return SpectralMetadata(doc["lambda1"], doc["lambda2"], np.array(doc["e1_basis"]).T)


def trajectory_doc(t: Trajectory, stamp: Optional[str] = None) -> Dict:
    doc = t.to_dict()
    doc[TIMESTAMP_KEY] = stamp if stamp is not None else timestamp()
    return doc


def read_records(path) -> List[StepRecord]:
    """Trajectory records from either trajectory.csv or trajectory.json."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        doc = json.loads(text)
        if not isinstance(doc, dict) or not isinstance(doc.get("records"), list):
            raise ValueError(f"{path}: expected an object with a 'records' list")
        try:
            return [StepRecord.from_dict(r) for r in doc["records"]]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: malformed record ({exc})") from None
    return records_from_csv(text)


def rates_rows(records, lambda1: float, lambda2: float, eta: float):
    """One row per step: gap, observed ratio, the per-step bound, and the two
    asymptotic rates."""
    b_run = BoundInputs(lambda1, lambda2, eta)
    ql, kn = q_limit(b_run), kn_optimal_rate(b_run)
    rows = []
    for r in records:
        gap = r.lambda_ - lambda1
        nxt = r.lambda_next - lambda1
        ratio = nxt / gap if gap > 0 else None
        b = BoundInputs(lambda1, lambda2, r.eta_used)
        rows.append((r.k, gap, ratio, q_factor(b, min(max(r.lambda_, lambda1), lambda2)), ql, kn))
    return rows


def summary_rows_trend(rows: List[Dict]) -> None:
    """Annotate sweep rows with whether ``steps_to_tol`` is non-decreasing in
    eta at fixed (gap_fraction, seed). Reported, never asserted."""
    groups: Dict = {}
    for row in rows:
        groups.setdefault((row["gap_fraction"], row["seed"]), []).append(row)
    for members in groups.values():
        members.sort(key=lambda r: r["eta"])
        steps = [r["steps_to_tol"] for r in members]
        ok = None if any(s is None for s in steps) else all(a <= b for a, b in zip(steps, steps[1:]))
        for r in members:
            r["steps_nondecreasing_in_eta"] = ok
