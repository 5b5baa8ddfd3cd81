"""Command line driver: ``approxinv {generate,run,sweep,verify}``.

Exit codes: 0 success / every check passed, 1 verification or run failure,
2 usage or validation error.
"""

from __future__ import annotations

import argparse
import functools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import mmio, plots
from .bounds import VerificationReport, verify_records
from .errors import ApproxInvError, PreconditionError
from .iteration import run
from .manifest import RunManifest
from .report import (
    RATES_HEADER,
    dump_json,
    metadata_doc,
    rates_rows,
    read_metadata,
    read_records,
    summary_rows_trend,
    trajectory_doc,
    write_csv,
)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

SUMMARY_HEADER = (
    "eta",
    "gap_fraction",
    "seed",
    "steps_to_tol",
    "all_pass",
    "min_margin_T31",
    "steps_nondecreasing_in_eta",
)


class UsageError(Exception):
    pass


def _err(msg):
    print(f"approxinv: {msg}", file=sys.stderr)


def _load_manifest(args) -> RunManifest:
    if not args.manifest:
        raise UsageError("--manifest is required")
    try:
        m = RunManifest.load(args.manifest, args.override or ())
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        m.output_dir = args.out
    if args.workers:
        m.workers = args.workers
    return m


def _out_dir(m: RunManifest) -> Path:
    # relative output paths resolve against the working directory, not the manifest
    out = Path(m.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build(m: RunManifest):
    try:
        return m.build_problem()
    except (OSError, ValueError, ApproxInvError) as exc:
        raise UsageError(f"generator failed: {exc}") from None


def cmd_generate(args) -> int:
    m = _load_manifest(args)
    p = _build(m)
    out = _out_dir(m)
    mmio.write_matrix_market(out / "A.mtx", p.A.matrix, comment="energy form")
    mmio.write_matrix_market(out / "M.mtx", p.M.matrix, comment="mass form")
    if p.metadata is not None:
        dump_json(out / "metadata.json", metadata_doc(p, m.generator.to_dict()))
        print(f"lambda1={p.metadata.lambda1!r} lambda2={p.metadata.lambda2!r} "
              f"multiplicity={p.metadata.multiplicity}")
    print(f"wrote {out}")
    return EXIT_OK


def _write_run(out: Path, m: RunManifest, p, t, figures: bool, title: str = ""):
    """Write trajectory, verification report, rates table and figure. Returns the report."""
    if "csv" in m.formats:
        (out / "trajectory.csv").write_text(t.to_csv())
    if "json" in m.formats:
        dump_json(out / "trajectory.json", trajectory_doc(t))
    meta = p.metadata
    if meta is None:
        return None
    report = verify_records(t.records, meta.lambda1, meta.lambda2)
    dump_json(out / "report.json", report.to_dict())
    rows = rates_rows(t.records, meta.lambda1, meta.lambda2, report.eta)
    write_csv(out / "rates.csv", RATES_HEADER, rows)
    if figures:
        plots.plot_rates(rows, out / "rates.png", title=title)
    return report


def cmd_run(args) -> int:
    m = _load_manifest(args)
    p = _build(m)
    try:
        u0 = m.start_vector(p)
    except (OSError, ValueError, ApproxInvError) as exc:
        raise UsageError(f"start vector: {exc}") from None
    try:
        t = run(p, u0, m.run)
    except ApproxInvError as exc:
        _err(f"run failed: {exc}")
        return EXIT_FAIL
    out = _out_dir(m)
    if p.metadata is not None:
        dump_json(out / "metadata.json", metadata_doc(p, m.generator.to_dict()))
    title = f"{m.generator.kind}, {m.run.solver_mode}, eta={m.run.eta:g}"
    report = _write_run(out, m, p, t, not args.no_figures, title)
    print(f"steps={t.steps} stop_reason={t.stop_reason} final_lambda={float(t.lambdas[-1])!r}")
    if report is None:
        print("no spectral metadata: verification skipped")
        return EXIT_OK
    print(report.format_table())
    return EXIT_OK if report.all_pass else EXIT_FAIL


@functools.lru_cache(maxsize=4)
def _cached_problem(manifest_json: str, base_dir):
    m = RunManifest.from_dict(json.loads(manifest_json), base_dir)
    return m.build_problem()


def _sweep_cell(manifest_json, base_dir, out_dir, formats, eta, gap, seed):
    from dataclasses import replace

    m = RunManifest.from_dict(json.loads(manifest_json), base_dir)
    m.formats = formats
    p = _cached_problem(manifest_json, base_dir)
    cfg = replace(m.run, eta=eta, policy=replace(m.run.policy, seed=seed))
    row = {"eta": eta, "gap_fraction": gap, "seed": seed,
           "steps_to_tol": None, "all_pass": False, "min_margin_T31": None}
    cell = Path(out_dir) / "cells" / f"eta={eta:g}_gap={gap:g}_seed={seed}"
    cell.mkdir(parents=True, exist_ok=True)
    try:
        u0 = m.start_vector(p, gap_fraction=gap, seed=seed)
        t = run(p, u0, cfg)
    except (ApproxInvError, ValueError) as exc:
        (cell / "error.txt").write_text(f"{exc}\n")
        row["error"] = str(exc)
        return row
    m.run = cfg
    report = _write_run(cell, m, p, t, figures=False)
    if t.stop_reason in ("tol_reached", "eigenvector_fixed_point"):
        row["steps_to_tol"] = t.steps
    if report is not None:
        row["all_pass"] = report.all_pass
        row["min_margin_T31"] = report.min_margin("T3.1")
    return row


def cmd_sweep(args) -> int:
    m = _load_manifest(args)
    if m.sweep is None:
        raise UsageError("manifest has no 'sweep' block")
    p = _build(m)
    if p.metadata is None:
        raise UsageError("sweeps need spectral metadata to verify cells")
    out = _out_dir(m)
    manifest_json = json.dumps(m.raw, sort_keys=True)
    job = functools.partial(_sweep_cell, manifest_json, m.base_dir, str(out), m.formats)
    cells = m.sweep.cells()
    if m.workers > 1:
        with ProcessPoolExecutor(max_workers=m.workers) as pool:
            rows = list(pool.map(job, *zip(*cells)))
    else:
        rows = [job(*c) for c in cells]
    summary_rows_trend(rows)
    write_csv(out / "summary.csv", SUMMARY_HEADER, [[r[c] for c in SUMMARY_HEADER] for r in rows])
    if not args.no_figures:
        plots.plot_sweep(rows, out / "summary.png")
    failed = [r for r in rows if not r["all_pass"]]
    print(f"cells={len(rows)} passed={len(rows) - len(failed)} failed={len(failed)}")
    for r in failed[:10]:
        print(f"  FAIL eta={r['eta']:g} gap={r['gap_fraction']:g} seed={r['seed']}"
              + (f": {r['error']}" if "error" in r else ""))
    return EXIT_OK if not failed else EXIT_FAIL


def cmd_verify(args) -> int:
    try:
        records = read_records(args.trajectory)
        meta = read_metadata(args.metadata)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise UsageError(str(exc)) from None
    if args.eta is not None and not 0 <= args.eta < 1:
        raise UsageError(f"--eta must lie in [0, 1), got {args.eta}")
    try:
        report: VerificationReport = verify_records(records, meta["lambda1"], meta["lambda2"], args.eta)
    except PreconditionError as exc:
        _err(f"verification failed: {exc}")
        return EXIT_FAIL
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out) if args.out else Path(args.trajectory).parent / "verify_report.json"
    if out.suffix.lower() != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "verify_report.json"
    dump_json(out, report.to_dict())
    print(report.format_table())
    return EXIT_OK if report.all_pass else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="approxinv",
        description="Approximate inverse iteration with per-step bound certification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def manifest_flags(sp):
        sp.add_argument("--manifest", required=True, help="JSON run manifest")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--workers", type=int, help="parallel sweep workers")
        sp.add_argument("--override", action="append", metavar="KEY=VALUE",
                        help="dotted manifest override, e.g. run.eta=0.5 (repeatable)")
        sp.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    manifest_flags(sub.add_parser("generate", help="write A.mtx, M.mtx and metadata.json"))
    manifest_flags(sub.add_parser("run", help="run one iteration and certify it"))
    manifest_flags(sub.add_parser("sweep", help="eta x gap_fraction x seed grid"))
    vp = sub.add_parser("verify", help="re-certify a stored trajectory")
    vp.add_argument("--trajectory", required=True, help="trajectory.csv or trajectory.json")
    vp.add_argument("--metadata", required=True, help="metadata.json with lambda1, lambda2")
    vp.add_argument("--eta", type=float, help="run-level eta for the envelope check")
    vp.add_argument("--out", help="report path (.json) or directory")
    return parser


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
