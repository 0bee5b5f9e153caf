"""Operator command line.

Subcommands: simulate (run batch sessions), resume (continue a snapshot),
validate (run a validation block on a snapshot), analyze (ANOVA summary
over subject results), serve (live-mode HTTP/stream server), export
(figure-ready delimited data). Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from . import analysis, protocol, scenarios
from .protocol import SessionConfig, SessionState

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

OUT_ENV_VAR = "HILOTUNE_OUT"


class UsageError(Exception):
    pass


def _default_out() -> Path:
    return Path(os.environ.get(OUT_ENV_VAR, "runs"))


def _load_configs(config_path, seed_override) -> list[tuple[str, SessionConfig]]:
    """A config file is either one session config or a scenario with a
    'subjects' list; returns (subject name, config) pairs."""
    if config_path is None:
        cfgs = [("subject_00", SessionConfig())]
    else:
        path = Path(config_path)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        doc = json.loads(path.read_text())
        if "subjects" in doc:
            cfgs = [
                (f"subject_{i:02d}", SessionConfig.from_dict(d))
                for i, d in enumerate(doc["subjects"])
            ]
        else:
            cfgs = [("subject_00", SessionConfig.from_dict(doc))]
    if seed_override is not None:
        cfgs = [
            (name, SessionConfig.from_dict({**c.to_dict(), "master_seed": seed_override + i}))
            for i, (name, c) in enumerate(cfgs)
        ]
    return cfgs


def _expand_subjects(cfgs, n_subjects) -> list[tuple[str, SessionConfig]]:
    if n_subjects is None or len(cfgs) != 1:
        return cfgs
    name, base = cfgs[0]
    return [
        (
            f"subject_{i:02d}",
            SessionConfig.from_dict({**base.to_dict(), "master_seed": base.master_seed + i}),
        )
        for i in range(n_subjects)
    ]


def _write_archive(session: SessionState, path: Path) -> None:
    """Append-only line-delimited trial records: generation, stiffness
    components, cost breakdown and simulated timestamp."""
    lines = [json.dumps(rec) for rec in session.cost_log]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def _snapshot_name(generation: int) -> str:
    return f"snapshot_g{generation:03d}.json"


def run_subject(args) -> str:
    """Run one subject's full session, writing archives, per-generation
    snapshots, validation reports and the run manifest."""
    name, config_dict, out_dir = args
    config = SessionConfig.from_dict(config_dict)
    out = Path(out_dir) / name
    out.mkdir(parents=True, exist_ok=True)

    manifest = {"version": protocol.SNAPSHOT_VERSION, "config": config.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))

    session = protocol.new_session(config)
    protocol.save_session(session, out / _snapshot_name(0))
    while session.day < config.days:
        while session.gen_in_day < config.generations_per_day:
            protocol.run_generation(session)
            protocol.save_session(session, out / _snapshot_name(session.cma.g))
        report = protocol.run_validation(session)
        (out / f"report_day{session.day + 1}.json").write_text(
            json.dumps(report.to_dict())
        )
        protocol.advance_day_boundary(session)
    _write_archive(session, out / "archive.jsonl")
    protocol.save_session(session, out / "snapshot_final.json")
    return name


def cmd_simulate(args) -> int:
    if args.print_default_config:
        print(json.dumps(SessionConfig().to_dict(), indent=2))
        return EXIT_OK
    cfgs = _expand_subjects(_load_configs(args.config, args.seed), args.subjects)
    out = Path(args.out) if args.out else _default_out()
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(name, cfg.to_dict(), str(out)) for name, cfg in cfgs]
    if len(jobs) > 1 and args.workers > 1:
        with Pool(min(args.workers, len(jobs))) as pool:
            for name in pool.imap_unordered(run_subject, jobs):
                print(f"completed {name}")
    else:
        for job in jobs:
            print(f"completed {run_subject(job)}")
    print(f"results in {out}")
    return EXIT_OK


def cmd_resume(args) -> int:
    session = protocol.load_session(args.resume)
    out = Path(args.out) if args.out else Path(args.resume).parent
    out.mkdir(parents=True, exist_ok=True)
    while session.day < session.config.days:
        while session.gen_in_day < session.config.generations_per_day:
            protocol.run_generation(session)
            protocol.save_session(session, out / _snapshot_name(session.cma.g))
        report = protocol.run_validation(session)
        (out / f"report_day{session.day + 1}.json").write_text(json.dumps(report.to_dict()))
        protocol.advance_day_boundary(session)
    _write_archive(session, out / "archive.jsonl")
    protocol.save_session(session, out / "snapshot_final.json")
    print(f"resumed session complete; results in {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    session = protocol.load_session(args.resume)
    report = protocol.run_validation(session)
    out = Path(args.out) if args.out else Path(args.resume).parent
    out.mkdir(parents=True, exist_ok=True)
    dest = out / f"validation_extra_day{report.day + 1}.json"
    dest.write_text(json.dumps(report.to_dict()))
    print(f"validation report written to {dest}")
    return EXIT_OK


def _reports_from_dir(subject_dir: Path) -> list[protocol.ValidationReport]:
    files = sorted(subject_dir.glob("report_day*.json"))
    if not files:
        raise UsageError(f"no validation reports under {subject_dir}")
    return [protocol.ValidationReport.from_dict(json.loads(f.read_text())) for f in files]


def cmd_analyze(args) -> int:
    dirs = [Path(p) for p in args.subjects_dirs]
    if not dirs:
        raise UsageError("analyze needs at least one subject directory")
    per_subject = []
    for d in dirs:
        if not d.exists():
            raise UsageError(f"missing subject directory: {d}")
        per_subject.append(_reports_from_dir(d))
    if len(per_subject) < 2:
        raise UsageError("analysis needs at least 2 subjects (insufficient degrees of freedom)")
    n_days = {len(r) for r in per_subject}
    if len(n_days) != 1:
        raise UsageError(f"subjects disagree on day count: {sorted(n_days)}")

    table = scenarios.table_from_reports(per_subject)
    if table.values.shape[2] >= 2:
        anova = analysis.rm_anova_twoway(table)
    else:
        flat = analysis.RmTable(
            values=table.values[:, :, 0], condition_labels=table.condition_labels
        )
        anova = analysis.rm_anova_oneway(flat)
    pairwise = analysis.bonferroni_pairwise(table)
    text = analysis.summary_table(anova, pairwise)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        print(f"summary written to {out}")
    return EXIT_OK


def _load_snapshots(run_dir: Path) -> list[SessionState]:
    files = sorted(run_dir.glob("snapshot_g*.json"))
    if not files:
        raise UsageError(f"no per-generation snapshots under {run_dir}")
    return [protocol.load_session(f) for f in files]


def cmd_export(args) -> int:
    run_dir = Path(args.archive)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)

    if args.kind == "mean-trajectory":
        sessions = _load_snapshots(run_dir)
        lines = ["generation,label,m_hip,m_knee,sigma"]
        for s in sessions:
            g = s.cma.g
            lines.append(
                f"{g},G{g + 1},{s.cma.m[0]!r},{s.cma.m[1]!r},{s.cma.sigma!r}"
            )
        dest = out / "mean_trajectory.csv"
    elif args.kind == "covariance-ellipses":
        sessions = _load_snapshots(run_dir)
        lines = ["generation,center_hip,center_knee,axis1,axis2,angle_rad"]
        for s in sessions:
            scaled = (s.cma.sigma**2) * s.cma.C
            vals, vecs = np.linalg.eigh(scaled)
            angle = float(np.arctan2(vecs[1, 1], vecs[0, 1]))
            lines.append(
                f"{s.cma.g},{s.cma.m[0]!r},{s.cma.m[1]!r},"
                f"{float(np.sqrt(vals[1]))!r},{float(np.sqrt(vals[0]))!r},{angle!r}"
            )
        dest = out / "covariance_ellipses.csv"
    elif args.kind == "validation-bars":
        reports = _reports_from_dir(run_dir)
        lines = ["day,condition,mean_total,std_total"]
        for report in reports:
            for cond in protocol.VALIDATION_CONDITIONS:
                totals = [cb.total for cb in report.results[cond]]
                lines.append(
                    f"{report.day + 1},{cond},{float(np.mean(totals))!r},"
                    f"{float(np.std(totals))!r}"
                )
        dest = out / "validation_bars.csv"
    else:
        raise UsageError(f"unknown export kind {args.kind!r}")

    dest.write_text("\n".join(lines) + "\n")
    print(f"wrote {dest}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hilotune", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run batch sessions to completion")
    sim.add_argument("--config", help="session or scenario JSON config")
    sim.add_argument("--seed", type=int, help="override master seed (subject i gets seed+i)")
    sim.add_argument("--out", help=f"output directory (default ${OUT_ENV_VAR} or ./runs)")
    sim.add_argument("--subjects", type=int, help="replicate a single config across N subjects")
    sim.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    sim.add_argument("--print-default-config", action="store_true",
                     help="print the default session config and exit")
    sim.set_defaults(func=cmd_simulate)

    res = sub.add_parser("resume", help="continue a saved session to completion")
    res.add_argument("--resume", required=True, help="session snapshot path")
    res.add_argument("--out", help="output directory (default: snapshot's directory)")
    res.set_defaults(func=cmd_resume)

    val = sub.add_parser("validate", help="run a validation block on a saved session")
    val.add_argument("--resume", required=True, help="session snapshot path")
    val.add_argument("--out", help="output directory")
    val.set_defaults(func=cmd_validate)

    ana = sub.add_parser("analyze", help="ANOVA summary over subject result directories")
    ana.add_argument("subjects_dirs", nargs="*", help="subject output directories")
    ana.add_argument("--out", help="write the summary table here")
    ana.set_defaults(func=cmd_analyze)

    srv = sub.add_parser("serve", help="serve live mode over HTTP")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    srv.set_defaults(func=cmd_serve)

    exp = sub.add_parser("export", help="emit figure-ready delimited data")
    exp.add_argument("--archive", required=True, help="run directory of one subject")
    exp.add_argument("--kind", required=True,
                     choices=["mean-trajectory", "covariance-ellipses", "validation-bars"])
    exp.add_argument("--out", help="output directory (default: run directory)")
    exp.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (protocol.SnapshotError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
