"""Command line front end.

Verbs: forge (synthetic corpus), load-check (ingest + reject report),
search (cohort preview), sectionize (notes to sections CSV), run (full
pipeline), serve (HTTP service). Bind address and port for serve come
from EHRFUSE_HOST / EHRFUSE_PORT unless flags override them.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .align import GRANULARITIES, AlignmentPlan
from .cohort import MODE_ALL, MODE_ICD, CohortSpec, cohort_stats, search
from .forge import ForgeConfig, forge_corpus
from .ingest import load_snapshot, write_rejects_csv
from .pipeline import (DEFAULT_MODALITIES, RunConfig, read_config_json,
                       run_pipeline)
from .sectionize import compile_lexicon, load_lexicon, sectionize_table


def _add_forge(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("forge", help="write a synthetic corpus and its manifest")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--no-placeholders", action="store_true",
                   help="skip writing placeholder asset files")


def _add_load_check(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("load-check", help="load a corpus and report rejects")
    p.add_argument("--root", required=True)
    p.add_argument("--out", default="", help="optional rejects.csv path")
    p.add_argument("--max-reject-fraction", type=float, default=0.05)


def _add_search(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("search", help="resolve a cohort and print stats")
    p.add_argument("--root", required=True)
    p.add_argument("--codes", default="", help="comma-separated ICD patterns")
    p.add_argument("--names", default="", help="comma-separated title substrings")
    p.add_argument("--icd-version", default="both", choices=["9", "10", "both"])
    p.add_argument("--all-subjects", action="store_true")
    p.add_argument("--out", default="", help="optional cohort.csv path")


def _add_sectionize(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("sectionize", help="segment cohort notes into sections")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True, help="sections.csv path")
    p.add_argument("--note-type", default="both", choices=["DS", "RR", "both"])
    p.add_argument("--lexicon", default="", help="header lexicon JSON")


def _add_run(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("run", help="run the full pipeline from a config")
    p.add_argument("--config", default="", help="RunConfig JSON path")
    p.add_argument("--root", default="", help="override dataset root")
    p.add_argument("--out", default="", help="override output directory")
    p.add_argument("--granularity", default="", choices=[""] + list(GRANULARITIES))
    p.add_argument("--percentile-k", type=float, default=0.0)
    p.add_argument("--embed", action="store_true")


def _add_serve(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--root", default="", help="load this corpus at startup")
    p.add_argument("--out", default="runs", help="workspace for run artifacts")
    p.add_argument("--host", default=os.environ.get("EHRFUSE_HOST", "127.0.0.1"))
    p.add_argument("--port", type=int,
                   default=int(os.environ.get("EHRFUSE_PORT", "8420")))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehrfuse",
        description="Multimodal EHR integration: cohorts, sections, "
                    "temporal alignment, embeddings.")
    sub = parser.add_subparsers(dest="verb", required=True)
    _add_forge(sub)
    _add_load_check(sub)
    _add_search(sub)
    _add_sectionize(sub)
    _add_run(sub)
    _add_serve(sub)
    return parser


def _split_csv(arg: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in arg.split(",") if s.strip())


def _cmd_forge(args: argparse.Namespace) -> int:
    config = ForgeConfig(seed=args.seed, n_subjects=args.subjects,
                         write_asset_placeholders=not args.no_placeholders)
    manifest = forge_corpus(config, args.out)
    n_adm = sum(len(a) for a in manifest.admissions.values())
    print(f"forged {len(manifest.admissions)} subjects, {n_adm} admissions, "
          f"{len(manifest.notes)} notes -> {args.out}")
    return 0


def _cmd_load_check(args: argparse.Namespace) -> int:
    snapshot = load_snapshot(args.root,
                             max_reject_fraction=args.max_reject_fraction)
    for name in sorted(snapshot.tables):
        print(f"{name}: {len(snapshot.table(name))} rows")
    print(f"rejects: {len(snapshot.rejects)}")
    for r in snapshot.rejects[:20]:
        print(f"  {r.table} row {r.row} column {r.column}: {r.reason}")
    if args.out:
        write_rejects_csv(snapshot, args.out)
        print(f"reject report -> {args.out}")
    return 0


def _cmd_search(args: argparse.Namespace) -> int:
    snapshot = load_snapshot(args.root)
    if args.all_subjects:
        spec = CohortSpec(mode=MODE_ALL)
    else:
        names = _split_csv(args.names)
        spec = CohortSpec(
            mode=MODE_ICD, icd_version=args.icd_version,
            code_patterns=_split_csv(args.codes),
            disease_name_substrings=names,
            match_on="name" if names and not args.codes else "code")
    spec.validate()
    cohort = search(snapshot, spec)
    print(f"members: {len(cohort.members)} "
          f"({len(cohort.subject_ids)} subjects)")
    matched = sorted({c for cs in cohort.matched_codes.values() for c in cs})
    if matched:
        print(f"matched codes: {', '.join(matched)}")
    stats = cohort_stats(cohort, snapshot)
    for modality in sorted(stats["modalities"]):
        s = stats["modalities"][modality]
        print(f"{modality}: coverage {s['coverage']:.2f}, "
              f"records {s['total_records']}")
    if args.out:
        cohort.write_csv(args.out)
        print(f"cohort -> {args.out}")
    return 0


def _cmd_sectionize(args: argparse.Namespace) -> int:
    snapshot = load_snapshot(args.root)
    cohort = search(snapshot, CohortSpec(mode=MODE_ALL))
    matcher = compile_lexicon(load_lexicon(args.lexicon)) if args.lexicon \
        else compile_lexicon()
    frame = sectionize_table(snapshot, cohort, note_type_filter=args.note_type,
                             matcher=matcher)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(args.out, index=False, lineterminator="\r\n")
    print(f"{len(frame)} sections from "
          f"{frame['note_id'].nunique() if len(frame) else 0} notes -> {args.out}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    if args.config:
        config = read_config_json(args.config)
    else:
        if not (args.root and args.out):
            print("run needs --config or both --root and --out", file=sys.stderr)
            return 2
        config = RunConfig(root=args.root, out_dir=args.out,
                           cohort=CohortSpec(mode=MODE_ALL))
    if args.root:
        config = _replace(config, root=args.root)
    if args.out:
        config = _replace(config, out_dir=args.out)
    plan = config.plan
    if args.granularity:
        plan = _replace_plan(plan, granularity=args.granularity)
    if args.percentile_k:
        plan = _replace_plan(plan, percentile_k=args.percentile_k)
    config = _replace(config, plan=plan, embed=config.embed or args.embed)
    report = run_pipeline(config)
    print(f"status: {report.status}")
    print(f"rows: {report.rows}, columns: {report.columns}")
    print(f"members: {report.member_count}, sections: {report.section_count}")
    print(f"dropped rows: {report.dropped_rows}, "
          f"unanchored: {report.unanchored_records}")
    for stage, seconds in report.stage_seconds.items():
        print(f"  {stage}: {seconds:.3f}s")
    print(f"artifacts -> {report.out_dir}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app
    app = create_app(workspace=args.out)
    if args.root:
        snapshot = load_snapshot(args.root)
        app.state.ehrfuse["snapshot"] = snapshot
        print(f"loaded snapshot from {args.root}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _replace(config: RunConfig, **kw) -> RunConfig:
    return replace(config, **kw)


def _replace_plan(plan: AlignmentPlan, **kw) -> AlignmentPlan:
    return replace(plan, **kw)


_COMMANDS = {
    "forge": _cmd_forge,
    "load-check": _cmd_load_check,
    "search": _cmd_search,
    "sectionize": _cmd_sectionize,
    "run": _cmd_run,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
