"""Command-line interface.

Subcommands run the pipeline up to (and including) the named stage; the
digest-keyed cache makes the shared prefix free on reruns. Configuration
comes from an optional key=value file, and every key is also exposed as a
command-line flag that overrides the file.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

from .pipeline import (
    ConfigError,
    EvalReport,
    Pipeline,
    PipelineConfig,
    ablation_run,
    run_pipeline,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

_STAGE_COMMANDS = {
    "search": "search",
    "collect": "collect",
    "train-gae": "condition",
    "train-pae": "pae",
    "train-gldm": "gldm",
    "sample": "sample",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gnngen",
        description="GNN parameter generation via graph-conditioned latent diffusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = list(_STAGE_COMMANDS) + ["evaluate", "pipeline", "ablate", "report"]
    for name in commands:
        p = sub.add_parser(name, help=f"run the {name} stage" if name in _STAGE_COMMANDS else None)
        p.add_argument("--config", help="key=value configuration file")
        for f in fields(PipelineConfig):
            flag = "--" + f.name.replace("_", "-")
            p.add_argument(flag, dest=f.name, default=None, metavar=f.type.upper())
        if name in ("pipeline", "evaluate", "report", "ablate"):
            p.add_argument("--out", default=None, help="report output directory")
    return parser


def _load_config(args) -> PipelineConfig:
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(PipelineConfig)
        if getattr(args, f.name, None) is not None
    }
    if args.config:
        return PipelineConfig.from_file(args.config, overrides)
    return PipelineConfig.from_mapping(overrides)


def _run_until(config: PipelineConfig, stage: str) -> None:
    pipe = Pipeline(config)
    graph, graph_key = pipe.build_graph()
    best, search_key, wall = pipe.search_stage(graph, graph_key)
    print(f"search: best config digest {best.digest()} ({wall:.2f}s)")
    if stage == "search":
        return
    ckpts, corpus_key, wall = pipe.corpus_stage(graph, best, search_key)
    print(f"collect: {len(ckpts)} checkpoints of size {ckpts.layout.total} ({wall:.2f}s)")
    if stage == "collect":
        return
    pae, latents, pae_key, wall = pipe.pae_stage(ckpts.matrix(), corpus_key)
    print(f"pae: D_w={pae.config.d_w} stride={pae.config.stride} D_p={pae.d_p} ({wall:.2f}s)")
    if stage == "pae":
        return
    condition, condition_key, wall = pipe.condition_stage(graph, pae.d_p, corpus_key)
    print(f"condition: mode={config.condition_mode} length={condition.size} ({wall:.2f}s)")
    if stage == "condition":
        return
    model, gldm_key, wall = pipe.gldm_stage(latents, condition, pae_key, condition_key)
    print(f"gldm: {config.gldm_epochs} epochs over {latents.latents.shape[0]} latents ({wall:.2f}s)")
    if stage == "gldm":
        return
    z, _key, wall = pipe.sample_stage(model, condition, gldm_key)
    print(f"sample: {z.shape[0]} latents of length {z.shape[1]} ({wall:.2f}s)")


def _report_paths(config: PipelineConfig, out: str | None) -> Path:
    return Path(out) if out else Path(config.workdir) / "report"


def _write_reports(config: PipelineConfig, report: EvalReport, out: str | None) -> None:
    from . import reports

    outdir = _report_paths(config, out)
    paths = reports.write_all(outdir, report)
    (outdir / "report.json").write_text(
        json.dumps(asdict(report), sort_keys=True, default=float)
    )
    for path in paths:
        print(f"wrote {path}")


def _cmd_pipeline(config: PipelineConfig, out: str | None) -> int:
    report = run_pipeline(config)
    if report.failed_stage:
        print(f"stage failure: {report.failed_stage}", file=sys.stderr)
        _write_reports(config, report, out)
        return EXIT_STAGE
    _write_reports(config, report, out)
    best = report.comparison[-3] if len(report.comparison) >= 3 else None
    print(f"selected sample {report.selected_index}: test accuracy {report.selected_test:.4f}")
    return EXIT_OK


def _cmd_ablate(config: PipelineConfig, out: str | None) -> int:
    results = ablation_run(config)
    outdir = _report_paths(config, out)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = ["mode,round,val_accuracy,test_accuracy"]
    for mode, entry in results.items():
        for row in entry["rounds"]:
            lines.append(f"{mode},{row['round']},{row['val']!r},{row['test']!r}")
    (outdir / "ablation.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {outdir / 'ablation.csv'}")
    for mode, entry in results.items():
        print(f"{mode}: best test {entry['best_test']:.4f}")
    return EXIT_OK


def _cmd_report(config: PipelineConfig, out: str | None) -> int:
    outdir = _report_paths(config, out)
    source = outdir / "report.json"
    if not source.is_file():
        print(f"no stored report at {source}; run the pipeline first", file=sys.stderr)
        return EXIT_CONFIG
    data = json.loads(source.read_text())
    report = EvalReport(**data)
    from . import reports

    for path in reports.write_all(outdir, report):
        print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command in _STAGE_COMMANDS:
            _run_until(config, _STAGE_COMMANDS[args.command])
            return EXIT_OK
        if args.command in ("pipeline", "evaluate"):
            return _cmd_pipeline(config, args.out)
        if args.command == "ablate":
            return _cmd_ablate(config, args.out)
        return _cmd_report(config, args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
