"""Command-line interface.

Subcommands cover the whole workflow: `synthgen` writes a synthetic world as
an ingestible sequence directory, `pretrain` / `selftrain` / `label` run the
pipeline stages into a working directory, `evaluate` scores a label file,
`study` reruns the desk-scale experiments, and `serve` starts the annotation
service. Every command writes a manifest recording the config hash, the
seeds, and the artifact paths; nothing records wall-clock time, so reruns
are byte-stable. Failures exit nonzero after printing a one-line JSON error
record to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import httpx

from . import benchmarks
from .active import ACQUISITIONS
from .core import Box, LabelEntry, LabelSet
from .engine import (
    BUDGET_POLICIES,
    MANIFEST_FORMAT,
    PipelineConfig,
    StageError,
    _canonical,
    _write_atomic,
    acquisition_study,
    benchmark_pipeline_config,
    component_swap_study,
    embedding_shift_config,
    interpolation_study,
    run_pipeline,
    zero_shift_config,
)
from .hier_solver import pseudo_label
from .metrics import evaluate
from .mot_io import load_sequence, read_labels, save_sequence, write_labels
from .oracle_client import ServiceError, SessionClient
from .synthgen import WorldConfig, generate

DATA_ROOT_ENV = "TRACKLABELER_DATA_ROOT"

_BENCHMARKS = {
    "standard": benchmarks.standard_benchmark,
    "jittered": benchmarks.refine_benchmark,
    "noise-free": benchmarks.noise_free_benchmark,
    "random-walk": benchmarks.random_walk_benchmark,
}


class CliError(Exception):
    def __init__(self, code: str, message: str, exit_code: int = 1):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit; route through the record path
        raise CliError("usage", message, exit_code=2)


def _hash_of(data) -> str:
    return hashlib.sha256(_canonical(data).encode()).hexdigest()


def _write_manifest(path: Path, command: str, config, seeds: dict, artifacts: dict) -> None:
    manifest = {
        "format": MANIFEST_FORMAT,
        "command": command,
        "config": config,
        "config_hash": _hash_of(config),
        "seeds": seeds,
        "artifacts": artifacts,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _pipeline_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
        config = PipelineConfig.from_dict(data)
    elif getattr(args, "preset", None):
        spec = _BENCHMARKS[args.preset]()
        config = benchmark_pipeline_config(
            spec, seed=args.seed if args.seed is not None else benchmarks.SEEDS[0]
        )
    else:
        raise CliError("usage", "give --config FILE or --preset NAME", exit_code=2)
    overrides = {}
    for name in ("budget", "policy", "acquisition"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "seed", None) is not None and getattr(args, "config", None):
        overrides["seed"] = args.seed
    return dataclasses.replace(config, **overrides) if overrides else config


def _add_pipeline_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="pipeline config JSON file")
    sub.add_argument("--preset", choices=sorted(_BENCHMARKS),
                     help="use a frozen benchmark instead of --config")
    sub.add_argument("--seed", type=int, default=None,
                     help="benchmark seed (with --preset) or pipeline seed override")
    sub.add_argument("--workdir", required=True, help="artifact directory")


# -- commands ----------------------------------------------------------------


def cmd_synthgen(args) -> int:
    world = WorldConfig.from_dict(json.loads(Path(args.config).read_text()))
    seq = generate(world)
    out = Path(args.out)
    save_sequence(seq, out)
    _write_manifest(
        out / "manifest.json", "synthgen", world.to_dict(),
        seeds={"world": world.seed},
        artifacts={name: name for name in
                   ("seqinfo.ini", "det.txt", "gt.txt", "embeddings.bin")},
    )
    print(f"wrote {seq.seq_id}: {seq.frame_count} frames, "
          f"{len(seq.detections)} detections -> {out}")
    return 0


def cmd_pretrain(args) -> int:
    config = _pipeline_config(args)
    run_pipeline(config, workdir=args.workdir, stop_after="pretrain")
    print(f"pretrained scorer -> {Path(args.workdir) / 'pretrained.params'}")
    return 0


def cmd_selftrain(args) -> int:
    config = _pipeline_config(args)
    result = run_pipeline(config, workdir=args.workdir, stop_after="self-train")
    labels, _ = pseudo_label(
        result.target, result.adapted, config.hier,
        min_conf=config.admission_threshold,
    )
    wd = Path(args.workdir)
    write_labels(labels, wd / "pseudo-labels.txt")
    result.manifest["artifacts"]["pseudo_labels"] = "pseudo-labels.txt"
    _write_atomic(wd / "manifest.json",
                  json.dumps(result.manifest, indent=2, sort_keys=True) + "\n")
    print(f"adapted scorer -> {wd / 'adapted.params'}")
    print(f"pseudo-labels  -> {wd / 'pseudo-labels.txt'} ({len(labels.entries)} boxes)")
    return 0


def _remote_label(args, config: PipelineConfig) -> int:
    if not args.service_url:
        raise CliError("usage", "--annotator remote needs --service-url", exit_code=2)
    wd = Path(args.workdir)
    wd.mkdir(parents=True, exist_ok=True)
    client = httpx.Client(base_url=args.service_url, timeout=30.0)
    api = SessionClient(client)
    session_id = args.session_id or config.config_hash()[:12]
    try:
        status = api.create(config.to_dict(), session_id=session_id)
    except ServiceError as exc:
        if exc.status_code != 409:
            raise
        status = api.status(session_id)  # attach to the existing session
    polls = 0
    while not status["complete"]:
        polls += 1
        if args.max_polls and polls > args.max_polls:
            raise CliError("remote-timeout",
                           f"session {session_id} still incomplete after "
                           f"{args.max_polls} polls")
        time.sleep(args.poll_interval)
        status = api.status(session_id)

    payload = api.labels(session_id)
    labels = LabelSet(
        seq_id=payload["seq_id"],
        entries=tuple(
            LabelEntry(frame=e["frame"], track_id=e["track_id"], box=Box(*e["box"]),
                       provenance=e["provenance"], score=e["score"])
            for e in payload["entries"]
        ),
    )
    write_labels(labels, wd / "labels.txt")
    artifacts = {"labels": "labels.txt"}
    if status.get("gt_available"):
        metrics = api.metrics(session_id)
        _write_atomic(wd / "metrics.json",
                      json.dumps(metrics, indent=2, sort_keys=True) + "\n")
        artifacts["metrics"] = "metrics.json"
        print(f"label       HOTA {metrics['hota']['hota']:.4f}")
    _write_manifest(
        wd / "manifest.json", "label-remote", config.to_dict(),
        seeds={"pipeline": config.seed, "source_world": config.source.seed,
               "session": session_id},
        artifacts=artifacts,
    )
    print(f"remote session {session_id}: "
          f"{status['budget']['spent_total']} clicks spent, "
          f"labels -> {wd / 'labels.txt'}")
    return 0


def cmd_label(args) -> int:
    config = _pipeline_config(args)
    if args.annotator == "remote":
        return _remote_label(args, config)
    result = run_pipeline(config, workdir=args.workdir, stop_after="evaluate")
    for line in result.summary_lines():
        print(line)
    led = result.run.ledger if result.run is not None else None
    if led is not None:
        print(f"clicks spent {led.spent_total} of budget {led.total}")
    print(f"labels -> {Path(args.workdir) / 'labels.txt'}")
    return 0


def _labels_from(path_str: str) -> LabelSet:
    path = Path(path_str)
    if path.is_dir():
        gt = load_sequence(path).ground_truth
        if gt is None:
            raise CliError("no-ground-truth", f"{path} has no gt.txt")
        return gt
    return read_labels(path)


def cmd_evaluate(args) -> int:
    gt = _labels_from(args.gt)
    pred = _labels_from(args.labels)
    report = evaluate(gt, pred)
    print(report.summary())

    labels_path = Path(args.labels)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        metrics_path, manifest_path = out / "metrics.json", out / "manifest.json"
    else:
        base = labels_path if labels_path.is_file() else labels_path / "gt.txt"
        metrics_path = base.with_suffix(base.suffix + ".metrics.json")
        manifest_path = base.with_suffix(base.suffix + ".manifest.json")
    _write_atomic(metrics_path,
                  json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    _write_manifest(
        manifest_path, "evaluate",
        {"gt": str(args.gt), "labels": str(args.labels)},
        seeds={}, artifacts={"metrics": metrics_path.name},
    )
    return 0


def _study_out(args, name: str, config, seeds: dict, rows) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_atomic(out / f"{name}.json",
                  json.dumps(rows, indent=2, sort_keys=True) + "\n")
    _write_manifest(out / "manifest.json", f"study-{name}", config,
                    seeds=seeds, artifacts={"rows": f"{name}.json"})


def cmd_study_fig5(args) -> int:
    spec = _BENCHMARKS[args.benchmark]()
    rows = acquisition_study(spec, fractions=args.fractions,
                             acquisitions=args.acquisitions, seeds=args.seeds)
    print(f"{'fraction':>8}  {'acquisition':<12} {'mean HOTA':>9}")
    for row in rows:
        print(f"{row['fraction']:>8.2f}  {row['acquisition']:<12} {row['mean_hota']:>9.4f}")
    config = {"benchmark": spec.name, "fractions": list(args.fractions),
              "acquisitions": list(args.acquisitions)}
    _study_out(args, "fig5", config, {"seeds": list(args.seeds)}, rows)
    return 0


def cmd_study_interp(args) -> int:
    spec = _BENCHMARKS[args.benchmark]()
    rows = interpolation_study(spec, ratios=args.ratios, seeds=args.seeds)
    print(f"{'keep_ratio':>10} {'mean HOTA':>9}")
    for row in rows:
        print(f"{row['keep_ratio']:>10.2f} {row['mean_hota']:>9.4f}")
    config = {"benchmark": spec.name, "ratios": list(args.ratios)}
    _study_out(args, "interp", config, {"seeds": list(args.seeds)}, rows)
    return 0


def cmd_study_swap(args) -> int:
    if args.config:
        config = PipelineConfig.from_dict(json.loads(Path(args.config).read_text()))
    elif args.fixture == "zero-shift":
        config = zero_shift_config(args.seed)
    else:
        config = embedding_shift_config(args.seed)
    report = component_swap_study(config)
    for line in report.bars():
        print(line)
    for component, delta in report.forward.items():
        print(f"forward {component:<11} {delta:+.4f}")
    _study_out(args, "swap", config.to_dict(),
               {"source_world": config.source.seed}, report.to_dict())
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    data_root = Path(args.data_root)
    data_root.mkdir(parents=True, exist_ok=True)
    _write_manifest(
        data_root / "service-manifest.json", "serve",
        {"host": args.host, "port": args.port, "data_root": str(data_root)},
        seeds={}, artifacts={"sessions": "sessions"},
    )
    print(f"serving on http://{args.host}:{args.port} (data root {data_root})")
    serve(host=args.host, port=args.port, data_root=data_root)
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tracklabeler",
                     description="label engine for multi-object tracking")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("synthgen", help="generate a synthetic sequence")
    p.add_argument("--config", required=True, help="world config JSON file")
    p.add_argument("--out", required=True, help="output sequence directory")
    p.set_defaults(func=cmd_synthgen)

    p = subs.add_parser("pretrain", help="train the scorer on the source world")
    _add_pipeline_args(p)
    p.set_defaults(func=cmd_pretrain)

    p = subs.add_parser("selftrain", help="adapt the scorer on the target")
    _add_pipeline_args(p)
    p.set_defaults(func=cmd_selftrain)

    p = subs.add_parser("label", help="budgeted active labeling")
    _add_pipeline_args(p)
    p.add_argument("--budget", type=int, default=None, help="click budget override")
    p.add_argument("--policy", choices=BUDGET_POLICIES, default=None)
    p.add_argument("--acquisition", choices=ACQUISITIONS, default=None)
    p.add_argument("--annotator", choices=("oracle", "remote"), default="oracle")
    p.add_argument("--service-url", default=None, help="annotation service base URL")
    p.add_argument("--session-id", default=None, help="remote session to create or attach")
    p.add_argument("--poll-interval", type=float, default=2.0)
    p.add_argument("--max-polls", type=int, default=0, help="0 waits forever")
    p.set_defaults(func=cmd_label)

    p = subs.add_parser("evaluate", help="score labels against ground truth")
    p.add_argument("--gt", required=True, help="GT label file or sequence directory")
    p.add_argument("--labels", required=True, help="label file to score")
    p.add_argument("--out", default=None, help="directory for metrics + manifest")
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("study", help="desk-scale experiments")
    studies = p.add_subparsers(dest="study", required=True, parser_class=_Parser)

    s = studies.add_parser("fig5", help="budget sweep per acquisition strategy")
    s.add_argument("--benchmark", choices=sorted(_BENCHMARKS), default="standard")
    s.add_argument("--fractions", type=float, nargs="+",
                   default=[0.02, 0.05, 0.10, 0.20])
    s.add_argument("--acquisitions", nargs="+", choices=ACQUISITIONS,
                   default=list(ACQUISITIONS))
    s.add_argument("--seeds", type=int, nargs="+", default=list(benchmarks.SEEDS))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_study_fig5)

    s = studies.add_parser("interp", help="keep-ratio interpolation ceiling")
    s.add_argument("--benchmark", choices=sorted(_BENCHMARKS), default="random-walk")
    s.add_argument("--ratios", type=float, nargs="+",
                   default=[1.0, 0.5, 0.2, 0.1, 0.05])
    s.add_argument("--seeds", type=int, nargs="+", default=list(benchmarks.SEEDS))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_study_interp)

    s = studies.add_parser("swap", help="component exchange bars")
    s.add_argument("--fixture", choices=("embedding-shift", "zero-shift"),
                   default="embedding-shift")
    s.add_argument("--config", default=None, help="pipeline config JSON file")
    s.add_argument("--seed", type=int, default=benchmarks.SEEDS[0])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_study_swap)

    p = subs.add_parser("serve", help="run the annotation service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--data-root",
                   default=os.environ.get(DATA_ROOT_ENV, "."),
                   help=f"session storage root (or ${DATA_ROOT_ENV})")
    p.set_defaults(func=cmd_serve)

    return parser


def _error_record(code: str, message: str) -> str:
    return json.dumps({"error": {"code": code, "message": message}}, sort_keys=True)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(_error_record(exc.code, str(exc)), file=sys.stderr)
        return exc.exit_code
    except StageError as exc:
        print(_error_record(f"stage-{exc.stage}", str(exc)), file=sys.stderr)
        return 1
    except ServiceError as exc:
        print(_error_record("service", str(exc)), file=sys.stderr)
        return 1
    except Exception as exc:  # contract: nonzero exit always carries a record
        print(_error_record(type(exc).__name__, str(exc)), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
