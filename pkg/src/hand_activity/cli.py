"""``hand-activity`` command line.

stdout carries one JSON document per invocation; diagnostics go to stderr.
Exit codes: 0 success, 2 bad input, 3 pipeline failure at runtime.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .core import ConfigError, HandActivityError, load_config
from .evaluation import (
    PUBLISHED_MATRICES,
    EmptyMatrix,
    MatrixFormatError,
    accuracy,
    compose_throughput,
    effective_reduction,
    fleet_impact,
    per_class_metrics,
    published_matrix,
    read_matrix_csv,
)
from .replay import BackendSpec, Manifest, ManifestError, ScriptError, generate, parse_script, run

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3
CONFIG_ENV = "HAND_ACTIVITY_CONFIG"


class InputError(Exception):
    pass


def _emit(doc) -> None:
    json.dump(doc, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")


def cmd_generate(args) -> int:
    try:
        text = Path(args.script).read_text()
    except OSError as exc:
        raise InputError(str(exc)) from None
    script = parse_script(text, seed=args.seed)
    manifest = generate(script)
    manifest.dump(args.out)
    _emit({"ticks": len(manifest.records), "out": str(args.out)})
    return EXIT_OK


def _config_overrides(args) -> dict:
    return {
        "smoothing_window": args.window,
        "alert_threshold": args.threshold,
        "alert_cooldown": args.cooldown,
        "sync_tolerance_us": args.tolerance_us,
    }


def cmd_run(args) -> int:
    config_path = args.config or os.environ.get(CONFIG_ENV)
    cfg = load_config(config_path, _config_overrides(args))
    try:
        manifest = Manifest.load(args.manifest)
    except OSError as exc:
        raise InputError(str(exc)) from None
    spec = BackendSpec(kind=args.backend, object_error_rate=args.error_rate,
                       location_error_rate=args.error_rate, seed=args.seed)
    if not 0.0 <= args.error_rate <= 1.0:
        raise InputError("--error-rate must lie in [0, 1]")

    events_fh = open(args.events, "w") if args.events else None
    n_events = 0

    def on_event(event) -> None:
        nonlocal n_events
        n_events += 1
        if events_fh is not None:
            events_fh.write(json.dumps(event.to_json(), sort_keys=True) + "\n")
            events_fh.flush()

    try:
        report = run(manifest, cfg, spec, on_event)
    finally:
        if events_fh is not None:
            events_fh.close()
    doc = report.to_json()
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(doc, fh, sort_keys=True)
    _emit(_summary(doc))
    return EXIT_OK


def _summary(doc: dict) -> dict:
    return {
        "ticks": len(doc["ticks"]),
        "accuracy": doc["accuracy"],
        "unknown": doc["unknown"],
        "alerts": len(doc["alerts"]),
        "alert_onsets": [e["onset_tick"] for e in doc["alerts"]],
        "stream_stats": doc["stream_stats"],
        "ticks_per_second": doc.get("timing", {}).get("ticks_per_second"),
    }


def _matrix_doc(m) -> dict:
    return {
        "labels": list(m.labels),
        "total": m.total,
        "accuracy": accuracy(m),
        "per_class": {lab: {"precision": p, "recall": r}
                      for lab, (p, r) in per_class_metrics(m).items()},
    }


def cmd_eval_matrix(args) -> int:
    if args.published:
        m = published_matrix(args.published)
    else:
        try:
            m = read_matrix_csv(args.csv)
        except OSError as exc:
            raise InputError(str(exc)) from None
    _emit(_matrix_doc(m))
    return EXIT_OK


def cmd_throughput(args) -> int:
    try:
        rates = [float(r) for r in args.rates.split(",")]
    except ValueError:
        raise InputError(f"--rates must be comma-separated numbers, got {args.rates!r}") from None
    _emit({"mode": args.mode, "rates": rates, "fps": compose_throughput(rates, args.mode)})
    return EXIT_OK


def cmd_impact(args) -> int:
    fraction = args.fraction
    if fraction is None:
        if args.projected_penetration is None or args.reduction is None:
            raise InputError("give --fraction, or both --projected-penetration and --reduction")
        fraction = effective_reduction(args.projected_penetration, args.reduction)
    penetration, prevented = fleet_impact(args.equipped, args.fleet, fraction, args.accidents)
    _emit({"penetration": penetration, "penetration_percent": round(100 * penetration, 1),
           "fraction": fraction, "prevented": prevented})
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        doc = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(str(exc)) from None
    if doc.get("kind") != "run_report":
        raise InputError("not a run report")
    from .evaluation import ConfusionMatrix

    out = _summary(doc)
    out["tasks"] = {}
    for task, m in doc["confusion"].items():
        cm = ConfusionMatrix(tuple(m["labels"]), m["counts"])
        out["tasks"][task] = _matrix_doc(cm) if cm.total else {"labels": m["labels"], "total": 0}
    out["events"] = doc["alerts"]
    _emit(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hand-activity", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="build a synthetic manifest from a scenario script")
    p.add_argument("--script", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="replay a manifest through the full pipeline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--backend", choices=("scripted", "noisy"), default="scripted")
    p.add_argument("--error-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--events", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--threshold", type=int, default=None)
    p.add_argument("--cooldown", type=int, default=None)
    p.add_argument("--tolerance-us", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval-matrix", help="accuracy and per-class metrics of a confusion matrix")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--csv")
    src.add_argument("--published", choices=PUBLISHED_MATRICES)
    p.set_defaults(func=cmd_eval_matrix)

    p = sub.add_parser("throughput", help="compose per-stage frame rates")
    p.add_argument("--rates", required=True)
    p.add_argument("--mode", choices=("sequential", "pipelined"), default="sequential")
    p.set_defaults(func=cmd_throughput)

    p = sub.add_parser("impact", help="fleet penetration and prevented accidents")
    p.add_argument("--equipped", type=int, default=4_300_000)
    p.add_argument("--fleet", type=int, default=287_000_000)
    p.add_argument("--accidents", type=int, required=True)
    p.add_argument("--fraction", type=float, default=None)
    p.add_argument("--projected-penetration", type=float, default=None)
    p.add_argument("--reduction", type=float, default=None)
    p.set_defaults(func=cmd_impact)

    p = sub.add_parser("report", help="summarize a run report")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ScriptError, ManifestError, ConfigError, MatrixFormatError,
            EmptyMatrix, ValueError) as exc:
        print(f"hand-activity: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except HandActivityError as exc:
        print(f"hand-activity: pipeline failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
