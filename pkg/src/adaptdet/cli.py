"""Command-line entry point: profile, fit, simulate, report, stress.

Exit codes: 0 ok, 2 bad or missing input, 3 a model failed to fit,
4 models required but absent, 5 no usable runs to report.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .errors import AdaptDetError, ParameterError
from .fitting import FitError, ModelBundle, bundle_exists, fit_bundle
from .profiler import SamplingPlan, build_offline_log, collect_profiles, read_profiles_csv, \
    write_profiles_csv
from .scenario import Scenario, bundled_scenarios, data_path
from .simulate import write_decisions_csv, write_frames_csv, write_metrics_json
from .world import WorldModelConfig

EXIT_OK, EXIT_INPUT, EXIT_FIT, EXIT_MODELS, EXIT_NO_RUNS = 0, 2, 3, 4, 5
REPORT_COLUMNS = ("scenario", "policy", "mean_latency_ms", "p95_latency_ms", "violation_rate",
                  "mean_accuracy", "switches")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read_json(path: Path, what: str):
    if not path.exists():
        raise CliError(EXIT_INPUT, f"{what} not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_INPUT, f"{what} {path}: malformed JSON at line {exc.lineno}, "
                                   f"column {exc.colno}: {exc.msg}") from None


def _load(path, what, default_name, loader):
    p = Path(path) if path else data_path(default_name)
    doc = _read_json(p, what)
    try:
        return loader(doc), p
    except (AdaptDetError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_INPUT, f"{what} {p}: {exc}") from None


@contextmanager
def _output_dir(out: Path):
    """Yield a staging directory that replaces `out` only if the command succeeds."""
    out = out.resolve()
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    if out.exists():
        for item in stage.iterdir():
            target = out / item.name
            if target.is_dir():
                shutil.rmtree(target)
            os.replace(item, target)
        stage.rmdir()
    else:
        os.replace(stage, out)


def _manifest(stage: Path, command: str, inputs: dict, out: Path, seed) -> None:
    doc = {"subcommand": command, "inputs": {k: str(v) for k, v in inputs.items()},
           "output_dir": str(out), "seed": seed, "version": __version__,
           "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}
    (stage / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n")


def cmd_profile(args) -> int:
    plan, plan_path = _load(args.plan, "sampling plan", "plan_default.json", SamplingPlan.from_dict)
    world, world_path = _load(args.world, "world model", "world_default.json",
                              WorldModelConfig.from_dict)
    if args.seed is not None:
        plan = SamplingPlan.from_dict({**plan.to_dict(), "seed": args.seed})
    records = collect_profiles(plan, world)
    out = Path(args.out)
    with _output_dir(out) as stage:
        _manifest(stage, "profile", {"plan": plan_path, "world": world_path}, out, plan.seed)
        write_profiles_csv(records, stage / "profiles.csv")
        build_offline_log(records).write_csv(stage / "offline_log.csv")
    print(f"wrote {len(records)} profile records to {out / 'profiles.csv'}")
    return EXIT_OK


def cmd_fit(args) -> int:
    path = Path(args.profiles)
    if not path.exists():
        raise CliError(EXIT_INPUT, f"profiles not found: {path}")
    try:
        records = read_profiles_csv(path)
    except (ParameterError, KeyError, ValueError) as exc:
        raise CliError(EXIT_FIT, f"profiles: {exc}") from None
    try:
        bundle = fit_bundle(records, seed=args.seed, train_fraction=args.train_fraction)
    except FitError as exc:
        raise CliError(EXIT_FIT, f"fit failed for model {exc.model}: {exc}") from None
    except ParameterError as exc:
        raise CliError(EXIT_FIT, f"fit failed: {exc}") from None
    out = Path(args.out)
    with _output_dir(out) as stage:
        _manifest(stage, "fit", {"profiles": path}, out, args.seed)
        bundle.save(stage)
    for name, entry in sorted(bundle.report["models"].items()):
        score = ("rmse", "baseline_rmse") if "rmse" in entry else ("mse", "baseline_mse")
        vals = [entry.get(k) for k in score]
        shown = " / ".join("n/a" if v is None else f"{v:.4g}" for v in vals)
        print(f"{name:34s} {score[0]}/{score[1]}: {shown}")
    return EXIT_OK


def _scenario_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    bundled = bundled_scenarios()
    if name in bundled:
        return bundled[name]
    raise CliError(EXIT_INPUT, f"scenario not found: {name} (bundled: {', '.join(bundled)})")


def cmd_simulate(args) -> int:
    spath = _scenario_path(args.scenario)
    scenario, _ = _load(spath, "scenario", None, lambda d: Scenario.from_dict(d, spath.parent))
    world, world_path = _load(args.world, "world model", "world_default.json",
                              WorldModelConfig.from_dict)
    models = None
    if args.models and bundle_exists(args.models):
        try:
            models = ModelBundle.load(args.models)
        except (AdaptDetError, KeyError, ValueError, json.JSONDecodeError) as exc:
            raise CliError(EXIT_MODELS, f"models in {args.models} unreadable: {exc}") from None
    if models is None and scenario.needs_models():
        raise CliError(EXIT_MODELS, "adaptive policy needs fitted models; run `fit` and pass "
                                    "--models")
    seed = scenario.seed if args.seed is None else args.seed
    try:
        results = scenario.run(world, models, seed)
    except ParameterError as exc:
        raise CliError(EXIT_INPUT, f"scenario {spath}: {exc}") from None
    out = Path(args.out)
    with _output_dir(out) as stage:
        _manifest(stage, "simulate", {"scenario": spath, "models": args.models or "",
                                      "world": world_path}, out, seed)
        write_metrics_json(results, stage / "metrics.json", scenario.name)
        write_frames_csv(results, stage / "frames.csv")
        write_decisions_csv(results, stage / "decisions.csv")
    for r in results:
        m = r.report
        print(f"{scenario.name} {m.policy}: mean {m.mean_latency_ms:.1f} ms, p95 "
              f"{m.p95_latency_ms:.1f} ms, violations {m.violation_rate:.1%}, "
              f"accuracy {m.mean_accuracy:.2f}, switches {m.switches}")
    return EXIT_OK


def collect_report_rows(run_dirs) -> list[dict]:
    rows = []
    for d in run_dirs:
        p = Path(d) / "metrics.json"
        try:
            doc = json.loads(p.read_text())
            for run in doc["runs"]:
                rows.append({"scenario": run.get("scenario") or doc.get("scenario", ""),
                             **{k: run[k] for k in REPORT_COLUMNS[1:]}})
        except (OSError, ValueError, KeyError, TypeError) as exc:
            print(f"warning: skipping {d}: {exc}", file=sys.stderr)
    rows.sort(key=lambda r: (r["scenario"], r["policy"]))
    return rows


def format_table(rows) -> str:
    def cell(k, v):
        if k == "violation_rate":
            return f"{v:.1%}"
        return f"{v:.2f}" if isinstance(v, float) else str(v)

    body = [[cell(k, r[k]) for k in REPORT_COLUMNS] for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(REPORT_COLUMNS)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(REPORT_COLUMNS, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


def cmd_report(args) -> int:
    rows = collect_report_rows(args.runs)
    if not rows:
        raise CliError(EXIT_NO_RUNS, "no valid runs found")
    table = format_table(rows)
    print(table)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def cmd_stress(args) -> int:
    from .stressor import run_stressor

    try:
        report = run_stressor(args.cores, args.mbps, args.seconds)
    except ParameterError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.summary())
    return EXIT_OK


def cmd_defaults(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    shutil.copy(data_path("world_default.json"), out / "world.json")
    shutil.copy(data_path("plan_default.json"), out / "plan.json")
    for name, p in bundled_scenarios().items():
        shutil.copy(p, out / f"{name}.json")
    print(f"wrote default world, plan and scenarios to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adaptdet", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="sample branches and contention against the world model")
    p.add_argument("--plan", help="sampling plan JSON (default: bundled plan)")
    p.add_argument("--world", help="world model JSON (default: bundled world)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the plan seed")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("fit", help="fit latency and accuracy models from profiles.csv")
    p.add_argument("--profiles", required=True, help="profile records CSV")
    p.add_argument("--out", required=True, help="model directory")
    p.add_argument("--seed", type=int, default=0, help="train/validation split seed")
    p.add_argument("--train-fraction", type=float, default=0.9)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="run a scenario frame by frame")
    p.add_argument("--scenario", required=True, help="scenario JSON path or bundled name")
    p.add_argument("--models", help="model directory from `fit`")
    p.add_argument("--world", help="world model JSON (default: bundled world)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="tabulate metrics from simulation runs")
    p.add_argument("runs", nargs="+", help="run directories containing metrics.json")
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("stress", help="occupy cores and hold a memory write bandwidth")
    p.add_argument("--cores", type=int, default=1)
    p.add_argument("--mbps", type=float, required=True)
    p.add_argument("--seconds", type=float, required=True)
    p.add_argument("--json", action="store_true", help="print the full report as JSON")
    p.set_defaults(func=cmd_stress)

    p = sub.add_parser("defaults", help="export the bundled world, plan and scenarios")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_defaults)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
