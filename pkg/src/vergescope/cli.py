"""Command-line interface: simulate | preprocess | fit | analyze | estimate | report.

Every subcommand is a deterministic function of its inputs, flags, and seed;
failures exit nonzero with a one-line JSON error object on stderr. The
VERGESCOPE_SEED environment variable overrides --seed when set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import dataio
from .analysis import run_analysis
from .calibration import GvaObservation, estimate_depth, fit_participants
from .errors import VergescopeError
from .pipeline import FixationConfig, PipelineConfig, preprocess_dataset
from .recording import GazeSeries
from .report import render_analysis
from .synth import CohortConfig, ExperimentDesign, simulate_cohort


def _effective_seed(args) -> int:
    env = os.environ.get("VERGESCOPE_SEED")
    if env is not None:
        return int(env)
    return args.seed


def _cmd_simulate(args) -> int:
    design = ExperimentDesign()
    cohort = CohortConfig()
    if args.design:
        with open(args.design, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if "design" in doc:
            design = ExperimentDesign.from_dict(doc["design"])
        if "cohort" in doc:
            cohort = CohortConfig.from_dict(doc["cohort"])
    seed = _effective_seed(args)
    dataset = simulate_cohort(design, cohort, seed)
    dataio.write_dataset(args.out, dataset)
    print(f"wrote {len(dataset.trials)} trials for {design.n_participants} participants to {args.out}")
    return 0


def _cmd_preprocess(args) -> int:
    trials = dataio.load_dataset_trials(args.indir)
    config = PipelineConfig(
        confidence_threshold=args.confidence,
        max_velocity_deg_s=args.max_velocity,
        outlier_k_sd=args.sd_k,
        outlier_scope=args.sd_scope,
        fixation=FixationConfig(),
    )
    processed, validity = preprocess_dataset(trials, config, threads=args.threads)
    outdir = args.out or args.indir
    os.makedirs(outdir, exist_ok=True)
    table_path = os.path.join(outdir, "gva_table.csv")
    report_path = os.path.join(outdir, "validity_report.json")
    dataio.write_gva_table_csv(table_path, processed)
    dataio.write_json(report_path, validity.to_dict())
    print(
        f"{validity.n_valid_trials}/{validity.n_trials} valid trials, "
        f"{validity.percent_excluded:.2f}% samples excluded -> {table_path}"
    )
    return 0


def _observations(rows):
    return [
        GvaObservation(r.participant_id, r.environment, r.end_depth_d, r.gva_mean_deg)
        for r in rows
        if r.valid and r.gva_mean_deg is not None
    ]


def _cmd_fit(args) -> int:
    rows = dataio.parse_gva_table_csv(args.gva_table)
    cells_rows = [r for r in rows if r.valid]
    if not cells_rows:
        raise VergescopeError("no valid trials in the table")
    from .analysis import condition_means

    cells = condition_means(cells_rows)
    models = fit_participants(
        [GvaObservation(c.participant_id, c.environment, c.end_depth_d, c.gva_deg) for c in cells],
        by_environment=args.per_environment,
    )
    dataio.write_models_json(args.out, models)
    print(f"fitted {len(models)} model(s) -> {args.out}")
    return 0


def _cmd_analyze(args) -> int:
    rows = dataio.parse_gva_table_csv(args.gva_table)
    models = dataio.load_models_json(args.models) if args.models else None
    subjective = dataio.parse_subjective_csv(args.subjective) if args.logratio else None
    if args.logratio and not args.subjective:
        raise VergescopeError("--logratio requires --subjective <csv>")
    report = run_analysis(
        rows,
        models=models,
        include_normalized=args.normalized,
        include_stability=args.stability,
        subjective=subjective,
        criterion=args.criterion,
        alpha=args.alpha,
        min_valid_trials_per_pair=args.min_pair_trials,
        min_valid_pairs_per_environment=args.min_env_pairs,
        required_valid_environments=args.min_environments,
    )
    dataio.write_json(args.out, report)
    print(f"analysis report -> {args.out}")
    return 0


def _cmd_estimate(args) -> int:
    models = dataio.load_models_json(args.model)
    if args.participant:
        if args.participant not in models:
            raise VergescopeError(f"no model for participant {args.participant!r}")
        model = models[args.participant]
    elif len(models) == 1:
        model = next(iter(models.values()))
    else:
        raise VergescopeError(f"model file holds {len(models)} models; pass --participant")

    header = ",".join(dataio.GAZE_CSV_HEADER)
    last_valid: tuple[float, float] | None = None
    out = sys.stdout
    for raw in sys.stdin:
        line = raw.strip()
        if not line or line == header:
            continue
        fields = line.split(",")
        if len(fields) != len(dataio.GAZE_CSV_HEADER):
            raise VergescopeError(f"expected {len(dataio.GAZE_CSV_HEADER)} fields, got {len(fields)}")
        values = [float(v) for v in fields]
        t = values[0]
        conf = min(values[1], values[2])
        if conf < args.confidence:
            continue
        series = GazeSeries(
            t_s=[t],
            l_origin=[values[3:6]],
            l_dir=[values[6:9]],
            r_origin=[values[9:12]],
            r_dir=[values[12:15]],
            l_conf=[values[1]],
            r_conf=[values[2]],
        )
        gva = float(series.gva_deg[0])
        if gva != gva:  # NaN vectors: unusable sample
            continue
        if last_valid is not None:
            t0, g0 = last_valid
            if t > t0 and abs((gva - g0) / (t - t0)) > args.max_velocity:
                continue
        last_valid = (t, gva)
        try:
            _, meters = estimate_depth(gva, model)
        except VergescopeError:
            meters = float("nan")
        out.write(f"{t!r},{gva!r},{meters!r}\n")
        if args.stream:
            out.flush()
    return 0


def _cmd_report(args) -> int:
    with open(args.analysis, "r", encoding="utf-8") as fh:
        analysis = json.load(fh)
    written = render_analysis(analysis, args.out)
    print(f"wrote {len(written)} file(s) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vergescope",
        description="Depth from binocular gaze vergence: simulation, cleaning, calibration, analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic cohort dataset")
    p.add_argument("--design", help="JSON file with 'design' and optional 'cohort' blocks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("preprocess", help="clean a dataset into a per-trial table")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--confidence", type=float, default=0.75)
    p.add_argument("--max-velocity", type=float, default=5000.0)
    p.add_argument("--sd-k", type=float, default=2.5)
    p.add_argument("--sd-scope", choices=["session", "trial"], default="session")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("fit", help="fit per-participant calibration models")
    p.add_argument("--gva-table", required=True)
    p.add_argument("--per-environment", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("analyze", help="run the regression analyses over a table")
    p.add_argument("--gva-table", required=True)
    p.add_argument("--models", default=None)
    p.add_argument("--normalized", action="store_true")
    p.add_argument("--stability", action="store_true")
    p.add_argument("--logratio", action="store_true")
    p.add_argument("--subjective", default=None)
    p.add_argument("--criterion", choices=["f_test", "aic"], default="f_test")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--min-pair-trials", type=int, default=3, help="valid trials required per depth pair")
    p.add_argument("--min-env-pairs", type=int, default=6, help="valid pairs required per environment")
    p.add_argument("--min-environments", type=int, default=3, help="valid environments required per participant")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("estimate", help="stream depth estimates for gaze rows on stdin")
    p.add_argument("--model", required=True)
    p.add_argument("--participant", default=None)
    p.add_argument("--stream", action="store_true", help="flush after every output line")
    p.add_argument("--confidence", type=float, default=0.75)
    p.add_argument("--max-velocity", type=float, default=5000.0)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("report", help="render SVG plots and text tables from an analysis")
    p.add_argument("--analysis", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VergescopeError as exc:
        sys.stderr.write(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}) + "\n")
        return 2
    except (OSError, ValueError, KeyError) as exc:
        sys.stderr.write(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}) + "\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
