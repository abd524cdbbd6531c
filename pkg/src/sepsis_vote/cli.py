"""Command-line entry point: ``sepsis-vote <subcommand> ...``.

Exit codes: 0 success, 1 data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .codesim import EditCosts, code_similarity_matrix, parse_tree
from .diversity import kappa_distribution, rank_order, similarity_matrix
from .ensemble import (
    FAMILIAR, REGIMES, UNFAMILIAR, RegimeSelector, VoteRule, apply_ensemble,
    build_ensemble, format_spec, parse_spec, select_regime,
)
from .errors import ConfigError, FormatError, SepsisVoteError
from .labeler import DEFAULT_LEAD, LabelTimeline, label_cohort
from .records import (
    VARIABLES, empirical_cdf, read_patients, read_prediction_dir, write_patient, write_predictions,
)
from .synth import SynthConfig, generate_cohort, generate_predictors
from .utility import DEFAULT_PRESET, CohortUtility, UtilityParams

log = logging.getLogger("sepsis_vote")

TIMELINES_FILE = "timelines.psv"
SUMMARY_FILE = "summary.psv"
MANIFEST_FILE = "manifest.json"
_UTILITY_FIELDS = ("dt_early", "dt_optimal", "dt_late", "u_tp_max", "u_fn_min", "u_fp", "u_tn")


class UsageError(Exception):
    pass


# --- shared helpers --------------------------------------------------------

def _opt(value):
    return "" if value is None else str(value)


def _int_or_none(token: str):
    return int(token) if token.strip() else None


def write_label_dir(out: Path, cohort) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rows = ["patient_id|t_suspicion|t_sofa|t_sepsis|included|reason|flag"]
    flagged = set(cohort.flagged)
    for pid, tl in cohort.timelines.items():
        reason = cohort.excluded.get(pid, "")
        flag = "short-terminal-course" if pid in flagged else ""
        rows.append(f"{pid}|{_opt(tl.t_suspicion)}|{_opt(tl.t_sofa)}|{_opt(tl.t_sepsis)}|{int(not reason)}|{reason}|{flag}")
        body = "".join(f"{h}|{x}\n" for h, x in zip(tl.hours, tl.labels))
        (out / f"{pid}.psv").write_text("ICULOS|SepsisLabel\n" + body)
    (out / TIMELINES_FILE).write_text("\n".join(rows) + "\n")
    summary = cohort.summary()
    (out / SUMMARY_FILE).write_text("".join(f"{k}|{v}\n" for k, v in summary.items()))


def read_label_dir(directory, included_only: bool = True) -> dict[str, LabelTimeline]:
    directory = Path(directory)
    index = directory / TIMELINES_FILE
    if not index.exists():
        raise FormatError(f"{index} not found; run the label subcommand first")
    timelines = {}
    for lineno, line in enumerate(index.read_text().splitlines()[1:], start=2):
        fields = line.split("|")
        if len(fields) != 7:
            raise FormatError(f"{TIMELINES_FILE}: expected 7 fields", line=lineno)
        pid, t_susp, t_sofa, t_sepsis, included = fields[:5]
        if included_only and included != "1":
            continue
        rows = (directory / f"{pid}.psv").read_text().splitlines()[1:]
        hours = np.array([int(r.split("|")[0]) for r in rows], dtype=np.int64)
        labels = np.array([int(r.split("|")[1]) for r in rows], dtype=np.int8)
        timelines[pid] = LabelTimeline(_int_or_none(t_susp), _int_or_none(t_sofa), _int_or_none(t_sepsis), labels, hours)
    return timelines


def read_ranking(path) -> dict[str, float]:
    """Ranking scores from a ``score`` output table (``normalized_score`` column)."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    if "algorithm_id" not in header:
        raise FormatError(f"{path}: ranking table needs an algorithm_id column", line=1)
    col = header.index("normalized_score") if "normalized_score" in header else len(header) - 1
    ranking = {}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        try:
            ranking[fields[header.index("algorithm_id")]] = float(fields[col])
        except (IndexError, ValueError) as exc:
            raise FormatError(f"{path}: {exc}", line=lineno) from exc
    return ranking


def resolve_params(args) -> UtilityParams:
    """Flags override the config file, which overrides the named preset."""
    source = args.params or DEFAULT_PRESET
    path = Path(source)
    if path.suffix == ".json" or path.is_file():
        if not path.is_file():
            raise UsageError(f"params file {source} not found")
        config = json.loads(path.read_text())
        params = UtilityParams.preset(config.pop("preset", DEFAULT_PRESET))
        unknown = set(config) - set(params.to_dict())
        if unknown:
            raise ConfigError(f"unknown utility parameters {sorted(unknown)}")
        params = replace(params, **config)
    else:
        params = UtilityParams.preset(source)
    overrides = {k: getattr(args, k) for k in (*_UTILITY_FIELDS, "late_tp") if getattr(args, k, None) is not None}
    return replace(params, **overrides) if overrides else params


def _restrict(bundle, timelines):
    """Keep only patients present in ``timelines``."""
    return {a: {p: s for p, s in streams.items() if p in timelines} for a, streams in bundle.items()}


def _digest_inputs(paths) -> dict[str, str]:
    digests = {}
    for root in paths:
        root = Path(root)
        files = [root] if root.is_file() else sorted(p for p in root.rglob("*") if p.is_file())
        for f in files:
            digests[f.as_posix()] = hashlib.sha256(f.read_bytes()).hexdigest()
    return digests


def write_manifest(args, out: Path, inputs) -> None:
    skip = {"out", "manifest", "workers", "func", "verbose", "input_paths"}
    config = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    manifest = {
        "subcommand": args.command,
        "config": config,
        "inputs": _digest_inputs(inputs),
        "tool_version": __version__,
        "seed": getattr(args, "seed", None),
    }
    if hasattr(args, "resolved_params"):
        manifest["config"]["resolved_params"] = args.resolved_params
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


# --- subcommands -----------------------------------------------------------

def cmd_synth(args) -> list:
    config = SynthConfig(
        n_patients=args.patients, min_hours=args.min_hours, max_hours=args.max_hours,
        prevalence=args.prevalence, seed=args.seed, n_algorithms=args.algorithms,
        fp_rate=args.fp, fn_rate=args.fn, lag_min=args.lag_min, lag_max=args.lag_max,
        rho=args.rho, lead=args.lead,
    )
    cohort = generate_cohort(config)
    for rec in cohort.records:
        write_patient(args.out / "patients", rec)
    for aid, streams in generate_predictors(cohort, config).items():
        write_predictions(args.out / "predictions" / aid, streams)
    log.info("wrote %d patients and %d algorithms", len(cohort.records), config.n_algorithms)
    return []


def cmd_label(args) -> list:
    records = read_patients(args.patients, truncate=not args.no_truncate, workers=args.workers)
    if not records:
        raise FormatError(f"no .psv patient files in {args.patients}")
    cohort = label_cohort(records, args.lead)
    write_label_dir(args.out, cohort)
    print("|".join(f"{k}={v}" for k, v in cohort.summary().items()))
    return [args.patients]


def _load_scoring_inputs(args):
    timelines = read_label_dir(args.labels)
    bundle = _restrict(read_prediction_dir(args.preds, args.workers), timelines)
    if not bundle:
        raise FormatError(f"no algorithm directories in {args.preds}")
    return timelines, bundle


def cmd_score(args) -> list:
    params = resolve_params(args)
    args.resolved_params = params.to_dict()
    timelines, bundle = _load_scoring_inputs(args)
    cohort = CohortUtility(timelines, params)
    lines = ["algorithm_id,utility,inaction_utility,perfect_utility,normalized_score"]
    for aid in sorted(bundle):
        preds = cohort.concat(bundle[aid], aid)
        score = cohort.score(preds)
        lines.append(f"{aid},{score.observed!r},{score.inaction!r},{score.perfect!r},{score.normalized!r}")
        trace_dir = args.out / "traces" / aid
        trace_dir.mkdir(parents=True, exist_ok=True)
        for pid, trace in cohort.traces(preds).items():
            hours = timelines[pid].hours
            (trace_dir / f"{pid}.psv").write_text("".join(f"{h}|{u!r}\n" for h, u in zip(hours, trace.values)))
    table = "\n".join(lines) + "\n"
    (args.out / "scores.csv").write_text(table)
    sys.stdout.write(table)
    return [args.labels, args.preds]


def cmd_similarity(args) -> list:
    timelines, bundle = _load_scoring_inputs(args)
    ranking = read_ranking(args.ranking) if args.ranking else None
    if args.kind == "weighted":
        params = resolve_params(args)
        args.resolved_params = params.to_dict()
        cohort = CohortUtility(timelines, params)
        vectors = {a: cohort.traces(cohort.concat(s, a)) for a, s in bundle.items()}
    else:
        vectors = bundle
    matrix = similarity_matrix(vectors, args.kind, ranking)
    (args.out / f"similarity_{args.kind}.csv").write_text(matrix.to_csv())
    meta = dict(matrix.metadata, kind=matrix.kind, ordering_key=matrix.ordering_key,
                flagged=[[matrix.algorithm_ids[i], matrix.algorithm_ids[j]] for i, j in matrix.flagged])
    (args.out / f"similarity_{args.kind}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return [args.labels, args.preds] + ([args.ranking] if args.ranking else [])


def cmd_kappa(args) -> list:
    timelines, bundle = _load_scoring_inputs(args)
    ranking = read_ranking(args.ranking) if args.ranking else None
    order = rank_order(bundle, ranking)
    chosen = order[: args.top] if args.top else order
    dist = kappa_distribution(bundle, chosen, bins=args.bins)
    (args.out / "kappa.csv").write_text(dist.to_csv())
    (args.out / "kappa_hist.csv").write_text(dist.histogram_csv())
    meta = {
        "algorithms": chosen,
        "degenerate_patients": [p for p, d in zip(dist.patient_ids, dist.degenerate) if d],
    }
    (args.out / "kappa.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return [args.labels, args.preds] + ([args.ranking] if args.ranking else [])


def cmd_tree_dist(args) -> list:
    files = sorted(Path(args.trees).glob("*.ast"))
    if not files:
        raise FormatError(f"no .ast files in {args.trees}")
    trees = {}
    for f in files:
        try:
            trees[f.stem] = parse_tree(f.read_bytes())
        except FormatError as exc:
            raise FormatError(f"{f.name}: {exc}") from exc
    ranking = read_ranking(args.ranking) if args.ranking else None
    costs = EditCosts(args.insert_cost, args.delete_cost, args.relabel_cost)
    matrix = code_similarity_matrix(trees, ranking, costs, args.cap_factor)
    ids = matrix.algorithm_ids
    D = matrix.metadata["distances"]
    lines = ["," + ",".join(ids)] + [a + "," + ",".join(f"{d:.12g}" for d in row) for a, row in zip(ids, D)]
    (args.out / "distance.csv").write_text("\n".join(lines) + "\n")
    (args.out / "similarity.csv").write_text(matrix.to_csv())
    meta = {
        "cap": matrix.metadata["cap"],
        "ordering_key": matrix.ordering_key,
        "identical": [[ids[i], ids[j]] for i, j in matrix.flagged],
    }
    (args.out / "tree_similarity.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return [args.trees] + ([args.ranking] if args.ranking else [])


def cmd_ensemble_build(args) -> list:
    params = resolve_params(args)
    args.resolved_params = params.to_dict()
    timelines, bundle = _load_scoring_inputs(args)
    candidates = args.candidates.split(",") if args.candidates else sorted(bundle)
    rules = {FAMILIAR: VoteRule.parse(args.rule_familiar), UNFAMILIAR: VoteRule.parse(args.rule_unfamiliar)}
    spec = build_ensemble(
        candidates, bundle, timelines, params, rules, RegimeSelector(args.tau, args.regime),
        per_regime=args.per_regime, require_positive=not args.allow_nonpositive,
    )
    (args.out / "ensemble.psv").write_text(format_spec(spec))
    print(format_spec(spec), end="")
    return [args.labels, args.preds]


def cmd_ensemble_apply(args) -> list:
    spec = parse_spec(Path(args.spec).read_bytes())
    bundle = read_prediction_dir(args.preds, args.workers)
    members = {a: bundle[a] for a in spec.algorithm_ids() if a in bundle}
    regime = args.regime if args.regime != "auto" else None
    if regime is None:
        if spec.selector.override:
            regime = spec.selector.override
        elif len(members) >= 2:
            regime = select_regime(members, spec.selector)
        else:
            regime = FAMILIAR
    streams = apply_ensemble(spec, bundle, regime, args.algorithm_id)
    write_predictions(args.out / args.algorithm_id, streams)
    (args.out / "regime.txt").write_text(regime + "\n")
    return [args.spec, args.preds]


def cmd_stats(args) -> list:
    records = read_patients(args.patients, truncate=not args.no_truncate, workers=args.workers)
    variables = args.variables.split(",") if args.variables else list(VARIABLES)
    lines = ["variable,value,fraction"]
    for var in variables:
        if var not in VARIABLES:
            raise UsageError(f"unknown variable {var!r}")
        lines += [f"{var},{v!r},{f!r}" for v, f in empirical_cdf(records, var)]
    (args.out / "cdf.csv").write_text("\n".join(lines) + "\n")
    return [args.patients]


# --- parser ----------------------------------------------------------------

def _add_params(p):
    g = p.add_argument_group("utility parameters (flags > --params file > preset)")
    g.add_argument("--params", default=DEFAULT_PRESET,
                   help=f"preset name ('default' = {DEFAULT_PRESET}) or JSON file")
    for name in _UTILITY_FIELDS:
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    g.add_argument("--late-tp", dest="late_tp", choices=("decay", "plateau"))


def _add_scoring_inputs(p, ranking=False):
    p.add_argument("--labels", type=Path, required=True, help="output directory of 'label'")
    p.add_argument("--preds", type=Path, required=True, help="directory of <algorithm>/<patient>.psv")
    if ranking:
        p.add_argument("--ranking", type=Path, help="scores.csv from 'score' (rows sorted by normalized_score)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sepsis-vote", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, required=True, help="output directory")
    common.add_argument("--manifest", action="store_true", help="write manifest.json next to the outputs")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort and predictors")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patients", type=int, default=100)
    p.add_argument("--min-hours", type=int, default=24)
    p.add_argument("--max-hours", type=int, default=72)
    p.add_argument("--prevalence", type=float, default=0.2)
    p.add_argument("--algorithms", type=int, default=5)
    p.add_argument("--fp", type=float, default=0.1)
    p.add_argument("--fn", type=float, default=0.1)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--lag-min", type=int, default=0)
    p.add_argument("--lag-max", type=int, default=0)
    p.add_argument("--lead", type=int, default=DEFAULT_LEAD)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", parents=[common], help="compute onset times and hourly labels")
    p.add_argument("--patients", type=Path, required=True)
    p.add_argument("--lead", type=int, default=DEFAULT_LEAD)
    p.add_argument("--no-truncate", action="store_true", help="reject records over two weeks instead of truncating")
    p.set_defaults(func=cmd_label, input_paths=("patients",))

    p = sub.add_parser("score", parents=[common], help="normalized utility per algorithm")
    _add_scoring_inputs(p)
    _add_params(p)
    p.set_defaults(func=cmd_score, input_paths=("labels", "preds"))

    p = sub.add_parser("similarity", parents=[common], help="pairwise prediction similarity matrix")
    p.add_argument("--kind", choices=("unweighted", "weighted"), default="unweighted")
    _add_scoring_inputs(p, ranking=True)
    _add_params(p)
    p.set_defaults(func=cmd_similarity, input_paths=("labels", "preds", "ranking"))

    p = sub.add_parser("kappa", parents=[common], help="per-patient Fleiss' kappa")
    p.add_argument("--top", type=int, help="use the N best-ranked algorithms")
    p.add_argument("--bins", type=int, default=20)
    _add_scoring_inputs(p, ranking=True)
    p.set_defaults(func=cmd_kappa, input_paths=("labels", "preds", "ranking"))

    p = sub.add_parser("tree-dist", parents=[common], help="tree edit distance between .ast files")
    p.add_argument("--trees", type=Path, required=True)
    p.add_argument("--ranking", type=Path)
    p.add_argument("--insert-cost", type=float, default=1.0)
    p.add_argument("--delete-cost", type=float, default=1.0)
    p.add_argument("--relabel-cost", type=float, default=1.0)
    p.add_argument("--cap-factor", type=float, default=10.0)
    p.set_defaults(func=cmd_tree_dist, input_paths=("trees", "ranking"))

    p = sub.add_parser("ensemble-build", parents=[common], help="greedy voting ensemble on training data")
    _add_scoring_inputs(p)
    _add_params(p)
    p.add_argument("--candidates", help="comma-separated algorithm ids (default: all)")
    p.add_argument("--rule-familiar", default="majority")
    p.add_argument("--rule-unfamiliar", default="all_but_one")
    p.add_argument("--tau", type=float, default=0.8)
    p.add_argument("--regime", choices=REGIMES, help="fix the regime in the ensemble file")
    p.add_argument("--per-regime", action="store_true", help="select a separate multiset for each regime")
    p.add_argument("--allow-nonpositive", action="store_true", help="keep candidates with utility <= 0")
    p.set_defaults(func=cmd_ensemble_build, input_paths=("labels", "preds"))

    p = sub.add_parser("ensemble-apply", parents=[common], help="vote with a built ensemble")
    p.add_argument("--spec", type=Path, required=True)
    p.add_argument("--preds", type=Path, required=True)
    p.add_argument("--regime", choices=(*REGIMES, "auto"), default="auto")
    p.add_argument("--algorithm-id", default="ensemble")
    p.set_defaults(func=cmd_ensemble_apply, input_paths=("spec", "preds"))

    p = sub.add_parser("stats", parents=[common], help="per-variable empirical CDFs")
    p.add_argument("--patients", type=Path, required=True)
    p.add_argument("--variables", help="comma-separated (default: all)")
    p.add_argument("--no-truncate", action="store_true")
    p.set_defaults(func=cmd_stats, input_paths=("patients",))
    return parser


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    for name in getattr(args, "input_paths", ()):
        path = getattr(args, name, None)
        if path is not None and not Path(path).exists():
            return _error("UsageError", f"--{name.replace('_', '-')}: {path} does not exist", 2)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        inputs = args.func(args)
        if args.manifest:
            write_manifest(args, args.out, inputs)
    except UsageError as exc:
        return _error("UsageError", str(exc), 2)
    except SepsisVoteError as exc:
        return _error(type(exc).__name__, str(exc), 1)
    except OSError as exc:
        return _error(type(exc).__name__, str(exc), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
