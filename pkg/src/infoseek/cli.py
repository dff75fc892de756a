"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 input validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .agents import PRESETS, sample_population, simulate_population
from .analysis import (
    AnalysisTable,
    approach_heatmap,
    categorical_buckets,
    correlation_table,
    embedding_buckets,
    framing_effect,
    median_split,
    reject_unsampled,
    subject_metrics,
)
from .files import (
    ValidationError,
    check_subject_coverage,
    echo_config,
    import_external,
    load_config,
    load_mapping,
    read_subjects,
    read_trials,
    write_subjects,
    write_trials,
)
from .game import RecordError, Task
from .model import build_task_graph, dataset_nll, simulate_records
from .nn import NonFiniteError, grad_check, random_graph
from .pipeline import (
    CheckpointError,
    NumericalError,
    SampleComplexityConfig,
    SplitSpec,
    TrainConfig,
    load,
    sample_complexity,
    save,
    split,
    subject_rollout_correlations,
    train,
)
from .rng import substream

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3
GRADCHECK_TOLERANCE = 1e-4
FIGURES = ("framing", "approach", "reject", "metrics-correlation", "embedding-buckets", "median-split")

log = logging.getLogger("infoseek")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, out_default: Optional[str] = "out"):
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="infoseek", description="Information-sampling card game: simulation, fitting and analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="simulate a synthetic population")
    _common(p)
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--trials-per-task", type=int)
    p.add_argument("--preset", choices=sorted(PRESETS))

    p = sub.add_parser("import", help="convert an external trial log to the canonical format")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--mapping", help="YAML column/value mapping (identity if omitted)")

    p = sub.add_parser("fit", help="split trials and train a behavior model")
    _common(p)
    p.add_argument("--trials", required=True)
    p.add_argument("--variant", choices=("pop", "subj", "multi"))
    p.add_argument("--task", choices=("max", "min"), help="task to model (single-task variants)")

    p = sub.add_parser("eval", help="mean NLL per decision of a checkpoint on a trials file")
    _common(p, out_default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trials", required=True)

    p = sub.add_parser("simulate", help="sample behavior from a checkpoint on given trial configurations")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trials", required=True, help="trials whose subjects and card configurations are replayed")

    p = sub.add_parser("analyze", help="behavioral and embedding analysis tables")
    _common(p)
    p.add_argument("--trials", required=True)
    p.add_argument("--subjects", help="subjects file (needed for median-split)")
    p.add_argument("--checkpoint", help="model checkpoint (needed for embedding and correlation figures)")
    p.add_argument("--figure", action="append", choices=FIGURES, help="restrict to these figures (repeatable)")

    p = sub.add_parser("sample-complexity", help="fit quality against training-pool size")
    _common(p)
    p.add_argument("--trials", required=True)
    p.add_argument("--repeats", type=int)
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference check of the gradient engine")
    _common(p, out_default=None)
    p.add_argument("--probes", type=int, default=40, help="finite-difference probes per architecture")
    p.add_argument("--graphs", type=int, default=100, help="random architectures checked after the default one")
    return parser


# ---------------------------------------------------------------------------


def _config(args) -> dict:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = load_config(args.config, overrides)
    if getattr(args, "out", None):
        cfg["out_dir"] = args.out
    return cfg


def _out(cfg) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    return out


def _say(args, msg: str):
    if not args.quiet:
        print(msg)


def _train_config(cfg, variant=None) -> TrainConfig:
    return TrainConfig(variant=variant or cfg["variant"], seed=int(cfg["seed"]), **cfg["train"])


def _split_spec(cfg) -> SplitSpec:
    return SplitSpec(**cfg["split"])


def _write_table(out: Path, table: AnalysisTable):
    table.write_csv(out / f"{table.name}.csv")


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    gen = cfg["generator"]
    if args.n_subjects is not None:
        gen["n_subjects"] = args.n_subjects
    if args.trials_per_task is not None:
        gen["trials_per_task"] = args.trials_per_task
    if args.preset is not None:
        gen["preset"] = args.preset
    if gen["preset"] not in PRESETS:
        raise ValidationError(f"unknown generator preset {gen['preset']!r}")
    dists = dict(PRESETS[gen["preset"]])
    dists.update({k: tuple(v) for k, v in (gen.get("distributions") or {}).items()})
    seed = int(cfg["seed"])
    try:
        profiles = sample_population(substream(seed, "population"), int(gen["n_subjects"]), dists)
        tasks = [Task(t) for t in gen["tasks"]]
        records = simulate_population(profiles, tasks, int(gen["trials_per_task"]), seed)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    out = _out(cfg)
    write_trials(out / "trials.csv", records)
    write_subjects(out / "subjects.csv", profiles)
    _say(args, f"wrote {len(records)} trials for {len(profiles)} subjects to {out}")
    return EXIT_OK


def cmd_import(args) -> int:
    cfg = _config(args)
    mapping = load_mapping(args.mapping) if args.mapping else {}
    if not isinstance(mapping, dict):
        raise ValidationError("mapping file must hold a mapping")
    out = _out(cfg)
    report = import_external(args.input, mapping, out / "trials.csv")
    with open(out / "import_report.json", "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(report.to_dict(), indent=1) + "\n")
    _say(args, f"imported {report.rows_written} of {report.rows_read} rows ({len(report.dropped)} dropped)")
    return EXIT_OK


def _task_records(records, task):
    if task is None:
        return records
    return [r for r in records if r.config.task.value == task]


def cmd_fit(args) -> int:
    cfg = _config(args)
    if args.task:
        cfg["task"] = args.task
    if args.variant:
        cfg["variant"] = args.variant
    records, _ = read_trials(args.trials)
    tc = _train_config(cfg)
    if tc.variant != "multi":
        records = _task_records(records, cfg["task"])
    if not records:
        raise ValidationError("no trials for the requested task")
    tr, st, va = split(records, _split_spec(cfg), seed=tc.seed)
    ck = train(tr, st, tc)
    out = _out(cfg)
    save(ck, out / "checkpoint.json")
    log_table = AnalysisTable("training_log", ["epoch", "train_nll", "stopping_nll"],
                              [[e["epoch"], e["train_nll"], e["stopping_nll"]] for e in ck.log])
    _write_table(out, log_table)
    for name, recs in (("split_train", tr), ("split_stopping", st), ("split_validation", va)):
        write_trials(out / f"{name}.csv", recs)
    msg = f"best epoch {ck.best_epoch}; stopping nll={ck.log[ck.best_epoch]['stopping_nll']:.6f}"
    if va:
        msg += f"; validation nll={dataset_nll(ck.model, va):.6f}"
    _say(args, msg)
    return EXIT_OK


def _load_checkpoint(path):
    try:
        return load(path)
    except OSError as exc:
        raise ValidationError(f"cannot read checkpoint: {exc}") from None


def _model_records(model, records):
    tasks = set(model.tasks)
    return [r for r in records if r.config.task in tasks]


def cmd_eval(args) -> int:
    cfg = _config(args)
    ck = _load_checkpoint(args.checkpoint)
    records, _ = read_trials(args.trials)
    recs = _model_records(ck.model, records)
    if not recs:
        raise ValidationError("no trials match the checkpoint's task(s)")
    nll = dataset_nll(ck.model, recs)
    print(f"nll={nll!r}")
    if args.out:
        cfg["out_dir"] = args.out
        _out(cfg)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    ck = _load_checkpoint(args.checkpoint)
    recs = _model_records(ck.model, read_trials(args.trials)[0])
    rng = substream(int(cfg["seed"]), "simulate-model")
    sims = simulate_records(ck.model, [r.subject_id for r in recs], [r.config for r in recs], rng)
    out = _out(cfg)
    write_trials(out / "trials.csv", sims)
    _write_table(out, subject_metrics(sims))
    _say(args, f"simulated {len(sims)} trials")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _config(args)
    figures = args.figure or cfg["analysis"]["figures"]
    bad = set(figures) - set(FIGURES)
    if bad:
        raise ValidationError(f"unknown figures {sorted(bad)}")
    records, _ = read_trials(args.trials)
    profiles = read_subjects(args.subjects) if args.subjects else None
    if profiles is not None:
        check_subject_coverage(records, profiles)
    ck = _load_checkpoint(args.checkpoint) if args.checkpoint else None
    out = _out(cfg)
    seed = int(cfg["seed"])
    tasks = sorted({r.config.task for r in records}, key=lambda t: t.value)
    written = []

    def need(what, obj, fig):
        if obj is None:
            raise ValidationError(f"figure {fig!r} needs --{what}")
        return obj

    for fig in figures:
        if fig == "framing":
            tables = [framing_effect(records)]
        elif fig == "approach":
            tables = []
            for t in tasks:
                tab = approach_heatmap(records, t)
                tab.name = f"approach_{t.value}"
                tables.append(tab)
        elif fig == "reject":
            tables = []
            for t in tasks:
                tab = reject_unsampled(records, t)
                tab.name = f"reject_{t.value}"
                tables.append(tab)
        elif fig == "metrics-correlation":
            model = need("checkpoint", ck, fig).model
            recs = _model_records(model, records)
            reps = subject_rollout_correlations(model, recs, substream(seed, "analyze-rollout"),
                                                int(cfg["analysis"]["n_rollouts"]))
            tables = [correlation_table([r for r in reps.values() if r is not None])]
        elif fig == "embedding-buckets":
            model = need("checkpoint", ck, fig).model
            emb = {s: model.embed(s) for s in model.subject_ids}
            tables = []
            for t in model.tasks:
                recs = [r for r in records if r.config.task is t and r.subject_id in emb]
                by = {}
                for r in recs:
                    by.setdefault(r.subject_id, []).append(r)
                stats = {
                    "n_moves": {s: float(np.mean([r.n_moves for r in v])) for s, v in by.items()},
                    "score": {s: float(np.mean([r.score for r in v])) for s, v in by.items()},
                }
                for stat, values in stats.items():
                    tables.append(embedding_buckets(emb, values, int(cfg["analysis"]["n_buckets"]),
                                                    name=f"embedding_buckets_{t.value}_{stat}"))
        elif fig == "median-split":
            model = need("checkpoint", ck, fig).model
            profiles = need("subjects", profiles, fig)
            emb = {s: model.embed(s) for s in model.subject_ids}
            tables = [
                median_split(emb, {p.subject_id: p.approach_param for p in profiles}, name="median_split_approach"),
                median_split(emb, {p.subject_id: p.avoid_param for p in profiles}, name="median_split_avoid"),
            ]
            for fld in ("age_bucket", "gender", "education"):
                tab = categorical_buckets(emb, {p.subject_id: getattr(p, fld) for p in profiles}, f"buckets_{fld}")
                if tab.rows:
                    tables.append(tab)
        for tab in tables:
            _write_table(out, tab)
            written.append(tab.name)
    _say(args, "wrote " + ", ".join(f"{n}.csv" for n in written))
    return EXIT_OK


def cmd_sample_complexity(args) -> int:
    cfg = _config(args)
    sc = dict(cfg["sample_complexity"])
    if args.repeats is not None:
        sc["n_repeats"] = args.repeats
    if args.jobs is not None:
        sc["n_jobs"] = args.jobs
    records, _ = read_trials(args.trials)
    records = _task_records(records, cfg["task"])
    run = SampleComplexityConfig(tuple(sc["pool_sizes"]), int(sc["n_test_subjects"]), int(sc["n_repeats"]),
                                 int(sc["n_rollouts"]), cfg["task"], int(cfg["seed"]), int(sc["n_jobs"]))
    per_run, summary = sample_complexity(records, run, _train_config(cfg, "subj"))
    out = _out(cfg)
    _write_table(out, per_run)
    _write_table(out, summary)
    if not args.quiet:
        for rec in summary.records():
            print(f"pool={rec['pool_size']} {rec['metric']}: r={rec['mean_r']:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    seed = int(cfg["seed"])
    if args.probes < 1 or args.graphs < 0:
        raise ValidationError("--probes must be >= 1 and --graphs >= 0")
    rng = substream(seed, "gradcheck", "default")
    graph = build_task_graph(rng)
    worst = grad_check(graph, rng, args.probes * 5).max_rel_error
    for i in range(args.graphs):
        rng = substream(seed, "gradcheck", i)
        graph = random_graph(rng)
        worst = max(worst, grad_check(graph, rng, args.probes).max_rel_error)
    status = "ok" if worst <= GRADCHECK_TOLERANCE else "FAIL"
    print(f"max_rel_error={worst!r} tolerance={GRADCHECK_TOLERANCE!r} {status}")
    return EXIT_OK if worst <= GRADCHECK_TOLERANCE else EXIT_NUMERICAL


COMMANDS = {
    "gen-data": cmd_gen_data,
    "import": cmd_import,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "sample-complexity": cmd_sample_complexity,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (NumericalError, NonFiniteError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, RecordError, CheckpointError, ValueError, KeyError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
