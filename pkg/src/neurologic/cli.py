"""``neurologic`` command line: data generation, training and the evaluation reports.

Every report is written under ``--out`` and embeds the effective
configuration; diagnostics go to standard error.  Exit codes: 0 success,
2 configuration/input error, 3 numeric failure, 4 insufficient data.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import numcore as nc
from . import plots
from .config import Config, ConfigError, load_config
from .datagen import Dataset, World, inject_label_noise, make_world, sample_dataset
from .engine import (ReasoningModel, TrainingDiverged, ambient_sample, build_candidates, evaluate,
                     initial_rulebase, logic_event_sample, rulebase_update_pass, train)
from .events import DictionaryError
from .logic import (EXPRESSIONS, REFERENCE_ACCURACY, InsufficientSampleError, ambiguous_fraction,
                    commutativity_gap, expression_accuracy)
from .rng import stream
from .rulebase import (EmptyClassError, RuleBase, RuleSyntaxError, bernoulli_kl, cooccurrence_prior,
                       format_rule, generated_candidates, parse_rule, perturbed_generator,
                       read_rule_file, write_rule_file)
from .search import rule_search

log = logging.getLogger("neurologic")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DATA = 0, 2, 3, 4


class InputError(Exception):
    """A missing or malformed input file (reported as a configuration error)."""


# -- report writing -------------------------------------------------------------------------

def _json_dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def write_report(out: Path, name: str, cfg: Config, command: str, body: dict) -> Path:
    path = out / name
    path.write_text(_json_dump({"command": command, "config": cfg.to_dict(), **body}), encoding="utf-8")
    return path


def write_csv(out: Path, name: str, cfg: Config, header: list[str], rows: list[list]) -> Path:
    """CSV with the configuration on a leading ``#`` comment line."""
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
    path = out / name
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


# -- inputs ------------------------------------------------------------------------------------

def _world_and_data(args, cfg: Config) -> tuple[World, Dataset]:
    """Load ``--data DIR`` or regenerate the world and dataset from the config."""
    if args.data:
        d = Path(args.data)
        try:
            world = World.load(d / "world.json")
            data = Dataset.load(d / "dataset.jsonl", len(world.activities))
        except FileNotFoundError as exc:
            raise InputError(f"missing data file: {exc.filename}") from None
        return world, data
    world = make_world(cfg.world, cfg.seed)
    return world, sample_dataset(world, seed=cfg.seed)


def _checkpoint(args) -> tuple[ReasoningModel, RuleBase, dict]:
    if not args.checkpoint:
        raise InputError("--checkpoint is required")
    try:
        model, meta = ReasoningModel.load(args.checkpoint)
    except FileNotFoundError as exc:
        raise InputError(f"missing checkpoint: {exc.filename}") from None
    except (KeyError, ValueError) as exc:
        raise InputError(f"unreadable checkpoint {args.checkpoint}: {exc}") from None
    if getattr(args, "rules", None):
        rules = read_rule_file(args.rules, model.primitives, model.activities)
    else:
        rules = [parse_rule(t, model.primitives, model.activities) for t in meta.get("rules", [])]
    base = RuleBase.from_rules(rules, len(model.activities), int(meta.get("l0", model.cfg.l0)))
    return model, base, meta


def _test_part(data: Dataset) -> Dataset:
    test = data.part("test")
    return test if len(test) else data


def _act_names(model_or_world) -> list[str]:
    acts = model_or_world.activities
    return [acts.name_of(i) for i in range(len(acts))]


# -- subcommands -----------------------------------------------------------------------------

def cmd_gen_data(args, cfg: Config, out: Path) -> None:
    world = make_world(cfg.world, cfg.seed)
    data = sample_dataset(world, seed=cfg.seed)
    world.save(out / "world.json")
    data.save(out / "dataset.jsonl")
    write_rule_file(out / "prior_rules.txt", world.prior_rules, world.primitives, world.activities,
                    header="prior rule base")
    write_rule_file(out / "gt_rules.txt", world.gt_rules, world.primitives, world.activities,
                    header="generating rules")
    counts = data.labels.sum(axis=0).astype(int)
    plots.label_counts(_act_names(world), counts, out / "label_counts.png")
    write_report(out, "gen-data.json", cfg, "gen-data", {
        "n_samples": len(data), "n_primitives": data.n_primitives, "n_activities": data.n_activities,
        "positives_per_activity": counts.tolist(),
        "split": {s: int(np.sum(data.split == s)) for s in ("train", "test")},
        "n_prior_rules": len(world.prior_rules), "n_gt_rules": len(world.gt_rules)})


def cmd_gen_rules(args, cfg: Config, out: Path) -> None:
    world, data = _world_and_data(args, cfg)
    train_ds = data.part("train")
    betas = [round(0.1 * t, 1) for t in range(11)]
    rules, per_activity = [], []
    for m in range(data.n_activities):
        try:
            prior = cooccurrence_prior(train_ds.s_pri, train_ds.labels, m)
        except EmptyClassError:
            log.warning("activity %d has no positive training samples; skipped", m)
            per_activity.append({"activity": m, "rules": 0})
            continue
        got = generated_candidates(prior, m, stream(cfg.seed, "gen-rules", m),
                                   per_generator=cfg.train.candidate_generated_per_beta)
        rules.extend(got)
        kl_rng = stream(cfg.seed, "gen-rules-kl", m)
        kl = [float(np.mean(bernoulli_kl(perturbed_generator(prior, b, kl_rng, m).probs, prior)))
              for b in betas]
        per_activity.append({"activity": m, "rules": len(got),
                             "mean_size": float(np.mean([len(r.antecedents) for r in got])),
                             "kl_by_beta": dict(zip([f"{b:.1f}" for b in betas], kl))})
    if not rules:
        raise EmptyClassError("no activity has positive training samples")
    write_rule_file(out / "generated_rules.txt", rules, world.primitives, world.activities,
                    header="generated candidates")
    write_report(out, "gen-rules.json", cfg, "gen-rules", {"per_activity": per_activity,
                                                           "total": len(rules)})


def cmd_train(args, cfg: Config, out: Path) -> None:
    world, data = _world_and_data(args, cfg)
    model = ReasoningModel.create(world.primitives, world.activities, cfg.model, cfg.seed,
                                  visual_dim=0 if data.visual is None else data.visual.shape[1])
    base = initial_rulebase(world.prior_rules, len(world.activities), cfg.model.l0)
    try:
        res = train(model, data, base, cfg.train, seed=cfg.seed)
    except TrainingDiverged as exc:
        model.params.restore(exc.last_good)
        model.save(out / "last_good.ckpt.json", exc.rulebase, {"config": cfg.to_dict()})
        _history_files(out, cfg, exc.history)
        raise
    model.save(out / "model.ckpt.json", res.rulebase, {"config": cfg.to_dict()})
    res.rulebase.save(out / "rulebase.txt", model.primitives, model.activities)
    _history_files(out, cfg, res.history)
    test = _test_part(data)
    final = {mode: evaluate(model, test, res.rulebase, mode) for mode in ("lr", "fused")}
    write_report(out, "train.json", cfg, "train", {"history": res.history, "test": final,
                                                   "rule_counts": res.rulebase.counts()})


def _history_files(out: Path, cfg: Config, history: list[dict]) -> None:
    rows = [[h["phase"], h["epoch"], h["L_cls"], h["L_reg"],
             "" if h["val_mAP"] is None else h["val_mAP"], len(h["rules_added"]),
             len(h["rules_removed"])] for h in history]
    write_csv(out, "history.csv", cfg,
              ["phase", "epoch", "L_cls", "L_reg", "val_mAP", "rules_added", "rules_removed"], rows)
    if history:
        plots.training_curves(history, out / "history.png")


def cmd_eval(args, cfg: Config, out: Path) -> None:
    model, base, _ = _checkpoint(args)
    _, data = _world_and_data(args, cfg)
    test = _test_part(data)
    res = evaluate(model, test, base, cfg.eval.mode)
    names = _act_names(model)
    write_csv(out, "eval.csv", cfg, ["activity", "AP"],
              [[n, "" if a is None else a] for n, a in zip(names, res["AP"])])
    plots.per_activity_ap(names, res["AP"], out / "eval.png", f"{cfg.eval.mode}: mAP {res['mAP']:.3f}")
    write_report(out, "eval.json", cfg, "eval", {"checkpoint": str(args.checkpoint),
                                                 "n_samples": len(test), **res})


def cmd_eval_logic(args, cfg: Config, out: Path) -> None:
    model, base, _ = _checkpoint(args)
    _, data = _world_and_data(args, cfg)
    rng = stream(cfg.seed, "eval-logic")
    events = logic_event_sample(model, _test_part(data), base, cfg.eval.n_events, rng)
    acc = expression_accuracy(model.ops, events, cfg.eval.t_l, rng)
    judged = model.ops.judge_np(events)
    rand = model.ops.judge_np(ambient_sample(events, len(events), rng))
    write_csv(out, "logic.csv", cfg, ["expression", "accuracy", "reference"],
              [[k, acc[k], REFERENCE_ACCURACY[k]] for k in EXPRESSIONS])
    plots.expression_table(acc, out / "logic.png", REFERENCE_ACCURACY)
    plots.judge_histogram(judged, out / "judge_hist.png", rand)
    write_report(out, "logic.json", cfg, "eval-logic", {
        "checkpoint": str(args.checkpoint), "n_events": len(events), "accuracy": acc,
        "ambiguous_fraction": ambiguous_fraction(judged),
        "ambiguous_fraction_random": ambiguous_fraction(rand),
        "or_commutativity_gap": commutativity_gap(model.ops, events, stream(cfg.seed, "commutativity")),
        "true_fraction": float(np.mean(judged > cfg.eval.t_l)),
        "false_fraction": float(np.mean(judged < 1 - cfg.eval.t_l))})


def _noisy_training_run(cfg: Config, world: World, data: Dataset, mr: float) -> tuple:
    """Train a fresh model with ``mr`` noise on the training split only."""
    train_idx = np.flatnonzero(data.split == "train")
    noisy = inject_label_noise(data.subset(train_idx), mr, cfg.seed)
    s_pri = data.s_pri.copy()
    s_pri[train_idx] = noisy.s_pri
    mixed = Dataset(data.ids, data.split, s_pri, data.s_inst, data.labels, data.gt_pri, data.visual, mr)
    model = ReasoningModel.create(world.primitives, world.activities, cfg.model, cfg.seed,
                                  visual_dim=0 if data.visual is None else data.visual.shape[1])
    base = initial_rulebase(world.prior_rules, len(world.activities), cfg.model.l0)
    res = train(model, mixed, base, cfg.train, seed=cfg.seed)
    return res.model, res.rulebase


def cmd_noise_sweep(args, cfg: Config, out: Path) -> None:
    world, data = _world_and_data(args, cfg)
    test = _test_part(data)
    if cfg.eval.gt_primitives:
        test = test.with_gt_primitives()
    in_training = cfg.train.noise_in_training
    if not in_training:
        model, base, _ = _checkpoint(args)
    rows, curve = [], []
    for mr in cfg.eval.mr_sweep:
        if in_training:
            model, base = _noisy_training_run(cfg, world, data, mr)
            res = evaluate(model, test, base, cfg.eval.sweep_mode)
        else:
            res = evaluate(model, inject_label_noise(test, mr, cfg.seed), base, cfg.eval.sweep_mode)
        rows.append([float(mr), res["mAP"]])
        curve.append({"mr": float(mr), "mAP": res["mAP"], "AP": res["AP"]})
    write_csv(out, "noise_sweep.csv", cfg, ["mr", "mAP"], rows)
    plots.noise_curve([r[0] for r in rows], [r[1] for r in rows], out / "noise_sweep.png")
    write_report(out, "noise_sweep.json", cfg, "noise-sweep",
                 {"checkpoint": None if in_training else str(args.checkpoint),
                  "noise_at": "training" if in_training else "evaluation", "curve": curve})


def cmd_search_rules(args, cfg: Config, out: Path) -> None:
    model, base, _ = _checkpoint(args)
    world, data = _world_and_data(args, cfg)
    test = _test_part(data)
    if cfg.eval.gt_primitives:
        test = test.with_gt_primitives()
    include = None
    if cfg.eval.search_include_gt:
        include = {m: world.rules_of(m) for m in range(len(world.activities))}
    results = rule_search(model, test, cfg.eval.search_k, cfg.seed, prior_data=data.part("train"),
                          include=include, jobs=args.jobs)
    baseline = evaluate(model, test, base, "lr")["mAP"]
    write_csv(out, "search.csv", cfg, ["K", "mAP"], [[r.k, r.mAP] for r in results])
    plots.search_curve([r.k for r in results], [r.mAP for r in results], out / "search.png", baseline)
    write_report(out, "search.json", cfg, "search-rules",
                 {"checkpoint": str(args.checkpoint), "baseline_mAP": baseline,
                  "results": [r.report() for r in results]})


def cmd_update_rules(args, cfg: Config, out: Path) -> None:
    model, base, _ = _checkpoint(args)
    _, data = _world_and_data(args, cfg)
    train_ds = data.part("train")
    base = build_candidates(base, train_ds, cfg.seed, cfg.train.candidate_annotation,
                            cfg.train.candidate_generated_per_beta)
    new, diff = rulebase_update_pass(model, train_ds, base, cfg.train.selection,
                                     cfg.train.update_samples, stream(cfg.seed, "update", "offline"))
    new.save(out / "rulebase.txt", model.primitives, model.activities)
    fmt = lambda r: format_rule(r, model.primitives, model.activities)  # noqa: E731
    write_report(out, "update.json", cfg, "update-rules", {
        "checkpoint": str(args.checkpoint), "rule_counts_before": base.counts(),
        "rule_counts_after": new.counts(),
        "diff": {str(m): {"added": [fmt(r) for r in d["added"]],
                          "removed": [fmt(r) for r in d["removed"]]} for m, d in sorted(diff.items())}})


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate a synthetic world and dataset"),
    "gen-rules": (cmd_gen_rules, "sample rule candidates from co-occurrence generators"),
    "train": (cmd_train, "train the reasoning model and rule base"),
    "eval": (cmd_eval, "mAP of a checkpoint on the test split"),
    "eval-logic": (cmd_eval_logic, "logic-expression accuracy and judge bimodality"),
    "noise-sweep": (cmd_noise_sweep, "mAP under increasing primitive noise"),
    "search-rules": (cmd_search_rules, "label-aware rule search upper bound"),
    "update-rules": (cmd_update_rules, "one offline rule-base update pass"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neurologic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON or TOML configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed (unsigned 64-bit)")
        p.add_argument("--out", default=".", help="directory for reports (created if needed)")
        p.add_argument("--jobs", type=int, default=1, help="maximum worker threads")
        p.add_argument("--data", help="directory written by gen-data (default: regenerate from config)")
        if name not in ("gen-data", "gen-rules", "train"):
            p.add_argument("--checkpoint", help="model checkpoint written by train")
        if name in ("eval", "eval-logic", "noise-sweep", "search-rules", "update-rules"):
            p.add_argument("--rules", help="rule file overriding the checkpoint's rule base")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](args, cfg, out)
    except (ConfigError, InputError, RuleSyntaxError, DictionaryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (nc.NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InsufficientSampleError, EmptyClassError) as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
