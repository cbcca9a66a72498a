"""``aepo-lab`` command line.

Exit codes: 0 success, 2 I/O error, 3 nothing left after filtering,
4 numeric failure, 5 schema or count mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .config import ConfigSchemaError, ExperimentConfig, load_config
from .env import generate_dataset, read_tasks, trap_fraction, write_tasks
from .experiments import (
    VARIANTS,
    evaluate,
    label_tasks,
    median_by_variant,
    run_grid,
    variant_config,
)
from .policy import DimensionError, PolicyParams
from .reward import RewardConfig, reward_curve, write_reward_curve_csv
from .trainer import EmptyAfterFilter, NonFiniteGradient, evaluate_group, train

log = logging.getLogger("aepo_lab")

EXIT_OK, EXIT_IO, EXIT_EMPTY, EXIT_NUMERIC, EXIT_SCHEMA = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create output directory {out}: {exc}") from None
    return out


def _read_tasks(path: str):
    try:
        with open(path) as fh:
            return read_tasks(fh)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_SCHEMA, f"malformed task file {path}: {exc}") from None


def _read_params(path: str, cfg: ExperimentConfig) -> PolicyParams:
    try:
        with open(path) as fh:
            params = PolicyParams.load(fh)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_SCHEMA, f"malformed params file {path}: {exc}") from None
    if len(params.w) != cfg.env.feature_dim:
        raise CliError(EXIT_SCHEMA, f"params have {len(params.w)} weights, config expects {cfg.env.feature_dim}")
    return params


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}") from None


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- commands ------------------------------------------------------------------

def cmd_generate(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args, cfg)
    n = args.n or cfg.dataset.n
    tasks = generate_dataset(cfg.dataset.seed, n, cfg.env)
    path = out / "tasks.jsonl"
    try:
        with open(path, "w") as fh:
            write_tasks(tasks, fh)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}") from None
    print(f"wrote {len(tasks)} tasks to {path} (trap fraction {trap_fraction(tasks):.3f})")
    return EXIT_OK


def cmd_train(args, cfg: ExperimentConfig) -> int:
    tasks = _read_tasks(args.tasks)
    out = _out_dir(args, cfg)
    tcfg = variant_config(cfg.train, args.variant)
    init = cfg.init_policy()
    try:
        params, tlog = train(tcfg, tasks, init)
    except EmptyAfterFilter as exc:
        raise CliError(EXIT_EMPTY, str(exc)) from None
    except (NonFiniteGradient, FloatingPointError) as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None
    except DimensionError as exc:
        raise CliError(EXIT_SCHEMA, str(exc)) from None
    _write(out / "params.json", json.dumps(params.to_dict()) + "\n")
    buf = io.StringIO()
    tlog.write_csv(buf)
    _write(out / "train_log.csv", buf.getvalue())
    if args.record_steps:
        _record(out, tcfg, init, tasks, args.record_steps)
    print(f"trained {len(tlog.steps)} steps on {tlog.n_kept}/{tlog.n_tasks} tasks; wrote {out / 'params.json'}")
    return EXIT_OK


def _record(out: Path, tcfg, init: PolicyParams, tasks, n_groups: int) -> None:
    """Score a few groups with the initial policy and write them in replay format."""
    task_lines, resp_lines = [], []
    for i, task in enumerate(tasks[:n_groups]):
        group = evaluate_group(init, task, tcfg, np.random.default_rng([tcfg.seed, 5, i]))
        for r, bd in zip(group.rollouts, group.breakdowns):
            task_lines.append(json.dumps(task.to_dict(), separators=(",", ":")))
            resp_lines.append(json.dumps({"response": r.response, "total": bd.total}))
    _write(out / "recorded_tasks.jsonl", "\n".join(task_lines) + "\n")
    _write(out / "recorded_responses.jsonl", "\n".join(resp_lines) + "\n")


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    params = _read_params(args.params, cfg)
    tasks = _read_tasks(args.tasks)
    if not tasks:
        raise CliError(EXIT_SCHEMA, "task file is empty")
    out = _out_dir(args, cfg)
    ecfg = cfg.eval
    multi = not args.single_answer
    base = cfg.init_policy()
    labels = label_tasks(tasks, base, cfg.dataset.seed, ecfg.label_trials, ecfg.temperature)
    runs = [evaluate(params, tasks, multi_answer=multi, seed=s, temperature=ecfg.temperature,
                     pass_k=ecfg.pass_k_values, labels=labels) for s in ecfg.seeds]
    mean = lambda key: float(np.mean([r[key] for r in runs]))
    report = metrics.EvalReport(
        accuracy=mean("accuracy"),
        expl_success=mean("expl_success"),
        avg_n=mean("avg_n"),
        sampled_accuracy=mean("sampled_accuracy"),
        per_difficulty=runs[0]["per_difficulty"],
        pass_at_k={k: float(np.mean([r["pass_at_k"][k] for r in runs])) for k in ecfg.pass_k_values},
        runs=len(runs),
    )
    if len(runs) >= 2:
        # on a fixed task file greedy accuracy is identical across runs, so sigma is 0 here
        _, report.sigma = metrics.mean_and_sigma([r["accuracy"] for r in runs])
        _, report.sigma_expl_success = metrics.mean_and_sigma([r["expl_success"] for r in runs])
    else:
        log.warning("only one evaluation seed; sigma omitted")
    report.check()
    _write(out / "report.json", report.to_json())
    _write(out / "report.csv", report.to_csv())
    print(report.to_json(), end="")
    return EXIT_OK


def cmd_ablate(args, cfg: ExperimentConfig) -> int:
    tasks = _read_tasks(args.tasks) if args.tasks else None
    out = _out_dir(args, cfg)
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    for v in variants:
        if v not in VARIANTS:
            raise CliError(EXIT_SCHEMA, f"unknown variant {v!r}")
    try:
        results = run_grid(variants, list(cfg.eval.seeds), cfg.env, cfg.train,
                           n_train=cfg.dataset.n, n_test=cfg.eval.n_test,
                           tasks=tuple(tasks) if tasks is not None else None,
                           init=(cfg.init.w_scale, cfg.init.count_decay),
                           temperature=cfg.eval.temperature, pass_k=tuple(cfg.eval.pass_k_values))
    except EmptyAfterFilter as exc:
        raise CliError(EXIT_EMPTY, str(exc)) from None
    except (NonFiniteGradient, FloatingPointError) as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None
    per_seed = [(r.variant, r.seed, repr(r.accuracy), repr(r.expl_success), repr(r.avg_n)) for r in results]
    _write(out / "ablation_runs.csv", _csv_text(["variant", "seed", "accuracy", "expl_success", "avg_n"], per_seed))
    med = {k: median_by_variant(results, f) for k, f in
           (("accuracy", lambda r: r.accuracy), ("expl_success", lambda r: r.expl_success), ("avg_n", lambda r: r.avg_n))}
    rows = [(v, repr(med["accuracy"][v]), repr(med["expl_success"][v]), repr(med["avg_n"][v])) for v in variants]
    text = _csv_text(["variant", "accuracy", "expl_success", "avg_n"], rows)
    _write(out / "ablation.csv", text)
    print(text, end="")
    return EXIT_OK


def _parse_ints(text: str) -> list[int]:
    values = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            values.extend(range(int(lo), int(hi) + 1))
        elif part:
            values.append(int(part))
    return values


def cmd_reward_curve(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args, cfg)
    n_values = _parse_ints(args.n_values)
    rows = reward_curve(n_values, args.k_max or max(n_values))
    buf = io.StringIO()
    write_reward_curve_csv(rows, buf)
    _write(out / "reward_curve.csv", buf.getvalue())
    print(buf.getvalue(), end="")
    return EXIT_OK


def cmd_replay(args, cfg: ExperimentConfig) -> int:
    tasks = _read_tasks(args.tasks)
    try:
        with open(args.responses) as fh:
            lines = [line for line in fh if line.strip()]
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {args.responses}: {exc}") from None
    if len(lines) != len(tasks):
        raise CliError(EXIT_SCHEMA, f"{len(lines)} responses but {len(tasks)} tasks")
    out = _out_dir(args, cfg)
    rcfg: RewardConfig = variant_config(cfg.train, args.variant).reward
    scored = []
    for line, task in zip(lines, tasks):
        try:
            obj = json.loads(line)
            response = obj["response"] if isinstance(obj, dict) else obj
            if not isinstance(response, str):
                raise TypeError("response is not a string")
        except (ValueError, KeyError, TypeError):
            response = ""  # unreadable line: scores as a format failure
        scored.append(json.dumps(rcfg.score(response, task.target_bbox).to_dict()))
    _write(out / "replay.jsonl", "\n".join(scored) + "\n")
    print(f"scored {len(scored)} responses")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "reward-curve": cmd_reward_curve,
    "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aepo-lab", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="override dataset and training seed")
    common.add_argument("--out", help="output directory (default: output_dir from config)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a task dataset as JSONL")
    p.add_argument("--n", type=int, help="number of tasks (default: dataset.n)")

    p = sub.add_parser("train", parents=[common], help="train a policy on a task file")
    p.add_argument("--tasks", required=True)
    p.add_argument("--variant", default="full", choices=sorted(VARIANTS))
    p.add_argument("--record-steps", type=int, default=0, metavar="G",
                   help="also record G groups of scored responses for replay")

    p = sub.add_parser("eval", parents=[common], help="evaluate a trained policy")
    p.add_argument("--params", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--single-answer", action="store_true", help="evaluate exploration with N forced to 1")

    p = sub.add_parser("ablate", parents=[common], help="train and compare all ablation variants")
    p.add_argument("--tasks", help="training tasks (default: generate per seed)")
    p.add_argument("--variants", help="comma-separated subset of variants")

    p = sub.add_parser("reward-curve", parents=[common], help="tabulate the accuracy reward")
    p.add_argument("--n-values", default="1-8")
    p.add_argument("--k-max", type=int)

    p = sub.add_parser("replay", parents=[common], help="score recorded response strings")
    p.add_argument("--responses", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--variant", default="full", choices=sorted(VARIANTS))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config).with_seed(args.seed)
        return COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigSchemaError as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
