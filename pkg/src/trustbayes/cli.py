"""Batch command-line front end.

Subcommands: gen (dataset), train (both methods), eval (Monte Carlo
test), feasibility (sample-size check), plot (SVG charts from CSV).

A single JSON config file drives gen/train/eval; command-line flags
override config keys, which override built-in defaults.  Unknown config
keys are rejected.  Exit codes: 0 success (certified where relevant),
2 finished but uncertified, 3 infeasible, 4 input error, 5 numerical
error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .bounds import BoundSpec, feasibility_check, min_tasks_for_delta
from .errors import FeasibilityError, InputError, NumericalError, TrustBayesError
from .evaluation import (
    EVAL_REPORT_COLUMNS,
    EvalConfig,
    EvalReport,
    FIXTURE_COLUMNS,
    fixture_to_csv,
    monte_carlo_eval,
)
from .gp import HyperParams
from .parallel import THREADS_ENV
from .serialize import dumps, format_real, loads
from .svg import Series, line_chart, panel_grid
from .tasks import gen_meta_dataset, load_dataset, save_dataset
from .training import TRAIN_LOG_COLUMNS, TrainConfig, train_meta_prior, train_trust_bayes

EXIT_OK = 0
EXIT_UNCERTIFIED = 2
EXIT_INFEASIBLE = 3
EXIT_INPUT = 4
EXIT_NUMERICAL = 5

METHODS = ("trust-bayes", "meta-prior")

_DATASET_DEFAULTS = {"n": 200, "t_tr": 10, "t_eval": 50, "n_x": 1}
_SPEC_DEFAULTS = {"delta": 0.1, "q": 1.64, "gamma_min": 1e-6}
_TRAIN_KEYS = (
    "steps",
    "step_size",
    "fd_step",
    "smoothing_tau",
    "penalty_weight",
    "penalty_growth",
    "max_outer_rounds",
    "inclusion_buffer",
    "init",
)
_EVAL_DEFAULTS = {"n_test_tasks": 500, "n_test_inputs": 500, "t_tr_test": None}
_TOP_KEYS = ("seed", "dataset", "spec", "train", "eval", "output_dir", "method", "threads")


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as input errors (exit 4)."""

    def error(self, message):
        raise InputError(message)


@dataclass
class RunConfig:
    seed: int
    dataset: dict
    spec: BoundSpec
    train: TrainConfig
    eval_params: dict
    output_dir: Path
    method: str
    threads: int | None

    def echo(self) -> dict:
        train = {
            "steps": self.train.steps,
            "step_size": self.train.step_size,
            "fd_step": self.train.fd_step,
            "smoothing_tau": self.train.smoothing_tau,
            "penalty_weight": self.train.penalty_weight,
            "penalty_growth": self.train.penalty_growth,
            "max_outer_rounds": self.train.max_outer_rounds,
            "inclusion_buffer": self.train.inclusion_buffer,
        }
        if self.train.init is not None:
            train["init"] = self.train.init.to_record()
        return {
            "seed": self.seed,
            "dataset": dict(self.dataset),
            "spec": {"delta": self.spec.delta, "q": self.spec.q, "gamma_min": self.spec.gamma_min},
            "train": train,
            "eval": dict(self.eval_params),
            "output_dir": str(self.output_dir),
            "method": self.method,
        }


def _reject_unknown(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise InputError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InputError(f"{where} must be an integer, got {value!r}")
    return value


def _as_real(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InputError(f"{where} must be a number, got {value!r}")
    return float(value)


def load_config(path: str | None, overrides: argparse.Namespace) -> RunConfig:
    """Merge defaults, the config file, and command-line overrides."""
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise InputError(f"config file not found: {config_path}")
        try:
            raw = loads(config_path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise InputError(f"{config_path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise InputError(f"{config_path}: config must be a JSON object")
        base = config_path.parent
    _reject_unknown(raw, _TOP_KEYS, "config")

    dataset = dict(_DATASET_DEFAULTS)
    section = raw.get("dataset", {})
    _reject_unknown(section, dataset, "config.dataset")
    dataset.update(section)
    for key in dataset:
        dataset[key] = _as_int(dataset[key], f"config.dataset.{key}")

    spec_values = dict(_SPEC_DEFAULTS)
    section = raw.get("spec", {})
    _reject_unknown(section, spec_values, "config.spec")
    spec_values.update(section)

    train_values = {}
    section = raw.get("train", {})
    _reject_unknown(section, _TRAIN_KEYS, "config.train")
    train_values.update(section)
    if "init" in train_values and train_values["init"] is not None:
        init = train_values["init"]
        if not isinstance(init, dict):
            raise InputError("config.train.init must be an object with theta/phi1/phi2")
        _reject_unknown(init, ("theta", "phi1", "phi2"), "config.train.init")
        train_values["init"] = HyperParams.from_record(init)

    eval_values = dict(_EVAL_DEFAULTS)
    section = raw.get("eval", {})
    _reject_unknown(section, eval_values, "config.eval")
    eval_values.update(section)

    seed = raw.get("seed", 0)
    output_dir = raw.get("output_dir", "out")
    method = raw.get("method", "both")
    threads = raw.get("threads")

    # Command-line overrides (flags beat config beats defaults).
    for flag, target, key in (
        ("seed", None, None),
        ("n", dataset, "n"),
        ("t_tr", dataset, "t_tr"),
        ("t_eval", dataset, "t_eval"),
        ("delta", spec_values, "delta"),
        ("q", spec_values, "q"),
        ("steps", train_values, "steps"),
        ("n_test_tasks", eval_values, "n_test_tasks"),
        ("n_test_inputs", eval_values, "n_test_inputs"),
        ("t_tr_test", eval_values, "t_tr_test"),
    ):
        value = getattr(overrides, flag, None)
        if value is None:
            continue
        if flag == "seed":
            seed = value
        else:
            target[key] = value
    if getattr(overrides, "output_dir", None) is not None:
        output_dir = overrides.output_dir
        base = Path.cwd()
    if getattr(overrides, "method", None) is not None:
        method = overrides.method
    if getattr(overrides, "threads", None) is not None:
        threads = overrides.threads

    if method not in METHODS + ("both",):
        raise InputError(f"method must be one of {METHODS + ('both',)}, got {method!r}")
    seed = _as_int(seed, "config.seed")
    if threads is not None:
        threads = _as_int(threads, "config.threads")
        if threads < 1:
            raise InputError(f"config.threads must be >= 1, got {threads}")
    if eval_values["t_tr_test"] is None:
        eval_values["t_tr_test"] = dataset["t_tr"]
    for key in eval_values:
        eval_values[key] = _as_int(eval_values[key], f"config.eval.{key}")

    if dataset["n"] < 1 or dataset["t_eval"] < 1 or dataset["t_tr"] < 0:
        raise InputError(
            f"invalid dataset sizes: n={dataset['n']}, t_tr={dataset['t_tr']}, "
            f"t_eval={dataset['t_eval']} (need n >= 1, t_tr >= 0, t_eval >= 1)"
        )

    spec = BoundSpec(
        delta=_as_real(spec_values["delta"], "config.spec.delta"),
        q=_as_real(spec_values["q"], "config.spec.q"),
        gamma_min=_as_real(spec_values["gamma_min"], "config.spec.gamma_min"),
    )
    numeric = {k: v for k, v in train_values.items() if k != "init"}
    for key, value in numeric.items():
        if key in ("steps", "max_outer_rounds"):
            numeric[key] = _as_int(value, f"config.train.{key}")
        else:
            numeric[key] = _as_real(value, f"config.train.{key}")
    train = TrainConfig(seed=seed, init=train_values.get("init"), **numeric)

    return RunConfig(
        seed=seed,
        dataset=dataset,
        spec=spec,
        train=train,
        eval_params=eval_values,
        output_dir=(base / output_dir).resolve(),
        method=method,
        threads=threads,
    )


def _manifest(kind: str, cfg: RunConfig, extra: dict) -> dict:
    record = {
        "kind": kind,
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "nonreproducible_fields": ["generated_at"],
        "config": cfg.echo(),
    }
    record.update(extra)
    return record


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_gen(cfg: RunConfig) -> int:
    meta = gen_meta_dataset(
        n=cfg.dataset["n"],
        t_tr=cfg.dataset["t_tr"],
        t_eval=cfg.dataset["t_eval"],
        seed=cfg.seed,
        n_x=cfg.dataset["n_x"],
        threads=cfg.threads,
    )
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    dataset_path = cfg.output_dir / "dataset.jsonl"
    save_dataset(meta, dataset_path)
    manifest = _manifest("dataset-manifest", cfg, {"dataset_file": dataset_path.name})
    _write(cfg.output_dir / "dataset.manifest.json", dumps(manifest) + "\n")
    print(f"wrote {dataset_path} ({meta.n} tasks)")
    return EXIT_OK


def _hyper_record(hyper: HyperParams, log) -> dict:
    record = hyper.to_record()
    record.update(
        {
            "certified": log.certified,
            "p1_star": log.p1_star,
            "p2_star": log.p2_star,
            "gamma1_star": log.gamma1_star,
            "gamma2_star": log.gamma2_star,
        }
    )
    return record


def cmd_train(cfg: RunConfig, dataset_path: Path) -> int:
    if not dataset_path.is_file():
        raise InputError(f"dataset file not found: {dataset_path}")
    meta = load_dataset(dataset_path, seed=cfg.seed)
    methods = METHODS if cfg.method == "both" else (cfg.method,)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)

    uncertified = False
    for method in methods:
        if method == "trust-bayes":
            hyper, log = train_trust_bayes(meta, cfg.spec, cfg.train, threads=cfg.threads)
            uncertified = uncertified or not log.certified
        else:
            hyper, log = train_meta_prior(meta, cfg.train, spec=cfg.spec, threads=cfg.threads)
        hyper_path = cfg.output_dir / f"{method}.hyper.json"
        log_path = cfg.output_dir / f"{method}.log.csv"
        _write(hyper_path, dumps(_hyper_record(hyper, log)) + "\n")
        log.to_csv(log_path)
        state = "certified" if log.certified else "uncertified"
        print(
            f"{method}: {state} after {log.rounds_used} round(s); "
            f"p1_star={log.p1_star:.6g} p2_star={log.p2_star:.6g}; "
            f"wrote {hyper_path.name}, {log_path.name}"
        )
    manifest = _manifest("train-manifest", cfg, {"dataset_file": str(dataset_path)})
    _write(cfg.output_dir / "train.manifest.json", dumps(manifest) + "\n")
    return EXIT_UNCERTIFIED if uncertified else EXIT_OK


def _load_hyper(path: Path) -> HyperParams:
    if not path.is_file():
        raise InputError(f"hyperparameter file not found: {path}")
    try:
        record = loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(record, dict):
        raise InputError(f"{path}: expected a JSON object")
    return HyperParams.from_record(record)


def _label(path: Path) -> str:
    name = path.name
    for suffix in (".hyper.json", ".json"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return path.stem


_COMPARISON_ROWS = (
    "eval_split_prior_inclusion",
    "eval_split_posterior_inclusion",
    "prior_inclusion",
    "posterior_inclusion",
    "mse",
)


def _report_cell(report: EvalReport, key: str) -> str:
    value = getattr(report, key)
    return "nan" if value != value else format_real(value)


def cmd_eval(cfg: RunConfig, hyper_path: Path, hyper_b_path: Path | None, dataset_path: Path | None) -> int:
    meta = None
    if dataset_path is not None:
        if not dataset_path.is_file():
            raise InputError(f"dataset file not found: {dataset_path}")
        meta = load_dataset(dataset_path, seed=cfg.seed)

    eval_cfg = EvalConfig(
        n_test_tasks=cfg.eval_params["n_test_tasks"],
        n_test_inputs=cfg.eval_params["n_test_inputs"],
        t_tr_test=cfg.eval_params["t_tr_test"],
        q=cfg.spec.q,
        seed=cfg.seed,
    )
    cfg.output_dir.mkdir(parents=True, exist_ok=True)

    reports: list[tuple[str, EvalReport]] = []
    paths = [hyper_path] if hyper_b_path is None else [hyper_path, hyper_b_path]
    for path in paths:
        hyper = _load_hyper(path)
        report = monte_carlo_eval(hyper, eval_cfg, meta=meta, spec=cfg.spec, threads=cfg.threads)
        label = _label(path)
        reports.append((label, report))
        text_path = cfg.output_dir / f"eval-{label}.txt"
        csv_path = cfg.output_dir / f"eval-{label}.csv"
        _write(text_path, report.to_key_values())
        _write(csv_path, ",".join(EVAL_REPORT_COLUMNS) + "\n" + report.to_csv_row() + "\n")
        print(
            f"{label}: prior_inclusion={report.prior_inclusion:.6g} "
            f"posterior_inclusion={report.posterior_inclusion:.6g} mse={report.mse:.6g}"
        )

    if len(reports) == 2:
        (label_a, rep_a), (label_b, rep_b) = reports
        lines_csv = [f"metric,{label_a},{label_b}"]
        lines_txt = [f"{'metric':<34} {label_a:>22} {label_b:>22}"]
        for key in _COMPARISON_ROWS:
            cell_a, cell_b = _report_cell(rep_a, key), _report_cell(rep_b, key)
            lines_csv.append(f"{key},{cell_a},{cell_b}")
            lines_txt.append(f"{key:<34} {cell_a:>22} {cell_b:>22}")
        _write(cfg.output_dir / "comparison.csv", "\n".join(lines_csv) + "\n")
        _write(cfg.output_dir / "comparison.txt", "\n".join(lines_txt) + "\n")
        print(f"wrote comparison over {len(_COMPARISON_ROWS)} metrics")
    return EXIT_OK


def _feasibility_line(result, n: int, t_eval: int, delta: float) -> str:
    return (
        f"feasible={'true' if result.feasible else 'false'} "
        f"margin={format_real(result.margin)} "
        f"gamma_star={format_real(result.gamma_star)} "
        f"p_star={format_real(result.p_star)} "
        f"n={n} t_eval={t_eval} delta={format_real(delta)}"
    )


def cmd_feasibility(args) -> int:
    if args.min_n is not None:
        try:
            delta, t_eval = float(args.min_n[0]), int(args.min_n[1])
        except ValueError as exc:
            raise InputError(f"--min-n expects DELTA T_EVAL, got {args.min_n!r}") from exc
        minimal = min_tasks_for_delta(delta, t_eval)
        if args.json:
            print(dumps({"min_n": minimal, "delta": delta, "t_eval": t_eval}))
        else:
            print(f"min_n={minimal} delta={format_real(delta)} t_eval={t_eval}")
        return EXIT_OK
    if args.n is None or args.t_eval is None or args.delta is None:
        raise InputError("feasibility needs n, t_eval and delta (or --min-n DELTA T_EVAL)")
    n, t_eval, delta = int(args.n), int(args.t_eval), float(args.delta)
    if n < 1 or t_eval < 1:
        raise InputError("n and t_eval must be >= 1")
    result = feasibility_check(n, [t_eval] * n, delta)
    if args.json:
        print(
            dumps(
                {
                    "feasible": result.feasible,
                    "margin": result.margin,
                    "gamma_star": result.gamma_star,
                    "p_star": result.p_star,
                    "n": n,
                    "t_eval": t_eval,
                    "delta": delta,
                }
            )
        )
    else:
        print(_feasibility_line(result, n, t_eval, delta))
    return EXIT_OK if result.feasible else EXIT_INFEASIBLE


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.is_file():
        raise InputError(f"CSV file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        rows = list(reader)
    if not rows:
        raise InputError(f"{path}: file is empty")
    header, body = rows[0], rows[1:]
    if not body:
        raise InputError(f"{path}: no data rows")
    return header, body


def _parse_floats(path: Path, body: list[list[str]], width: int) -> list[list[float]]:
    parsed = []
    for index, row in enumerate(body, start=2):
        if len(row) != width:
            raise InputError(f"{path}: line {index}: expected {width} fields, got {len(row)}")
        try:
            parsed.append([float(cell) for cell in row])
        except ValueError as exc:
            raise InputError(f"{path}: line {index}: {exc}") from exc
    return parsed


def _plot_train_log(path: Path, body: list[list[str]], out: Path, threshold: float) -> None:
    data = _parse_floats(path, body, len(TRAIN_LOG_COLUMNS))
    column = {name: [row[i] for row in data] for i, name in enumerate(TRAIN_LOG_COLUMNS)}
    steps = column["step"]
    series = [
        Series("exact prior", steps, column["exact_prior_incl"]),
        Series("exact posterior", steps, column["exact_post_incl"]),
        Series("smoothed prior", steps, column["smoothed_prior_incl"], dash="5,3"),
        Series("smoothed posterior", steps, column["smoothed_post_incl"], dash="5,3"),
    ]
    line_chart(
        out,
        series,
        title=f"inclusion during training ({path.stem})",
        x_label="step",
        y_label="inclusion",
        threshold=threshold,
        threshold_label=f"target {threshold:g}",
    )


def _plot_fixture(path: Path, body: list[list[str]], out: Path) -> None:
    data = _parse_floats(path, body, len(FIXTURE_COLUMNS))
    panels = []
    by_func: dict[int, list[list[float]]] = {}
    for row in data:
        by_func.setdefault(int(row[0]), []).append(row)
    col = {name: i for i, name in enumerate(FIXTURE_COLUMNS)}
    for func_id in sorted(by_func):
        rows = by_func[func_id]
        xs = [r[col["x"]] for r in rows]

        def pick(name):
            return [r[col[name]] for r in rows]

        series = [
            Series("f", xs, pick("f"), color="#222", width=1.8),
            Series("a prior", xs, pick("a_prior_lo"), color="#1f77b4", width=1.0),
            Series("", xs, pick("a_prior_hi"), color="#1f77b4", width=1.0),
            Series("a posterior", xs, pick("a_post_lo"), color="#1f77b4", dash="5,3", width=1.0),
            Series("", xs, pick("a_post_hi"), color="#1f77b4", dash="5,3", width=1.0),
            Series("b prior", xs, pick("b_prior_lo"), color="#d62728", width=1.0),
            Series("", xs, pick("b_prior_hi"), color="#d62728", width=1.0),
            Series("b posterior", xs, pick("b_post_lo"), color="#d62728", dash="5,3", width=1.0),
            Series("", xs, pick("b_post_hi"), color="#d62728", dash="5,3", width=1.0),
        ]
        panels.append((f"function {func_id}", series))
    panel_grid(out, panels, columns=2, title="truth (black), set a (blue), set b (red); dashed = posterior")


def cmd_plot(input_path: Path, output_path: Path | None, threshold: float) -> int:
    header, body = _read_csv(input_path)
    out = output_path if output_path is not None else input_path.with_suffix(".svg")
    if tuple(header) == TRAIN_LOG_COLUMNS:
        _plot_train_log(input_path, body, out, threshold)
    elif tuple(header) == FIXTURE_COLUMNS:
        _plot_fixture(input_path, body, out)
    else:
        raise InputError(
            f"{input_path}: line 1: unrecognized header; expected a training log "
            f"({','.join(TRAIN_LOG_COLUMNS)}) or an interval fixture "
            f"({','.join(FIXTURE_COLUMNS)})"
        )
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="trustbayes", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--threads", type=int, help=f"worker cap (also {THREADS_ENV})")

    p_gen = sub.add_parser("gen", help="generate a meta dataset")
    add_common(p_gen)
    p_gen.add_argument("--n", type=int, help="number of tasks")
    p_gen.add_argument("--t-tr", dest="t_tr", type=int)
    p_gen.add_argument("--t-eval", dest="t_eval", type=int)

    p_train = sub.add_parser("train", help="meta-train hyperparameters")
    add_common(p_train)
    p_train.add_argument("--dataset", help="dataset JSONL (default: <output_dir>/dataset.jsonl)")
    p_train.add_argument("--method", choices=METHODS + ("both",))
    p_train.add_argument("--delta", type=float)
    p_train.add_argument("--q", type=float)
    p_train.add_argument("--steps", type=int)

    p_eval = sub.add_parser("eval", help="Monte Carlo evaluation of hyperparameters")
    add_common(p_eval)
    p_eval.add_argument("--hyper", required=True, help="hyperparameter JSON file")
    p_eval.add_argument("--hyper-b", dest="hyper_b", help="second set for a side-by-side table")
    p_eval.add_argument("--dataset", help="meta dataset for the eval-split rows")
    p_eval.add_argument("--q", type=float)
    p_eval.add_argument("--n-test-tasks", dest="n_test_tasks", type=int)
    p_eval.add_argument("--n-test-inputs", dest="n_test_inputs", type=int)
    p_eval.add_argument("--t-tr-test", dest="t_tr_test", type=int)

    p_feas = sub.add_parser("feasibility", help="certification feasibility for (n, t_eval, delta)")
    p_feas.add_argument("n", nargs="?", type=int)
    p_feas.add_argument("t_eval", nargs="?", type=int)
    p_feas.add_argument("delta", nargs="?", type=float)
    p_feas.add_argument("--min-n", dest="min_n", nargs=2, metavar=("DELTA", "T_EVAL"),
                        help="print the minimal feasible task count")
    p_feas.add_argument("--json", action="store_true")

    p_plot = sub.add_parser("plot", help="render a training log or fixture CSV as SVG")
    p_plot.add_argument("input", help="CSV file")
    p_plot.add_argument("--output", help="SVG path (default: input with .svg)")
    p_plot.add_argument("--threshold", type=float, default=0.9,
                        help="reference line for training-log plots")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "feasibility":
            return cmd_feasibility(args)
        if args.command == "plot":
            out = Path(args.output) if args.output else None
            return cmd_plot(Path(args.input), out, args.threshold)

        cfg = load_config(args.config, args)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train":
            dataset = Path(args.dataset) if args.dataset else cfg.output_dir / "dataset.jsonl"
            return cmd_train(cfg, dataset)
        if args.command == "eval":
            dataset = Path(args.dataset) if args.dataset else None
            hyper_b = Path(args.hyper_b) if args.hyper_b else None
            return cmd_eval(cfg, Path(args.hyper), hyper_b, dataset)
        raise InputError(f"unknown command {args.command!r}")
    except FeasibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except TrustBayesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def entry() -> None:
    sys.exit(main())
