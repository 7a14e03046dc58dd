"""Seeded multi-trial experiment runner and command-line entry point."""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from catcma.benchmarks import REGISTRY, make_objective
from catcma.hyperparams import (
    XI,
    ProblemDims,
    binomial_tail_probability,
    default_hyperparameters,
    margin_variant,
)
from catcma.optimizer import CatCMA

log = logging.getLogger(__name__)

CSV_HEADER = "trial,seed,eval_count,best_f,sigma,min_eig,max_eig,q_best_max,delta"
QUANTILE_NOTE = "quantiles: linear interpolation between order statistics (numpy 'linear')"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    function: str = "SphereCOM"
    n_co: int = 3
    n_ca: int = 3
    categories: tuple[int, ...] = (3,)
    margin: str = "recommended"
    mode: str = "full"
    trials: int = 20
    budget: int = 10_000
    target: Optional[float] = None
    seed: int = 0
    init_low: float = -3.0
    init_high: float = 3.0
    sigma0: float = 1.0
    out: Optional[str] = None
    checkpoints: Optional[tuple[int, ...]] = None

    @property
    def dims(self) -> ProblemDims:
        cats = self.categories
        if len(cats) == 1:
            cats = cats * self.n_ca
        if len(cats) != self.n_ca:
            raise ConfigError(f"need 1 or {self.n_ca} category counts, got {len(cats)}")
        return ProblemDims(self.n_co, cats)

    def validate(self) -> None:
        if self.function not in REGISTRY:
            raise ConfigError(f"unknown function {self.function!r}; choose from {sorted(REGISTRY)}")
        if self.mode not in ("full", "no_enhancement"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.init_low < self.init_high:
            raise ConfigError("init box needs init_low < init_high")
        try:
            dims = self.dims
            hp = default_hyperparameters(dims, _margin_value(self.margin))
            make_objective(self.function, dims)
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.budget < hp.lam:
            raise ConfigError(f"budget {self.budget} is below the population size {hp.lam}")


def _margin_value(margin: str):
    if margin in ("large", "small", "small-alt", "recommended"):
        return margin
    try:
        return float(margin)
    except ValueError:
        raise ConfigError(f"unknown margin setting {margin!r}") from None


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.replace(",", " ").split())


_PARSERS = {
    "function": str,
    "n_co": int,
    "n_ca": int,
    "categories": _parse_ints,
    "k": _parse_ints,
    "margin": str,
    "mode": lambda v: v.replace("-", "_"),
    "trials": int,
    "budget": lambda v: int(float(v)),
    "target": float,
    "seed": int,
    "init_low": float,
    "init_high": float,
    "sigma0": float,
    "out": str,
    "checkpoints": _parse_ints,
}


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values["categories" if key == "k" else key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return values


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values = parse_config_text(text)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


@dataclass
class TrialRecord:
    trial: int
    seed: int
    # columns: eval_count, best_f, sigma, min_eig, max_eig, q_best_max, delta
    rows: np.ndarray = field(repr=False)

    @property
    def eval_counts(self) -> np.ndarray:
        return self.rows[:, 0]

    @property
    def best_f(self) -> np.ndarray:
        return self.rows[:, 1]

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for row in self.rows:
            fields = [str(self.trial), str(self.seed), str(int(row[0]))]
            fields += [f"{v:.17g}" for v in row[1:]]
            lines.append(",".join(fields))
        return "\n".join(lines) + "\n"


def run_trial(config: ExperimentConfig, trial: int) -> TrialRecord:
    seed = config.seed + trial
    dims = config.dims
    hp = default_hyperparameters(dims, _margin_value(config.margin))
    init_rng = np.random.default_rng([seed, 1])
    m0 = init_rng.uniform(config.init_low, config.init_high, dims.n_co)
    opt = CatCMA(dims, mean=m0, sigma=config.sigma0, mode=config.mode, seed=seed, hp=hp)
    objective = make_objective(config.function, dims)

    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        while opt.eval_count + hp.lam <= config.budget:
            candidates = opt.ask()
            opt.tell([objective(c.x, c.c) for c in candidates])
            rows.append(_diagnostics(opt, objective.optimal_category))
            if config.target is not None and opt.best.f <= config.target:
                break
    return TrialRecord(trial, seed, np.array(rows).reshape(-1, 7))


def _diagnostics(opt: CatCMA, optimal_category: Optional[int]) -> list[float]:
    g, c = opt.gaussian, opt.categorical
    if g.dim:
        eig = np.linalg.eigvalsh(g.cov) * g.sigma**2
        min_eig, max_eig = float(eig[0]), float(eig[-1])
    else:
        min_eig = max_eig = math.nan
    if optimal_category is None:
        q_best = float(np.max(c.q))
    else:
        q_best = float(np.max(c.q[:, optimal_category]))
    return [opt.eval_count, opt.best.f, g.sigma, min_eig, max_eig, q_best, c.delta]


def default_checkpoints(lam: int, budget: int) -> list[int]:
    points = []
    k = 0
    while lam * 2**k <= budget:
        points.append(lam * 2**k)
        k += 1
    if not points or points[-1] != budget:
        points.append(budget)
    return points


def summarize(records: Sequence[TrialRecord], checkpoints: Sequence[int]) -> np.ndarray:
    """Rows of (checkpoint, median, q25, q75) of best-so-far f across trials."""
    if not records:
        raise ValueError("no records to summarize")
    table = []
    for point in checkpoints:
        values = []
        for rec in records:
            idx = np.searchsorted(rec.eval_counts, point, side="right") - 1
            values.append(rec.best_f[max(idx, 0)])
        q25, med, q75 = np.quantile(values, [0.25, 0.5, 0.75], method="linear")
        table.append((point, med, q25, q75))
    return np.array(table, dtype=float)


def format_summary(config: ExperimentConfig, table: np.ndarray) -> str:
    lines = [
        f"# function={config.function} n_co={config.n_co} n_ca={config.n_ca} "
        f"categories={','.join(map(str, config.dims.categories))} margin={config.margin} "
        f"mode={config.mode} trials={config.trials} budget={config.budget} seed={config.seed}",
        f"# {QUANTILE_NOTE}",
        "checkpoint,median,q25,q75",
    ]
    for point, med, q25, q75 in table:
        lines.append(f"{int(point)},{med:.17g},{q25:.17g},{q75:.17g}")
    return "\n".join(lines) + "\n"


def _worker_count(trials: int) -> int:
    env = os.environ.get("CATCMA_THREADS")
    if env:
        return max(1, min(trials, int(env)))
    return max(1, min(trials, os.cpu_count() or 1))


def run_experiment(config: ExperimentConfig) -> tuple[list[TrialRecord], np.ndarray]:
    """Run every trial, write per-trial CSVs and a summary when ``config.out`` is set."""
    config.validate()
    workers = _worker_count(config.trials)
    trials = range(config.trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_trial, [config] * config.trials, trials))
    else:
        records = [run_trial(config, t) for t in trials]

    for rec in records:
        log.info("trial %d (seed %d): best f %.3e after %d evals", rec.trial, rec.seed, rec.best_f[-1], rec.eval_counts[-1])

    lam = default_hyperparameters(config.dims, _margin_value(config.margin)).lam
    checkpoints = config.checkpoints or default_checkpoints(lam, config.budget)
    table = summarize(records, checkpoints)

    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        for rec in records:
            (out / f"trial_{rec.trial:03d}.csv").write_text(rec.to_csv(), encoding="utf-8")
        (out / "summary.txt").write_text(format_summary(config, table), encoding="utf-8")
    return records, table


# --- command line ------------------------------------------------------


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--function", choices=sorted(REGISTRY))
    p.add_argument("--nco", dest="n_co", type=int)
    p.add_argument("--nca", dest="n_ca", type=int)
    p.add_argument("--k", dest="categories", type=_parse_ints, help="categories per variable, e.g. 5 or 3,5,5")
    p.add_argument("--margin", help="large | small | small-alt | recommended | <float>")
    p.add_argument("--mode", choices=["full", "no-enhancement", "no_enhancement"])
    p.add_argument("--trials", type=int)
    p.add_argument("--budget", type=lambda v: int(float(v)))
    p.add_argument("--target", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catcma", description="CatCMA experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment configuration")
    run.add_argument("--config", help="key = value config file")
    _add_experiment_flags(run)

    margins = sub.add_parser("margins", help="print margin settings and the binomial tail check")
    margins.add_argument("--nca", type=int, required=True)
    margins.add_argument("--k", type=int, required=True)
    margins.add_argument("--nco", type=int, help="continuous dimension (default: same as --nca)")

    suite = sub.add_parser("bench-suite", help="margin and enhancement ablation grids")
    suite.add_argument("--quick", action="store_true", help="tiny grid, 2 trials, small budget")
    suite.add_argument("--out", default="bench-results")
    suite.add_argument("--trials", type=int)
    suite.add_argument("--budget", type=lambda v: int(float(v)))
    return parser


def _cmd_run(args) -> int:
    overrides = {
        key: getattr(args, key)
        for key in ("function", "n_co", "n_ca", "categories", "margin", "trials", "budget", "target", "seed", "out")
    }
    if args.mode:
        overrides["mode"] = args.mode.replace("-", "_")
    if args.config:
        config = load_config(args.config, **overrides)
    else:
        config = ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})
    config.validate()
    _, table = run_experiment(config)
    sys.stdout.write(format_summary(config, table))
    return 0


def _cmd_margins(args) -> int:
    n_co = args.nca if args.nco is None else args.nco
    dims = ProblemDims.uniform(n_co, args.nca, args.k)
    hp = default_hyperparameters(dims)
    lam = hp.lam
    print(f"n_co={n_co} n_ca={args.nca} K={args.k} lambda={lam}")
    for kind in ("recommended", "large", "small", "small-alt"):
        print(f"{kind:12s} {margin_variant(kind, dims, lam)[0]:.10g}")
    tail = binomial_tail_probability(lam, XI)
    verdict = "PASS" if tail >= 0.95 else "FAIL"
    print(f"tail P(Bin({lam}, {XI}) <= {lam - lam // 2}) = {tail:.6f}  >= 0.95: {verdict}")
    return 0


def bench_suite_configs(quick: bool, out: str, trials=None, budget=None) -> list[ExperimentConfig]:
    if quick:
        sizes, ks, method_dims = (3,), (3,), ((3, 3, 3),)
        trials = trials or 2
        budget = budget or 400
    else:
        sizes, ks = (3, 5, 10, 20), (3, 5, 10)
        method_dims = ((3, 3, 3), (5, 5, 5), (10, 10, 10))
        trials = trials or 20
        budget = budget or 50_000
    configs = []
    for fn in sorted(REGISTRY):
        for n in sizes:
            for k in ks:
                for margin in ("large", "small", "recommended"):
                    path = Path(out, "margin", f"{fn}_n{n}_k{k}_{margin}")
                    configs.append(
                        ExperimentConfig(fn, n, n, (k,), margin, "full", trials, budget, out=str(path))
                    )
        for n_co, n_ca, k in method_dims:
            for mode in ("full", "no_enhancement"):
                path = Path(out, "method", f"{fn}_n{n_co}_k{k}_{mode}")
                configs.append(
                    ExperimentConfig(fn, n_co, n_ca, (k,), "recommended", mode, trials, budget, out=str(path))
                )
    return configs


def _cmd_bench_suite(args) -> int:
    configs = bench_suite_configs(args.quick, args.out, args.trials, args.budget)
    print("group,function,n_co,n_ca,k,margin,mode,final_median,final_q25,final_q75")
    for config in configs:
        _, table = run_experiment(config)
        group = Path(config.out).parent.name
        _, med, q25, q75 = table[-1]
        print(
            f"{group},{config.function},{config.n_co},{config.n_ca},{config.categories[0]},"
            f"{config.margin},{config.mode},{med:.6g},{q25:.6g},{q75:.6g}",
            flush=True,
        )
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    commands = {"run": _cmd_run, "margins": _cmd_margins, "bench-suite": _cmd_bench_suite}
    try:
        return commands[args.command](args)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
