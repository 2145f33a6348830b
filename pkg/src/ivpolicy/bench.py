"""Replication harness for the synthetic scenarios.

Each replication draws a fresh training set, fits nuisances on its
observable projection, learns one rule per (scheme, kernel), and scores the
rule on an independent test draw: mean potential outcome under the rule
(from the test set's latent columns) and agreement with the known optimal
rule.  Replications are independent and seeded as ``seed XOR replication``,
so parallel and serial runs aggregate identical numbers.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .evaluation import classification_agreement
from .learn import LearnConfig, learn_policy
from .nuisance import NuisanceSet
from .seeding import derive_seed, rng_from
from .synth import ScenarioSpec, generate_scenario, true_rule
from .weights import SCHEMES

__all__ = ["BenchConfig", "BenchResult", "run_bench", "render_table"]


@dataclass(frozen=True)
class BenchConfig:
    scenarios: tuple = (1, 2, 3, 4)
    replications: int = 100
    n_train: int = 500
    n_test: int = 10_000
    schemes: tuple = ("OWL", "IV_IW_A", "IV_MR_A")
    kernels: tuple = ("linear",)
    iv_coef: float = 2.5
    seed: int = 0
    folds: int = 5
    lambda_grid: tuple | None = None
    n_jobs: int = 1
    max_failure_rate: float = 0.05

    def __post_init__(self):
        if self.replications < 1 or self.n_test < 1 or self.n_train < 1:
            raise ValueError("replications, n_train and n_test must be >= 1")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise ValueError(f"unknown schemes {bad}; valid: {', '.join(SCHEMES)}")
        if any(k not in ("linear", "gaussian") for k in self.kernels):
            raise ValueError("kernels must be 'linear' or 'gaussian'")
        if any(s not in (1, 2, 3, 4) for s in self.scenarios):
            raise ValueError("scenarios must be a subset of {1,2,3,4}")


@dataclass
class BenchResult:
    """Aggregates per (scenario, scheme, kernel): mean/sd of value and agreement."""

    cells: dict
    config: BenchConfig
    failures: dict = field(default_factory=dict)

    def cell(self, scenario: int, scheme: str, kernel: str) -> dict:
        return self.cells[(scenario, scheme, kernel)]


def _learn_config(cfg: BenchConfig, kernel: str, rep_seed: int) -> LearnConfig:
    kwargs = {"kernel": kernel, "folds": cfg.folds,
              "seed": derive_seed(rep_seed, label="cv")}
    if cfg.lambda_grid is not None:
        kwargs["lambda_grid"] = tuple(cfg.lambda_grid)
    return LearnConfig(**kwargs)


def _one_replication(args):
    cfg, scenario, rep = args
    rep_seed = derive_seed(cfg.seed, index=rep)
    spec_tr = ScenarioSpec(scenario, cfg.n_train, iv_coef=cfg.iv_coef)
    spec_te = ScenarioSpec(scenario, cfg.n_test, iv_coef=cfg.iv_coef)
    train = generate_scenario(spec_tr, rng_from(rep_seed, label="train"))
    test = generate_scenario(spec_te, rng_from(rep_seed, label="test"))
    opt = true_rule()

    out = {}
    obs = train.observable()
    try:
        ns = NuisanceSet.fit(obs)
    except Exception as exc:  # noqa: BLE001 - recorded, never silently dropped
        for scheme in cfg.schemes:
            for kernel in cfg.kernels:
                out[(scheme, kernel)] = ("fail", f"nuisance fit: {exc}")
        return rep, out
    for scheme in cfg.schemes:
        for kernel in cfg.kernels:
            try:
                rule = learn_policy(obs, ns, scheme, _learn_config(cfg, kernel, rep_seed))
                actions = np.asarray(rule.decision_values(test.L)) >= 0
                value = float(np.mean(np.where(actions, test.y_pos, test.y_neg)))
                agree = classification_agreement(rule, opt, test.L)
                out[(scheme, kernel)] = ("ok", (value, agree))
            except Exception as exc:  # noqa: BLE001
                out[(scheme, kernel)] = ("fail", str(exc))
    return rep, out


def run_bench(cfg: BenchConfig) -> BenchResult:
    """Run all replications (optionally in parallel) and aggregate.

    Individual replication failures are excluded from the averages and
    counted; a cell with more than ``max_failure_rate`` failures fails the
    whole run.
    """
    tasks = [(cfg, scenario, rep)
             for scenario in cfg.scenarios
             for rep in range(cfg.replications)]
    if cfg.n_jobs > 1:
        with multiprocessing.get_context("fork").Pool(cfg.n_jobs) as pool:
            raw = pool.map(_one_replication, tasks, chunksize=1)
    else:
        raw = [_one_replication(t) for t in tasks]

    per_cell = {}
    failures = {}
    for (cfg_, scenario, rep), (rep_back, res) in zip(tasks, raw):
        for (scheme, kernel), (status, payload) in res.items():
            key = (scenario, scheme, kernel)
            if status == "ok":
                per_cell.setdefault(key, []).append((rep_back, payload))
            else:
                failures.setdefault(key, []).append((rep_back, payload))

    cells = {}
    errors = []
    for scenario in cfg.scenarios:
        for scheme in cfg.schemes:
            for kernel in cfg.kernels:
                key = (scenario, scheme, kernel)
                ok = sorted(per_cell.get(key, []))
                n_fail = len(failures.get(key, []))
                if not ok:
                    errors.append(f"{key}: all {n_fail} replications failed")
                    continue
                values = np.array([v for _, (v, _) in ok])
                agrees = np.array([g for _, (_, g) in ok])
                cells[key] = {
                    "mean_value": float(values.mean()),
                    "sd_value": float(values.std(ddof=1)) if len(values) > 1 else 0.0,
                    "mean_agreement": float(agrees.mean()),
                    "sd_agreement": float(agrees.std(ddof=1)) if len(agrees) > 1 else 0.0,
                    "n_ok": len(ok),
                    "n_failed": n_fail,
                }
                if n_fail > cfg.max_failure_rate * cfg.replications:
                    errors.append(f"{key}: {n_fail}/{cfg.replications} replications failed")
    if errors:
        raise RuntimeError("benchmark failure rate exceeded: " + "; ".join(errors))
    return BenchResult(cells=cells, config=cfg,
                       failures={k: len(v) for k, v in failures.items()})


def _cell_text(mean: float, sd: float) -> str:
    return f"{100 * mean:.1f} ({100 * sd:.1f})"


def render_table(result: BenchResult, metric: str = "value") -> str:
    """TSV grid of 'mean (sd)' cells scaled x100, rows ordered by scenario."""
    if metric not in ("value", "agreement"):
        raise ValueError("metric must be 'value' or 'agreement'")
    cfg = result.config
    header = ["scenario", "kernel"] + list(cfg.schemes)
    lines = ["\t".join(header)]
    for scenario in sorted(cfg.scenarios):
        for kernel in cfg.kernels:
            row = [str(scenario), kernel]
            for scheme in cfg.schemes:
                cell = result.cells.get((scenario, scheme, kernel))
                if cell is None:
                    row.append("")
                else:
                    row.append(_cell_text(cell[f"mean_{metric}"], cell[f"sd_{metric}"]))
            lines.append("\t".join(row))
    return "\n".join(lines) + "\n"
