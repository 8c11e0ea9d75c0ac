"""Budget sweeps over coupled replications, with CSV output."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from ..coupling import BernoulliTape, Trajectory, draw_tape, policy_rng, run_on_tape
from ..errors import ConfigError, PolicyNotEvaluableError
from ..model import Instance, load_instance, require_valid
from ..offline import LoggedDataset, RidgeModel, build_samples, fit_ridge, generate_synthetic_population
from ..optimal import ExactOptimalPolicy
from ..policies import (
    DecompPIOraclePolicy,
    EligibilityRule,
    EstimatedDecompPIPolicy,
    LinearPosterior,
    MyopicOraclePolicy,
    NullPolicy,
    Policy,
    RandomBaselinePolicy,
    ThompsonLearner,
    ThompsonLinearPolicy,
)
from ..rng import derive_seed, label_key
from .evaluation import evaluate_exact

DETAIL_HEADER = ["policy", "budget", "replication", "total_reward", "verification_rate"]
SUMMARY_HEADER = ["policy", "budget", "mean", "ci95_halfwidth", "exact_value"]
TARGETED_HEADER = ["policy", "budget", "count", "mean_tau", "mean_p", "mean_remaining"]
Z95 = 1.959963984540054

log = logging.getLogger(__name__)


def load_schema() -> dict:
    return json.loads(resources.files("decomppi").joinpath("schemas/experiment.schema.json").read_text())


def validate_config(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "/".join(str(x) for x in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {path}: {e.message}")


@dataclass
class ExperimentConfig:
    raw: dict
    instance: Instance
    dataset: LoggedDataset | None
    policy_specs: list[dict]
    budgets: list[int]
    eligibility: EligibilityRule
    replications: int = 50
    seed: int = 0
    exact_cap: int = 8
    base_dir: Path = field(default_factory=Path.cwd)
    population: dict | None = None

    @classmethod
    def from_dict(cls, cfg: dict, base_dir=None) -> "ExperimentConfig":
        validate_config(cfg)
        base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        seed = int(cfg.get("seed", 0))
        src = cfg["instance"]
        dataset = population = None
        if "inline" in src:
            inst = Instance.from_dict(src["inline"])
        elif "file" in src:
            inst = load_instance(base_dir / src["file"])
        else:
            population = dict(src["synthetic"])
            pop_seed = int(population.pop("seed", derive_seed(seed, 100)))
            inst, dataset = generate_synthetic_population(population, pop_seed)
        require_valid(inst)
        labels = [p.get("label", p["kind"]) for p in cfg["policies"]]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"config error at policies: duplicate policy labels {labels}")
        default_elig = {"mode": "streak", "k": 2, "warmup": 7} if "synthetic" in src else None
        return cls(
            raw=cfg,
            instance=inst,
            dataset=dataset,
            policy_specs=list(cfg["policies"]),
            budgets=[int(b) for b in cfg.get("budgets", [inst.budget])],
            eligibility=EligibilityRule.from_dict(cfg.get("eligibility", default_elig)),
            replications=int(cfg.get("replications", 50)),
            seed=seed,
            exact_cap=int(cfg.get("exact_cap", 8)),
            base_dir=base_dir,
            population=population,
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            cfg = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(cfg, path.parent)


def thompson_prior(dataset: LoggedDataset, lam: float = 1.0, noise_variance: float = 1.0,
                   exploration: float = 1.0, eligible_only: bool = False) -> ThompsonLearner:
    """Posterior whose mean is the per-action ridge fit of next-day verification."""
    s = build_samples(dataset)
    keep = s.eligible if eligible_only else np.ones(s.action.size, dtype=bool)
    arms = []
    for a in (0, 1):
        m = keep & (s.action == a)
        if not m.any():
            raise ConfigError(f"no logged samples with action {a} for the Thompson prior")
        arms.append(LinearPosterior.from_data(s.X[m], s.next_v[m], lam, noise_variance))
    return ThompsonLearner(tuple(arms), exploration)


def build_policy(
    spec: dict,
    dataset: LoggedDataset | None = None,
    base_dir: Path | None = None,
    seed: int = 0,
    population: dict | None = None,
) -> Policy:
    """Policy from one config entry.

    Learned policies train on, in order of preference: a ``dataset`` file, a
    fresh ``training`` cohort (inheriting unset keys from ``population``), or
    the log that came with a synthetic instance.
    """
    kind = spec["kind"]
    label = spec.get("label", kind)
    base_dir = base_dir or Path.cwd()

    def logged() -> LoggedDataset:
        if "dataset" in spec:
            return LoggedDataset.load(base_dir / spec["dataset"])
        if "training" in spec:
            cohort = {**(population or {}), **spec["training"]}
            cohort_seed = int(cohort.pop("seed", derive_seed(seed, 200, label_key(label))))
            return generate_synthetic_population(cohort, cohort_seed)[1]
        if dataset is None:
            raise ConfigError(f"policy {label!r} needs logged data: give 'dataset' or use a synthetic instance")
        return dataset

    if kind == "null":
        return NullPolicy(label)
    if kind == "random-baseline":
        return RandomBaselinePolicy(label)
    if kind == "decomp-pi-oracle":
        return DecompPIOraclePolicy(label, infinite=bool(spec.get("infinite", False)))
    if kind == "myopic-oracle":
        return MyopicOraclePolicy(label)
    if kind == "exact-optimal":
        return ExactOptimalPolicy(label=label)
    if kind == "decomp-pi-estimated":
        if "model" in spec:
            model = RidgeModel.load(base_dir / spec["model"])
        else:
            model = fit_ridge(logged(), float(spec.get("lambda", 1.0)), bool(spec.get("eligible_only", False)))
        return EstimatedDecompPIPolicy(model, label)
    if kind == "thompson-linear":
        prior = thompson_prior(
            logged(),
            float(spec.get("lambda", 1.0)),
            float(spec.get("noise_variance", 1.0)),
            float(spec.get("exploration", 1.0)),
            bool(spec.get("eligible_only", False)),
        )
        return ThompsonLinearPolicy(prior, label)
    raise ConfigError(f"unknown policy kind {kind!r}")


@dataclass
class ChosenStats:
    count: int = 0
    tau: float = 0.0
    p: float = 0.0
    remaining: float = 0.0

    def add(self, inst: Instance, tr: Trajectory) -> None:
        ii, tt = tr.chosen()
        self.count += ii.size
        self.tau += float(inst.tau[ii].sum())
        self.p += float(inst.p[ii].sum())
        self.remaining += float((inst.ends[ii] - tt).sum())

    def means(self) -> dict:
        if self.count == 0:
            return {}
        return {
            "count": self.count,
            "mean_tau": self.tau / self.count,
            "mean_p": self.p / self.count,
            "mean_remaining": self.remaining / self.count,
        }


def targeted_patient_stats(inst: Instance, trajectories) -> dict[str, dict]:
    """Mean true ``tau``, base probability ``p`` and remaining days of chosen patients, per label.

    Labels whose runs never intervene are omitted.
    """
    acc: dict[str, ChosenStats] = {}
    for tr in trajectories:
        acc.setdefault(tr.label, ChosenStats()).add(inst, tr)
    return {k: v.means() for k, v in acc.items() if v.count}


@dataclass
class SummaryRow:
    policy: str
    budget: int
    mean: float
    ci95: float
    exact: float | None
    rewards: list[float]
    exact_flag: bool = False

    @property
    def stderr(self) -> float:
        n = len(self.rewards)
        return float(np.std(self.rewards, ddof=1) / math.sqrt(n)) if n > 1 else 0.0


@dataclass
class EvaluationResult:
    rows: list[tuple]
    summary: list[SummaryRow]
    targeted: dict
    active_steps: int

    def cell(self, policy: str, budget: int) -> SummaryRow:
        for r in self.summary:
            if r.policy == policy and r.budget == budget:
                return r
        raise KeyError((policy, budget))

    def rate(self, policy: str, budget: int) -> float:
        return self.cell(policy, budget).mean / self.active_steps

    def rate_ci(self, policy: str, budget: int) -> float:
        return self.cell(policy, budget).ci95 / self.active_steps


def _fmt(x: float) -> str:
    return f"{x:.10f}"


def detail_row(row) -> list[str]:
    policy, budget, rep, total, rate = row
    return [policy, str(budget), str(rep), str(int(total)), _fmt(rate)]


def summary_csv(result: EvaluationResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for r in result.summary:
        w.writerow([r.policy, r.budget, _fmt(r.mean), _fmt(r.ci95), "" if r.exact is None else _fmt(r.exact)])
    return buf.getvalue()


def targeted_csv(result: EvaluationResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TARGETED_HEADER)
    for (policy, budget), m in result.targeted.items():
        if m:
            w.writerow([policy, budget, m["count"], _fmt(m["mean_tau"]), _fmt(m["mean_p"]), _fmt(m["mean_remaining"])])
    return buf.getvalue()


def budget_sweep(config: ExperimentConfig, out_dir=None) -> EvaluationResult:
    """Every (policy, budget) over ``replications`` coupled runs.

    Replication ``r`` uses one tape for all policies and budgets. With
    ``out_dir`` the per-run CSV is written row by row as runs finish.
    """
    inst = config.instance
    policies = [
        build_policy(s, config.dataset, config.base_dir, config.seed, config.population) for s in config.policy_specs
    ]
    seeds = [derive_seed(config.seed, r) for r in range(config.replications)]
    tapes: dict[int, BernoulliTape] = {}
    rows, summary, targeted = [], [], {}
    fh = writer = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "results.csv", "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DETAIL_HEADER)
    try:
        for pol in policies:
            for budget in config.budgets:
                ib = inst.with_budget(budget)
                totals = []
                stats = ChosenStats()
                for r, seed in enumerate(seeds):
                    if r not in tapes:
                        tapes[r] = draw_tape(inst, seed)
                    tr = run_on_tape(ib, pol, tapes[r], config.eligibility, policy_rng(seed, pol))
                    stats.add(ib, tr)
                    row = (pol.label, budget, r, tr.total_reward, tr.verification_rate)
                    rows.append(row)
                    totals.append(tr.total_reward)
                    if writer is not None:
                        writer.writerow(detail_row(row))
                        fh.flush()
                exact = None
                if inst.n <= config.exact_cap and pol.evaluable and not config.eligibility.needs_history:
                    try:
                        exact = evaluate_exact(ib, pol, config.eligibility).value
                    except PolicyNotEvaluableError:
                        exact = None
                n = len(totals)
                sd = float(np.std(totals, ddof=1)) if n > 1 else 0.0
                row = SummaryRow(pol.label, budget, float(np.mean(totals)), Z95 * sd / math.sqrt(n), exact, totals)
                if exact is not None and abs(row.mean - exact) > 4 * row.stderr + 1e-9:
                    row.exact_flag = True
                    log.warning("%s at B=%d: simulated mean %.4f is more than 4 SE from exact %.4f",
                                pol.label, budget, row.mean, exact)
                summary.append(row)
                targeted[(pol.label, budget)] = stats.means()
    finally:
        if fh is not None:
            fh.close()
    result = EvaluationResult(rows, summary, targeted, inst.active_steps)
    if out_dir is not None:
        Path(out_dir, "summary.csv").write_text(summary_csv(result))
        Path(out_dir, "targeted.csv").write_text(targeted_csv(result))
    return result
