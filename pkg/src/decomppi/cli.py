"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 a verification
check failed, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DecompPIError, PolicyNotEvaluableError
from .model import load_instance, validate_instance

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse's own exit code 2 would collide with "verification failed"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _finite(obj):
    """Replace non-finite floats (e.g. an infinite gap ratio) with strings so the JSON stays strict."""
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


# -- subcommands --------------------------------------------------------------


def cmd_validate(args) -> int:
    inst = load_instance(args.instance)
    report = validate_instance(inst)
    print(report)
    return EXIT_OK if report.ok else EXIT_USAGE


def cmd_simulate(args) -> int:
    from .coupling import draw_tape, policy_rng, run_on_tape
    from .harness.evaluation import evaluate_exact
    from .harness.sweep import build_policy
    from .model import require_valid
    from .optimal import ExactOptimalPolicy, solve_exact_optimal
    from .policies import EligibilityRule
    from .rng import derive_seed

    inst = load_instance(args.instance)
    if args.budget is not None:
        inst = inst.with_budget(args.budget)
    require_valid(inst)
    if args.replications < 1:
        raise UsageError("--replications must be >= 1")
    elig = EligibilityRule.from_dict({"mode": args.eligibility, "k": args.streak, "warmup": args.warmup})
    spec = {"kind": args.policy}
    if args.model:
        spec["model"] = args.model
    if args.dataset:
        spec["dataset"] = args.dataset
    policy = build_policy(spec, base_dir=Path.cwd())
    if isinstance(policy, ExactOptimalPolicy) or args.export_optimal:
        table = solve_exact_optimal(inst, elig)
        if isinstance(policy, ExactOptimalPolicy):
            policy = ExactOptimalPolicy(table, policy.label, elig)
        if args.export_optimal:
            Path(args.export_optimal).write_text(table.dumps() + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "budget", "replication", "total_reward", "verification_rate"])
    tapes = []
    for r in range(args.replications):
        seed = args.seed if args.replications == 1 else derive_seed(args.seed, r)
        tape = draw_tape(inst, seed)
        tr = run_on_tape(inst, policy, tape, elig, policy_rng(seed, policy))
        w.writerow([policy.label, inst.budget, r, int(tr.total_reward), f"{tr.verification_rate:.10f}"])
        if args.dump_tape:
            tapes.append(tape.to_dict())
    _write(args.out, buf.getvalue())
    if args.dump_tape:
        Path(args.dump_tape).write_text(json.dumps(tapes[0] if len(tapes) == 1 else tapes) + "\n")
    if args.exact:
        try:
            ev = evaluate_exact(inst, policy, elig)
            print(f"# exact expected total reward: {ev.value:.12f}", file=sys.stderr)
        except (PolicyNotEvaluableError, DecompPIError) as exc:
            print(f"# exact evaluation unavailable: {exc}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .harness.sweep import ExperimentConfig, budget_sweep

    cfg = ExperimentConfig.load(args.config)
    out = args.out or cfg.raw.get("output")
    if out is None:
        raise UsageError("no output directory: pass --out or set 'output' in the config")
    if args.replications is not None:
        if args.replications < 1:
            raise UsageError("--replications must be >= 1")
        cfg.replications = args.replications
    out = Path(out)
    result = budget_sweep(cfg, out)
    for row in result.summary:
        if row.exact_flag:
            print(
                f"warning: {row.policy} B={row.budget}: simulated mean {row.mean:.4f} is more than 4 standard errors"
                f" from the exact value {row.exact:.4f}",
                file=sys.stderr,
            )
    print(f"wrote {out / 'results.csv'}, {out / 'summary.csv'}, {out / 'targeted.csv'}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .harness.checks import SUITES, run_suite

    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    names = SUITES if args.suite == "all" else (args.suite,)
    reports = [run_suite(n, args.trials, args.seed, args.fault) for n in names]
    doc = {
        "seed": args.seed,
        "trials": args.trials,
        "fault": args.fault,
        "passed": all(r.passed for r in reports),
        "suites": [_finite(r.to_dict()) for r in reports],
    }
    _write(args.report, _dump_json(doc))
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.suite}: {r.checks} checks, {len(r.failures)} failures", file=sys.stderr)
    return EXIT_OK if doc["passed"] else EXIT_VERIFY


def cmd_gen_data(args) -> int:
    from .offline.synthetic import generate_synthetic_population

    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config} is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("population config must be a JSON object")
        cfg.pop("seed", None)
    for key in ("n", "horizon", "budget"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    inst, dataset = generate_synthetic_population(cfg, args.seed)
    dataset.save(args.out)
    if args.instance_out:
        Path(args.instance_out).write_text(inst.to_json() + "\n")
    print(f"wrote {len(dataset)} patients, {dataset.n_interventions} interventions to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_fit(args) -> int:
    from .offline import LoggedDataset, fit_ridge

    dataset = LoggedDataset.load(args.dataset)
    model = fit_ridge(dataset, args.lam, args.eligible_only, args.warmup)
    model.save(args.out)
    print(f"wrote ridge model ({model.theta0.size} features) to {args.out}", file=sys.stderr)
    return EXIT_OK


def score_table(model, dataset, day: int, budget: int, warmup: int = 7, streak: int = 2, remaining_days=None):
    """Rows ``(rank, patient_id, zhat, remaining_days, eligible, selected)`` sorted by z-hat.

    Patients outside their usable window at ``day`` are skipped. Eligible
    means ``streak`` consecutive days without verification up to ``day``.
    """
    from .offline import featurize
    from .offline.ridge import zhat
    from .policies import top_b

    ids, feats, left, elig = [], [], [], []
    for i, log in enumerate(dataset.patients):
        if not (log.t_start + warmup <= day <= log.t_end):
            continue
        k = day - log.t_start
        ids.append(log.id)
        feats.append(featurize(dataset, i, day, warmup))
        left.append(log.t_end - day if remaining_days is None else remaining_days)
        elig.append(k + 1 >= streak and not any(log.v[k - streak + 1 : k + 1]))
    if not ids:
        return []
    z = np.asarray(zhat(model, np.vstack(feats), np.asarray(left, dtype=float)), dtype=float)
    z = np.where(z == 0.0, 0.0, z)  # no negative zeros in the output
    elig = np.asarray(elig, dtype=bool)
    chosen = set(top_b(z, elig, budget).tolist())
    order = sorted(range(len(ids)), key=lambda j: (-z[j], ids[j]))
    return [(r + 1, ids[j], float(z[j]), int(left[j]), bool(elig[j]), j in chosen) for r, j in enumerate(order)]


def cmd_score(args) -> int:
    from .offline import LoggedDataset, RidgeModel

    model = RidgeModel.load(args.model)
    dataset = LoggedDataset.load(args.dataset)
    if args.budget < 0:
        raise UsageError("--budget must be >= 0")
    if args.remaining_days is not None and args.remaining_days < 0:
        raise UsageError("--remaining-days must be >= 0")
    rows = score_table(model, dataset, args.day, args.budget, args.warmup, args.streak, args.remaining_days)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "patient", "zhat", "remaining_days", "eligible", "selected"])
    for rank, pid, z, left, el, sel in rows:
        w.writerow([rank, pid, f"{z:.10f}", left, int(el), int(sel)])
    _write(args.out, buf.getvalue())
    print(f"selected {sum(r[5] for r in rows)} of {len(rows)} scored patients at day {args.day}", file=sys.stderr)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .harness.checks import FAULTS, SUITES

    parser = _Parser(prog="decomppi", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check an instance file")
    p.add_argument("--instance", required=True, help="instance JSON file")
    p.set_defaults(func=cmd_validate)

    kinds = ["null", "random-baseline", "decomp-pi-oracle", "myopic-oracle", "exact-optimal", "decomp-pi-estimated", "thompson-linear"]
    p = sub.add_parser("simulate", help="simulate one policy on an instance")
    p.add_argument("--instance", required=True, help="instance JSON file")
    p.add_argument("--policy", choices=kinds, default="decomp-pi-oracle")
    p.add_argument("--budget", type=int, help="override the instance budget")
    p.add_argument("--seed", type=int, default=0, help="tape and policy seed")
    p.add_argument("--replications", type=int, default=1, help="independent runs (seeds derived from --seed when > 1)")
    p.add_argument("--eligibility", choices=["state-zero", "streak"], default="state-zero")
    p.add_argument("--streak", type=int, default=2, help="non-verification days required in streak mode")
    p.add_argument("--warmup", type=int, default=0, help="days after enrollment before a patient is eligible")
    p.add_argument("--model", help="ridge model JSON (decomp-pi-estimated)")
    p.add_argument("--dataset", help="logged dataset (thompson-linear prior, or fitting decomp-pi-estimated)")
    p.add_argument("--out", help="CSV output path (default stdout)")
    p.add_argument("--dump-tape", metavar="FILE", help="write the Bernoulli tape(s) as JSON")
    p.add_argument("--export-optimal", metavar="FILE", help="write the exact optimal policy table as JSON")
    p.add_argument("--exact", action="store_true", help="also print the exact expected reward to stderr when feasible")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a budget sweep from an experiment config")
    p.add_argument("--config", required=True, help="experiment config JSON (see schemas/experiment.schema.json)")
    p.add_argument("--out", help="output directory (default: the config's 'output')")
    p.add_argument("--replications", type=int, help="override the config's replication count")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="randomized certification of the approximation guarantees")
    p.add_argument("--suite", choices=[*SUITES, "all"], default="all")
    p.add_argument("--trials", type=int, default=100, help="random instances per suite (>= 1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fault", choices=FAULTS, help="inject a known bug (negative control)")
    p.add_argument("--report", help="JSON report path (default stdout)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen-data", help="generate a synthetic logged dataset")
    p.add_argument("--config", help="population config JSON (defaults used when omitted)")
    p.add_argument("--n", type=int, help="number of patients")
    p.add_argument("--horizon", type=int, help="number of days")
    p.add_argument("--budget", type=int, help="daily budget of the logging policy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset path (JSON lines)")
    p.add_argument("--instance-out", help="also write the ground-truth instance JSON")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("fit", help="fit the ridge intervention-value model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="ridge penalty")
    p.add_argument("--eligible-only", action="store_true", help="train only on streak-eligible days")
    p.add_argument("--warmup", type=int, default=7)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="rank patients by estimated intervention value on one day")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--day", type=int, required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--warmup", type=int, default=7)
    p.add_argument("--streak", type=int, default=2)
    p.add_argument("--remaining-days", type=int, help="override every patient's remaining days")
    p.add_argument("--out", help="CSV output path (default stdout)")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DecompPIError, OSError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
