"""Synthetic patient populations with known ground truth.

Static covariates are independent standard normals. Each of ``p``, ``q``,
``tau`` is ``scale * BetaPPF(Phi(latent))`` where the latent is a standard
normal built from a linear combination of the covariates plus independent
noise, so the marginal law is exactly the configured (scaled) Beta while the
covariates carry signal about it. Draws violating ``p + q <= 1`` or
``p + tau <= 1`` are rejected and redrawn.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..errors import ConfigError
from ..model import Instance, PatientParams
from ..policies import EligibilityRule, NullPolicy, RandomBaselinePolicy
from ..rng import AUX, derive_seed, generator
from .dataset import LoggedDataset, PatientLog

DEFAULT_LAWS = {
    "p": {"beta": [2.0, 10.0], "scale": 1.0, "weights": [0.8]},
    "q": {"beta": [2.0, 14.0], "scale": 1.0, "weights": [0.0, 0.8]},
    "tau": {"beta": [2.0, 4.0], "scale": 0.5, "weights": [0.0, 0.0, 0.8]},
}


def default_law(name: str, d_static: int) -> dict:
    """The default law, dropping covariate weights beyond ``d_static``."""
    law = dict(DEFAULT_LAWS[name])
    law["weights"] = law["weights"][:d_static]
    return law


@dataclass
class ParamLaw:
    beta: tuple[float, float] | None = None
    scale: float = 1.0
    weights: tuple[float, ...] = ()
    constant: float | None = None

    @classmethod
    def from_dict(cls, d: dict, d_static: int) -> "ParamLaw":
        if "constant" in d:
            c = float(d["constant"])
            if not 0.0 <= c <= 1.0:
                raise ConfigError(f"invalid distribution config: constant {c} not in [0, 1]")
            return cls(constant=c)
        try:
            a, b = (float(x) for x in d["beta"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid distribution config: need 'beta': [a, b] or 'constant' ({exc!r})") from exc
        scale = float(d.get("scale", 1.0))
        w = tuple(float(x) for x in d.get("weights", ()))
        if a <= 0 or b <= 0 or not 0 < scale <= 1:
            raise ConfigError("invalid distribution config: beta shapes must be > 0 and scale in (0, 1]")
        if len(w) > d_static:
            raise ConfigError(f"invalid distribution config: {len(w)} weights for {d_static} static features")
        if sum(x * x for x in w) > 1.0:
            raise ConfigError("invalid distribution config: covariate weights must have norm <= 1")
        return cls((a, b), scale, w)

    def sample(self, X: np.ndarray, noise: np.ndarray) -> np.ndarray:
        if self.constant is not None:
            return np.full(X.shape[0], self.constant)
        w = np.zeros(X.shape[1])
        w[: len(self.weights)] = self.weights
        latent = X @ w + np.sqrt(max(0.0, 1.0 - w @ w)) * noise
        return self.scale * stats.beta.ppf(stats.norm.cdf(latent), *self.beta)


@dataclass
class PopulationConfig:
    n: int = 200
    horizon: int = 120
    budget: int = 10
    d_static: int = 13
    laws: dict = field(default_factory=dict)
    max_start: int | None = 40
    min_length: int = 40
    initial: str = "stationary"
    logging_kind: str = "random-baseline"
    logging_budget: int | None = None
    eligibility: EligibilityRule = field(default_factory=lambda: EligibilityRule("streak", 2, 7))
    max_tries: int = 1000

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationConfig":
        d = dict(d)
        try:
            d_static = int(d.get("d_static", 13))
            laws = {k: ParamLaw.from_dict(d.get(k, default_law(k, d_static)), d_static) for k in ("p", "q", "tau")}
            third = max(1, int(d.get("horizon", 120)) // 3)
            enroll = d.get("enrollment", {"max_start": third, "min_length": third})
            logging_cfg = d.get("logging", {})
            cfg = cls(
                n=int(d.get("n", 200)),
                horizon=int(d.get("horizon", 120)),
                budget=int(d.get("budget", 10)),
                d_static=d_static,
                laws=laws,
                max_start=None if enroll is None else int(enroll.get("max_start", third)),
                min_length=0 if enroll is None else int(enroll.get("min_length", third)),
                initial=str(d.get("initial", "stationary")),
                logging_kind=logging_cfg.get("kind", "random-baseline"),
                logging_budget=logging_cfg.get("budget"),
                eligibility=EligibilityRule.from_dict(d.get("eligibility", {"mode": "streak", "k": 2, "warmup": 7})),
                max_tries=int(d.get("max_tries", 1000)),
            )
        except (TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid population config: {exc!r}") from exc
        cfg.check()
        return cfg

    def check(self) -> None:
        if self.n < 1 or self.horizon < 1 or self.budget < 0 or self.d_static < 0:
            raise ConfigError("invalid population config: need n >= 1, horizon >= 1, budget >= 0")
        if self.max_start is not None:
            if not 1 <= self.max_start <= self.horizon:
                raise ConfigError("invalid population config: enrollment.max_start must be in [1, horizon]")
            if not 1 <= self.min_length <= self.horizon + 1 - self.max_start:
                raise ConfigError("invalid population config: enrollment.min_length must fit after max_start")
        if self.initial not in ("stationary", "zero", "one"):
            raise ConfigError(f"invalid population config: initial {self.initial!r}")
        if self.logging_kind not in ("random-baseline", "null"):
            raise ConfigError(f"invalid population config: logging kind {self.logging_kind!r}")
        if not self.laws:
            self.laws = {k: ParamLaw.from_dict(default_law(k, self.d_static), self.d_static) for k in ("p", "q", "tau")}


def sample_population(cfg: PopulationConfig, rng: np.random.Generator):
    """Covariates and valid ``(p, q, tau)`` for every patient, by rejection."""
    n, d = cfg.n, cfg.d_static
    X = np.zeros((n, d))
    vals = np.zeros((n, 3))
    todo = np.arange(n)
    for _ in range(cfg.max_tries):
        if todo.size == 0:
            break
        Xt = rng.standard_normal((todo.size, d))
        noise = rng.standard_normal((todo.size, 3))
        draw = np.column_stack([cfg.laws[k].sample(Xt, noise[:, j]) for j, k in enumerate(("p", "q", "tau"))])
        ok = (draw[:, 0] + draw[:, 1] <= 1.0) & (draw[:, 0] + draw[:, 2] <= 1.0)
        X[todo[ok]] = Xt[ok]
        vals[todo[ok]] = draw[ok]
        todo = todo[~ok]
    if todo.size:
        raise ConfigError(f"invalid distribution config: {todo.size} patients still invalid after {cfg.max_tries} redraws")
    return X, vals


def generate_synthetic_population(config: PopulationConfig | dict, seed: int) -> tuple[Instance, LoggedDataset]:
    """A random instance and the log of running the logging policy on it once."""
    from ..coupling import draw_tape, run_on_tape, policy_rng

    cfg = config if isinstance(config, PopulationConfig) else PopulationConfig.from_dict(config)
    cfg.check()
    rng = generator(seed, AUX)
    X, vals = sample_population(cfg, rng)
    T = cfg.horizon
    if cfg.max_start is None:
        windows = [(1, T + 1)] * cfg.n
    else:
        starts = rng.integers(1, cfg.max_start + 1, size=cfg.n)
        lengths = rng.integers(cfg.min_length, T + 2 - starts)
        windows = list(zip(starts.tolist(), (starts + lengths).tolist()))
    p, q = vals[:, 0], vals[:, 1]
    if cfg.initial == "stationary":
        with np.errstate(divide="ignore", invalid="ignore"):
            pi1 = np.where(p + q > 0, p / (p + q), 0.0)
        s0 = (rng.random(cfg.n) < pi1).astype(int)
    else:
        s0 = np.full(cfg.n, 1 if cfg.initial == "one" else 0)
    params = tuple(PatientParams(float(a), float(b), float(c)) for a, b, c in vals)
    inst = Instance(T, cfg.budget, params, tuple(s0.tolist()), tuple(windows), tuple(map(tuple, X.tolist())))

    log_budget = cfg.budget if cfg.logging_budget is None else int(cfg.logging_budget)
    logger = RandomBaselinePolicy("logging") if cfg.logging_kind == "random-baseline" else NullPolicy("logging")
    run_seed = derive_seed(seed, 1)
    log_inst = inst.with_budget(log_budget)
    traj = run_on_tape(log_inst, logger, draw_tape(log_inst, run_seed), cfg.eligibility, policy_rng(run_seed, logger))
    A = np.vstack([traj.actions, np.zeros((1, cfg.n), dtype=bool)])
    patients = []
    for i, (a, b) in enumerate(windows):
        patients.append(
            PatientLog(
                id=i,
                t_start=a,
                t_end=b,
                static=tuple(X[i].tolist()),
                v=tuple(int(x) for x in traj.states[a - 1 : b, i]),
                a=tuple(int(x) for x in A[a - 1 : b, i]),
            )
        )
    return inst, LoggedDataset(patients)
