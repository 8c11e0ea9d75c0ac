"""Two-state patient MDPs and the budget-constrained system built from them.

State 0 is the undesired state and state 1 the desired one. Without an
intervention a patient moves 0 -> 1 with probability ``p`` and 1 -> 0 with
probability ``q``; an intervention raises the 0 -> 1 probability to ``p + tau``
and has no effect in state 1. The reward of a transition is the next state.

Patients may carry an enrollment window ``(start, end)``: the patient is active
at steps ``start <= t < end`` and only active steps move the patient and earn
reward. The default window ``(1, T + 1)`` is the plain model, with
``end - t`` reward-bearing steps remaining at step ``t``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvalidInstanceError

INFINITE = math.inf


@dataclass(frozen=True)
class PatientParams:
    p: float
    q: float
    tau: float

    def violations(self) -> list[str]:
        out = []
        for name in ("p", "q", "tau"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                out.append(f"{name} not in [0, 1]")
        if self.p + self.tau > 1.0:
            out.append("p+τ>1")
        if self.p + self.q > 1.0:
            out.append("p+q>1")
        return out


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "OK"
        return "\n".join(self.violations)


@dataclass(frozen=True)
class Instance:
    """N patients, horizon T, per-step budget B and initial states.

    ``horizon`` may be :data:`INFINITE` only for closed-form value queries.
    ``windows`` and ``static`` are optional: per-patient enrollment windows and
    static covariates (used by the estimated policies).
    """

    horizon: float
    budget: int
    params: tuple[PatientParams, ...]
    initial_states: tuple[int, ...]
    windows: tuple[tuple[int, int], ...] | None = None
    static: tuple[tuple[float, ...], ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "initial_states", tuple(int(s) for s in self.initial_states))
        if self.windows is not None:
            object.__setattr__(self, "windows", tuple((int(a), int(b)) for a, b in self.windows))
        if self.static is not None:
            object.__setattr__(self, "static", tuple(tuple(float(x) for x in row) for row in self.static))

    @property
    def n(self) -> int:
        return len(self.params)

    @property
    def finite(self) -> bool:
        return not math.isinf(self.horizon)

    @property
    def T(self) -> int:
        if not self.finite:
            raise ValueError("infinite horizon has no step count")
        return int(self.horizon)

    @cached_property
    def p(self) -> np.ndarray:
        return np.array([pp.p for pp in self.params], dtype=float)

    @cached_property
    def q(self) -> np.ndarray:
        return np.array([pp.q for pp in self.params], dtype=float)

    @cached_property
    def tau(self) -> np.ndarray:
        return np.array([pp.tau for pp in self.params], dtype=float)

    @cached_property
    def starts(self) -> np.ndarray:
        if self.windows is None:
            return np.ones(self.n, dtype=np.int64)
        return np.array([w[0] for w in self.windows], dtype=np.int64)

    @cached_property
    def ends(self) -> np.ndarray:
        if self.windows is None:
            return np.full(self.n, self.T + 1, dtype=np.int64)
        return np.array([w[1] for w in self.windows], dtype=np.int64)

    def active(self, t: int) -> np.ndarray:
        return (self.starts <= t) & (t < self.ends)

    def remaining(self, t: int) -> np.ndarray:
        """Reward-bearing steps left for each patient at step ``t`` (0 if inactive)."""
        return np.where(self.active(t), self.ends - t, 0)

    @property
    def active_steps(self) -> int:
        return int(np.sum(self.ends - self.starts))

    def static_matrix(self) -> np.ndarray:
        if self.static is None:
            return np.zeros((self.n, 0))
        return np.asarray(self.static, dtype=float).reshape(self.n, -1)

    def with_budget(self, budget: int) -> "Instance":
        return Instance(self.horizon, budget, self.params, self.initial_states, self.windows, self.static)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "n": self.n,
            "t": None if not self.finite else int(self.horizon),
            "b": self.budget,
            "patients": [{"p": pp.p, "q": pp.q, "tau": pp.tau} for pp in self.params],
            "s0": list(self.initial_states),
        }
        if self.windows is not None:
            d["windows"] = [list(w) for w in self.windows]
        if self.static is not None:
            d["static"] = [list(row) for row in self.static]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        try:
            params = tuple(PatientParams(float(x["p"]), float(x["q"]), float(x["tau"])) for x in d["patients"])
            horizon = INFINITE if d.get("t") is None else int(d["t"])
            inst = cls(
                horizon=horizon,
                budget=int(d["b"]),
                params=params,
                initial_states=tuple(d.get("s0", [0] * len(params))),
                windows=d.get("windows"),
                static=d.get("static"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed instance: {exc!r}") from exc
        if "n" in d and int(d["n"]) != inst.n:
            raise ConfigError(f"malformed instance: n={d['n']} but {inst.n} patients listed")
        return inst

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"instance is not valid JSON: {exc}") from exc


def load_instance(path) -> Instance:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read instance file {path}: {exc.strerror}") from exc
    return Instance.from_json(text)


def validate_instance(inst: Instance) -> ValidationReport:
    """Collect every violated invariant; never raises."""
    out: list[str] = []
    for i, pp in enumerate(inst.params):
        out.extend(f"patient {i}: {v}" for v in pp.violations())
    if len(inst.initial_states) != inst.n:
        out.append(f"s0 has length {len(inst.initial_states)}, expected {inst.n}")
    bad = [i for i, s in enumerate(inst.initial_states) if s not in (0, 1)]
    if bad:
        out.append(f"s0 entries not in {{0,1}} at {bad}")
    if inst.budget < 0:
        out.append("budget < 0")
    if inst.finite and inst.horizon < 1:
        out.append("horizon < 1")
    if inst.windows is not None:
        if len(inst.windows) != inst.n:
            out.append(f"windows has length {len(inst.windows)}, expected {inst.n}")
        elif inst.finite:
            for i, (a, b) in enumerate(inst.windows):
                if not (1 <= a < b <= inst.T + 1):
                    out.append(f"patient {i}: window ({a}, {b}) outside 1 <= start < end <= T+1")
        else:
            out.append("windows require a finite horizon")
    if inst.static is not None and len(inst.static) != inst.n:
        out.append(f"static has {len(inst.static)} rows, expected {inst.n}")
    return ValidationReport(tuple(out))


def require_valid(inst: Instance, finite: bool = True) -> None:
    report = validate_instance(inst)
    if not report.ok:
        raise InvalidInstanceError(report.violations)
    if finite and not inst.finite:
        raise InvalidInstanceError(["a finite horizon is required"])


def transition_prob(params: PatientParams, s: int, a: int, s_next: int) -> float:
    if s == 0:
        up = params.p + params.tau if a else params.p
    else:
        up = 1.0 - params.q
    return up if s_next == 1 else 1.0 - up


def transition_sample(params: PatientParams, s: int, a: int, rng: np.random.Generator) -> int:
    return int(rng.random() < transition_prob(params, s, a, 1))


def reward(s: int, s_next: int, a: int) -> int:
    return int(s_next)


def make_instance(
    params: Sequence[tuple[float, float, float]] | Sequence[PatientParams],
    horizon: float,
    budget: int,
    initial_states: Sequence[int] | None = None,
) -> Instance:
    """Convenience constructor from plain ``(p, q, tau)`` triples."""
    pp = tuple(x if isinstance(x, PatientParams) else PatientParams(*map(float, x)) for x in params)
    s0 = tuple(initial_states) if initial_states is not None else (0,) * len(pp)
    return Instance(horizon, budget, pp, s0)
