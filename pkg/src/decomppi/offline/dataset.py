"""Logged trajectories and the supervised samples derived from them."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FeatureWindowError, UndefinedLabelError
from .features import HistoryTracker, condensed_history

WARMUP = 7


@dataclass(frozen=True)
class PatientLog:
    id: int
    t_start: int
    t_end: int
    static: tuple[float, ...]
    v: tuple[int, ...]
    a: tuple[int, ...]

    def __post_init__(self):
        n = self.t_end - self.t_start + 1
        if self.t_start > self.t_end:
            raise ConfigError(f"patient {self.id}: t_start > t_end")
        if len(self.v) != n or len(self.a) != n:
            raise ConfigError(f"patient {self.id}: v and a must have t_end - t_start + 1 = {n} entries")
        if any(x not in (0, 1) for x in self.v) or any(x not in (0, 1) for x in self.a):
            raise ConfigError(f"patient {self.id}: v and a must be bits")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "static": list(self.static),
            "v": list(self.v),
            "a": list(self.a),
        }


class LoggedDataset:
    """Per-patient enrollment windows, static covariates and daily bits."""

    def __init__(self, patients):
        self.patients = list(patients)
        dims = {len(p.static) for p in self.patients}
        if len(dims) > 1:
            raise ConfigError(f"static covariates have inconsistent dimensions {sorted(dims)}")
        self.d_static = dims.pop() if dims else 0

    def __len__(self):
        return len(self.patients)

    def __getitem__(self, i) -> PatientLog:
        return self.patients[i]

    @property
    def n_features(self) -> int:
        return self.d_static + 21

    @property
    def n_interventions(self) -> int:
        return sum(sum(p.a) for p in self.patients)

    def static_matrix(self) -> np.ndarray:
        return np.array([p.static for p in self.patients], dtype=float).reshape(len(self), self.d_static)

    # -- JSON lines -------------------------------------------------------
    def dumps(self) -> str:
        return "".join(json.dumps(p.to_dict()) + "\n" for p in self.patients)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "LoggedDataset":
        patients = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                patients.append(
                    PatientLog(
                        id=int(d["id"]),
                        t_start=int(d["t_start"]),
                        t_end=int(d["t_end"]),
                        static=tuple(float(x) for x in d.get("static", [])),
                        v=tuple(int(x) for x in d["v"]),
                        a=tuple(int(x) for x in d["a"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"line {lineno}: malformed patient record ({exc!r})") from exc
        return cls(patients)

    @classmethod
    def load(cls, path) -> "LoggedDataset":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read dataset {path}: {exc.strerror}") from exc
        return cls.loads(text)


def _check_day(log: PatientLog, t: int, warmup: int) -> None:
    if not (log.t_start <= t <= log.t_end):
        raise FeatureWindowError(f"patient {log.id}: day {t} outside [{log.t_start}, {log.t_end}]")
    if t < log.t_start + warmup:
        raise FeatureWindowError(f"patient {log.id}: day {t} is inside the {warmup}-day warm-up")


def featurize(dataset: LoggedDataset, i: int, t: int, warmup: int = WARMUP) -> np.ndarray:
    """Static covariates followed by the 21 condensed-history features at day ``t``."""
    log = dataset[i]
    _check_day(log, t, warmup)
    k = t - log.t_start
    hist = condensed_history(log.v[: k + 1], log.a[:k], log.t_end - t)
    return np.concatenate([np.asarray(log.static, dtype=float), hist])


def future_verification_rate(dataset: LoggedDataset, i: int, t: int) -> float:
    log = dataset[i]
    if not (log.t_start <= t <= log.t_end):
        raise FeatureWindowError(f"patient {log.id}: day {t} outside [{log.t_start}, {log.t_end}]")
    if t == log.t_end:
        raise UndefinedLabelError(f"patient {log.id}: no days after t_end")
    k = t - log.t_start
    return float(np.mean(log.v[k + 1 :]))


@dataclass
class Samples:
    """Design matrix of (patient, day) pairs with their labels."""

    X: np.ndarray
    action: np.ndarray
    rate: np.ndarray  # future verification rate
    next_v: np.ndarray  # verification on the following day
    remaining: np.ndarray
    patient: np.ndarray
    day: np.ndarray
    eligible: np.ndarray  # streak-2 eligibility at that day


def build_samples(dataset: LoggedDataset, warmup: int = WARMUP, streak: int = 2) -> Samples:
    """All (i, t) with ``T_s + warmup <= t < T_e``, featurized by replaying history."""
    if len(dataset) == 0:
        raise ConfigError("empty dataset")
    starts = np.array([p.t_start for p in dataset.patients])
    ends = np.array([p.t_end for p in dataset.patients])
    t0, t1 = int(starts.min()), int(ends.max())
    n = len(dataset)
    V = np.zeros((n, t1 - t0 + 2), dtype=np.int64)
    A = np.zeros_like(V)
    for i, p in enumerate(dataset.patients):
        V[i, p.t_start - t0 : p.t_end - t0 + 1] = p.v
        A[i, p.t_start - t0 : p.t_end - t0 + 1] = p.a
    # suffix sums of V give the future-rate labels
    suffix = np.cumsum(V[:, ::-1], axis=1)[:, ::-1]
    static = dataset.static_matrix()
    tracker = HistoryTracker(starts, ends)
    rows = {k: [] for k in ("X", "action", "rate", "next_v", "remaining", "patient", "day", "eligible")}
    for t in range(t0, t1 + 1):
        c = t - t0
        tracker.observe(t, V[:, c], A[:, c - 1] if c > 0 else None)
        use = (starts + warmup <= t) & (t < ends)
        if not use.any():
            continue
        idx = np.flatnonzero(use)
        feats = tracker.features(t)[idx]
        rows["X"].append(np.hstack([static[idx], feats]))
        rows["action"].append(A[idx, c])
        left = ends[idx] - t
        rows["rate"].append((suffix[idx, c + 1] - suffix[idx, ends[idx] - t0 + 1]) / left)
        rows["next_v"].append(V[idx, c + 1])
        rows["remaining"].append(left)
        rows["patient"].append(idx)
        rows["day"].append(np.full(idx.size, t))
        rows["eligible"].append(tracker.nonverify_streak[idx] >= streak)
    if not rows["X"]:
        raise ConfigError("no usable samples: every enrollment window is shorter than the warm-up")
    return Samples(**{k: np.concatenate(v) for k, v in rows.items()})
