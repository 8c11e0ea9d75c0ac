"""Condensed-history features.

At day ``t`` a patient's history is the verification bits ``V[T_s..t]`` and the
intervention bits ``A[T_s..t-1]``. It is summarized by 21 numbers, in this
order:

* verifications: total, fraction of observed days, total over the last 7
  observed days, and the 7 most recent bits (lag 1 is day ``t``);
* streaks: current and longest run of verified days, current and longest run
  of non-verified days;
* interventions: total, total over the last 7 days (``t-7..t-1``), and the
  bits for days ``t-1``, ``t-2``, ``t-3``;
* tenure: days observed (``t - T_s + 1``) and days of treatment left
  (``T_e - t``).

Days before enrollment count as zeros.
"""

from __future__ import annotations

import numpy as np

FEATURE_NAMES = (
    ("verify_total", "verify_pct", "verify_last_week")
    + tuple(f"verify_lag{k}" for k in range(1, 8))
    + ("verify_streak_current", "verify_streak_longest", "nonverify_streak_current", "nonverify_streak_longest")
    + ("intervene_total", "intervene_last_week")
    + tuple(f"intervene_lag{k}" for k in range(1, 4))
    + ("days_on_platform", "days_left")
)
N_HISTORY = len(FEATURE_NAMES)
assert N_HISTORY == 21


def condensed_history(v_hist, a_hist, days_left: int) -> np.ndarray:
    """Features of one patient from its observed bits.

    ``v_hist`` holds ``V[T_s..t]`` and ``a_hist`` holds ``A[T_s..t-1]``.
    """
    v = np.asarray(v_hist, dtype=np.int64)
    a = np.asarray(a_hist, dtype=np.int64)
    n = v.size
    if n == 0 or a.size != n - 1:
        raise ValueError("need V[T_s..t] and A[T_s..t-1]")
    lags_v = [int(v[-k]) if k <= n else 0 for k in range(1, 8)]
    lags_a = [int(a[-k]) if k <= a.size else 0 for k in range(1, 4)]
    runs = {0: [0], 1: [0]}
    cur_bit, cur_len = int(v[0]), 0
    for bit in v:
        if bit == cur_bit:
            cur_len += 1
        else:
            runs[cur_bit].append(cur_len)
            cur_bit, cur_len = int(bit), 1
    runs[cur_bit].append(cur_len)
    cur_v = cur_len if cur_bit == 1 else 0
    cur_nv = cur_len if cur_bit == 0 else 0
    out = [v.sum(), v.sum() / n, v[-7:].sum(), *lags_v, cur_v, max(runs[1]), cur_nv, max(runs[0])]
    out += [a.sum(), a[-7:].sum(), *lags_a, n, days_left]
    return np.asarray(out, dtype=float)


class HistoryTracker:
    """Running version of :func:`condensed_history` for many patients at once.

    Call :meth:`observe` once per day, in order, with that day's verification
    bits and the previous day's intervention bits. Patients are updated only
    on days ``start <= t <= end``.
    """

    def __init__(self, starts, ends):
        self.starts = np.asarray(starts, dtype=np.int64)
        self.ends = np.asarray(ends, dtype=np.int64)
        n = self.starts.size
        self.n_obs = np.zeros(n, dtype=np.int64)
        self.verify_total = np.zeros(n, dtype=np.int64)
        self.v_recent = np.zeros((n, 7), dtype=np.int64)  # column 0 = most recent
        self.a_recent = np.zeros((n, 7), dtype=np.int64)
        self.intervene_total = np.zeros(n, dtype=np.int64)
        self.verify_streak = np.zeros(n, dtype=np.int64)
        self.nonverify_streak = np.zeros(n, dtype=np.int64)
        self.verify_longest = np.zeros(n, dtype=np.int64)
        self.nonverify_longest = np.zeros(n, dtype=np.int64)
        self.t = 0

    def observe(self, t: int, v, a_prev=None) -> None:
        if t != self.t + 1 and self.t != 0:
            raise ValueError(f"days must be observed in order (got {t} after {self.t})")
        self.t = t
        v = np.asarray(v, dtype=np.int64)
        live = (self.starts <= t) & (t <= self.ends)
        if a_prev is not None:
            acts = live & (self.starts < t)
            a = np.asarray(a_prev, dtype=np.int64)
            self.a_recent[acts] = np.roll(self.a_recent[acts], 1, axis=1)
            self.a_recent[acts, 0] = a[acts]
            self.intervene_total[acts] += a[acts]
        self.v_recent[live] = np.roll(self.v_recent[live], 1, axis=1)
        self.v_recent[live, 0] = v[live]
        self.n_obs[live] += 1
        self.verify_total[live] += v[live]
        up = live & (v == 1)
        down = live & (v == 0)
        self.verify_streak[up] += 1
        self.verify_streak[down] = 0
        self.nonverify_streak[down] += 1
        self.nonverify_streak[up] = 0
        np.maximum(self.verify_longest, self.verify_streak, out=self.verify_longest)
        np.maximum(self.nonverify_longest, self.nonverify_streak, out=self.nonverify_longest)

    def features(self, t: int | None = None) -> np.ndarray:
        t = self.t if t is None else t
        n_obs = self.n_obs.astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            pct = np.where(n_obs > 0, self.verify_total / n_obs, 0.0)
        cols = [
            self.verify_total,
            pct,
            self.v_recent.sum(axis=1),
            *self.v_recent.T,
            self.verify_streak,
            self.verify_longest,
            self.nonverify_streak,
            self.nonverify_longest,
            self.intervene_total,
            self.a_recent.sum(axis=1),
            *self.a_recent[:, :3].T,
            self.n_obs,
            np.maximum(self.ends - t, 0),
        ]
        return np.column_stack(cols).astype(float)
